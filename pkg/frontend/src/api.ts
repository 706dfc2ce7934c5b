import type { ApiTurn, ExportResult } from "./types.js";

/** Error body decoded from the service's {"error": {...}} envelope. */
export class ApiError extends Error {
    constructor(
        readonly code: string,
        message: string,
        readonly retryable: boolean,
        readonly status: number,
    ) {
        super(message);
        this.name = "ApiError";
    }
}

async function toApiError(response: Response): Promise<ApiError> {
    try {
        const body = await response.json();
        const err = body?.error;
        if (err?.code) {
            return new ApiError(err.code, err.message ?? "", Boolean(err.retryable), response.status);
        }
    } catch {
        // non-JSON body; fall through to the generic error
    }
    return new ApiError(`HTTP_${response.status}`, response.statusText, response.status >= 500, response.status);
}

/**
 * Thin wrapper over the service API. The UI talks to exactly five
 * endpoints: create session, chat, upload, export, health.
 */
export class ApiClient {
    constructor(readonly baseUrl: string = "") {}

    private url(path: string): string {
        return this.baseUrl + path;
    }

    async createSession(): Promise<string> {
        const response = await fetch(this.url("/api/sessions"), { method: "POST" });
        if (!response.ok) throw await toApiError(response);
        const body = await response.json();
        return body.session_id as string;
    }

    async chat(sessionId: string, text: string): Promise<ApiTurn> {
        const response = await fetch(this.url(`/api/sessions/${sessionId}/chat`), {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ text }),
        });
        if (!response.ok) throw await toApiError(response);
        return (await response.json()) as ApiTurn;
    }

    async upload(sessionId: string, data: Blob | ArrayBuffer | string): Promise<ApiTurn> {
        const response = await fetch(this.url(`/api/sessions/${sessionId}/upload`), {
            method: "POST",
            headers: { "Content-Type": "text/csv" },
            body: data,
        });
        if (!response.ok) throw await toApiError(response);
        return (await response.json()) as ApiTurn;
    }

    async exportCsv(sessionId: string): Promise<ExportResult> {
        const response = await fetch(this.url(`/api/sessions/${sessionId}/export`));
        if (!response.ok) throw await toApiError(response);
        const bytes = await response.arrayBuffer();
        const disposition = response.headers.get("content-disposition") ?? "";
        const match = /filename="([^"]+)"/.exec(disposition);
        return {
            filename: match?.[1] ?? "pubbie-export.csv",
            bytes,
            summary: response.headers.get("x-export-summary") ?? "",
        };
    }

    async health(): Promise<string> {
        const response = await fetch(this.url("/api/health"));
        return response.text();
    }
}
