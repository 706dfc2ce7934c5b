import { ApiClient, ApiError } from "./api.js";
import type { ExportResult, UiTurn } from "./types.js";

const NO_RESULT_MESSAGE =
    "There is no query result to export yet. Ask for some publications first, then download.";

/**
 * Conversation state behind the UI, free of DOM concerns.
 *
 * One request is in flight per session at a time (send stays disabled while
 * pending); pending agent bubbles are replaced in place, never duplicated.
 * A stale session (404) is recreated once and the request retried.
 */
export class ChatController {
    readonly turns: UiTurn[] = [];
    pending = false;
    onChange: () => void = () => {};

    private sessionId: string | null = null;

    constructor(private readonly api: ApiClient) {}

    canSend(text: string): boolean {
        return !this.pending && text.trim().length > 0;
    }

    async ensureSession(): Promise<string> {
        if (this.sessionId === null) {
            this.sessionId = await this.api.createSession();
        }
        return this.sessionId;
    }

    async sendMessage(text: string): Promise<void> {
        if (!this.canSend(text)) return;
        this.pending = true;
        this.push({ author: "user", text });
        this.push({ author: "agent", text: "Thinking...", pending: true });
        try {
            const turn = await this.withSessionRetry((sid) => this.api.chat(sid, text));
            this.replacePending({
                author: "agent",
                text: turn.agent_text,
                badge: turn.question_type,
                error: turn.error_code !== null,
            });
        } catch (error) {
            this.replacePending(this.errorTurn(error));
        } finally {
            this.pending = false;
            this.notify();
        }
    }

    async uploadCsv(data: Blob | ArrayBuffer | string, name = "publications.csv"): Promise<void> {
        if (this.pending) return;
        this.pending = true;
        this.push({ author: "user", text: `Uploaded ${name}.` });
        this.push({ author: "agent", text: "Ingesting...", pending: true });
        try {
            const turn = await this.withSessionRetry((sid) => this.api.upload(sid, data));
            this.replacePending({
                author: "agent",
                text: turn.agent_text,
                error: turn.error_code !== null,
            });
        } catch (error) {
            this.replacePending(this.errorTurn(error));
        } finally {
            this.pending = false;
            this.notify();
        }
    }

    /** Export the last query result; null when there is nothing to export. */
    async downloadCsv(): Promise<ExportResult | null> {
        if (this.pending) return null;
        this.pending = true;
        try {
            const result = await this.withSessionRetry((sid) => this.api.exportCsv(sid));
            this.push({
                author: "agent",
                text: result.summary || `Saved ${result.filename}.`,
            });
            return result;
        } catch (error) {
            if (error instanceof ApiError && error.code === "NO_RESULT_TO_EXPORT") {
                this.push({ author: "agent", text: NO_RESULT_MESSAGE });
            } else {
                this.push(this.errorTurn(error));
            }
            return null;
        } finally {
            this.pending = false;
            this.notify();
        }
    }

    private async withSessionRetry<T>(action: (sid: string) => Promise<T>): Promise<T> {
        const sid = await this.ensureSession();
        try {
            return await action(sid);
        } catch (error) {
            if (error instanceof ApiError && error.code === "SESSION_NOT_FOUND") {
                this.sessionId = null; // stale id: make a fresh session, retry once
                return action(await this.ensureSession());
            }
            throw error;
        }
    }

    private push(turn: UiTurn): void {
        this.turns.push(turn);
        this.notify();
    }

    private replacePending(replacement: UiTurn): void {
        const index = this.turns.findIndex((t) => t.pending);
        if (index >= 0) {
            this.turns[index] = replacement;
        } else {
            this.turns.push(replacement);
        }
        this.notify();
    }

    private errorTurn(error: unknown): UiTurn {
        const text =
            error instanceof ApiError
                ? `Request failed (${error.code}). Please retry.`
                : "Network error. Please retry.";
        return { author: "agent", text, error: true };
    }

    private notify(): void {
        this.onChange();
    }
}
