export type QuestionType = "GENERIC" | "SQL_QUERY" | "SQL_UPDATE";

/** Chat turn as returned by the service. */
export interface ApiTurn {
    user_text: string;
    rewritten_text: string;
    question_type: QuestionType | null;
    sql: string | null;
    agent_text: string;
    error_code: string | null;
    retryable: boolean;
    created_at: string;
}

/** One rendered bubble in the conversation. */
export interface UiTurn {
    author: "user" | "agent";
    text: string;
    badge?: QuestionType | null;
    pending?: boolean;
    error?: boolean;
}

export interface ExportResult {
    filename: string;
    bytes: ArrayBuffer;
    summary: string;
}
