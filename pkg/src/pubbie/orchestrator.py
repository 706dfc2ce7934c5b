"""Staged pipeline over chat sessions, plus the ingest/export workflows.

A turn runs history-gate (A1), optional rewrite (A2), question-type
classification (B), then either retrieval-grounded answering (C) or
text-to-SQL (D) with guarded execution and response formulation (E).
Stage failures never escape a turn: they become an agent-visible notice
with a stable error code, and the session stays usable.

Sessions and turns persist in the same embedded database as publications,
in their own tables, sharing the single-writer lock.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Optional, Sequence

from . import labels, sqlguard
from .errors import (
    EmptyInputError,
    ExecError,
    GuardError,
    HeaderMissingRequiredError,
    InvalidLabelError,
    MockNoMatchError,
    NoResultToExportError,
    ProviderError,
    ProviderUnreachableError,
    PubbieError,
    ScriptParseError,
    SessionBusyError,
    SessionNotFoundError,
    SqlGenerationFailedError,
    UnparseableStageOutputError,
)
from .llm import ChatProvider, StageId
from .retrieval import RetrievalIndex, build_publication_index, render_context
from .store import Database, PublicationStore, ResultTable
from .templates import TemplateRegistry

logger = logging.getLogger(__name__)

GENERIC = "GENERIC"
SQL_QUERY = "SQL_QUERY"
SQL_UPDATE = "SQL_UPDATE"

SQL_FAILURE_MESSAGE = (
    "I could not translate that into a database query. "
    "Please try rephrasing your request."
)
EXEC_FAILURE_MESSAGE = (
    "The generated query could not be executed against the publication store. "
    "Please try rephrasing your request."
)
PROVIDER_FAILURE_MESSAGE = (
    "The language model service did not respond. Please try again."
)

_INGEST_PROMPT = "Summarize the completed CSV ingest."
_EXPORT_PROMPT = "Summarize the exported result."
_UPLOAD_USER_TEXT = "[csv upload]"
_EXPORT_USER_TEXT = "[csv export]"

RESULT_RENDER_MAX_ROWS = 50


@dataclass
class ChatTurn:
    """One exchange, with its routing metadata and stage completions."""

    user_text: str
    rewritten_text: str = ""
    question_type: Optional[str] = None
    sql: Optional[str] = None
    sql_result_summary: Optional[str] = None
    agent_text: str = ""
    stage_trace: list[tuple[str, str]] = field(default_factory=list)
    error_code: Optional[str] = None
    retryable: bool = False
    created_at: str = ""


@dataclass
class ChatSession:
    session_id: str
    created_at: str
    turns: list[ChatTurn] = field(default_factory=list)
    last_result: Optional[ResultTable] = None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _turn_to_json(turn: ChatTurn) -> str:
    return json.dumps(
        {
            "user_text": turn.user_text,
            "rewritten_text": turn.rewritten_text,
            "question_type": turn.question_type,
            "sql": turn.sql,
            "sql_result_summary": turn.sql_result_summary,
            "agent_text": turn.agent_text,
            "stage_trace": [[s, t] for s, t in turn.stage_trace],
            "error_code": turn.error_code,
            "retryable": turn.retryable,
            "created_at": turn.created_at,
        }
    )


def _turn_from_json(raw: str) -> ChatTurn:
    data = json.loads(raw)
    return ChatTurn(
        user_text=data["user_text"],
        rewritten_text=data["rewritten_text"],
        question_type=data["question_type"],
        sql=data["sql"],
        sql_result_summary=data["sql_result_summary"],
        agent_text=data["agent_text"],
        stage_trace=[(s, t) for s, t in data["stage_trace"]],
        error_code=data.get("error_code"),
        retryable=data.get("retryable", False),
        created_at=data.get("created_at", ""),
    )


class SessionStore:
    """Durable chat sessions in the shared embedded database."""

    def __init__(self, db: Database):
        self.db = db
        self.db.execute(
            """
        CREATE TABLE IF NOT EXISTS session (
            session_id TEXT NOT NULL PRIMARY KEY,
            created_at TEXT NOT NULL,
            last_result TEXT
        )
        """
        )
        self.db.execute(
            """
        CREATE TABLE IF NOT EXISTS turn (
            session_id TEXT NOT NULL,
            seq INTEGER NOT NULL,
            data TEXT NOT NULL,
            PRIMARY KEY (session_id, seq)
        )
        """
        )

    def create(self) -> str:
        session_id = secrets.token_urlsafe(16)  # 128 bits, URL-safe
        self.db.execute(
            "INSERT INTO session (session_id, created_at) VALUES (?, ?)",
            (session_id, _now()),
        )
        return session_id

    def get(self, session_id: str) -> Optional[ChatSession]:
        _, rows = self.db.query(
            "SELECT created_at, last_result FROM session WHERE session_id = ?",
            (session_id,),
        )
        if not rows:
            return None
        created_at, last_result_raw = rows[0]
        last_result = None
        if last_result_raw:
            data = json.loads(last_result_raw)
            last_result = ResultTable(
                columns=list(data["columns"]),
                rows=[tuple(r) for r in data["rows"]],
            )
        _, turn_rows = self.db.query(
            "SELECT data FROM turn WHERE session_id = ? ORDER BY seq", (session_id,)
        )
        return ChatSession(
            session_id=session_id,
            created_at=created_at,
            turns=[_turn_from_json(r[0]) for r in turn_rows],
            last_result=last_result,
        )

    def append_turn(self, session_id: str, turn: ChatTurn) -> None:
        with self.db.lock:
            _, rows = self.db.query(
                "SELECT COALESCE(MAX(seq), 0) FROM turn WHERE session_id = ?",
                (session_id,),
            )
            self.db.execute(
                "INSERT INTO turn (session_id, seq, data) VALUES (?, ?, ?)",
                (session_id, rows[0][0] + 1, _turn_to_json(turn)),
            )

    def set_last_result(self, session_id: str, table: Optional[ResultTable]) -> None:
        raw = None
        if table is not None:
            raw = json.dumps({"columns": table.columns, "rows": [list(r) for r in table.rows]})
        self.db.execute(
            "UPDATE session SET last_result = ? WHERE session_id = ?",
            (raw, session_id),
        )


# --- evidence rendering -------------------------------------------------------

def render_result_table(table: ResultTable, max_rows: int = RESULT_RENDER_MAX_ROWS) -> str:
    """Aligned plain-text rendering of a result table, capped at max_rows."""
    shown = table.rows[:max_rows]
    cells = [[("" if v is None else str(v)) for v in row] for row in shown]
    widths = [len(c) for c in table.columns]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))

    def fmt(row: Sequence[str]) -> str:
        padded = [cell.ljust(widths[i]) for i, cell in enumerate(row)]
        return "  ".join(padded).rstrip()

    lines = [fmt(table.columns)]
    lines.extend(fmt(row) for row in cells)
    if not shown:
        lines.append("(no rows)")
    remaining = len(table.rows) - len(shown)
    if remaining > 0:
        lines.append(f"+{remaining} more rows")
    return "\n".join(lines)


def render_history(turns: Sequence[ChatTurn], window: int) -> str:
    """Last ``window`` turns as alternating User/Agent lines."""
    recent = list(turns)[-window:]
    lines = []
    for turn in recent:
        lines.append(f"User: {turn.user_text}")
        lines.append(f"Agent: {turn.agent_text}")
    return "\n".join(lines)


# --- orchestrator ----------------------------------------------------------------

class Orchestrator:
    def __init__(
        self,
        store: PublicationStore,
        sessions: SessionStore,
        provider: ChatProvider,
        templates: TemplateRegistry,
        history_window: int = 6,
        retrieval_k: int = 5,
        labeler: Optional[Callable] = None,
        busy_policy: str = "wait",
    ):
        self.store = store
        self.sessions = sessions
        self.provider = provider
        self.templates = templates
        self.history_window = history_window
        self.retrieval_k = retrieval_k
        self.labeler = labeler
        self.busy_policy = busy_policy
        self._index: Optional[RetrievalIndex] = None
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # --- session plumbing

    def create_session(self) -> str:
        return self.sessions.create()

    def _require_session(self, session_id: str) -> ChatSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise SessionNotFoundError(f"no such session: {session_id}")
        return session

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _acquire(self, session_id: str) -> threading.Lock:
        lock = self._session_lock(session_id)
        if self.busy_policy == "reject":
            if not lock.acquire(blocking=False):
                raise SessionBusyError(f"session {session_id} has a turn in flight")
        else:
            lock.acquire()
        return lock

    def retrieval_index(self) -> RetrievalIndex:
        if self._index is None:
            self._index = build_publication_index(self.store)
        return self._index

    def invalidate_index(self) -> None:
        self._index = None

    # --- individual stages

    def _call(self, stage: StageId, input_text: str, bindings: dict,
              trace: list[tuple[str, str]]) -> str:
        request = self.templates.get(stage).build_request(input_text, bindings)
        completion = self.provider.complete(request)
        trace.append((stage.value, completion.text))
        return completion.text

    def assess_history_relevance(
        self, session: ChatSession, user_text: str,
        trace: Optional[list[tuple[str, str]]] = None,
    ) -> bool:
        """Stage A1: YES/NO gate; empty sessions short-circuit to False."""
        if not session.turns:
            return False
        trace = trace if trace is not None else []
        text = self._call(
            StageId.A1,
            user_text,
            {"history": render_history(session.turns, self.history_window)},
            trace,
        )
        token = text.strip().upper().rstrip(".!")
        if token == "YES":
            return True
        if token == "NO":
            return False
        warning = UnparseableStageOutputError("A1", text)
        logger.warning("%s; treating as NO", warning.message)
        return False

    def rewrite_prompt(
        self, session: ChatSession, user_text: str,
        trace: Optional[list[tuple[str, str]]] = None,
    ) -> str:
        """Stage A2: self-contained rewrite; empty completions keep the original."""
        trace = trace if trace is not None else []
        text = self._call(
            StageId.A2,
            user_text,
            {"history": render_history(session.turns, self.history_window)},
            trace,
        )
        rewritten = text.strip()
        return rewritten if rewritten else user_text

    def classify_question(
        self, rewritten_text: str, trace: Optional[list[tuple[str, str]]] = None
    ) -> str:
        """Stage B: GENERIC / SQL_QUERY / SQL_UPDATE (the bare token SQL counts as SQL_QUERY)."""
        trace = trace if trace is not None else []
        text = self._call(StageId.B, rewritten_text, {}, trace)
        token = text.strip().upper().rstrip(".")
        mapping = {
            GENERIC: GENERIC,
            SQL_QUERY: SQL_QUERY,
            SQL_UPDATE: SQL_UPDATE,
            "SQL": SQL_QUERY,
        }
        if token in mapping:
            return mapping[token]
        warning = UnparseableStageOutputError("B", text)
        logger.warning("%s; falling back to GENERIC", warning.message)
        return GENERIC

    def answer_generic(
        self, rewritten_text: str, trace: Optional[list[tuple[str, str]]] = None
    ) -> str:
        """Stage C: answer with top-k retrieved snippets in {context}."""
        trace = trace if trace is not None else []
        hits = self.retrieval_index().query(rewritten_text, self.retrieval_k)
        return self._call(StageId.C, rewritten_text, {"context": render_context(hits)}, trace)

    def generate_sql(
        self, rewritten_text: str, trace: Optional[list[tuple[str, str]]] = None
    ) -> sqlguard.SqlPlan:
        """Stage D plus guard: validated plan or SQL_GENERATION_FAILED."""
        trace = trace if trace is not None else []
        bindings = {
            "schema": self.store.schema_description(),
            "labels": "\n".join(f"- {l}" for l in labels.CANONICAL_LABELS),
        }
        text = self._call(StageId.D, rewritten_text, bindings, trace)
        try:
            return sqlguard.validate(text)
        except GuardError as exc:
            raise SqlGenerationFailedError(exc) from exc

    def formulate_response(
        self, rewritten_text: str, evidence: str,
        trace: Optional[list[tuple[str, str]]] = None,
    ) -> str:
        """Stage E: final response grounded in the evidence string."""
        trace = trace if trace is not None else []
        return self._call(StageId.E, rewritten_text, {"context": evidence}, trace)

    # --- the chat workflow

    def handle_turn(self, session_id: str, user_text: str) -> ChatTurn:
        """Run one full pipeline turn and persist it.

        Stage failures are converted into the turn's agent_text with a
        stable error_code; only session-not-found (or store corruption)
        raises to the caller.
        """
        self._require_session(session_id)
        lock = self._acquire(session_id)
        try:
            session = self._require_session(session_id)  # fresh snapshot under lock
            turn = ChatTurn(user_text=user_text, rewritten_text=user_text,
                            created_at=_now())
            trace: list[tuple[str, str]] = []
            try:
                if self.assess_history_relevance(session, user_text, trace):
                    turn.rewritten_text = self.rewrite_prompt(session, user_text, trace)
                turn.question_type = self.classify_question(turn.rewritten_text, trace)

                if turn.question_type == GENERIC:
                    turn.agent_text = self.answer_generic(turn.rewritten_text, trace)
                else:
                    plan = self.generate_sql(turn.rewritten_text, trace)
                    turn.sql = plan.statement
                    if plan.kind == "SELECT":
                        table = self.store.execute_select(plan)
                        evidence = render_result_table(table)
                        turn.sql_result_summary = evidence
                        self.sessions.set_last_result(session_id, table)
                    else:
                        affected = self.store.execute_update(plan)
                        evidence = f"{affected} row(s) updated."
                        turn.sql_result_summary = evidence
                    turn.agent_text = self.formulate_response(
                        turn.rewritten_text, evidence, trace
                    )
            except SqlGenerationFailedError as exc:
                turn.error_code = exc.code
                turn.agent_text = SQL_FAILURE_MESSAGE
            except (ExecError, InvalidLabelError) as exc:
                turn.error_code = exc.code
                turn.agent_text = EXEC_FAILURE_MESSAGE
            except (ProviderUnreachableError, ProviderError, MockNoMatchError) as exc:
                turn.error_code = exc.code
                turn.retryable = exc.retryable
                turn.agent_text = PROVIDER_FAILURE_MESSAGE
            turn.stage_trace = trace
            self.sessions.append_turn(session_id, turn)
            return turn
        finally:
            lock.release()

    # --- ingest and export workflows

    def run_ingest_workflow(self, session_id: str, csv_bytes: bytes) -> ChatTurn:
        """Ingest a CSV with prediction for unlabeled rows; confirm via stage E."""
        self._require_session(session_id)
        lock = self._acquire(session_id)
        try:
            turn = ChatTurn(user_text=_UPLOAD_USER_TEXT,
                            rewritten_text=_UPLOAD_USER_TEXT, created_at=_now())
            trace: list[tuple[str, str]] = []
            try:
                report = self.store.ingest_csv(csv_bytes, labeler=self.labeler)
                evidence = report.summary()
                self.invalidate_index()
            except (EmptyInputError, HeaderMissingRequiredError) as exc:
                evidence = f"Ingest failed: {exc.message}"
                turn.error_code = exc.code
            turn.sql_result_summary = evidence
            turn.agent_text = self._summarize(evidence, _INGEST_PROMPT, trace, turn)
            turn.stage_trace = trace
            self.sessions.append_turn(session_id, turn)
            return turn
        finally:
            lock.release()

    def run_export_workflow(self, session_id: str) -> tuple[bytes, ChatTurn]:
        """Export the session's last result as CSV bytes plus a summary turn."""
        self._require_session(session_id)
        lock = self._acquire(session_id)
        try:
            session = self._require_session(session_id)
            if session.last_result is None:
                raise NoResultToExportError("no query result to export in this session")
            table = session.last_result
            payload = self.store.export_csv(table)
            evidence = f"Exported {len(table.rows)} rows x {len(table.columns)} columns."
            turn = ChatTurn(user_text=_EXPORT_USER_TEXT,
                            rewritten_text=_EXPORT_USER_TEXT, created_at=_now())
            trace: list[tuple[str, str]] = []
            turn.sql_result_summary = evidence
            turn.agent_text = self._summarize(evidence, _EXPORT_PROMPT, trace, turn)
            turn.stage_trace = trace
            self.sessions.append_turn(session_id, turn)
            return payload, turn
        finally:
            lock.release()

    def _summarize(self, evidence: str, prompt: str,
                   trace: list[tuple[str, str]], turn: ChatTurn) -> str:
        """Stage E for workflow summaries; falls back to the raw evidence."""
        try:
            return self.formulate_response(f"{prompt}\n\n{evidence}", evidence, trace)
        except (ProviderUnreachableError, ProviderError, MockNoMatchError) as exc:
            turn.error_code = turn.error_code or exc.code
            turn.retryable = exc.retryable
            return evidence


# --- text-to-SQL evaluation harness ------------------------------------------------

FREQUENT = "FREQUENT"
INFREQUENT = "INFREQUENT"


@dataclass(frozen=True)
class Nl2SqlCase:
    """One evaluation question with its gold answer.

    Exactly one of gold_sql, gold_rows, gold_affected defines the expected
    outcome. gold_sql is executed through the same guard (updates are
    dry-run so the fixture store is left untouched).
    """

    question: str
    stratum: str  # FREQUENT | INFREQUENT
    gold_sql: Optional[str] = None
    gold_rows: Optional[list[tuple]] = None
    gold_affected: Optional[int] = None


@dataclass
class CaseResult:
    case: Nl2SqlCase
    passed: bool
    detail: str = ""


@dataclass
class Nl2SqlReport:
    results: list[CaseResult]

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def passes(self) -> int:
        return sum(1 for r in self.results if r.passed)

    @property
    def overall_accuracy(self) -> float:
        return self.passes / self.total if self.results else 0.0

    @property
    def accuracy_4dp(self) -> float:
        return round(self.overall_accuracy, 4)

    @property
    def percent_display(self) -> str:
        return f"{self.overall_accuracy * 100:.2f}%"

    def stratum_counts(self) -> dict[str, tuple[int, int]]:
        counts: dict[str, tuple[int, int]] = {}
        for result in self.results:
            passed, total = counts.get(result.case.stratum, (0, 0))
            counts[result.case.stratum] = (passed + int(result.passed), total + 1)
        return counts

    def format_report(self) -> str:
        lines = [f"Text-to-SQL evaluation: {self.total} cases"]
        for stratum in (FREQUENT, INFREQUENT):
            if stratum in self.stratum_counts():
                passed, total = self.stratum_counts()[stratum]
                lines.append(f"  {stratum}: {passed}/{total}")
        for stratum, (passed, total) in sorted(self.stratum_counts().items()):
            if stratum not in (FREQUENT, INFREQUENT):
                lines.append(f"  {stratum}: {passed}/{total}")
        lines.append(
            f"Overall accuracy: {self.percent_display} ({self.accuracy_4dp:.4f})"
        )
        return "\n".join(lines)


def load_cases(path: str) -> list[Nl2SqlCase]:
    """Read the line-delimited JSON evaluation corpus."""
    cases = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_num, line in enumerate(fh.read().splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                record = json.loads(line)
                question = record["question"]
                stratum = record["stratum"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ScriptParseError(f"bad case record: {exc}", line_num) from None
            if stratum not in (FREQUENT, INFREQUENT):
                raise ScriptParseError(f"unknown stratum {stratum!r}", line_num)
            gold_rows = record.get("gold_rows")
            cases.append(
                Nl2SqlCase(
                    question=question,
                    stratum=stratum,
                    gold_sql=record.get("gold_sql"),
                    gold_rows=[tuple(r) for r in gold_rows] if gold_rows is not None else None,
                    gold_affected=record.get("gold_affected"),
                )
            )
    return cases


def evaluate_text_to_sql(
    orchestrator: Orchestrator, cases: Sequence[Nl2SqlCase]
) -> Nl2SqlReport:
    """Score stages B+D+guard+execution against gold answers.

    A case passes iff the guard accepts the generated SQL and the executed
    outcome (result rows, or affected-row count for updates) equals gold.
    Failures are scored, never raised; updates run dry so the fixture
    store is unchanged afterwards.
    """
    results = []
    for case in cases:
        results.append(_run_case(orchestrator, case))
    return Nl2SqlReport(results=results)


def _expected_outcome(orchestrator: Orchestrator, case: Nl2SqlCase):
    if case.gold_sql is not None:
        plan = sqlguard.validate(case.gold_sql)
        if plan.kind == "SELECT":
            return orchestrator.store.execute_select(plan).rows
        return orchestrator.store.execute_update(plan, dry_run=True)
    if case.gold_rows is not None:
        return case.gold_rows
    return case.gold_affected


def _run_case(orchestrator: Orchestrator, case: Nl2SqlCase) -> CaseResult:
    trace: list[tuple[str, str]] = []
    try:
        expected = _expected_outcome(orchestrator, case)
        question_type = orchestrator.classify_question(case.question, trace)
        if question_type == GENERIC:
            return CaseResult(case, False, "classified as GENERIC, no SQL generated")
        plan = orchestrator.generate_sql(case.question, trace)
        if plan.kind == "SELECT":
            actual = orchestrator.store.execute_select(plan).rows
        else:
            actual = orchestrator.store.execute_update(plan, dry_run=True)
        if actual == expected:
            return CaseResult(case, True)
        return CaseResult(case, False, f"result mismatch: {actual!r} != {expected!r}")
    except PubbieError as exc:
        return CaseResult(case, False, f"{exc.code}: {exc.message}")
