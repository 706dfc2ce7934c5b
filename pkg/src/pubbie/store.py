"""Embedded relational store for publications and predicted programs.

One SQLite file holds the ``pub`` table (one row per publication, 20
attributes plus the program label and its provenance). Ingest is
upsert-by-eid from CSV; export writes RFC-4180-style CSV. SQL reaches the
engine only through plans produced by the sql guard (see sqlguard.py).
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import re
import sqlite3
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Iterable, Optional

from . import labels
from .errors import (
    EmptyInputError,
    ExecError,
    HeaderMissingRequiredError,
    InvalidLabelError,
)

logger = logging.getLogger(__name__)

# The 20 publication attributes, in schema order. eid and title are the only
# NOT NULL columns; year and cited_by are integers, everything else is text.
PUB_COLUMNS: tuple[tuple[str, str], ...] = (
    ("eid", "TEXT NOT NULL PRIMARY KEY"),
    ("title", "TEXT NOT NULL"),
    ("year", "INTEGER"),
    ("authors", "TEXT"),
    ("authors_with_affil", "TEXT"),
    ("affiliations", "TEXT"),
    ("author_keywords", "TEXT"),
    ("index_keywords", "TEXT"),
    ("source_title", "TEXT"),
    ("doi", "TEXT"),
    ("abstract", "TEXT"),
    ("document_type", "TEXT"),
    ("publisher", "TEXT"),
    ("volume", "TEXT"),
    ("issue", "TEXT"),
    ("page_range", "TEXT"),
    ("cited_by", "INTEGER"),
    ("language", "TEXT"),
    ("open_access", "TEXT"),
    ("link", "TEXT"),
)

PUB_COLUMN_NAMES: tuple[str, ...] = tuple(name for name, _ in PUB_COLUMNS)
_INT_COLUMNS = frozenset({"year", "cited_by"})

# Accepted CSV header spellings beyond the canonical snake_case names
# (common Scopus export headers normalize onto these).
_HEADER_ALIASES = {
    "authors_with_affiliations": "authors_with_affil",
    "program": "prog",
    "challenge_program": "prog",
}


def _normalize_header(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.strip().lower()).strip("_")


@dataclass
class Publication:
    """One publication record plus its program label and provenance."""

    eid: str
    title: str
    year: Optional[int] = None
    authors: Optional[str] = None
    authors_with_affil: Optional[str] = None
    affiliations: Optional[str] = None
    author_keywords: Optional[str] = None
    index_keywords: Optional[str] = None
    source_title: Optional[str] = None
    doi: Optional[str] = None
    abstract: Optional[str] = None
    document_type: Optional[str] = None
    publisher: Optional[str] = None
    volume: Optional[str] = None
    issue: Optional[str] = None
    page_range: Optional[str] = None
    cited_by: Optional[int] = None
    language: Optional[str] = None
    open_access: Optional[str] = None
    link: Optional[str] = None
    prog: str = labels.NO_PROGRAM
    prog_source: str = labels.PREDICTED

    @classmethod
    def from_row(cls, row: tuple) -> "Publication":
        values = dict(zip(PUB_COLUMN_NAMES + ("prog", "prog_source"), row))
        return cls(**values)


@dataclass
class ResultTable:
    """Carrier for SQL SELECT output: ordered columns and value rows."""

    columns: list[str]
    rows: list[tuple]

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(
                    f"row width {len(row)} != column count {len(self.columns)}"
                )


@dataclass
class IngestReport:
    """Summary of one CSV ingest run.

    Invariants: rows_read = rows_inserted + rows_updated + len(errors);
    rows_predicted + rows_with_ground_truth = rows_inserted + rows_updated.
    Warnings (unknown columns, unknown label strings, unparseable integers)
    are informational and not counted against any bucket.
    """

    rows_read: int = 0
    rows_inserted: int = 0
    rows_updated: int = 0
    rows_predicted: int = 0
    rows_with_ground_truth: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[tuple[int, str]] = field(default_factory=list)

    def summary(self) -> str:
        lines = [
            f"Rows read: {self.rows_read}",
            f"Inserted: {self.rows_inserted}, updated: {self.rows_updated}",
            f"Labels from file: {self.rows_with_ground_truth}, "
            f"predicted: {self.rows_predicted}",
        ]
        if self.errors:
            lines.append(f"Skipped rows: {len(self.errors)}")
            lines.extend(f"  line {ln}: {msg}" for ln, msg in self.errors[:10])
            if len(self.errors) > 10:
                lines.append(f"  ... and {len(self.errors) - 10} more")
        if self.warnings:
            lines.append(f"Warnings: {len(self.warnings)}")
            lines.extend(f"  line {ln}: {msg}" for ln, msg in self.warnings[:10])
            if len(self.warnings) > 10:
                lines.append(f"  ... and {len(self.warnings) - 10} more")
        return "\n".join(lines)


class Database:
    """Shared SQLite handle with a single-writer lock.

    All statements, reads included, are serialized through one lock: the
    store is safe to share across threads and no statement ever observes a
    half-applied write. Mutating operations commit before releasing.
    """

    def __init__(self, path: str = ":memory:"):
        self.path = path
        if path != ":memory:":
            Path(path).expanduser().resolve().parent.mkdir(parents=True, exist_ok=True)
        self.conn = sqlite3.connect(path, check_same_thread=False)
        self.lock = threading.RLock()
        with self.lock:
            if path != ":memory:":
                self.conn.execute("PRAGMA journal_mode=WAL")

    def query(self, sql: str, params: tuple = ()) -> tuple[list[str], list[tuple]]:
        with self.lock:
            cur = self.conn.execute(sql, params)
            columns = [d[0] for d in cur.description] if cur.description else []
            return columns, cur.fetchall()

    def execute(self, sql: str, params: tuple = ()) -> int:
        with self.lock:
            cur = self.conn.execute(sql, params)
            self.conn.commit()
            return cur.rowcount

    def close(self) -> None:
        with self.lock:
            self.conn.close()


class PublicationStore:
    """Publication persistence: ingest, guarded SQL execution, export."""

    def __init__(self, db: Database):
        self.db = db
        self._init_schema()

    def _init_schema(self) -> None:
        cols = ",\n            ".join(f"{name} {typ}" for name, typ in PUB_COLUMNS)
        self.db.execute(
            f"""
        CREATE TABLE IF NOT EXISTS pub (
            {cols},
            prog TEXT NOT NULL,
            prog_source TEXT NOT NULL
        )
        """
        )

    # --- ingest ----------------------------------------------------------

    def ingest_csv(
        self,
        data: bytes | IO[bytes],
        labeler: Optional[Callable[[Publication], str]] = None,
    ) -> IngestReport:
        """Upsert publications from a UTF-8 CSV stream, keyed by eid.

        Rows carrying a valid program value are stored as GROUND_TRUTH.
        Unlabeled rows are labeled by ``labeler`` when given (PREDICTED),
        else NO_PROGRAM/PREDICTED. Existing GROUND_TRUTH or USER_CORRECTED
        labels are never downgraded by a predicted label, and user
        corrections survive re-ingest of labeled files. Malformed rows are
        skipped and reported, never fatal.
        """
        if isinstance(data, bytes):
            stream = io.BytesIO(data)
        else:
            stream = data
        text = io.TextIOWrapper(stream, encoding="utf-8", newline="")
        reader = csv.reader(text)

        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError("CSV has no header row") from None

        report = IngestReport()
        col_map: list[Optional[str]] = []
        for raw in header:
            normalized = _normalize_header(raw)
            normalized = _HEADER_ALIASES.get(normalized, normalized)
            if normalized in PUB_COLUMN_NAMES or normalized == "prog":
                col_map.append(normalized)
            else:
                col_map.append(None)
                report.warnings.append((1, f"ignored unknown column {raw!r}"))
        if "eid" not in col_map or "title" not in col_map:
            raise HeaderMissingRequiredError(
                "CSV header must contain eid and title columns"
            )
        provided = [n for n in PUB_COLUMN_NAMES if n in col_map]

        with self.db.lock:
            for row in reader:
                if not any(cell.strip() for cell in row):
                    continue
                line = reader.line_num
                report.rows_read += 1
                if len(row) > len(col_map):
                    report.errors.append(
                        (line, f"row has {len(row)} fields, header has {len(col_map)}")
                    )
                    continue
                row = list(row) + [""] * (len(col_map) - len(row))

                record: dict[str, object] = {}
                raw_label = ""
                for name, cell in zip(col_map, row):
                    if name is None:
                        continue
                    if name == "prog":
                        raw_label = cell.strip()
                        continue
                    value = cell.strip()
                    if name in _INT_COLUMNS:
                        if not value:
                            record[name] = None
                        else:
                            try:
                                record[name] = int(value)
                            except ValueError:
                                record[name] = None
                                report.warnings.append(
                                    (line, f"unparseable integer in {name}: {value!r}")
                                )
                    else:
                        record[name] = value or None

                eid = record.get("eid")
                title = record.get("title")
                if not eid:
                    report.errors.append((line, "missing eid"))
                    continue
                if not title:
                    report.errors.append((line, "missing title"))
                    continue

                label = None
                if raw_label:
                    label = labels.try_parse_label(raw_label)
                    if label is None:
                        report.warnings.append(
                            (line, f"unknown program label {raw_label!r}; predicting")
                        )

                self._upsert(record, provided, label, labeler, report, line)

            self.db.conn.commit()
        return report

    def _upsert(
        self,
        record: dict[str, object],
        provided: list[str],
        label: Optional[str],
        labeler: Optional[Callable[[Publication], str]],
        report: IngestReport,
        line: int,
    ) -> None:
        eid = record["eid"]
        _, existing = self.db.query(
            "SELECT prog, prog_source FROM pub WHERE eid = ?", (eid,)
        )

        if label is not None:
            if existing and existing[0][1] == labels.USER_CORRECTED:
                # Manual corrections outrank re-ingested file labels.
                prog, source = existing[0]
            else:
                prog, source = label, labels.GROUND_TRUTH
        elif existing and existing[0][1] in (labels.GROUND_TRUTH, labels.USER_CORRECTED):
            prog, source = existing[0]
        elif labeler is not None:
            pub = Publication(
                **{k: record.get(k) for k in PUB_COLUMN_NAMES}  # type: ignore[arg-type]
            )
            predicted = labeler(pub)
            prog = labels.try_parse_label(predicted or "")
            if prog is None:
                report.warnings.append(
                    (line, f"labeler returned unknown label {predicted!r}")
                )
                prog = labels.NO_PROGRAM
            source = labels.PREDICTED
        else:
            prog, source = labels.NO_PROGRAM, labels.PREDICTED

        if existing:
            # Only columns present in this CSV overwrite stored values.
            names = [n for n in provided if n != "eid"]
            assignments = ", ".join(f"{name} = ?" for name in names)
            self.db.conn.execute(
                f"UPDATE pub SET {assignments}, prog = ?, prog_source = ? WHERE eid = ?",
                [record.get(n) for n in names] + [prog, source, eid],
            )
            report.rows_updated += 1
        else:
            values = [record.get(name) for name in PUB_COLUMN_NAMES]
            placeholders = ", ".join("?" for _ in range(len(PUB_COLUMN_NAMES) + 2))
            self.db.conn.execute(
                f"INSERT INTO pub ({', '.join(PUB_COLUMN_NAMES)}, prog, prog_source) "
                f"VALUES ({placeholders})",
                values + [prog, source],
            )
            report.rows_inserted += 1

        if source == labels.PREDICTED:
            report.rows_predicted += 1
        else:
            report.rows_with_ground_truth += 1

    # --- guarded execution -------------------------------------------------

    def execute_select(self, plan) -> ResultTable:
        """Run a validated SELECT plan. Read-only; engine errors wrap as EXEC_ERROR."""
        if plan.kind != "SELECT":
            raise ExecError(f"expected SELECT plan, got {plan.kind}")
        try:
            columns, rows = self.db.query(plan.statement)
        except sqlite3.Error as exc:
            raise ExecError(str(exc)) from exc
        return ResultTable(columns=columns, rows=[tuple(r) for r in rows])

    def execute_update(self, plan, dry_run: bool = False) -> int:
        """Run a validated UPDATE plan against pub.prog.

        Affected rows get prog_source = USER_CORRECTED. With dry_run the
        change is rolled back after counting (used by the text-to-SQL
        evaluation harness to keep fixtures pristine).
        """
        if plan.kind != "UPDATE":
            raise ExecError(f"expected UPDATE plan, got {plan.kind}")
        if plan.new_prog_value is None or not labels.is_valid_label(plan.new_prog_value):
            raise InvalidLabelError(f"not a valid program label: {plan.new_prog_value!r}")
        label = labels.parse_label(plan.new_prog_value)

        statement = "UPDATE pub SET prog = ?, prog_source = ?"
        if plan.where_sql:
            statement += f" WHERE {plan.where_sql}"
        with self.db.lock:
            try:
                self.db.conn.execute("SAVEPOINT guarded_update")
                cur = self.db.conn.execute(statement, (label, labels.USER_CORRECTED))
                affected = cur.rowcount
                if dry_run:
                    self.db.conn.execute("ROLLBACK TO guarded_update")
                self.db.conn.execute("RELEASE guarded_update")
                self.db.conn.commit()
            except sqlite3.Error as exc:
                self.db.conn.rollback()
                raise ExecError(str(exc)) from exc
        return affected

    # --- export ------------------------------------------------------------

    @staticmethod
    def export_csv(table: ResultTable) -> bytes:
        """Serialize a result table as UTF-8 CSV with LF line endings.

        Values containing comma, double quote, or newline are quoted, with
        embedded quotes doubled; None becomes the empty cell.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow(["" if v is None else v for v in row])
        return buf.getvalue().encode("utf-8")

    # --- introspection -------------------------------------------------------

    def schema_description(self) -> str:
        """Deterministic human-readable description of the pub table.

        Feeds the text-to-SQL prompt: column names and types, the 13 valid
        prog values, and up to 2 example rows (lowest eids first).
        """
        lines = ["Table pub (one row per publication):"]
        for name, typ in PUB_COLUMNS:
            base = typ.split()[0]
            lines.append(f"  {name} {base}")
        lines.append("  prog TEXT (challenge program label)")
        lines.append("  prog_source TEXT (GROUND_TRUTH, PREDICTED or USER_CORRECTED)")
        lines.append("Valid prog values:")
        for label in labels.CANONICAL_LABELS:
            lines.append(f"  - {label}")
        columns, rows = self.db.query(
            f"SELECT {', '.join(PUB_COLUMN_NAMES)}, prog FROM pub ORDER BY eid LIMIT 2"
        )
        lines.append(f"Example rows: {len(rows)}")
        for row in rows:
            cells = []
            for name, value in zip(columns, row):
                text = "" if value is None else str(value)
                if len(text) > 60:
                    text = text[:57] + "..."
                cells.append(f"{name}={text}")
            lines.append("  " + ", ".join(cells))
        return "\n".join(lines)

    def count(self) -> int:
        _, rows = self.db.query("SELECT COUNT(*) FROM pub")
        return rows[0][0]

    def get_publication(self, eid: str) -> Optional[Publication]:
        _, rows = self.db.query(
            f"SELECT {', '.join(PUB_COLUMN_NAMES)}, prog, prog_source FROM pub "
            "WHERE eid = ?",
            (eid,),
        )
        return Publication.from_row(rows[0]) if rows else None

    def iter_publications(self) -> Iterable[Publication]:
        _, rows = self.db.query(
            f"SELECT {', '.join(PUB_COLUMN_NAMES)}, prog, prog_source FROM pub "
            "ORDER BY eid"
        )
        return [Publication.from_row(row) for row in rows]

    def schema_hash(self) -> str:
        """SHA-256 over the database schema (sqlite_master), for soundness checks."""
        _, rows = self.db.query(
            "SELECT type, name, sql FROM sqlite_master ORDER BY type, name"
        )
        digest = hashlib.sha256(repr(rows).encode("utf-8")).hexdigest()
        return digest

    def content_hash(self, include_prog: bool = True) -> str:
        """SHA-256 over the full table dump, optionally excluding prog columns."""
        names = list(PUB_COLUMN_NAMES)
        if include_prog:
            names += ["prog", "prog_source"]
        _, rows = self.db.query(f"SELECT {', '.join(names)} FROM pub ORDER BY eid")
        return hashlib.sha256(repr(rows).encode("utf-8")).hexdigest()
