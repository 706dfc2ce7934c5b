"""Validation gate for model-generated SQL.

Parses a string into a SqlPlan admitting only a safe subset: one SELECT
over the pub table (WHERE / GROUP BY / ORDER BY / LIMIT, COUNT/SUM/AVG/
MIN/MAX aggregates) or one UPDATE of pub.prog to a valid program label.
Everything else is rejected with a stable error code; rejection is
recoverable upstream by re-prompting.

The parser is a small recursive-descent over a tokenizer that understands
single-quoted string literals with '' escaping, so semicolons or keywords
inside literals never influence statement splitting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from . import labels
from .errors import (
    ForbiddenColumnError,
    ForbiddenStatementError,
    ForbiddenTableError,
    InvalidLabelError,
    MultiStatementError,
    NotSqlError,
    SqlSyntaxError,
)

_KEYWORDS = {
    "SELECT", "DISTINCT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "ASC",
    "DESC", "LIMIT", "AND", "OR", "NOT", "LIKE", "IN", "IS", "NULL",
    "UPDATE", "SET", "AS", "COUNT", "SUM", "AVG", "MIN", "MAX",
}

# Statement-opening keywords that are recognized and always refused.
_FORBIDDEN_OPENERS = {
    "INSERT", "DELETE", "DROP", "ALTER", "PRAGMA", "ATTACH", "DETACH",
    "CREATE", "REPLACE", "VACUUM", "REINDEX", "ANALYZE", "BEGIN", "COMMIT",
    "ROLLBACK", "EXPLAIN", "WITH", "GRANT", "REVOKE", "TRUNCATE", "MERGE",
}

_AGGREGATES = {"COUNT", "SUM", "AVG", "MIN", "MAX"}


@dataclass(frozen=True)
class Token:
    kind: str  # KEYWORD, IDENT, STRING, NUMBER, OP, STAR, COMMA, LPAREN, RPAREN, DOT, SEMI, EOF
    text: str  # raw lexeme as written (strings keep their quotes)
    pos: int

    @property
    def upper(self) -> str:
        return self.text.upper()


@dataclass(frozen=True)
class SqlPlan:
    """A validated single statement, ready for guarded execution."""

    kind: str  # "SELECT" or "UPDATE"
    statement: str  # stripped input text, preserved verbatim
    tables: frozenset[str]
    updated_columns: frozenset[str] = frozenset()
    new_prog_value: Optional[str] = None
    where_sql: Optional[str] = None


# --- input stripping -------------------------------------------------------

_FENCE_OPEN = re.compile(r"^```[A-Za-z]*\s*")


def strip_wrappers(text: str) -> str:
    """Remove code fences and a leading "SQL:" label, keeping the body verbatim."""
    s = text.strip()
    if s.startswith("```"):
        if "\n" not in s and s.endswith("```") and len(s) > 6:
            s = _FENCE_OPEN.sub("", s[:-3]).strip()
        else:
            lines = s.splitlines()
            end = len(lines)
            for i in range(len(lines) - 1, 0, -1):
                if lines[i].strip() == "```":
                    end = i
                    break
            s = "\n".join(lines[1:end]).strip()
    if s[:4].upper() == "SQL:":
        s = s[4:].strip()
    return s


# --- tokenizer ---------------------------------------------------------------

def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if text.startswith("--", i) or text.startswith("/*", i):
            raise SqlSyntaxError("comments are not allowed", i)
        if c == "'":
            j = i + 1
            while True:
                if j >= n:
                    raise SqlSyntaxError("unterminated string literal", i)
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        j += 2
                        continue
                    break
                j += 1
            tokens.append(Token("STRING", text[i : j + 1], i))
            i = j + 1
            continue
        if c.isdigit():
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            tokens.append(Token("NUMBER", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "KEYWORD" if word.upper() in _KEYWORDS else "IDENT"
            tokens.append(Token(kind, word, i))
            i = j
            continue
        two = text[i : i + 2]
        if two in ("<=", ">=", "!=", "<>"):
            tokens.append(Token("OP", two, i))
            i += 2
            continue
        if c in "=<>":
            tokens.append(Token("OP", c, i))
            i += 1
            continue
        single = {"*": "STAR", ",": "COMMA", "(": "LPAREN", ")": "RPAREN",
                  ".": "DOT", ";": "SEMI"}
        if c in single:
            tokens.append(Token(single[c], c, i))
            i += 1
            continue
        raise SqlSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(Token("EOF", "", n))
    return tokens


# --- parser ---------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token], source: str):
        self._tokens = tokens
        self._pos = 0
        self._source = source
        self.tables: set[str] = set()
        self.updated_columns: set[str] = set()
        self.new_prog_value: Optional[str] = None
        self.where_sql: Optional[str] = None

    # token plumbing

    def _peek(self) -> Token:
        return self._tokens[self._pos]

    def _advance(self) -> Token:
        tok = self._tokens[self._pos]
        if tok.kind != "EOF":
            self._pos += 1
        return tok

    def _check(self, kind: str, text: Optional[str] = None) -> bool:
        tok = self._peek()
        if tok.kind != kind:
            return False
        return text is None or tok.upper == text

    def _match(self, kind: str, text: Optional[str] = None) -> bool:
        if self._check(kind, text):
            self._advance()
            return True
        return False

    def _expect(self, kind: str, text: Optional[str] = None) -> Token:
        if not self._check(kind, text):
            tok = self._peek()
            wanted = text or kind
            raise SqlSyntaxError(
                f"expected {wanted}, found {tok.text or 'end of input'!r}", tok.pos
            )
        return self._advance()

    def _end_of(self, tok: Token) -> int:
        return tok.pos + len(tok.text)

    # statements

    def parse_statement(self) -> str:
        tok = self._peek()
        if self._match("KEYWORD", "SELECT"):
            self._parse_select()
            return "SELECT"
        if self._match("KEYWORD", "UPDATE"):
            self._parse_update()
            return "UPDATE"
        if tok.kind in ("KEYWORD", "IDENT") and tok.upper in _FORBIDDEN_OPENERS:
            raise ForbiddenStatementError(f"{tok.upper} statements are not allowed")
        raise NotSqlError("input does not start with SELECT or UPDATE")

    def _parse_select(self) -> None:
        self._match("KEYWORD", "DISTINCT")
        self._parse_select_list()
        self._expect("KEYWORD", "FROM")
        self.tables.add(self._parse_table_name())
        if self._match("KEYWORD", "WHERE"):
            start = self._peek().pos
            last = self._parse_or_expr()
            self.where_sql = self._source[start : self._end_of(last)]
        if self._match("KEYWORD", "GROUP"):
            self._expect("KEYWORD", "BY")
            self._parse_column_ref()
            while self._match("COMMA"):
                self._parse_column_ref()
        if self._match("KEYWORD", "ORDER"):
            self._expect("KEYWORD", "BY")
            self._parse_order_item()
            while self._match("COMMA"):
                self._parse_order_item()
        if self._match("KEYWORD", "LIMIT"):
            self._expect("NUMBER")

    def _parse_select_list(self) -> None:
        if self._match("STAR"):
            return
        self._parse_select_item()
        while self._match("COMMA"):
            self._parse_select_item()

    def _parse_select_item(self) -> None:
        tok = self._peek()
        if tok.kind == "KEYWORD" and tok.upper in _AGGREGATES:
            self._advance()
            self._expect("LPAREN")
            if tok.upper == "COUNT" and self._match("STAR"):
                pass
            else:
                self._match("KEYWORD", "DISTINCT")
                self._parse_column_ref()
            self._expect("RPAREN")
        elif tok.kind in ("STRING", "NUMBER"):
            self._advance()
        else:
            self._parse_column_ref()
        if self._match("KEYWORD", "AS"):
            self._expect("IDENT")

    def _parse_order_item(self) -> None:
        if not self._match("NUMBER"):
            tok = self._peek()
            if tok.kind == "KEYWORD" and tok.upper in _AGGREGATES:
                self._parse_select_item()
            else:
                self._parse_column_ref()
        if not self._match("KEYWORD", "ASC"):
            self._match("KEYWORD", "DESC")

    def _parse_update(self) -> None:
        self.tables.add(self._parse_table_name())
        self._expect("KEYWORD", "SET")
        self._parse_assignment()
        while self._match("COMMA"):
            self._parse_assignment()
        if self._match("KEYWORD", "WHERE"):
            start = self._peek().pos
            last = self._parse_or_expr()
            self.where_sql = self._source[start : self._end_of(last)]

    def _parse_assignment(self) -> None:
        column = self._expect_any_ident("column name")
        self.updated_columns.add(column.text.lower())
        op = self._expect("OP")
        if op.text != "=":
            raise SqlSyntaxError("expected = in assignment", op.pos)
        value = self._peek()
        if value.kind == "STRING":
            self._advance()
            if column.text.lower() == "prog":
                self.new_prog_value = _unquote(value.text)
        elif value.kind == "NUMBER" or self._check("KEYWORD", "NULL"):
            self._advance()
        else:
            raise SqlSyntaxError(
                f"expected literal value, found {value.text!r}", value.pos
            )

    # expressions (boolean WHERE subset)

    def _parse_or_expr(self) -> Token:
        last = self._parse_and_expr()
        while self._match("KEYWORD", "OR"):
            last = self._parse_and_expr()
        return last

    def _parse_and_expr(self) -> Token:
        last = self._parse_not_expr()
        while self._match("KEYWORD", "AND"):
            last = self._parse_not_expr()
        return last

    def _parse_not_expr(self) -> Token:
        if self._match("KEYWORD", "NOT"):
            return self._parse_not_expr()
        return self._parse_predicate()

    def _parse_predicate(self) -> Token:
        if self._match("LPAREN"):
            self._parse_or_expr()
            return self._expect("RPAREN")
        self._parse_operand()
        if self._match("KEYWORD", "IS"):
            self._match("KEYWORD", "NOT")
            return self._expect("KEYWORD", "NULL")
        negated = self._match("KEYWORD", "NOT")
        if self._match("KEYWORD", "LIKE"):
            return self._parse_operand()
        if self._match("KEYWORD", "IN"):
            self._expect("LPAREN")
            self._parse_literal()
            while self._match("COMMA"):
                self._parse_literal()
            return self._expect("RPAREN")
        if negated:
            tok = self._peek()
            raise SqlSyntaxError("expected LIKE or IN after NOT", tok.pos)
        op = self._peek()
        if op.kind != "OP":
            raise SqlSyntaxError(
                f"expected comparison operator, found {op.text or 'end of input'!r}",
                op.pos,
            )
        self._advance()
        return self._parse_operand()

    def _parse_operand(self) -> Token:
        tok = self._peek()
        if tok.kind in ("STRING", "NUMBER"):
            return self._advance()
        return self._parse_column_ref()

    def _parse_literal(self) -> Token:
        tok = self._peek()
        if tok.kind in ("STRING", "NUMBER"):
            return self._advance()
        if self._check("KEYWORD", "NULL"):
            return self._advance()
        raise SqlSyntaxError(f"expected literal, found {tok.text!r}", tok.pos)

    # names

    def _expect_any_ident(self, what: str) -> Token:
        tok = self._peek()
        if tok.kind == "IDENT":
            return self._advance()
        raise SqlSyntaxError(f"expected {what}, found {tok.text or 'end of input'!r}", tok.pos)

    def _parse_table_name(self) -> str:
        tok = self._expect_any_ident("table name")
        return tok.text.lower()

    def _parse_column_ref(self) -> Token:
        first = self._expect_any_ident("column name")
        if self._match("DOT"):
            # Qualified reference: the qualifier is a table name.
            self.tables.add(first.text.lower())
            return self._expect_any_ident("column name")
        return first


def _unquote(raw: str) -> str:
    return raw[1:-1].replace("''", "'")


# --- public API ------------------------------------------------------------

def validate(sql_text: str) -> SqlPlan:
    """Parse and validate model output into a SqlPlan, or raise a GuardError.

    Code fences and a leading "SQL:" label are stripped; the surviving text
    is preserved verbatim in plan.statement (trailing semicolon included).
    """
    stripped = strip_wrappers(sql_text)
    if not stripped:
        raise NotSqlError("no SQL statement found")

    tokens = tokenize(stripped)

    semi_positions = [i for i, t in enumerate(tokens) if t.kind == "SEMI"]
    if semi_positions:
        after = tokens[semi_positions[0] + 1 :]
        if any(t.kind not in ("SEMI", "EOF") for t in after):
            raise MultiStatementError("input contains more than one statement")
        if len(semi_positions) > 1:
            raise SqlSyntaxError("stray semicolon", tokens[semi_positions[1]].pos)

    parser = _Parser(tokens, stripped)
    kind = parser.parse_statement()
    parser._match("SEMI")
    trailing = parser._peek()
    if trailing.kind != "EOF":
        raise SqlSyntaxError(f"unexpected trailing input {trailing.text!r}", trailing.pos)

    if parser.tables != {"pub"}:
        offenders = sorted(parser.tables - {"pub"}) or ["<none>"]
        raise ForbiddenTableError(f"only table pub may be referenced, got {offenders}")

    if kind == "UPDATE":
        if parser.updated_columns != {"prog"}:
            raise ForbiddenColumnError(
                f"UPDATE may only set prog, got {sorted(parser.updated_columns)}"
            )
        if parser.new_prog_value is None:
            raise InvalidLabelError("UPDATE must set prog to a string literal")
        if not labels.is_valid_label(parser.new_prog_value):
            raise InvalidLabelError(
                f"not a valid program label: {parser.new_prog_value!r}"
            )
        return SqlPlan(
            kind="UPDATE",
            statement=stripped,
            tables=frozenset(parser.tables),
            updated_columns=frozenset(parser.updated_columns),
            new_prog_value=labels.parse_label(parser.new_prog_value),
            where_sql=parser.where_sql,
        )

    return SqlPlan(
        kind="SELECT",
        statement=stripped,
        tables=frozenset(parser.tables),
        where_sql=parser.where_sql,
    )


def classify_statement(sql_text: str) -> str:
    """Kind of an already-validatable statement: "SELECT" or "UPDATE"."""
    return validate(sql_text).kind
