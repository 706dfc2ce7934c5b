"""Challenge-program label set.

A publication is affiliated with one of 12 collaborative challenge programs
or carries the NO_PROGRAM marker. The set is closed: everything stored or
predicted must canonicalize to one of these 13 strings.

Parsing is case-insensitive and whitespace-tolerant; output is always the
canonical casing. Canonical order (alphabetical, case-folded) drives label
indices in classifier vectors and deterministic tie-breaks.
"""

from __future__ import annotations

from .errors import InvalidLabelError

NO_PROGRAM = "NO_PROGRAM"

# 12 challenge programs + NO_PROGRAM, in canonical (alphabetical) order.
CANONICAL_LABELS: tuple[str, ...] = (
    "Aging in Place",
    "Applied Quantum Computing",
    "Arctic and Northern",
    "Artificial Intelligence for Design",
    "Artificial Intelligence for Logistics",
    "Clean and Energy-Efficient Transportation",
    "Critical Battery Materials",
    "Disruptive Technology Solutions for Cell and Gene Therapy",
    "High-Throughput and Secure Networks",
    "Internet of Things: Quantum Sensors",
    "Materials for Clean Fuels",
    NO_PROGRAM,
    "Pandemic Response",
)

NUM_LABELS = len(CANONICAL_LABELS)

# Label provenance markers for stored publications.
GROUND_TRUTH = "GROUND_TRUTH"
PREDICTED = "PREDICTED"
USER_CORRECTED = "USER_CORRECTED"
PROG_SOURCES = frozenset({GROUND_TRUTH, PREDICTED, USER_CORRECTED})


def _fold(value: str) -> str:
    return " ".join(value.lower().replace("_", " ").split())


_FOLDED_TO_CANONICAL = {_fold(label): label for label in CANONICAL_LABELS}

_LABEL_INDEX = {label: i for i, label in enumerate(CANONICAL_LABELS)}


def parse_label(value: str) -> str:
    """Canonicalize a program label string.

    Raises InvalidLabelError when the (case-folded, trimmed) value is not
    one of the 13 known labels.
    """
    canonical = _FOLDED_TO_CANONICAL.get(_fold(value))
    if canonical is None:
        raise InvalidLabelError(f"unknown program label: {value!r}")
    return canonical


def try_parse_label(value: str) -> str | None:
    """Like parse_label but returns None instead of raising."""
    return _FOLDED_TO_CANONICAL.get(_fold(value))


def is_valid_label(value: str) -> bool:
    return _fold(value) in _FOLDED_TO_CANONICAL


def label_index(label: str) -> int:
    """Position of a canonical label in CANONICAL_LABELS."""
    try:
        return _LABEL_INDEX[label]
    except KeyError:
        raise InvalidLabelError(f"not a canonical label: {label!r}") from None
