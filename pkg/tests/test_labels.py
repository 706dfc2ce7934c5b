import pytest

from pubbie import labels
from pubbie.errors import InvalidLabelError


def test_thirteen_labels_in_canonical_order():
    assert len(labels.CANONICAL_LABELS) == 13
    folded = [l.lower().replace("_", " ") for l in labels.CANONICAL_LABELS]
    assert folded == sorted(folded)


def test_no_program_is_a_member():
    assert labels.NO_PROGRAM in labels.CANONICAL_LABELS


def test_parse_is_case_insensitive_and_trims():
    assert labels.parse_label("  materials for clean fuels ") == "Materials for Clean Fuels"
    assert labels.parse_label("PANDEMIC RESPONSE") == "Pandemic Response"
    assert labels.parse_label("no program") == labels.NO_PROGRAM
    assert labels.parse_label("No_Program") == labels.NO_PROGRAM


def test_parse_rejects_unknown():
    with pytest.raises(InvalidLabelError) as err:
        labels.parse_label("Nonexistent Program")
    assert err.value.code == "INVALID_LABEL"
    assert labels.try_parse_label("Nonexistent Program") is None


def test_label_index_roundtrip():
    for i, label in enumerate(labels.CANONICAL_LABELS):
        assert labels.label_index(label) == i
    with pytest.raises(InvalidLabelError):
        labels.label_index("materials for clean fuels")  # not canonical casing
