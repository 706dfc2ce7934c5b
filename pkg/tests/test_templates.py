import math

import pytest

from pubbie.errors import TemplateError
from pubbie.llm import StageId
from pubbie.templates import PromptTemplate, TemplateRegistry, parse_template_file


def test_default_registry_covers_all_stages():
    registry = TemplateRegistry()
    for stage in StageId:
        template = registry.get(stage)
        assert template.system_text
    assert "history" in registry.get(StageId.A1).required_slots
    assert {"schema", "labels"} <= registry.get(StageId.D).required_slots
    assert "context" in registry.get(StageId.E).required_slots


def test_unknown_slot_rejected_at_parse():
    with pytest.raises(TemplateError):
        PromptTemplate(stage=StageId.B, system_text="classify {wrong_slot}")


def test_render_fails_on_unbound_slot():
    template = PromptTemplate(stage=StageId.C, system_text="Context:\n{context}")
    with pytest.raises(TemplateError) as err:
        template.render_system({})
    assert "context" in err.value.message
    assert template.render_system({"context": "snippets"}) == "Context:\nsnippets"


def test_literal_braces_escape():
    template = PromptTemplate(stage=StageId.D, system_text="Emit {{json}} for {schema}")
    assert template.render_system({"schema": "s"}) == "Emit {json} for s"


def test_examples_section_parsed_and_messaged():
    content = 'System text.\n%%examples\n[["in one", "out one"], ["in two", "out two"]]\n'
    template = parse_template_file(StageId.B, content)
    assert template.system_text == "System text."
    assert template.few_shot_examples == (("in one", "out one"), ("in two", "out two"))
    request = template.build_request("real input", {})
    roles = [m.role for m in request.messages]
    assert roles == ["system", "user", "assistant", "user", "assistant", "user"]
    assert request.messages[-1].content == "real input"
    assert request.last_user_content() == "real input"


def test_bad_examples_section():
    with pytest.raises(TemplateError):
        parse_template_file(StageId.B, "text\n%%examples\nnot json\n")


def test_directory_overrides_defaults(tmp_path):
    (tmp_path / "b.txt").write_text("Custom B template.", encoding="utf-8")
    registry = TemplateRegistry(str(tmp_path))
    assert registry.get(StageId.B).system_text == "Custom B template."
    # Other stages still come from the shipped defaults.
    assert registry.get(StageId.C).system_text


def test_default_d_template_ships_fewshot_sql():
    registry = TemplateRegistry()
    template = registry.get(StageId.D)
    assert template.few_shot_examples
    assert any("SELECT" in out for _, out in template.few_shot_examples)


def test_build_request_uses_stage_defaults():
    registry = TemplateRegistry()
    request = registry.get(StageId.D).build_request(
        "question", {"schema": "s", "labels": "l"}
    )
    assert request.stage == StageId.D
    assert request.temperature == 0.0
    assert math.isclose(request.max_tokens, 256)
