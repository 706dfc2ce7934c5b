import re

import pytest
from fastapi.testclient import TestClient

from pubbie.config import Config
from pubbie.llm import MockChatProvider
from pubbie.service import create_app

from conftest import AGENT_1, AGENT_3, FIXTURE_CSV, USER_1, USER_2, USER_3, replay_script


@pytest.fixture
def client(tmp_path):
    config = Config(store_path=str(tmp_path / "service.db"))
    app = create_app(config, provider=MockChatProvider(replay_script()))
    with TestClient(app, raise_server_exceptions=False) as client:
        client.app = app
        yield client


def create_session(client) -> str:
    response = client.post("/api/sessions")
    assert response.status_code == 200
    return response.json()["session_id"]


def upload_fixture(client, sid):
    return client.post(
        f"/api/sessions/{sid}/upload",
        content=FIXTURE_CSV,
        headers={"Content-Type": "text/csv"},
    )


def test_health(client):
    response = client.get("/api/health")
    assert response.status_code == 200
    assert response.text == "ok"


def test_create_session_ids_are_distinct_and_urlsafe(client):
    first, second = create_session(client), create_session(client)
    assert first != second
    assert re.fullmatch(r"[A-Za-z0-9_-]{22,}", first)


def test_chat_replay_first_turn(client):
    sid = create_session(client)
    response = client.post(f"/api/sessions/{sid}/chat", json={"text": USER_1})
    assert response.status_code == 200
    body = response.json()
    assert body["agent_text"] == AGENT_1
    assert body["question_type"] == "GENERIC"
    assert "stage_trace" not in body  # debug off


def test_chat_unknown_session(client):
    response = client.post("/api/sessions/nope/chat", json={"text": "Hi!"})
    assert response.status_code == 404
    assert response.json()["error"]["code"] == "SESSION_NOT_FOUND"


def test_chat_empty_text(client):
    sid = create_session(client)
    response = client.post(f"/api/sessions/{sid}/chat", json={"text": "   "})
    assert response.status_code == 400
    assert response.json()["error"]["code"] == "EMPTY_TEXT"


def test_chat_text_too_long(client):
    sid = create_session(client)
    response = client.post(
        f"/api/sessions/{sid}/chat", json={"text": "x" * (10 * 1024)}
    )
    assert response.status_code == 413
    assert response.json()["error"]["code"] == "TEXT_TOO_LONG"


def test_upload_and_reupload(tmp_path):
    config = Config(store_path=str(tmp_path / "up.db"))
    app = create_app(config, provider=MockChatProvider(replay_script()), debug=True)
    with TestClient(app) as client:
        sid = create_session(client)
        first = upload_fixture(client, sid)
        assert first.status_code == 200
        assert "Inserted: 3, updated: 0" in first.json()["sql_result_summary"]
        # A second upload of the same file updates instead of inserting.
        again = upload_fixture(client, sid).json()
        assert again["error_code"] is None
        assert "Inserted: 0, updated: 3" in again["sql_result_summary"]


def test_upload_too_large(tmp_path):
    config = Config(
        store_path=str(tmp_path / "s.db"),
        server_max_upload_bytes=1024 * 1024,
    )
    app = create_app(config, provider=MockChatProvider(replay_script()))
    with TestClient(app) as client:
        sid = create_session(client)
        big = b"eid,title\n" + b"x" * (1024 * 1024 + 1)
        response = client.post(
            f"/api/sessions/{sid}/upload",
            content=big,
            headers={"Content-Type": "text/csv"},
        )
        assert response.status_code == 413
        assert response.json()["error"]["code"] == "PAYLOAD_TOO_LARGE"


def test_export_flow(client):
    sid = create_session(client)
    upload_fixture(client, sid)
    client.post(f"/api/sessions/{sid}/chat", json={"text": USER_1})
    client.post(f"/api/sessions/{sid}/chat", json={"text": USER_2})
    turn = client.post(f"/api/sessions/{sid}/chat", json={"text": USER_3}).json()
    assert turn["agent_text"] == AGENT_3

    response = client.get(f"/api/sessions/{sid}/export")
    assert response.status_code == 200
    assert response.content == b"prog\nMaterials for Clean Fuels\n"
    disposition = response.headers["content-disposition"]
    assert re.search(r'filename="pubbie-export-\d{8}-\d{6}\.csv"', disposition)
    assert response.headers["x-export-summary"]

    orchestrator = client.app.state.orchestrator
    direct_payload, _ = orchestrator.run_export_workflow(sid)
    assert direct_payload == response.content


def test_export_without_result(client):
    sid = create_session(client)
    response = client.get(f"/api/sessions/{sid}/export")
    assert response.status_code == 409
    assert response.json()["error"]["code"] == "NO_RESULT_TO_EXPORT"


def test_sessions_survive_restart(tmp_path):
    config = Config(store_path=str(tmp_path / "durable.db"))
    app = create_app(config, provider=MockChatProvider(replay_script()))
    with TestClient(app) as client:
        sid = create_session(client)
        upload_fixture(client, sid)
        client.post(f"/api/sessions/{sid}/chat", json={"text": USER_1})
        client.post(f"/api/sessions/{sid}/chat", json={"text": USER_2})
        client.post(f"/api/sessions/{sid}/chat", json={"text": USER_3})
    app.state.orchestrator.store.db.close()

    restarted = create_app(config, provider=MockChatProvider(replay_script()))
    with TestClient(restarted) as client:
        # Prior turns and the last result both survive the restart.
        response = client.get(f"/api/sessions/{sid}/export")
        assert response.status_code == 200
        assert response.content == b"prog\nMaterials for Clean Fuels\n"
        session = restarted.state.orchestrator.sessions.get(sid)
        # upload + three chat turns from before the restart + the export turn
        assert len(session.turns) == 5
        assert session.turns[0].user_text == "[csv upload]"


def test_unexpected_errors_do_not_leak(tmp_path):
    class ExplodingProvider:
        def complete(self, request):
            raise RuntimeError("secret internal detail")

    config = Config(store_path=str(tmp_path / "x.db"))
    app = create_app(config, provider=ExplodingProvider())
    with TestClient(app, raise_server_exceptions=False) as client:
        sid = create_session(client)
        # Provider exceptions inside a turn are contained by the orchestrator...
        response = client.post(f"/api/sessions/{sid}/chat", json={"text": "Hi!"})
        assert response.status_code == 500
        body = response.json()
        assert body["error"]["code"] == "INTERNAL"
        assert "secret" not in body["error"]["message"]


def test_provider_failure_surfaces_documented_code(tmp_path):
    from pubbie.errors import ProviderUnreachableError

    class DownProvider:
        def complete(self, request):
            raise ProviderUnreachableError("down")

    config = Config(store_path=str(tmp_path / "y.db"))
    app = create_app(config, provider=DownProvider())
    with TestClient(app) as client:
        sid = create_session(client)
        body = client.post(f"/api/sessions/{sid}/chat", json={"text": "Hi!"}).json()
        assert body["error_code"] == "PROVIDER_UNREACHABLE"
        assert body["retryable"] is True


def test_debug_flag_exposes_stage_trace(tmp_path):
    config = Config(store_path=str(tmp_path / "dbg.db"))
    app = create_app(config, provider=MockChatProvider(replay_script()), debug=True)
    with TestClient(app) as client:
        sid = create_session(client)
        body = client.post(f"/api/sessions/{sid}/chat", json={"text": USER_1}).json()
        assert body["stage_trace"] == [["B", "Generic"], ["C", AGENT_1]]
