"""HTTP API checked against golden request/response fixtures.

Fixtures replay in file-name order against one fresh store. Regenerate
them with ``MEMDAG_REGEN_FIXTURES=1 pytest tests/test_service.py``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from memdag.config import Config
from memdag.errors import TransportError
from memdag.model import make_node_id
from memdag.providers import MockProvider
from memdag.service import create_app
from memdag.store import MemoryStore

FIXTURES = Path(__file__).parent / "fixtures" / "api"
TOKEN = "secret"
AUTH = {"Authorization": f"Bearer {TOKEN}"}


def turn(tid, text, wall, clips=None):
    d = {"turn_id": tid, "session_id": "s1", "messages": [{"role": "user", "text": text, "wall_ms": wall}]}
    if clips:
        d["media_refs"] = [{"asset": "cam", "start_s": a, "end_s": b} for a, b in clips]
    return d


FIRST = make_node_id("t1", 0, 1)
SECOND = make_node_id("t1", 1, 2)

SCENARIO = [
    ("retrieve_empty", "GET", "/v1/retrieve?q=anything", None),
    ("post_turn", "POST", "/v1/turns", turn("t1", "Juno keeps a tortoise named Pebble. Juno tortoise Pebble eats kale daily.", 1000)),
    ("post_batch", "POST", "/v1/batch", {"turns": [
        turn("t2", "CORRECTION: Juno keeps a tortoise named Boulder.", 2000),
        turn("t3", "Juno hikes the ridge trail on sundays.", 3000, clips=[(5.0, 9.0)]),
    ]}),
    ("retrieve", "GET", "/v1/retrieve?q=Juno%20tortoise%20kale&k=2&depth=4", None),
    ("node_threads", "GET", f"/v1/nodes/{SECOND}?threads=1", None),
    ("agent_query", "POST", "/v1/agent/query", {"query": "what does the tortoise eat", "max_iterations": 2}),
    ("delete_node", "DELETE", f"/v1/nodes/{FIRST}", None),
    ("delete_again", "DELETE", f"/v1/nodes/{FIRST}", None),
    ("delete_root", "DELETE", "/v1/nodes/root", None),
    ("unknown_node", "GET", "/v1/nodes/missing", None),
    ("bad_turn", "POST", "/v1/turns", {"turn_id": "t9", "messages": []}),
    ("bad_retrieve", "GET", "/v1/retrieve?q=x&k=0", None),
    ("bad_batch", "POST", "/v1/batch", {"turns": "nope"}),
    ("rebuild", "POST", "/v1/admin/rebuild", None),
    ("snapshot", "POST", "/v1/admin/snapshot", None),
    ("check", "GET", "/v1/admin/check", None),
    ("stats", "GET", "/v1/stats", None),
]


@pytest.fixture
def client(tmp_path):
    store = MemoryStore(Config(dim=128), MockProvider(128), data_dir=tmp_path / "d")
    with TestClient(create_app(store, TOKEN)) as c:
        yield c
    store.close()


def send(client, method, path, body):
    return client.request(method, path, json=body, headers=AUTH)


def fixture_files():
    return sorted(FIXTURES.glob("*.json"))


def test_regenerate_or_cover_every_step(client):
    if os.environ.get("MEMDAG_REGEN_FIXTURES"):
        for old in fixture_files():
            old.unlink()
        for i, (name, method, path, body) in enumerate(SCENARIO):
            r = send(client, method, path, body)
            doc = {"request": {"method": method, "path": path, "body": body},
                   "response": {"status": r.status_code, "body": r.json()}}
            (FIXTURES / f"{i:02d}_{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    assert [p.stem.split("_", 1)[1] for p in fixture_files()] == [s[0] for s in SCENARIO]


def normalized(body):
    # the stats body names whichever kernel backend was selected at import
    if isinstance(body, dict) and "kernel_backend" in body:
        body = {**body, "kernel_backend": "<any>"}
    return body


def test_golden_fixtures(client):
    files = fixture_files()
    assert files, "no fixtures; run with MEMDAG_REGEN_FIXTURES=1"
    for f in files:
        doc = json.loads(f.read_text())
        req = doc["request"]
        r = send(client, req["method"], req["path"], req["body"])
        got = (r.status_code, normalized(r.json()))
        assert got == (doc["response"]["status"], normalized(doc["response"]["body"])), f.name


def test_fixture_statuses_and_error_shape():
    by_name = {p.stem.split("_", 1)[1]: json.loads(p.read_text())["response"] for p in fixture_files()}
    assert by_name["retrieve_empty"] == {"status": 200, "body": {"entries": [], "root": True,
                                                                  "token_estimate": 0, "truncated": False}}
    expected = {"delete_root": 400, "unknown_node": 404, "bad_turn": 400, "bad_retrieve": 400,
                "bad_batch": 400, "delete_again": 400}
    for name, status in expected.items():
        assert by_name[name]["status"] == status, name
        assert set(by_name[name]["body"]) == {"code", "message", "detail"}
    assert by_name["check"]["body"] == {"violations": []}


def test_auth_required(client):
    assert client.get("/v1/stats").status_code == 401
    assert client.get("/v1/stats", headers={"Authorization": "Bearer wrong"}).json()["code"] == "unauthorized"


def test_duplicate_and_provider_errors(tmp_path):
    provider = MockProvider(128)
    store = MemoryStore(Config(dim=128, retries=0), provider)
    c = TestClient(create_app(store))
    provider.enqueue("summarize", TransportError("backend down"))
    r = c.post("/v1/turns", json=turn("t1", "Some fact about owls here.", 1))
    assert r.status_code == 503 and r.json()["code"] == "provider_unavailable"
    from memdag.errors import DuplicateNodeError

    def dup(_):
        raise DuplicateNodeError("x")

    store.add_turn = dup
    r = c.post("/v1/turns", json=turn("t2", "Other fact about owls.", 2))
    assert r.status_code == 409 and r.json()["code"] == "duplicate"


def test_malformed_json_body_is_400(client):
    r = client.post("/v1/turns", content=b"{oops", headers={**AUTH, "Content-Type": "application/json"})
    assert r.status_code == 400 and r.json()["code"] == "validation_error"
