"""Session service tests: SSE feed, gating, artifacts, validation."""
import json
import time

import pytest
from fastapi.testclient import TestClient

from geoagent.service import create_app

from conftest import dual_agent_script, single_agent_script


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c


def parse_sse(body: str) -> list[dict]:
    events = []
    for frame in body.split("\n\n"):
        lines = [ln for ln in frame.splitlines() if ln]
        if not lines:
            continue
        event = {}
        for line in lines:
            key, _, value = line.partition(": ")
            if key == "id":
                event["id"] = int(value)
            elif key == "event":
                event["type"] = value
            elif key == "data":
                event["data"] = json.loads(value)
        if event:
            events.append(event)
    return events


def fetch_events(client, session_id, cursor=0, timeout_s=0.3):
    resp = client.get(f"/sessions/{session_id}/events",
                      params={"cursor": cursor, "timeout_s": timeout_s})
    assert resp.status_code == 200
    return parse_sse(resp.text)


def wait_for(client, session_id, predicate, deadline_s=30.0):
    """Poll the feed until predicate(events) is true or the deadline passes."""
    start = time.monotonic()
    while time.monotonic() - start < deadline_s:
        events = fetch_events(client, session_id)
        if predicate(events):
            return events
        time.sleep(0.05)
    raise AssertionError("condition not reached; last events: "
                         + json.dumps(fetch_events(client, session_id), indent=1))


def is_finished(events):
    return any(e["type"] == "status" and e["data"]["status"] in ("finished", "failed")
               for e in events)


# ---------------------------------------------------------------------------

def test_scripted_single_session_streams_to_finish(client):
    resp = client.post("/sessions", json={
        "task": "Export the stats table.",
        "backend": "scripted",
        "script": single_agent_script(),
        "architecture": "single",
    })
    assert resp.status_code == 200
    sid = resp.json()["id"]
    events = wait_for(client, sid, is_finished)
    rounds = [e for e in events if e["type"] == "round"]
    assert len(rounds) == 3
    final = [e for e in events if e["type"] == "status"][-1]
    assert final["data"]["status"] == "finished"
    assert final["data"]["outcome"] == "success"
    # the feed is replayable and stable
    assert fetch_events(client, sid) == events


def test_event_ids_strictly_increasing_and_cursor_resume(client):
    resp = client.post("/sessions", json={
        "task": "t", "script": single_agent_script(), "architecture": "single"})
    sid = resp.json()["id"]
    events = wait_for(client, sid, is_finished)
    ids = [e["id"] for e in events]
    assert ids == sorted(ids) and len(set(ids)) == len(ids)
    tail = fetch_events(client, sid, cursor=ids[1])
    assert [e["id"] for e in tail] == ids[2:]


def test_artifacts_listed_and_downloadable(client):
    resp = client.post("/sessions", json={
        "task": "t", "script": single_agent_script(), "architecture": "single"})
    sid = resp.json()["id"]
    wait_for(client, sid, is_finished)
    artifacts = client.get(f"/sessions/{sid}/artifacts").json()
    names = {a["name"] for a in artifacts}
    assert names == {"stats.csv", "surface.grid"}
    body = client.get(f"/sessions/{sid}/artifacts/stats.csv")
    assert body.status_code == 200
    assert b"id,v" in body.content


def test_validation_errors(client):
    assert client.post("/sessions", json={"task": "   "}).status_code == 400
    assert client.post("/sessions", json={"task": "x", "architecture": "triple"}
                       ).status_code == 400
    assert client.get("/sessions/unknown/events").status_code == 404


def test_gated_session_blocks_until_approval(client):
    resp = client.post("/sessions", json={
        "task": "gated run", "script": dual_agent_script(),
        "architecture": "dual", "gated": True})
    sid = resp.json()["id"]

    for expected_step in (0, 1, 2):
        events = wait_for(client, sid, lambda evs: any(
            e["type"] == "gate" and e["data"]["step"] == expected_step for e in evs))
        gate_resolved = [e for e in events if e["type"] == "gate_resolved"]
        assert len(gate_resolved) == expected_step  # pending gate not yet resolved
        ack = client.post(f"/sessions/{sid}/gate",
                          json={"action": "approve", "step": expected_step})
        assert ack.status_code == 200

    events = wait_for(client, sid, is_finished)
    # gate safety: between each gate and its resolution there are no rounds
    for step in (0, 1, 2):
        gate_at = next(i for i, e in enumerate(events)
                       if e["type"] == "gate" and e["data"]["step"] == step)
        resolved_at = next(i for i, e in enumerate(events)
                           if e["type"] == "gate_resolved" and e["data"]["step"] == step)
        between = [e for e in events[gate_at + 1:resolved_at] if e["type"] == "round"]
        assert between == []


def test_modify_then_approve_propagates_text(client):
    resp = client.post("/sessions", json={
        "task": "gated run", "script": dual_agent_script(),
        "architecture": "dual", "gated": True})
    sid = resp.json()["id"]

    wait_for(client, sid, lambda evs: any(
        e["type"] == "gate" and e["data"]["step"] == 0 for e in evs))
    client.post(f"/sessions/{sid}/gate", json={
        "action": "modify", "step": 0, "text": "Inspect with revised parameters"})
    for step in (1, 2):
        wait_for(client, sid, lambda evs: any(
            e["type"] == "gate" and e["data"]["step"] == step for e in evs))
        client.post(f"/sessions/{sid}/gate", json={"action": "approve", "step": step})
    events = wait_for(client, sid, is_finished)

    resolved = next(e for e in events
                    if e["type"] == "gate_resolved" and e["data"]["step"] == 0)
    assert resolved["data"]["description"] == "Inspect with revised parameters"
    resolved_at = events.index(resolved)
    next_round = next(e for e in events[resolved_at:] if e["type"] == "round")
    assert next_round["data"]["step"] == "Inspect with revised parameters"


def test_stale_gate_rejected(client):
    resp = client.post("/sessions", json={
        "task": "gated run", "script": dual_agent_script(),
        "architecture": "dual", "gated": True})
    sid = resp.json()["id"]
    wait_for(client, sid, lambda evs: any(e["type"] == "gate" for e in evs))
    assert client.post(f"/sessions/{sid}/gate",
                       json={"action": "approve", "step": 0}).status_code == 200
    # double submit: the gate has already been resolved
    assert client.post(f"/sessions/{sid}/gate",
                       json={"action": "approve", "step": 0}).status_code == 409
    for step in (1, 2):
        wait_for(client, sid, lambda evs: any(
            e["type"] == "gate" and e["data"]["step"] == step for e in evs))
        client.post(f"/sessions/{sid}/gate", json={"action": "approve", "step": step})
    wait_for(client, sid, is_finished)


def test_domain_knowledge_echoed(client):
    resp = client.post("/sessions", json={
        "task": "t", "script": ["FINISH"], "architecture": "single",
        "domain_knowledge": "Step 1: buffer roads 2500 m"})
    sid = resp.json()["id"]
    assert resp.json()["domain_knowledge"] == "Step 1: buffer roads 2500 m"
    summary = client.get(f"/sessions/{sid}").json()
    assert summary["domain_knowledge"] == "Step 1: buffer roads 2500 m"
    wait_for(client, sid, is_finished)
