import json

import pytest
from fastapi.testclient import TestClient

from alice.server import create_app

from conftest import oracle_script


@pytest.fixture()
def app_client(small_ds, tmp_path):
    app = create_app(tmp_path / "store")
    with TestClient(app) as client:
        yield client, small_ds, tmp_path / "store"


def base_config(ds, **over):
    cfg = {"dataset": str(ds.root), "k": 2, "b": 2, "mode": "full",
           "epochs": 4, "m_queries": 3, "seed": 0}
    cfg.update(over)
    return cfg


def create_session(client, ds, **over):
    resp = client.post("/sessions", json=base_config(ds, **over))
    assert resp.status_code == 201, resp.text
    return resp.json()


def answer_all(client, ds, session_id):
    script = oracle_script(ds)
    tickets = client.get(f"/sessions/{session_id}/queries").json()["tickets"]
    answers = []
    for t in tickets:
        text = script.get(frozenset(t["class_names"]))
        if text is None:
            answers.append({"ticket_id": t["ticket_id"], "skip": True})
        else:
            answers.append({"ticket_id": t["ticket_id"], "text": text})
    resp = client.post(f"/sessions/{session_id}/explanations", json=answers)
    assert resp.status_code == 200, resp.text
    return resp.json()["results"]


def test_create_session_returns_tickets(app_client):
    client, ds, _ = app_client
    body = create_session(client, ds)
    assert body["phase"] == "awaiting-explanations"
    assert len(body["tickets"]) == 2
    assert body["round0"]["round"] == 0
    assert 0.0 <= body["round0"]["fine_accuracy"] <= 1.0


def test_create_session_invalid_config(app_client):
    client, ds, _ = app_client
    resp = client.post("/sessions", json=base_config(ds, k=-1))
    assert resp.status_code == 400
    assert resp.json()["error"]["code"] == "invalid-config"


def test_create_session_bad_dataset(app_client):
    client, ds, _ = app_client
    resp = client.post("/sessions", json=base_config(ds, dataset="/no/such/dir"))
    assert resp.status_code == 422
    assert resp.json()["error"]["code"] == "invalid-dataset"


def test_get_unknown_session(app_client):
    client, _, _ = app_client
    assert client.get("/sessions/deadbeef").status_code == 404


def test_full_cycle_and_views(app_client):
    client, ds, _ = app_client
    sid = create_session(client, ds)["session_id"]

    results = answer_all(client, ds, sid)
    assert all(r["status"] in ("ok", "skipped") for r in results)

    resp = client.post(f"/sessions/{sid}/advance")
    assert resp.status_code == 200
    body = resp.json()
    assert body["metrics"]["round"] == 1
    assert not body["done"]

    arch = client.get(f"/sessions/{sid}/architecture").json()
    assert arch["num_classes"] == ds.num_classes
    assert len(arch["groups"]) >= 1
    assert arch["arity"] < ds.num_classes

    answer_all(client, ds, sid)
    body = client.post(f"/sessions/{sid}/advance").json()
    assert body["done"]
    assert client.get(f"/sessions/{sid}/queries").json()["tickets"] == []

    history = client.get(f"/sessions/{sid}/metrics").json()["history"]
    assert [m["round"] for m in history] == [0, 1, 2]
    for m in history:
        assert m["coarse_accuracy"] >= m["fine_accuracy"]


def test_architecture_reflects_overlap_merges(app_client):
    client, ds, _ = app_client
    sid = create_session(client, ds, b=3, k=1)["session_id"]
    tickets = client.get(f"/sessions/{sid}/queries").json()["tickets"]
    # answer every ticket naming the same segment; pairs may overlap or not,
    # but every answered pair must appear inside some group
    answers = [{"ticket_id": t["ticket_id"], "text": "look at the bill"}
               for t in tickets]
    resp = client.post(f"/sessions/{sid}/explanations", json=answers)
    assert resp.status_code == 200
    arch = client.get(f"/sessions/{sid}/architecture").json()
    grouped = {c for g in arch["groups"] for c in g["members"]}
    for t in tickets:
        assert set(t["pair"]) <= grouped


def test_explanations_error_keeps_ticket(app_client):
    client, ds, _ = app_client
    sid = create_session(client, ds)["session_id"]
    tickets = client.get(f"/sessions/{sid}/queries").json()["tickets"]
    resp = client.post(f"/sessions/{sid}/explanations", json=[
        {"ticket_id": tickets[0]["ticket_id"], "text": "gibberish zzz qqq"}])
    assert resp.status_code == 200
    assert resp.json()["results"][0]["status"] == "error"
    remaining = client.get(f"/sessions/{sid}/queries").json()["tickets"]
    assert tickets[0]["ticket_id"] in [t["ticket_id"] for t in remaining]


def test_unknown_ticket_404(app_client):
    client, ds, _ = app_client
    sid = create_session(client, ds)["session_id"]
    resp = client.post(f"/sessions/{sid}/explanations",
                       json=[{"ticket_id": "bogus", "text": "the bill"}])
    assert resp.status_code == 404


def test_advance_blocked_by_pending(app_client):
    client, ds, _ = app_client
    sid = create_session(client, ds)["session_id"]
    resp = client.post(f"/sessions/{sid}/advance")
    assert resp.status_code == 409
    pending = resp.json()["error"]["pending"]
    assert len(pending) == 2


def test_done_session_rejects_mutations(app_client):
    client, ds, _ = app_client
    sid = create_session(client, ds, k=0)["session_id"]
    assert client.post(f"/sessions/{sid}/advance").status_code == 409
    resp = client.post(f"/sessions/{sid}/explanations", json=[])
    assert resp.status_code == 409


def test_saliency_endpoint(app_client):
    client, ds, _ = app_client
    sid = create_session(client, ds, k=0)["session_id"]
    sample = ds.samples_of("test")[0]
    resp = client.get(f"/sessions/{sid}/saliency",
                      params={"sample": sample.sample_id, "class": 0})
    assert resp.status_code == 200
    body = resp.json()
    assert body["h"] == ds.grid.h and body["w"] == ds.grid.w
    assert all(v >= 0.0 for row in body["grid"] for v in row)
    # by class name too
    resp = client.get(f"/sessions/{sid}/saliency",
                      params={"sample": sample.sample_id, "class": "class-01"})
    assert resp.status_code == 200
    assert client.get(f"/sessions/{sid}/saliency",
                      params={"sample": 10**6, "class": 0}).status_code == 404
    assert client.get(f"/sessions/{sid}/saliency",
                      params={"sample": sample.sample_id, "class": 999}).status_code == 404


def test_crash_restart_preserves_state(small_ds, tmp_path):
    store_dir = tmp_path / "store"
    with TestClient(create_app(store_dir)) as client:
        sid = create_session(client, small_ds)["session_id"]
        answer_all(client, small_ds, sid)
        client.post(f"/sessions/{sid}/advance")
        before = client.get(f"/sessions/{sid}").json()

    # simulated restart: fresh app over the same data dir
    with TestClient(create_app(store_dir)) as client:
        after = client.get(f"/sessions/{sid}").json()
        assert after == before
        # and the session still advances
        answer_all(client, small_ds, sid)
        resp = client.post(f"/sessions/{sid}/advance")
        assert resp.status_code == 200
        assert resp.json()["done"]


def test_concurrent_mutations_rejected(app_client):
    client, ds, _ = app_client
    sid = create_session(client, ds)["session_id"]
    store = client.app.state.store
    lock = store._locks[sid]
    assert lock.acquire()
    try:
        resp = client.post(f"/sessions/{sid}/advance")
        assert resp.status_code == 409
        assert resp.json()["error"]["code"] == "busy"
    finally:
        lock.release()


def test_snapshot_written_before_response(app_client):
    client, ds, store_dir = app_client
    sid = create_session(client, ds)["session_id"]
    snapshot = json.loads((store_dir / f"{sid}.json").read_text())
    assert snapshot["phase"] == "awaiting-explanations"
    answer_all(client, ds, sid)
    snapshot = json.loads((store_dir / f"{sid}.json").read_text())
    assert snapshot["phase"] == "ready-to-train"
