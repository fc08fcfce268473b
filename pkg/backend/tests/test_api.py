import pytest
from fastapi.testclient import TestClient

import main

TINY = {
    "num_aps": 4,
    "antennas_per_ap": 2,
    "num_ues": 4,
    "pilot_length": 2,
    "ul_data": 99,
    "dl_data": 99,
    "area_side": 300.0,
    "layout_mode": "square-grid",
}


@pytest.fixture
def client():
    return TestClient(main.app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["version"]


def test_presets(client):
    body = client.get("/presets").json()
    assert "running-example-100x4" in body
    assert body["intro-benchmark"]["config"]["num_aps"] == 64


def test_run_experiment(client):
    payload = {"scenario": None, "network": TINY, "mode": "distributed", "num_setups": 1, "draws_per_setup": 10, "seed": 2}
    response = client.post("/experiments", json=payload)
    assert response.status_code == 200
    body = response.json()
    table = body["tables"]["se"]
    assert table["count"] == 4
    assert table["samples"] == sorted(table["samples"])
    assert body["spec"]["scheme"] == "L-MMSE"
    assert body["scalability"]["scalable"]["LP-MMSE"] is True


def test_setup_cap(client, monkeypatch):
    monkeypatch.setattr(main, "MAX_API_SETUPS", 2)
    response = client.post("/experiments", json={"scenario": None, "network": TINY, "num_setups": 3})
    assert response.status_code == 422
    assert response.json()["error"] == "ConfigurationError"


def test_invalid_scheme(client):
    response = client.post("/experiments", json={"network": TINY, "mode": "centralized", "scheme": "LP-MMSE", "num_setups": 1})
    assert response.status_code == 422


def test_setup_errors_map_to_their_cause(client):
    payload = {"scenario": None, "network": TINY, "mode": "distributed", "scheme": "MR-local",
               "bound": "mr-closed-form", "num_setups": 1, "draws_per_setup": 1}
    response = client.post("/experiments", json=payload)
    assert response.status_code == 422
    assert response.json()["error"] == "SetupError"


def test_scalability(client):
    response = client.post("/scalability", json={"scenario": None, "network": TINY, "seed": 1})
    assert response.status_code == 200
    body = response.json()
    assert body["num_aps"] == 4 and body["num_ues"] == 4
    assert len(body["complexity"]["MR"]) == 4
    assert body["scalable"]["MMSE"] is False
    assert len(body["hardening"]) == 4


def test_scalability_rejects_unknown_preset(client):
    response = client.post("/scalability", json={"scenario": "campus"})
    assert response.status_code == 422
