# ==============================================================================
# TESTS DES ENDPOINTS DE L'API
# ==============================================================================

import numpy as np
import pytest
from fastapi.testclient import TestClient

from api.main import app
from engine.attention_io import decode_attention

API_VERSION = "/api/v1"

SMALL = {"patches": 16, "knn": 8}


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture
def points(sphere):
    return sphere.points[:256].tolist()


# ==============================================================================
# 1. RACINE ET SANTÉ
# ==============================================================================

def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["status"] == "operational"


def test_health_reports_process_time(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"
    assert float(response.headers["X-Process-Time"]) >= 0.0


# ==============================================================================
# 2. MASQUES
# ==============================================================================

def test_mask_endpoint(client, points):
    response = client.post(f"{API_VERSION}/masks", json={"points": points, "t": 100, **SMALL})
    assert response.status_code == 200
    data = response.json()
    assert data["num_patches"] == 16
    assert data["alpha"] == 1.0
    assert len(data["masked_indices"]) == 12
    assert data["masked_indices"] == sorted(data["masked_indices"])
    assert set(data["seeds"]) == {"cell_probs", "delta", "em", "selection", "rotation"}


def test_mask_endpoint_is_deterministic(client, points):
    body = {"points": points, "t": 40, "seed": 8, **SMALL}
    first = client.post(f"{API_VERSION}/masks", json=body).content
    assert client.post(f"{API_VERSION}/masks", json=body).content == first


def test_mask_t_beyond_T(client, points):
    response = client.post(f"{API_VERSION}/masks", json={"points": points, "t": 101, **SMALL})
    assert response.status_code == 400
    assert "t doit être" in response.json()["detail"]


def test_mask_more_patches_than_points(client):
    response = client.post(f"{API_VERSION}/masks", json={"points": [[0, 0, 0], [1, 1, 1]], "patches": 4, "knn": 1})
    assert response.status_code == 400


def test_mask_degenerate_ratio(client, points):
    response = client.post(f"{API_VERSION}/masks", json={"points": points, "ratio": 0.01, **SMALL})
    assert response.status_code == 400


def test_mask_request_schema(client):
    assert client.post(f"{API_VERSION}/masks", json={"t": 0}).status_code == 422


def test_trace_endpoint(client, points):
    response = client.post(f"{API_VERSION}/masks/trace", json={"points": points, "steps": 3, **SMALL})
    assert response.status_code == 200
    rows = response.json()["rows"]
    assert [r["t"] for r in rows] == [0, 50, 100]
    assert [r["components"] for r in rows] == [16, 16, 10]
    assert {r["masked_count"] for r in rows} == {12}


# ==============================================================================
# 3. ÉTUDES DE ROTATION
# ==============================================================================

def test_rotation_endpoint(client, points):
    response = client.post(
        f"{API_VERSION}/studies/rotation",
        json={"points": points, "scenario": "zz", "trials": 2, **SMALL},
    )
    assert response.status_code == 200
    report = response.json()
    assert report["scenario"] == "Z/Z"
    assert report["z_rank_stable"] is True
    assert report["ratio_exact"] is True
    assert len(report["details"]) == 2


def test_rotation_unknown_scenario(client, points):
    response = client.post(f"{API_VERSION}/studies/rotation", json={"points": points, "scenario": "xx"})
    assert response.status_code == 422


# ==============================================================================
# 4. ATTENTION SYNTHÉTIQUE
# ==============================================================================

def test_attention_synth_upload(client, cloud_file):
    with open(cloud_file, "rb") as handle:
        response = client.post(
            f"{API_VERSION}/attention/synth",
            files={"file": ("cloud.xyz", handle, "text/plain")},
            data={"patches": "16", "knn": "8", "t": "3"},
        )
    assert response.status_code == 200
    assert response.headers["content-type"] == "application/octet-stream"
    attn = decode_attention(response.content)
    assert attn.num_patches == 16
    assert attn.iteration == 3
    assert np.abs(attn.a.sum(axis=1) - 1.0).max() <= 1e-9


def test_attention_synth_malformed_upload(client):
    response = client.post(
        f"{API_VERSION}/attention/synth",
        files={"file": ("bad.xyz", b"0 0 0\n1 2\n", "text/plain")},
        data={"patches": "1", "knn": "1"},
    )
    assert response.status_code == 422
    assert "ligne 2" in response.json()["detail"]


def test_attention_synth_bad_bandwidth(client, cloud_file):
    response = client.post(
        f"{API_VERSION}/attention/synth",
        files={"file": ("cloud.xyz", cloud_file.read_bytes(), "text/plain")},
        data={"bandwidth": "0"},
    )
    assert response.status_code == 400


def test_attention_synth_vanishing_bandwidth(client, cloud_file):
    response = client.post(
        f"{API_VERSION}/attention/synth",
        files={"file": ("cloud.xyz", cloud_file.read_bytes(), "text/plain")},
        data={"patches": "16", "knn": "8", "bandwidth": "1e-170"},
    )
    assert response.status_code == 200
    np.testing.assert_array_equal(decode_attention(response.content).a, np.eye(16))
