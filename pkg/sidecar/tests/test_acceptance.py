"""Sidecar acceptance: the wire contract, golden fixtures, and the primary
client against a live server (run with ``pytest -s -v``)."""

import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from clip_sidecar.app import create_app

GOLDEN_PATH = Path(__file__).resolve().parents[2] / "fixtures" / "sidecar_golden.json"


@contextmanager
def criterion(name: str):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name} ({time.perf_counter() - started:.1f}s)")
        raise
    print(f"[PASS] {name} ({time.perf_counter() - started:.1f}s)")


def test_sidecar_contract_and_golden_fixtures():
    with criterion("sidecar-contract"):
        client = TestClient(create_app("hashed-64"))
        health = client.get("/health")
        assert health.status_code == 200
        assert health.json()["dim"] == 64

        for fixture in json.loads(GOLDEN_PATH.read_text()):
            response = client.post(fixture["route"], json=fixture["request"])
            assert response.status_code == 200
            body = response.json()
            got = np.asarray(body["embeddings"])
            expected = np.asarray(fixture["response"]["embeddings"])
            np.testing.assert_allclose(got, expected, atol=1e-12)  # order-sensitive
            assert np.abs(np.linalg.norm(got, axis=1) - 1.0).max() <= 1e-5
            assert body["dim"] == health.json()["dim"]
            assert body["model"] == fixture["response"]["model"]


def test_primary_client_against_live_sidecar(live_sidecar):
    with criterion("sidecar-primary-integration"):
        import meshfield

        backend = meshfield.RemoteBackend(live_sidecar, dim=64)
        text = backend.embed_text("a red sphere")
        image = backend.embed_image(
            meshfield.Tensor(np.random.default_rng(1).uniform(0, 1, (16, 16, 3))))
        for vec in (text, image):
            assert abs(np.linalg.norm(vec.data) - 1.0) <= 1e-5
