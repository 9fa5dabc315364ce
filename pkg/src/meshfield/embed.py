"""Text/image embedding backends and the embedding-space style loss.

Two backends ship with the package:

* ``ToyEmbedder`` — a fully deterministic, differentiable stand-in: text is
  whitespace-tokenized onto hashed random unit vectors (mean, renormalized);
  images are average-pooled to 32x32, flattened, and passed through a fixed
  random projection. It exists so training and tests run with no pretrained
  model anywhere near the build.
* ``RemoteBackend`` — an HTTP client for the embedding sidecar protocol
  (``GET /health``, ``POST /embed/text``, ``POST /embed/image`` with base64
  PNGs). Evaluation-grade but non-differentiable: the training loop refuses
  it.

All backends return unit-L2-norm vectors for both modalities.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json

import numpy as np
import requests

from .autograd import Tensor, cosine_sim, matmul
from .errors import BackendError, ConfigError, DimensionError, InputError
from .render import resize_bilinear, save_png

POOLED_SIZE = 32


def l2_normalize(v: Tensor) -> Tensor:
    norm = (v * v).sum().sqrt()
    if norm.item() <= 0.0:
        raise InputError("cannot normalize a zero vector")
    return v / norm


class EmbeddingBackend:
    """Interface: embed text and images into a shared unit-norm space."""

    name: str = "abstract"
    dim: int = 0
    differentiable: bool = False
    input_size: int = 224  # spatial size augmentation should resize to

    def embed_text(self, text: str) -> Tensor:
        raise NotImplementedError

    def embed_image(self, image: Tensor) -> Tensor:
        raise NotImplementedError


def _check_image(image: Tensor) -> Tensor:
    if not isinstance(image, Tensor):
        image = Tensor(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got {image.shape}")
    return image


class ToyEmbedder(EmbeddingBackend):
    """Deterministic differentiable embedder (hashing text, projecting images)."""

    differentiable = True

    def __init__(self, dim: int = 512, seed: int = 0, input_size: int = 64):
        self.name = f"toy-{dim}-seed{seed}"
        self.dim = dim
        self.seed = seed
        self.input_size = input_size
        self._token_cache: dict[str, np.ndarray] = {}
        proj_rng = np.random.default_rng(
            np.random.SeedSequence([seed, 0x1A6E]).generate_state(4))
        flat = POOLED_SIZE * POOLED_SIZE * 3
        self._projection = proj_rng.normal(0.0, 1.0 / np.sqrt(flat), size=(flat, dim))
        # opponent-color transform (two chroma axes + downweighted luminance);
        # chroma is identically zero for gray pixels, so the embedding
        # discriminates paint rather than shared silhouettes and shading
        lum = 1.0 / 3.0
        self._opponent = np.array([[1 / np.sqrt(2), 1 / np.sqrt(6), lum / np.sqrt(3)],
                                   [-1 / np.sqrt(2), 1 / np.sqrt(6), lum / np.sqrt(3)],
                                   [0.0, -2 / np.sqrt(6), lum / np.sqrt(3)]])
        # per-channel mean-centering precedes projection (the shared DC term
        # would otherwise swamp content); the anchor keeps constant images
        # embeddable and is scaled down so it never drowns real content
        anchor = proj_rng.normal(size=dim)
        self._anchor = 1e-3 * anchor / np.linalg.norm(anchor)

    def _token_vector(self, token: str) -> np.ndarray:
        cached = self._token_cache.get(token)
        if cached is None:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
            rng = np.random.default_rng(np.frombuffer(digest[:32], dtype=np.uint64))
            v = rng.normal(size=self.dim)
            cached = v / np.linalg.norm(v)
            self._token_cache[token] = cached
        return cached

    def embed_text(self, text: str) -> Tensor:
        tokens = text.lower().split()
        if not tokens:
            raise InputError("cannot embed an empty prompt")
        mean = np.mean([self._token_vector(t) for t in tokens], axis=0)
        return l2_normalize(Tensor(mean))

    def embed_image(self, image: Tensor) -> Tensor:
        image = _check_image(image)
        h, w = image.shape[0], image.shape[1]
        if h % POOLED_SIZE == 0 and w % POOLED_SIZE == 0 and h > 0 and w > 0:
            pooled = (image.reshape(POOLED_SIZE, h // POOLED_SIZE,
                                    POOLED_SIZE, w // POOLED_SIZE, 3)
                      .mean(axis=1).mean(axis=3))
        else:
            pooled = resize_bilinear(image, POOLED_SIZE)
        pixels = pooled.reshape(POOLED_SIZE * POOLED_SIZE, 3)
        opponent = matmul(pixels, Tensor(self._opponent))
        centered = opponent - opponent.mean(axis=0)
        flat = centered.reshape(1, POOLED_SIZE * POOLED_SIZE * 3)
        projected = matmul(flat, Tensor(self._projection)).reshape(self.dim)
        return l2_normalize(projected + Tensor(self._anchor))


class ScriptedBackend(EmbeddingBackend):
    """Test/metrology backend emitting embeddings with scripted similarities.

    ``embed_text`` always returns the first basis vector; successive
    ``embed_image`` calls cycle through the scripted values ``s`` and return
    ``s * e1 + sqrt(1 - s^2) * e2``, so the cosine similarity against the
    text embedding is exactly the scripted value.
    """

    def __init__(self, similarities, dim: int = 512):
        self.name = "scripted"
        self.dim = dim
        self.similarities = [float(s) for s in similarities]
        if not self.similarities:
            raise InputError("need at least one scripted similarity")
        if any(abs(s) > 1 for s in self.similarities):
            raise InputError("scripted similarities must lie in [-1, 1]")
        self._calls = 0

    def embed_text(self, text: str) -> Tensor:
        if not text.strip():
            raise InputError("cannot embed an empty prompt")
        e1 = np.zeros(self.dim)
        e1[0] = 1.0
        return Tensor(e1)

    def embed_image(self, image: Tensor) -> Tensor:
        s = self.similarities[self._calls % len(self.similarities)]
        self._calls += 1
        v = np.zeros(self.dim)
        v[0] = s
        v[1] = np.sqrt(1.0 - s * s)
        return Tensor(v)


class RemoteBackend(EmbeddingBackend):
    """Client for the embedding sidecar HTTP protocol (evaluation only)."""

    def __init__(self, url: str, timeout: float = 10.0, dim: int | None = None,
                 retries: int = 2):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._session = requests.Session()
        health = self._request("GET", "/health")
        if health.get("status") != "ok":
            raise BackendError(f"backend at {self.url} is not ready: {health}")
        self.dim = int(health["dim"])
        if dim is not None and dim != self.dim:
            raise ConfigError(f"backend at {self.url} has dim {self.dim}, expected {dim}")
        self.name = f"remote:{health.get('model', 'unknown')}"

    def _request(self, method: str, route: str, payload: dict | None = None) -> dict:
        last_error = None
        for _ in range(self.retries + 1):
            try:
                response = self._session.request(
                    method, self.url + route, timeout=self.timeout,
                    json=payload if payload is not None else None)
                if response.status_code != 200:
                    raise BackendError(
                        f"{self.url}{route} returned HTTP {response.status_code}: "
                        f"{response.text[:200]}")
                return response.json()
            except (requests.RequestException, json.JSONDecodeError) as exc:
                last_error = exc
        raise BackendError(
            f"backend at {self.url}{route} unreachable after "
            f"{self.retries + 1} attempts: {last_error}") from last_error

    def _first_embedding(self, body: dict) -> Tensor:
        embeddings = body.get("embeddings") or []
        if not embeddings:
            raise BackendError(f"backend at {self.url} returned no embeddings")
        v = np.asarray(embeddings[0], dtype=np.float64)
        if v.shape != (self.dim,):
            raise BackendError(f"backend returned dim {v.shape}, advertised {self.dim}")
        return Tensor(v)

    def embed_text(self, text: str) -> Tensor:
        if not text.strip():
            raise InputError("cannot embed an empty prompt")
        return self._first_embedding(self._request("POST", "/embed/text", {"texts": [text]}))

    def embed_image(self, image: Tensor) -> Tensor:
        image = _check_image(image)
        buf = io.BytesIO()
        save_png(image, buf)
        payload = {"images": [base64.b64encode(buf.getvalue()).decode("ascii")]}
        return self._first_embedding(self._request("POST", "/embed/image", payload))


def mean_view_embedding(backend: EmbeddingBackend, images: list[Tensor]) -> Tensor:
    """Mean of per-view embeddings. Deliberately not renormalized: the loss
    takes cosine similarities, which absorb the scale."""
    if not images:
        raise InputError("mean_view_embedding needs at least one view")
    total = backend.embed_image(images[0])
    for image in images[1:]:
        total = total + backend.embed_image(image)
    return total * (1.0 / len(images))


def clip_style_loss(phi_color: Tensor, phi_gray: Tensor, text_embedding: Tensor) -> Tensor:
    """Negative cosine alignment of both branches with the target embedding;
    bounded in [-2, 2]."""
    return -cosine_sim(phi_color, text_embedding) - cosine_sim(phi_gray, text_embedding)


def make_backend(spec: str, seed: int = 0, dim: int = 512) -> EmbeddingBackend:
    """Backend factory: ``toy`` or ``remote:<url>``."""
    if spec == "toy":
        return ToyEmbedder(dim=dim, seed=seed)
    if spec.startswith("remote:"):
        return RemoteBackend(spec.split(":", 1)[1], dim=dim)
    raise ConfigError(f"unknown backend spec {spec!r} (use 'toy' or 'remote:<url>')")
