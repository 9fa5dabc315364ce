"""Embedding encoders served by the sidecar.

Two families:

* ``hashed-<dim>`` — a deterministic, dependency-free encoder: tokens map to
  seeded random unit vectors (mean-pooled, renormalized); images are resized
  to 32x32, mean-centered, and passed through a fixed random projection.
  Always available; golden fixtures pin its outputs.
* any other model name — loaded through sentence-transformers (e.g.
  ``sentence-transformers/clip-ViT-B-32``); requires the optional ``clip``
  extra and downloadable/cached weights.

Every encoder returns float64 unit-L2-norm rows, one per input, in order.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image

POOLED_SIZE = 32


class HashedEncoder:
    """Deterministic stand-in encoder (no model weights involved)."""

    def __init__(self, dim: int = 512, seed: int = 0):
        self.name = f"hashed-{dim}"
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51DE]))
        flat = POOLED_SIZE * POOLED_SIZE * 3
        self._projection = rng.normal(0.0, 1.0 / np.sqrt(flat), size=(flat, dim))
        anchor = rng.normal(size=dim)
        self._anchor = 1e-3 * anchor / np.linalg.norm(anchor)

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
        rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)

    @staticmethod
    def _normalize_rows(rows: np.ndarray) -> np.ndarray:
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            tokens = text.lower().split() or [""]
            rows.append(np.mean([self._token_vector(t) for t in tokens], axis=0))
        return self._normalize_rows(np.asarray(rows))

    def embed_images(self, images: list[bytes]) -> np.ndarray:
        rows = []
        for raw in images:
            with Image.open(io.BytesIO(raw)) as img:
                rgb = img.convert("RGB").resize((POOLED_SIZE, POOLED_SIZE),
                                                Image.Resampling.BILINEAR)
            pixels = np.asarray(rgb, dtype=np.float64) / 255.0
            flat = (pixels - pixels.mean()).reshape(-1)
            rows.append(flat @ self._projection + self._anchor)
        return self._normalize_rows(np.asarray(rows))


class SentenceTransformersEncoder:
    """Real pretrained vision-language encoder via sentence-transformers."""

    def __init__(self, model_name: str):
        from sentence_transformers import SentenceTransformer

        self.name = model_name
        self._model = SentenceTransformer(model_name)
        probe = self._model.encode(["probe"], convert_to_numpy=True)
        self.dim = int(probe.shape[1])

    @staticmethod
    def _normalize_rows(rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return self._normalize_rows(self._model.encode(texts, convert_to_numpy=True))

    def embed_images(self, images: list[bytes]) -> np.ndarray:
        pil_images = [Image.open(io.BytesIO(raw)).convert("RGB") for raw in images]
        return self._normalize_rows(self._model.encode(pil_images, convert_to_numpy=True))


def build_encoder(model_name: str):
    if model_name.startswith("hashed-"):
        return HashedEncoder(dim=int(model_name.split("-", 1)[1]))
    return SentenceTransformersEncoder(model_name)
