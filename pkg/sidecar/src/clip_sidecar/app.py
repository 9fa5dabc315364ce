"""The sidecar HTTP API.

Routes (JSON over HTTP/1.1):

* ``GET /health`` -> ``{"status": "ok", "dim": int, "model": str}``;
  503 while the model is still loading.
* ``POST /embed/text`` with ``{"texts": [str]}`` (1-64 texts, each at most
  512 bytes) -> ``{"embeddings": [[float]], "dim": int, "model": str}``.
* ``POST /embed/image`` with ``{"images": [base64 PNG]}`` (1-32 images).

Embeddings are unit-L2-norm and come back in request order. Errors: 400 for
malformed JSON or undecodable content, 413 for oversized batches/items, 500
for model failures. Request handling is stateless; the model loads once.
"""

from __future__ import annotations

import base64
import binascii
import threading

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .encoders import build_encoder

MAX_TEXTS = 64
MAX_TEXT_BYTES = 512
MAX_IMAGES = 32


def create_app(model_name: str = "hashed-512", eager: bool = True) -> FastAPI:
    app = FastAPI(title="clip-sidecar")
    app.state.encoder = None
    app.state.load_error = None
    app.state.model_name = model_name

    def load() -> None:
        try:
            app.state.encoder = build_encoder(model_name)
        except Exception as exc:  # surfaced via /health and 500s
            app.state.load_error = f"{type(exc).__name__}: {exc}"

    if eager:
        load()
    else:
        threading.Thread(target=load, daemon=True).start()

    def require_encoder():
        if app.state.load_error is not None:
            raise HTTPException(500, f"model failed to load: {app.state.load_error}")
        if app.state.encoder is None:
            raise HTTPException(503, "model is still loading")
        return app.state.encoder

    async def parse_json(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(400, "malformed JSON body")
        if not isinstance(body, dict):
            raise HTTPException(400, "body must be a JSON object")
        return body

    def respond(encoder, embeddings) -> JSONResponse:
        return JSONResponse({
            "embeddings": [[float(x) for x in row] for row in embeddings],
            "dim": encoder.dim,
            "model": encoder.name,
        })

    @app.get("/health")
    def health():
        if app.state.load_error is not None:
            return JSONResponse({"status": "error", "detail": app.state.load_error},
                                status_code=500)
        if app.state.encoder is None:
            return JSONResponse({"status": "loading", "model": model_name},
                                status_code=503)
        return {"status": "ok", "dim": app.state.encoder.dim,
                "model": app.state.encoder.name}

    @app.post("/embed/text")
    async def embed_text(request: Request):
        body = await parse_json(request)
        texts = body.get("texts")
        if (not isinstance(texts, list) or not texts
                or not all(isinstance(t, str) and t.strip() for t in texts)):
            raise HTTPException(400, "'texts' must be a non-empty list of non-empty strings")
        if len(texts) > MAX_TEXTS:
            raise HTTPException(413, f"at most {MAX_TEXTS} texts per request")
        if any(len(t.encode()) > MAX_TEXT_BYTES for t in texts):
            raise HTTPException(413, f"each text must be at most {MAX_TEXT_BYTES} bytes")
        encoder = require_encoder()
        try:
            return respond(encoder, encoder.embed_texts(texts))
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(500, f"model failure: {exc}")

    @app.post("/embed/image")
    async def embed_image(request: Request):
        body = await parse_json(request)
        images = body.get("images")
        if not isinstance(images, list) or not images:
            raise HTTPException(400, "'images' must be a non-empty list of base64 PNGs")
        if len(images) > MAX_IMAGES:
            raise HTTPException(413, f"at most {MAX_IMAGES} images per request")
        decoded = []
        for item in images:
            if not isinstance(item, str):
                raise HTTPException(400, "images must be base64 strings")
            try:
                decoded.append(base64.b64decode(item, validate=True))
            except (binascii.Error, ValueError):
                raise HTTPException(400, "undecodable base64 image")
        encoder = require_encoder()
        try:
            return respond(encoder, encoder.embed_images(decoded))
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(400, f"undecodable image: {exc}")

    return app
