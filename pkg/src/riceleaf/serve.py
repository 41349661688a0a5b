"""HTTP inference service: the delivery mechanism behind the browser UI.

Endpoints:
    POST /api/predict          raw image bytes in, per-class probabilities out
    GET  /api/health           service/model status
    GET  /api/diseases/{label} background info and management advice
    /                          static files (the built UI), when configured

The model is loaded once at startup and shared read-only across request
handlers; every error response body is {"code": ..., "message": ...}.
"""

from __future__ import annotations

import hashlib
import time
from importlib import resources

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .data import preprocess, decode_image
from .errors import ConfigError, DecodeError
from .nn import Model, model_forward
from .tensor import Tensor

MAX_BODY_BYTES = 10 * 1024 * 1024

_CONTENT_TYPES = {
    "image/png": "png",
    "image/jpeg": "jpeg",
    "image/x-portable-pixmap": "ppm",
}


def load_disease_info(path=None) -> dict:
    """Parse the line-oriented disease data file (label, display name,
    description, management advice; tab-separated)."""
    if path is None:
        text = resources.files(__package__).joinpath("diseases.tsv").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    info = {}
    for ln, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ConfigError(f"disease file line {ln}: expected 4 tab-separated fields")
        label, display, description, advice = fields
        info[label] = {
            "label": label,
            "display_name": display,
            "description": description,
            "management_advice": advice,
        }
    return info


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_app(model_path=None, *, model: Model = None, static_dir=None,
               disease_file=None, max_body_bytes=MAX_BODY_BYTES) -> FastAPI:
    """Build the service. Pass a model path (hashed for model_id) or a
    loaded model; with neither, every inference route answers 503."""
    model_id = None
    if model_path is not None:
        from .modelio import load_model

        with open(model_path, "rb") as f:
            raw = f.read()
        model = load_model(raw)
        model_id = hashlib.sha256(raw).hexdigest()[:16]
    elif model is not None:
        digest = hashlib.sha256()
        for _, _, t in model.parameters():
            digest.update(t.tobytes())
        model_id = digest.hexdigest()[:16]

    diseases = load_disease_info(disease_file)
    if model is not None:
        missing = [c for c in model.class_labels if c not in diseases]
        if missing:
            raise ConfigError(f"no disease info for model classes: {missing}")

    app = FastAPI(title="riceleaf inference service")
    app.state.model = model
    app.state.model_id = model_id
    app.state.diseases = diseases

    @app.post("/api/predict")
    async def predict(request: Request):
        if model is None:
            return _error(503, "model_not_loaded", "no model is loaded")
        body = await request.body()
        if len(body) > max_body_bytes:
            return _error(
                413, "payload_too_large",
                f"body of {len(body)} bytes exceeds the {max_body_bytes}-byte limit",
            )
        hint = _CONTENT_TYPES.get(
            (request.headers.get("content-type") or "").split(";")[0].strip().lower()
        )
        t0 = time.perf_counter()
        try:
            raw = decode_image(body, format_hint=hint)
        except DecodeError as e:
            return _error(400, "decode_error", str(e))
        img = preprocess(raw, model.input_shape[1:])
        batch = Tensor.wrap(img.array[None, :, :, :])
        probs, _ = model_forward(model, batch)
        row = probs.array[0]
        latency_ms = (time.perf_counter() - t0) * 1000.0
        top = model.class_labels[int(np.argmax(row))]
        return JSONResponse(
            {
                "model_id": model_id,
                "classes": [
                    {"label": label, "probability": round(float(p), 6)}
                    for label, p in zip(model.class_labels, row)
                ],
                "top": top,
                "latency_ms": round(latency_ms, 3),
            }
        )

    @app.get("/api/health")
    async def health():
        if model is None:
            return _error(503, "model_not_loaded", "no model is loaded")
        return JSONResponse(
            {
                "status": "ok",
                "model_id": model_id,
                "classes": list(model.class_labels),
            }
        )

    @app.get("/api/diseases/{label}")
    async def disease_info(label: str):
        entry = diseases.get(label)
        if entry is None:
            return _error(404, "unknown_disease", f"no information for {label!r}")
        return JSONResponse(entry)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
