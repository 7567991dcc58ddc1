"""HTTP segmentation endpoint.

POST /segment  SegmentRequest -> SegmentResponse (JSON)
GET  /classes  class vocabulary + prompt template
GET  /health   liveness

The model is loaded once at startup and never mutated by requests; concurrent
requests are safe. Semi-automatic requests carry their own seed (default 0)
so interactive exploration reproduces exactly.

SegmentRequest fields:
    image_b64   lossless PNG, base-64
    class_text  one vocabulary class
    points      optional [[row, col], ...] user clicks (manual mode)
    mode        "manual" | "semi_automatic"
    seed        int, default 0

SegmentResponse fields:
    mask_rle     row-major alternating run lengths, background first
    mask_height, mask_width
    points_used  [[row, col], ...] exactly as consumed by the decoder
    point_source "user" | "gt" | "similarity" | "similarity_fallback"
    similarity_b64  8-bit grayscale PNG of the normalized similarity map
    model_version   checkpoint identity string
    mode
"""

from __future__ import annotations

import base64
import io

import numpy as np
import torch
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import rle
from .errors import InputError
from .model import SegModel, run_mode_pipeline
from .seg_head import Mode


class SegmentRequest(BaseModel):
    image_b64: str
    class_text: str
    points: list[list[int]] | None = None
    mode: str = Mode.SEMI_AUTOMATIC.value
    seed: int = 0


def _decode_image(image_b64: str, expected_size: int) -> torch.Tensor:
    from PIL import Image

    try:
        raw = base64.b64decode(image_b64, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:  # binascii.Error, UnidentifiedImageError, ...
        raise InputError(f"cannot decode image: {exc}") from exc
    if img.size != (expected_size, expected_size):
        img = img.resize((expected_size, expected_size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1))


def _encode_gray_png(values: torch.Tensor) -> str:
    from PIL import Image

    arr = (values.detach().cpu().numpy() * 255.0).round().clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(model: SegModel, version: str = "dev") -> FastAPI:
    app = FastAPI(title="promptseg")
    model.eval()
    vocabulary = model.class_vocabulary
    # warm the text-embedding cache once; requests never re-encode
    for name in vocabulary:
        model.text_encoder.encode(name, model.config.template)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": version}

    @app.get("/classes")
    def classes():
        return {"classes": vocabulary, "template": model.config.template}

    @app.post("/segment")
    def segment(req: SegmentRequest):
        if req.class_text not in vocabulary:
            return JSONResponse(
                status_code=422,
                content={
                    "error": f"unknown class {req.class_text!r}",
                    "classes": vocabulary,
                },
            )
        try:
            mode = Mode(req.mode)
        except ValueError:
            return JSONResponse(
                status_code=422,
                content={"error": f"unknown mode {req.mode!r}"},
            )
        try:
            image = _decode_image(req.image_b64, model.config.seg.image_size)
        except InputError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        user_points = None
        if mode is Mode.MANUAL:
            if not req.points:
                return JSONResponse(
                    status_code=422,
                    content={"error": "manual mode requires at least one point"},
                )
            user_points = [(int(r), int(c)) for r, c in req.points]
        try:
            with torch.no_grad():
                result = run_mode_pipeline(
                    model,
                    image,
                    req.class_text,
                    mode,
                    user_points=user_points,
                    seed=req.seed,
                )
        except InputError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        mask = result.prediction.binary().cpu().numpy().astype(np.uint8)
        payload = {
            "mask_rle": rle.encode(mask),
            "mask_height": int(mask.shape[0]),
            "mask_width": int(mask.shape[1]),
            "points_used": [[int(r), int(c)] for r, c, _ in result.bundle.points.points],
            "point_source": result.point_source,
            "similarity_b64": _encode_gray_png(result.similarity.values),
            "model_version": version,
            "mode": mode.value,
        }
        return JSONResponse(content=payload)

    return app


def serve(checkpoint_path: str, port: int = 8000, host: str = "127.0.0.1") -> None:
    import uvicorn

    from .checkpoint import load_model

    model, extra = load_model(checkpoint_path)
    version = f"{checkpoint_path}@epoch{extra.get('epoch', '?')}"
    uvicorn.run(create_app(model, version=version), host=host, port=port)
