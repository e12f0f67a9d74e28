"""HTTP serving layer: one loaded model behind classify/explain endpoints.

Endpoints: POST /v1/classify, POST /v1/explain, GET /v1/model, GET /healthz.
All state is the immutable model loaded at startup; request handlers are
pure given their inputs, so concurrent requests are safe.
"""

import base64
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from . import explain as ex
from .errors import CxrError, DecodeError, UnsupportedFormat
from .imagecore import (
    ClaheParams,
    NormalizationStats,
    decode_image,
    inference_preprocess,
)
from .models import BUILDERS
from .nn import ModelGraph, WeightStore, count_flops, count_params, graph_execute, load_weights, softmax

log = logging.getLogger(__name__)

CLIP_RANGE = (0.0, 8.0)  # exclusive lower bound
GRID_RANGE = (2, 16)


@dataclass
class ServiceSettings:
    port: int = 8080
    max_body_mb: int = 20
    scorecam_batch: int = 16
    cors_origins: tuple = ("*",)
    clahe: ClaheParams = field(default_factory=ClaheParams)
    normalization: NormalizationStats = field(default_factory=NormalizationStats)


@dataclass
class LoadedModel:
    graph: ModelGraph
    store: WeightStore
    digest: str
    param_count: int
    flops: int

    @property
    def labels(self) -> list:
        return list(self.graph.class_labels)


def model_from_store(graph: ModelGraph, store: WeightStore, raw_bytes: bytes = b"") -> LoadedModel:
    digest = hashlib.sha256(raw_bytes).hexdigest() if raw_bytes else ""
    return LoadedModel(graph=graph, store=store, digest=digest,
                       param_count=count_params(graph, store), flops=count_flops(graph))


def load_model(path) -> LoadedModel:
    """Load a CXRW file and build its architecture graph."""
    with open(path, "rb") as f:
        raw = f.read()
    store = load_weights(path)
    if store.architecture not in BUILDERS:
        raise CxrError(f"weight file names unknown architecture {store.architecture!r}")
    num_classes = len(store.class_labels) or 4
    graph = BUILDERS[store.architecture](num_classes)
    return model_from_store(graph, store, raw)


class _BadRequest(Exception):
    def __init__(self, code, detail, status=400):
        super().__init__(detail)
        self.code = code
        self.detail = detail
        self.status = status


def _error(code, detail, status):
    return JSONResponse({"error": code, "detail": detail}, status_code=status)


def _parse_overrides(fields: dict, settings: ServiceSettings):
    """Whitelisted preprocessing overrides; out-of-range values are a 400."""
    clahe = settings.clahe
    clip = clahe.clip_limit
    grid = clahe.grid
    if fields.get("clahe_clip") is not None:
        try:
            clip = float(fields["clahe_clip"])
        except (TypeError, ValueError):
            raise _BadRequest("override_out_of_range", "clahe_clip must be a number")
        if not (CLIP_RANGE[0] < clip <= CLIP_RANGE[1]):
            raise _BadRequest("override_out_of_range",
                              f"clahe_clip must be in ({CLIP_RANGE[0]}, {CLIP_RANGE[1]}]")
    if fields.get("clahe_grid") is not None:
        raw = fields["clahe_grid"]
        if isinstance(raw, str):
            parts = raw.split(",")
        elif isinstance(raw, (list, tuple)):
            parts = list(raw)
        else:
            parts = None
        try:
            gx, gy = (int(v) for v in parts)
        except (TypeError, ValueError):
            raise _BadRequest("override_out_of_range", "clahe_grid must be two integers")
        if not all(GRID_RANGE[0] <= v <= GRID_RANGE[1] for v in (gx, gy)):
            raise _BadRequest("override_out_of_range",
                              f"clahe_grid entries must be in [{GRID_RANGE[0]}, {GRID_RANGE[1]}]")
        grid = (gx, gy)
    return ClaheParams(clip_limit=clip, grid=grid, bins=clahe.bins)


async def _read_request(request: Request, settings: ServiceSettings):
    """Extract (image bytes, field dict) from a multipart or JSON body."""
    limit = settings.max_body_mb * 1024 * 1024
    body = await request.body()
    if len(body) > limit:
        raise _BadRequest("body_too_large", f"body exceeds {settings.max_body_mb} MB")
    ctype = request.headers.get("content-type", "")
    if ctype.startswith("multipart/form-data"):
        try:
            form = await request.form()
        except Exception:
            raise _BadRequest("malformed_body", "cannot parse multipart body")
        upload = form.get("image")
        if upload is None or isinstance(upload, str):
            raise _BadRequest("missing_image", "multipart part 'image' is required")
        image = await upload.read()
        fields = {k: v for k, v in form.items() if k != "image" and isinstance(v, str)}
        return image, fields
    try:
        payload = json.loads(body)
    except json.JSONDecodeError:
        raise _BadRequest("malformed_body", "body is neither multipart nor valid JSON")
    if not isinstance(payload, dict) or "image_b64" not in payload:
        raise _BadRequest("missing_image", "JSON field 'image_b64' is required")
    try:
        image = base64.b64decode(payload["image_b64"], validate=True)
    except Exception:
        raise _BadRequest("malformed_body", "image_b64 is not valid base64")
    if len(image) > limit:
        raise _BadRequest("body_too_large", f"image exceeds {settings.max_body_mb} MB")
    fields = {k: v for k, v in payload.items() if k != "image_b64"}
    return image, fields


def _classify_payload(model: LoadedModel, gray, params, settings, started, capture=()):
    tensor = inference_preprocess(gray, params, settings.normalization)
    logits, acts = graph_execute(model.graph, model.store, tensor, capture=capture)
    probs = softmax(logits)
    labels = model.labels
    predicted = labels[int(np.argmax(probs))]
    payload = {
        "probabilities": {label: float(probs[i]) for i, label in enumerate(labels)},
        "predicted": predicted,
        "model": model.store.architecture,
        "preprocessing": {
            "clahe_clip": params.clip_limit,
            "clahe_grid": list(params.grid),
            "normalize_mean": list(settings.normalization.mean),
            "normalize_std": list(settings.normalization.std),
        },
        "latency_ms": round((time.perf_counter() - started) * 1000.0, 3),
    }
    return payload, tensor, acts


def create_app(model, settings: ServiceSettings = None) -> FastAPI:
    """Build the app around one immutable model (None = degraded)."""
    settings = settings or ServiceSettings()
    app = FastAPI(title="cxrkit service", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(settings.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.model = model
    app.state.settings = settings
    app.state.started = time.time()
    scorecam_gate = threading.Semaphore(1)

    @app.get("/healthz")
    def health():
        status = "ok" if app.state.model is not None else "degraded"
        return {"status": status, "uptime_s": round(time.time() - app.state.started, 3)}

    @app.get("/v1/model")
    def model_info():
        m = app.state.model
        if m is None:
            return _error("model_not_loaded", "no model is loaded", 503)
        return {
            "architecture": m.store.architecture,
            "class_labels": m.labels,
            "parameter_count": m.param_count,
            "flops": m.flops,
            "weight_file_digest": m.digest,
        }

    async def _classify_common(request: Request):
        m = app.state.model
        if m is None:
            raise _BadRequest("model_not_loaded", "no model is loaded", status=503)
        started = time.perf_counter()
        image_bytes, fields = await _read_request(request, settings)
        params = _parse_overrides(fields, settings)
        try:
            gray = decode_image(image_bytes)
        except UnsupportedFormat as exc:
            raise _BadRequest("unsupported_format", str(exc), status=415)
        except DecodeError as exc:
            raise _BadRequest("undecodable_image", str(exc))
        return m, gray, params, fields, started

    @app.post("/v1/classify")
    async def classify(request: Request):
        try:
            m, gray, params, _, started = await _classify_common(request)
            payload, _, _ = await run_in_threadpool(
                _classify_payload, m, gray, params, settings, started)
        except _BadRequest as exc:
            return _error(exc.code, exc.detail, exc.status)
        except CxrError as exc:
            return _error("pipeline_error", str(exc), 400)
        return JSONResponse(payload)

    @app.post("/v1/explain")
    async def explain_endpoint(request: Request):
        try:
            m, gray, params, fields, started = await _classify_common(request)
            method = fields.get("method", "score_cam")
            if method not in ("gap_head", "score_cam"):
                raise _BadRequest("unsupported_method", f"method {method!r} is not supported")
            alpha = fields.get("alpha", 0.5)
            try:
                alpha = float(alpha)
            except (TypeError, ValueError):
                raise _BadRequest("invalid_param", "alpha must be a number")
            if not 0.0 <= alpha <= 1.0:
                raise _BadRequest("invalid_param", "alpha must be in [0, 1]")
            try:
                default_layer = ex.gap_input_layer(m.graph)
            except CxrError as exc:
                raise _BadRequest("invalid_param", str(exc))
            layer = fields.get("layer") or default_layer
            if not m.graph.has_node(layer):
                raise _BadRequest("invalid_param", f"layer {layer!r} is not a graph node")

            payload, tensor, acts = await run_in_threadpool(
                _classify_payload, m, gray, params, settings, started, {layer})
            target_label = fields.get("target") or payload["predicted"]
            if target_label not in m.labels:
                raise _BadRequest("invalid_param", f"unknown target label {target_label!r}")
            target = m.labels.index(target_label)

            top_k = fields.get("top_k")
            if top_k is not None:
                try:
                    top_k = int(top_k)
                except (TypeError, ValueError):
                    raise _BadRequest("invalid_param", "top_k must be an integer")

            if method == "gap_head":
                if layer != default_layer:
                    raise _BadRequest("invalid_param",
                                      "gap_head explains only the tensor entering GAP")
                weights = ex.gap_head_weights(m.graph, m.store, target)
            else:
                def scored():
                    with scorecam_gate:
                        return ex.score_cam_weights(
                            m.graph, m.store, tensor, layer, target,
                            top_k=top_k, batch_size=settings.scorecam_batch)
                try:
                    weights = await run_in_threadpool(scored)
                except ValueError as exc:
                    raise _BadRequest("invalid_param", str(exc))

            def render():
                stack = ex.ActivationStack(layer_id=layer, maps=acts[layer][0])
                raw = ex.cam_combine(stack, weights)
                heat = ex.render_heatmap(raw, gray.shape[0], gray.shape[1])
                return heat, ex.overlay(heat, gray, alpha)

            heat, composite = await run_in_threadpool(render)
            payload["heatmap_png"] = base64.b64encode(ex.heatmap_to_png(heat)).decode("ascii")
            payload["overlay_png"] = base64.b64encode(ex.rgb_to_png(composite)).decode("ascii")
            payload["cam"] = {"method": method, "layer": layer, "top_k": top_k}
            payload["target"] = target_label
        except _BadRequest as exc:
            return _error(exc.code, exc.detail, exc.status)
        except CxrError as exc:
            return _error("pipeline_error", str(exc), 400)
        return JSONResponse(payload)

    return app


def create_app_from_path(path, settings: ServiceSettings = None) -> FastAPI:
    """Startup helper: a bad weight file degrades health instead of crashing."""
    model = None
    try:
        model = load_model(path)
    except (OSError, CxrError) as exc:
        log.error("failed to load model from %s: %s", path, exc)
    return create_app(model, settings)
