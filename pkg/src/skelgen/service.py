"""HTTP service for stroke-conditioned skeleton generation.

Endpoints:
  POST /api/generate   stroke + prompt -> skeleton with per-joint depth
  POST /api/project    skeleton + view -> stroke (edit-resubmit loop)
  GET  /api/health     status and model version
  GET  /api/config     effective sampling defaults

Responses are pure functions of (request body, loaded checkpoint); there is
no per-session state. Validation failures return 400 with the violation list;
a missing checkpoint returns 503.
"""

from __future__ import annotations

import time

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .checkpoint import PipelineBundle, load_pipeline
from .diffusion import sample_skeleton
from .graphs import (
    ParseError,
    project,
    skeleton_from_json,
    skeleton_to_json,
    stroke_from_json,
    stroke_to_json,
    validate,
)

SAMPLING_DEFAULTS = {"seed": 0, "guidance": 3.0, "method": "ddpm"}


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    stroke: dict
    text: str = ""
    seed: int | None = None
    guidance: float | None = None
    steps: int | None = None


class ProjectRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    skeleton: dict
    view: str = "front"


def _bad_request(violations: list[dict]) -> JSONResponse:
    return JSONResponse(status_code=400,
                        content={"error": "validation",
                                 "violations": violations})


def _parse_violation(err: ParseError) -> list[dict]:
    detail = str(err.args[0]) if err.args else "unparseable document"
    if err.path:
        detail = f"{err.path}: {detail}"
    return [{"code": err.code or "PARSE", "detail": detail}]


def create_app(bundle: PipelineBundle | None = None) -> FastAPI:
    """Build the application around one loaded pipeline (or none)."""
    app = FastAPI(title="skelgen")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.bundle = bundle

    @app.exception_handler(RequestValidationError)
    async def on_schema_error(request, exc):
        violations = [{"code": "SCHEMA",
                       "detail": "{}: {}".format(
                           "/".join(str(p) for p in e["loc"]), e["msg"])}
                      for e in exc.errors()]
        return _bad_request(violations)

    def need_bundle() -> PipelineBundle:
        b = app.state.bundle
        if b is None:
            raise HTTPException(status_code=503,
                                detail="no model checkpoint loaded")
        return b

    @app.get("/api/health")
    def health():
        b = app.state.bundle
        if b is None:
            return {"status": "no_model", "model_version": None}
        return {"status": "ok", "model_version": b.model_version}

    @app.get("/api/config")
    def config():
        b = need_bundle()
        merged = {**SAMPLING_DEFAULTS, **b.defaults}
        merged["steps"] = b.schedule.n_steps
        merged["model_version"] = b.model_version
        return merged

    @app.post("/api/generate")
    def generate(req: GenerateRequest):
        b = need_bundle()
        t0 = time.perf_counter()
        try:
            stroke = stroke_from_json(req.stroke)
        except ParseError as err:
            return _bad_request(_parse_violation(err))
        report = validate(stroke)
        if not report.ok:
            return _bad_request(report.to_json())

        defaults = {**SAMPLING_DEFAULTS, **b.defaults}
        seed = int(req.seed if req.seed is not None else defaults["seed"])
        guidance = float(req.guidance if req.guidance is not None
                         else defaults["guidance"])
        method = defaults.get("method", "ddpm")
        ddim_steps = None
        # Fewer steps than the trained schedule selects the deterministic
        # subsampled rule; otherwise the configured sampler runs in full.
        if req.steps is not None and req.steps < b.schedule.n_steps:
            method, ddim_steps = "ddim", int(req.steps)

        c_text = b.encoder.embed(req.text).vector
        t1 = time.perf_counter()
        skeleton = sample_skeleton(b.denoiser, b.vae, b.schedule, stroke,
                                   c_text, np.random.default_rng(seed),
                                   guidance=guidance, method=method,
                                   ddim_steps=ddim_steps)
        t2 = time.perf_counter()
        return {
            "skeleton": skeleton_to_json(skeleton),
            "depth": [float(z) for z in skeleton.joints[:, 2]],
            "meta": {
                "seed": seed,
                "model_version": b.model_version,
                "timings": {"prepare_s": t1 - t0, "sample_s": t2 - t1,
                            "total_s": t2 - t0},
            },
        }

    @app.post("/api/project")
    def project_view(req: ProjectRequest):
        try:
            skeleton = skeleton_from_json(req.skeleton)
        except ParseError as err:
            return _bad_request(_parse_violation(err))
        report = validate(skeleton)
        if not report.ok:
            return _bad_request(report.to_json())
        try:
            stroke = project(skeleton, req.view)
        except ValueError as err:
            return _bad_request([{"code": "BAD_VIEW", "detail": str(err)}])
        return stroke_to_json(stroke)

    return app


def app_from_checkpoint(path) -> FastAPI:
    return create_app(load_pipeline(path))


def serve(checkpoint_path, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the service on uvicorn until interrupted."""
    import uvicorn

    uvicorn.run(app_from_checkpoint(checkpoint_path), host=host, port=port)
