"""HTTP/JSON service: the contract the web UI consumes.

    POST /sessions                multipart "image" or JSON {"image_b64"} -> 201 {"session_id"}
    POST /sessions/{id}/plan      {"instruction"} -> plan JSON + plan_ref
    POST /sessions/{id}/rounds    {"plan_ref", "overrides"?, "w"?, "blur_radius"?,
                                   "seed"?, "steps"?} -> round JSON
    GET  /sessions                -> [{id, created_at, rounds}]
    GET  /sessions/{id}           -> session with round summaries
    GET  /artifacts/{ref}         -> PNG bytes
    POST /bench/run               {"manifest_path", "report_dir"?} -> report JSON

Handlers are stateless apart from the on-disk session store: two servers
over the same store answer GETs identically. Every non-2xx response body
is exactly one ApiError {code, message, stage?}. Edits run synchronously
(sub-second at toy scale); rounds that fail mid-flight are recorded in
the journal with status "failed" and returned with their diagnostics.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from . import imageio
from .bench import BenchmarkManifest, run_benchmark, write_report_csv, write_report_json
from .conductor import Conductor, ModelBundle, Overrides, SessionStore, build_toy_bundle
from .diffusion import SamplerConfig
from .errors import MaskEditError, NotFoundError, ValidationError
from .instructor import InstructorClients
from .metrics import TokenOverlapBackend

_STATUS = {"validation": 422, "not_found": 404, "stage_failure": 500,
           "model_error": 500}


def create_app(store_dir, bundle: ModelBundle | None = None,
               clients: InstructorClients | None = None,
               cors_origins: tuple[str, ...] = ()) -> FastAPI:
    app = FastAPI(title="maskedit service")
    store = SessionStore(store_dir)
    conductor = Conductor(store, bundle or build_toy_bundle(seed=0),
                          clients=clients)
    app.state.store = store
    app.state.conductor = conductor

    if cors_origins:
        app.add_middleware(
            CORSMiddleware, allow_origins=list(cors_origins),
            allow_methods=["*"], allow_headers=["*"],
        )

    @app.exception_handler(MaskEditError)
    async def maskedit_error(request: Request, exc: MaskEditError):
        return JSONResponse(status_code=_STATUS.get(exc.code, 500),
                            content=exc.to_api_error())

    @app.exception_handler(RequestValidationError)
    async def request_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422, content={
            "code": "validation", "message": str(exc.errors()[:1]),
        })

    async def _image_from_request(request: Request,
                                  image: UploadFile | None) -> np.ndarray:
        if image is not None:
            return imageio.image_from_png_bytes(await image.read())
        if request.headers.get("content-type", "").startswith("application/json"):
            body = await request.json()
            if "image_b64" in body:
                return imageio.image_from_png_bytes(
                    imageio.b64_decode(body["image_b64"]))
        raise ValidationError("provide a multipart 'image' file or image_b64")

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request, image: UploadFile | None = None):
        img = await _image_from_request(request, image)
        session = conductor.create_session(img)
        return {"session_id": session.id, "source_ref": session.source_ref}

    @app.get("/sessions")
    def list_sessions():
        return conductor.list_sessions()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return conductor.get_session(session_id).to_dict()

    @app.post("/sessions/{session_id}/plan")
    async def make_plan(session_id: str, request: Request):
        body = await request.json()
        instruction = body.get("instruction", "")
        plan_ref, payload = conductor.plan(session_id, instruction)
        return {"plan_ref": plan_ref, "plan": payload}

    @app.post("/sessions/{session_id}/rounds")
    async def run_round(session_id: str, request: Request):
        from .instructor import plan_from_dict

        body = await request.json()
        plan_ref = body.get("plan_ref")
        if plan_ref:
            plan = store.load_plan(plan_ref)
        elif body.get("plan"):
            # manual round: the UI synthesizes a plan when detection found
            # nothing and the user drew the mask themselves
            plan = plan_from_dict(body["plan"])
            plan_ref = "<manual>"
        else:
            raise ValidationError("plan_ref (or an inline plan) is required")
        ov_raw = body.get("overrides") or {}
        mask = None
        if ov_raw.get("mask_b64"):
            mask = imageio.mask_from_png_bytes(
                imageio.b64_decode(ov_raw["mask_b64"]))
        overrides = Overrides(
            mask=mask, caption=ov_raw.get("caption"),
            preservation_scale=_maybe_float(body.get("w", ov_raw.get("w"))),
            blur_radius=_maybe_int(body.get("blur_radius", ov_raw.get("blur_radius"))),
        )
        scfg = SamplerConfig(
            steps=int(body.get("steps", 10)),
            guidance_scale=float(body.get("guidance_scale", 7.5)),
            seed=int(body.get("seed", 0)),
        )
        rnd = conductor.execute_plan(session_id, plan,
                                     plan_ref=plan_ref or "<manual>",
                                     overrides=overrides, scfg=scfg)
        return rnd.to_dict()

    @app.get("/artifacts/{ref:path}")
    def get_artifact(ref: str):
        path = store.resolve(ref)
        if not path.exists() or path.suffix != ".png":
            raise NotFoundError(f"unknown artifact {ref!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/bench/run")
    async def bench_run(request: Request):
        body = await request.json()
        manifest_path = body.get("manifest_path")
        if not manifest_path:
            raise ValidationError("manifest_path is required")
        manifest = BenchmarkManifest.load(manifest_path)
        report = run_benchmark(
            manifest, conductor.bundle,
            scfg=SamplerConfig(steps=int(body.get("steps", 10)),
                               seed=int(body.get("seed", 0))),
            backend=TokenOverlapBackend(),
        )
        report_dir = body.get("report_dir")
        if report_dir:
            out = Path(report_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_report_csv(out / "report.csv", report)
            write_report_json(out / "report.json", report)
        return report

    return app


def _maybe_float(value) -> float | None:
    return None if value is None else float(value)


def _maybe_int(value) -> int | None:
    return None if value is None else int(value)


def main() -> None:
    """uvicorn entry point honoring MASKEDIT_STORE / MASKEDIT_PORT."""
    import uvicorn

    store_dir = os.environ.get("MASKEDIT_STORE", "./maskedit-store")
    port = int(os.environ.get("MASKEDIT_PORT", "8000"))
    origins = tuple(filter(None, os.environ.get("MASKEDIT_CORS", "").split(",")))
    app = create_app(store_dir, cors_origins=origins or ("http://localhost:5173",))
    uvicorn.run(app, host="127.0.0.1", port=port)


if __name__ == "__main__":
    main()
