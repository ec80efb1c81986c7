"""HTTP service the studio UI drives: sessions, projection, rendering.

Projection is the slow call and is explicit; renders reuse the session's
cached latents keyed by image digest, so the paint-render loop stays fast.
The checkpoint bundle is immutable after load and shared across requests.
"""

from __future__ import annotations

import base64
import threading
import uuid
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .bundle import Bundle
from .errors import CollageError, DivergenceError, UsageError, ValidationError
from .imutil import decode_b64, image_digest, png_bytes_to_image, png_bytes_to_mask
from .projection import ProjectionConfig, project_z, project_zeta
from .recipes import render_from_json, validate_recipe

DEFAULT_PORT = 8787


@dataclass
class Session:
    session_id: str
    projections: dict = field(default_factory=dict)   # digest -> (z, image, losses)
    lock: threading.Lock = field(default_factory=threading.Lock)


class ServiceState:
    def __init__(self, bundle: Optional[Bundle]):
        self.bundle = bundle
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()

    def new_session(self) -> Session:
        session = Session(session_id=uuid.uuid4().hex)
        with self.lock:
            self.sessions[session.session_id] = session
        return session

    def get_session(self, session_id: str) -> Optional[Session]:
        with self.lock:
            return self.sessions.get(session_id)


def _error(status: int, message: str, errors=None):
    detail = {"message": message}
    if errors:
        detail["errors"] = errors
    return JSONResponse(status_code=status, content={"detail": detail})


def create_app(bundle: Optional[Bundle] = None, bundle_path=None) -> FastAPI:
    if bundle is None and bundle_path is not None:
        bundle = Bundle.load(bundle_path)
    state = ServiceState(bundle)
    app = FastAPI(title="gancollage", version="0.1.0")
    app.state.collage = state

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "bundle_loaded": state.bundle is not None}

    @app.get("/model/info")
    def model_info():
        if state.bundle is None:
            return _error(503, "no checkpoint bundle loaded")
        return state.bundle.model_info()

    @app.post("/sessions")
    def create_session():
        if state.bundle is None:
            return _error(503, "no checkpoint bundle loaded")
        return {"session_id": state.new_session().session_id}

    @app.post("/sessions/{session_id}/project")
    async def project(session_id: str, request: Request):
        if state.bundle is None:
            return _error(503, "no checkpoint bundle loaded")
        bundle = state.bundle
        session = state.get_session(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id}")
        body = await request.json()
        if not isinstance(body, dict) or "png" not in body:
            return _error(400, "body must be JSON with a base64 'png' field",
                          errors=[{"pointer": "/png", "message": "required"}])
        try:
            png = decode_b64(body["png"])
            image = png_bytes_to_image(png)
        except ValidationError as exc:
            return _error(400, str(exc), errors=[{"pointer": "/png", "message": str(exc)}])
        res = bundle.gen.config.resolution
        if image.shape[1:] != (res, res):
            return _error(400, f"image must be {res}x{res}",
                          errors=[{"pointer": "/png", "message": f"got {image.shape[2]}x{image.shape[1]}"}])
        class_id = int(body.get("class", 0))
        if not 0 <= class_id < bundle.gen.config.num_classes:
            return _error(400, "class out of range",
                          errors=[{"pointer": "/class", "message": "out of range"}])
        if bundle.enc is None:
            return _error(503, "bundle has no trained encoder")
        space = body.get("space", "z")
        cfg = ProjectionConfig(steps=int(body.get("steps", 200)),
                               lr=float(body.get("lr", 0.05)))
        try:
            with session.lock:
                if space == "zeta":
                    if bundle.aux is None:
                        return _error(503, "bundle has no trained auxiliary nets")
                    result = project_zeta(image, bundle.gen, bundle.disc, bundle.enc,
                                          bundle.aux, cfg, class_id)
                else:
                    result = project_z(image, bundle.gen, bundle.disc, bundle.enc,
                                       cfg, class_id)
        except DivergenceError as exc:
            return _error(400, f"projection diverged: {exc}")
        digest = image_digest(png)
        with session.lock:
            session.projections[digest] = (result.z, image, class_id)
        return {
            "image_ref": digest,
            "z": [float(v) for v in result.z],
            "losses": [float(v) for v in result.losses],
            "best_losses": [float(v) for v in result.best_losses],
        }

    @app.post("/sessions/{session_id}/render")
    async def render(session_id: str, request: Request):
        if state.bundle is None:
            return _error(503, "no checkpoint bundle loaded")
        bundle = state.bundle
        session = state.get_session(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id}")
        obj = await request.json()
        errors = validate_recipe(obj, bundle.model_info())
        if errors:
            return _error(400, "invalid recipe", errors=errors)

        base = obj["base"]
        if "image_ref" in base:
            with session.lock:
                known = base["image_ref"] in session.projections
            if not known:
                return _error(409, f"image_ref {base['image_ref']} has not been "
                                   "projected in this session")

        def mask_loader(ref: str):
            return png_bytes_to_mask(decode_b64(ref))

        def z_lookup(ref: str):
            with session.lock:
                entry = session.projections.get(ref)
            return entry[0] if entry else None

        def image_lookup(ref: str):
            with session.lock:
                entry = session.projections.get(ref)
            return entry[1] if entry else None

        try:
            png, result = render_from_json(bundle, obj, mask_loader,
                                           z_lookup=z_lookup, image_lookup=image_lookup)
        except ValidationError as exc:
            errs = getattr(exc, "all_errors", None) or [
                {"pointer": exc.pointer or "", "message": str(exc)}]
            return _error(400, "invalid recipe", errors=errs)
        except UsageError as exc:
            return _error(409, str(exc))
        except CollageError as exc:
            return _error(400, str(exc))
        return {
            "png": base64.b64encode(png).decode("ascii"),
            "diagnostics": result.diagnostics,
            "timing": result.timing,
        }

    return app


def serve(bundle_path, port: int = DEFAULT_PORT, host: str = "127.0.0.1"):
    import uvicorn

    app = create_app(bundle_path=bundle_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")
