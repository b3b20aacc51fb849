"""HTTP reenactment service: /meta describes the avatar, /render drives it.

One Reenactor is shared by all requests: the avatar is immutable, the
lifting cloud and head attributes are computed once on first use, and
each request gets its own framebuffer, so identical requests always
produce identical bytes regardless of ordering.
"""

from __future__ import annotations

import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import head_model as hm
from .camera import orbit_camera
from .decoder import Decoder
from .errors import NumericError
from .fitting import Reenactor

SLIDER_RANGE = [-3.0, 3.0]
RESOLUTIONS = [128, 256, 512]
MIN_RESOLUTION = 16
NEAR_PLANE = 0.05


class RenderRequest(BaseModel):
    yaw: float = 0.0
    pitch: float = 0.0
    distance: float = 2.6
    fov: float = 35.0
    psi: list[float] | None = None
    theta: list[float] | None = None
    resolution: int = 256
    decoder: str | None = None


def render_orbit_frame(reenactor: Reenactor, yaw: float, pitch: float,
                       distance: float, fov: float, resolution: int,
                       psi=None, theta=None, decoder_override: str | None = None):
    """Single render path shared by the CLI and the service so both produce
    byte-identical images for the same arguments."""
    model = reenactor.model
    nb, nt, np_ = model.dims
    params = hm.ExpressionParams(
        beta=np.zeros(nb),
        theta=np.zeros(nt) if theta is None else np.asarray(theta, dtype=np.float64),
        psi=np.zeros(np_) if psi is None else np.asarray(psi, dtype=np.float64),
    )
    camera = orbit_camera(yaw, pitch, distance, fov, resolution)
    decoder = None
    if decoder_override is not None and decoder_override != reenactor.avatar.decoder.mode:
        if decoder_override != "affine":
            raise ValueError(
                f"decoder override '{decoder_override}' needs weights the avatar "
                f"does not carry (avatar mode: {reenactor.avatar.decoder.mode})")
        # The affine stage is always present; dropping the conv residual is
        # the one downgrade that needs no extra weights.
        decoder = Decoder(affine=reenactor.avatar.decoder.affine,
                          bias=reenactor.avatar.decoder.bias, mode="affine")
    return reenactor.render_frame(params, camera, decoder=decoder)


def create_app(avatar=None, model=None, max_resolution: int = 512,
               static_dir=None) -> FastAPI:
    app = FastAPI(title="gaga render service")
    state = {"reenactor": None, "avatar_id": None}
    if avatar is not None:
        state["reenactor"] = Reenactor(avatar, model)
        state["avatar_id"] = avatar.feature_bank.content_hash()

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        detail = [{"field": ".".join(str(p) for p in e["loc"] if p != "body"),
                   "message": e["msg"]} for e in exc.errors()]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.get("/meta")
    def meta():
        if state["reenactor"] is None:
            return JSONResponse(status_code=503,
                                content={"detail": "no avatar loaded"})
        m = state["reenactor"].model
        nb, nt, np_ = m.dims
        return {
            "api": 1,
            "avatar_id": state["avatar_id"],
            "vertex_count": m.num_vertices,
            "n_beta": nb,
            "n_theta": nt,
            "n_psi": np_,
            "slider_range": SLIDER_RANGE,
            "resolutions": [r for r in RESOLUTIONS if r <= max_resolution],
            "max_resolution": max_resolution,
            "decoder_mode": state["reenactor"].avatar.decoder.mode,
            "grid_res": state["reenactor"].avatar.lifting_grids.res,
        }

    @app.post("/render")
    def render_endpoint(req: RenderRequest):
        if state["reenactor"] is None:
            return JSONResponse(status_code=503,
                                content={"detail": "no avatar loaded"})
        if not MIN_RESOLUTION <= req.resolution <= max_resolution:
            return JSONResponse(status_code=400, content={"detail": [
                {"field": "resolution",
                 "message": f"must lie in [{MIN_RESOLUTION}, {max_resolution}]"}]})
        if req.distance <= NEAR_PLANE:
            return JSONResponse(status_code=400, content={"detail": [
                {"field": "distance",
                 "message": f"must exceed the near plane ({NEAR_PLANE})"}]})
        if not 1.0 <= req.fov <= 170.0:
            return JSONResponse(status_code=400, content={"detail": [
                {"field": "fov", "message": "must lie in [1, 170] degrees"}]})
        m = state["reenactor"].model
        nb, nt, np_ = m.dims
        if req.psi is not None and len(req.psi) != np_:
            return JSONResponse(status_code=422, content={"detail": [
                {"field": "psi", "message": f"expected {np_} values, got {len(req.psi)}"}]})
        if req.theta is not None and len(req.theta) != nt:
            return JSONResponse(status_code=422, content={"detail": [
                {"field": "theta",
                 "message": f"expected {nt} values, got {len(req.theta)}"}]})
        try:
            t0 = time.perf_counter()
            img = render_orbit_frame(state["reenactor"], req.yaw, req.pitch,
                                     req.distance, req.fov, req.resolution,
                                     req.psi, req.theta, req.decoder)
            ms = 1000.0 * (time.perf_counter() - t0)
        except ValueError as exc:
            return JSONResponse(status_code=422,
                                content={"detail": [{"field": "decoder",
                                                     "message": str(exc)}]})
        except (NumericError, FloatingPointError) as exc:
            return JSONResponse(status_code=500,
                                content={"detail": f"numeric failure: {exc}"})
        if not np.all(np.isfinite(img)):
            return JSONResponse(status_code=500,
                                content={"detail": "numeric failure: non-finite image"})
        from .io_formats import encode_png
        return Response(content=encode_png(img), media_type="image/png",
                        headers={"X-Render-Ms": f"{ms:.2f}"})

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")

    return app


def serve(avatar, model, host: str = "127.0.0.1", port: int = 8000,
          max_resolution: int = 512, static_dir=None) -> None:
    import uvicorn
    app = create_app(avatar, model, max_resolution, static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
