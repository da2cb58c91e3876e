"""HTTP face of the shape space: decode, animate, interpolate and infer over
JSON, with deterministic content hashing for caching.

Models are loaded once and never mutated; every handler is a pure function
of its request, so concurrent requests behave as if serialized.
"""
from __future__ import annotations

import base64
import hashlib
import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import Response

from .body import BodyState, build_template, default_body_config, load_body_config
from .config import ProjectConfig
from .garments import pose_bank
from .maps import CaseTag
from . import animator, infer as infermod, shapespace
from .obj_io import load_obj
from .uvcodec import decode_template_free


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class ApiSession:
    config: ProjectConfig
    template: object
    paramnet: shapespace.ParamNetModel
    animnet: animator.AnimNetModel
    infernet: infermod.InferNetModel

    @staticmethod
    def load(model_dir, config: ProjectConfig) -> "ApiSession":
        d = Path(model_dir)
        for name in ("paramnet.uvck", "animnet.uvck", "infernet.uvck"):
            if not (d / name).exists():
                raise FileNotFoundError(f"missing model file {d / name}")
        template = build_template(load_body_config(config.body_config)
                                  if config.body_config else default_body_config())
        paramnet = shapespace.load_paramnet(d / "paramnet.uvck")
        animnet = animator.load_animnet(d / "animnet.uvck")
        infernet = infermod.load_infernet(d / "infernet.uvck")
        if paramnet.pca is None:
            raise ValueError("paramnet checkpoint has no PCA block; run fit-pca")
        if not (paramnet.resolution == animnet.resolution):
            raise ValueError("models disagree on resolution")
        if paramnet.case_tag != animnet.case_tag:
            raise ValueError("models disagree on case tag")
        if infernet.latent_n != paramnet.latent_n:
            raise ValueError("models disagree on latent dimension")
        return ApiSession(config, template, paramnet, animnet, infernet)

    @property
    def pca(self) -> shapespace.PCASubspace:
        return self.paramnet.pca


def _json_response(payload, status: int = 200) -> Response:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return Response(content=body, status_code=status, media_type="application/json",
                    headers={"X-Content-Hash": hashlib.sha256(body).hexdigest()})


def _error(status: int, message: str) -> Response:
    eid = hashlib.sha256(message.encode()).hexdigest()[:8]
    return _json_response({"error": message, "error_id": eid}, status)


def _mesh_payload(mesh, mask_texels: int | None = None) -> dict:
    payload = {"vertices": np.round(mesh.vertices, 7).tolist(),
               "faces": mesh.faces.tolist()}
    if mask_texels is not None:
        payload["mask_texels"] = mask_texels
    return payload


def _check_params(session: ApiSession, s) -> np.ndarray:
    pca = session.pca
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if s.shape != (pca.n_dims,):
        raise ServiceError(400, f"s must have {pca.n_dims} entries")
    if not np.isfinite(s).all():
        raise ServiceError(400, "non-finite shape parameters")
    limit = 3.0 * pca.sigma
    if (np.abs(s) > limit + 1e-12).any():
        j = int(np.argmax(np.abs(s) - limit))
        raise ServiceError(400, f"s[{j}] exceeds 3 sigma ({s[j]:+.4f} vs "
                                f"+-{limit[j]:.4f}); decoders are unreliable there")
    return s


def _decode_mesh(session: ApiSession, s: np.ndarray):
    z = shapespace.from_params(session.pca, s)
    m, _ = shapespace.decode(session.paramnet, z)
    if not m.mask.any():
        raise ServiceError(422, "decoded mask is empty")
    mesh, _ = decode_template_free(m, session.template)
    return mesh, m


def create_app(session: ApiSession) -> FastAPI:
    app = FastAPI(title="garmentspace", docs_url=None, redoc_url=None)
    J = session.template.skeleton.n_joints
    presets = pose_bank(session.template.skeleton)

    async def _body_json(request: Request) -> dict:
        try:
            return json.loads(await request.body())
        except json.JSONDecodeError:
            raise ServiceError(400, "malformed JSON body")

    @app.exception_handler(ServiceError)
    async def _handle_service_error(request, exc: ServiceError):
        return _error(exc.status, exc.message)

    @app.exception_handler(Exception)
    async def _handle_internal(request, exc: Exception):
        return _error(500, f"internal failure: {type(exc).__name__}")

    @app.get("/api/info")
    async def info():
        pca = session.pca
        return _json_response({
            "category": "case1" if session.paramnet.case_tag == CaseTag.CASE1 else "case2",
            "N": session.paramnet.latent_n,
            "n": pca.n_dims,
            "sigma": pca.sigma.tolist(),
            "pose_presets": [{"name": name, "theta": theta.tolist()}
                             for name, theta in presets],
            "joint_names": list(session.template.skeleton.names),
            "n_joints": J,
            "resolution": session.paramnet.resolution,
        })

    @app.post("/api/decode")
    async def decode(request: Request):
        body = await _body_json(request)
        if "s" not in body:
            raise ServiceError(400, "missing field 's'")
        s = _check_params(session, body["s"])
        mesh, m = _decode_mesh(session, s)
        return _json_response(_mesh_payload(mesh, m.mask_texels()))

    @app.post("/api/animate")
    async def animate(request: Request):
        body = await _body_json(request)
        for key in ("s", "theta", "beta"):
            if key not in body:
                raise ServiceError(400, f"missing field '{key}'")
        s = _check_params(session, body["s"])
        theta = np.asarray(body["theta"], dtype=np.float64)
        beta = np.asarray(body["beta"], dtype=np.float64)
        if theta.size != J * 3:
            raise ServiceError(400, f"theta needs {J * 3} values")
        if beta.size != J * 2:
            raise ServiceError(400, f"beta needs {J * 2} values")
        try:
            state = BodyState(beta.reshape(J, 2), theta.reshape(J, 3))
        except ValueError as e:
            raise ServiceError(400, str(e))
        z = shapespace.from_params(session.pca, s)
        m, _ = shapespace.decode(session.paramnet, z)
        if not m.mask.any():
            raise ServiceError(422, "decoded mask is empty")
        frame = animator.animate(session.animnet, session.template, state, m,
                                 y0=session.config.y0,
                                 margin=session.config.collision_margin)
        payload = _mesh_payload(frame.mesh, m.mask_texels())
        payload["collision_violations"] = frame.collision_violations
        return _json_response(payload)

    @app.post("/api/interpolate")
    async def interpolate(request: Request):
        body = await _body_json(request)
        for key in ("a", "b", "steps"):
            if key not in body:
                raise ServiceError(400, f"missing field '{key}'")
        steps = body["steps"]
        if not isinstance(steps, int) or not 2 <= steps <= 25:
            raise ServiceError(400, "steps must be an integer in [2, 25]")
        a = _check_params(session, body["a"])
        b = _check_params(session, body["b"])
        meshes = []
        for i in range(steps):
            t = i / (steps - 1)
            s = shapespace.interpolate(shapespace.ShapeParams(a),
                                       shapespace.ShapeParams(b), t)
            mesh, m = _decode_mesh(session, s.s)
            meshes.append(_mesh_payload(mesh, m.mask_texels()))
        return _json_response({"meshes": meshes})

    @app.post("/api/infer")
    async def infer(request: Request):
        body = await _body_json(request)
        for key in ("garment_obj", "human_obj"):
            if key not in body:
                raise ServiceError(400, f"missing field '{key}'")
        meshes = {}
        for key in ("garment_obj", "human_obj"):
            try:
                text = base64.b64decode(body[key])
            except Exception:
                raise ServiceError(400, f"{key} is not valid base64")
            with tempfile.NamedTemporaryFile(suffix=".obj", mode="wb", delete=False) as fh:
                fh.write(text)
                path = fh.name
            try:
                meshes[key] = load_obj(path)
            except Exception as e:
                raise ServiceError(400, f"{key}: {e}")
            finally:
                Path(path).unlink(missing_ok=True)
        result = infermod.infer_shape(session.infernet, meshes["garment_obj"],
                                      meshes["human_obj"], session.pca)
        return _json_response({"s": result.s.s.tolist(),
                               "residual": result.residual,
                               "residual_flag": bool(result.residual_flag)})

    return app
