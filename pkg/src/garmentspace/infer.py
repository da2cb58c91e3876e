"""Shape inference from posed meshes: two point-set encoder branches (shared
per-point MLP + coordinate-wise max pool) over the posed human and garment,
fused by dense layers into a latent matching the shape-space latent. The
recovered shape parameters can then be edited and re-animated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshError, TriMesh
from . import nn
from .shapespace import PCASubspace, ShapeParams, from_params, to_params

DEFAULT_POINTS = 1024
DEFAULT_WIDTHS = (3, 64, 128, 256)


class InferError(ValueError):
    pass


def sample_points(mesh: TriMesh, n: int, seed: int, root=(0.0, 0.0, 0.0),
                  scale: float = 1.0) -> np.ndarray:
    """Area-weighted surface samples, normalized by root/scale. The draw
    depends only on (face areas in face order, seed), so renumbering vertices
    while keeping the face list order resamples identical points."""
    if mesh.n_faces == 0:
        raise InferError("empty mesh")
    rng = np.random.default_rng(seed)
    tri = mesh.triangles()
    areas = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    total = areas.sum()
    if total <= 0:
        raise InferError("degenerate mesh")
    faces = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    a, b, c = tri[faces, 0], tri[faces, 1], tri[faces, 2]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return (pts - np.asarray(root, dtype=np.float64)) / scale


@dataclass
class InferNetModel:
    h_spec: list
    h_params: list
    g_spec: list
    g_params: list
    fuse_spec: list
    fuse_params: list
    latent_n: int
    n_points: int
    sample_seed: int
    scale: float = 1.0
    seed: int = 0
    latent_bank: np.ndarray | None = None  # (M, N) training targets
    residual_p99: float | None = None
    train_log: list = field(default_factory=list)


def infernet_specs(latent_n: int, widths=DEFAULT_WIDTHS, fuse_hidden: int = 256):
    branch = [nn.PointMLP(tuple(widths)), nn.MaxPoolPoints()]
    fuse = [nn.Dense(2 * widths[-1], fuse_hidden), nn.ReLU(),
            nn.Dense(fuse_hidden, latent_n)]
    return branch, fuse


def branch_feature(model: InferNetModel, spec, params, mesh: TriMesh, root) -> np.ndarray:
    pts = sample_points(mesh, model.n_points, model.sample_seed, root, model.scale)
    out, _ = nn.forward(spec, params, pts)
    return out


def train_infernet(pairs: list, config: nn.TrainConfig, latent_n: int,
                   n_points: int = DEFAULT_POINTS, widths=DEFAULT_WIDTHS,
                   fuse_hidden: int = 256, sample_seed: int = 1234,
                   scale: float = 1.0) -> InferNetModel:
    """Fit the latent regressor on (posed human, posed garment, target
    latent, root position) tuples; the loss is the per-element mean |z - z_t|.
    """
    if len(pairs) < 20:
        raise InferError("need at least 20 training pairs")
    for _, _, z_t, _ in pairs:
        if np.asarray(z_t).shape != (latent_n,):
            raise InferError(f"target latent dimension != {latent_n}")
    branch, fuse = infernet_specs(latent_n, widths, fuse_hidden)
    model = InferNetModel(
        branch, nn.init_params(branch, config.seed),
        [l for l in branch], nn.init_params(branch, config.seed + 1),
        fuse, nn.init_params(fuse, config.seed + 2),
        latent_n, n_points, sample_seed, scale, seed=config.seed)

    pts = [(sample_points(h, n_points, sample_seed, root, scale),
            sample_points(g, n_points, sample_seed, root, scale),
            np.asarray(z_t, dtype=np.float64))
           for h, g, z_t, root in pairs]

    rng = np.random.default_rng(config.seed)
    st_h = nn.zeros_like_params(model.h_params)
    st_g = nn.zeros_like_params(model.g_params)
    st_f = nn.zeros_like_params(model.fuse_params)
    history = []
    best = (np.inf, None)
    for epoch in range(config.epochs):
        lr = nn.lr_schedule(config.lr, config.lr_final_frac, epoch, config.epochs)
        order = rng.permutation(len(pts))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            gh = nn.zeros_like_params(model.h_params)
            gg = nn.zeros_like_params(model.g_params)
            gf = nn.zeros_like_params(model.fuse_params)
            for i in batch:
                ph, pg, zt = pts[i]
                z, (ch, cg, cf, nh) = _forward_cached(model, ph, pg)
                loss, gz = nn.l1_masked_loss(z, zt)
                total += loss
                g_fuse, gcat = nn.backward(model.fuse_spec, model.fuse_params, cf, gz)
                g_h, _ = nn.backward(model.h_spec, model.h_params, ch, gcat[:nh])
                g_g, _ = nn.backward(model.g_spec, model.g_params, cg, gcat[nh:])
                nn.add_scaled(gf, g_fuse, 1.0 / len(batch))
                nn.add_scaled(gh, g_h, 1.0 / len(batch))
                nn.add_scaled(gg, g_g, 1.0 / len(batch))
            model.h_params = nn.sgd_step(model.h_params, gh, lr, config.momentum, st_h)
            model.g_params = nn.sgd_step(model.g_params, gg, lr, config.momentum, st_g)
            model.fuse_params = nn.sgd_step(model.fuse_params, gf, lr, config.momentum, st_f)
        history.append(total / len(pts))
        if history[-1] < best[0]:
            snap = tuple([{k: v.copy() for k, v in p.items()} for p in block]
                         for block in (model.h_params, model.g_params, model.fuse_params))
            best = (history[-1], snap)
        nn.check_divergence(history)
    # checkpoint selection: never return params worse than the best epoch seen
    if best[1] is not None and best[0] < history[-1]:
        model.h_params, model.g_params, model.fuse_params = best[1]
    model.train_log = history

    # retrieval bank and residual yardstick over the training pairs
    model.latent_bank = np.unique(np.stack([zt for _, _, zt in pts]), axis=0)
    residuals = []
    for ph, pg, zt in pts:
        z, _ = _forward_cached(model, ph, pg)
        residuals.append(np.abs(z - zt).mean())
    model.residual_p99 = float(np.percentile(residuals, 99))
    return model


def _forward_cached(model, ph, pg):
    zh, ch = nn.forward(model.h_spec, model.h_params, ph)
    zg, cg = nn.forward(model.g_spec, model.g_params, pg)
    z, cf = nn.forward(model.fuse_spec, model.fuse_params, np.concatenate([zh, zg]))
    return z, (ch, cg, cf, len(zh))


@dataclass
class InferenceResult:
    z: np.ndarray
    s: ShapeParams
    human_feature: np.ndarray
    garment_feature: np.ndarray
    residual: float          # per-element L1 to the nearest bank latent
    residual_flag: bool      # above the training distribution's p99


def infer_shape(model: InferNetModel, garment: TriMesh, human: TriMesh,
                pca: PCASubspace, root=(0.0, 0.0, 0.0)) -> InferenceResult:
    """Estimate shape parameters of a posed garment/human pair."""
    if garment.n_vertices == 0 or human.n_vertices == 0:
        raise InferError("empty mesh")
    ph = sample_points(human, model.n_points, model.sample_seed, root, model.scale)
    pg = sample_points(garment, model.n_points, model.sample_seed, root, model.scale)
    zh, _ = nn.forward(model.h_spec, model.h_params, ph)
    zg, _ = nn.forward(model.g_spec, model.g_params, pg)
    z, _ = nn.forward(model.fuse_spec, model.fuse_params, np.concatenate([zh, zg]))
    residual = float(np.abs(model.latent_bank - z).mean(axis=1).min()) \
        if model.latent_bank is not None else 0.0
    flag = model.residual_p99 is not None and residual > model.residual_p99
    return InferenceResult(z, to_params(pca, z), zh, zg, residual, flag)


def edit_params(result: InferenceResult, edits: list) -> ShapeParams:
    """Replace listed dimensions of the inferred parameters."""
    s = result.s.s.copy()
    for dim, value in edits:
        if not 0 <= dim < len(s):
            raise InferError(f"edit dimension {dim} out of range 0..{len(s) - 1}")
        s[dim] = value
    return ShapeParams(s)


def edit_and_animate(result: InferenceResult, edits: list, animnet, pose_sequence,
                     paramnet, pca: PCASubspace, template) -> list:
    """Apply edits, decode the edited shape, and animate it across a pose
    sequence. Returns the list of AnimationFrame results."""
    from .animator import animate
    from .shapespace import decode

    if not pose_sequence:
        raise InferError("empty pose sequence")
    s_edit = edit_params(result, edits)
    z_edit = from_params(pca, s_edit)
    t_map, _ = decode(paramnet, z_edit)
    frames = []
    for state in pose_sequence:
        frames.append(animate(animnet, template, state, t_map))
    return frames


# --------------------------------------------------------------------------
# persistence


def save_infernet(model: InferNetModel, path) -> None:
    manifest = {
        "kind": "infernet",
        "h_spec": nn.spec_to_json(model.h_spec),
        "g_spec": nn.spec_to_json(model.g_spec),
        "fuse_spec": nn.spec_to_json(model.fuse_spec),
        "latent_n": model.latent_n,
        "n_points": model.n_points,
        "sample_seed": model.sample_seed,
        "scale": model.scale,
        "seed": model.seed,
        "residual_p99": model.residual_p99,
        "train_log": [float(v) for v in model.train_log],
    }
    blocks = {"h": model.h_params, "g": model.g_params, "fuse": model.fuse_params}
    if model.latent_bank is not None:
        blocks["bank"] = {"latents": model.latent_bank}
    nn.save_checkpoint(path, manifest, blocks)


def load_infernet(path) -> InferNetModel:
    manifest, blobs = nn.load_checkpoint(path)
    if manifest.get("kind") != "infernet":
        raise ValueError(f"{path}: not an infernet checkpoint")
    h_spec = nn.spec_from_json(manifest["h_spec"])
    g_spec = nn.spec_from_json(manifest["g_spec"])
    fuse_spec = nn.spec_from_json(manifest["fuse_spec"])
    model = InferNetModel(
        h_spec, nn.params_from_blobs(blobs, "h", h_spec, nn.init_params(h_spec, 0)),
        g_spec, nn.params_from_blobs(blobs, "g", g_spec, nn.init_params(g_spec, 0)),
        fuse_spec, nn.params_from_blobs(blobs, "fuse", fuse_spec, nn.init_params(fuse_spec, 0)),
        manifest["latent_n"], manifest["n_points"], manifest["sample_seed"],
        manifest["scale"], manifest["seed"],
        residual_p99=manifest.get("residual_p99"), train_log=manifest["train_log"])
    if "bank.latents" in blobs:
        model.latent_bank = blobs["bank.latents"]
    return model
