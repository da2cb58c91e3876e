"""Pose-driven garment animation: regress the posed coupled map from the
T-pose map plus the body's normal map, decode, and resolve collisions.

Training only constrains the regressed map inside the ground-truth mask; the
mask itself always comes from the shape side of the pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aabb import AABBTree, closest_signed_batch
from .body import BodyTemplate, BodyState, pose_body, render_normal_map
from .maps import CaseTag, UVMap, bidistance_transform, rasterize_triangles
from .mesh import MeshError, TriMesh, vertex_normals
from . import nn
from .uvcodec import (GarmentUV, build_coupled, case2_uv, decode_posed,
                      decode_template_free)

LOWER_SEGMENTS = ("torso", "upper_leg_l", "lower_leg_l", "upper_leg_r", "lower_leg_r")
COLLISION_MARGIN = 0.003  # meters


# --------------------------------------------------------------------------
# collision resolution


@dataclass
class CollisionResult:
    mesh: TriMesh
    iterations: int
    violations: int


def resolve_collisions(garment: TriMesh, body: TriMesh, tree: AABBTree,
                       margin: float = COLLISION_MARGIN, max_iters: int = 10,
                       smooth_lambda: float = 0.5) -> CollisionResult:
    """Push garment vertices out of the body: every vertex closer than
    `margin` moves to its closest surface point plus margin along the
    pseudo-normal, followed by one Laplacian pass over the moved vertices.
    Stops as soon as nothing violates; otherwise returns the best iterate
    with its violation count."""
    verts = garment.vertices.copy()
    adj = None
    best_violations = None
    best_verts = verts
    for it in range(max_iters):
        sd, cp, nrm = closest_signed_batch(verts, body, tree)
        viol = sd < margin - 1e-12
        n_viol = int(viol.sum())
        if n_viol == 0:
            return CollisionResult(garment.with_vertices(verts), it, 0)
        if best_violations is None or n_viol < best_violations:
            best_violations = n_viol
            best_verts = verts.copy()
        verts = verts.copy()
        verts[viol] = cp[viol] + margin * nrm[viol]
        if adj is None:
            adj = garment.vertex_adjacency()
        vidx = np.nonzero(viol)[0]
        for v in vidx:
            if len(adj[v]):
                verts[v] += smooth_lambda * (verts[adj[v]].mean(axis=0) - verts[v])
        # re-project the smoothed vertices so smoothing cannot reintroduce
        # the violations this iteration just fixed
        sd2, cp2, nrm2 = closest_signed_batch(verts[vidx], body, tree)
        again = sd2 < margin - 1e-12
        verts[vidx[again]] = cp2[again] + margin * nrm2[again]
    sd, _, _ = closest_signed_batch(verts, body, tree)
    n_viol = int((sd < margin - 1e-12).sum())
    if n_viol < best_violations:
        best_violations, best_verts = n_viol, verts
    return CollisionResult(garment.with_vertices(best_verts), max_iters, best_violations)


# --------------------------------------------------------------------------
# pose conditioning maps


def case2_normal_map(template: BodyTemplate, posed: TriMesh, resolution: int,
                     y0: float) -> UVMap:
    """Body normals rendered into the cylindrical chart: the lower segments'
    T-pose vertices fix the uv, the posed normals give the values."""
    seg_idx = [template.segment_index(n) for n in LOWER_SEGMENTS
               if n in template.skeleton.names]
    vmask = np.isin(template.segment_of_vertex, seg_idx)
    fsel = vmask[template.mesh.faces].all(axis=1)
    faces = template.mesh.faces[fsel]
    uv = case2_uv(template.mesh.vertices, y0)
    mask, owner, bary = rasterize_triangles(uv[faces], resolution, want_bary=True)
    vn = vertex_normals(posed)
    channels = np.zeros((3, resolution, resolution))
    ii, jj = np.nonzero(mask)
    corners = vn[faces[owner[ii, jj]]]
    n = np.einsum("qi,qij->qj", bary[ii, jj], corners)
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    vals = (n + 1.0) / 2.0
    for c in range(3):
        channels[c, ii, jj] = vals[:, c]
    return UVMap(resolution, channels, mask, CaseTag.CASE2)


def pose_normal_map(template: BodyTemplate, posed: TriMesh, resolution: int,
                    case_tag: CaseTag, y0: float) -> UVMap:
    if case_tag == CaseTag.CASE1:
        return render_normal_map(template, posed, resolution)
    return case2_normal_map(template, posed, resolution, y0)


# --------------------------------------------------------------------------
# model


@dataclass
class AnimNetModel:
    enc_spec: list
    enc_params: list
    dec_spec: list
    dec_params: list
    resolution: int
    case_tag: CaseTag
    d_max: float
    t_channels: int
    include_mask: bool = True  # feed the bi-distance mask as an input channel
    seed: int = 0
    train_log: list = field(default_factory=list)

    @property
    def in_channels(self) -> int:
        return self.t_channels + (1 if self.include_mask else 0) + 3


def animnet_specs(R: int, t_channels: int, latent: int = 96, base: int = 8,
                  include_mask: bool = True):
    """Mirrored conv encoder/decoder pair to spatial R/8."""
    c_in = t_channels + (1 if include_mask else 0) + 3
    s = R // 8
    enc = [nn.Conv2D(c_in, base, 3, 2), nn.ReLU(),
           nn.Conv2D(base, 2 * base, 3, 2), nn.ReLU(),
           nn.Conv2D(2 * base, 4 * base, 3, 2), nn.ReLU(),
           nn.Flatten(), nn.Dense(4 * base * s * s, latent)]
    dec = [nn.Dense(latent, 4 * base * s * s), nn.ReLU(),
           nn.Reshape((4 * base, s, s)),
           nn.UpsampleNearest(2), nn.Conv2D(4 * base, 2 * base, 3, 1), nn.ReLU(),
           nn.UpsampleNearest(2), nn.Conv2D(2 * base, base, 3, 1), nn.ReLU(),
           nn.UpsampleNearest(2), nn.Conv2D(base, 3, 3, 1)]
    return enc, dec


@dataclass
class PoseSample:
    """One training item: T-pose map, body normal map, posed map; coupled
    masks must agree bit for bit."""

    t_map: UVMap
    normal_map: UVMap
    a_map_gt: UVMap

    def __post_init__(self):
        if not np.array_equal(self.t_map.mask, self.a_map_gt.mask):
            raise MeshError("pose sample masks differ between coupled maps")
        if self.t_map.case_tag != self.a_map_gt.case_tag:
            raise MeshError("pose sample case tags differ")
        if self.normal_map.resolution != self.t_map.resolution:
            raise MeshError("normal map resolution differs")


def make_pose_sample(tpose: TriMesh, posed: TriMesh, guv: GarmentUV,
                     template: BodyTemplate, state: BodyState, R: int):
    """Build a PoseSample (and the posed body) from a dataset pair."""
    posed_body = pose_body(template, state)
    coupled = build_coupled(tpose, posed, guv, template, posed_body, R)
    y0 = guv.y0 if guv.y0 is not None else 0.0
    nmap = pose_normal_map(template, posed_body, R, guv.case_tag, y0)
    return PoseSample(coupled.t_map, nmap, coupled.a_map), posed_body


def _model_input(model, t_map: UVMap, normal_map: UVMap):
    """Stack [T-pose channels | bi-distance mask channel (optional) |
    normal map]."""
    ch = t_map.channels.copy()
    ch[:, ~t_map.mask] = 0.0
    parts = [ch]
    if model.include_mask:
        tmask = bidistance_transform(t_map.mask, model.d_max).values / model.d_max
        parts.append(tmask[None])
    parts.append(normal_map.channels)
    return np.concatenate(parts, axis=0)


def _forward_animnet(model: AnimNetModel, x):
    z, c_enc = nn.forward(model.enc_spec, model.enc_params, x)
    y, c_dec = nn.forward(model.dec_spec, model.dec_params, z)
    return y, (c_enc, c_dec)


def train_animnet(samples: list, config: nn.TrainConfig, latent: int = 96,
                  base: int = 8, include_mask: bool = True) -> AnimNetModel:
    """Fit the posed-map regressor by mini-batch SGD on the masked L1 loss.
    Values outside the ground-truth mask are unconstrained."""
    if len(samples) < 20:
        raise ValueError("need at least 20 pose samples")
    tags = {s.t_map.case_tag for s in samples}
    if len(tags) != 1:
        raise ValueError("mixed case tags in one training set")
    R = samples[0].t_map.resolution
    t_channels = samples[0].t_map.n_channels
    d_max = R / 4
    enc_spec, dec_spec = animnet_specs(R, t_channels, latent, base, include_mask)
    model = AnimNetModel(enc_spec, nn.init_params(enc_spec, config.seed),
                         dec_spec, nn.init_params(dec_spec, config.seed + 1),
                         R, tags.pop(), d_max, t_channels,
                         include_mask=include_mask, seed=config.seed)

    xs = [_model_input(model, s.t_map, s.normal_map) for s in samples]
    targets = [s.a_map_gt.channels for s in samples]
    masks = [s.a_map_gt.mask.astype(np.float64) for s in samples]

    rng = np.random.default_rng(config.seed)
    state_e = nn.zeros_like_params(model.enc_params)
    state_d = nn.zeros_like_params(model.dec_params)
    history = []
    for epoch in range(config.epochs):
        lr = nn.lr_schedule(config.lr, config.lr_final_frac, epoch, config.epochs)
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            ge = nn.zeros_like_params(model.enc_params)
            gd = nn.zeros_like_params(model.dec_params)
            for i in batch:
                y, (c_enc, c_dec) = _forward_animnet(model, xs[i])
                loss, gy = nn.l1_masked_loss(y, targets[i], masks[i])
                total += loss
                g_dec, gz = nn.backward(model.dec_spec, model.dec_params, c_dec, gy)
                g_enc, _ = nn.backward(model.enc_spec, model.enc_params, c_enc, gz)
                nn.add_scaled(gd, g_dec, 1.0 / len(batch))
                nn.add_scaled(ge, g_enc, 1.0 / len(batch))
            model.enc_params = nn.sgd_step(model.enc_params, ge, lr, config.momentum, state_e)
            model.dec_params = nn.sgd_step(model.dec_params, gd, lr, config.momentum, state_d)
        history.append(total / len(samples))
        nn.check_divergence(history)
    model.train_log = history
    return model


def predict_posed_map(model: AnimNetModel, t_map: UVMap, normal_map: UVMap) -> UVMap:
    """Regress the posed coupled map; its mask is the source mask."""
    if t_map.resolution != model.resolution or t_map.case_tag != model.case_tag:
        raise MeshError("map does not match the model")
    x = _model_input(model, t_map, normal_map)
    y, _ = _forward_animnet(model, x)
    y = y.copy()
    y[:, ~t_map.mask] = 0.0
    return UVMap(model.resolution, y, t_map.mask.copy(), model.case_tag)


@dataclass
class AnimationFrame:
    mesh: TriMesh
    collision_iterations: int
    collision_violations: int


def animate(model: AnimNetModel, template: BodyTemplate, state: BodyState,
            t_map: UVMap, guv: GarmentUV | None = None, y0: float = 0.2,
            margin: float = COLLISION_MARGIN) -> AnimationFrame:
    """Full animation step: posed normal map, posed-map regression, decode
    (template-carried when the source garment's uv record is given,
    template-free grid otherwise), then collision resolution."""
    if not t_map.mask.any():
        raise MeshError("empty mask: nothing to animate")
    posed_body = pose_body(template, state)
    if guv is not None and guv.y0 is not None:
        y0 = guv.y0
    nmap = pose_normal_map(template, posed_body, model.resolution, model.case_tag, y0)
    a_map = predict_posed_map(model, t_map, nmap)
    if guv is not None:
        mesh = decode_posed(a_map, guv, posed_body)
    else:
        mesh, _ = decode_template_free(a_map, template, body_mesh=posed_body, y0=y0)
    tree = AABBTree(posed_body)
    result = resolve_collisions(mesh, posed_body, tree, margin)
    return AnimationFrame(result.mesh, result.iterations, result.violations)


# --------------------------------------------------------------------------
# persistence


def save_animnet(model: AnimNetModel, path) -> None:
    manifest = {
        "kind": "animnet",
        "enc_spec": nn.spec_to_json(model.enc_spec),
        "dec_spec": nn.spec_to_json(model.dec_spec),
        "resolution": model.resolution,
        "case_tag": int(model.case_tag),
        "d_max": model.d_max,
        "t_channels": model.t_channels,
        "include_mask": model.include_mask,
        "seed": model.seed,
        "train_log": [float(v) for v in model.train_log],
    }
    nn.save_checkpoint(path, manifest, {"enc": model.enc_params, "dec": model.dec_params})


def load_animnet(path) -> AnimNetModel:
    manifest, blobs = nn.load_checkpoint(path)
    if manifest.get("kind") != "animnet":
        raise ValueError(f"{path}: not an animnet checkpoint")
    enc_spec = nn.spec_from_json(manifest["enc_spec"])
    dec_spec = nn.spec_from_json(manifest["dec_spec"])
    enc_t = nn.init_params(enc_spec, 0)
    dec_t = nn.init_params(dec_spec, 0)
    return AnimNetModel(
        enc_spec, nn.params_from_blobs(blobs, "enc", enc_spec, enc_t),
        dec_spec, nn.params_from_blobs(blobs, "dec", dec_spec, dec_t),
        manifest["resolution"], CaseTag(manifest["case_tag"]), manifest["d_max"],
        manifest["t_channels"], include_mask=manifest.get("include_mask", True),
        seed=manifest["seed"], train_log=manifest["train_log"])
