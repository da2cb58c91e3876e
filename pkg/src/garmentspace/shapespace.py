"""Garment shape space: a conv autoencoder over T-pose UV maps whose decoder
emits both the position map and a continuous bi-distance mask map, plus a PCA
parameterization of the latent space for editing and interpolation.

The encoder input is the map's channels (zeroed outside the mask) with the
bi-distance transform of the mask appended as an extra channel scaled to
[-1, 1]; feeding the mask makes the encoding topology-aware.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .maps import CaseTag, UVMap, bidistance_transform, recover_mask
from . import nn


class ShapeSpaceError(ValueError):
    pass


@dataclass
class PCASubspace:
    """Orthonormal basis rows over mean-centered latents; sigma holds the
    per-dimension standard deviation of the training projections."""

    mean: np.ndarray   # (N,)
    basis: np.ndarray  # (n, N) orthonormal rows
    sigma: np.ndarray  # (n,) descending

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64).reshape(-1, len(self.mean))
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if len(self.sigma) != len(self.basis):
            raise ShapeSpaceError("sigma/basis size mismatch")
        gram = self.basis @ self.basis.T
        if len(self.basis) and np.abs(gram - np.eye(len(self.basis))).max() > 1e-6:
            raise ShapeSpaceError("basis rows are not orthonormal")
        if (np.diff(self.sigma) > 1e-12).any():
            raise ShapeSpaceError("sigma must be descending")

    @property
    def n_dims(self) -> int:
        return len(self.sigma)


@dataclass
class ShapeParams:
    s: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.s).all():
            raise ShapeSpaceError("non-finite shape parameters")


@dataclass
class ParamNetModel:
    enc_spec: list
    enc_params: list
    dec_map_spec: list
    dec_map_params: list
    dec_mask_spec: list
    dec_mask_params: list
    latent_n: int
    case_tag: CaseTag
    resolution: int
    d_max: float
    map_channels: int
    include_mask: bool = True  # feed the bi-distance mask as an input channel
    seed: int = 0
    pca: PCASubspace | None = None
    train_log: list = field(default_factory=list)


def _conv_stages(R: int):
    """Stride-2 stages down to a 4x4 (or R/8 for small R) core."""
    stages = 0
    s = R
    while s > 4 and stages < 4:
        s //= 2
        stages += 1
    return stages, s


def paramnet_specs(R: int, map_channels: int, latent_n: int, base: int = 8,
                   include_mask: bool = True):
    c_in = map_channels + (1 if include_mask else 0)
    stages, core = _conv_stages(R)
    chans = [min(base * 2 ** i, 8 * base) for i in range(stages)]
    enc = []
    prev = c_in
    for c in chans:
        enc += [nn.Conv2D(prev, c, 3, 2), nn.ReLU()]
        prev = c
    enc += [nn.Flatten(), nn.Dense(chans[-1] * core * core, latent_n)]

    def decoder(out_channels):
        dec = [nn.Dense(latent_n, chans[-1] * core * core), nn.ReLU(),
               nn.Reshape((chans[-1], core, core))]
        rev = list(reversed(chans[:-1])) + [max(base, out_channels)]
        prev_c = chans[-1]
        for i, c in enumerate(rev):
            dec += [nn.UpsampleNearest(2), nn.Conv2D(prev_c, c, 3, 1)]
            if i < len(rev) - 1:
                dec += [nn.ReLU()]
            prev_c = c
        dec += [nn.Conv2D(prev_c, out_channels, 3, 1)]
        return dec

    return enc, decoder(map_channels), decoder(1)


def model_input(m: UVMap, d_max: float, include_mask: bool = True) -> np.ndarray:
    """Mask-zeroed channels, with the scaled bi-distance mask appended as an
    extra channel when include_mask is on."""
    ch = m.channels.copy()
    ch[:, ~m.mask] = 0.0
    if not include_mask:
        return ch
    t = bidistance_transform(m.mask, d_max).values / d_max
    return np.concatenate([ch, t[None]], axis=0)


def encode(model: ParamNetModel, m: UVMap) -> np.ndarray:
    """Deterministic latent for a map matching the model's grid and case."""
    if m.resolution != model.resolution:
        raise ShapeSpaceError(f"resolution {m.resolution} != model {model.resolution}")
    if m.case_tag != model.case_tag:
        raise ShapeSpaceError("case tag mismatch")
    z, _ = nn.forward(model.enc_spec, model.enc_params,
                      model_input(m, model.d_max, model.include_mask))
    return z


def decode(model: ParamNetModel, z: np.ndarray):
    """Latent -> (UVMap carrying the recovered mask, continuous mask map in
    bi-distance units scaled by 1/d_max)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_n,):
        raise ShapeSpaceError(f"latent must be ({model.latent_n},), got {z.shape}")
    chans, _ = nn.forward(model.dec_map_spec, model.dec_map_params, z)
    tmask, _ = nn.forward(model.dec_mask_spec, model.dec_mask_params, z)
    tmask = tmask[0]
    from .maps import BiDistanceMap
    mask = tmask * model.d_max
    mask = recover_mask(BiDistanceMap(model.resolution,
                                      np.clip(mask, -model.d_max, model.d_max),
                                      model.d_max))
    return UVMap(model.resolution, chans, mask, model.case_tag), tmask


def train_paramnet(maps: list, config: nn.TrainConfig, latent_n: int = 32,
                   base: int = 8, include_mask: bool = True) -> ParamNetModel:
    """Fit the autoencoder on T-pose maps of one case by mini-batch SGD.

    Loss per sample: masked L1 on the position map (ground-truth mask inside
    the norm) plus lambda_mask times plain L1 on the scaled bi-distance mask
    map. The log records both terms per epoch.
    """
    if len(maps) < 10:
        raise ShapeSpaceError("need at least 10 samples")
    tags = {m.case_tag for m in maps}
    if len(tags) != 1:
        raise ShapeSpaceError("mixed case tags in one training set")
    R = maps[0].resolution
    C = maps[0].n_channels
    d_max = R / 4
    enc_spec, dmap_spec, dmask_spec = paramnet_specs(R, C, latent_n, base, include_mask)
    model = ParamNetModel(
        enc_spec, nn.init_params(enc_spec, config.seed),
        dmap_spec, nn.init_params(dmap_spec, config.seed + 1),
        dmask_spec, nn.init_params(dmask_spec, config.seed + 2),
        latent_n, tags.pop(), R, d_max, C, include_mask=include_mask,
        seed=config.seed)

    xs = [model_input(m, d_max, include_mask) for m in maps]
    targets = [np.where(m.mask, m.channels, 0.0) for m in maps]
    masks = [m.mask.astype(np.float64) for m in maps]
    tmasks = [bidistance_transform(m.mask, d_max).values / d_max for m in maps]

    rng = np.random.default_rng(config.seed)
    st_e = nn.zeros_like_params(model.enc_params)
    st_m = nn.zeros_like_params(model.dec_map_params)
    st_k = nn.zeros_like_params(model.dec_mask_params)
    history = []
    for epoch in range(config.epochs):
        lr = nn.lr_schedule(config.lr, config.lr_final_frac, epoch, config.epochs)
        order = rng.permutation(len(maps))
        ep_map = ep_mask = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            ge = nn.zeros_like_params(model.enc_params)
            gm = nn.zeros_like_params(model.dec_map_params)
            gk = nn.zeros_like_params(model.dec_mask_params)
            for i in batch:
                z, c_enc = nn.forward(model.enc_spec, model.enc_params, xs[i])
                ymap, c_map = nn.forward(model.dec_map_spec, model.dec_map_params, z)
                ymask, c_mask = nn.forward(model.dec_mask_spec, model.dec_mask_params, z)
                l_map, g_map = nn.l1_masked_loss(ymap, targets[i], masks[i])
                l_mask, g_mask = nn.l1_masked_loss(ymask[0], tmasks[i])
                ep_map += l_map
                ep_mask += l_mask
                gdm, gz1 = nn.backward(model.dec_map_spec, model.dec_map_params, c_map, g_map)
                gdk, gz2 = nn.backward(model.dec_mask_spec, model.dec_mask_params, c_mask,
                                       config.lambda_mask * g_mask[None])
                genc, _ = nn.backward(model.enc_spec, model.enc_params, c_enc, gz1 + gz2)
                nn.add_scaled(gm, gdm, 1.0 / len(batch))
                nn.add_scaled(gk, gdk, 1.0 / len(batch))
                nn.add_scaled(ge, genc, 1.0 / len(batch))
            model.enc_params = nn.sgd_step(model.enc_params, ge, lr, config.momentum, st_e)
            model.dec_map_params = nn.sgd_step(model.dec_map_params, gm, lr, config.momentum, st_m)
            model.dec_mask_params = nn.sgd_step(model.dec_mask_params, gk, lr, config.momentum, st_k)
        history.append({"map": ep_map / len(maps), "mask": ep_mask / len(maps),
                        "total": (ep_map + config.lambda_mask * ep_mask) / len(maps)})
        nn.check_divergence([h["total"] for h in history])
    model.train_log = history
    return model


# --------------------------------------------------------------------------
# PCA over latents


def fit_pca(latents, n: int) -> PCASubspace:
    """Mean-centered SVD subspace of the top-n right singular directions;
    sigma is the per-dimension standard deviation of the projections."""
    Z = np.asarray(latents, dtype=np.float64)
    if Z.ndim != 2 or len(Z) < n + 1:
        raise ShapeSpaceError(f"need at least {n + 1} latents for n={n}")
    mean = Z.mean(axis=0)
    X = Z - mean
    _, svals, vt = np.linalg.svd(X, full_matrices=False)
    rank = int((svals > 1e-9 * max(svals[0], 1e-30)).sum())
    if n > rank:
        warnings.warn(f"requested {n} dims but latent rank is {rank}; "
                      "trailing sigmas are zero")
    basis = vt[:n]
    proj = X @ basis.T
    sigma = proj.std(axis=0)
    order = np.argsort(-sigma, kind="stable")
    return PCASubspace(mean, basis[order], sigma[order])


def to_params(pca: PCASubspace, z: np.ndarray) -> ShapeParams:
    return ShapeParams(pca.basis @ (np.asarray(z, dtype=np.float64) - pca.mean))


def from_params(pca: PCASubspace, s) -> np.ndarray:
    s = s.s if isinstance(s, ShapeParams) else np.asarray(s, dtype=np.float64)
    if s.shape != (pca.n_dims,):
        raise ShapeSpaceError(f"expected {pca.n_dims} params, got {s.shape}")
    return pca.mean + pca.basis.T @ s


def interpolate(s_a: ShapeParams, s_b: ShapeParams, t: float) -> ShapeParams:
    if not 0.0 <= t <= 1.0:
        raise ShapeSpaceError(f"t={t} outside [0, 1]")
    if s_a.s.shape != s_b.s.shape:
        raise ShapeSpaceError("parameter dimension mismatch")
    return ShapeParams((1 - t) * s_a.s + t * s_b.s)


def sample_variation(pca: PCASubspace, dim: int, c: float) -> ShapeParams:
    """One-dimensional variation c * sigma_j along basis row j, c in [-1, 1]
    (the presentation convention for shape sweeps)."""
    if not -1.0 <= c <= 1.0:
        raise ShapeSpaceError(f"c={c} outside [-1, 1]")
    if not 0 <= dim < pca.n_dims:
        raise ShapeSpaceError(f"dim {dim} out of range")
    s = np.zeros(pca.n_dims)
    s[dim] = c * pca.sigma[dim]
    return ShapeParams(s)


# --------------------------------------------------------------------------
# persistence


def save_paramnet(model: ParamNetModel, path) -> None:
    manifest = {
        "kind": "paramnet",
        "enc_spec": nn.spec_to_json(model.enc_spec),
        "dec_map_spec": nn.spec_to_json(model.dec_map_spec),
        "dec_mask_spec": nn.spec_to_json(model.dec_mask_spec),
        "latent_n": model.latent_n,
        "case_tag": int(model.case_tag),
        "resolution": model.resolution,
        "d_max": model.d_max,
        "map_channels": model.map_channels,
        "include_mask": model.include_mask,
        "seed": model.seed,
        "train_log": model.train_log,
        "has_pca": model.pca is not None,
    }
    blocks = {"enc": model.enc_params, "dec_map": model.dec_map_params,
              "dec_mask": model.dec_mask_params}
    if model.pca is not None:
        blocks["pca"] = {"mean": model.pca.mean, "basis": model.pca.basis,
                         "sigma": model.pca.sigma}
    nn.save_checkpoint(path, manifest, blocks)


def load_paramnet(path) -> ParamNetModel:
    manifest, blobs = nn.load_checkpoint(path)
    if manifest.get("kind") != "paramnet":
        raise ValueError(f"{path}: not a paramnet checkpoint")
    enc_spec = nn.spec_from_json(manifest["enc_spec"])
    dmap_spec = nn.spec_from_json(manifest["dec_map_spec"])
    dmask_spec = nn.spec_from_json(manifest["dec_mask_spec"])
    model = ParamNetModel(
        enc_spec, nn.params_from_blobs(blobs, "enc", enc_spec, nn.init_params(enc_spec, 0)),
        dmap_spec, nn.params_from_blobs(blobs, "dec_map", dmap_spec, nn.init_params(dmap_spec, 0)),
        dmask_spec, nn.params_from_blobs(blobs, "dec_mask", dmask_spec, nn.init_params(dmask_spec, 0)),
        manifest["latent_n"], CaseTag(manifest["case_tag"]), manifest["resolution"],
        manifest["d_max"], manifest["map_channels"],
        include_mask=manifest.get("include_mask", True), seed=manifest["seed"],
        train_log=manifest["train_log"])
    if manifest.get("has_pca"):
        model.pca = PCASubspace(blobs["pca.mean"], blobs["pca.basis"], blobs["pca.sigma"])
    return model
