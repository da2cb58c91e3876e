"""Minimal differentiable layers with handwritten gradients, an SGD
optimizer, masked L1 loss, finite-difference gradient checking, and the
UVCK checkpoint format.

Single-sample tensors: images are (C, H, W), point sets (P, D), vectors
(N,). Everything is float64 numpy and bit-deterministic for a fixed seed.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


# --------------------------------------------------------------------------
# layer descriptors


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Conv2D:
    c_in: int
    c_out: int
    kernel: int
    stride: int = 1  # zero padding kernel//2 ("same" footprint at stride 1)


@dataclass(frozen=True)
class UpsampleNearest:
    factor: int = 2


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Reshape:
    shape: tuple


@dataclass(frozen=True)
class PointMLP:
    widths: tuple  # e.g. (3, 64, 128, 256); shared across points, ReLU after each


@dataclass(frozen=True)
class MaxPoolPoints:
    pass


_LAYER_TYPES = {c.__name__: c for c in
                (Dense, Conv2D, UpsampleNearest, ReLU, Sigmoid, Flatten, Reshape,
                 PointMLP, MaxPoolPoints)}


def layer_to_dict(layer) -> dict:
    d = {"type": type(layer).__name__}
    for k, v in layer.__dict__.items():
        d[k] = list(v) if isinstance(v, tuple) else v
    return d


def layer_from_dict(d: dict):
    d = dict(d)
    cls = _LAYER_TYPES[d.pop("type")]
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(v)
    return cls(**d)


def spec_to_json(spec) -> list:
    return [layer_to_dict(l) for l in spec]


def spec_from_json(items) -> list:
    return [layer_from_dict(d) for d in items]


# --------------------------------------------------------------------------
# initialization


def _glorot(rng, fan_in, fan_out, shape):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


def init_params(spec, seed: int) -> list:
    """Per-layer parameter dicts; weight-free layers get empty dicts."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec:
        if isinstance(layer, Dense):
            params.append({"W": _glorot(rng, layer.n_in, layer.n_out, (layer.n_in, layer.n_out)),
                           "b": np.zeros(layer.n_out)})
        elif isinstance(layer, Conv2D):
            k = layer.kernel
            fan_in = layer.c_in * k * k
            fan_out = layer.c_out * k * k
            params.append({"W": _glorot(rng, fan_in, fan_out, (layer.c_out, layer.c_in, k, k)),
                           "b": np.zeros(layer.c_out)})
        elif isinstance(layer, PointMLP):
            p = {}
            for i, (a, b) in enumerate(zip(layer.widths[:-1], layer.widths[1:])):
                p[f"W{i}"] = _glorot(rng, a, b, (a, b))
                p[f"b{i}"] = np.zeros(b)
            params.append(p)
        else:
            params.append({})
    return params


# --------------------------------------------------------------------------
# forward / backward


def _im2col(x, k, stride, pad):
    C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    cols = np.empty((C, k, k, Ho, Wo))
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, di:di + Ho * stride:stride, dj:dj + Wo * stride:stride]
    return cols.reshape(C * k * k, Ho * Wo), (Ho, Wo)


def _col2im(gcols, x_shape, k, stride, pad, Ho, Wo):
    C, H, W = x_shape
    gx = np.zeros((C, H + 2 * pad, W + 2 * pad))
    g = gcols.reshape(C, k, k, Ho, Wo)
    for di in range(k):
        for dj in range(k):
            gx[:, di:di + Ho * stride:stride, dj:dj + Wo * stride:stride] += g[:, di, dj]
    return gx[:, pad:pad + H, pad:pad + W]


def forward(spec, params, x):
    """Run the network; returns (output, caches) with caches sufficient for
    backward."""
    caches = []
    h = np.asarray(x, dtype=np.float64)
    for layer, p in zip(spec, params):
        if isinstance(layer, Dense):
            if h.shape != (layer.n_in,):
                raise ShapeMismatch(f"Dense expects ({layer.n_in},), got {h.shape}")
            caches.append(h)
            h = h @ p["W"] + p["b"]
        elif isinstance(layer, Conv2D):
            if h.ndim != 3 or h.shape[0] != layer.c_in:
                raise ShapeMismatch(f"Conv2D expects ({layer.c_in}, H, W), got {h.shape}")
            k, s = layer.kernel, layer.stride
            pad = k // 2
            cols, (Ho, Wo) = _im2col(h, k, s, pad)
            caches.append((cols, h.shape, Ho, Wo))
            Wm = p["W"].reshape(layer.c_out, -1)
            h = (Wm @ cols + p["b"][:, None]).reshape(layer.c_out, Ho, Wo)
        elif isinstance(layer, UpsampleNearest):
            caches.append(h.shape)
            f = layer.factor
            h = np.repeat(np.repeat(h, f, axis=1), f, axis=2)
        elif isinstance(layer, ReLU):
            caches.append(h > 0)
            h = np.maximum(h, 0.0)
        elif isinstance(layer, Sigmoid):
            h = 1.0 / (1.0 + np.exp(-h))
            caches.append(h)
        elif isinstance(layer, Flatten):
            caches.append(h.shape)
            h = h.reshape(-1)
        elif isinstance(layer, Reshape):
            caches.append(h.shape)
            h = h.reshape(layer.shape)
        elif isinstance(layer, PointMLP):
            if h.ndim != 2 or h.shape[1] != layer.widths[0]:
                raise ShapeMismatch(f"PointMLP expects (P, {layer.widths[0]}), got {h.shape}")
            acts = [h]
            for i in range(len(layer.widths) - 1):
                z = acts[-1] @ p[f"W{i}"] + p[f"b{i}"]
                acts.append(np.maximum(z, 0.0))
            caches.append(acts)
            h = acts[-1]
        elif isinstance(layer, MaxPoolPoints):
            caches.append((np.argmax(h, axis=0), h.shape[0]))
            h = h.max(axis=0)
        else:
            raise TypeError(f"unknown layer {layer}")
    return h, caches


def backward(spec, params, caches, loss_grad):
    """Gradients of a scalar loss wrt every parameter and the input, given
    d loss / d output."""
    if len(caches) != len(spec):
        raise ShapeMismatch("cache does not match the spec")
    g = np.asarray(loss_grad, dtype=np.float64)
    grads = [None] * len(spec)
    for li in range(len(spec) - 1, -1, -1):
        layer, p, cache = spec[li], params[li], caches[li]
        if isinstance(layer, Dense):
            x = cache
            grads[li] = {"W": np.outer(x, g), "b": g.copy()}
            g = p["W"] @ g
        elif isinstance(layer, Conv2D):
            cols, x_shape, Ho, Wo = cache
            k, s = layer.kernel, layer.stride
            gflat = g.reshape(layer.c_out, -1)
            grads[li] = {"W": (gflat @ cols.T).reshape(p["W"].shape),
                         "b": gflat.sum(axis=1)}
            gcols = p["W"].reshape(layer.c_out, -1).T @ gflat
            g = _col2im(gcols, x_shape, k, s, k // 2, Ho, Wo)
        elif isinstance(layer, UpsampleNearest):
            f = layer.factor
            C, H, W = cache
            g = g.reshape(C, H, f, W, f).sum(axis=(2, 4))
            grads[li] = {}
        elif isinstance(layer, ReLU):
            g = g * cache
            grads[li] = {}
        elif isinstance(layer, Sigmoid):
            y = cache
            g = g * y * (1 - y)
            grads[li] = {}
        elif isinstance(layer, (Flatten, Reshape)):
            g = g.reshape(cache)
            grads[li] = {}
        elif isinstance(layer, PointMLP):
            acts = cache
            gp = {}
            for i in range(len(layer.widths) - 2, -1, -1):
                g = g * (acts[i + 1] > 0)
                gp[f"W{i}"] = acts[i].T @ g
                gp[f"b{i}"] = g.sum(axis=0)
                g = g @ p[f"W{i}"].T
            grads[li] = gp
        elif isinstance(layer, MaxPoolPoints):
            arg, P = cache
            gx = np.zeros((P, g.shape[0]))
            gx[arg, np.arange(g.shape[0])] = g
            g = gx
            grads[li] = {}
    return grads, g


# --------------------------------------------------------------------------
# loss and optimizer


def l1_masked_loss(pred, target, mask=None):
    """Mean over masked elements of |pred*mask - target*mask|; the mask
    broadcasts over channels. Returns (loss, d loss / d pred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    if mask is None:
        m = np.ones_like(pred)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=np.float64), pred.shape)
    count = m.sum()
    if count == 0:
        raise ValueError("empty mask")
    diff = (pred - target) * m
    loss = np.abs(diff).sum() / count
    grad = np.sign(diff) * m / count
    return float(loss), grad


def zeros_like_params(params):
    return [{k: np.zeros_like(v) for k, v in p.items()} for p in params]


def add_scaled(dst, src, scale=1.0):
    for d, s in zip(dst, src):
        for k in d:
            d[k] += scale * s[k]


def sgd_step(params, grads, lr, momentum, state):
    """v <- momentum*v + grads; params <- params - lr*v. state holds v and is
    updated in place; params are returned as new arrays."""
    out = []
    for p, g, v in zip(params, grads, state):
        q = {}
        for k in p:
            v[k] = momentum * v[k] + g[k]
            q[k] = p[k] - lr * v[k]
        out.append(q)
    return out


def lr_schedule(lr: float, final_frac: float, epoch: int, epochs: int) -> float:
    """Geometric decay from lr to lr*final_frac across the run."""
    if epochs <= 1:
        return lr
    return lr * final_frac ** (epoch / (epochs - 1))


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 4
    seed: int = 0
    lr_final_frac: float = 0.02
    lambda_mask: float = 1.0  # weight of the mask-map loss (shape space only)


class DivergenceError(RuntimeError):
    pass


def check_divergence(history, factor=10.0, patience=3):
    """Raise when the loss exceeded factor x the initial loss for
    `patience` consecutive epochs."""
    if len(history) < patience + 1:
        return
    first = history[0]
    if all(h > factor * first for h in history[-patience:]):
        raise DivergenceError(f"loss exceeded {factor} x initial for {patience} epochs")


# --------------------------------------------------------------------------
# gradient checking


def _iter_params(params):
    for li, p in enumerate(params):
        for name in sorted(p):
            yield li, name


def gradient_check(spec, params, x, seed=0, eps=1e-4):
    """Max relative error between analytic gradients and central finite
    differences of the scalar probe sum(c * output), over all parameters and
    the input."""
    rng = np.random.default_rng(seed)
    y, caches = forward(spec, params, x)
    c = rng.normal(size=y.shape)
    grads, gx = backward(spec, params, caches, c)

    def probe(ps, xs):
        out, _ = forward(spec, ps, xs)
        return float((c * out).sum())

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-6)

    worst = 0.0
    for li, name in _iter_params(params):
        w = params[li][name]
        flat = w.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = probe(params, x)
            flat[i] = old - eps
            fm = probe(params, x)
            flat[i] = old
            fd = (fp - fm) / (2 * eps)
            worst = max(worst, rel(fd, grads[li][name].reshape(-1)[i]))
    xf = np.array(x, dtype=np.float64)
    flat = xf.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = probe(params, xf)
        flat[i] = old - eps
        fm = probe(params, xf)
        flat[i] = old
        fd = (fp - fm) / (2 * eps)
        worst = max(worst, rel(fd, gx.reshape(-1)[i]))
    return worst


# --------------------------------------------------------------------------
# UVCK checkpoints

_MAGIC = b"UVCK"
_VERSION = 1


def save_checkpoint(path, manifest: dict, params_blocks: dict) -> None:
    """UVCK: magic, u32 version, u64 manifest length, JSON manifest,
    little-endian float32 blobs in manifest order.

    params_blocks: name -> list of per-layer parameter dicts (or a flat dict
    of arrays). The manifest receives a "blobs" entry recording order/shapes.
    """
    blobs = []
    records = []
    for block, plist in params_blocks.items():
        if isinstance(plist, dict):
            items = [(None, plist)]
        else:
            items = list(enumerate(plist))
        for li, p in items:
            for name in sorted(p):
                key = f"{block}.{li}.{name}" if li is not None else f"{block}.{name}"
                records.append({"key": key, "shape": list(np.shape(p[name]))})
                blobs.append(np.asarray(p[name], dtype="<f4"))
    manifest = dict(manifest)
    manifest["blobs"] = records
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(text)))
        fh.write(text)
        for b in blobs:
            fh.write(b.tobytes())


def load_checkpoint(path):
    """Returns (manifest, blobs: key -> float64 array)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a UVCK checkpoint")
        version, mlen = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        blobs = {}
        for rec in manifest["blobs"]:
            shape = tuple(rec["shape"])
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(4 * n), dtype="<f4").astype(np.float64)
            blobs[rec["key"]] = arr.reshape(shape)
    return manifest, blobs


def params_from_blobs(blobs: dict, block: str, spec, template_params) -> list:
    """Reassemble a per-layer parameter list saved under `block`."""
    out = []
    for li, p in enumerate(template_params):
        q = {}
        for name in p:
            q[name] = blobs[f"{block}.{li}.{name}"]
        out.append(q)
    return out
