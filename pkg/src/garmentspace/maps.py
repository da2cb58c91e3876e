"""UV-space grids: multi-channel position maps with masks, the signed
bi-distance mask transform, triangle rasterization over the texel grid, and
the UVMP binary file format.

Grid convention: an R x R map covers the uv unit square. Arrays are indexed
[row, col] where col tracks u and row tracks v; the center of texel (i, j)
is ((j + 0.5) / R, (i + 0.5) / R).
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field

import numpy as np


class CaseTag(enum.IntEnum):
    CASE1 = 1   # values live on the body surface atlas
    CASE2 = 2   # values live in the cylindrical garment chart
    BIDIST = 255  # file tag for a stored bi-distance map


@dataclass
class UVMap:
    """R x R float planes plus a binary coverage mask."""

    resolution: int
    channels: np.ndarray  # (C, R, R) float64, values nominally in [0, 1]
    mask: np.ndarray      # (R, R) bool
    case_tag: CaseTag

    def __post_init__(self):
        R = self.resolution
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim == 2:
            self.channels = self.channels[None]
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.channels.shape[1:] != (R, R) or self.mask.shape != (R, R):
            raise ValueError(f"shape mismatch for resolution {R}: "
                             f"{self.channels.shape}, {self.mask.shape}")
        if self.channels.shape[0] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {self.channels.shape[0]}")
        if not np.isfinite(self.channels).all():
            raise ValueError("non-finite channel value")
        self.case_tag = CaseTag(self.case_tag)

    @property
    def n_channels(self) -> int:
        return int(self.channels.shape[0])

    def mask_texels(self) -> int:
        return int(self.mask.sum())

    def copy(self) -> "UVMap":
        return UVMap(self.resolution, self.channels.copy(), self.mask.copy(), self.case_tag)


@dataclass
class BiDistanceMap:
    """Signed texel distances to the mask boundary: positive inside the mask,
    negative outside, magnitudes capped at d_max."""

    resolution: int
    values: np.ndarray  # (R, R) float64
    d_max: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.resolution:
            raise ValueError(f"values must be 2D with {self.resolution} rows")
        if np.abs(self.values).max() > self.d_max + 1e-12:
            raise ValueError("values exceed d_max")


# --------------------------------------------------------------------------
# exact Euclidean distance transform (columns: two-sweep counting, rows:
# lower envelope of parabolas); integer-exact squared distances throughout


def _edt_sq_rows(g: np.ndarray) -> np.ndarray:
    """Per-row lower-envelope pass: d[i, j] = min_j' ((j - j')^2 + g[i, j']^2)."""
    R, C = g.shape
    gsq = (g.astype(np.float64)) ** 2
    out = np.empty((R, C))
    v = np.empty(C, dtype=np.int64)
    z = np.empty(C + 1)
    for i in range(R):
        f = gsq[i]
        k = 0
        v[0] = 0
        z[0], z[1] = -np.inf, np.inf
        for q in range(1, C):
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
            while s <= z[k]:
                k -= 1
                s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for q in range(C):
            while z[k + 1] < q:
                k += 1
            out[i, q] = (q - v[k]) ** 2 + f[v[k]]
    return out


def edt_squared(sites: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance (texel units) from every texel to the
    nearest True texel. Rows/columns with no sites propagate a large finite
    sentinel; an all-False input returns all values >= (R + C)^2."""
    sites = np.asarray(sites, dtype=bool)
    R, C = sites.shape
    big = R + C + 1
    # column sweep: per-column distance (in texels) to the nearest site
    g = np.full((R, C), big, dtype=np.int64)
    g[sites] = 0
    for i in range(1, R):
        g[i] = np.minimum(g[i], g[i - 1] + 1)
    for i in range(R - 2, -1, -1):
        g[i] = np.minimum(g[i], g[i + 1] + 1)
    return _edt_sq_rows(g)


def edt_squared_bruteforce(sites: np.ndarray) -> np.ndarray:
    """O(R^4) oracle: scan every site for every texel."""
    sites = np.asarray(sites, dtype=bool)
    R, C = sites.shape
    out = np.full((R, C), (R + C + 1) ** 2, dtype=np.int64)
    ys, xs = np.nonzero(sites)
    if len(ys) == 0:
        return out
    ii, jj = np.meshgrid(np.arange(R), np.arange(C), indexing="ij")
    d2 = (ii[..., None] - ys) ** 2 + (jj[..., None] - xs) ** 2
    return d2.min(axis=-1)


def bidistance_transform(mask: np.ndarray, d_max: float) -> BiDistanceMap:
    """Signed distance-to-boundary map of a binary mask: the exact Euclidean
    distance to the nearest opposite-class texel, positive inside the mask and
    negative outside, capped at +-d_max. Uniform masks saturate everywhere."""
    mask = np.asarray(mask, dtype=bool)
    R = mask.shape[0]
    values = np.empty(mask.shape)
    if mask.all():
        values[:] = d_max
    elif not mask.any():
        values[:] = -d_max
    else:
        inside = np.sqrt(edt_squared(~mask))
        outside = np.sqrt(edt_squared(mask))
        values = np.where(mask, inside, -outside)
        values = np.clip(values, -d_max, d_max)
    return BiDistanceMap(R, values, float(d_max))


def recover_mask(t: BiDistanceMap) -> np.ndarray:
    """Mask = texels with strictly positive signed distance."""
    return t.values > 0


# --------------------------------------------------------------------------
# rasterization & sampling


def rasterize_triangles(uv_tris: np.ndarray, resolution: int, want_bary: bool = False):
    """Cover texels whose centers fall inside uv-space triangles.

    uv_tris: (T, 3, 2). Returns mask (R, R) bool; with want_bary also returns
    (owner (R, R) int32 triangle index or -1, bary (R, R, 3)) where later
    triangles overwrite earlier ones.
    """
    R = resolution
    mask = np.zeros((R, R), dtype=bool)
    owner = np.full((R, R), -1, dtype=np.int32) if want_bary else None
    bary = np.zeros((R, R, 3)) if want_bary else None
    uv_tris = np.asarray(uv_tris, dtype=np.float64)
    for ti in range(len(uv_tris)):
        a, b, c = uv_tris[ti]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        j0 = max(int(np.floor(lo[0] * R - 0.5)), 0)
        j1 = min(int(np.ceil(hi[0] * R - 0.5)), R - 1)
        i0 = max(int(np.floor(lo[1] * R - 0.5)), 0)
        i1 = min(int(np.ceil(hi[1] * R - 0.5)), R - 1)
        if j1 < j0 or i1 < i0:
            continue
        e1 = b - a
        e2 = c - a
        det = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(det) < 1e-18:
            continue
        jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1))
        px = (jj + 0.5) / R - a[0]
        py = (ii + 0.5) / R - a[1]
        w1 = (px * e2[1] - py * e2[0]) / det
        w2 = (py * e1[0] - px * e1[1]) / det
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        mask[ii[inside], jj[inside]] = True
        if want_bary:
            owner[ii[inside], jj[inside]] = ti
            bary[ii[inside], jj[inside], 0] = w0[inside]
            bary[ii[inside], jj[inside], 1] = w1[inside]
            bary[ii[inside], jj[inside], 2] = w2[inside]
    if want_bary:
        return mask, owner, bary
    return mask


def uv_to_texel(uv: np.ndarray, resolution: int):
    """Containing texel (row, col) of uv points, clipped to the grid."""
    uv = np.asarray(uv, dtype=np.float64)
    j = np.clip((uv[..., 0] * resolution).astype(np.int64), 0, resolution - 1)
    i = np.clip((uv[..., 1] * resolution).astype(np.int64), 0, resolution - 1)
    return i, j


def splat_vertex_values(uv: np.ndarray, values: np.ndarray, resolution: int):
    """Average per-vertex values into their containing texels.

    Returns (grid (C, R, R), known (R, R) bool).
    """
    values = np.asarray(values, dtype=np.float64)
    C = values.shape[1]
    R = resolution
    acc = np.zeros((C, R, R))
    cnt = np.zeros((R, R))
    i, j = uv_to_texel(uv, R)
    np.add.at(cnt, (i, j), 1.0)
    for c in range(C):
        np.add.at(acc[c], (i, j), values[:, c])
    known = cnt > 0
    acc[:, known] /= cnt[known]
    return acc, known


def fill_holes(grid: np.ndarray, known: np.ndarray, target: np.ndarray,
               max_iters: int | None = None, default: float = 0.5) -> np.ndarray:
    """Fill target & ~known texels by repeated averaging of known 4-neighbors
    (nearest-valid diffusion). Unreachable texels get the default value."""
    C, R, _ = grid.shape
    out = grid.copy()
    known = known.copy()
    todo = target & ~known
    if max_iters is None:
        max_iters = R
    for _ in range(max_iters):
        if not todo.any():
            break
        ksum = np.zeros((R, R))
        vsum = np.zeros((C, R, R))
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            src_k = np.zeros((R, R), dtype=bool)
            src_v = np.zeros((C, R, R))
            ssrc = (slice(max(di, 0), R + min(di, 0)), slice(max(dj, 0), R + min(dj, 0)))
            sdst = (slice(max(-di, 0), R + min(-di, 0)), slice(max(-dj, 0), R + min(-dj, 0)))
            src_k[sdst] = known[ssrc]
            src_v[:, sdst[0], sdst[1]] = out[:, ssrc[0], ssrc[1]]
            ksum += src_k
            vsum += np.where(src_k, src_v, 0.0)
        new = todo & (ksum > 0)
        if not new.any():
            break
        out[:, new] = vsum[:, new] / ksum[new]
        known |= new
        todo &= ~new
    if todo.any():
        out[:, todo] = default
    return out


def bilinear_sample(channels: np.ndarray, mask: np.ndarray, uv: np.ndarray):
    """Mask-aware bilinear sampling at uv points.

    Unmasked corner texels are dropped and weights renormalized; a point whose
    four corners are all unmasked is invalid. Returns (values (Q, C),
    valid (Q,) bool).
    """
    C, R, _ = channels.shape
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    x = uv[:, 0] * R - 0.5
    y = uv[:, 1] * R - 0.5
    j0 = np.floor(x).astype(np.int64)
    i0 = np.floor(y).astype(np.int64)
    fx = x - j0
    fy = y - i0
    vals = np.zeros((len(uv), C))
    wsum = np.zeros(len(uv))
    for di, dj, w in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                      (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        ir = i0 + di
        jr = j0 + dj
        in_grid = (ir >= 0) & (ir < R) & (jr >= 0) & (jr < R)
        ii = np.clip(ir, 0, R - 1)
        jj = np.clip(jr, 0, R - 1)
        wc = np.where(in_grid & mask[ii, jj], w, 0.0)
        wsum += wc
        vals += wc[:, None] * channels[:, ii, jj].T
    valid = wsum > 1e-12
    vals[valid] /= wsum[valid, None]
    return vals, valid


# --------------------------------------------------------------------------
# UVMP binary format

_MAGIC = b"UVMP"
_VERSION = 1


def save_uvmap(m: UVMap, path) -> None:
    """UVMP: magic, u32 version, u32 R, u32 C, u8 case_tag, mask bits
    (row-major, padded to a byte), C planes of R*R little-endian float32."""
    R, C = m.resolution, m.n_channels
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIB", _VERSION, R, C, int(m.case_tag)))
        fh.write(np.packbits(m.mask.reshape(-1)).tobytes())
        for c in range(C):
            fh.write(m.channels[c].astype("<f4").tobytes())


def save_bidistance(t: BiDistanceMap, path) -> None:
    """A bi-distance map is stored as a 1-channel UVMP with the BIDIST tag;
    the mask is its positive region."""
    R = t.resolution
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIB", _VERSION, R, 1, int(CaseTag.BIDIST)))
        fh.write(np.packbits((t.values > 0).reshape(-1)).tobytes())
        fh.write(t.values.astype("<f4").tobytes())


def load_uvmap(path):
    """Load a UVMP file; returns UVMap, or BiDistanceMap for the BIDIST tag
    (d_max recovered as the stored absolute maximum)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a UVMP file")
        version, R, C, tag = struct.unpack("<IIIB", fh.read(13))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        nbits = (R * R + 7) // 8
        mask = np.unpackbits(np.frombuffer(fh.read(nbits), dtype=np.uint8))[:R * R]
        mask = mask.reshape(R, R).astype(bool)
        planes = np.frombuffer(fh.read(4 * C * R * R), dtype="<f4").astype(np.float64)
        planes = planes.reshape(C, R, R)
    if tag == int(CaseTag.BIDIST):
        return BiDistanceMap(R, planes[0], float(np.abs(planes[0]).max()))
    return UVMap(R, planes, mask, CaseTag(tag))
