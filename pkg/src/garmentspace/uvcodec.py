"""Garment <-> UV-position-map codec.

Case 1 (garments homotopic to the body surface): each vertex anchors to the
body point whose normal ray best explains it; the anchor's atlas uv becomes
the vertex uv and the signed ray distance (+0.5) the rendered value. Case 2
(skirts/dresses): vertices map through a cylindrical chart and the rendered
value is the position itself (+0.5 per component).

Posed garments reuse the T-pose uv and mask; only the rendered values change
(position shifts from the posed anchors for Case 1, posed positions for
Case 2), giving coupled map pairs with bit-equal masks.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .aabb import AABBTree, ray_correspondences_batch
from .body import BodyTemplate, body_uv_lookup_batch, rasterize_atlas
from .maps import (CaseTag, UVMap, bilinear_sample, fill_holes, rasterize_triangles,
                   splat_vertex_values, uv_to_texel)
from .mesh import MeshError, TriMesh, vertex_normals

DEFAULT_Y0 = 0.2                 # chart reference height above the root joint
CASE1_RESIDUAL_THRESHOLD = 0.01  # meters; the ray must nearly hit the vertex
CASE1_MAX_NORMAL_DISTANCE = 0.05  # meters; the vertex must hover near the skin


class NotHomotopyEncodableError(ValueError):
    """Too many vertices have no good normal-ray anchor; use case 2."""


class NonInjectiveUVError(ValueError):
    """Distinct garment regions collapse onto the same chart point."""


class StaleCorrespondenceError(ValueError):
    """Too many vertex uvs sample outside the map's mask."""


@dataclass
class GarmentUV:
    """Per-vertex chart coordinates of one garment, with the data needed to
    invert the mapping."""

    uv: np.ndarray                 # (V, 2)
    case_tag: CaseTag
    faces: np.ndarray              # (F, 3) source connectivity
    anchor_faces: np.ndarray | None = None    # (V,) body face per vertex (case 1)
    anchor_weights: np.ndarray | None = None  # (V, 3)
    normal_distances: np.ndarray | None = None  # (V,) signed meters
    residuals: np.ndarray | None = None         # (V,) meters
    y0: float | None = None        # case 2 reference height

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.case_tag = CaseTag(self.case_tag)
        if self.case_tag == CaseTag.CASE1 and self.anchor_faces is None:
            raise MeshError("case 1 requires anchors")
        if self.case_tag == CaseTag.CASE2 and self.y0 is None:
            raise MeshError("case 2 requires y0")

    @property
    def n_vertices(self) -> int:
        return len(self.uv)


@dataclass
class CoupledMaps:
    """T-pose map and posed map sharing resolution, case and mask bits."""

    t_map: UVMap
    a_map: UVMap

    def __post_init__(self):
        if self.t_map.resolution != self.a_map.resolution:
            raise MeshError("coupled maps must share resolution")
        if self.t_map.case_tag != self.a_map.case_tag:
            raise MeshError("coupled maps must share case")
        if not np.array_equal(self.t_map.mask, self.a_map.mask):
            raise MeshError("coupled maps must share the mask bit for bit")


# --------------------------------------------------------------------------
# uv assignment


def assign_uv_case1(garment: TriMesh, template: BodyTemplate, tree: AABBTree,
                    k: int = 16, residual_threshold: float = CASE1_RESIDUAL_THRESHOLD,
                    max_normal_distance: float = CASE1_MAX_NORMAL_DISTANCE) -> GarmentUV:
    """Anchor every garment vertex on the body via normal-ray correspondence
    and take the anchor's atlas uv. Both meshes must be at T-pose.

    A vertex counts as explained when its ray residual stays below the
    threshold AND its normal travel stays below max_normal_distance; the
    travel bound is what actually rejects skirts here, since cylinder and cap
    rays of a capsule body pass exactly through arbitrarily distant points.
    """
    faces, weights, dists, residuals = ray_correspondences_batch(
        garment.vertices, template.mesh, tree, k=k)
    bad = (residuals > residual_threshold) | (np.abs(dists) > max_normal_distance)
    if bad.mean() > 0.01:
        raise NotHomotopyEncodableError(
            f"{int(bad.sum())}/{len(bad)} vertices have ray residual above "
            f"{residual_threshold} or normal travel above {max_normal_distance}; "
            "the garment is not homotopy-encodable, try the case-2 cylindrical chart")
    uv, _ = body_uv_lookup_batch(template, faces, weights)
    return GarmentUV(uv=uv, case_tag=CaseTag.CASE1, faces=garment.faces.copy(),
                     anchor_faces=faces, anchor_weights=weights,
                     normal_distances=dists, residuals=residuals)


def case2_uv(points: np.ndarray, y0: float) -> np.ndarray:
    """Cylindrical chart: uv = ((y0-y) cos(theta) + 0.5, (y0-y) sin(theta) + 0.5)
    with theta = arctan2(z, x); theta is 0 where the axis radius vanishes."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    theta = np.arctan2(p[:, 2], p[:, 0])
    r = y0 - p[:, 1]
    return np.stack([r * np.cos(theta) + 0.5, r * np.sin(theta) + 0.5], axis=1)


def assign_uv_case2(garment: TriMesh, y0: float = DEFAULT_Y0) -> GarmentUV:
    """Map vertices through the cylindrical chart. Vertices above y0 are
    permitted (negative radius lands them across the chart center)."""
    uv = case2_uv(garment.vertices, y0)
    # injectivity: chart-coincident vertices must be spatially coincident too
    d_uv = np.linalg.norm(uv[:, None, :] - uv[None, :, :], axis=-1)
    d_3d = np.linalg.norm(garment.vertices[:, None, :] - garment.vertices[None, :, :], axis=-1)
    clash = (d_uv < 1e-6) & (d_3d > 0.05)
    if clash.any():
        i, j = np.argwhere(clash)[0]
        raise NonInjectiveUVError(
            f"vertices {i} and {j} are {d_3d[i, j]:.3f} m apart but land on "
            "the same chart point")
    return GarmentUV(uv=uv, case_tag=CaseTag.CASE2, faces=garment.faces.copy(), y0=float(y0))


# --------------------------------------------------------------------------
# per-vertex values (the grid-bypassing route)


def vertex_values_tpose(garment: TriMesh, guv: GarmentUV) -> np.ndarray:
    """Rendered values per vertex: signed normal distance + 0.5 (case 1,
    one channel) or position + 0.5 (case 2, three channels)."""
    if guv.case_tag == CaseTag.CASE1:
        return guv.normal_distances[:, None] + 0.5
    return garment.vertices + 0.5


def vertex_values_posed(posed: TriMesh, guv: GarmentUV, posed_body: TriMesh) -> np.ndarray:
    """Posed rendered values: position shift from the posed anchor + 0.5
    (case 1) or posed position + 0.5 (case 2); three channels either way."""
    if posed.n_vertices != guv.n_vertices:
        raise MeshError("posed garment does not match the uv record")
    if guv.case_tag == CaseTag.CASE1:
        anchors = _anchor_points(guv, posed_body)
        return (posed.vertices - anchors) + 0.5
    return posed.vertices + 0.5


def _anchor_points(guv: GarmentUV, body: TriMesh) -> np.ndarray:
    tri = body.vertices[body.faces[guv.anchor_faces]]
    return np.einsum("vi,vij->vj", guv.anchor_weights, tri)


def _anchor_normals(guv: GarmentUV, body: TriMesh) -> np.ndarray:
    vn = vertex_normals(body)
    n = np.einsum("vi,vij->vj", guv.anchor_weights, vn[body.faces[guv.anchor_faces]])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def decode_vertex_values(values: np.ndarray, guv: GarmentUV, template: BodyTemplate,
                         posed_body: TriMesh | None = None) -> TriMesh:
    """Invert per-vertex rendered values back to a garment mesh."""
    values = np.asarray(values, dtype=np.float64)
    if guv.case_tag == CaseTag.CASE2:
        return TriMesh(values - 0.5, guv.faces.copy())
    body = posed_body if posed_body is not None else template.mesh
    anchors = _anchor_points(guv, body)
    if values.shape[1] == 1:
        normals = _anchor_normals(guv, body)
        pos = anchors + (values[:, 0:1] - 0.5) * normals
    else:
        pos = anchors + (values - 0.5)
    return TriMesh(pos, guv.faces.copy())


# --------------------------------------------------------------------------
# grid encode / decode


def _vertex_charts(guv: GarmentUV, template: BodyTemplate) -> np.ndarray:
    return template.chart_ids[guv.anchor_faces]


def _garment_mask(guv: GarmentUV, template: BodyTemplate | None, R: int) -> np.ndarray:
    """Rasterize garment faces in uv space. Case-1 faces are dropped when
    their corners span charts or wrap a chart seam (uv footprint wider than
    half a chart cell); splatted vertex texels always join the mask."""
    uv_tris = guv.uv[guv.faces]
    if guv.case_tag == CaseTag.CASE1:
        charts = _vertex_charts(guv, template)
        tri_charts = charts[guv.faces]
        same_chart = (tri_charts[:, 0] == tri_charts[:, 1]) & (tri_charts[:, 1] == tri_charts[:, 2])
        span = uv_tris.max(axis=1) - uv_tris.min(axis=1)
        small = (span < 1.0 / (2 * 4)).all(axis=1)  # half of one 4x4 chart cell
        uv_tris = uv_tris[same_chart & small]
    mask = rasterize_triangles(uv_tris, R)
    i, j = uv_to_texel(guv.uv, R)
    in_grid = (guv.uv[:, 0] >= 0) & (guv.uv[:, 0] < 1) & (guv.uv[:, 1] >= 0) & (guv.uv[:, 1] < 1)
    mask[i[in_grid], j[in_grid]] = True
    return mask


def encode_tpose(garment: TriMesh, guv: GarmentUV, template: BodyTemplate | None,
                 R: int) -> UVMap:
    """Rasterize the garment's uv footprint into a mask and diffuse the
    splatted vertex values across it."""
    if garment.n_vertices != guv.n_vertices:
        raise MeshError("garment does not match the uv record")
    values = vertex_values_tpose(garment, guv)
    mask = _garment_mask(guv, template, R)
    if not mask.any():
        raise MeshError("empty mask: garment uv footprint misses the grid")
    grid, known = splat_vertex_values(guv.uv, values, R)
    channels = fill_holes(grid, known & mask, mask)
    channels[:, ~mask] = 0.0
    return UVMap(R, channels, mask, guv.case_tag)


def encode_posed(posed_garment: TriMesh, guv: GarmentUV, posed_body: TriMesh,
                 R: int, t_mask: np.ndarray) -> UVMap:
    """Posed coupled map: same uv, same mask (bit-copied from the T-pose
    map), values from vertex_values_posed."""
    values = vertex_values_posed(posed_garment, guv, posed_body)
    mask = np.array(t_mask, dtype=bool, copy=True)
    grid, known = splat_vertex_values(guv.uv, values, R)
    channels = fill_holes(grid, known & mask, mask)
    channels[:, ~mask] = 0.0
    return UVMap(R, channels, mask, guv.case_tag)


def build_coupled(tpose: TriMesh, posed: TriMesh, guv: GarmentUV,
                  template: BodyTemplate | None, posed_body: TriMesh, R: int) -> CoupledMaps:
    t_map = encode_tpose(tpose, guv, template, R)
    a_map = encode_posed(posed, guv, posed_body, R, t_map.mask)
    return CoupledMaps(t_map, a_map)


def _sample_with_fallback(m: UVMap, uv: np.ndarray, max_invalid_frac: float = 0.01):
    vals, valid = bilinear_sample(m.channels, m.mask, uv)
    if (~valid).any():
        frac = float((~valid).mean())
        if frac > max_invalid_frac:
            raise StaleCorrespondenceError(
                f"{frac:.1%} of vertices sample outside the mask")
        ii, jj = np.nonzero(m.mask)
        centers = np.stack([(jj + 0.5) / m.resolution, (ii + 0.5) / m.resolution], axis=1)
        for q in np.nonzero(~valid)[0]:
            nearest = np.argmin(((centers - uv[q]) ** 2).sum(axis=1))
            vals[q] = m.channels[:, ii[nearest], jj[nearest]]
    return vals


def decode_template_carried(m: UVMap, guv: GarmentUV, template: BodyTemplate | None,
                            posed_body: TriMesh | None = None) -> TriMesh:
    """Rebuild the source garment by sampling the map at its vertex uvs."""
    vals = _sample_with_fallback(m, guv.uv)
    return decode_vertex_values(vals, guv, template, posed_body)


def decode_posed(a_map: UVMap, guv: GarmentUV, posed_body: TriMesh) -> TriMesh:
    """Posed decode: posed anchor + stored shift (case 1) or stored posed
    position (case 2)."""
    return decode_template_carried(a_map, guv, template=None, posed_body=posed_body)


def decode_template_free(m: UVMap, template: BodyTemplate | None = None,
                         body_mesh: TriMesh | None = None, y0: float | None = None):
    """Mesh the masked texel grid directly: one vertex per masked texel,
    quads between 4-connected masked texels. Returns (mesh, dropped) where
    dropped counts case-1 texels lost to atlas gutters."""
    R = m.resolution
    if not m.mask.any():
        raise MeshError("empty mask")
    ii, jj = np.nonzero(m.mask)
    vidx = np.full((R, R), -1, dtype=np.int64)
    vals = m.channels[:, ii, jj].T
    dropped = 0
    if m.case_tag == CaseTag.CASE2:
        if m.n_channels != 3:
            raise MeshError("case-2 maps must have 3 channels")
        pos = vals - 0.5
        keep = np.ones(len(ii), dtype=bool)
    else:
        if template is None:
            raise MeshError("case-1 template-free decode needs the body template")
        _, owner, bary = rasterize_atlas(template, R)
        fid = owner[ii, jj]
        keep = fid >= 0
        dropped = int((~keep).sum())
        if dropped:
            warnings.warn(f"{dropped} masked texels fall in atlas gutters; dropped")
        body = body_mesh if body_mesh is not None else template.mesh
        vn = vertex_normals(body)
        tri = body.vertices[template.mesh.faces[fid[keep]]]
        nrm = vn[template.mesh.faces[fid[keep]]]
        bw = bary[ii[keep], jj[keep]]
        p = np.einsum("vi,vij->vj", bw, tri)
        n = np.einsum("vi,vij->vj", bw, nrm)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        if m.n_channels == 1:
            pos = p + (vals[keep, 0:1] - 0.5) * n
        else:
            pos = p + (vals[keep] - 0.5)
    vidx[ii[keep], jj[keep]] = np.arange(int(keep.sum()))
    faces = []
    ok = vidx >= 0
    for i in range(R - 1):
        for j in range(R - 1):
            if ok[i, j] and ok[i, j + 1] and ok[i + 1, j + 1] and ok[i + 1, j]:
                a, b = vidx[i, j], vidx[i, j + 1]
                c, d = vidx[i + 1, j + 1], vidx[i + 1, j]
                faces.append((a, b, c))
                faces.append((a, c, d))
    if not faces:
        raise MeshError("mask too sparse to mesh")
    mesh = TriMesh(pos if m.case_tag == CaseTag.CASE2 else pos,
                   np.asarray(faces, dtype=np.int64))
    return mesh, dropped


def texel_footprint(guv: GarmentUV, garment: TriMesh, R: int) -> float:
    """World meters per texel step: the 95th percentile over mesh edges of
    (world length) / (uv length in texels). Zero-uv-length seam edges are
    excluded."""
    e = garment.edges()
    w_len = np.linalg.norm(garment.vertices[e[:, 0]] - garment.vertices[e[:, 1]], axis=1)
    uv_len = np.linalg.norm(guv.uv[e[:, 0]] - guv.uv[e[:, 1]], axis=1) * R
    good = uv_len > 1e-9
    return float(np.percentile(w_len[good] / uv_len[good], 95))
