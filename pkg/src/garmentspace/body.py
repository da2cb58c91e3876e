"""Simplified articulated body: capsule segments on a joint tree, linear
blend skinning, a fixed per-segment UV atlas, and normal-map rendering.

The body stands in for a full statistical human model while keeping the
interfaces the garment pipeline consumes: a T-pose surface with normals, a
per-face-corner UV atlas, shape/pose parameters, and posed normal maps.
Shape (beta) is a per-segment (length, radius) scale pair, pose (theta) a
per-joint axis-angle rotation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .maps import CaseTag, UVMap, rasterize_triangles
from .mesh import BarycentricPoint, MeshError, TriMesh, vertex_normals

CHART_GRID = 4          # 4x4 chart cells
CHART_MARGIN = 1 / 32   # two texels of gutter at the reference resolution 64


class BodyConfigError(ValueError):
    pass


@dataclass
class SegmentConfig:
    name: str
    parent: str | None
    length: float
    radius: float
    rings: int            # latitude steps per hemispherical cap; also cylinder rows
    sides: int
    direction: tuple = (0.0, 1.0, 0.0)
    attach_t: float = 0.0           # fraction along the parent axis
    attach_offset: tuple = (0.0, 0.0, 0.0)  # lateral offset from that point


@dataclass
class BodyConfig:
    segments: list

    @staticmethod
    def from_dict(d: dict) -> "BodyConfig":
        return BodyConfig([SegmentConfig(**{**s, "parent": s.get("parent")})
                           for s in d["segments"]])

    def to_dict(self) -> dict:
        return {"segments": [asdict(s) for s in self.segments]}


def default_body_config() -> BodyConfig:
    """Ten segments: torso, head, paired upper/lower arms and legs. The body
    fits inside the [-0.5, 0.5]^3 working box with room for garment offsets."""
    # Limb pairs share one radius and arm pivots sit at the torso top: with
    # equal radii the offset surface around a joint stays strictly closer to
    # its own segment's rays than to the neighbor's, so garment anchoring is
    # unambiguous for the supported looseness ranges.
    segs = [
        SegmentConfig("torso", None, 0.30, 0.100, 4, 14),
        SegmentConfig("head", "torso", 0.10, 0.055, 3, 10,
                      direction=(0, 1, 0), attach_t=1.0, attach_offset=(0, 0.01, 0)),
        SegmentConfig("upper_arm_l", "torso", 0.13, 0.030, 3, 10,
                      direction=(1, 0, 0), attach_t=1.0, attach_offset=(0.14, 0, 0)),
        SegmentConfig("lower_arm_l", "upper_arm_l", 0.13, 0.030, 3, 10,
                      direction=(1, 0, 0), attach_t=1.0),
        SegmentConfig("upper_arm_r", "torso", 0.13, 0.030, 3, 10,
                      direction=(-1, 0, 0), attach_t=1.0, attach_offset=(-0.14, 0, 0)),
        SegmentConfig("lower_arm_r", "upper_arm_r", 0.13, 0.030, 3, 10,
                      direction=(-1, 0, 0), attach_t=1.0),
        SegmentConfig("upper_leg_l", "torso", 0.19, 0.044, 3, 10,
                      direction=(0, -1, 0), attach_t=0.0, attach_offset=(0.075, -0.06, 0)),
        SegmentConfig("lower_leg_l", "upper_leg_l", 0.18, 0.044, 3, 10,
                      direction=(0, -1, 0), attach_t=1.0),
        SegmentConfig("upper_leg_r", "torso", 0.19, 0.044, 3, 10,
                      direction=(0, -1, 0), attach_t=0.0, attach_offset=(-0.075, -0.06, 0)),
        SegmentConfig("lower_leg_r", "upper_leg_r", 0.18, 0.044, 3, 10,
                      direction=(0, -1, 0), attach_t=1.0),
    ]
    return BodyConfig(segs)


def save_body_config(config: BodyConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)


def load_body_config(path) -> BodyConfig:
    with open(path) as fh:
        return BodyConfig.from_dict(json.load(fh))


@dataclass
class BodySkeleton:
    """One joint per segment, at the segment's proximal pivot."""

    names: list
    parents: np.ndarray       # (J,) int, -1 for the root
    rest_offsets: np.ndarray  # (J, 3) pivot offset from the parent pivot

    def __post_init__(self):
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise BodyConfigError(f"skeleton must have exactly one root, got {len(roots)}")
        for i, p in enumerate(self.parents):
            if p >= i:
                raise BodyConfigError("parents must precede children")

    @property
    def n_joints(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass
class BodyState:
    """beta: per-segment (length, radius) scale pair; theta: per-joint
    axis-angle rotation in radians."""

    beta: np.ndarray   # (J, 2), each entry in [0.5, 2.0]
    theta: np.ndarray  # (J, 3)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.beta.ndim != 2 or self.beta.shape[1] != 2:
            raise BodyConfigError(f"beta must be (J, 2), got {self.beta.shape}")
        if self.theta.shape != (self.beta.shape[0], 3):
            raise BodyConfigError(f"theta must be (J, 3), got {self.theta.shape}")
        if (self.beta < 0.5).any() or (self.beta > 2.0).any():
            raise BodyConfigError("beta entries must lie in [0.5, 2.0]")
        if not np.isfinite(self.theta).all():
            raise BodyConfigError("non-finite rotation")

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "theta": self.theta.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "BodyState":
        return BodyState(np.asarray(d["beta"]), np.asarray(d["theta"]))


def identity_state(n_joints: int) -> BodyState:
    return BodyState(np.ones((n_joints, 2)), np.zeros((n_joints, 3)))


@dataclass
class BodyTemplate:
    mesh: TriMesh
    skeleton: BodySkeleton
    config: BodyConfig
    skin_weights: np.ndarray     # (V, 4) weights, rows sum to 1
    skin_joints: np.ndarray      # (V, 4) joint indices
    atlas_uv: np.ndarray         # (F, 3, 2) per-face-corner uv in [0, 1]^2
    chart_ids: np.ndarray        # (F,) segment index
    segment_of_vertex: np.ndarray  # (V,)
    vertex_axial: np.ndarray     # (V,) coordinate along the segment axis
    vertex_radial: np.ndarray    # (V, 3) offset orthogonal to the axis
    frames: np.ndarray           # (J, 3, 3) rows (e1, e2, dir) per segment
    face_grid: dict = field(default_factory=dict)   # name -> (rows-1, S, 2) face ids
    ring_vidx: dict = field(default_factory=dict)   # name -> (rows, S) vertex ids
    cyl_rows: dict = field(default_factory=dict)    # name -> (first cylinder row, count)
    _normals: np.ndarray | None = None
    _atlas_cache: dict = field(default_factory=dict)

    def vertex_normals(self) -> np.ndarray:
        if self._normals is None:
            self._normals = vertex_normals(self.mesh)
        return self._normals

    def segment_index(self, name: str) -> int:
        return self.skeleton.index(name)


def _segment_frame(direction: np.ndarray) -> np.ndarray:
    """Right-handed orthonormal frame (e1, e2, dir) for a segment axis."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(ref, d)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return np.stack([e1, e2, d])


def _capsule_stations(length: float, radius: float, rings: int):
    """Axial stations (axial coordinate, ring radius) from the proximal cap
    ring next to the pole up to the distal cap ring next to its pole."""
    stations = []
    for i in range(1, rings + 1):  # proximal hemisphere, ends at the base circle
        phi = -np.pi / 2 + (np.pi / 2) * i / rings
        stations.append((radius * np.sin(phi), radius * np.cos(phi)))
    for j in range(1, rings):      # cylinder interior
        stations.append((length * j / rings, radius))
    for i in range(0, rings):      # distal hemisphere from its base circle
        phi = (np.pi / 2) * i / rings
        stations.append((length + radius * np.sin(phi), radius * np.cos(phi)))
    return stations


def build_template(config: BodyConfig) -> BodyTemplate:
    """Deterministic capsule-per-segment body with a 4x4 chart-grid atlas.

    Each segment is a closed 2-manifold shell; shells overlap at joints.
    Atlas uv comes from tessellation indices only, so shape scaling never
    moves charts.
    """
    names = [s.name for s in config.segments]
    if len(set(names)) != len(names):
        raise BodyConfigError("duplicate segment name")
    if len(names) > CHART_GRID * CHART_GRID:
        raise BodyConfigError(f"at most {CHART_GRID * CHART_GRID} segments supported")
    parents = []
    for s in config.segments:
        if s.rings < 3:
            raise BodyConfigError(f"{s.name}: at least 3 rings required, got {s.rings}")
        if s.sides < 8:
            raise BodyConfigError(f"{s.name}: at least 8 sides required, got {s.sides}")
        if s.parent is None:
            parents.append(-1)
        else:
            if s.parent not in names:
                raise BodyConfigError(f"{s.name}: unknown parent {s.parent}")
            parents.append(names.index(s.parent))

    # joint pivots (rest offsets relative to parent pivot)
    offsets = np.zeros((len(names), 3))
    pivots = np.zeros((len(names), 3))
    frames = np.zeros((len(names), 3, 3))
    for j, s in enumerate(config.segments):
        frames[j] = _segment_frame(s.direction)
        if parents[j] < 0:
            offsets[j] = 0.0
            pivots[j] = 0.0
        else:
            p = config.segments[parents[j]]
            along = frames[parents[j]][2] * (s.attach_t * p.length)
            offsets[j] = along + np.asarray(s.attach_offset)
            pivots[j] = pivots[parents[j]] + offsets[j]

    verts, faces, atlas, charts = [], [], [], []
    seg_of_v, v_axial, v_radial = [], [], []
    face_grid, ring_vidx, cyl_rows = {}, {}, {}
    chart_w = 1.0 / CHART_GRID

    for j, s in enumerate(config.segments):
        e1, e2, d = frames[j]
        S, rings = s.sides, s.rings
        base = len(verts)
        cx = (j % CHART_GRID) * chart_w + CHART_MARGIN
        cy = (j // CHART_GRID) * chart_w + CHART_MARGIN
        cw = chart_w - 2 * CHART_MARGIN

        def chart_uv(u_loc, v_loc):
            return (cx + u_loc * cw, cy + v_loc * cw)

        stations = _capsule_stations(s.length, s.radius, rings)
        n_st = len(stations)
        # vertices: proximal pole, station rings, distal pole
        pole1 = len(verts)
        verts.append(pivots[j] - d * s.radius)
        seg_of_v.append(j); v_axial.append(-s.radius); v_radial.append(np.zeros(3))
        grid = np.zeros((n_st, S), dtype=np.int64)
        for i, (a, r) in enumerate(stations):
            for k in range(S):
                ang = 2 * np.pi * k / S
                rad = r * (np.cos(ang) * e1 + np.sin(ang) * e2)
                grid[i, k] = len(verts)
                verts.append(pivots[j] + d * a + rad)
                seg_of_v.append(j); v_axial.append(a); v_radial.append(rad)
        pole2 = len(verts)
        verts.append(pivots[j] + d * (s.length + s.radius))
        seg_of_v.append(j); v_axial.append(s.length + s.radius); v_radial.append(np.zeros(3))

        def add_face(tri, uvs):
            faces.append(tri)
            atlas.append([chart_uv(*t) for t in uvs])
            charts.append(j)

        v_of = lambda i: (i + 1) / (n_st + 1)
        for k in range(S):  # proximal fan, wound outward (normal ~ -dir)
            k2 = (k + 1) % S
            add_face((pole1, grid[0, k2], grid[0, k]),
                     (((k + 0.5) / S, 0.0), ((k + 1) / S, v_of(0)), (k / S, v_of(0))))
        fgrid = np.zeros((n_st - 1, S, 2), dtype=np.int64)
        for i in range(n_st - 1):
            for k in range(S):
                k2 = (k + 1) % S
                A, B, C, D = grid[i, k], grid[i, k2], grid[i + 1, k2], grid[i + 1, k]
                ua, ub = k / S, (k + 1) / S
                fgrid[i, k, 0] = len(faces)
                add_face((A, B, C), ((ua, v_of(i)), (ub, v_of(i)), (ub, v_of(i + 1))))
                fgrid[i, k, 1] = len(faces)
                add_face((A, C, D), ((ua, v_of(i)), (ub, v_of(i + 1)), (ua, v_of(i + 1))))
        for k in range(S):  # distal fan (normal ~ +dir)
            k2 = (k + 1) % S
            add_face((pole2, grid[n_st - 1, k], grid[n_st - 1, k2]),
                     (((k + 0.5) / S, 1.0), (k / S, v_of(n_st - 1)), ((k + 1) / S, v_of(n_st - 1))))
        face_grid[s.name] = fgrid
        ring_vidx[s.name] = grid
        cyl_rows[s.name] = (rings - 1, rings)  # station row of axial 0; quad-row count

    mesh = TriMesh(np.asarray(verts), np.asarray(faces))
    skeleton = BodySkeleton(names, np.asarray(parents), offsets)

    # skin weights: rigid to the segment joint, blended toward the parent
    # joint over the proximal cap and the first part of the cylinder
    V = mesh.n_vertices
    w = np.zeros((V, 4))
    jidx = np.zeros((V, 4), dtype=np.int64)
    seg_of_v = np.asarray(seg_of_v)
    v_axial = np.asarray(v_axial)
    for v in range(V):
        j = seg_of_v[v]
        s = config.segments[j]
        pj = parents[j]
        if pj < 0:
            w[v, 0] = 1.0
            jidx[v, 0] = j
        else:
            t = np.clip((v_axial[v] + s.radius) / (s.radius + 0.3 * s.length), 0.0, 1.0)
            wp = 0.5 * (1.0 - t)
            w[v, 0] = 1.0 - wp
            w[v, 1] = wp
            jidx[v, 0] = j
            jidx[v, 1] = pj

    return BodyTemplate(
        mesh=mesh, skeleton=skeleton, config=config,
        skin_weights=w, skin_joints=jidx,
        atlas_uv=np.asarray(atlas), chart_ids=np.asarray(charts),
        segment_of_vertex=seg_of_v, vertex_axial=v_axial,
        vertex_radial=np.asarray(v_radial), frames=frames,
        face_grid=face_grid, ring_vidx=ring_vidx, cyl_rows=cyl_rows,
    )


# --------------------------------------------------------------------------
# posing


def _axis_angle_matrix(v: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3)
    axis = v / angle
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def _scaled_rest(template: BodyTemplate, state: BodyState):
    """Beta-scaled rest pivots and vertices (pose still identity)."""
    skel = template.skeleton
    segs = template.config.segments
    J = skel.n_joints
    pivots = np.zeros((J, 3))
    offsets = np.zeros((J, 3))
    for j in range(J):
        p = skel.parents[j]
        if p < 0:
            pivots[j] = skel.rest_offsets[j]
            offsets[j] = skel.rest_offsets[j]
        else:
            d_par = template.frames[p][2]
            off = skel.rest_offsets[j]
            axial = np.dot(off, d_par) * d_par
            lateral = off - axial
            offsets[j] = axial * state.beta[p, 0] + lateral * state.beta[p, 1]
            pivots[j] = pivots[p] + offsets[j]

    seg = template.segment_of_vertex
    lengths = np.asarray([s.length for s in segs])[seg]
    bl = state.beta[seg, 0]
    br = state.beta[seg, 1]
    a = template.vertex_axial
    a_clamp = np.clip(a, 0.0, lengths)
    overhang = a - a_clamp
    d = template.frames[seg, 2]
    verts = pivots[seg] + d * (a_clamp * bl + overhang * br)[:, None] \
        + template.vertex_radial * br[:, None]
    return pivots, offsets, verts


def skinning_transforms(template: BodyTemplate, state: BodyState) -> np.ndarray:
    """Per-joint 4x4 rest-to-posed transforms over the beta-scaled rest."""
    skel = template.skeleton
    if state.beta.shape[0] != skel.n_joints:
        raise BodyConfigError(f"state is for {state.beta.shape[0]} joints, "
                              f"skeleton has {skel.n_joints}")
    pivots, offsets, _ = _scaled_rest(template, state)
    J = skel.n_joints
    G = np.zeros((J, 4, 4))
    for j in range(J):
        L = np.eye(4)
        L[:3, :3] = _axis_angle_matrix(state.theta[j])
        L[:3, 3] = offsets[j]
        p = skel.parents[j]
        G[j] = L if p < 0 else G[p] @ L
    M = np.zeros((J, 4, 4))
    for j in range(J):
        G0_inv = np.eye(4)
        G0_inv[:3, 3] = -pivots[j]
        M[j] = G[j] @ G0_inv
    return M


def apply_skinning(points: np.ndarray, weights: np.ndarray, joints: np.ndarray,
                   M: np.ndarray) -> np.ndarray:
    """Linear blend: weighted sum of per-joint rigid transforms of points."""
    out = np.zeros_like(points)
    for c in range(weights.shape[1]):
        w = weights[:, c]
        if not (w > 0).any():
            continue
        Mv = M[joints[:, c]]
        out += w[:, None] * (np.einsum("vij,vj->vi", Mv[:, :3, :3], points) + Mv[:, :3, 3])
    return out


def pose_body(template: BodyTemplate, state: BodyState) -> TriMesh:
    """Beta-scale the rest mesh, then pose with linear blend skinning.
    The identity state reproduces the template exactly."""
    _, _, rest = _scaled_rest(template, state)
    M = skinning_transforms(template, state)
    posed = apply_skinning(rest, template.skin_weights, template.skin_joints, M)
    return template.mesh.with_vertices(posed)


def joint_world_positions(template: BodyTemplate, state: BodyState) -> np.ndarray:
    pivots, offsets, _ = _scaled_rest(template, state)
    M = skinning_transforms(template, state)
    return np.einsum("jab,jb->ja", M[:, :3, :3], pivots) + M[:, :3, 3]


def segment_distal_end(template: BodyTemplate, state: BodyState, name: str) -> np.ndarray:
    """World position of a segment's far end (e.g. the wrist of a lower arm)."""
    j = template.skeleton.index(name)
    s = template.config.segments[j]
    pivots, _, _ = _scaled_rest(template, state)
    M = skinning_transforms(template, state)
    p = pivots[j] + template.frames[j][2] * (s.length * state.beta[j, 0])
    return M[j, :3, :3] @ p + M[j, :3, 3]


# --------------------------------------------------------------------------
# atlas lookups and normal maps


def body_uv_lookup(template: BodyTemplate, anchor: BarycentricPoint):
    """Barycentric interpolation of a face's atlas corner uvs.

    Returns (uv (2,), chart_id).
    """
    f = anchor.face_index
    if f < 0 or f >= len(template.atlas_uv):
        raise MeshError(f"face index {f} out of range")
    uv = anchor.weights @ template.atlas_uv[f]
    return uv, int(template.chart_ids[f])


def body_uv_lookup_batch(template: BodyTemplate, faces: np.ndarray, weights: np.ndarray):
    uv = np.einsum("vi,vij->vj", weights, template.atlas_uv[faces])
    return uv, template.chart_ids[faces]


def rasterize_atlas(template: BodyTemplate, resolution: int):
    """Per-texel (face id, barycentric) tables of the atlas; cached. Texels in
    gutters have face id -1."""
    key = int(resolution)
    if key not in template._atlas_cache:
        mask, owner, bary = rasterize_triangles(template.atlas_uv, resolution, want_bary=True)
        template._atlas_cache[key] = (mask, owner, bary)
    return template._atlas_cache[key]


def segment_anchor(template: BodyTemplate, name: str, u_frac: float, t_frac: float) -> BarycentricPoint:
    """Barycentric point on a segment's cylindrical surface at azimuth
    fraction u_frac (of a full turn) and axial fraction t_frac in [0, 1]."""
    j = template.segment_index(name)
    s = template.config.segments[j]
    S = s.sides
    row0, n_rows = template.cyl_rows[name]
    row_f = np.clip(t_frac, 0.0, 1.0) * n_rows
    i0 = min(int(row_f), n_rows - 1)
    ft = row_f - i0
    col_f = (u_frac % 1.0) * S
    k0 = int(col_f) % S
    fu = col_f - k0
    fa, fb = template.face_grid[name][row0 + i0, k0]
    if fu >= ft:
        return BarycentricPoint(int(fa), np.array([1 - fu, fu - ft, ft]))
    return BarycentricPoint(int(fb), np.array([1 - ft, fu, ft - fu]))


def front_azimuth_fraction(template: BodyTemplate, name: str) -> float:
    """Azimuth fraction at which a segment's radial direction points along
    world +z (the body's forward axis)."""
    j = template.segment_index(name)
    e1, e2, d = template.frames[j]
    fwd = np.array([0.0, 0.0, 1.0])
    f = fwd - np.dot(fwd, d) * d
    n = np.linalg.norm(f)
    if n < 1e-9:
        return 0.0
    f /= n
    ang = np.arctan2(np.dot(f, e2), np.dot(f, e1))
    return (ang / (2 * np.pi)) % 1.0


def render_normal_map(template: BodyTemplate, posed: TriMesh, resolution: int) -> UVMap:
    """Rasterize each atlas triangle and store posed-space unit normals
    remapped to [0, 1] via (n + 1) / 2; the mask marks covered texels."""
    if posed.n_vertices != template.mesh.n_vertices:
        raise MeshError("posed mesh does not match the template connectivity")
    mask, owner, bary = rasterize_atlas(template, resolution)
    vn = vertex_normals(posed)
    channels = np.zeros((3, resolution, resolution))
    ii, jj = np.nonzero(mask)
    f = owner[ii, jj]
    corners = vn[template.mesh.faces[f]]             # (Q, 3, 3)
    n = np.einsum("qi,qij->qj", bary[ii, jj], corners)
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    vals = (n + 1.0) / 2.0
    for c in range(3):
        channels[c, ii, jj] = vals[:, c]
    return UVMap(resolution, channels, mask, CaseTag.CASE1)
