"""Procedural garments over the capsule body, plus posed-pair dataset
generation with a deterministic train/test split.

Garment connectivity depends only on (category, tessellation constants):
style parameters slide vertices along the body surface but never re-index
faces, so one garment's maps stay mask-compatible across styles.
"""
from __future__ import annotations

import enum
import json
import hashlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .aabb import AABBTree
from .body import (BodyState, BodyTemplate, apply_skinning, front_azimuth_fraction,
                   identity_state, pose_body, segment_anchor, skinning_transforms)
from .mesh import TriMesh
from .obj_io import save_obj


class Category(str, enum.Enum):
    UPPER = "upper"
    PANTS = "pants"
    SKIRT = "skirt"


class GarmentSpecError(ValueError):
    pass


# style sampling ranges used by the dataset generator; skirt lengths stay
# short enough that the cylindrical chart of the longest skirt fits the unit
# uv square at the default waist height
STYLE_RANGES = {
    Category.UPPER: {"sleeve_or_leg_length": (0.1, 1.0), "opening_gap": (0.0, 0.5),
                     "looseness": (0.012, 0.038)},
    Category.PANTS: {"sleeve_or_leg_length": (0.2, 1.0), "looseness": (0.01, 0.028)},
    Category.SKIRT: {"skirt_length": (0.15, 0.42), "looseness": (0.01, 0.06)},
}

VALID_RANGES = {
    "sleeve_or_leg_length": (0.0, 1.0),
    "skirt_length": (0.1, 0.5),
    "opening_gap": (0.0, 0.6),
    "looseness": (0.005, 0.1),
}

# tessellation constants; one connectivity per category
TORSO_ROWS, TORSO_COLS = 8, 19
SLEEVE_ROWS, SLEEVE_COLS = 6, 11
LEG_ROWS, LEG_COLS = 10, 13
SKIRT_ROWS, SKIRT_COLS = 10, 25

SKIRT_Y0 = 0.2            # cylindrical-chart reference height above the root joint
SKIRT_TOP_INSET = 0.05    # skirt waist sits this far below y0
SKIRT_WAIST_RADIUS = 0.125


@dataclass
class GarmentSpec:
    category: Category
    sleeve_or_leg_length: float = 0.8
    skirt_length: float = 0.3
    opening_gap: float = 0.0
    looseness: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.category = Category(self.category)
        for name in ("sleeve_or_leg_length", "skirt_length", "opening_gap", "looseness"):
            lo, hi = VALID_RANGES[name]
            v = getattr(self, name)
            if not (lo - 1e-12 <= v <= hi + 1e-12):
                raise GarmentSpecError(f"{name}={v} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["category"] = self.category.value
        return d

    @staticmethod
    def from_dict(d: dict) -> "GarmentSpec":
        return GarmentSpec(**d)


def skirt_waist_height() -> float:
    return SKIRT_Y0 - SKIRT_TOP_INSET


def _grid_faces(rows: int, cols: int, base: int) -> list:
    faces = []
    for i in range(rows - 1):
        for k in range(cols - 1):
            a = base + i * cols + k
            b = a + 1
            c = a + cols + 1
            d = a + cols
            faces.append((a, b, c))
            faces.append((a, c, d))
    return faces


def _tube_on_segments(template: BodyTemplate, path: list, rows: int, cols: int,
                      u_start: float, u_span: float, t_lo: float, t_hi: float,
                      offset: float):
    """Vertices p(anchor) + offset * n(anchor) on a grid over body segments.

    path: segment names chained along the axial direction; the axial
    parameter in [0, 1] is split evenly across them.
    """
    vn = template.vertex_normals()
    mesh = template.mesh
    pts = np.zeros((rows * cols, 3))
    n_seg = len(path)
    for i in range(rows):
        t = t_lo + (t_hi - t_lo) * i / (rows - 1)
        si = min(int(t * n_seg), n_seg - 1)
        t_local = t * n_seg - si
        for k in range(cols):
            u = u_start + u_span * k / (cols - 1)
            anchor = segment_anchor(template, path[si], u, t_local)
            p = anchor.point(mesh)
            n = anchor.interpolate(vn, mesh.faces)
            n = n / np.linalg.norm(n)
            pts[i * cols + k] = p + offset * n
    return pts


def garment_part_slices(category: Category) -> dict:
    """Vertex ranges of each garment part, in emission order."""
    category = Category(category)
    if category == Category.UPPER:
        nt = TORSO_ROWS * TORSO_COLS
        ns = SLEEVE_ROWS * SLEEVE_COLS
        return {"torso": (0, nt), "sleeve_l": (nt, ns), "sleeve_r": (nt + ns, ns)}
    if category == Category.PANTS:
        nl = LEG_ROWS * LEG_COLS
        return {"leg_l": (0, nl), "leg_r": (nl, nl)}
    return {"skirt": (0, SKIRT_ROWS * SKIRT_COLS)}


def generate_garment(spec: GarmentSpec, template: BodyTemplate) -> TriMesh:
    """Build the T-pose garment for a spec.

    UPPER and PANTS are offset surfaces of the relevant body segments at
    distance `looseness` along interpolated surface normals; the sleeve/leg
    extent scales with `sleeve_or_leg_length` and UPPER tubes leave an
    angular gap of `opening_gap` radians either side of the body's forward
    axis. SKIRT is a flared cylinder sheet hanging from the waist.
    """
    spec = GarmentSpec(**spec.to_dict()) if not isinstance(spec, GarmentSpec) else spec
    d = spec.looseness
    verts_parts = []
    faces = []
    if spec.category == Category.UPPER:
        uf = front_azimuth_fraction(template, "torso")
        # chord interpolation and normal tilt on the faceted capsule shift a
        # vertex's azimuth a little; the inset keeps the cut sector clear
        inset = 0.0 if spec.opening_gap == 0 else 0.06
        gap_frac = (spec.opening_gap + inset) / (2 * np.pi)
        torso = _tube_on_segments(template, ["torso"], TORSO_ROWS, TORSO_COLS,
                                  u_start=uf + gap_frac, u_span=1.0 - 2 * gap_frac,
                                  t_lo=0.10, t_hi=0.75, offset=d)
        faces += _grid_faces(TORSO_ROWS, TORSO_COLS, 0)
        verts_parts.append(torso)
        base = TORSO_ROWS * TORSO_COLS
        t_hi = 0.06 + 0.9 * spec.sleeve_or_leg_length
        for side in ("l", "r"):
            sleeve = _tube_on_segments(template, [f"upper_arm_{side}", f"lower_arm_{side}"],
                                       SLEEVE_ROWS, SLEEVE_COLS,
                                       u_start=0.0, u_span=1.0,
                                       t_lo=0.03, t_hi=t_hi, offset=d)
            faces += _grid_faces(SLEEVE_ROWS, SLEEVE_COLS, base)
            verts_parts.append(sleeve)
            base += SLEEVE_ROWS * SLEEVE_COLS
    elif spec.category == Category.PANTS:
        base = 0
        t_hi = 0.06 + 0.9 * spec.sleeve_or_leg_length
        for side in ("l", "r"):
            leg = _tube_on_segments(template, [f"upper_leg_{side}", f"lower_leg_{side}"],
                                    LEG_ROWS, LEG_COLS,
                                    u_start=0.0, u_span=1.0,
                                    t_lo=0.02, t_hi=t_hi, offset=d)
            faces += _grid_faces(LEG_ROWS, LEG_COLS, base)
            verts_parts.append(leg)
            base += LEG_ROWS * LEG_COLS
    else:  # SKIRT: cylinder sheet, radius grows linearly downward
        top = skirt_waist_height()
        flare = 4.0 * spec.looseness
        pts = np.zeros((SKIRT_ROWS * SKIRT_COLS, 3))
        for i in range(SKIRT_ROWS):
            depth = spec.skirt_length * i / (SKIRT_ROWS - 1)
            y = top - depth
            r = SKIRT_WAIST_RADIUS + spec.looseness + flare * depth
            for k in range(SKIRT_COLS):
                ang = 2 * np.pi * k / (SKIRT_COLS - 1)
                pts[i * SKIRT_COLS + k] = (r * np.sin(ang), y, r * np.cos(ang))
        faces += _grid_faces(SKIRT_ROWS, SKIRT_COLS, 0)
        verts_parts.append(pts)
    return TriMesh(np.concatenate(verts_parts), np.asarray(faces))


# --------------------------------------------------------------------------
# draping


def drape_pose(garment: TriMesh, template: BodyTemplate, state: BodyState,
               seed: int = 0, smoothing_iters: int = 10, smoothing_lambda: float = 0.5,
               sag_coeff: float = 0.3, margin: float = 0.003) -> TriMesh:
    """Procedural stand-in for simulated draping: skin each garment vertex by
    its nearest body vertex's weights, smooth, sag by local looseness, then
    push vertices out of the posed body."""
    from .animator import resolve_collisions  # animator depends on nothing here

    gv = garment.vertices
    bv = template.mesh.vertices
    d2 = ((gv[:, None, :] - bv[None, :, :]) ** 2).sum(-1)
    nearest = np.argmin(d2, axis=1)
    local_loose = np.sqrt(d2[np.arange(len(gv)), nearest])

    M = skinning_transforms(template, state)
    skinned = apply_skinning(gv, template.skin_weights[nearest],
                             template.skin_joints[nearest], M)

    if smoothing_iters > 0:
        adj = garment.vertex_adjacency()
        for _ in range(smoothing_iters):
            means = np.stack([skinned[a].mean(axis=0) if len(a) else skinned[i]
                              for i, a in enumerate(adj)])
            skinned = skinned + smoothing_lambda * (means - skinned)

    if sag_coeff > 0:
        rng = np.random.default_rng(seed)
        jitter = 1.0 + 0.2 * rng.uniform(-1.0, 1.0, len(gv))
        dist_root = np.linalg.norm(gv, axis=1)  # root pivot at the origin
        skinned[:, 1] -= sag_coeff * local_loose * dist_root * jitter

    posed_body = pose_body(template, state)
    tree = AABBTree(posed_body)
    result = resolve_collisions(garment.with_vertices(skinned), posed_body, tree, margin)
    return result.mesh


# --------------------------------------------------------------------------
# pose bank and dataset generation

def pose_bank(skeleton) -> list:
    """Twelve preset poses as (name, theta) pairs."""
    J = skeleton.n_joints
    i = skeleton.index

    def theta(**kw):
        t = np.zeros((J, 3))
        for name, rot in kw.items():
            t[i(name)] = rot
        return t

    hp = np.pi / 2
    return [
        ("t_pose", theta()),
        ("arms_down_60", theta(upper_arm_l=(0, 0, -1.0), upper_arm_r=(0, 0, 1.0))),
        ("arms_down_30", theta(upper_arm_l=(0, 0, -0.5), upper_arm_r=(0, 0, 0.5))),
        ("left_arm_up", theta(upper_arm_l=(0, 0, hp), upper_arm_r=(0, 0, 1.0))),
        ("right_arm_up", theta(upper_arm_r=(0, 0, -hp), upper_arm_l=(0, 0, -1.0))),
        ("arms_forward", theta(upper_arm_l=(0, -hp, 0), upper_arm_r=(0, hp, 0))),
        ("legs_apart", theta(upper_leg_l=(0, 0, 0.3), upper_leg_r=(0, 0, -0.3),
                             upper_arm_l=(0, 0, -0.7), upper_arm_r=(0, 0, 0.7))),
        ("walking", theta(upper_leg_l=(0.4, 0, 0), upper_leg_r=(-0.4, 0, 0),
                          lower_leg_l=(-0.3, 0, 0),
                          upper_arm_l=(-0.3, 0, -0.9), upper_arm_r=(0.3, 0, 0.9))),
        ("sitting", theta(upper_leg_l=(hp, 0, 0), upper_leg_r=(hp, 0, 0),
                          lower_leg_l=(-hp, 0, 0), lower_leg_r=(-hp, 0, 0),
                          upper_arm_l=(0, 0, -1.1), upper_arm_r=(0, 0, 1.1))),
        ("elbows_bent", theta(upper_arm_l=(0, 0, -0.6), upper_arm_r=(0, 0, 0.6),
                              lower_arm_l=(0, -hp, 0), lower_arm_r=(0, hp, 0))),
        ("torso_twist", theta(torso=(0, 0.4, 0),
                              upper_arm_l=(0, 0, -0.8), upper_arm_r=(0, 0, 0.8))),
        ("lean", theta(torso=(0.25, 0, 0), head=(0.2, 0, 0),
                       upper_arm_l=(0, 0, -0.8), upper_arm_r=(0, 0, 0.8),
                       upper_leg_l=(0, 0, 0.15), upper_leg_r=(0, 0, -0.15))),
    ]


@dataclass
class DatasetSample:
    spec: GarmentSpec
    tpose_garment: TriMesh
    body_state: BodyState
    posed_garment: TriMesh
    split: str  # TRAIN or TEST

    def __post_init__(self):
        if self.tpose_garment.n_vertices != self.posed_garment.n_vertices or \
                not np.array_equal(self.tpose_garment.faces, self.posed_garment.faces):
            raise GarmentSpecError("posed and T-pose garments must share connectivity")


def sample_spec(category: Category, rng: np.random.Generator, seed: int) -> GarmentSpec:
    ranges = STYLE_RANGES[Category(category)]
    kw = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in ranges.items()}
    return GarmentSpec(category=Category(category), seed=seed, **kw)


def sample_state(skeleton, bank, index: int, rng: np.random.Generator) -> BodyState:
    _, theta = bank[index % len(bank)]
    theta = theta + rng.uniform(-0.2, 0.2, theta.shape)
    beta = np.clip(1.0 + rng.uniform(-0.1, 0.1, (skeleton.n_joints, 2)), 0.5, 2.0)
    return BodyState(beta, theta)


def n_test_samples(count: int) -> int:
    """Number of TEST samples: the last 5 percent, rounded up."""
    return int(np.ceil(count * 0.05))


def generate_dataset(count: int, seed: int, out_dir, category: Category,
                     template: BodyTemplate) -> dict:
    """Write `count` (T-pose, posed) garment pairs plus a manifest.

    The split is deterministic: the last ceil(5%) samples by index are TEST.
    Identical (count, seed, category) produce byte-identical manifests.
    """
    if count < 20:
        raise GarmentSpecError("dataset needs at least 20 samples")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bank = pose_bank(template.skeleton)
    n_test = n_test_samples(count)
    entries = []
    for idx in range(count):
        rng = np.random.default_rng([seed, idx])
        spec = sample_spec(category, rng, seed=idx)
        state = sample_state(template.skeleton, bank, idx, rng)
        tpose = generate_garment(spec, template)
        posed = drape_pose(tpose, template, state, seed=idx)
        split = "TEST" if idx >= count - n_test else "TRAIN"
        sdir = out / f"sample_{idx:04d}"
        sdir.mkdir(exist_ok=True)
        save_obj(tpose, sdir / "tpose.obj")
        save_obj(posed, sdir / "posed.obj")
        meta = {"spec": spec.to_dict(), "body_state": state.to_dict(),
                "split": split, "pose_preset": bank[idx % len(bank)][0]}
        with open(sdir / "sample.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        entries.append({"dir": sdir.name, "split": split,
                        "files": ["tpose.obj", "posed.obj", "sample.json"],
                        **meta})
    manifest = {"category": Category(category).value, "count": count, "seed": seed,
                "n_train": count - n_test, "n_test": n_test, "samples": entries}
    text = json.dumps(manifest, indent=2, sort_keys=True)
    with open(out / "manifest.json", "w") as fh:
        fh.write(text)
    manifest["_hash"] = hashlib.sha256(text.encode()).hexdigest()
    return manifest


def load_dataset(manifest_path) -> list:
    """Read samples back as DatasetSample objects."""
    from .obj_io import load_obj

    root = Path(manifest_path).parent
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    samples = []
    for e in manifest["samples"]:
        sdir = root / e["dir"]
        samples.append(DatasetSample(
            spec=GarmentSpec.from_dict(e["spec"]),
            tpose_garment=load_obj(sdir / "tpose.obj"),
            body_state=BodyState.from_dict(e["body_state"]),
            posed_garment=load_obj(sdir / "posed.obj"),
            split=e["split"],
        ))
    return samples
