"""Indexed triangle meshes, barycentric surface anchors, and the mesh error metric.

All coordinates are meters; the vertex-to-vertex metric reports millimeters.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Mesh data violates a structural invariant."""


@dataclass
class TriMesh:
    """Indexed triangle mesh with optional per-vertex UV coordinates.

    vertices: (V, 3) float positions
    faces: (F, 3) int vertex indices, all three distinct
    per_vertex_uv: optional (V, 2) coordinates in [0, 1]^2
    """

    vertices: np.ndarray
    faces: np.ndarray
    per_vertex_uv: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        self.faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.size and (self.faces.ndim != 2 or self.faces.shape[1] != 3):
            raise MeshError(f"faces must be (F, 3), got {self.faces.shape}")
        if self.faces.size == 0:
            self.faces = self.faces.reshape(0, 3)
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinate")
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise MeshError("face index out of range")
            f = self.faces
            if ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
                raise MeshError("degenerate face (repeated vertex index)")
        if self.per_vertex_uv is not None:
            uv = np.ascontiguousarray(np.asarray(self.per_vertex_uv, dtype=np.float64))
            if uv.shape != (len(self.vertices), 2):
                raise MeshError(f"per_vertex_uv must be (V, 2), got {uv.shape}")
            if not np.isfinite(uv).all():
                raise MeshError("non-finite uv coordinate")
            if uv.min() < -1e-9 or uv.max() > 1 + 1e-9:
                raise MeshError("per_vertex_uv outside [0, 1]^2")
            self.per_vertex_uv = uv

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def copy(self) -> "TriMesh":
        uv = None if self.per_vertex_uv is None else self.per_vertex_uv.copy()
        return TriMesh(self.vertices.copy(), self.faces.copy(), uv)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity, new vertex positions."""
        uv = None if self.per_vertex_uv is None else self.per_vertex_uv.copy()
        return TriMesh(np.asarray(vertices, dtype=np.float64), self.faces.copy(), uv)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def edges(self) -> np.ndarray:
        """(E, 2) unique undirected edges, sorted pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def vertex_adjacency(self) -> list[np.ndarray]:
        """Per-vertex neighbor index arrays (uniform Laplacian stencil)."""
        neigh = [[] for _ in range(self.n_vertices)]
        for a, b in self.edges():
            neigh[a].append(b)
            neigh[b].append(a)
        return [np.asarray(sorted(n), dtype=np.int64) for n in neigh]

    def is_closed(self) -> bool:
        """True when every edge is shared by exactly two faces."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool((counts == 2).all())


@dataclass
class BarycentricPoint:
    """A point on a mesh surface: face index plus barycentric weights."""

    face_index: int
    weights: np.ndarray  # (3,) nonnegative, summing to 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (3,):
            raise MeshError(f"weights must be (3,), got {self.weights.shape}")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise MeshError(f"weights sum {self.weights.sum()} != 1")
        if (self.weights < -1e-12).any() or (self.weights > 1 + 1e-12).any():
            raise MeshError("weights outside [0, 1]")

    def point(self, mesh: TriMesh) -> np.ndarray:
        return self.weights @ mesh.vertices[mesh.faces[self.face_index]]

    def interpolate(self, per_vertex: np.ndarray, faces: np.ndarray) -> np.ndarray:
        return self.weights @ per_vertex[faces[self.face_index]]


@dataclass
class Correspondence:
    """A garment-point-to-body anchor: the surface point whose normal ray
    best explains the query, with the signed travel along that ray and the
    leftover orthogonal offset."""

    anchor: BarycentricPoint
    normal_distance: float  # signed, meters
    residual: float         # orthogonal offset, meters, >= 0

    def __post_init__(self):
        if self.residual < 0:
            raise MeshError("residual must be nonnegative")

    def reconstruct(self, mesh: TriMesh, vertex_normals_arr: np.ndarray) -> np.ndarray:
        """Foot of the query on the anchor's normal ray."""
        p = self.anchor.point(mesh)
        n = self.anchor.interpolate(vertex_normals_arr, mesh.faces)
        n = n / np.linalg.norm(n)
        return p + self.normal_distance * n


def face_normals(mesh: TriMesh, normalize: bool = True) -> np.ndarray:
    """Per-face normals; unnormalized vectors have magnitude 2 * area."""
    tri = mesh.triangles()
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    if normalize:
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        lens[lens == 0] = 1.0
        n = n / lens
    return n


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length.

    Vertices referenced by no face get (0, 0, 1) and trigger a warning.
    """
    fn = face_normals(mesh, normalize=False)  # area-weighted by magnitude
    acc = np.zeros_like(mesh.vertices)
    for c in range(3):
        np.add.at(acc, mesh.faces[:, c], fn)
    lens = np.linalg.norm(acc, axis=1)
    isolated = lens < 1e-20
    if isolated.any():
        warnings.warn(f"{int(isolated.sum())} isolated vertices assigned normal (0, 0, 1)")
        acc[isolated] = (0.0, 0.0, 1.0)
        lens[isolated] = 1.0
    return acc / lens[:, None]


def vertex_to_vertex_error(a: TriMesh, b: TriMesh) -> float:
    """Mean per-vertex Euclidean distance between index-corresponding meshes,
    in millimeters."""
    if a.n_vertices != b.n_vertices:
        raise MeshError(f"vertex count mismatch: {a.n_vertices} vs {b.n_vertices}")
    d = np.linalg.norm(a.vertices - b.vertices, axis=1)
    return float(d.mean() * 1000.0)
