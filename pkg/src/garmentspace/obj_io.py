"""ASCII Wavefront OBJ reading and writing (v / vt / f records only)."""
from __future__ import annotations

import numpy as np

from .mesh import MeshError, TriMesh


class ObjParseError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


def _face_vertex(token: str, n_v: int, n_vt: int, path, lineno):
    """Parse one face corner token 'v', 'v/vt', 'v//vn' or 'v/vt/vn'."""
    parts = token.split("/")
    try:
        vi = int(parts[0])
    except ValueError:
        raise ObjParseError(path, lineno, f"bad vertex index {parts[0]!r}")
    if vi < 1 or vi > n_v:
        raise ObjParseError(path, lineno, f"vertex index {vi} out of range 1..{n_v}")
    ti = None
    if len(parts) > 1 and parts[1]:
        try:
            ti = int(parts[1])
        except ValueError:
            raise ObjParseError(path, lineno, f"bad uv index {parts[1]!r}")
        if ti < 1 or ti > n_vt:
            raise ObjParseError(path, lineno, f"uv index {ti} out of range 1..{n_vt}")
    return vi - 1, None if ti is None else ti - 1


def load_obj(path) -> TriMesh:
    """Load an ASCII OBJ file. Quads and larger polygons are fan-triangulated;
    vt records populate per_vertex_uv (last assignment wins per vertex)."""
    verts, uvs, faces = [], [], []
    face_uv_idx = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            kind = tokens[0]
            if kind == "v":
                if len(tokens) < 4:
                    raise ObjParseError(path, lineno, "vertex needs 3 coordinates")
                try:
                    verts.append([float(t) for t in tokens[1:4]])
                except ValueError:
                    raise ObjParseError(path, lineno, "bad vertex coordinate")
            elif kind == "vt":
                if len(tokens) < 3:
                    raise ObjParseError(path, lineno, "vt needs 2 coordinates")
                try:
                    uvs.append([float(t) for t in tokens[1:3]])
                except ValueError:
                    raise ObjParseError(path, lineno, "bad uv coordinate")
            elif kind == "f":
                corners = [_face_vertex(t, len(verts), len(uvs), path, lineno)
                           for t in tokens[1:]]
                if len(corners) < 3:
                    raise ObjParseError(path, lineno, "face needs at least 3 vertices")
                for i in range(1, len(corners) - 1):  # fan triangulation
                    tri = (corners[0], corners[i], corners[i + 1])
                    faces.append([c[0] for c in tri])
                    face_uv_idx.append([c[1] for c in tri])
            # other record kinds (vn, o, g, s, usemtl, ...) are ignored
    if not verts:
        raise ObjParseError(path, 0, "no vertices")
    per_vertex_uv = None
    if uvs and any(any(t is not None for t in tri) for tri in face_uv_idx):
        uv_arr = np.zeros((len(verts), 2))
        uvs = np.asarray(uvs, dtype=np.float64)
        for tri, tuv in zip(faces, face_uv_idx):
            for vi, ti in zip(tri, tuv):
                if ti is not None:
                    uv_arr[vi] = uvs[ti]
        per_vertex_uv = np.clip(uv_arr, 0.0, 1.0)
    try:
        return TriMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64).reshape(-1, 3),
                       per_vertex_uv)
    except MeshError as e:
        raise ObjParseError(path, 0, str(e))


def save_obj(mesh: TriMesh, path) -> None:
    """Write mesh as ASCII OBJ; per-vertex uv emitted as parallel vt records."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    has_uv = mesh.per_vertex_uv is not None
    if has_uv:
        for t in mesh.per_vertex_uv:
            lines.append(f"vt {t[0]:.8f} {t[1]:.8f}")
    for f in mesh.faces:
        if has_uv:
            lines.append(f"f {f[0]+1}/{f[0]+1} {f[1]+1}/{f[1]+1} {f[2]+1}/{f[2]+1}")
        else:
            lines.append(f"f {f[0]+1} {f[1]+1} {f[2]+1}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
