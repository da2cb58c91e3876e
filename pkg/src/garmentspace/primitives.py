"""Small procedural meshes used by tests, scripts and docs."""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def unit_cube(center=(0.0, 0.0, 0.0), size=1.0) -> TriMesh:
    """Axis-aligned cube, 8 vertices / 12 triangles, outward orientation."""
    c = np.asarray(center, dtype=np.float64)
    h = size / 2.0
    corners = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    # index bits: x*4 + y*2 + z
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, cc, d in quads:
        faces.append([a, b, cc])
        faces.append([a, cc, d])
    return TriMesh(corners + c, np.asarray(faces))


def square_plane(size=1.0, z=0.0) -> TriMesh:
    """Unit square in the z-plane, 2 triangles, normal +z."""
    h = size / 2.0
    v = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(v, f)


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    """Icosahedron refined by edge midpoint subdivision, projected to a sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh(np.asarray(verts) * radius, np.asarray(faces))
