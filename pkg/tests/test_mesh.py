import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from garmentspace.mesh import (BarycentricPoint, MeshError, TriMesh, face_normals,
                               vertex_normals, vertex_to_vertex_error)
from garmentspace.primitives import icosphere, square_plane, unit_cube


def test_trimesh_invariants():
    with pytest.raises(MeshError):
        TriMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))  # index out of range
    with pytest.raises(MeshError):
        TriMesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))  # repeated index
    with pytest.raises(MeshError):
        TriMesh(np.array([[0, 0, np.nan]]), np.zeros((0, 3), dtype=int))


def test_vertex_normals_planar():
    plane = square_plane()
    n = vertex_normals(plane)
    assert np.allclose(n, [0, 0, 1])


def test_vertex_normals_single_triangle():
    m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), np.array([[0, 1, 2]]))
    n = vertex_normals(m)
    fn = face_normals(m)[0]
    assert np.allclose(n, fn)


def test_vertex_normals_icosphere_radial():
    sph = icosphere(2)
    n = vertex_normals(sph)
    radial = sph.vertices / np.linalg.norm(sph.vertices, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(np.sum(n * radial, axis=1), -1, 1)))
    assert ang.max() < 2.0


def test_isolated_vertex_warns():
    m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5.0]]),
                np.array([[0, 1, 2]]))
    with pytest.warns(UserWarning):
        n = vertex_normals(m)
    assert np.allclose(n[3], [0, 0, 1])


def test_v2v_error():
    cube = unit_cube()
    assert vertex_to_vertex_error(cube, cube) == 0.0
    shifted = cube.with_vertices(cube.vertices + [0.001, 0, 0])
    assert vertex_to_vertex_error(cube, shifted) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(MeshError):
        vertex_to_vertex_error(cube, square_plane())


def test_barycentric_point_validation():
    with pytest.raises(MeshError):
        BarycentricPoint(0, np.array([0.5, 0.5, 0.5]))
    with pytest.raises(MeshError):
        BarycentricPoint(0, np.array([1.5, -0.5, 0.0]))
    b = BarycentricPoint(0, np.array([0.25, 0.5, 0.25]))
    plane = square_plane()
    p = b.point(plane)
    assert np.isfinite(p).all()


def test_edges_and_closed():
    cube = unit_cube()
    assert len(cube.edges()) == 18  # 8 vertices, 12 faces, Euler: E = V + F - 2
    assert cube.is_closed()
    assert not square_plane().is_closed()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_v2v_translation_property(seed):
    rng = np.random.default_rng(seed)
    sph = icosphere(0)
    shift = rng.normal(0, 0.1, 3)
    moved = sph.with_vertices(sph.vertices + shift)
    expect = np.linalg.norm(shift) * 1000
    assert vertex_to_vertex_error(sph, moved) == pytest.approx(expect, rel=1e-9)
