import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from garmentspace.mesh import TriMesh
from garmentspace.obj_io import ObjParseError, load_obj, save_obj
from garmentspace.primitives import unit_cube


def test_minimal_triangle(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_obj(path)
    assert m.n_vertices == 3 and m.n_faces == 1


def test_quad_fan_triangulation(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    m = load_obj(path)
    assert m.n_faces == 2
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_index_out_of_range(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(ObjParseError) as exc:
        load_obj(path)
    assert exc.value.lineno == 4


def test_cube_round_trip(tmp_path):
    cube = unit_cube()
    path = tmp_path / "cube.obj"
    save_obj(cube, path)
    again = load_obj(path)
    assert np.abs(again.vertices - cube.vertices).max() < 1e-6
    assert np.array_equal(again.faces, cube.faces)


def test_uv_round_trip(tmp_path):
    cube = unit_cube()
    rng = np.random.default_rng(0)
    cube.per_vertex_uv = rng.uniform(0, 1, (8, 2))
    path = tmp_path / "uv.obj"
    save_obj(cube, path)
    again = load_obj(path)
    assert again.per_vertex_uv is not None
    assert np.abs(again.per_vertex_uv - cube.per_vertex_uv).max() < 1e-6


def test_unwritable_path():
    with pytest.raises(OSError):
        save_obj(unit_cube(), "/nonexistent-dir/xyzzy/cube.obj")


def test_round_trip_idempotent(tmp_path):
    cube = unit_cube()
    p1, p2 = tmp_path / "a.obj", tmp_path / "b.obj"
    save_obj(cube, p1)
    save_obj(load_obj(p1), p2)
    assert p1.read_text() == p2.read_text()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_random_mesh_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    nv = rng.integers(3, 30)
    verts = rng.normal(0, 1, (nv, 3))
    faces = []
    for _ in range(rng.integers(1, 40)):
        f = rng.choice(nv, 3, replace=False)
        faces.append(f)
    m = TriMesh(verts, np.asarray(faces))
    path = tmp_path_factory.mktemp("objs") / "m.obj"
    save_obj(m, path)
    again = load_obj(path)
    assert np.abs(again.vertices - m.vertices).max() < 1e-6
    assert np.array_equal(again.faces, m.faces)
