import numpy as np
import pytest

from posetransfer.mesh import (
    Mesh,
    MeshError,
    ObjParseError,
    edge_set,
    graph_operator,
    load_obj,
    mesh_height,
    normalize_vertices,
    save_obj,
    vertex_features,
    vertex_normals,
)
from posetransfer.synth import CharacterSpec, generate_character

from conftest import random_rotation


# ---- container validation ---------------------------------------------

def test_mesh_rejects_out_of_range_face():
    with pytest.raises(MeshError):
        Mesh(vertices=np.zeros((3, 3)), faces=[[0, 1, 3]])


def test_mesh_rejects_repeated_vertex_in_face():
    with pytest.raises(MeshError):
        Mesh(vertices=np.eye(3), faces=[[0, 1, 1]])


def test_mesh_rejects_empty_faces():
    with pytest.raises(MeshError):
        Mesh(vertices=np.eye(3), faces=np.zeros((0, 3), dtype=int))


def test_mesh_rejects_too_few_vertices():
    with pytest.raises(MeshError):
        Mesh(vertices=np.zeros((2, 3)), faces=[[0, 1, 0]])


# ---- OBJ I/O -----------------------------------------------------------

def test_load_obj_minimal(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_obj(p)
    assert m.n_vertices == 3
    assert m.n_faces == 1
    assert m.faces.tolist() == [[0, 1, 2]]


def test_load_obj_fan_triangulates_quad(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    m = load_obj(p)
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_load_obj_out_of_range_index(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n")
    with pytest.raises(ObjParseError) as exc:
        load_obj(p)
    assert exc.value.line == 4


def test_load_obj_negative_and_slash_indices(tmp_path):
    p = tmp_path / "rel.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3/1/1 -2/2/1 -1/3/1\n")
    m = load_obj(p)
    assert m.faces.tolist() == [[0, 1, 2]]


def test_load_obj_parse_error_carries_line_number(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(ObjParseError) as exc:
        load_obj(p)
    assert exc.value.line == 2


def test_obj_round_trip(tmp_path, tetrahedron):
    rng = np.random.default_rng(0)
    mesh = tetrahedron.with_vertices(rng.normal(size=(4, 3)))
    p = tmp_path / "m.obj"
    save_obj(mesh, p)
    back = load_obj(p)
    assert np.abs(back.vertices - mesh.vertices).max() < 1e-6
    assert (back.faces == mesh.faces).all()


def test_save_obj_precision(tmp_path, triangle):
    mesh = triangle.with_vertices([[0.1234567, 0, 0], [1, 0, 0], [0, 1, 0]])
    p = tmp_path / "m.obj"
    save_obj(mesh, p)
    assert "0.1234567" in p.read_text()


# ---- normals and features ---------------------------------------------

def test_planar_triangle_normals(triangle):
    n = vertex_normals(triangle)
    assert np.abs(n - [0.0, 0.0, 1.0]).max() < 1e-12


def test_isolated_vertex_gets_zero_normal(triangle):
    mesh = Mesh(vertices=np.vstack([triangle.vertices, [5.0, 5.0, 5.0]]),
                faces=triangle.faces)
    n = vertex_normals(mesh)
    assert (n[3] == 0.0).all()


def test_cube_corner_normal_equal_area_weighting():
    # Three unit squares forming the corner of a cube at the origin, each
    # split into two triangles whose shared diagonal passes through the
    # corner vertex.  Every incident triangle has area 1/2 and the three
    # face normals are the coordinate axes, so the area-weighted average
    # at the corner normalizes to (1,1,1)/sqrt(3).
    v = np.array([
        [0, 0, 0],                        # corner
        [1, 0, 0], [1, 1, 0], [0, 1, 0],  # z=0 square
        [0, 0, 1], [1, 0, 1],             # y=0 square (with 0 and 1)
        [0, 1, 1],                        # x=0 square (with 0, 3, 4)
    ], dtype=float)
    faces = np.array([
        [0, 1, 2], [0, 2, 3],
        [0, 4, 5], [0, 5, 1],
        [0, 3, 6], [0, 6, 4],
    ])
    mesh = Mesh(vertices=v, faces=faces)
    from posetransfer.mesh import face_normals

    fn = face_normals(mesh)
    areas = np.linalg.norm(fn, axis=1) / 2.0
    assert np.abs(areas - areas[0]).max() < 1e-12
    expected = fn.sum(axis=0)
    expected /= np.linalg.norm(expected)
    got = vertex_normals(mesh)[0]
    assert np.abs(got - expected).max() < 1e-12
    assert np.abs(np.abs(expected) - 1.0 / np.sqrt(3.0)).max() < 1e-12


def test_vertex_features_layout(triangle):
    f = vertex_features(triangle)
    assert f.shape == (3, 6)
    assert np.allclose(f[:, :3], triangle.vertices)
    assert np.abs(f[:, 3:] - [0.0, 0.0, 1.0]).max() < 1e-12


def test_vertex_features_translation_equivariance(tetrahedron):
    shifted = tetrahedron.with_vertices(tetrahedron.vertices + [2.0, -1.0, 0.5])
    f0 = vertex_features(tetrahedron)
    f1 = vertex_features(shifted)
    assert np.abs(f1[:, :3] - f0[:, :3] - [2.0, -1.0, 0.5]).max() < 1e-12
    assert np.abs(f1[:, 3:] - f0[:, 3:]).max() < 1e-12


def test_vertex_features_rotation_equivariance(tetrahedron):
    r = random_rotation(np.random.default_rng(7))
    rotated = tetrahedron.with_vertices(tetrahedron.vertices @ r.T)
    f0 = vertex_features(tetrahedron)
    f1 = vertex_features(rotated)
    assert np.abs(f1[:, :3] - f0[:, :3] @ r.T).max() < 1e-9
    assert np.abs(f1[:, 3:] - f0[:, 3:] @ r.T).max() < 1e-9


def test_vertex_normals_permutation_invariance(small_char):
    mesh = small_char.rest
    rng = np.random.default_rng(1)
    perm = rng.permutation(mesh.n_vertices)
    inv = np.argsort(perm)
    permuted = Mesh(vertices=mesh.vertices[perm], faces=inv[mesh.faces])
    n0 = vertex_normals(mesh)
    n1 = vertex_normals(permuted)
    assert np.abs(n1 - n0[perm]).max() < 1e-12


# ---- edges and graph operator -----------------------------------------

def test_edge_set_counts(triangle, tetrahedron):
    assert edge_set(triangle).shape == (3, 2)
    assert edge_set(tetrahedron).shape == (6, 2)
    two = Mesh(vertices=np.zeros((4, 3)) + np.arange(4)[:, None],
               faces=[[0, 1, 2], [1, 2, 3]])
    assert edge_set(two).shape == (5, 2)


def test_edge_set_ordering(tetrahedron):
    e = edge_set(tetrahedron)
    assert (e[:, 0] < e[:, 1]).all()
    assert len({tuple(r) for r in e.tolist()}) == len(e)


def test_graph_operator_triangle(triangle):
    a = graph_operator(triangle).matrix.toarray()
    assert np.abs(a - 1.0 / 3.0).max() < 1e-12


def test_graph_operator_isolated_vertex(triangle):
    mesh = Mesh(vertices=np.vstack([triangle.vertices, [9.0, 9.0, 9.0]]),
                faces=triangle.faces)
    a = graph_operator(mesh).matrix.toarray()
    assert np.abs(a[3] - [0.0, 0.0, 0.0, 1.0]).max() < 1e-12


def test_graph_operator_rows_sum_to_one_and_symmetric_pattern():
    for seed in range(5):
        mesh = generate_character(CharacterSpec(seed=seed)).rest
        g = graph_operator(mesh)
        rows = np.asarray(g.matrix.sum(axis=1)).ravel()
        assert np.abs(rows - 1.0).max() < 1e-6
        pattern = (g.matrix != 0)
        assert (pattern != pattern.T).nnz == 0


# ---- normalization helpers --------------------------------------------

def test_mesh_height_y_extent():
    v = np.array([[0.0, -1.0, 0.0], [0.0, 3.0, 0.0], [2.0, 0.0, 0.0]])
    assert mesh_height(v) == 4.0


def test_mesh_height_flat_fallback():
    v = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert mesh_height(v) == 2.0


def test_normalize_vertices_round_trip():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(10, 3)) * 4.0
    normed, center, scale = normalize_vertices(v)
    assert np.abs(normed.mean(axis=0)).max() < 1e-12
    assert abs(np.ptp(normed[:, 1]) - 1.0) < 1e-12
    assert np.abs(normed * scale + center - v).max() < 1e-12
