import numpy as np
import pytest

from posetransfer.articulation import (
    ArticulationError,
    PartCenters,
    RigidTransform,
    estimate_part_transforms,
    hard_assignment,
    hard_part_transforms,
    lbs_deform,
    load_skinning,
    load_transforms,
    part_centers,
    save_skinning,
    save_transforms,
    validate_skinning,
)
from posetransfer.mesh import Mesh

from conftest import random_rotation


def _random_skinning(rng, n, k):
    w = rng.uniform(size=(n, k))
    return w / w.sum(axis=1, keepdims=True)


def _cloud_mesh(rng, n=12):
    """Generic non-degenerate point cloud wrapped in a Mesh."""
    v = rng.normal(size=(n, 3))
    faces = [[i, (i + 1) % n, (i + 2) % n] for i in range(n)]
    return Mesh(vertices=v, faces=faces)


# ---- validation and containers ----------------------------------------

def test_validate_skinning_rejects_bad_rows():
    with pytest.raises(ArticulationError):
        validate_skinning(np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(ArticulationError):
        validate_skinning(np.array([[1.2, -0.2]]))


def test_rigid_transform_validation():
    with pytest.raises(ArticulationError):
        RigidTransform(rotation=np.eye(3) * 2.0, translation=np.zeros(3))
    reflection = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ArticulationError):
        RigidTransform(rotation=reflection, translation=np.zeros(3))


def test_rigid_transform_flat_round_trip():
    r = random_rotation(np.random.default_rng(0))
    tf = RigidTransform(rotation=r, translation=[1.0, 2.0, 3.0])
    back = RigidTransform.from_flat(tf.flat())
    assert np.abs(back.rotation - tf.rotation).max() == 0.0
    assert np.abs(back.translation - tf.translation).max() == 0.0


# ---- part centers ------------------------------------------------------

def test_part_centers_uniform_weights_give_centroid(tetrahedron):
    k = 5
    w = np.full((4, k), 1.0 / k)
    pc = part_centers(tetrahedron, w)
    centroid = tetrahedron.vertices.mean(axis=0)
    assert np.abs(pc.centers - centroid).max() < 1e-12
    assert not pc.degenerate.any()


def test_part_centers_one_hot_selects_vertex(tetrahedron):
    w = np.zeros((4, 2))
    w[:, 0] = 1.0
    w[2, 0] = 0.0
    w[2, 1] = 1.0
    pc = part_centers(tetrahedron, w)
    assert np.abs(pc.centers[1] - tetrahedron.vertices[2]).max() < 1e-12


def test_part_centers_zero_column_is_degenerate(tetrahedron):
    w = np.zeros((4, 3))
    w[:, 0] = 1.0
    pc = part_centers(tetrahedron, w)
    assert pc.degenerate.tolist() == [False, True, True]
    assert (pc.centers[1:] == 0.0).all()


# ---- LBS ---------------------------------------------------------------

def test_lbs_rest_preserving_identity():
    rng = np.random.default_rng(2)
    mesh = _cloud_mesh(rng)
    w = _random_skinning(rng, mesh.n_vertices, 6)
    pc = part_centers(mesh, w)
    transforms = [RigidTransform.identity(c) for c in pc.centers]
    out = lbs_deform(mesh, w, transforms)
    assert np.abs(out.vertices - mesh.vertices).max() < 1e-6


def test_lbs_single_part_rigid_motion():
    rng = np.random.default_rng(3)
    mesh = _cloud_mesh(rng)
    w = np.ones((mesh.n_vertices, 1))
    r = random_rotation(rng)
    t = rng.normal(size=3)
    out = lbs_deform(mesh, w, [RigidTransform(rotation=r, translation=t)])
    c = mesh.vertices.mean(axis=0)
    expected = (mesh.vertices - c) @ r.T + t
    assert np.abs(out.vertices - expected).max() < 1e-9


def test_lbs_matches_scalar_loop_oracle():
    rng = np.random.default_rng(4)
    mesh = _cloud_mesh(rng)
    n = mesh.n_vertices
    w = np.full((n, 2), 0.5)
    pc = part_centers(mesh, w)
    transforms = [
        RigidTransform(rotation=np.eye(3), translation=pc.centers[0] + [0.3, 0.0, 0.0]),
        RigidTransform(rotation=np.eye(3), translation=pc.centers[1] + [0.0, -0.2, 0.1]),
    ]
    out = lbs_deform(mesh, w, transforms)
    expected = np.zeros((n, 3))
    for i in range(n):
        for k, tf in enumerate(transforms):
            expected[i] += w[i, k] * (
                tf.rotation @ (mesh.vertices[i] - pc.centers[k]) + tf.translation)
    assert np.abs(out.vertices - expected).max() < 1e-12


def test_lbs_global_rotation_equivariance():
    rng = np.random.default_rng(5)
    mesh = _cloud_mesh(rng)
    w = _random_skinning(rng, mesh.n_vertices, 3)
    transforms = [RigidTransform(rotation=random_rotation(rng),
                                 translation=rng.normal(size=3)) for _ in range(3)]
    g = random_rotation(rng)
    out = lbs_deform(mesh, w, transforms)
    rotated_mesh = mesh.with_vertices(mesh.vertices @ g.T)
    conjugated = [RigidTransform(rotation=g @ tf.rotation @ g.T,
                                 translation=g @ tf.translation) for tf in transforms]
    out_rot = lbs_deform(rotated_mesh, w, conjugated)
    assert np.abs(out_rot.vertices - out.vertices @ g.T).max() < 1e-6


def test_lbs_dimension_mismatch():
    rng = np.random.default_rng(6)
    mesh = _cloud_mesh(rng)
    w = _random_skinning(rng, mesh.n_vertices, 3)
    with pytest.raises(ArticulationError):
        lbs_deform(mesh, w, [RigidTransform.identity()] * 2)


# ---- hard assignment ---------------------------------------------------

def test_hard_assignment_examples():
    one_hot = np.eye(4)
    assert hard_assignment(one_hot).tolist() == [0, 1, 2, 3]
    tie = np.array([[0.5, 0.5, 0.0]])
    assert hard_assignment(tie).tolist() == [0]
    uniform = np.full((1, 5), 0.2)
    assert hard_assignment(uniform).tolist() == [0]


def test_hard_assignment_rescale_invariance():
    rng = np.random.default_rng(7)
    w = _random_skinning(rng, 20, 4)
    scaled = w * 3.7
    scaled /= scaled.sum(axis=1, keepdims=True)
    assert (hard_assignment(w) == hard_assignment(scaled)).all()


# ---- rigid registration ------------------------------------------------

def test_estimate_identity_when_posed_equals_rest():
    rng = np.random.default_rng(8)
    mesh = _cloud_mesh(rng)
    w = _random_skinning(rng, mesh.n_vertices, 4)
    pc = part_centers(mesh, w)
    for k, tf in enumerate(estimate_part_transforms(mesh, mesh, w)):
        assert np.abs(tf.rotation - np.eye(3)).max() < 1e-6
        assert np.abs(tf.translation - pc.centers[k]).max() < 1e-6


def test_estimate_recovers_global_rigid_motion():
    rng = np.random.default_rng(9)
    mesh = _cloud_mesh(rng)
    w = _random_skinning(rng, mesh.n_vertices, 4)
    r_star = random_rotation(rng)
    t_star = rng.normal(size=3)
    posed = mesh.with_vertices(mesh.vertices @ r_star.T + t_star)
    transforms = estimate_part_transforms(mesh, posed, w)
    for tf in transforms:
        assert np.abs(tf.rotation - r_star).max() < 1e-6
    back = lbs_deform(mesh, w, transforms)
    assert np.abs(back.vertices - posed.vertices).max() < 1e-6


def test_estimate_one_hot_90_degree_rotation():
    v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    mesh = Mesh(vertices=v, faces=[[0, 1, 2], [0, 2, 3], [1, 2, 4]])
    r90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    posed = mesh.with_vertices(v @ r90.T)
    w = np.zeros((5, 2))
    w[:4, 0] = 1.0
    w[4, 1] = 1.0
    tf = estimate_part_transforms(mesh, posed, w)[0]
    assert np.abs(tf.rotation - r90).max() < 1e-6


def test_estimate_degenerate_part_gets_rest_preserving_transform():
    rng = np.random.default_rng(10)
    mesh = _cloud_mesh(rng)
    w = np.zeros((mesh.n_vertices, 2))
    w[:, 0] = 1.0
    tf = estimate_part_transforms(mesh, mesh, w)[1]
    assert np.abs(tf.rotation - np.eye(3)).max() == 0.0
    assert np.abs(tf.translation).max() == 0.0


def test_one_hot_round_trip_deform_estimate_deform():
    rng = np.random.default_rng(11)
    mesh = _cloud_mesh(rng, n=18)
    n = mesh.n_vertices
    labels = rng.integers(0, 3, size=n)
    w = np.zeros((n, 3))
    w[np.arange(n), labels] = 1.0
    transforms = [RigidTransform(rotation=random_rotation(rng),
                                 translation=rng.normal(size=3)) for _ in range(3)]
    deformed = lbs_deform(mesh, w, transforms)
    recovered = estimate_part_transforms(mesh, deformed, w)
    again = lbs_deform(mesh, w, recovered)
    assert np.abs(again.vertices - deformed.vertices).max() < 1e-5


def test_hard_part_transforms_skips_small_parts():
    rng = np.random.default_rng(12)
    mesh = _cloud_mesh(rng)
    n = mesh.n_vertices
    labels = np.zeros(n, dtype=int)
    labels[0] = 1  # part 1 has a single vertex
    w = np.zeros((n, 2))
    w[np.arange(n), labels] = 1.0
    pc = part_centers(mesh, w)
    out = hard_part_transforms(mesh, mesh, labels, pc)
    assert out[1] is None
    assert out[0] is not None


# ---- file formats ------------------------------------------------------

def test_skinning_file_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    w = _random_skinning(rng, 7, 4)
    p = tmp_path / "w.txt"
    save_skinning(w, p)
    header = p.read_text().splitlines()[0]
    assert header == "7 4"
    back = load_skinning(p)
    assert np.abs(back - w).max() < 1e-9


def test_transform_file_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    transforms = [RigidTransform(rotation=random_rotation(rng),
                                 translation=rng.normal(size=3)) for _ in range(3)]
    p = tmp_path / "t.txt"
    save_transforms(transforms, p)
    back = load_transforms(p)
    for a, b in zip(transforms, back):
        assert np.abs(a.rotation - b.rotation).max() == 0.0
        assert np.abs(a.translation - b.translation).max() == 0.0
