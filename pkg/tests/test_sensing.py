import numpy as np
import pytest

from activetouch.geometry import Box, Pose
from activetouch.geometry.mesh import MeshShape, TriMesh
from activetouch.geometry.priors import Hypothesis, make_prior
from activetouch.geometry.shapes import Sphere, icosphere
from activetouch.geometry.transforms import axis_angle_matrix
from activetouch.sensing import (
    ContactPatch,
    NoiseConfig,
    OrientedContact,
    Wrench,
    classify_contact_geometric,
    sample_cone,
    simulate_patch,
    simulate_wrench,
    sweep_vertices,
)

from conftest import random_unit


@pytest.fixture(scope="module")
def sphere_priors():
    return [make_prior(0, "sphere", Sphere(0.05), n_features=30)]


@pytest.fixture(scope="module")
def big_box_priors():
    return [make_prior(0, "box", Box(0.05, 0.05, 0.05), n_features=30)]


def test_oriented_contact_invariants():
    c = OrientedContact([0, 0, 0], [0, 0, 2], "ft", "none")
    assert np.allclose(c.normal, [0, 0, 1])
    with pytest.raises(ValueError):
        OrientedContact([0, 0, 0], [0, 0, 1], "ft", "flat")
    with pytest.raises(ValueError):
        OrientedContact([0, 0, 0], [0, 0, 1], "gelsight", "none")
    with pytest.raises(ValueError):
        OrientedContact([0, 0, 0], [0, 0, 0], "gelsight", "flat")


def test_contact_dict_roundtrip_is_exact():
    c = OrientedContact([0.1, 0.2, 0.3], [0.3, -0.2, 0.9], "gelsight", "edge")
    d = OrientedContact.from_dict(c.to_dict())
    assert np.array_equal(c.point, d.point) and np.array_equal(c.normal, d.normal)


def test_patch_size_limits():
    c = OrientedContact([0, 0, 0], [0, 0, 1], "gelsight", "flat")
    with pytest.raises(ValueError):
        ContactPatch((), "flat", [0, 0, 0])
    with pytest.raises(ValueError):
        ContactPatch((c,) * 11, "flat", [0, 0, 0])


def test_wrench_rejects_nan():
    with pytest.raises(ValueError):
        Wrench([np.nan, 0, 0], [0, 0, 0])


def test_noise_free_sphere_patch(sphere_priors):
    truth = Hypothesis(0, Pose([0.0, 0.5, 0.4]))
    rng = np.random.default_rng(0)
    n = np.array([0.3, -0.2, 0.9])
    n /= np.linalg.norm(n)
    patch = simulate_patch(truth, sphere_priors, truth.pose.translation + 0.05 * n, -n, NoiseConfig.noise_free(), rng)
    assert 1 <= len(patch.contacts) <= 10
    assert patch.label == "curved"
    for c in patch.contacts:
        radial = (c.point - truth.pose.translation) / np.linalg.norm(c.point - truth.pose.translation)
        assert np.arccos(np.clip(radial @ c.normal, -1, 1)) < 1e-3
        assert abs(np.linalg.norm(c.point - truth.pose.translation) - 0.05) < 1e-4
        assert np.linalg.norm(c.point - patch.patch_center) <= 0.006 + 1e-9


def test_patch_noise_matches_target(sphere_priors):
    truth = Hypothesis(0, Pose())
    rng = np.random.default_rng(1)
    noise = NoiseConfig(gelsight_normal_sigma=0.0)
    dists = []
    for _ in range(1000):
        n = random_unit(rng)
        patch = simulate_patch(truth, sphere_priors, 0.05 * n, -n, noise, rng)
        dists += [abs(np.linalg.norm(c.point) - 0.05) for c in patch.contacts]
    assert np.mean(dists) == pytest.approx(0.0012, rel=0.15)


def test_mislabel_injection(big_box_priors):
    truth = Hypothesis(0, Pose())
    noise = NoiseConfig.noise_free(mislabel_prob=1.0)
    patch = simulate_patch(truth, big_box_priors, [0, 0, 0.05], [0, 0, -1], noise, np.random.default_rng(0))
    assert patch.label != "flat"


def test_geometric_labels(big_box_priors, sphere_priors):
    truth = Hypothesis(0, Pose())
    assert classify_contact_geometric(truth, big_box_priors, [0.0, 0.0, 0.05]) == "flat"
    assert classify_contact_geometric(truth, big_box_priors, [0.05, 0.0, 0.05]) == "edge"
    assert classify_contact_geometric(truth, big_box_priors, [0.05, 0.05, 0.05]) == "corner"
    assert classify_contact_geometric(truth, sphere_priors, [0.0, 0.05, 0.0]) == "curved"


def test_wrench_frictionless_arm(probe):
    pose = Pose([0, 0.5, 0.4])
    x_local = np.array([0.01, 0.0, 0.0])  # on the gel face
    w = simulate_wrench(None, None, pose, probe, pose.apply(x_local[None])[0], 5.0, 0.0, np.random.default_rng(0), surface_normal=[0, 0, -1])
    l0 = np.cross(w.force, w.torque) / (w.force @ w.force)
    perp = x_local - (x_local @ w.force) / (w.force @ w.force) * w.force
    assert np.allclose(l0, perp, atol=1e-15)


def test_wrench_at_origin_has_no_torque(probe):
    w = simulate_wrench(None, None, Pose(), probe, [0, 0, 0], 3.0, 5.0, np.random.default_rng(0), surface_normal=[0, 0, -1])
    assert np.allclose(w.torque, 0)
    assert np.linalg.norm(w.force) == pytest.approx(3.0)


def test_wrench_requires_probe_contact(probe):
    with pytest.raises(ValueError):
        simulate_wrench(None, None, Pose(), probe, [0, 0, 0.05], 3.0, 0.0, np.random.default_rng(0), surface_normal=[0, 0, -1])
    with pytest.raises(ValueError):
        simulate_wrench(None, None, Pose(), probe, [0, 0, 0], 0.0, 0.0, np.random.default_rng(0), surface_normal=[0, 0, -1])


def test_reactions_inside_cone():
    rng = np.random.default_rng(0)
    axis = np.array([0.2, 0.3, -0.9])
    axis /= np.linalg.norm(axis)
    for _ in range(1000):
        d = sample_cone(axis, np.deg2rad(5.0), rng)
        assert np.arccos(np.clip(d @ axis, -1, 1)) <= np.deg2rad(5.0) + 1e-12


def test_sweep_margin_zero_is_identity(probe):
    pose = Pose([0.1, 0.5, 0.4], [0.9, 0.1, 0.2, 0.3])
    assert np.allclose(sweep_vertices(pose, probe.sweep_mesh, 0.0), pose.apply(probe.sweep_mesh.vertices))


def test_sweep_sphere_uniform_offset():
    v, f = icosphere(2)
    mesh = TriMesh(0.02 * v, f)
    out = sweep_vertices(Pose(), mesh, 0.01)
    r = np.linalg.norm(out, axis=1)
    # vertex normals of a coarse polyhedron are only roughly radial
    assert np.allclose(r, 0.01, atol=3e-4)
    assert np.all(r < 0.02 - 0.0095)


def test_sweep_box_inside(probe):
    out = sweep_vertices(Pose(), probe.sweep_mesh, 0.01)
    shape = MeshShape(probe.sweep_mesh.vertices, probe.sweep_mesh.faces)
    assert len(out) > 0
    assert np.all(shape.sdf(out) <= -0.01 + 1e-9)


def test_label_pose_invariance_example(big_box_priors):
    R = axis_angle_matrix([1, 2, 3], 0.8)
    truth = Hypothesis(0, Pose.from_matrix(R, [0.1, 0.4, 0.3]))
    centre = truth.pose.apply(np.array([[0.05, 0.0, 0.05]]))[0]
    assert classify_contact_geometric(truth, big_box_priors, centre) == "edge"
