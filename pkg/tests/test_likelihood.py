import numpy as np
import pytest

from activetouch.freespace import FreeSpaceMap
from activetouch.geometry import Pose
from activetouch.geometry.priors import Hypothesis, make_prior
from activetouch.geometry.shapes import Sphere
from activetouch.geometry.transforms import axis_angle_matrix
from activetouch.likelihood import (
    ContactArrays,
    LikelihoodConfig,
    contact_log_lik,
    contacts_log_lik_batch,
    environment_log_lik,
    freespace_log_lik,
    step_contacts_log_lik,
    total_step_log_lik,
)
from activetouch.observations import StepObservation
from activetouch.sensing import ContactPatch, OrientedContact

from conftest import random_unit

CFG = LikelihoodConfig()
CENTER = np.array([0.0, 0.5, 0.35])


@pytest.fixture(scope="module")
def ball():
    return [make_prior(0, "sphere", Sphere(0.05))]


@pytest.fixture(scope="module")
def hyp():
    return Hypothesis(0, Pose(CENTER))


def _contact(offset, theta, source="gelsight", label="curved", direction=(0.0, 0.0, 1.0)):
    r = np.asarray(direction, dtype=float)
    r /= np.linalg.norm(r)
    tangent = np.cross(r, [1.0, 0, 0]) if abs(r[0]) < 0.9 else np.cross(r, [0, 1.0, 0])
    n = axis_angle_matrix(tangent, theta) @ r
    return OrientedContact(CENTER + (0.05 + offset) * r, n, source, label if source == "gelsight" else "none")


def test_config_invariants():
    assert CFG.sigma_d_f == 2 * CFG.sigma_d_g
    assert CFG.sigma_theta_f == 2 * CFG.sigma_theta_g
    with pytest.raises(ValueError):
        LikelihoodConfig(sigma_d_g=0.0)


def test_exact_contact_is_zero(ball, hyp):
    assert contact_log_lik(_contact(0.0, 0.0), hyp, ball, CFG) == pytest.approx(0.0, abs=1e-9)


def test_one_sigma(ball, hyp):
    assert contact_log_lik(_contact(0.002, 0.0), hyp, ball, CFG) == pytest.approx(-0.5, rel=1e-9)


def test_hand_arithmetic(ball, hyp):
    val = contact_log_lik(_contact(0.003, np.deg2rad(20.0)), hyp, ball, CFG)
    expect = -0.5 * ((3 / 2) ** 2 + (20 / 15) ** 2)
    assert val == pytest.approx(expect, rel=1e-9)
    assert expect == pytest.approx(-2.0139, abs=1e-4)


def test_ft_contacts_use_doubled_sigmas(ball, hyp):
    val = contact_log_lik(_contact(0.004, np.deg2rad(30.0), source="ft"), hyp, ball, CFG)
    assert val == pytest.approx(-0.5 * (1.0 + 1.0), rel=1e-9)


def test_gated_labels_ignore_normal(ball, hyp):
    for label in ("edge", "corner"):
        a = contact_log_lik(_contact(0.001, 0.0, label=label), hyp, ball, CFG)
        b = contact_log_lik(_contact(0.001, 2.5, label=label), hyp, ball, CFG)
        assert a == pytest.approx(b, rel=1e-12)
        assert a == pytest.approx(-0.5 * 0.25, rel=1e-9)


def test_step_sum_rules(ball, hyp):
    assert step_contacts_log_lik([], [], hyp, ball, CFG) == 0.0
    c = _contact(0.0015, 0.2)
    assert step_contacts_log_lik([c, c], [], hyp, ball, CFG) == pytest.approx(2 * contact_log_lik(c, hyp, ball, CFG), rel=1e-12)
    rng = np.random.default_rng(0)
    gs = [_contact(rng.uniform(-0.003, 0.003), rng.uniform(0, 0.5), direction=random_unit(rng)) for _ in range(5)]
    ft = [_contact(rng.uniform(-0.003, 0.003), rng.uniform(0, 0.5), source="ft", direction=random_unit(rng)) for _ in range(4)]
    brute = sum(contact_log_lik(c, hyp, ball, CFG) for c in gs + ft)
    assert step_contacts_log_lik(gs, ft, hyp, ball, CFG) == pytest.approx(brute, rel=1e-9)


def test_freespace_penalty(priors):
    hyp = Hypothesis(1, Pose([0.0, 0.5, 0.35]))
    fmap = FreeSpaceMap()
    assert freespace_log_lik(fmap, hyp, priors, CFG) == 0.0
    pts = hyp.pose.apply(priors[1].feature_points)
    lin = fmap.voxel_index(pts)
    # mark a voxel holding exactly one feature point
    counts = {k: int(np.count_nonzero(lin == k)) for k in np.unique(lin)}
    single = next(k for k, v in counts.items() if v == 1)
    fmap.set_indices([single])
    assert freespace_log_lik(fmap, hyp, priors, CFG) == pytest.approx(-125000.0, rel=1e-9)
    fmap.set_indices(lin)
    assert freespace_log_lik(fmap, hyp, priors, CFG) == pytest.approx(200 * -125000.0, rel=1e-9)


def _at_height(prior, vz, class_id=0):
    return Hypothesis(class_id, Pose([0.0, 0.5, vz - prior.feature_points[:, 2].min()]))


def test_environment_band(ball):
    h = CFG.table_height
    assert environment_log_lik(_at_height(ball[0], h), ball, CFG) == 0.0
    assert environment_log_lik(_at_height(ball[0], h + 0.015), ball, CFG) == 0.0
    assert environment_log_lik(_at_height(ball[0], h - 0.015), ball, CFG) == 0.0
    assert environment_log_lik(_at_height(ball[0], h + 0.03), ball, CFG) == pytest.approx(-125000.0, rel=1e-9)
    assert environment_log_lik(_at_height(ball[0], h - 0.03), ball, CFG) == pytest.approx(-125000.0, rel=1e-9)


def test_total_is_sum_of_parts(priors):
    rng = np.random.default_rng(1)
    hyp = Hypothesis(2, Pose([0.0, 0.5, 0.36], [0.95, 0.0, 0.0, 0.3]))
    fmap = FreeSpaceMap()
    fmap.mark_free(rng.uniform([-0.05, 0.45, 0.3], [0.05, 0.55, 0.4], (3000, 3)))
    gs = [OrientedContact(CENTER + rng.normal(0, 0.03, 3), random_unit(rng), "gelsight", "flat") for _ in range(4)]
    ft = [OrientedContact(CENTER + rng.normal(0, 0.03, 3), random_unit(rng), "ft", "none") for _ in range(3)]
    obs = StepObservation(0, [ContactPatch(tuple(gs), "flat", gs[0].point)], ft)
    parts = (
        step_contacts_log_lik(gs, ft, hyp, priors, CFG)
        + freespace_log_lik(fmap, hyp, priors, CFG)
        + environment_log_lik(hyp, priors, CFG)
    )
    assert total_step_log_lik(obs, fmap, hyp, priors, CFG) == pytest.approx(parts, rel=1e-12)
    # reordering the contacts does not change the value
    obs2 = StepObservation(0, [ContactPatch(tuple(gs[::-1]), "flat", gs[0].point)], ft[::-1])
    assert total_step_log_lik(obs2, fmap, hyp, priors, CFG) == pytest.approx(parts, rel=1e-12)


def test_batch_matches_single(priors):
    rng = np.random.default_rng(2)
    contacts = [OrientedContact(CENTER + rng.normal(0, 0.03, 3), random_unit(rng), "gelsight", "edge") for _ in range(6)]
    arr = ContactArrays.from_contacts(contacts)
    hyps = [Hypothesis(int(rng.integers(len(priors))), Pose(CENTER + rng.normal(0, 0.01, 3), rng.normal(size=4))) for _ in range(20)]
    batch = contacts_log_lik_batch(arr, [h.class_id for h in hyps], np.array([h.pose.matrix for h in hyps]),
                                   np.array([h.pose.translation for h in hyps]), priors, CFG)
    single = [step_contacts_log_lik(contacts, [], h, priors, CFG) for h in hyps]
    assert np.allclose(batch, single, rtol=1e-12)
