import numpy as np
import pytest
from scipy import ndimage

from activetouch.freespace import (
    FreeSpaceMap,
    count_violations,
    count_violations_batch,
    interpolate_poses,
    swept_volume_of_segment,
)
from activetouch.geometry import Pose
from activetouch.geometry.priors import Hypothesis
from activetouch.sensing import Probe


@pytest.fixture
def fmap():
    return FreeSpaceMap()


def test_map_shape(fmap):
    assert fmap.n_voxels == 8_000_000
    assert fmap.bits.size * 8 == 8_000_000
    assert fmap.voxel == pytest.approx(0.005)


def test_center_vertex_sets_one_voxel(fmap):
    new = fmap.mark_free([[0.0, 0.5, 0.5]])
    assert len(new) == 1 and fmap.n_free == 1
    assert len(fmap.free_indices()) == 1
    assert np.array_equal(fmap.unravel(new[0]), [100, 100, 100])


def test_outside_vertex_ignored(fmap):
    fmap.mark_free([[0.0, 0.5, 1.2], [0.6, 0.5, 0.5]])
    assert fmap.n_free == 0 and fmap.ignored == 2
    assert not fmap.bits.any()


def test_random_vertices_match_floor_index(fmap):
    rng = np.random.default_rng(0)
    pts = rng.uniform([-0.6, -0.1, -0.1], [0.6, 1.1, 1.1], (10000, 3))
    fmap.mark_free(pts)
    ijk = np.floor((pts - np.array([-0.5, 0.0, 0.0])) / 0.005).astype(int)
    ok = np.all((ijk >= 0) & (ijk < 200), axis=1)
    expect = np.unique(np.ravel_multi_index(ijk[ok].T, (200, 200, 200)))
    assert np.array_equal(fmap.free_indices(), expect)
    assert fmap.ignored == np.count_nonzero(~ok)


def test_marking_is_monotone(fmap):
    rng = np.random.default_rng(1)
    before = set()
    for _ in range(5):
        fmap.mark_free(rng.uniform([-0.5, 0, 0], [0.5, 1, 1], (500, 3)))
        now = set(fmap.free_indices().tolist())
        assert before <= now
        before = now


def test_copy_is_independent(fmap):
    fmap.mark_free([[0.0, 0.5, 0.5]])
    other = fmap.copy()
    other.mark_free([[0.1, 0.5, 0.5]])
    assert fmap.n_free == 1 and other.n_free == 2


def test_bad_index_rejected(fmap):
    with pytest.raises(ValueError):
        fmap.set_indices([8_000_000])


def test_violations_empty_and_full(fmap, priors):
    hyp = Hypothesis(1, Pose([0.0, 0.5, 0.3]))
    assert count_violations(fmap, hyp, priors) == 0
    fmap.bits[:] = 0xFF
    fmap.n_free = fmap.n_voxels
    assert count_violations(fmap, hyp, priors) == 200


def test_violations_half_space(fmap, priors):
    # mark every voxel with x < 0 as free
    ix = np.arange(100)
    i, j, k = np.meshgrid(ix, np.arange(200), np.arange(200), indexing="ij")
    fmap.set_indices(np.ravel_multi_index((i.ravel(), j.ravel(), k.ravel()), (200, 200, 200)))
    hyp = Hypothesis(0, Pose([0.0, 0.5, 0.3], [0.9, 0.1, 0.3, 0.2]))
    pts = hyp.pose.apply(priors[0].feature_points)
    expect = int(np.count_nonzero(np.floor((pts[:, 0] + 0.5) / 0.005) < 100))
    assert 0 < expect < 200
    assert count_violations(fmap, hyp, priors) == expect


def test_batch_matches_single(fmap, priors):
    rng = np.random.default_rng(2)
    fmap.mark_free(rng.uniform([-0.1, 0.4, 0.2], [0.1, 0.6, 0.4], (20000, 3)))
    hyps = [Hypothesis(int(c), Pose(rng.uniform([-0.05, 0.45, 0.25], [0.05, 0.55, 0.35]), rng.normal(size=4)))
            for c in rng.integers(0, len(priors), 30)]
    batch = count_violations_batch(
        fmap,
        [h.class_id for h in hyps],
        np.array([h.pose.matrix for h in hyps]),
        np.array([h.pose.translation for h in hyps]),
        priors,
    )
    assert batch.tolist() == [count_violations(fmap, h, priors) for h in hyps]


def test_interpolation_counts():
    a = Pose([0, 0.5, 0.5])
    assert len(interpolate_poses(a, a, 0.0025)) == 1
    b = Pose([0.1, 0.5, 0.5])
    poses = interpolate_poses(a, b, 0.0025)
    assert len(poses) == 41
    steps = np.diff([p.translation for p in poses], axis=0)
    assert np.linalg.norm(steps, axis=1).max() <= 0.0025 + 1e-12


def test_interpolation_rotation_bound():
    a = Pose([0, 0.5, 0.5])
    b = Pose([0, 0.5, 0.5], [np.cos(0.5), np.sin(0.5), 0, 0])
    poses = interpolate_poses(a, b, 0.0025, reach=0.1)
    x = np.array([[0.0, 0.1, 0.0]])
    moves = np.diff([p.apply(x)[0] for p in poses], axis=0)
    assert np.linalg.norm(moves, axis=1).max() <= 0.0025 + 1e-9
    assert poses[-1].almost_equal(b)


def test_interpolation_step_must_be_positive():
    with pytest.raises(ValueError):
        interpolate_poses(Pose(), Pose(), 0.0)


def test_swept_tube_is_connected(fmap):
    probe = Probe()
    a = Pose([0.0, 0.4, 0.5])
    b = Pose([0.1, 0.55, 0.45])
    pts, n = swept_volume_of_segment(a, b, probe.sweep_mesh)
    assert n > 1
    new = fmap.mark_free(pts)
    ijk = fmap.unravel(new)
    lo = ijk.min(0)
    grid = np.zeros(ijk.max(0) - lo + 1, dtype=bool)
    grid[tuple((ijk - lo).T)] = True
    _, n_components = ndimage.label(grid)  # default structure is 6-connectivity
    assert n_components == 1
