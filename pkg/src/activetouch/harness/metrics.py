"""Pose error metrics and per-trial stability summaries."""

from __future__ import annotations

import numpy as np

from ..geometry.mesh import brute_force_distance


def add_s(hyp, truth, priors, model_points=None) -> float:
    """Mean distance from the truth model's points to the predicted model's surface.

    The nearest point of the predicted model is taken on its continuous
    surface, so rotations about a symmetry axis score zero up to sampling.
    """
    pts = priors[truth.class_id].model_points if model_points is None else model_points
    world = truth.pose.apply(pts)
    local = hyp.pose.inverse().apply(world)
    return float(np.mean(np.abs(priors[hyp.class_id].shape.sdf(local))))


def add_s_batch(class_ids, rotations, translations, truth, priors, model_points=None) -> np.ndarray:
    pts = priors[truth.class_id].model_points if model_points is None else model_points
    world = truth.pose.apply(pts)
    out = np.empty(len(class_ids))
    for c in np.unique(class_ids):
        sel = np.flatnonzero(np.asarray(class_ids) == c)
        local = (world[None] - translations[sel, None, :]) @ rotations[sel]
        d = priors[int(c)].shape.sdf(local.reshape(-1, 3)).reshape(len(sel), -1)
        out[sel] = np.abs(d).mean(axis=1)
    return out


def add_s_mesh_reference(hyp, truth, priors, model_points=None) -> float:
    """Brute-force version against the predicted model's triangles."""
    pts = priors[truth.class_id].model_points if model_points is None else model_points
    world = truth.pose.apply(pts)
    v, f = priors[hyp.class_id].shape.tessellate()
    return float(brute_force_distance(world, hyp.pose.apply(v), f).mean())


def first_stable_step(flags) -> int | None:
    """Index of the first entry after which every flag is true; None when the last flag is false."""
    flags = list(flags)
    if not flags or not flags[-1]:
        return None
    k = len(flags)
    while k > 0 and flags[k - 1]:
        k -= 1
    return k
