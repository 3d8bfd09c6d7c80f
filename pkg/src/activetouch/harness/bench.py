"""Wall-clock timings for the hot paths of each module."""

from __future__ import annotations

import time

import numpy as np

from ..ft_localizer import ft_localize
from ..geometry.pairs import build_pair_table
from ..geometry.priors import sample_feature_points
from ..likelihood import ContactArrays, contacts_log_lik_batch
from ..particle_filter import propose_from_pairs
from ..sensing import OrientedContact, Wrench
from .config import ExperimentConfig
from .trial import run_trial
from .world import default_probe, load_priors


def _timeit(fn, repeat):
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def run_bench(cfg: ExperimentConfig | None = None, seed: int = 0, trial=True):
    """List of ``(name, seconds_per_call, calls)`` rows."""
    cfg = cfg or ExperimentConfig()
    rng = np.random.default_rng(seed)
    rows = []

    t0 = time.perf_counter()
    priors = load_priors(cfg)
    rows.append(("priors.load", time.perf_counter() - t0, 1))

    shape = priors[0].shape
    q = rng.uniform(-0.06, 0.06, (10000, 3))
    rows.append(("geometry.sdf_normal[10k]", _timeit(lambda: shape.sdf_normal(q), 5), 5))

    pts, nrm = sample_feature_points(shape, 200, seed=seed)
    rows.append(("geometry.build_pair_table[200]", _timeit(lambda: build_pair_table(pts, nrm), 2), 2))

    probe = default_probe()
    v = probe.vertices[rng.integers(len(probe.vertices))]
    f = -probe.contact_normals[0] * 5.0
    w = Wrench(f, np.cross(v, f))
    rows.append(("ft_localizer.ft_localize", _timeit(lambda: ft_localize(w, probe.vertices, probe.contact_normals), 200), 200))

    contacts = ContactArrays.from_contacts(
        [OrientedContact(p, n, "gelsight", "flat") for p, n in zip(pts[:50], nrm[:50])]
    )
    P = 2000
    R = np.tile(np.eye(3), (P, 1, 1))
    t = rng.normal(0, 0.005, (P, 3))
    cid = np.zeros(P, dtype=int)
    rows.append(("likelihood.contacts[2000x50]", _timeit(lambda: contacts_log_lik_batch(contacts, cid, R, t, priors, cfg.likelihood), 5), 5))

    labels = np.array(["flat"] * 50)
    rows.append((
        "filter.propose_from_pairs",
        _timeit(lambda: propose_from_pairs(contacts.subset(np.arange(25)), labels[:25], contacts.subset(np.arange(25, 50)),
                                           labels[25:], priors, cfg.filter, np.random.default_rng(seed)), 3),
        3,
    ))

    if trial:
        t0 = time.perf_counter()
        run_trial(cfg, seed, "all", priors)
        rows.append(("harness.run_trial[15 cycles]", time.perf_counter() - t0, 1))
    return rows
