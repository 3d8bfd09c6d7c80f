"""Closed-loop trials, replays of recorded trials and ablation summaries."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..observations import MASKS, mask_name, parse_mask
from ..particle_filter import ParticleFilter
from . import recording as rec_io
from .config import ExperimentConfig, from_dict
from .metrics import add_s, first_stable_step
from .world import World, load_priors, sample_truth


@dataclass
class TrialResult:
    seed: int
    mask: str
    truth_class: int
    truth_pose: list
    config_hash: str
    max_cycles: int
    steps: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def correct_flags(self):
        return [s["map_class"] == self.truth_class for s in self.steps]

    def pose_flags(self, threshold):
        return [s["add_s"] is not None and s["add_s"] < threshold for s in self.steps]

    @staticmethod
    def _cycle(flags):
        k = first_stable_step(flags)
        return None if k is None else k + 1

    @property
    def stable_class_cycle(self):
        """1-based cycle from which the MAP class stays correct; None when never reached."""
        return self._cycle(self.correct_flags)

    def stable_pose_cycle(self, threshold=0.006):
        return self._cycle(self.pose_flags(threshold))

    @property
    def final_add_s(self):
        return self.steps[-1]["add_s"] if self.steps else None

    def map_sequence(self):
        return [(s["map_class"], s["map_pose"]) for s in self.steps]

    def to_dict(self):
        return {
            "seed": self.seed,
            "mask": self.mask,
            "truth_class": self.truth_class,
            "truth_pose": self.truth_pose,
            "config_hash": self.config_hash,
            "max_cycles": self.max_cycles,
            "steps": self.steps,
            "counters": self.counters,
        }

    def hash(self) -> str:
        # wall-clock time is left out on purpose
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _snapshot(pf: ParticleFilter, truth, priors, obs, k):
    hyp = pf.map_estimate()
    return {
        "step": int(obs.step),
        "cycle": k + 1,
        "map_class": None if hyp is None else hyp.class_id,
        "map_pose": None if hyp is None else hyp.pose.to_list(),
        "posterior": [float(v) for v in pf.class_posterior()],
        "add_s": None if hyp is None else add_s(hyp, truth, priors),
        "particles": len(pf.belief),
        "gelsight_patches": len(obs.gelsight_patches),
        "gelsight_contacts": len(obs.gelsight_contacts),
        "ft_contacts": len(obs.ft_contacts),
        "freed_voxels": int(len(obs.freed_voxels)),
    }


def _new_filter(cfg, priors, mask, seed):
    return ParticleFilter(priors, cfg.filter, cfg.likelihood, use_freespace="fs" in mask, seed=[seed, 2])


def run_trial(cfg: ExperimentConfig, seed: int, mask="all", priors=None, class_id=None):
    """Run one closed-loop trial; returns ``(TrialResult, Recording)``.

    The recording always holds every modality so that it can be replayed under
    any mask; the live filter only sees ``mask``.
    """
    m = parse_mask(mask)
    priors = load_priors(cfg) if priors is None else priors
    rng = np.random.default_rng([seed, 1])
    cid = seed % len(priors) if class_id is None else class_id
    truth = sample_truth(cfg, priors, rng, cid)
    world = World(cfg, priors, truth, rng)
    pf = _new_filter(cfg, priors, m, seed)
    recording = rec_io.Recording(cfg.to_dict(), cfg.hash(), int(seed), mask_name(m), truth)
    result = TrialResult(int(seed), mask_name(m), truth.class_id, truth.pose.to_list(), cfg.hash(), cfg.world.max_cycles)
    unreachable = []
    t0 = time.perf_counter()
    for k in range(cfg.world.max_cycles):
        obs = world.action_cycle(k, pf.map_estimate(), pf.belief.contacts.points, unreachable)
        recording.observations.append(obs)
        recording.wrenches.append(world.last_wrenches)
        masked = obs.masked(m)
        pf.step(masked)
        result.steps.append(_snapshot(pf, truth, priors, masked, k))
    result.counters = dict(pf.counters)
    result.elapsed = time.perf_counter() - t0
    return result, recording


def replay_trial(source, mask=None, priors=None) -> TrialResult:
    """Feed recorded observations, restricted to ``mask``, through a fresh filter."""
    rec = source if isinstance(source, rec_io.Recording) else rec_io.load(source)
    cfg = from_dict(rec.config)
    if cfg.hash() != rec.config_hash:
        raise ValueError("recording config does not match its hash")
    recorded = parse_mask(rec.mask)
    m = recorded if mask is None else parse_mask(mask)
    if not m <= recorded:
        raise ValueError(f"mask {mask_name(m)} needs modalities missing from a {rec.mask} recording")
    priors = load_priors(cfg) if priors is None else priors
    pf = _new_filter(cfg, priors, m, rec.seed)
    result = TrialResult(rec.seed, mask_name(m), rec.truth.class_id, rec.truth.pose.to_list(), rec.config_hash, cfg.world.max_cycles)
    t0 = time.perf_counter()
    for k, obs in enumerate(rec.observations):
        masked = obs.masked(m)
        pf.step(masked)
        result.steps.append(_snapshot(pf, rec.truth, priors, masked, k))
    result.counters = dict(pf.counters)
    result.elapsed = time.perf_counter() - t0
    return result


# --- summaries --------------------------------------------------------------

SUMMARY_FIELDS = (
    "mask", "trials",
    "class_cycle_mean", "class_cycle_std", "class_reached",
    "pose_cycle_mean", "pose_cycle_std", "pose_reached",
    "final_add_s_mean", "final_add_s_std", "final_add_s_max",
)


def _cycles(values, cap):
    return np.array([cap + 1 if v is None else v for v in values], dtype=float)


def summarize(results, threshold=0.006) -> list[dict]:
    """Per-mask mean and population std of stable cycles plus final ADD-S statistics.

    Trials that never stabilise count as ``max_cycles + 1``.
    """
    results = list(results)
    if not results:
        raise ValueError("nothing to summarize")
    order = [name for name in MASKS if any(r.mask == name for r in results)]
    order += sorted({r.mask for r in results} - set(order))
    rows = []
    for name in order:
        group = [r for r in results if r.mask == name]
        cap = max(r.max_cycles for r in group)
        cc = _cycles([r.stable_class_cycle for r in group], cap)
        pc = _cycles([r.stable_pose_cycle(threshold) for r in group], cap)
        fa = np.array([np.nan if r.final_add_s is None else r.final_add_s for r in group])
        rows.append({
            "mask": name,
            "trials": len(group),
            "class_cycle_mean": float(cc.mean()),
            "class_cycle_std": float(cc.std()),
            "class_reached": int(sum(r.stable_class_cycle is not None for r in group)),
            "pose_cycle_mean": float(pc.mean()),
            "pose_cycle_std": float(pc.std()),
            "pose_reached": int(sum(r.stable_pose_cycle(threshold) is not None for r in group)),
            "final_add_s_mean": float(np.nanmean(fa)) if np.any(np.isfinite(fa)) else float("nan"),
            "final_add_s_std": float(np.nanstd(fa)) if np.any(np.isfinite(fa)) else float("nan"),
            "final_add_s_max": float(np.nanmax(fa)) if np.any(np.isfinite(fa)) else float("nan"),
        })
    return rows


def write_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    return path


def run_ablation(cfg: ExperimentConfig, seeds, priors=None, out_dir=None, masks=tuple(MASKS), progress=None):
    """Record full-mask trials once, then replay each recording under every mask."""
    priors = load_priors(cfg) if priors is None else priors
    results = {name: [] for name in masks}
    for seed in seeds:
        live, rec = run_trial(cfg, seed, "all", priors)
        if out_dir is not None:
            rec.save(Path(out_dir) / f"trial_{seed:04d}.jsonl")
        for name in masks:
            results[name].append(live if name == "all" else replay_trial(rec, name, priors))
        if progress is not None:
            progress(seed, live)
    return results
