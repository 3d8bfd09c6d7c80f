"""Particle belief over (object class, pose) with stationary particles.

Particles never move once inserted; only their log-weights change. New
particles come from pair matching, jitter around the best particles and ICP
refinement, and are weighted relative to the current MAP using a subset of the
contacts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .freespace import FreeSpaceMap
from .geometry.pairs import labels_compatible, neighbour_keys, pair_values
from .geometry.priors import Hypothesis
from .geometry.transforms import Pose, euler_matrices, matrix_to_quat
from .likelihood import (
    ContactArrays,
    LikelihoodConfig,
    contacts_log_lik_batch,
    environment_log_lik_batch,
    freespace_log_lik_batch,
)

log = logging.getLogger(__name__)

LOG_FLOOR = -1e300


@dataclass(frozen=True)
class FilterConfig:
    top_k: int = 50
    pool_cap: int = 2000
    subset_limit: int = 100
    pair_new_limit: int = 5
    pair_prev_limit: int = 30
    pair_budget: int = 800
    pair_slack: float = 0.25
    jitter_top: int = 10
    jitter_variants: int = 12
    jitter_translation: float = 0.01
    jitter_rotation_deg: float = 10.0
    icp_top: int = 10
    icp_min_patches: int = 4
    icp_max_iter: int = 30
    icp_tol_translation: float = 1e-4
    icp_tol_rotation_deg: float = 0.1
    downsample_seed: int = 0


# --- small helpers ----------------------------------------------------------


def downsample_poisson(points, limit: int = 100, seed: int = 0) -> np.ndarray:
    """Indices of a greedy farthest-point subset of at most ``limit`` points.

    The first pick comes from ``seed``; output order is pick order.
    """
    if limit < 1:
        raise ValueError("limit must be at least 1")
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(p)
    if n <= limit:
        return np.arange(n)
    first = int(np.random.default_rng(seed).integers(n))
    chosen = [first]
    dist = np.linalg.norm(p - p[first], axis=1)
    for _ in range(limit - 1):
        k = int(np.argmax(dist))
        chosen.append(k)
        dist = np.minimum(dist, np.linalg.norm(p - p[k], axis=1))
    return np.asarray(chosen)


def _rodrigues(axes, angles):
    axes = np.asarray(axes, dtype=float)
    x, y, z = axes[:, 0], axes[:, 1], axes[:, 2]
    zero = np.zeros_like(x)
    K = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=1).reshape(-1, 3, 3)
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def rotations_between(a, b):
    """Batched minimal rotations taking unit rows of ``a`` onto unit rows of ``b``."""
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis, axis=1)
    c = (a * b).sum(1)
    small = s < 1e-12
    helper = np.eye(3)[np.argmin(np.abs(a), axis=1)]
    perp = helper - (helper * a).sum(1, keepdims=True) * a
    perp /= np.linalg.norm(perp, axis=1, keepdims=True)
    axis = np.where(small[:, None], perp, axis / np.where(small, 1.0, s)[:, None])
    angle = np.where(small, np.where(c > 0, 0.0, np.pi), np.arctan2(s, c))
    return _rodrigues(axis, angle)


def align_pairs(m_i, mn_i, m_j, mn_j, o_i, on_i, o_j, on_j):
    """Rigid transforms ``(R, t)`` mapping model pairs onto observed pairs.

    The displacement vectors are aligned exactly; the roll about that axis is
    the weighted circular mean of the normal misalignments.
    """
    R1 = rotations_between(m_j - m_i, o_j - o_i)
    axis = o_j - o_i
    axis = axis / np.linalg.norm(axis, axis=1, keepdims=True)
    num = np.zeros(len(axis))
    den = np.zeros(len(axis))
    for mn, on in ((mn_i, on_i), (mn_j, on_j)):
        p = np.einsum("pij,pj->pi", R1, mn)
        p = p - (p * axis).sum(1, keepdims=True) * axis
        q = on - (on * axis).sum(1, keepdims=True) * axis
        num += (axis * np.cross(p, q)).sum(1)
        den += (p * q).sum(1)
    roll = np.arctan2(num, den)
    R = _rodrigues(axis, roll) @ R1
    t = 0.5 * (o_i + o_j) - np.einsum("pij,pj->pi", R, 0.5 * (m_i + m_j))
    return R, t


@dataclass
class Proposals:
    class_ids: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    source: str = ""

    @classmethod
    def empty(cls, source=""):
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 3, 3)), np.zeros((0, 3)), source)

    def __len__(self):
        return len(self.class_ids)

    def concat(self, other: "Proposals") -> "Proposals":
        return Proposals(
            np.concatenate([self.class_ids, other.class_ids]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.translations, other.translations]),
            self.source or other.source,
        )

    def hypotheses(self):
        quats = matrix_to_quat(self.rotations) if len(self) else np.zeros((0, 4))
        return [Hypothesis(int(c), Pose(t, q)) for c, t, q in zip(self.class_ids, self.translations, quats)]

    @classmethod
    def from_hypotheses(cls, hyps, source=""):
        if not hyps:
            return cls.empty(source)
        return cls(
            np.array([h.class_id for h in hyps]),
            np.stack([h.pose.matrix for h in hyps]),
            np.stack([h.pose.translation for h in hyps]),
            source,
        )


# --- belief -----------------------------------------------------------------


@dataclass
class Belief:
    """Particle arrays plus the accumulated contact evidence.

    ``base`` holds accumulated contact log-likelihood (and the merge offset of
    late-born particles); ``penalty`` holds the free-space and table terms
    evaluated against the current map. The particle log-weight is their sum.
    """

    class_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    rotations: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    translations: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    quats: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    base: np.ndarray = field(default_factory=lambda: np.zeros(0))
    penalty: np.ndarray = field(default_factory=lambda: np.zeros(0))
    born_at: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    contacts: ContactArrays = field(default_factory=ContactArrays.empty)
    contact_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U6"))
    n_gelsight_patches: int = 0
    step_counter: int = 0
    next_order: int = 0
    subset_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.class_ids)

    @property
    def log_w(self) -> np.ndarray:
        return self.base + self.penalty

    def normalized_weights(self) -> np.ndarray:
        lw = self.log_w
        if len(lw) == 0:
            return lw
        w = np.exp(lw - lw.max())
        return w / w.sum()

    def ranking(self) -> np.ndarray:
        """Particle indices from best to worst: weight, then earliest birth, then insertion order."""
        return np.lexsort((self.order, self.born_at, -self.log_w))

    def hypothesis(self, k: int) -> Hypothesis:
        return Hypothesis(int(self.class_ids[k]), Pose(self.translations[k], self.quats[k]))

    def add_particles(self, props: Proposals, base, born_at: int):
        m = len(props)
        if m == 0:
            return
        self.class_ids = np.concatenate([self.class_ids, props.class_ids.astype(np.int64)])
        self.rotations = np.concatenate([self.rotations, props.rotations])
        self.translations = np.concatenate([self.translations, props.translations])
        self.quats = np.concatenate([self.quats, matrix_to_quat(props.rotations)])
        self.base = np.concatenate([self.base, np.asarray(base, dtype=float)])
        self.penalty = np.concatenate([self.penalty, np.zeros(m)])
        self.born_at = np.concatenate([self.born_at, np.full(m, born_at, dtype=np.int64)])
        self.order = np.concatenate([self.order, self.next_order + np.arange(m)])
        self.next_order += m

    def keep(self, idx):
        idx = np.sort(np.asarray(idx))
        for name in ("class_ids", "rotations", "translations", "quats", "base", "penalty", "born_at", "order"):
            setattr(self, name, getattr(self, name)[idx])

    def add_contacts(self, contacts, subset_limit=100, seed=0):
        contacts = list(contacts)
        if not contacts:
            return
        self.contacts = self.contacts.concat(ContactArrays.from_contacts(contacts))
        self.contact_labels = np.concatenate([self.contact_labels, np.array([c.label for c in contacts], dtype="<U6")])
        self.subset_idx = downsample_poisson(self.contacts.points, subset_limit, seed)

    def snapshot(self, n_classes: int, top: int = 10) -> dict:
        rank = self.ranking()[:top] if len(self) else []
        w = self.normalized_weights()
        return {
            "step": self.step_counter,
            "map": self.hypothesis(rank[0]).pose.to_list() if len(self) else None,
            "map_class": int(self.class_ids[rank[0]]) if len(self) else None,
            "class_posterior": class_posterior(self, n_classes).tolist() if len(self) else None,
            "particles": len(self),
            "top": [
                {"class_id": int(self.class_ids[k]), "pose": self.hypothesis(k).pose.to_list(), "weight": float(w[k])}
                for k in rank
            ],
        }


def map_index(belief: Belief) -> int:
    if len(belief) == 0:
        raise ValueError("empty belief has no MAP estimate")
    return int(belief.ranking()[0])


def map_estimate(belief: Belief) -> Hypothesis:
    return belief.hypothesis(map_index(belief))


def class_posterior(belief: Belief, n_classes: int | None = None) -> np.ndarray:
    if len(belief) == 0:
        raise ValueError("empty belief")
    n = int(belief.class_ids.max()) + 1 if n_classes is None else n_classes
    return np.bincount(belief.class_ids, weights=belief.normalized_weights(), minlength=n)


# --- weight updates ---------------------------------------------------------


def contact_scores(contacts: ContactArrays, props, priors, lik: LikelihoodConfig) -> np.ndarray:
    return contacts_log_lik_batch(contacts, props.class_ids, props.rotations, props.translations, priors, lik)


def update_weights(belief: Belief, new_contacts: ContactArrays, priors, lik: LikelihoodConfig):
    """Add the new contacts' log-likelihood to every particle."""
    if len(belief) == 0:
        raise ValueError("update requires particles")
    if len(new_contacts) == 0:
        return belief
    belief.base = belief.base + contacts_log_lik_batch(
        new_contacts, belief.class_ids, belief.rotations, belief.translations, priors, lik
    )
    if not np.any(np.isfinite(belief.log_w)):
        log.warning("all particle weights underflowed; applying floor")
        belief.base = np.where(np.isfinite(belief.base), belief.base, LOG_FLOOR)
    return belief


def apply_constraints(belief: Belief, fmap: FreeSpaceMap | None, priors, lik: LikelihoodConfig):
    """Recompute the free-space and table terms of every particle against the current map."""
    if len(belief) == 0:
        return belief
    pen = environment_log_lik_batch(belief.class_ids, belief.rotations, belief.translations, priors, lik)
    if fmap is not None:
        pen = pen + freespace_log_lik_batch(fmap, belief.class_ids, belief.rotations, belief.translations, priors, lik)
    belief.penalty = pen
    return belief


def merge_weights(belief: Belief, props: Proposals, priors, lik: LikelihoodConfig, subset_idx=None):
    """Log-weights of proposals relative to the current MAP.

    Proposals are ranked on the contact subset only; the best of them and the
    incumbent MAP are then scored on every contact to anchor the scale.
    """
    contacts = belief.contacts
    if subset_idx is None:
        subset_idx = belief.subset_idx
    if len(belief) == 0:
        return contact_scores(contacts, props, priors, lik)
    ls = contact_scores(contacts.subset(subset_idx), props, priors, lik)
    best = int(np.argmax(ls))
    m = map_index(belief)
    full_best = contact_scores(contacts, _take(props, [best]), priors, lik)[0]
    full_map = contacts_log_lik_batch(
        contacts, belief.class_ids[[m]], belief.rotations[[m]], belief.translations[[m]], priors, lik
    )[0]
    return (ls - ls[best]) + (full_best - full_map) + belief.base[m]


def _take(props: Proposals, idx) -> Proposals:
    idx = np.asarray(idx)
    return Proposals(props.class_ids[idx], props.rotations[idx], props.translations[idx], props.source)


def approximate_and_merge(
    belief: Belief,
    props: Proposals,
    priors,
    cfg: FilterConfig,
    lik: LikelihoodConfig,
    fmap: FreeSpaceMap | None = None,
    K: int | None = None,
):
    """Weight proposals, keep the best ``K`` and re-apply constraints to the whole pool."""
    K = cfg.top_k if K is None else K
    if len(props):
        w = merge_weights(belief, props, priors, lik)
        keep = np.argsort(-w, kind="stable")[:K]
        belief.add_particles(_take(props, keep), w[keep], belief.step_counter)
    apply_constraints(belief, fmap, priors, lik)
    if len(belief) > cfg.pool_cap:
        belief.keep(belief.ranking()[: cfg.pool_cap])
    return belief


# --- proposals --------------------------------------------------------------


def propose_from_pairs(
    prev: ContactArrays,
    prev_labels,
    new: ContactArrays,
    new_labels,
    priors,
    cfg: FilterConfig,
    rng,
    budget: int | None = None,
) -> Proposals:
    """Hypotheses from matching observed contact pairs to model pairs.

    New contacts pair with previous ones; with no previous contacts the new
    contacts pair among themselves.
    """
    budget = cfg.pair_budget if budget is None else budget
    new_idx = downsample_poisson(new.points, cfg.pair_new_limit, cfg.downsample_seed)
    if len(prev):
        prev_idx = downsample_poisson(prev.points, cfg.pair_prev_limit, cfg.downsample_seed)
        ii, jj = np.meshgrid(new_idx, prev_idx, indexing="ij")
        A = new.subset(ii.ravel())
        B = prev.subset(jj.ravel())
        la = np.asarray(new_labels)[ii.ravel()]
        lb = np.asarray(prev_labels)[jj.ravel()]
    else:
        if len(new_idx) < 2:
            return Proposals.empty("pairs")
        ii, jj = np.triu_indices(len(new_idx), 1)
        A = new.subset(new_idx[ii])
        B = new.subset(new_idx[jj])
        la = np.asarray(new_labels)[new_idx[ii]]
        lb = np.asarray(new_labels)[new_idx[jj]]
    sep = np.linalg.norm(B.points - A.points, axis=1)
    ok = sep > 1e-9
    A, B, la, lb = A.subset(ok), B.subset(ok), la[ok], lb[ok]
    if len(A) == 0:
        return Proposals.empty("pairs")
    vals = pair_values(A.points, A.normals, B.points, B.normals)

    hits_q, hits_c, hits_m = [], [], []
    for prior in priors:
        q, keys = neighbour_keys(vals, prior.bin_width, cfg.pair_slack)
        sub_q, pairs = prior.pair_table.lookup_many(keys)
        if len(sub_q) == 0:
            continue
        obs = q[sub_q]
        lab_i = prior.feature_labels[pairs[:, 0]]
        lab_j = prior.feature_labels[pairs[:, 1]]
        good = labels_compatible(la[obs], lab_i) & labels_compatible(lb[obs], lab_j)
        hits_q.append(obs[good])
        hits_c.append(np.full(int(good.sum()), prior.class_id))
        hits_m.append(pairs[good])
    if not hits_q:
        return Proposals.empty("pairs")
    hq = np.concatenate(hits_q)
    hc = np.concatenate(hits_c)
    hm = np.concatenate(hits_m)
    if len(hq) == 0:
        return Proposals.empty("pairs")
    if len(hq) > budget:
        # equal share per observed pair, random within a pair's matches
        counts = np.bincount(hq, minlength=len(A))
        score = -np.log(counts[hq]) + rng.gumbel(size=len(hq))
        pick = np.sort(np.argpartition(-score, budget - 1)[:budget])
        hq, hc, hm = hq[pick], hc[pick], hm[pick]

    fp = np.empty((len(hq), 2, 3))
    fn = np.empty((len(hq), 2, 3))
    for c in np.unique(hc):
        sel = hc == c
        fp[sel] = priors[int(c)].feature_points[hm[sel]]
        fn[sel] = priors[int(c)].feature_normals[hm[sel]]
    R, t = align_pairs(
        fp[:, 0], fn[:, 0], fp[:, 1], fn[:, 1],
        A.points[hq], A.normals[hq], B.points[hq], B.normals[hq],
    )
    return Proposals(hc.astype(np.int64), R, t, "pairs")


def propose_jitter(belief: Belief, rng, cfg: FilterConfig = FilterConfig()) -> Proposals:
    """Uniform translation and Euler-angle perturbations of the top particles."""
    if len(belief) == 0:
        return Proposals.empty("jitter")
    top = belief.ranking()[: cfg.jitter_top]
    n = len(top) * cfg.jitter_variants
    parent = np.repeat(top, cfg.jitter_variants)
    dt = rng.uniform(-cfg.jitter_translation, cfg.jitter_translation, (n, 3))
    ang = np.deg2rad(rng.uniform(-cfg.jitter_rotation_deg, cfg.jitter_rotation_deg, (n, 3)))
    E = euler_matrices(ang)
    return Proposals(
        belief.class_ids[parent].copy(),
        E @ belief.rotations[parent],
        belief.translations[parent] + dt,
        "jitter",
    )


def icp_refine(shape, R, t, points, normals_weight=None, cfg: FilterConfig = FilterConfig()):
    """Point-to-plane ICP of world contacts against the shape placed at (R, t).

    Returns ``(R, t, mean_abs_residual, status)``. Status is ``"converged"``,
    ``"max_iter"`` or ``"diverged"``; a divergent run returns the inputs.
    """
    pts = np.asarray(points, dtype=float)
    w = np.ones(len(pts)) if normals_weight is None else np.asarray(normals_weight, dtype=float)
    R0, t0 = R, t

    def residual(R, t):
        local = (pts - t) @ R
        d, n_local, _ = shape.sdf_normal(local)
        return d, n_local @ R.T

    d, n = residual(R, t)
    err = float(np.mean(np.abs(d)))
    best = (R, t, err)
    rising = 0
    status = "max_iter"
    tol_r = np.deg2rad(cfg.icp_tol_rotation_deg)
    for _ in range(cfg.icp_max_iter):
        c = pts.mean(axis=0)
        A = np.hstack([np.cross(pts - c, n), n]) * w[:, None]
        sol, *_ = np.linalg.lstsq(A, -d * w, rcond=None)
        omega, tau = sol[:3], sol[3:]
        ang = float(np.linalg.norm(omega))
        Rd = _rodrigues((omega / ang)[None], np.array([ang]))[0] if ang > 1e-15 else np.eye(3)
        # moving contacts by (Rd, c, tau) equals moving the object by the inverse
        R = Rd.T @ R
        t = Rd.T @ (t - c - tau) + c
        d, n = residual(R, t)
        new_err = float(np.mean(np.abs(d)))
        rising = rising + 1 if new_err > err else 0
        err = new_err
        if err < best[2]:
            best = (R, t, err)
        if rising >= 3:
            return R0, t0, best[2], "diverged"
        if np.linalg.norm(tau) < cfg.icp_tol_translation and ang < tol_r:
            status = "converged"
            break
    return best[0], best[1], best[2], status


def propose_icp(belief: Belief, priors, cfg: FilterConfig = FilterConfig(), lik: LikelihoodConfig = LikelihoodConfig()) -> Proposals:
    """ICP-refined copies of the top particles, once enough GelSight patches are in."""
    if belief.n_gelsight_patches <= cfg.icp_min_patches or len(belief) == 0 or len(belief.contacts) < 3:
        return Proposals.empty("icp")
    top = belief.ranking()[: cfg.icp_top]
    c = belief.contacts
    weight = np.where(c.is_ft, lik.sigma_d_g / lik.sigma_d_f, 1.0)
    Rs, ts = [], []
    for k in top:
        R, t, _, _ = icp_refine(priors[int(belief.class_ids[k])].shape, belief.rotations[k], belief.translations[k], c.points, weight, cfg)
        Rs.append(R)
        ts.append(t)
    return Proposals(belief.class_ids[top].copy(), np.stack(Rs), np.stack(ts), "icp")


# --- driver -----------------------------------------------------------------


class ParticleFilter:
    """Owns a belief and the filter's private copy of the free-space map."""

    def __init__(self, priors, cfg: FilterConfig = FilterConfig(), lik: LikelihoodConfig = LikelihoodConfig(), use_freespace=True, seed=0):
        self.priors = priors
        self.cfg = cfg
        self.lik = lik
        self.use_freespace = use_freespace
        self.rng = np.random.default_rng(seed)
        self.belief = Belief()
        self.fmap = FreeSpaceMap() if use_freespace else None
        self.counters = {"gelsight_patches": 0, "gelsight_contacts": 0, "ft_contacts": 0, "freed_voxels": 0, "steps": 0}

    def step(self, obs):
        """Integrate one (already masked) observation."""
        b = self.belief
        b.step_counter = obs.step
        new_list = obs.gelsight_contacts + list(obs.ft_contacts)
        self.counters["steps"] += 1
        self.counters["gelsight_patches"] += len(obs.gelsight_patches)
        self.counters["gelsight_contacts"] += len(obs.gelsight_contacts)
        self.counters["ft_contacts"] += len(obs.ft_contacts)
        self.counters["freed_voxels"] += len(obs.freed_voxels)
        if self.fmap is not None and len(obs.freed_voxels):
            self.fmap.set_indices(obs.freed_voxels)

        new = ContactArrays.from_contacts(new_list)
        new_labels = np.array([c.label for c in new_list], dtype="<U6")
        prev, prev_labels = b.contacts, b.contact_labels
        if len(b) and len(new):
            update_weights(b, new, self.priors, self.lik)

        props = Proposals.empty()
        if len(new):
            props = propose_from_pairs(prev, prev_labels, new, new_labels, self.priors, self.cfg, self.rng)
        b.add_contacts(new_list, self.cfg.subset_limit, self.cfg.downsample_seed)
        b.n_gelsight_patches += len(obs.gelsight_patches)
        if len(b) and len(new):
            if b.n_gelsight_patches > self.cfg.icp_min_patches:
                props = props.concat(propose_icp(b, self.priors, self.cfg, self.lik))
            else:
                props = props.concat(propose_jitter(b, self.rng, self.cfg))
        if len(props) or len(b):
            approximate_and_merge(b, props, self.priors, self.cfg, self.lik, self.fmap)
        return b

    def map_estimate(self):
        return map_estimate(self.belief) if len(self.belief) else None

    def class_posterior(self):
        n = len(self.priors)
        return class_posterior(self.belief, n) if len(self.belief) else np.full(n, 1.0 / n)
