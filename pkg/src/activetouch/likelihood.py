"""Observation log-likelihoods for object hypotheses.

All values are unnormalized log densities; normalizing constants cancel when
particle weights are normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .freespace import count_violations, count_violations_batch

GATED_LABELS = ("edge", "corner")


@dataclass(frozen=True)
class LikelihoodConfig:
    sigma_d_g: float = 0.002
    sigma_theta_g: float = float(np.deg2rad(15.0))
    table_height: float = 0.30
    table_tolerance: float = 0.02

    def __post_init__(self):
        if min(self.sigma_d_g, self.sigma_theta_g) <= 0:
            raise ValueError("sigmas must be positive")

    @property
    def sigma_d_f(self):
        return 2.0 * self.sigma_d_g

    @property
    def sigma_theta_f(self):
        return 2.0 * self.sigma_theta_g

    @property
    def violation_penalty(self):
        """Log-likelihood of a single semi-hard violation: a residual of 1 m at the GelSight sigma."""
        return -1.0 / (2.0 * self.sigma_d_g ** 2)


class ContactArrays:
    """Columnar view of a contact list used for batched scoring."""

    def __init__(self, points, normals, is_ft, gated):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(normals, dtype=float).reshape(-1, 3)
        self.is_ft = np.asarray(is_ft, dtype=bool).reshape(-1)
        self.gated = np.asarray(gated, dtype=bool).reshape(-1)

    @classmethod
    def from_contacts(cls, contacts):
        contacts = list(contacts)
        if not contacts:
            return cls.empty()
        return cls(
            [c.point for c in contacts],
            [c.normal for c in contacts],
            [c.source == "ft" for c in contacts],
            [c.label in GATED_LABELS for c in contacts],
        )

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, bool), np.zeros(0, bool))

    def __len__(self):
        return len(self.points)

    def subset(self, idx):
        return ContactArrays(self.points[idx], self.normals[idx], self.is_ft[idx], self.gated[idx])

    def concat(self, other: "ContactArrays") -> "ContactArrays":
        return ContactArrays(
            np.vstack([self.points, other.points]),
            np.vstack([self.normals, other.normals]),
            np.concatenate([self.is_ft, other.is_ft]),
            np.concatenate([self.gated, other.gated]),
        )


def contact_terms(contacts: ContactArrays, class_ids, rotations, translations, priors, cfg: LikelihoodConfig):
    """(P, C) matrix of per-contact log-likelihoods for P poses."""
    class_ids = np.asarray(class_ids)
    P, C = len(class_ids), len(contacts)
    out = np.zeros((P, C))
    if P == 0 or C == 0:
        return out
    sd = np.where(contacts.is_ft, cfg.sigma_d_f, cfg.sigma_d_g)
    st = np.where(contacts.is_ft, cfg.sigma_theta_f, cfg.sigma_theta_g)
    use_theta = ~contacts.gated
    for c in np.unique(class_ids):
        sel = np.flatnonzero(class_ids == c)
        R = rotations[sel]
        # world -> canonical: R^T (x - t)
        rel = contacts.points[None, :, :] - translations[sel, None, :]
        local = rel @ R
        d, n_local, _ = priors[int(c)].shape.sdf_normal(local.reshape(-1, 3))
        d = d.reshape(len(sel), C)
        obs_local = contacts.normals[None] @ R
        cos = np.clip((n_local.reshape(len(sel), C, 3) * obs_local).sum(-1), -1.0, 1.0)
        theta = np.arccos(cos)
        out[sel] = -0.5 * ((d / sd) ** 2 + np.where(use_theta, (theta / st) ** 2, 0.0))
    return out


def contacts_log_lik_batch(contacts: ContactArrays, class_ids, rotations, translations, priors, cfg) -> np.ndarray:
    return contact_terms(contacts, class_ids, rotations, translations, priors, cfg).sum(axis=1)


def _single(hyp):
    return np.array([hyp.class_id]), hyp.pose.matrix[None], hyp.pose.translation[None]


def contact_log_lik(d, hyp, priors, cfg: LikelihoodConfig) -> float:
    return float(contact_terms(ContactArrays.from_contacts([d]), *_single(hyp), priors, cfg)[0, 0])


def step_contacts_log_lik(D_g, D_f, hyp, priors, cfg: LikelihoodConfig) -> float:
    arr = ContactArrays.from_contacts(list(D_g) + list(D_f))
    return float(contact_terms(arr, *_single(hyp), priors, cfg).sum())


def freespace_log_lik(fmap, hyp, priors, cfg: LikelihoodConfig) -> float:
    return count_violations(fmap, hyp, priors) * cfg.violation_penalty


def freespace_log_lik_batch(fmap, class_ids, rotations, translations, priors, cfg) -> np.ndarray:
    return count_violations_batch(fmap, class_ids, rotations, translations, priors) * cfg.violation_penalty


def lowest_feature_heights(class_ids, rotations, translations, priors) -> np.ndarray:
    class_ids = np.asarray(class_ids)
    out = np.empty(len(class_ids))
    for c in np.unique(class_ids):
        sel = np.flatnonzero(class_ids == c)
        fp = priors[int(c)].feature_points
        z = rotations[sel, 2, :] @ fp.T + translations[sel, 2:3]
        out[sel] = z.min(axis=1)
    return out


def environment_log_lik_batch(class_ids, rotations, translations, priors, cfg: LikelihoodConfig) -> np.ndarray:
    vz = lowest_feature_heights(class_ids, rotations, translations, priors)
    above = vz > cfg.table_height + cfg.table_tolerance
    below = vz < cfg.table_height - cfg.table_tolerance
    return (above.astype(float) + below.astype(float)) * cfg.violation_penalty


def environment_log_lik(hyp, priors, cfg: LikelihoodConfig) -> float:
    return float(environment_log_lik_batch(*_single(hyp), priors, cfg)[0])


def total_step_log_lik(obs, fmap, hyp, priors, cfg: LikelihoodConfig) -> float:
    total = step_contacts_log_lik(obs.gelsight_contacts, obs.ft_contacts, hyp, priors, cfg)
    if fmap is not None:
        total += freespace_log_lik(fmap, hyp, priors, cfg)
    return total + environment_log_lik(hyp, priors, cfg)
