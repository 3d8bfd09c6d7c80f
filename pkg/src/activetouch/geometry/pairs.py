"""Point-pair features and the per-object lookup table built from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ANGLE_BIN_DEG = 12.0
ANGLE_BIN = np.deg2rad(ANGLE_BIN_DEG)
N_ANGLE_BINS = 16  # bins 0..15 cover [0, 180] degrees
LABELS = ("flat", "curved", "edge", "corner", "none")


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def _angle(u, v):
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    c = (u * v).sum(-1) / (nu * nv)
    return np.arccos(np.clip(c, -1.0, 1.0))


def pair_values(xi, ni, xj, nj):
    """Continuous features ``(distance, angle_ij, angle_id, angle_jd)`` for batches of oriented pairs."""
    xi, ni, xj, nj = (np.asarray(a, dtype=float) for a in (xi, ni, xj, nj))
    d = xj - xi
    dist = np.linalg.norm(d, axis=-1)
    if np.any(dist == 0):
        raise ValueError("coincident points have no pair feature")
    return dist, _angle(ni, nj), _angle(ni, d), _angle(nj, d)


def discretize(dist, a_ij, a_id, a_jd, bin_width):
    return (
        _round_half_up(np.asarray(dist) / bin_width),
        # bin in degrees so that e.g. a right angle lands exactly on 7.5 and rounds up
        _round_half_up(np.degrees(a_ij) / ANGLE_BIN_DEG),
        _round_half_up(np.degrees(a_id) / ANGLE_BIN_DEG),
        _round_half_up(np.degrees(a_jd) / ANGLE_BIN_DEG),
    )


def pack_key(db, b1, b2, b3):
    return ((np.asarray(db, dtype=np.int64) * N_ANGLE_BINS + b1) * N_ANGLE_BINS + b2) * N_ANGLE_BINS + b3


@dataclass(frozen=True)
class PairFeature:
    distance_bin: int
    angle_ij_bin: int
    angle_id_bin: int
    angle_jd_bin: int
    label_i: str = "none"
    label_j: str = "none"

    @property
    def key(self) -> int:
        return int(pack_key(self.distance_bin, self.angle_ij_bin, self.angle_id_bin, self.angle_jd_bin))


def pair_feature(x_i, n_i, x_j, n_j, label_i="none", label_j="none", bin_width=0.01) -> PairFeature:
    vals = pair_values(np.reshape(x_i, (1, 3)), np.reshape(n_i, (1, 3)), np.reshape(x_j, (1, 3)), np.reshape(n_j, (1, 3)))
    bins = discretize(*vals, bin_width)
    return PairFeature(*(int(b[0]) for b in bins), label_i=label_i, label_j=label_j)


def labels_compatible(a, b) -> np.ndarray:
    """Only a flat/curved disagreement rules a correspondence out; other labels act as wildcards."""
    a = np.asarray(a)
    b = np.asarray(b)
    return ~(((a == "flat") & (b == "curved")) | ((a == "curved") & (b == "flat")))


class PairTable:
    """Sorted-key table mapping packed pair features to ordered model point-index pairs."""

    def __init__(self, keys, pairs):
        order = np.argsort(keys, kind="stable")
        keys = np.asarray(keys)[order]
        self.pairs = np.asarray(pairs)[order]
        self.keys, self.offsets = np.unique(keys, return_index=True)
        self.offsets = np.append(self.offsets, len(keys))

    def __len__(self):
        return len(self.pairs)

    @property
    def n_buckets(self):
        return len(self.keys)

    def lookup(self, key) -> np.ndarray:
        """Model index pairs stored under ``key`` (shape (m, 2), possibly empty)."""
        k = int(key.key if isinstance(key, PairFeature) else key)
        pos = np.searchsorted(self.keys, k)
        if pos >= len(self.keys) or self.keys[pos] != k:
            return np.empty((0, 2), dtype=self.pairs.dtype)
        return self.pairs[self.offsets[pos]:self.offsets[pos + 1]]

    def lookup_many(self, keys):
        """Vectorized lookup; returns ``(query_index, model_pairs)``."""
        keys = np.asarray(keys, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, len(self.keys) - 1)
        hit = (pos < len(self.keys)) & (self.keys[pos_c] == keys)
        starts = self.offsets[pos_c[hit]]
        counts = self.offsets[pos_c[hit] + 1] - starts
        qidx = np.repeat(np.flatnonzero(hit), counts)
        if len(qidx) == 0:
            return qidx, np.empty((0, 2), dtype=self.pairs.dtype)
        flat = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        return qidx, self.pairs[flat]

    def buckets(self):
        for k in range(len(self.keys)):
            yield int(self.keys[k]), self.pairs[self.offsets[k]:self.offsets[k + 1]]


def build_pair_table(points, normals, bin_width=0.01) -> PairTable:
    """Table over all ordered pairs (i, j), i != j, of the oriented feature points."""
    n = len(points)
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    vals = pair_values(points[ii], normals[ii], points[jj], normals[jj])
    keys = pack_key(*discretize(*vals, bin_width))
    pairs = np.stack([ii, jj], axis=1).astype(np.int32)
    return PairTable(keys, pairs)


def neighbour_keys(vals, bin_width, slack=0.25):
    """Keys of the bin plus any adjacent bin whose boundary lies within ``slack`` bins.

    Returns ``(query_index, keys)`` for batched continuous features; the
    exact-bin key always comes first for each query.
    """
    dist, a_ij, a_id, a_jd = (np.atleast_1d(v) for v in vals)
    scaled = np.stack([dist / bin_width] + [np.degrees(a) / ANGLE_BIN_DEG for a in (a_ij, a_id, a_jd)], axis=1)
    base = _round_half_up(scaled)
    frac = scaled - base  # in [-0.5, 0.5)
    options = [np.stack([base[:, k], base[:, k] + np.where(frac[:, k] >= 0, 1, -1)], 1) for k in range(4)]
    use_alt = np.abs(frac) > 0.5 - slack
    out_q, out_k = [], []
    for combo in range(16):
        bits = [(combo >> k) & 1 for k in range(4)]
        ok = np.ones(len(base), dtype=bool)
        comps = []
        for k in range(4):
            if bits[k]:
                ok &= use_alt[:, k]
            comps.append(options[k][:, bits[k]])
        ok &= (comps[0] >= 0) & np.all([(c >= 0) & (c < N_ANGLE_BINS) for c in comps[1:]], axis=0)
        q = np.flatnonzero(ok)
        out_q.append(q)
        out_k.append(pack_key(comps[0][q], comps[1][q], comps[2][q], comps[3][q]))
    return np.concatenate(out_q), np.concatenate(out_k)
