"""Mode-retention analyses and the over-smoothing diagnostic."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

ENERGY_THRESHOLD = 0.85
PAIR_SAMPLE_LIMIT = 150
PAIR_SAMPLES = 10_000


@dataclass
class EnergyReport:
    mean_energy: np.ndarray  # index k-1 holds the mean E(k)
    n_excluded: int = 0

    @property
    def meets_threshold(self):
        return self.mean_energy >= ENERGY_THRESHOLD

    def at(self, k):
        return float(self.mean_energy[k - 1])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mean_energy", "meets_085"])
            for k, (e, ok) in enumerate(zip(self.mean_energy, self.meets_threshold), 1):
                w.writerow([k, repr(float(e)), int(ok)])


@dataclass
class ImportanceReport:
    importance: np.ndarray  # (n_relations, K)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["relation_id", "k", "importance"])
            for r, row in enumerate(self.importance):
                for k, v in enumerate(row, 1):
                    w.writerow([r, k, repr(float(v))])


def energy_curve(signatures):
    """Mean cumulative energy of the top-k modes over all entities.

    Per entity the signature is sorted in descending order and
    ``E(k) = sum of the k largest / total``. All-zero signatures are
    skipped and counted in ``n_excluded``.
    """
    a = np.asarray(signatures, dtype=np.float64)
    if a.ndim == 1:
        a = a[None]
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("need at least one signature with at least one mode")
    totals = a.sum(axis=1)
    keep = totals > 0
    excluded = int(np.count_nonzero(~keep))
    if excluded:
        logger.warning("%d all-zero signatures excluded from the energy curve", excluded)
    if not keep.any():
        raise ValueError("every signature is all-zero")
    a = a[keep]
    ordered = -np.sort(-a, axis=1)
    cum = np.cumsum(ordered, axis=1) / totals[keep][:, None]
    return EnergyReport(cum.mean(axis=0), excluded)


def mode_importance(signatures, transitions):
    """``I(r, k) = mean_e a_e[k] * sum_j P_r[k, j]`` on raw signatures."""
    a = np.asarray(signatures, dtype=np.float64)
    P = np.asarray(transitions, dtype=np.float64)
    if P.ndim == 2:
        P = P[None]
    if a.ndim != 2 or P.ndim != 3 or P.shape[1:] != (a.shape[1], a.shape[1]):
        raise ValueError(f"shape mismatch: signatures {a.shape}, transitions {P.shape}")
    return ImportanceReport(a.mean(axis=0)[None, :] * P.sum(axis=2))


def mean_cosine_distance(states, seed=0):
    """Mean ``1 - cos`` over entity pairs; returns (value, n_skipped_pairs).

    Above ``PAIR_SAMPLE_LIMIT`` entities a seeded sample of pairs is used.
    """
    x = np.asarray(states, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two entities")
    if n > PAIR_SAMPLE_LIMIT:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, PAIR_SAMPLES)
        j = (i + rng.integers(1, n, PAIR_SAMPLES)) % n
    else:
        i, j = np.triu_indices(n, k=1)
    norms = np.linalg.norm(x, axis=1)
    ok = (norms[i] > 0) & (norms[j] > 0)
    skipped = int(np.count_nonzero(~ok))
    if skipped:
        logger.warning("%d pairs with a zero-norm row skipped", skipped)
    i, j = i[ok], j[ok]
    if len(i) == 0:
        return float("nan"), skipped
    cos = np.einsum("ij,ij->i", x[i], x[j]) / (norms[i] * norms[j])
    return float(np.mean(1.0 - cos)), skipped


def oversmoothing_profile(layer_states, seed=0):
    """Mean pairwise cosine distance for each layer's state matrix."""
    if len(layer_states) < 1:
        raise ValueError("need at least one layer state")
    return [mean_cosine_distance(getattr(s, "data", s), seed)[0] for s in layer_states]


def write_profile_csv(profile, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "mad"])
        for layer, v in enumerate(profile):
            w.writerow([layer, repr(float(v))])
