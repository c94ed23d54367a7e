"""Sample-quality diagnostics for toy densities.

The energy distance and the mode statistics stand in for the perceptual
metrics used on image benchmarks, which are meaningless for 2-D toy
densities; reports carry the metric name so the substitution is always
explicit.  Everything here is pure over immutable sample arrays and
deterministic: standard errors come from a fixed contiguous-batch split,
not from fresh randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import GmmSpec

_N_BOOT_BATCHES = 20


@dataclass
class MetricReport:
    name: str
    value: float
    stderr: float
    n: int
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {
            "metric": self.name,
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n,
            "fingerprint": self.fingerprint,
        }


def _mean_cross_distance(a: np.ndarray, b: np.ndarray, block: int = 512) -> float:
    """Mean Euclidean distance over all pairs (a_i, b_j), accumulated blockwise."""
    total = 0.0
    for start in range(0, a.shape[0], block):
        chunk = a[start:start + block]
        sq = (
            np.sum(chunk**2, axis=1)[:, None]
            + np.sum(b**2, axis=1)[None, :]
            - 2.0 * chunk @ b.T
        )
        np.maximum(sq, 0.0, out=sq)
        total += np.sum(np.sqrt(sq))
    return total / (a.shape[0] * b.shape[0])


def _energy_statistic(a: np.ndarray, b: np.ndarray) -> float:
    return (
        2.0 * _mean_cross_distance(a, b)
        - _mean_cross_distance(a, a)
        - _mean_cross_distance(b, b)
    )


def energy_distance(a: np.ndarray, b: np.ndarray, fingerprint: str = "") -> MetricReport:
    """Two-sample energy statistic 2 E|a-b| - E|a-a'| - E|b-b'|.

    All three terms average over the full pair grid (the V-statistic
    form), so identical sample sets score exactly zero.  The standard
    error is the bootstrap spread over 20 contiguous batch pairs.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets must share a dimension")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sample sets must be non-empty")
    value = _energy_statistic(a, b)
    n_batches = min(_N_BOOT_BATCHES, a.shape[0], b.shape[0])
    if n_batches >= 2:
        stats = [
            _energy_statistic(chunk_a, chunk_b)
            for chunk_a, chunk_b in zip(
                np.array_split(a, n_batches), np.array_split(b, n_batches)
            )
        ]
        stderr = float(np.std(stats, ddof=1) / np.sqrt(n_batches))
    else:
        stderr = 0.0
    return MetricReport("energy_distance", float(value), stderr,
                        a.shape[0] + b.shape[0], fingerprint)


@dataclass
class ModeStats:
    """Hard nearest-center assignment statistics over a mixture's modes."""

    counts: np.ndarray
    occupancy: np.ndarray
    entropy: float
    entropy_stderr: float
    spread: float
    spread_stderr: float
    mode_means: list = field(default_factory=list)
    mode_covs: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mode_stats(samples: np.ndarray, spec: GmmSpec) -> ModeStats:
    """Assign each sample to its nearest mode center; report occupancy
    entropy (diversity proxy) and within-mode spread (inverse quality
    proxy), with contiguous-batch bootstrap errors.

    Spread is the RMS distance of each sample to its own mode's sample
    mean, so it measures per-mode concentration and is insensitive to
    guidance shifting a mode off its nominal center.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    centers = spec.means
    d2 = (
        np.sum(samples**2, axis=1)[:, None]
        + np.sum(centers**2, axis=1)[None, :]
        - 2.0 * samples @ centers.T
    )
    assign = np.argmin(d2, axis=1)
    k = centers.shape[0]
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    mode_means, mode_covs = [], []
    anchors = np.array(centers, copy=True)
    for j in range(k):
        members = samples[assign == j]
        if members.shape[0]:
            mode_means.append(members.mean(axis=0))
            anchors[j] = mode_means[-1]
        else:
            mode_means.append(None)
        mode_covs.append(np.cov(members.T) if members.shape[0] > 1 else None)
    sq_dist = np.sum((samples - anchors[assign]) ** 2, axis=1)
    spread = float(np.sqrt(sq_dist.mean()))
    n_batches = min(_N_BOOT_BATCHES, samples.shape[0])
    if n_batches >= 2:
        ent_stats, spread_stats = [], []
        for idx in np.array_split(np.arange(samples.shape[0]), n_batches):
            ent_stats.append(_entropy(np.bincount(assign[idx], minlength=k).astype(float)))
            spread_stats.append(np.sqrt(sq_dist[idx].mean()))
        ent_se = float(np.std(ent_stats, ddof=1) / np.sqrt(n_batches))
        spread_se = float(np.std(spread_stats, ddof=1) / np.sqrt(n_batches))
    else:
        ent_se = spread_se = 0.0
    return ModeStats(counts, counts / counts.sum(), _entropy(counts), ent_se,
                     spread, spread_se, mode_means, mode_covs)


def reconstruction_error(x: np.ndarray, y: np.ndarray, fingerprint: str = "") -> MetricReport:
    """RMS over pairs: sqrt(mean_i ||x_i - y_i||^2)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError("paired sets must have matching shapes")
    sq = np.sum((x - y) ** 2, axis=1)
    value = float(np.sqrt(sq.mean()))
    n_batches = min(_N_BOOT_BATCHES, x.shape[0])
    if n_batches >= 2:
        stats = [np.sqrt(sq[idx].mean()) for idx in np.array_split(np.arange(x.shape[0]), n_batches)]
        stderr = float(np.std(stats, ddof=1) / np.sqrt(n_batches))
    else:
        stderr = 0.0
    return MetricReport("reconstruction_rms", value, stderr, x.shape[0], fingerprint)
