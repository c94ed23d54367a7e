"""Toy Gaussian-mixture densities: the training data and the oracle targets.

A GmmSpec is a K-component isotropic mixture with optional per-component
class labels.  It is the single source of truth shared by the data
sampler, the analytic posterior-mean denoisers, and the mode statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GmmSpec:
    """Isotropic Gaussian mixture: means (K, d), scales (K,), weights (K,).

    class_labels, when present, assigns each component an integer class;
    the class prior is the summed component weight.
    """

    means: np.ndarray
    scales: np.ndarray
    weights: np.ndarray
    class_labels: np.ndarray | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        scales = np.atleast_1d(np.asarray(self.scales, dtype=np.float64))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        k = means.shape[0]
        if scales.shape != (k,) or weights.shape != (k,):
            raise ValueError("scales and weights must have one entry per component")
        if np.any(scales <= 0.0):
            raise ValueError("component scales must be positive")
        if np.any(weights <= 0.0):
            raise ValueError("component weights must be positive")
        weights = weights / weights.sum()
        labels = self.class_labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (k,):
                raise ValueError("class_labels must have one entry per component")
            if labels.min() < 0 or not np.array_equal(
                np.unique(labels), np.arange(labels.max() + 1)
            ):
                raise ValueError("class labels must be 0..C-1 with every class used")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "class_labels", labels)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_classes(self) -> int | None:
        return None if self.class_labels is None else int(self.class_labels.max()) + 1

    def components_of_class(self, label: int) -> np.ndarray:
        if self.class_labels is None:
            raise ValueError("spec has no class labels")
        return np.flatnonzero(self.class_labels == label)

    def class_prior(self) -> np.ndarray:
        if self.class_labels is None:
            raise ValueError("spec has no class labels")
        prior = np.zeros(self.n_classes)
        np.add.at(prior, self.class_labels, self.weights)
        return prior

    def sample(self, n: int, rng: np.random.Generator, class_label: int | None = None):
        """Draw n points; returns (x, labels) with labels None for unlabeled specs."""
        if class_label is None:
            comp = rng.choice(self.n_components, size=n, p=self.weights)
        else:
            idx = self.components_of_class(class_label)
            p = self.weights[idx] / self.weights[idx].sum()
            comp = idx[rng.choice(idx.size, size=n, p=p)]
        x = self.means[comp] + self.scales[comp, None] * rng.standard_normal((n, self.dim))
        labels = None if self.class_labels is None else self.class_labels[comp]
        return x, labels

    def sample_labels(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw class labels from the class prior."""
        return rng.choice(self.n_classes, size=n, p=self.class_prior())

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        cov = np.zeros((self.dim, self.dim))
        for k in range(self.n_components):
            d = self.means[k] - mu
            cov += self.weights[k] * (self.scales[k] ** 2 * np.eye(self.dim) + np.outer(d, d))
        return cov

    def restrict_to_class(self, label: int) -> "GmmSpec":
        """The renormalized mixture of one class's components (labels dropped)."""
        idx = self.components_of_class(label)
        return GmmSpec(self.means[idx], self.scales[idx], self.weights[idx])

    def to_dict(self) -> dict:
        d = {
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "weights": self.weights.tolist(),
        }
        if self.class_labels is not None:
            d["class_labels"] = self.class_labels.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GmmSpec":
        return cls(
            means=np.asarray(d["means"], dtype=np.float64),
            scales=np.asarray(d["scales"], dtype=np.float64),
            weights=np.asarray(d["weights"], dtype=np.float64),
            class_labels=None if d.get("class_labels") is None else np.asarray(d["class_labels"]),
        )


def gaussian_spec(mean, scale: float) -> GmmSpec:
    """Single-component (plain Gaussian) spec."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    return GmmSpec(means=mean[None, :], scales=np.array([scale]), weights=np.array([1.0]))


def two_class_line_gmm() -> GmmSpec:
    """The benchmark conditional density: two classes, two modes each, on a line.

    Each class has a mode near the class boundary and a mode far from it,
    so guidance both sharpens modes and shifts occupancy toward the far
    mode -- the configuration the trade-off diagnostics exercise.
    """
    return GmmSpec(
        means=np.array([[-4.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [4.0, 0.0]]),
        scales=np.array([0.45, 0.45, 0.45, 0.45]),
        weights=np.array([0.25, 0.25, 0.25, 0.25]),
        class_labels=np.array([0, 0, 1, 1]),
    )
