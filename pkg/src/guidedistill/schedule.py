"""Scalar noise-schedule math shared by training, distillation, and sampling.

The only implemented schedule kind is the variance-preserving cosine
schedule

    alpha(t) = cos(pi t / 2),    sigma(t) = sin(pi t / 2),    t in [0, 1],

for which alpha^2 + sigma^2 == 1 identically and the log signal-to-noise
ratio lambda(t) = log(alpha^2 / sigma^2) decreases strictly on (0, 1).
All functions accept scalars or numpy arrays of times and are pure, so
they are safe to call from any number of threads.
"""

from __future__ import annotations

import numpy as np

SCHEDULE_KINDS = ("cosine-vp",)
LOSS_WEIGHT_KINDS = ("snr", "truncated-snr")


class CosineSchedule:
    """Variance-preserving cosine schedule. Stateless apart from its kind tag."""

    kind = "cosine-vp"

    def alpha_sigma(self, t):
        """Return (alpha_t, sigma_t) for t in [0, 1]. Out-of-range t is rejected."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError("time must lie in [0, 1]")
        half_pi_t = 0.5 * np.pi * t
        return np.cos(half_pi_t), np.sin(half_pi_t)

    def log_snr(self, t):
        """lambda_t = log(alpha_t^2 / sigma_t^2).

        The endpoints are +/-infinity and are rejected; callers that need
        to touch t = 0 or t = 1 must clamp or use alpha/sigma directly.
        """
        t = np.asarray(t, dtype=np.float64)
        if np.any(t <= 0.0) or np.any(t >= 1.0):
            raise ValueError("log_snr requires 0 < t < 1; clamp at the call site")
        half_pi_t = 0.5 * np.pi * t
        return 2.0 * (np.log(np.cos(half_pi_t)) - np.log(np.sin(half_pi_t)))

    def __eq__(self, other):
        return isinstance(other, CosineSchedule)

    def __repr__(self):
        return f"CosineSchedule(kind={self.kind!r})"


def make_schedule(kind: str) -> CosineSchedule:
    """Build a schedule from its config string."""
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    return CosineSchedule()


def loss_weight(kind: str, lam):
    """Loss weight omega(lambda); 'snr' is e^lambda, 'truncated-snr' is max(e^lambda, 1)."""
    lam = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam)):
        raise ValueError("loss_weight requires finite lambda")
    if kind == "snr":
        return np.exp(lam)
    if kind == "truncated-snr":
        return np.maximum(np.exp(lam), 1.0)
    raise ValueError(f"unknown loss weight kind {kind!r}; expected one of {LOSS_WEIGHT_KINDS}")


def bridge_variance(lam_a, lam_b, sigma_a):
    """Variance (1 - e^(lam_a - lam_b)) * sigma_a^2 of the forward re-noising bridge.

    Index a is the noisier time (lam_a <= lam_b).  lam_b may be +inf, in
    which case the bridge degenerates to fresh noising with variance
    sigma_a^2.
    """
    lam_a = np.asarray(lam_a, dtype=np.float64)
    lam_b = np.asarray(lam_b, dtype=np.float64)
    sigma_a = np.asarray(sigma_a, dtype=np.float64)
    if np.any(lam_a > lam_b):
        raise ValueError("bridge_variance requires lam_a <= lam_b (a is the noisier time)")
    if np.any(sigma_a < 0.0):
        raise ValueError("sigma_a must be nonnegative")
    # -expm1 keeps accuracy when the log-SNR gap is tiny.
    return -np.expm1(lam_a - lam_b) * sigma_a**2
