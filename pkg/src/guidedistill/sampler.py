"""Sampling and encoding procedures.

Deterministic DDIM, the two-for-one stochastic sampler (one double-length
deterministic step followed by one single-length re-noising per
iteration), the ancestral-posterior baseline, the reverse-DDIM encoder,
and encoder/decoder composition for domain transfer.

All samplers walk the uniform grid t = 1, (N-1)/N, ..., 1/N, spend
exactly N denoiser evaluations, and emit the final sample as the x
estimate at the last positive time (the t = 0 state itself, since
sigma_0 = 0).  Given (denoiser, plan) they are pure functions of the
seed, so batches of seeds may run concurrently; a single trajectory is
sequential.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import T_CLAMP, DenoiserOutput, _as_column
from .schedule import CosineSchedule, bridge_variance

SAMPLER_MODES = ("ddim", "stochastic", "ancestral", "encode")


class NonFiniteState(RuntimeError):
    """A sampler state stopped being finite; carries the partial trajectory."""

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class SamplerPlan:
    """What to run: step count, sampler mode, guidance weight, seed."""

    steps: int
    mode: str = "ddim"
    w: float = 0.0
    seed: int = 0
    role: str = "distilled-student"  # or "guided-teacher"; informational
    record_trajectory: bool = False

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode == "stochastic" and self.steps < 2:
            raise ValueError("stochastic sampling needs steps >= 2")


@dataclass
class Trajectory:
    """Diagnostic record of (time, state) pairs along one sampler run."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def append(self, t: float, state: np.ndarray) -> None:
        self.times.append(float(t))
        self.states.append(state.copy())

    def to_csv(self, path) -> None:
        dim = self.states[0].shape[1]
        header = "sample,step,t," + ",".join(f"x{i}" for i in range(dim))
        rows = []
        for step, (t, state) in enumerate(zip(self.times, self.states)):
            for s in range(state.shape[0]):
                coords = ",".join(repr(c) for c in state[s])
                rows.append(f"{s},{step},{t!r},{coords}")
        with open(path, "w") as fh:
            fh.write(header + "\n" + "\n".join(rows) + "\n")


@dataclass
class SampleResult:
    samples: np.ndarray
    trajectory: Trajectory | None
    evals_per_sample: int
    labels: np.ndarray | None = None


def _check_finite(z: np.ndarray, t: float, trajectory: Trajectory | None) -> None:
    if not np.all(np.isfinite(z)):
        raise NonFiniteState(f"non-finite state at t={t}", trajectory)


def _transport(z, t_from, t_to, x, schedule: CosineSchedule) -> np.ndarray:
    n = z.shape[0]
    alpha_from, sigma_from = schedule.alpha_sigma(_as_column(t_from, n))
    alpha_to, sigma_to = schedule.alpha_sigma(_as_column(t_to, n))
    return alpha_to * x + sigma_to * (z - alpha_from * x) / sigma_from


def ddim_step(z_t, t, s, x, schedule: CosineSchedule) -> np.ndarray:
    """One deterministic update z_s = alpha_s x + sigma_s (z_t - alpha_t x)/sigma_t.

    Requires 0 <= s <= t <= 1 with sigma_t > 0 (s == t is the identity).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr > t_arr) or np.any(s_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("ddim_step requires 0 <= s <= t <= 1")
    if np.any(np.sin(0.5 * np.pi * t_arr) == 0.0):
        raise ValueError("ddim_step requires sigma_t > 0")
    return _transport(z_t, t, s, x, schedule)


def reverse_ddim_step(z_t, t, s, x, schedule: CosineSchedule) -> np.ndarray:
    """The encoding update: same transport with s >= t (toward more noise)."""
    t_arr = np.asarray(t, dtype=np.float64)
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < t_arr) or np.any(t_arr < 0.0) or np.any(s_arr > 1.0):
        raise ValueError("reverse_ddim_step requires 0 <= t <= s <= 1")
    if np.any(np.sin(0.5 * np.pi * t_arr) == 0.0):
        raise ValueError("reverse_ddim_step requires sigma_t > 0; use the t=0 limit form")
    return _transport(z_t, t, s, x, schedule)


def invert_to_xhat(z_from, t_from, z_to, t_to, schedule: CosineSchedule,
                   den_floor: float = 1e-12) -> np.ndarray:
    """Solve the one-step transport from (z_from, t_from) to (z_to, t_to) for x.

    This is the unique x that a single deterministic update would need to
    land on z_to; substituting it back reproduces z_to exactly (up to
    rounding).  The denominator alpha_to - (sigma_to/sigma_from) alpha_from
    cannot vanish on the cosine schedule for distinct times, but is
    guarded anyway.
    """
    n = z_from.shape[0]
    alpha_from, sigma_from = schedule.alpha_sigma(_as_column(t_from, n))
    alpha_to, sigma_to = schedule.alpha_sigma(_as_column(t_to, n))
    ratio = sigma_to / sigma_from
    den = alpha_to - ratio * alpha_from
    if np.any(np.abs(den) < den_floor):
        raise ValueError("degenerate inversion denominator")
    return (z_to - ratio * z_from) / den


def _eval_count(denoiser) -> int:
    return denoiser.calls


def _labels_arg(denoiser, labels, n: int):
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError("labels must have one entry per sample")
    return labels


def _w_arg(denoiser, w):
    return w if getattr(denoiser, "w_conditioned", False) else None


def ddim_sample(denoiser, plan: SamplerPlan, n: int | None = None, *,
                labels=None, z_init: np.ndarray | None = None) -> SampleResult:
    """Deterministic N-step sampling from noise (or from a given latent)."""
    rng = np.random.default_rng(plan.seed)
    schedule = denoiser.schedule
    if z_init is None:
        if n is None:
            raise ValueError("need n when sampling from fresh noise")
        z = rng.standard_normal((n, denoiser.dim))
    else:
        z = np.array(z_init, dtype=np.float64)
        n = z.shape[0]
    labels = _labels_arg(denoiser, labels, n)
    w = _w_arg(denoiser, plan.w)
    calls0 = _eval_count(denoiser)
    traj = Trajectory() if plan.record_trajectory else None
    big_n = plan.steps
    if traj is not None:
        traj.append(1.0, z)
    samples = None
    for i in range(big_n, 0, -1):
        t = i / big_n
        out = denoiser.eval(z, t, labels=labels, w=w)
        if i > 1:
            z = ddim_step(z, t, (i - 1) / big_n, out.x, schedule)
            _check_finite(z, (i - 1) / big_n, traj)
            if traj is not None:
                traj.append((i - 1) / big_n, z)
        else:
            samples = out.x
    _check_finite(samples, 0.0, traj)
    if traj is not None:
        traj.append(0.0, samples)
    return SampleResult(samples, traj, _eval_count(denoiser) - calls0, labels)


def stochastic_sample(denoiser, plan: SamplerPlan, n: int, *, labels=None) -> SampleResult:
    """N-step stochastic sampling: double-length deterministic step, then
    a single-length forward re-noising with the bridge variance; the last
    step from t = 1/N is deterministic."""
    if plan.steps < 2:
        raise ValueError("stochastic sampling needs steps >= 2")
    rng = np.random.default_rng(plan.seed)
    schedule = denoiser.schedule
    z = rng.standard_normal((n, denoiser.dim))
    labels = _labels_arg(denoiser, labels, n)
    w = _w_arg(denoiser, plan.w)
    calls0 = _eval_count(denoiser)
    traj = Trajectory() if plan.record_trajectory else None
    big_n = plan.steps
    if traj is not None:
        traj.append(1.0, z)
    for i in range(big_n, 1, -1):
        t = i / big_n
        k = (i - 2) / big_n
        s = (i - 1) / big_n
        out = denoiser.eval(z, t, labels=labels, w=w)
        z_k = ddim_step(z, t, k, out.x, schedule)
        # Forward re-noising k -> s with the exact diffusion bridge.  At
        # k = 0 the bridge degenerates to fresh noising of the clean
        # estimate: alpha_k = 1 and the variance limit is sigma_s^2.
        alpha_s, sigma_s = schedule.alpha_sigma(s)
        if i == 2:
            ratio = alpha_s
            var = sigma_s**2
        else:
            alpha_k, _ = schedule.alpha_sigma(k)
            ratio = alpha_s / alpha_k
            var = bridge_variance(schedule.log_snr(s), schedule.log_snr(k), sigma_s)
        z = ratio * z_k + np.sqrt(var) * rng.standard_normal(z.shape)
        _check_finite(z, s, traj)
        if traj is not None:
            traj.append(s, z)
    out = denoiser.eval(z, 1.0 / big_n, labels=labels, w=w)
    samples = out.x
    _check_finite(samples, 0.0, traj)
    if traj is not None:
        traj.append(0.0, samples)
    return SampleResult(samples, traj, _eval_count(denoiser) - calls0, labels)


def ancestral_sample(denoiser, plan: SamplerPlan, n: int, *, labels=None) -> SampleResult:
    """Stochastic baseline: each step draws z_s from the Gaussian posterior
    of z_s given (z_t, x estimate), with variance (1 - e^(lam_t - lam_s)) sigma_s^2."""
    rng = np.random.default_rng(plan.seed)
    schedule = denoiser.schedule
    z = rng.standard_normal((n, denoiser.dim))
    labels = _labels_arg(denoiser, labels, n)
    w = _w_arg(denoiser, plan.w)
    calls0 = _eval_count(denoiser)
    traj = Trajectory() if plan.record_trajectory else None
    big_n = plan.steps
    if traj is not None:
        traj.append(1.0, z)
    for i in range(big_n, 1, -1):
        t = i / big_n
        s = (i - 1) / big_n
        out = denoiser.eval(z, t, labels=labels, w=w)
        alpha_t, _ = schedule.alpha_sigma(t)
        alpha_s, sigma_s = schedule.alpha_sigma(s)
        if i == big_n:
            # lam(1) = -inf: the posterior limit is fresh noising of the
            # x estimate, mean alpha_s * x, variance sigma_s^2.
            shrink = 0.0
            var = sigma_s**2
            mean = alpha_s * out.x
        else:
            shrink = np.exp(schedule.log_snr(t) - schedule.log_snr(s))
            mean = shrink * (alpha_s / alpha_t) * z + (1.0 - shrink) * alpha_s * out.x
            var = bridge_variance(schedule.log_snr(t), schedule.log_snr(s), sigma_s)
        z = mean + np.sqrt(var) * rng.standard_normal(z.shape)
        _check_finite(z, s, traj)
        if traj is not None:
            traj.append(s, z)
    out = denoiser.eval(z, 1.0 / big_n, labels=labels, w=w)
    samples = out.x
    _check_finite(samples, 0.0, traj)
    if traj is not None:
        traj.append(0.0, samples)
    return SampleResult(samples, traj, _eval_count(denoiser) - calls0, labels)


def encode(denoiser, plan: SamplerPlan, x: np.ndarray, *, labels=None) -> SampleResult:
    """Reverse-DDIM encoding of data to the terminal latent at t = 1.

    The first step starts at t = 0 where sigma_0 = 0 makes the reversed
    update degenerate; there the state advances as
    z_{1/N} = alpha_{1/N} x + sigma_{1/N} eps_hat with eps_hat taken from
    the denoiser evaluated at the clamped time T_CLAMP.
    """
    schedule = denoiser.schedule
    z = np.array(x, dtype=np.float64)
    n = z.shape[0]
    labels = _labels_arg(denoiser, labels, n)
    w = _w_arg(denoiser, plan.w)
    calls0 = _eval_count(denoiser)
    traj = Trajectory() if plan.record_trajectory else None
    big_n = plan.steps
    if traj is not None:
        traj.append(0.0, z)
    for i in range(big_n):
        t = i / big_n
        t_next = (i + 1) / big_n
        if i == 0:
            out = denoiser.eval(z, T_CLAMP, labels=labels, w=w)
            alpha_next, sigma_next = schedule.alpha_sigma(t_next)
            z = alpha_next * x + sigma_next * out.eps
        else:
            out = denoiser.eval(z, t, labels=labels, w=w)
            z = reverse_ddim_step(z, t, t_next, out.x, schedule)
        _check_finite(z, t_next, traj)
        if traj is not None:
            traj.append(t_next, z)
    return SampleResult(z, traj, _eval_count(denoiser) - calls0, labels)


def style_transfer(encoder_denoiser, decoder_denoiser, x: np.ndarray,
                   encode_plan: SamplerPlan, decode_plan: SamplerPlan, *,
                   encode_labels=None, decode_labels=None) -> SampleResult:
    """Encode with the source-domain model, decode with the target-domain model.

    The decoder runs plain DDIM from the produced latent rather than from
    fresh noise; encoder and decoder guidance weights are independent.
    """
    if encoder_denoiser.dim != decoder_denoiser.dim:
        raise ValueError("encoder and decoder must share the data dimension")
    enc = encode(encoder_denoiser, encode_plan, x, labels=encode_labels)
    dec = ddim_sample(decoder_denoiser, decode_plan, labels=decode_labels,
                      z_init=enc.samples)
    return SampleResult(dec.samples, dec.trajectory,
                        enc.evals_per_sample + dec.evals_per_sample, decode_labels)
