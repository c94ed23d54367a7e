"""Denoising models and their shared algebra.

Covers the output-parameterization conversions (the network predicts the
velocity v = alpha*eps - sigma*x; x and eps estimates follow from it),
the classifier-free guidance combination, Fourier conditioning features,
a small learned MLP denoiser, and exact posterior-mean oracles for
Gaussian and Gaussian-mixture data.

Every denoiser exposes

    eval(z, t, labels=None, w=None) -> DenoiserOutput

with z of shape (n, d) and t a scalar or (n,) array, and counts its
model-function evaluations in ``.calls``.  Frozen denoisers (oracles, or
learned models whose parameters are not being trained) are safe for
concurrent evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .data import GmmSpec
from .schedule import CosineSchedule

# Oracle evaluations clamp t into [T_CLAMP, 1 - T_CLAMP] where the posterior
# degenerates; the clamp is counted on the model so callers can see it.
T_CLAMP = 1e-5


@dataclass
class DenoiserOutput:
    """The (x, eps, v) triple, mutually consistent with the producing z, t.

    Under the VP schedule: x = alpha*z - sigma*v, eps = sigma*z + alpha*v,
    and the state reconstructs as z = alpha*x + sigma*eps.
    """

    x: np.ndarray
    eps: np.ndarray
    v: np.ndarray


def _as_column(t, n: int) -> np.ndarray:
    """Shape a scalar or (n,) time-like quantity as an (n, 1) column."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return np.full((n, 1), float(t))
    if t.shape != (n,):
        raise ValueError(f"expected scalar or shape ({n},), got {t.shape}")
    return t[:, None]


def v_to_outputs(z: np.ndarray, t, v: np.ndarray, schedule: CosineSchedule) -> DenoiserOutput:
    """Convert a v prediction at (z, t) into the consistent (x, eps, v) triple."""
    alpha, sigma = schedule.alpha_sigma(_as_column(t, z.shape[0]))
    x = alpha * z - sigma * v
    eps = sigma * z + alpha * v
    return DenoiserOutput(x=x, eps=eps, v=v)


def combine_guided(x_cond: np.ndarray, x_uncond: np.ndarray, w) -> np.ndarray:
    """Guidance combination (1+w)*x_cond - w*x_uncond.

    Computed as x_cond + w*(x_cond - x_uncond) so the w=0 and
    x_cond == x_uncond cases are exact.
    """
    if x_cond.shape != x_uncond.shape:
        raise ValueError("guided combination requires matching shapes")
    w = _as_column(w, x_cond.shape[0]) if np.ndim(w) else float(w)
    return x_cond + w * (x_cond - x_uncond)


def combine_guided_outputs(cond: DenoiserOutput, uncond: DenoiserOutput, w) -> DenoiserOutput:
    """Guidance combination applied to the whole triple (stays consistent)."""
    return DenoiserOutput(
        x=combine_guided(cond.x, uncond.x, w),
        eps=combine_guided(cond.eps, uncond.eps, w),
        v=combine_guided(cond.v, uncond.v, w),
    )


def fourier_features(u, dim: int, f_min: float = 1.0, f_max: float = 64.0) -> np.ndarray:
    """Interleaved [sin(2 pi f_j u), cos(2 pi f_j u)] features, f_j geometric.

    u is expected in [0, 1]; dim must be even, giving dim/2 frequencies
    from f_min to f_max.
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError("feature dim must be even and >= 2")
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    freqs = np.geomspace(f_min, f_max, dim // 2)
    angles = 2.0 * np.pi * u[:, None] * freqs[None, :]
    out = np.empty((u.shape[0], dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def embed_w(w, dim: int, w_min: float, w_max: float):
    """Fourier features of the guidance weight, normalized to the trained interval.

    Returns (features, n_clamped); out-of-interval w is clamped and counted.
    A collapsed interval (w_min == w_max) embeds everything at 0.
    """
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    n_clamped = int(np.count_nonzero((w < w_min) | (w > w_max)))
    w = np.clip(w, w_min, w_max)
    if w_max > w_min:
        u = (w - w_min) / (w_max - w_min)
    else:
        u = np.zeros_like(w)
    return fourier_features(u, dim), n_clamped


class GaussianOracle:
    """Exact posterior-mean denoiser for N(mean, scale^2 I) data."""

    kind = "gaussian-oracle"
    w_conditioned = False
    class_conditional = False

    def __init__(self, mean, scale: float, schedule: CosineSchedule):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.scale = float(scale)
        self.schedule = schedule
        self.calls = 0
        self.clamp_events = 0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def _clamp(self, t, n: int) -> np.ndarray:
        t = _as_column(t, n)
        clamped = np.clip(t, T_CLAMP, 1.0 - T_CLAMP)
        self.clamp_events += int(np.count_nonzero(clamped != t))
        return clamped

    def eval(self, z: np.ndarray, t, labels=None, w=None) -> DenoiserOutput:
        self.calls += 1
        t = self._clamp(t, z.shape[0])
        alpha, sigma = self.schedule.alpha_sigma(t)
        var = alpha**2 * self.scale**2 + sigma**2
        x = self.mean + (alpha * self.scale**2 / var) * (z - alpha * self.mean)
        eps = (z - alpha * x) / sigma
        v = alpha * eps - sigma * x
        return DenoiserOutput(x=x, eps=eps, v=v)


class GmmOracle:
    """Exact posterior-mean denoiser for Gaussian-mixture data.

    With ``conditional=True`` the mixture is restricted to the components
    of each sample's class label (renormalized), which is the analytic
    class-conditional model; otherwise the full mixture is used.
    """

    kind = "gmm-oracle"
    w_conditioned = False

    def __init__(self, spec: GmmSpec, schedule: CosineSchedule, conditional: bool = False):
        if conditional and spec.class_labels is None:
            raise ValueError("conditional oracle requires a spec with class labels")
        self.spec = spec
        self.schedule = schedule
        self.conditional = conditional
        self.class_conditional = conditional
        self.calls = 0
        self.clamp_events = 0

    @property
    def dim(self) -> int:
        return self.spec.dim

    def _clamp(self, t, n: int) -> np.ndarray:
        t = _as_column(t, n)
        clamped = np.clip(t, T_CLAMP, 1.0 - T_CLAMP)
        self.clamp_events += int(np.count_nonzero(clamped != t))
        return clamped

    def eval(self, z: np.ndarray, t, labels=None, w=None) -> DenoiserOutput:
        self.calls += 1
        n = z.shape[0]
        t = self._clamp(t, n)
        alpha, sigma = self.schedule.alpha_sigma(t)  # (n, 1)
        spec = self.spec
        # Marginal of z given component k is N(alpha*mu_k, (alpha^2 s_k^2 + sigma^2) I).
        var = alpha**2 * spec.scales[None, :] ** 2 + sigma**2  # (n, K)
        diff = z[:, None, :] - alpha[:, :, None] * spec.means[None, :, :]  # (n, K, d)
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        loglik = np.log(spec.weights)[None, :] - 0.5 * (
            sq / var + spec.dim * np.log(2.0 * np.pi * var)
        )
        if self.conditional:
            if labels is None:
                raise ValueError("class-conditional oracle requires labels")
            labels = np.asarray(labels)
            allowed = spec.class_labels[None, :] == labels[:, None]
            loglik = np.where(allowed, loglik, -np.inf)
        resp = np.exp(loglik - logsumexp(loglik, axis=1, keepdims=True))  # (n, K)
        # Per-component posterior mean of x given z.
        gain = alpha * spec.scales[None, :] ** 2 / var  # (n, K)
        comp_mean = spec.means[None, :, :] + gain[:, :, None] * diff  # (n, K, d)
        x = np.einsum("nk,nkd->nd", resp, comp_mean)
        eps = (z - alpha * x) / sigma
        v = alpha * eps - sigma * x
        return DenoiserOutput(x=x, eps=eps, v=v)


class MLPDenoiser:
    """Learned denoiser: an MLP on z with additive time/class/w conditioning.

    The trunk input is z projected to the hidden width plus the Fourier
    time embedding, plus (when class-conditional) a learned class table
    with a trailing null-class row, plus (when w-conditioned) a Fourier
    embedding of the guidance weight fed through a zero-initialized
    projection so a fresh w pathway contributes nothing.

    ``eval`` is the frozen numpy path used by samplers and teachers;
    ``forward_v`` builds the identical computation on the autodiff tape
    for training.  The two paths share parameter arrays and evaluation
    order, so they agree bitwise.
    """

    kind = "learned-mlp"

    def __init__(self, dim: int, schedule: CosineSchedule, *, hidden_dim: int = 256,
                 hidden_layers: int = 4, embed_dim: int = 64,
                 num_classes: int | None = None, w_conditioned: bool = False,
                 w_min: float = 0.0, w_max: float = 4.0, seed: int = 0):
        self.dim = dim
        self.schedule = schedule
        self.hidden_dim = hidden_dim
        self.hidden_layers = hidden_layers
        self.embed_dim = embed_dim
        self.num_classes = num_classes
        self.w_conditioned = w_conditioned
        self.w_min = float(w_min)
        self.w_max = float(w_max)
        self.calls = 0
        self.clamp_events = 0
        self.params = ParamStore()
        rng = np.random.default_rng(seed)

        def linear(name: str, fan_in: int, fan_out: int, zero: bool = False):
            w = np.zeros((fan_in, fan_out)) if zero else rng.normal(
                0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)
            )
            self.params.add(f"{name}.weight", w)
            self.params.add(f"{name}.bias", np.zeros(fan_out))

        linear("in_proj", dim, hidden_dim)
        linear("time_proj", embed_dim, hidden_dim)
        if num_classes is not None:
            self.params.add(
                "class_embed.table",
                rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (num_classes + 1, hidden_dim)),
            )
        if w_conditioned:
            linear("w_proj", embed_dim, hidden_dim, zero=True)
        for i in range(hidden_layers):
            linear(f"hidden{i}", hidden_dim, hidden_dim)
        linear("out_proj", hidden_dim, dim)

    @property
    def class_conditional(self) -> bool:
        return self.num_classes is not None

    @property
    def null_label(self) -> int:
        if self.num_classes is None:
            raise ValueError("model is not class-conditional")
        return self.num_classes

    def spec(self) -> dict:
        """Architecture description used for checkpoints and fingerprints."""
        return {
            "kind": self.kind,
            "dim": self.dim,
            "hidden_dim": self.hidden_dim,
            "hidden_layers": self.hidden_layers,
            "embed_dim": self.embed_dim,
            "num_classes": self.num_classes,
            "w_conditioned": self.w_conditioned,
            "w_min": self.w_min,
            "w_max": self.w_max,
        }

    @classmethod
    def from_spec(cls, spec: dict, schedule: CosineSchedule, seed: int = 0) -> "MLPDenoiser":
        spec = dict(spec)
        if spec.pop("kind") != cls.kind:
            raise ValueError("spec is not a learned-mlp spec")
        return cls(spec.pop("dim"), schedule, seed=seed, **spec)

    def _conditioning(self, n: int, t, labels, w):
        """Validate conditioning and build the numpy feature blocks."""
        t = np.asarray(t, dtype=np.float64)
        t = np.full(n, float(t)) if t.ndim == 0 else t
        if t.shape != (n,):
            raise ValueError("t must be scalar or one value per row")
        tfeat = fourier_features(t, self.embed_dim)
        if self.num_classes is not None:
            if labels is None:
                raise ValueError("class-conditional model requires labels")
            labels = np.asarray(labels, dtype=np.int64)
            if labels.min() < 0 or labels.max() > self.null_label:
                raise ValueError("label outside the embedding table")
        elif labels is not None:
            raise ValueError("model is not class-conditional")
        wfeat = None
        if self.w_conditioned:
            if w is None:
                raise ValueError("w-conditioned model requires w")
            w = np.asarray(w, dtype=np.float64)
            w = np.full(n, float(w)) if w.ndim == 0 else w
            wfeat, n_clamped = embed_w(w, self.embed_dim, self.w_min, self.w_max)
            self.clamp_events += n_clamped
        elif w is not None:
            raise ValueError("model is not w-conditioned")
        return tfeat, labels, wfeat

    def value(self, z: np.ndarray, t, labels=None, w=None) -> np.ndarray:
        """Frozen (tape-free) v prediction."""
        p = self.params
        tfeat, labels, wfeat = self._conditioning(z.shape[0], t, labels, w)
        h = (z @ p["in_proj.weight"].data + p["in_proj.bias"].data) + (
            tfeat @ p["time_proj.weight"].data + p["time_proj.bias"].data
        )
        if self.num_classes is not None:
            h = h + p["class_embed.table"].data[labels]
        if self.w_conditioned:
            h = h + (wfeat @ p["w_proj.weight"].data + p["w_proj.bias"].data)
        h = h * expit(h)
        for i in range(self.hidden_layers):
            h = h @ p[f"hidden{i}.weight"].data + p[f"hidden{i}.bias"].data
            h = h * expit(h)
        return h @ p["out_proj.weight"].data + p["out_proj.bias"].data

    def forward_v(self, z: np.ndarray, t, labels=None, w=None) -> Tensor:
        """Taped v prediction for training; mirrors value() op for op."""
        p = self.params
        tfeat, labels, wfeat = self._conditioning(z.shape[0], t, labels, w)
        h = ad.add(
            ad.add(ad.matmul(ad.astensor(z), p["in_proj.weight"]), p["in_proj.bias"]),
            ad.add(ad.matmul(ad.astensor(tfeat), p["time_proj.weight"]), p["time_proj.bias"]),
        )
        if self.num_classes is not None:
            h = ad.add(h, ad.embedding(p["class_embed.table"], labels))
        if self.w_conditioned:
            h = ad.add(
                h, ad.add(ad.matmul(ad.astensor(wfeat), p["w_proj.weight"]), p["w_proj.bias"])
            )
        h = ad.silu(h)
        for i in range(self.hidden_layers):
            h = ad.silu(ad.add(ad.matmul(h, p[f"hidden{i}.weight"]), p[f"hidden{i}.bias"]))
        return ad.add(ad.matmul(h, p["out_proj.weight"]), p["out_proj.bias"])

    def eval(self, z: np.ndarray, t, labels=None, w=None) -> DenoiserOutput:
        self.calls += 1
        v = self.value(z, t, labels=labels, w=w)
        return v_to_outputs(z, t, v, self.schedule)

    def copy(self) -> "MLPDenoiser":
        dup = MLPDenoiser.from_spec(self.spec(), self.schedule)
        dup.params.load(self.params.arrays())
        return dup


def init_student_from_teacher(teacher: MLPDenoiser, *, w_min: float | None = None,
                              w_max: float | None = None) -> MLPDenoiser:
    """Build a w-conditioned student that initially reproduces the teacher exactly.

    All teacher parameters are copied bitwise; the student's only new
    parameters are the w projection, which starts at zero so the w input
    has no influence until training moves it.
    """
    if teacher.kind != "learned-mlp":
        raise ValueError("warm start requires a learned teacher")
    if teacher.w_conditioned:
        raise ValueError("teacher is already w-conditioned")
    spec = teacher.spec()
    spec["w_conditioned"] = True
    if w_min is not None:
        spec["w_min"] = float(w_min)
    if w_max is not None:
        spec["w_max"] = float(w_max)
    student = MLPDenoiser.from_spec(spec, teacher.schedule)
    student.params.load(teacher.params.arrays(), strict=False)
    # w_proj.* are zero from construction; verify the architectures agreed
    # on everything else.
    extra = set(student.params.names()) - set(teacher.params.names())
    if extra != {"w_proj.weight", "w_proj.bias"}:
        raise ValueError(f"unexpected student parameters: {sorted(extra)}")
    return student


class GuidedTeacher:
    """A conditional/unconditional denoiser pair evaluated as one guided model.

    With ``unconditional=None`` the pair is realized as a single network
    whose null-class token plays the unconditional role; otherwise two
    separate denoisers are used.  ``eval`` returns the guided combination
    and therefore costs two underlying model evaluations.
    """

    kind = "guided-teacher"
    w_conditioned = True

    def __init__(self, conditional, unconditional=None):
        self.conditional = conditional
        self.unconditional = unconditional
        if unconditional is not None and unconditional.dim != conditional.dim:
            raise ValueError("conditional and unconditional denoisers disagree on dim")

    @property
    def dim(self) -> int:
        return self.conditional.dim

    @property
    def schedule(self):
        return self.conditional.schedule

    @property
    def class_conditional(self) -> bool:
        return self.conditional.class_conditional

    @property
    def calls(self) -> int:
        if self.unconditional is None or self.unconditional is self.conditional:
            return self.conditional.calls
        return self.conditional.calls + self.unconditional.calls

    def _sub_w(self, model, w):
        return w if getattr(model, "w_conditioned", False) else None

    def eval_conditional(self, z, t, labels, w=None) -> DenoiserOutput:
        return self.conditional.eval(z, t, labels=labels, w=self._sub_w(self.conditional, w))

    def eval_unconditional(self, z, t, w=None) -> DenoiserOutput:
        if self.unconditional is None:
            null = np.full(z.shape[0], self.conditional.null_label, dtype=np.int64)
            return self.conditional.eval(z, t, labels=null, w=self._sub_w(self.conditional, w))
        return self.unconditional.eval(z, t, w=self._sub_w(self.unconditional, w))

    def eval(self, z: np.ndarray, t, labels=None, w=None) -> DenoiserOutput:
        if w is None:
            raise ValueError("guided evaluation requires a guidance weight w")
        cond = self.eval_conditional(z, t, labels, w)
        uncond = self.eval_unconditional(z, t, w)
        return combine_guided_outputs(cond, uncond, w)
