"""Training procedures: guided-teacher training, the w-conditioned first
distillation stage, progressive step-halving for the deterministic and
stochastic samplers, encoder distillation, and the two-student baseline.

All trainers are deterministic functions of (teacher, data, job): every
random draw comes from one seeded generator, jobs are single-threaded,
and a non-finite loss or gradient aborts the run with the last logged
parameter snapshot restored and the result flagged as diverged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteValue, Tensor
from .data import GmmSpec
from .denoiser import (
    T_CLAMP,
    GuidedTeacher,
    MLPDenoiser,
    _as_column,
    init_student_from_teacher,
)
from .optim import Adam, linear_anneal
from .sampler import _transport, invert_to_xhat
from .schedule import LOSS_WEIGHT_KINDS, CosineSchedule, loss_weight

# Uniform time draws are clipped into [_T_EPS, 1 - _T_EPS] so the loss
# weight's log-SNR stays finite; the clip fires with probability ~2^-53.
_T_EPS = 1e-12

DISTILL_VARIANTS = ("deterministic", "stochastic", "encoder")


@dataclass
class DistillJob:
    """Budget and sampling ranges for one training job.

    lr_end=None means a constant learning rate; otherwise the rate is
    annealed linearly from lr to lr_end over the job's iterations (for
    progressive rounds: over each round).  ema_decay, when set, maintains
    an exponential moving average of the parameters alongside training
    (teacher / first-stage knob only).
    """

    iterations: int = 4000
    batch_size: int = 256
    lr: float = 1e-3
    lr_end: float | None = None
    w_min: float = 0.0
    w_max: float = 4.0
    loss: str = "snr"
    seed: int = 0
    ema_decay: float | None = None
    log_every: int = 200

    def __post_init__(self):
        if self.iterations <= 0 or self.batch_size <= 0:
            raise ValueError("iterations and batch_size must be positive")
        if self.w_min > self.w_max:
            raise ValueError("w_min must be <= w_max")
        if self.loss not in LOSS_WEIGHT_KINDS:
            raise ValueError(f"unknown loss weight kind {self.loss!r}")


@dataclass
class ProgressiveState:
    """Where a step-halving run currently stands."""

    steps: int
    round_index: int

    def halve(self) -> "ProgressiveState":
        if self.steps < 2:
            raise ValueError("cannot halve below one step")
        return ProgressiveState(self.steps // 2, self.round_index + 1)


@dataclass
class TrainResult:
    model: MLPDenoiser
    history: list = field(default_factory=list)
    diverged: bool = False
    ema_arrays: dict | None = None


@dataclass
class TeacherResult:
    teacher: GuidedTeacher
    model: MLPDenoiser
    history: list = field(default_factory=list)
    diverged: bool = False
    ema_arrays: dict | None = None


@dataclass
class Stage2Result:
    students: dict  # steps -> MLPDenoiser snapshot at the end of that round
    final: MLPDenoiser
    final_steps: int
    history: list = field(default_factory=list)
    diverged: bool = False


@dataclass
class DistillTarget:
    """Teacher two-step endpoint and the x target that reproduces it in one step."""

    x_tilde: np.ndarray
    z_end: np.ndarray
    t_end: np.ndarray
    t_eval: np.ndarray


def _cond_args(model, labels, w):
    """Conditioning actually accepted by this model."""
    use_labels = labels if getattr(model, "class_conditional", False) else None
    use_w = w if getattr(model, "w_conditioned", False) else None
    return use_labels, use_w


def _teacher_eval_x(teacher, z, t, labels, w) -> np.ndarray:
    use_labels, use_w = _cond_args(teacher, labels, w)
    return teacher.eval(z, t, labels=use_labels, w=use_w).x


def distillation_target(teacher, z_t: np.ndarray, i: np.ndarray, n_steps: int,
                        labels, w, schedule: CosineSchedule,
                        variant: str = "deterministic") -> DistillTarget:
    """Run the teacher's two transport steps for one batch and invert them.

    i holds per-sample grid indices: 1..N for the sampling variants, 0..N-1
    for the encoder.  Per variant the teacher advances

      deterministic: t -> t - 0.5/N -> t - 1/N      (two half-length steps)
      stochastic:    t -> t - 1/N   -> t - 2/N      (two full-length steps;
                     at i == 1 a single step t -> 0 is distilled instead)
      encoder:       t -> t + 0.5/N -> t + 1/N      (reversed; the i == 0
                     start evaluates at the clamped time T_CLAMP since
                     sigma_0 = 0)

    and the returned x_tilde is the x-prediction whose single step from
    t_eval lands exactly on the teacher's endpoint.
    """
    if variant not in DISTILL_VARIANTS:
        raise ValueError(f"unknown distillation variant {variant!r}")
    i = np.asarray(i)
    t = i / n_steps

    def two_step(z, t_from, t_mid, t_to):
        x1 = _teacher_eval_x(teacher, z, t_from, labels_sub, w_sub)
        z_mid = _transport(z, t_from, t_mid, x1, schedule)
        x2 = _teacher_eval_x(teacher, z_mid, t_mid, labels_sub, w_sub)
        return _transport(z_mid, t_mid, t_to, x2, schedule)

    if variant == "deterministic":
        labels_sub, w_sub = labels, w
        t_mid = t - 0.5 / n_steps
        t_end = t - 1.0 / n_steps
        z_end = two_step(z_t, t, t_mid, t_end)
        x_tilde = invert_to_xhat(z_t, t, z_end, t_end, schedule)
        return DistillTarget(x_tilde, z_end, t_end, t)

    if variant == "encoder":
        labels_sub, w_sub = labels, w
        t_eval = np.maximum(t, T_CLAMP)
        t_mid = t + 0.5 / n_steps
        t_end = t + 1.0 / n_steps
        z_end = two_step(z_t, t_eval, t_mid, t_end)
        x_tilde = invert_to_xhat(z_t, t_eval, z_end, t_end, schedule)
        return DistillTarget(x_tilde, z_end, t_end, t_eval)

    # stochastic: double-length steps with the single-step edge at i == 1
    edge = i == 1
    x_tilde = np.empty_like(z_t)
    z_end = np.empty_like(z_t)
    t_end = np.zeros_like(t)
    if np.any(~edge):
        m = ~edge
        labels_sub = None if labels is None else labels[m]
        w_sub = None if w is None else np.asarray(w)[m]
        tm = t[m]
        t_mid = tm - 1.0 / n_steps
        te = tm - 2.0 / n_steps
        ze = two_step(z_t[m], tm, t_mid, te)
        z_end[m] = ze
        t_end[m] = te
        x_tilde[m] = invert_to_xhat(z_t[m], tm, ze, te, schedule)
    if np.any(edge):
        m = edge
        labels_sub = None if labels is None else labels[m]
        w_sub = None if w is None else np.asarray(w)[m]
        tm = t[m]
        te = tm - 1.0 / n_steps
        x1 = _teacher_eval_x(teacher, z_t[m], tm, labels_sub, w_sub)
        ze = _transport(z_t[m], tm, te, x1, schedule)
        z_end[m] = ze
        t_end[m] = te
        x_tilde[m] = invert_to_xhat(z_t[m], tm, ze, te, schedule)
    return DistillTarget(x_tilde, z_end, t_end, t)


def naive_targets(teacher: GuidedTeacher, z_t: np.ndarray, i: np.ndarray,
                  n_steps: int, labels, w, schedule: CosineSchedule):
    """Two-student targets: the trajectory advances on the guided combination,
    but the second half-steps run the conditional and unconditional heads
    separately, yielding one x target per branch.

    Returns (x_tilde_cond, x_tilde_uncond, z_end_cond, z_end_uncond, t_end).
    """
    i = np.asarray(i)
    t = i / n_steps
    t_mid = t - 0.5 / n_steps
    t_end = t - 1.0 / n_steps
    x_w = teacher.eval(z_t, t, labels=labels, w=w).x
    z_mid = _transport(z_t, t, t_mid, x_w, schedule)
    x_c = teacher.eval_conditional(z_mid, t_mid, labels, w).x
    z_c_end = _transport(z_mid, t_mid, t_end, x_c, schedule)
    x_u = teacher.eval_unconditional(z_mid, t_mid, w).x
    z_u_end = _transport(z_mid, t_mid, t_end, x_u, schedule)
    x_tilde_c = invert_to_xhat(z_t, t, z_c_end, t_end, schedule)
    x_tilde_u = invert_to_xhat(z_t, t, z_u_end, t_end, schedule)
    return x_tilde_c, x_tilde_u, z_c_end, z_u_end, t_end


def _weight_column(kind: str, t, schedule: CosineSchedule) -> np.ndarray:
    lam = schedule.log_snr(np.clip(t, _T_EPS, 1.0 - _T_EPS))
    return loss_weight(kind, lam)[:, None]


def _weighted_x_loss(model: MLPDenoiser, z, t, labels, w, target_x, weight_col) -> Tensor:
    """omega(lambda_t)-weighted squared x error, built on the tape."""
    alpha, sigma = model.schedule.alpha_sigma(_as_column(t, z.shape[0]))
    v = model.forward_v(z, t, labels=labels, w=w)
    xhat = ad.sub(ad.astensor(alpha * z), ad.mul(ad.astensor(sigma), v))
    diff = ad.sub(xhat, ad.astensor(target_x))
    row = ad.reduce_sum(ad.mul(diff, diff), axis=1, keepdims=True)
    return ad.mean(ad.mul(ad.astensor(weight_col), row))


def _adam_loop(model: MLPDenoiser, job: DistillJob, iterations: int, batch_fn,
               meta: dict | None = None, history: list | None = None):
    """Shared optimizer loop: anneal, divergence abort, EMA, history records."""
    opt = Adam(model.params, lr=job.lr)
    rng = np.random.default_rng(job.seed)
    history = [] if history is None else history
    diverged = False
    ema = None
    if job.ema_decay is not None:
        ema = model.params.arrays()
    last_good = model.params.arrays()
    window_sum, window_n = 0.0, 0
    for it in range(iterations):
        lr = job.lr if job.lr_end is None else linear_anneal(job.lr, job.lr_end, it, iterations)
        model.params.zero_grad()
        loss = batch_fn(rng)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            diverged = True
            model.params.load(last_good)
            break
        ad.backward(loss)
        try:
            opt.step(lr=lr)
        except NonFiniteValue:
            diverged = True
            model.params.load(last_good)
            break
        if ema is not None:
            d = job.ema_decay
            for name, t_param in model.params.items():
                ema[name] *= d
                ema[name] += (1.0 - d) * t_param.data
        window_sum += loss_val
        window_n += 1
        if (it + 1) % job.log_every == 0 or it + 1 == iterations:
            # mean batch loss since the previous record: point samples are
            # too noisy for the per-round monotonicity diagnostics
            history.append({"iteration": it + 1, "loss": window_sum / window_n,
                            "lr": lr, **(meta or {})})
            window_sum, window_n = 0.0, 0
            last_good = model.params.arrays()
    return history, diverged, ema


def train_teacher(data: GmmSpec, schedule: CosineSchedule, job: DistillJob, *,
                  p_uncond: float = 0.1, model_cfg: dict | None = None) -> TeacherResult:
    """Train the guided teacher: one class-conditional network whose labels
    are dropped to the null token with probability p_uncond, so the same
    parameters serve as the jointly trained unconditional model."""
    if data.class_labels is None:
        raise ValueError("teacher training needs a class-labeled dataset")
    cfg = dict(model_cfg or {})
    model = MLPDenoiser(data.dim, schedule, num_classes=data.n_classes,
                        w_conditioned=False, seed=cfg.pop("seed", job.seed), **cfg)

    def batch(rng):
        x, labels = data.sample(job.batch_size, rng)
        drop = rng.random(job.batch_size) < p_uncond
        labels = np.where(drop, model.null_label, labels)
        t = np.clip(rng.random(job.batch_size), _T_EPS, 1.0 - _T_EPS)
        alpha, sigma = schedule.alpha_sigma(t[:, None])
        z = alpha * x + sigma * rng.standard_normal(x.shape)
        wcol = _weight_column(job.loss, t, schedule)
        return _weighted_x_loss(model, z, t, labels, None, x, wcol)

    history, diverged, ema = _adam_loop(model, job, job.iterations, batch)
    return TeacherResult(GuidedTeacher(model), model, history, diverged, ema)


def _fresh_student(data: GmmSpec, schedule: CosineSchedule, job: DistillJob,
                   student_cfg: dict | None) -> MLPDenoiser:
    cfg = dict(student_cfg or {})
    return MLPDenoiser(data.dim, schedule,
                       num_classes=data.n_classes,
                       w_conditioned=True, w_min=job.w_min, w_max=job.w_max,
                       seed=cfg.pop("seed", job.seed), **cfg)


def distill_stage1(teacher, data: GmmSpec, schedule: CosineSchedule, job: DistillJob, *,
                   student: MLPDenoiser | None = None,
                   student_cfg: dict | None = None) -> TrainResult:
    """Collapse the guided teacher pair into one w-conditioned student.

    Each draw noises a data point, combines the teacher's conditional and
    unconditional predictions at a uniformly drawn guidance weight, and
    regresses the student's x prediction onto that combination.  The data
    draw only produces z_t; the student never sees clean data directly.

    A learned (non-w-conditioned) teacher warm-starts the student with its
    own parameters; an analytic teacher gets a fresh student.
    """
    if student is None:
        cond = getattr(teacher, "conditional", None)
        if isinstance(cond, MLPDenoiser) and not cond.w_conditioned:
            student = init_student_from_teacher(cond, w_min=job.w_min, w_max=job.w_max)
        else:
            student = _fresh_student(data, schedule, job, student_cfg)

    def batch(rng):
        x, labels = data.sample(job.batch_size, rng)
        t = np.clip(rng.random(job.batch_size), _T_EPS, 1.0 - _T_EPS)
        w = rng.uniform(job.w_min, job.w_max, job.batch_size)
        alpha, sigma = schedule.alpha_sigma(t[:, None])
        z = alpha * x + sigma * rng.standard_normal(x.shape)
        target = _teacher_eval_x(teacher, z, t, labels, w)
        wcol = _weight_column(job.loss, t, schedule)
        s_labels, s_w = _cond_args(student, labels, w)
        return _weighted_x_loss(student, z, t, s_labels, s_w, target, wcol)

    history, diverged, ema = _adam_loop(student, job, job.iterations, batch)
    return TrainResult(student, history, diverged, ema)


def _check_steps(start_steps: int, stop_steps: int) -> None:
    for name, n in (("start_steps", start_steps), ("stop_steps", stop_steps)):
        if n < 1 or n & (n - 1):
            raise ValueError(f"{name} must be a positive power of two")
    if stop_steps > start_steps:
        raise ValueError("stop_steps must be <= start_steps")


def _progressive(teacher, data: GmmSpec, schedule: CosineSchedule, job: DistillJob, *,
                 start_steps: int, stop_steps: int, variant: str,
                 final_iterations: int | None,
                 student_cfg: dict | None) -> Stage2Result:
    _check_steps(start_steps, stop_steps)
    students: dict[int, MLPDenoiser] = {}
    history: list = []
    diverged = False
    state = ProgressiveState(steps=start_steps, round_index=0)
    current_teacher = teacher
    while state.steps >= stop_steps:
        n = state.steps
        if isinstance(current_teacher, MLPDenoiser):
            student = current_teacher.copy()
        else:
            student = _fresh_student(data, schedule, job, student_cfg)
        iterations = job.iterations
        if final_iterations is not None and n <= 2:
            iterations = final_iterations

        def batch(rng, n=n, student=student, tch=current_teacher):
            x, labels = data.sample(job.batch_size, rng)
            if variant == "encoder":
                i = rng.integers(0, n, job.batch_size)
            else:
                i = rng.integers(1, n + 1, job.batch_size)
            w = rng.uniform(job.w_min, job.w_max, job.batch_size)
            alpha, sigma = schedule.alpha_sigma((np.maximum(i / n, T_CLAMP))[:, None])
            z = alpha * x + sigma * rng.standard_normal(x.shape)
            tgt = distillation_target(tch, z, i, n, labels, w, schedule, variant)
            wcol = _weight_column(job.loss, tgt.t_eval, schedule)
            s_labels, s_w = _cond_args(student, labels, w)
            return _weighted_x_loss(student, z, tgt.t_eval, s_labels, s_w, tgt.x_tilde, wcol)

        meta = {"round": state.round_index, "steps": n, "variant": variant}
        _, round_diverged, _ = _adam_loop(student, job, iterations, batch, meta, history)
        diverged = diverged or round_diverged
        students[n] = student
        current_teacher = student
        if n == stop_steps:
            break
        state = state.halve()
    return Stage2Result(students, students[stop_steps], stop_steps, history, diverged)


def distill_stage2_deterministic(teacher, data, schedule, job, *, start_steps: int = 64,
                                 stop_steps: int = 1, final_iterations: int | None = None,
                                 student_cfg: dict | None = None) -> Stage2Result:
    """Progressive step-halving against two half-length teacher steps."""
    return _progressive(teacher, data, schedule, job, start_steps=start_steps,
                        stop_steps=stop_steps, variant="deterministic",
                        final_iterations=final_iterations, student_cfg=student_cfg)


def distill_stage2_stochastic(teacher, data, schedule, job, *, start_steps: int = 64,
                              stop_steps: int = 1, final_iterations: int | None = None,
                              student_cfg: dict | None = None) -> Stage2Result:
    """Progressive step-halving for the stochastic sampler: the target spans
    two full-length teacher steps, with a single-step edge case at t = 1/N."""
    return _progressive(teacher, data, schedule, job, start_steps=start_steps,
                        stop_steps=stop_steps, variant="stochastic",
                        final_iterations=final_iterations, student_cfg=student_cfg)


def distill_encoder(teacher, data, schedule, job, *, start_steps: int = 64,
                    stop_steps: int = 16, final_iterations: int | None = None,
                    student_cfg: dict | None = None) -> Stage2Result:
    """Progressive distillation of the reverse-DDIM encoding direction."""
    return _progressive(teacher, data, schedule, job, start_steps=start_steps,
                        stop_steps=stop_steps, variant="encoder",
                        final_iterations=final_iterations, student_cfg=student_cfg)


def naive_two_student(teacher: GuidedTeacher, data: GmmSpec, schedule: CosineSchedule,
                      job: DistillJob, *, start_steps: int = 64, stop_steps: int = 1,
                      final_iterations: int | None = None,
                      student_cfg: dict | None = None) -> Stage2Result:
    """The rejected baseline: progressively distill a student that mirrors the
    teacher's structure (conditional + unconditional heads in one null-token
    network, both w-conditioned), with separate per-branch targets and a
    summed loss.  Sample from the result by wrapping a round's student in
    GuidedTeacher, which re-combines the heads at each step.
    """
    _check_steps(start_steps, stop_steps)
    if data.class_labels is None:
        raise ValueError("two-student distillation needs a class-labeled dataset")
    students: dict[int, MLPDenoiser] = {}
    history: list = []
    diverged = False
    state = ProgressiveState(steps=start_steps, round_index=0)
    current_teacher = teacher
    while state.steps >= stop_steps:
        n = state.steps
        cond = current_teacher.conditional
        if isinstance(cond, MLPDenoiser) and cond.w_conditioned:
            student = cond.copy()
        elif isinstance(cond, MLPDenoiser):
            student = init_student_from_teacher(cond, w_min=job.w_min, w_max=job.w_max)
        else:
            student = _fresh_student(data, schedule, job, student_cfg)
        iterations = job.iterations
        if final_iterations is not None and n <= 2:
            iterations = final_iterations
        null = np.full(job.batch_size, student.null_label, dtype=np.int64)

        def batch(rng, n=n, student=student, tch=current_teacher):
            x, labels = data.sample(job.batch_size, rng)
            i = rng.integers(1, n + 1, job.batch_size)
            t = i / n
            w = rng.uniform(job.w_min, job.w_max, job.batch_size)
            alpha, sigma = schedule.alpha_sigma(t[:, None])
            z = alpha * x + sigma * rng.standard_normal(x.shape)
            xt_c, xt_u, _, _, _ = naive_targets(tch, z, i, n, labels, w, schedule)
            wcol = _weight_column(job.loss, t, schedule)
            a_col, s_col = schedule.alpha_sigma(t[:, None])
            v_c = student.forward_v(z, t, labels=labels, w=w)
            v_u = student.forward_v(z, t, labels=null, w=w)
            xhat_c = ad.sub(ad.astensor(a_col * z), ad.mul(ad.astensor(s_col), v_c))
            xhat_u = ad.sub(ad.astensor(a_col * z), ad.mul(ad.astensor(s_col), v_u))
            d_c = ad.sub(xhat_c, ad.astensor(xt_c))
            d_u = ad.sub(xhat_u, ad.astensor(xt_u))
            row = ad.add(
                ad.reduce_sum(ad.mul(d_c, d_c), axis=1, keepdims=True),
                ad.reduce_sum(ad.mul(d_u, d_u), axis=1, keepdims=True),
            )
            return ad.mean(ad.mul(ad.astensor(wcol), row))

        meta = {"round": state.round_index, "steps": n, "variant": "two-student"}
        _, round_diverged, _ = _adam_loop(student, job, iterations, batch, meta, history)
        diverged = diverged or round_diverged
        students[n] = student
        current_teacher = GuidedTeacher(student)
        if n == stop_steps:
            break
        state = state.halve()
    return Stage2Result(students, students[stop_steps], stop_steps, history, diverged)
