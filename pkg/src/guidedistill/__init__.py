"""Training, guided sampling, and two-stage progressive distillation of
classifier-free guided diffusion models on small 2-D densities.

The pieces: a variance-preserving cosine noise schedule, a minimal
float64 reverse-mode autodiff core, v-parameterized MLP denoisers plus
exact mixture-posterior oracles, deterministic/stochastic/ancestral
samplers and a reverse-DDIM encoder, the distillation trainers, and
energy-distance / mode-statistics evaluation.
"""

__version__ = "0.1.0"

from .autodiff import NonFiniteValue, ParamStore, Tensor
from .data import GmmSpec, gaussian_spec, two_class_line_gmm
from .denoiser import (
    DenoiserOutput,
    GaussianOracle,
    GmmOracle,
    GuidedTeacher,
    MLPDenoiser,
    combine_guided,
    combine_guided_outputs,
    embed_w,
    fourier_features,
    init_student_from_teacher,
    v_to_outputs,
)
from .distill import (
    DistillJob,
    DistillTarget,
    ProgressiveState,
    Stage2Result,
    TeacherResult,
    TrainResult,
    distill_encoder,
    distill_stage1,
    distill_stage2_deterministic,
    distill_stage2_stochastic,
    distillation_target,
    naive_targets,
    naive_two_student,
    train_teacher,
)
from .metrics import MetricReport, ModeStats, energy_distance, mode_stats, reconstruction_error
from .optim import Adam, linear_anneal
from .sampler import (
    SamplerPlan,
    SampleResult,
    Trajectory,
    ancestral_sample,
    ddim_sample,
    ddim_step,
    encode,
    invert_to_xhat,
    reverse_ddim_step,
    stochastic_sample,
    style_transfer,
)
from .schedule import CosineSchedule, bridge_variance, loss_weight, make_schedule
