"""The whole point, end to end at a reduced budget: collapse the guided
teacher pair into one w-conditioned student (stage one), then halve its
sampling steps progressively (stage two), and compare few-step samples
and evaluation counts against the teacher.

Takes a few minutes on one core.

Run:  python3 demos/03_two_stage_distillation.py
"""

import time
from pathlib import Path

import numpy as np

import guidedistill as gd

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

schedule = gd.make_schedule("cosine-vp")
spec = gd.two_class_line_gmm()
teacher = gd.GuidedTeacher(gd.GmmOracle(spec, schedule, conditional=True),
                           gd.GmmOracle(spec, schedule, conditional=False))
small = {"hidden_dim": 96, "hidden_layers": 3, "embed_dim": 64}

# --- stage one: one student, every guidance weight ------------------------
t0 = time.time()
job1 = gd.DistillJob(iterations=6000, batch_size=256, lr=1e-3, lr_end=1e-5,
                     loss="snr", seed=0, log_every=1000)
stage1 = gd.distill_stage1(teacher, spec, schedule, job1, student_cfg=small)
print(f"stage one: {time.time()-t0:.0f}s, "
      f"loss {stage1.history[0]['loss']:.4f} -> {stage1.history[-1]['loss']:.4f}")

# --- stage two: halve the step count down to 4 -----------------------------
t0 = time.time()
job2 = gd.DistillJob(iterations=1500, batch_size=256, lr=1e-4, lr_end=0.0,
                     loss="truncated-snr", seed=1, log_every=500)
stage2 = gd.distill_stage2_deterministic(stage1.model, spec, schedule, job2,
                                         start_steps=64, stop_steps=4)
print(f"stage two (64 -> 4): {time.time()-t0:.0f}s over "
      f"{1 + max(r['round'] for r in stage2.history)} rounds")

# --- compare samples and costs ---------------------------------------------
n = 4000
labels = spec.sample_labels(n, np.random.default_rng(10))
reference, _ = spec.sample(n, np.random.default_rng(11))
panels = {}
for w in (0.3, 2.0):
    teacher_run = gd.ddim_sample(teacher, gd.SamplerPlan(steps=256, mode="ddim",
                                                         w=w, seed=12), n, labels=labels)
    student_run = gd.ddim_sample(stage2.students[4],
                                 gd.SamplerPlan(steps=4, mode="ddim", w=w, seed=12),
                                 n, labels=labels)
    ed_t = gd.energy_distance(teacher_run.samples, reference)
    ed_s = gd.energy_distance(student_run.samples, reference)
    panels[w] = (teacher_run.samples, student_run.samples)
    print(f"w={w}: teacher 256-step ({teacher_run.evals_per_sample} evals) "
          f"ED={ed_t.value:.4f} | student 4-step ({student_run.evals_per_sample} evals) "
          f"ED={ed_s.value:.4f}")
print("evaluation count reduced by "
      f"{teacher_run.evals_per_sample // student_run.evals_per_sample}x")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    raise SystemExit(0)

fig, axes = plt.subplots(2, 2, figsize=(11, 6), sharex=True, sharey=True)
for row, (w, (ts, ss)) in enumerate(panels.items()):
    for col, (samples, title) in enumerate(
        ((ts, f"teacher, 512 evals, w={w}"), (ss, f"4-step student, 4 evals, w={w}"))
    ):
        ax = axes[row, col]
        ax.scatter(samples[:, 0], samples[:, 1], s=2, alpha=0.3)
        ax.set_title(title)
        ax.set_xlim(-6.5, 6.5)
        ax.set_ylim(-2.5, 2.5)
fig.tight_layout()
fig.savefig(OUT / "03_distilled_vs_teacher.png", dpi=120)
print(f"wrote {OUT / '03_distilled_vs_teacher.png'}")
