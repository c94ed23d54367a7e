"""A tour of the building blocks: the cosine variance-preserving schedule,
exact posterior-mean denoisers on a 2-D mixture, and what the guidance
combination does to the denoised estimate.

Run:  python3 demos/01_schedule_and_guidance.py
Writes figures into demos/out/.
"""

from pathlib import Path

import numpy as np

import guidedistill as gd

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

schedule = gd.make_schedule("cosine-vp")

# --- the schedule ----------------------------------------------------------
# alpha keeps the signal, sigma the noise; the variance-preserving identity
# alpha^2 + sigma^2 = 1 holds everywhere, and the log-SNR sweeps from +inf
# at t=0 to -inf at t=1.
t = np.linspace(0.0, 1.0, 501)
alpha, sigma = schedule.alpha_sigma(t)
print("VP identity max deviation:", np.abs(alpha**2 + sigma**2 - 1).max())
print("log-SNR at t=0.25:", schedule.log_snr(0.25))

# --- oracle denoisers ------------------------------------------------------
# For mixture data the posterior mean E[x | z_t] is available in closed form,
# which gives us an exact "perfectly trained" model to test everything against.
spec = gd.two_class_line_gmm()
cond = gd.GmmOracle(spec, schedule, conditional=True)
uncond = gd.GmmOracle(spec, schedule, conditional=False)
teacher = gd.GuidedTeacher(cond, uncond)

rng = np.random.default_rng(0)
x, labels = spec.sample(6, rng)
z = 0.8 * x + 0.6 * rng.standard_normal(x.shape)  # roughly t ~ 0.59

print("\nnoisy input -> denoised (unconditional):")
out_u = uncond.eval(z, 0.59)
for zi, xi in zip(z[:3], out_u.x[:3]):
    print(f"  {np.round(zi, 2)} -> {np.round(xi, 2)}")

# Guidance extrapolates the conditional prediction away from the
# unconditional one: x_guided = (1+w) x_cond - w x_uncond.
print("\nguided denoising of one point at several w (label=0):")
point = z[:1]
for w in (0.0, 1.0, 4.0):
    guided = teacher.eval(point, 0.59, labels=labels[:1], w=w)
    print(f"  w={w}: {np.round(guided.x[0], 3)}")

# --- figures ---------------------------------------------------------------
try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib not installed; skipping figures")
    raise SystemExit(0)

fig, axes = plt.subplots(1, 3, figsize=(13, 4))
axes[0].plot(t, alpha, label="alpha")
axes[0].plot(t, sigma, label="sigma")
axes[0].set_title("cosine VP schedule")
axes[0].set_xlabel("t")
axes[0].legend()

inner = np.linspace(1e-3, 1 - 1e-3, 400)
axes[1].plot(inner, schedule.log_snr(inner))
axes[1].set_title("log-SNR")
axes[1].set_xlabel("t")

# denoising vector field at a moderate noise level: arrows from z to E[x|z]
grid = np.linspace(-6, 6, 18)
zz = np.stack(np.meshgrid(grid, np.linspace(-2, 2, 7)), -1).reshape(-1, 2)
est = uncond.eval(zz, 0.5).x
axes[2].quiver(zz[:, 0], zz[:, 1], est[:, 0] - zz[:, 0], est[:, 1] - zz[:, 1],
               angles="xy", scale_units="xy", scale=1.0, width=0.003, alpha=0.7)
axes[2].scatter(spec.means[:, 0], spec.means[:, 1], c="red", marker="x", s=80)
axes[2].set_title("posterior-mean field at t=0.5")
fig.tight_layout()
fig.savefig(OUT / "01_schedule_and_field.png", dpi=120)
print(f"\nwrote {OUT / '01_schedule_and_field.png'}")
