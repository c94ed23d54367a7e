"""Experiment orchestration: subcommands, checkpoints on disk, metrics files.

Subcommands: train-teacher, distill-stage1, distill-stage2 (--sampler
det|stoch), distill-encoder, distill-naive, sample, encode,
style-transfer, eval, sweep.  Every run writes a manifest (config hash,
seed, versions, argv) into its output directory, training appends
JSON-lines logs, and failures exit with a distinct code plus one
machine-parsable line on stderr:

    exit 2  usage / unknown subcommand      exit 5  missing input file
    exit 3  malformed config                exit 6  training diverged
    exit 4  checkpoint fingerprint mismatch exit 1  unexpected error

The only environment override is GUIDEDISTILL_OUT for the output root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import (
    FORMAT_VERSION,
    CheckpointError,
    FingerprintMismatch,
    load_model,
    save_model,
)
from .config import ConfigError, ExperimentConfig
from .data import GmmSpec
from .denoiser import GmmOracle, GuidedTeacher
from .distill import (
    distill_encoder,
    distill_stage1,
    distill_stage2_deterministic,
    distill_stage2_stochastic,
    naive_two_student,
    train_teacher,
)
from .metrics import energy_distance, mode_stats
from .sampler import (
    SamplerPlan,
    ancestral_sample,
    ddim_sample,
    encode,
    stochastic_sample,
    style_transfer,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_FINGERPRINT = 4
EXIT_MISSING = 5
EXIT_DIVERGED = 6

_SAMPLER_ALIASES = {"det": "ddim", "stoch": "stochastic", "ddim": "ddim",
                    "stochastic": "stochastic", "ancestral": "ancestral"}


class Diverged(RuntimeError):
    pass


def _fail(code: int, name: str, detail: str) -> int:
    print(f"error: code={name} detail={detail}", file=sys.stderr)
    return code


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_jsonl(path: Path, records) -> None:
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_manifest(out: Path, cfg: ExperimentConfig, args) -> None:
    _write_json(out / "manifest.json", {
        "command": args.command,
        "config": str(args.config),
        "config_sha256": cfg.fingerprint(),
        "seed": cfg.seed,
        "profile": cfg.profile,
        "package_version": __version__,
        "checkpoint_format_version": FORMAT_VERSION,
        "argv": sys.argv[1:],
    })


def _save_samples_csv(path: Path, samples: np.ndarray, labels=None) -> None:
    dim = samples.shape[1]
    header = ",".join(f"x{i}" for i in range(dim))
    cols = [samples]
    if labels is not None:
        header += ",label"
        cols.append(np.asarray(labels, dtype=np.float64)[:, None])
    np.savetxt(path, np.hstack(cols), delimiter=",", header=header,
               comments="", fmt="%.17g")


def _oracle_teacher(spec: GmmSpec, schedule) -> GuidedTeacher:
    return GuidedTeacher(GmmOracle(spec, schedule, conditional=True),
                         GmmOracle(spec, schedule, conditional=False))


def _resolve_denoiser(name, cfg: ExperimentConfig, out: Path, *, data_key: str = "data"):
    """Map a config/CLI denoiser reference to an evaluable model.

    "oracle" gives the analytic guided teacher for the data spec; any
    other value is a checkpoint path (relative paths are tried against
    the output directory first).
    """
    schedule = cfg.schedule()
    if name == "oracle":
        return _oracle_teacher(cfg.data_spec(data_key), schedule)
    path = Path(name)
    if not path.exists() and (out / path).exists():
        path = out / path
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {name}")
    model, _ = load_model(path, schedule)
    return model


def _draw_labels(model, spec: GmmSpec, n: int, seed: int):
    if not getattr(model, "class_conditional", False):
        return None
    return spec.sample_labels(n, np.random.default_rng(seed + 1))


def _run_sampler(model, plan: SamplerPlan, n: int, labels):
    if plan.mode == "ddim":
        return ddim_sample(model, plan, n, labels=labels)
    if plan.mode == "stochastic":
        return stochastic_sample(model, plan, n, labels=labels)
    if plan.mode == "ancestral":
        return ancestral_sample(model, plan, n, labels=labels)
    raise ValueError(f"mode {plan.mode!r} is not a sampling mode")


def _cmd_train_teacher(cfg: ExperimentConfig, out: Path, args) -> None:
    sec = cfg.section("teacher")
    result = train_teacher(cfg.data_spec(), cfg.schedule(), cfg.job("teacher"),
                           p_uncond=sec.get("p_uncond", 0.1),
                           model_cfg=cfg.model_cfg())
    _write_jsonl(out / "teacher_log.jsonl", result.history)
    if result.diverged:
        save_model(out / "teacher_diverged.ckpt", result.model, {"diverged": True})
        raise Diverged("teacher training diverged; last good checkpoint saved")
    save_model(out / "teacher.ckpt", result.model, {"stage": "teacher"})
    if result.ema_arrays is not None:
        ema_model = result.model.copy()
        ema_model.params.load(result.ema_arrays)
        save_model(out / "teacher_ema.ckpt", ema_model, {"stage": "teacher", "ema": True})


def _stage1_teacher(cfg: ExperimentConfig, out: Path):
    ref = cfg.section("stage1").get("teacher", "oracle")
    if ref == "oracle":
        return _oracle_teacher(cfg.data_spec(), cfg.schedule())
    if ref == "checkpoint":
        ref = "teacher.ckpt"
    model = _resolve_denoiser(ref, cfg, out)
    return GuidedTeacher(model)


def _cmd_distill_stage1(cfg: ExperimentConfig, out: Path, args) -> None:
    teacher = _stage1_teacher(cfg, out)
    result = distill_stage1(teacher, cfg.data_spec(), cfg.schedule(),
                            cfg.job("stage1", seed_offset=1),
                            student_cfg=cfg.model_cfg())
    _write_jsonl(out / "stage1_log.jsonl", result.history)
    if result.diverged:
        raise Diverged("stage-1 distillation diverged")
    save_model(out / "stage1.ckpt", result.model,
               {"stage": "stage1", "w_min": cfg.raw["w_min"], "w_max": cfg.raw["w_max"]})


def _progressive_cmd(cfg: ExperimentConfig, out: Path, section: str, runner,
                     subdir: str, teacher=None):
    sec = cfg.section(section)
    if teacher is None:
        stage1_path = out / "stage1.ckpt"
        if stage1_path.exists():
            teacher, _ = load_model(stage1_path, cfg.schedule())
        else:
            teacher = _oracle_teacher(cfg.data_spec(), cfg.schedule())
    result = runner(teacher, cfg.data_spec(), cfg.schedule(),
                    cfg.job(section, seed_offset=2),
                    start_steps=sec["start_steps"], stop_steps=sec["stop_steps"],
                    final_iterations=sec.get("final_iterations"),
                    student_cfg=cfg.model_cfg())
    run_dir = out / subdir
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_jsonl(run_dir / "log.jsonl", result.history)
    if result.diverged:
        raise Diverged(f"{section} distillation diverged")
    for steps, student in result.students.items():
        save_model(run_dir / f"student_N{steps}.ckpt", student,
                   {"stage": section, "steps": steps,
                    "w_min": cfg.raw["w_min"], "w_max": cfg.raw["w_max"]})
    return result


def _cmd_distill_stage2(cfg: ExperimentConfig, out: Path, args) -> None:
    mode = _SAMPLER_ALIASES.get(args.sampler or "det")
    if mode == "ddim":
        _progressive_cmd(cfg, out, "stage2", distill_stage2_deterministic, "stage2_det")
    elif mode == "stochastic":
        _progressive_cmd(cfg, out, "stage2", distill_stage2_stochastic, "stage2_stoch")
    else:
        raise ConfigError(f"--sampler must be det or stoch, got {args.sampler!r}")


def _cmd_distill_encoder(cfg: ExperimentConfig, out: Path, args) -> None:
    _progressive_cmd(cfg, out, "encoder", distill_encoder, "encoder")


def _cmd_distill_naive(cfg: ExperimentConfig, out: Path, args) -> None:
    teacher = _stage1_teacher(cfg, out)
    _progressive_cmd(cfg, out, "naive", naive_two_student, "naive", teacher=teacher)


def _sample_plan(cfg: ExperimentConfig, args, section: str = "sample") -> SamplerPlan:
    sec = cfg.section(section)
    mode = sec.get("mode", "ddim")
    if args.sampler is not None:
        if args.sampler not in _SAMPLER_ALIASES:
            raise ConfigError(f"unknown sampler {args.sampler!r}")
        mode = _SAMPLER_ALIASES[args.sampler]
    return SamplerPlan(
        steps=args.steps if args.steps is not None else sec.get("steps", 16),
        mode=mode,
        w=args.w if args.w is not None else sec.get("w", 0.0),
        seed=cfg.seed,
        record_trajectory=bool(sec.get("trajectories", False)),
    )


def _cmd_sample(cfg: ExperimentConfig, out: Path, args) -> None:
    sec = cfg.section("sample")
    plan = _sample_plan(cfg, args)
    name = args.ckpt or sec.get("denoiser", "oracle")
    model = _resolve_denoiser(name, cfg, out)
    plan.role = "guided-teacher" if isinstance(model, GuidedTeacher) else "distilled-student"
    n = sec.get("count", 4096)
    labels = _draw_labels(model, cfg.data_spec(), n, cfg.seed)
    result = _run_sampler(model, plan, n, labels)
    _save_samples_csv(out / "samples.csv", result.samples, result.labels)
    if result.trajectory is not None:
        result.trajectory.to_csv(out / "trajectory.csv")
    _write_json(out / "run.json", {
        "denoiser": str(name), "mode": plan.mode, "steps": plan.steps,
        "w": plan.w, "seed": plan.seed, "role": plan.role, "count": n,
        "evals_per_sample": result.evals_per_sample,
        "total_evaluations": result.evals_per_sample * n,
    })


def _cmd_encode(cfg: ExperimentConfig, out: Path, args) -> None:
    sec = cfg.section("encode")
    plan = _sample_plan(cfg, args, "encode")
    plan.mode = "encode"
    name = args.ckpt or sec.get("denoiser", "oracle")
    model = _resolve_denoiser(name, cfg, out)
    n = sec.get("count", 256)
    rng = np.random.default_rng(cfg.seed)
    x, labels = cfg.data_spec().sample(n, rng)
    if not getattr(model, "class_conditional", False):
        labels = None
    result = encode(model, plan, x, labels=labels)
    _save_samples_csv(out / "encode_inputs.csv", x, labels)
    _save_samples_csv(out / "latents.csv", result.samples)
    _write_json(out / "run.json", {
        "denoiser": str(name), "mode": "encode", "steps": plan.steps,
        "w": plan.w, "seed": cfg.seed, "count": n,
        "evals_per_sample": result.evals_per_sample,
    })


def _cmd_style_transfer(cfg: ExperimentConfig, out: Path, args) -> None:
    sec = cfg.section("style_transfer")
    if "data_b" not in cfg.raw:
        raise ConfigError("style transfer needs a 'data_b' domain spec")
    schedule = cfg.schedule()
    enc_model = _resolve_denoiser(sec.get("encoder", "oracle"), cfg, out)
    dec_model = _resolve_denoiser(sec.get("decoder", "oracle"), cfg, out, data_key="data_b")
    steps = args.steps if args.steps is not None else sec.get("steps", 16)
    n = sec.get("count", 512)
    rng = np.random.default_rng(cfg.seed)
    x, labels_a = cfg.data_spec().sample(n, rng)
    enc_labels = labels_a if getattr(enc_model, "class_conditional", False) else None
    dec_labels = _draw_labels(dec_model, cfg.data_spec("data_b"), n, cfg.seed)
    enc_plan = SamplerPlan(steps=steps, mode="encode", w=sec.get("encoder_w", 0.0),
                           seed=cfg.seed)
    dec_plan = SamplerPlan(steps=steps, mode="ddim",
                           w=args.w if args.w is not None else sec.get("decoder_w", 0.0),
                           seed=cfg.seed)
    result = style_transfer(enc_model, dec_model, x, enc_plan, dec_plan,
                            encode_labels=enc_labels, decode_labels=dec_labels)
    _save_samples_csv(out / "transfer_inputs.csv", x, labels_a)
    _save_samples_csv(out / "transfer_outputs.csv", result.samples, dec_labels)
    _write_json(out / "run.json", {
        "steps": steps, "encoder_w": enc_plan.w, "decoder_w": dec_plan.w,
        "seed": cfg.seed, "count": n, "evals_per_sample": result.evals_per_sample,
    })


def _metric_rows_to_csv(path: Path, rows: list) -> None:
    if not rows:
        return
    header = list(rows[0])
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                              for k in header))
    path.write_text("\n".join(lines) + "\n")


def _evaluate_samples(cfg: ExperimentConfig, samples: np.ndarray, *, method: str,
                      sampler: str, steps: int, w: float, evals: int) -> dict:
    spec = cfg.data_spec()
    n_ref = cfg.section("eval").get("reference_count", 4096)
    reference, _ = spec.sample(n_ref, np.random.default_rng(cfg.seed + 9999))
    ed = energy_distance(samples, reference, fingerprint=cfg.fingerprint()[:12])
    ms = mode_stats(samples, spec)
    return {
        "method": method, "sampler": sampler, "steps": steps, "w": w,
        "energy_distance": ed.value, "energy_distance_stderr": ed.stderr,
        "entropy": ms.entropy, "entropy_stderr": ms.entropy_stderr,
        "spread": ms.spread, "spread_stderr": ms.spread_stderr,
        "evals_per_sample": evals, "n_samples": samples.shape[0],
    }


def _cmd_eval(cfg: ExperimentConfig, out: Path, args) -> None:
    sec = cfg.section("eval")
    plan = _sample_plan(cfg, args)
    name = args.ckpt or cfg.section("sample").get("denoiser", "oracle")
    model = _resolve_denoiser(name, cfg, out)
    n = sec.get("count", 4096)
    labels = _draw_labels(model, cfg.data_spec(), n, cfg.seed)
    result = _run_sampler(model, plan, n, labels)
    method = "teacher" if isinstance(model, GuidedTeacher) else "distilled"
    row = _evaluate_samples(cfg, result.samples, method=method, sampler=plan.mode,
                            steps=plan.steps, w=plan.w, evals=result.evals_per_sample)
    _write_json(out / "metrics.json", row)
    _metric_rows_to_csv(out / "metrics.csv", [row])


def _cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> None:
    """Grid over steps x w x sampler; one CSV row per cell (the table shape),
    which doubles as the metric-vs-steps curve data per guidance weight."""
    sec = cfg.section("sweep")
    rows = []
    ckpt_dirs = {"ddim": out / "stage2_det", "stochastic": out / "stage2_stoch"}
    for sampler in sec["samplers"]:
        mode = _SAMPLER_ALIASES.get(sampler)
        if mode is None:
            raise ConfigError(f"unknown sweep sampler {sampler!r}")
        for steps in sec["steps"]:
            ckpt = ckpt_dirs.get(mode, out / "stage2_det") / f"student_N{steps}.ckpt"
            if not ckpt.exists():
                raise FileNotFoundError(f"sweep needs {ckpt}")
            model = _resolve_denoiser(str(ckpt), cfg, out)
            for w in sec["w"]:
                if mode == "stochastic" and steps < 2:
                    continue
                plan = SamplerPlan(steps=steps, mode=mode, w=w, seed=cfg.seed)
                labels = _draw_labels(model, cfg.data_spec(), sec["count"], cfg.seed)
                result = _run_sampler(model, plan, sec["count"], labels)
                rows.append(_evaluate_samples(cfg, result.samples, method="distilled",
                                              sampler=mode, steps=steps, w=w,
                                              evals=result.evals_per_sample))
    if sec.get("include_teacher", True):
        teacher = _oracle_teacher(cfg.data_spec(), cfg.schedule())
        for w in sec["w"]:
            plan = SamplerPlan(steps=sec["teacher_steps"], mode="ddim", w=w,
                               seed=cfg.seed, role="guided-teacher")
            labels = _draw_labels(teacher, cfg.data_spec(), sec["count"], cfg.seed)
            result = _run_sampler(teacher, plan, sec["count"], labels)
            rows.append(_evaluate_samples(cfg, result.samples, method="teacher",
                                          sampler="ddim", steps=sec["teacher_steps"],
                                          w=w, evals=result.evals_per_sample))
    _metric_rows_to_csv(out / "sweep.csv", rows)
    _write_json(out / "sweep.json", rows)


_COMMANDS = {
    "train-teacher": _cmd_train_teacher,
    "distill-stage1": _cmd_distill_stage1,
    "distill-stage2": _cmd_distill_stage2,
    "distill-encoder": _cmd_distill_encoder,
    "distill-naive": _cmd_distill_naive,
    "sample": _cmd_sample,
    "encode": _cmd_encode,
    "style-transfer": _cmd_style_transfer,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedistill",
                                     description="guided-diffusion distillation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--profile", choices=["desk", "paper-scale"], default=None)
        p.add_argument("--sampler", default=None,
                       help="det|stoch (distill-stage2) or ddim|stochastic|ancestral")
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--w", type=float, default=None)
        p.add_argument("--ckpt", default=None, help="checkpoint path or 'oracle'")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, profile=args.profile)
        if args.seed is not None:
            cfg.raw["seed"] = args.seed
        out = Path(args.out or os.environ.get("GUIDEDISTILL_OUT", "runs") or "runs")
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, cfg, args)
        _COMMANDS[args.command](cfg, out, args)
        return EXIT_OK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except FingerprintMismatch as exc:
        return _fail(EXIT_FINGERPRINT, "fingerprint", str(exc))
    except CheckpointError as exc:
        return _fail(EXIT_CONFIG, "checkpoint", str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, "missing-file", str(exc))
    except Diverged as exc:
        return _fail(EXIT_DIVERGED, "diverged", str(exc))
    except Exception as exc:  # noqa: BLE001 - boundary: map anything else to exit 1
        return _fail(EXIT_UNEXPECTED, "unexpected", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
