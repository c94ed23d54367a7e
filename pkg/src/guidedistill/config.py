"""Experiment configuration files.

A config is one JSON document of flat sections.  Budgets left unset are
filled from the chosen profile ("desk" by default; "paper-scale" keeps
the large-model reference numbers).  Keys:

  seed            int, master seed (every run must be seeded explicitly)
  schedule        schedule kind string ("cosine-vp")
  profile         default profile name, overridable by --profile
  data            Gaussian-mixture spec: means, scales, weights,
                  class_labels (component -> class)
  data_b          optional second domain for style transfer
  model           hidden_dim, hidden_layers, embed_dim
  w_min, w_max    trained guidance interval
  teacher         iterations, batch_size, lr, lr_end, loss, p_uncond,
                  ema_decay
  stage1          iterations, batch_size, lr, lr_end, loss, teacher
                  ("oracle" or a checkpoint path)
  stage2          start_steps, stop_steps, iterations, final_iterations
                  (used for the 1- and 2-step rounds), batch_size, lr,
                  lr_end, loss
  encoder, naive  same shape as stage2
  sample          steps, mode, w, count, denoiser ("oracle" or ckpt path),
                  trajectories
  encode          steps, w, count
  style_transfer  steps, count, encoder_w, decoder_w, encoder, decoder
  eval            count (generated), reference_count (data draws)
  sweep           steps (list), w (list), samplers (list), count,
                  teacher_steps, include_teacher

Only an output-root override comes from the environment; everything else
is in the file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data import GmmSpec
from .distill import DistillJob
from .schedule import SCHEDULE_KINDS, make_schedule

PROFILES = {
    # Test-default budgets: small model, minutes-scale chains.
    "desk": {
        "model": {"hidden_dim": 128, "hidden_layers": 4, "embed_dim": 64},
        "teacher": {"iterations": 4000, "batch_size": 256, "lr": 1e-3,
                    "lr_end": None, "loss": "snr", "p_uncond": 0.1, "ema_decay": None},
        "stage1": {"iterations": 16000, "batch_size": 256, "lr": 1e-3,
                   "lr_end": 1e-5, "loss": "snr", "teacher": "oracle"},
        "stage2": {"start_steps": 64, "stop_steps": 1, "iterations": 2000,
                   "final_iterations": 10000, "batch_size": 256,
                   "lr": 1e-4, "lr_end": 0.0, "loss": "truncated-snr"},
        "encoder": {"start_steps": 64, "stop_steps": 16, "iterations": 2000,
                    "final_iterations": None, "batch_size": 256,
                    "lr": 1e-4, "lr_end": 0.0, "loss": "truncated-snr"},
        "naive": {"start_steps": 64, "stop_steps": 1, "iterations": 2000,
                  "final_iterations": 10000, "batch_size": 256,
                  "lr": 1e-4, "lr_end": 0.0, "loss": "truncated-snr"},
    },
    # Reference budgets for the full-scale recipe; not the test default.
    "paper-scale": {
        "model": {"hidden_dim": 256, "hidden_layers": 4, "embed_dim": 64},
        "teacher": {"iterations": 200000, "batch_size": 256, "lr": 3e-4,
                    "lr_end": None, "loss": "snr", "p_uncond": 0.1, "ema_decay": 0.9999},
        "stage1": {"iterations": 50000, "batch_size": 256, "lr": 3e-4,
                   "lr_end": None, "loss": "snr", "teacher": "checkpoint",
                   "ema_decay": 0.9999},
        "stage2": {"start_steps": 1024, "stop_steps": 1, "iterations": 50000,
                   "final_iterations": 100000, "batch_size": 256,
                   "lr": 1e-4, "lr_end": 0.0, "loss": "truncated-snr"},
        "encoder": {"start_steps": 1024, "stop_steps": 16, "iterations": 50000,
                    "final_iterations": None, "batch_size": 256,
                    "lr": 1e-4, "lr_end": 0.0, "loss": "truncated-snr"},
        "naive": {"start_steps": 1024, "stop_steps": 1, "iterations": 50000,
                  "final_iterations": 100000, "batch_size": 256,
                  "lr": 1e-4, "lr_end": 0.0, "loss": "truncated-snr"},
    },
}

_SIMPLE_DEFAULTS = {
    "seed": 0,
    "schedule": "cosine-vp",
    "w_min": 0.0,
    "w_max": 4.0,
    "sample": {"steps": 16, "mode": "ddim", "w": 0.0, "count": 4096,
               "denoiser": "oracle", "trajectories": False},
    "encode": {"steps": 64, "w": 0.0, "count": 256},
    "style_transfer": {"steps": 16, "count": 512, "encoder_w": 0.0,
                       "decoder_w": 0.0, "encoder": "oracle", "decoder": "oracle"},
    "eval": {"count": 4096, "reference_count": 4096},
    "sweep": {"steps": [1, 4, 8, 16], "w": [0.0, 0.3, 1.0, 2.0, 4.0],
              "samplers": ["ddim", "stochastic"], "count": 4096,
              "teacher_steps": 1024, "include_teacher": True},
}


class ConfigError(ValueError):
    """Malformed experiment config."""


@dataclass
class ExperimentConfig:
    raw: dict
    profile: str

    @classmethod
    def load(cls, path, profile: str | None = None) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(raw, profile)

    @classmethod
    def from_dict(cls, raw: dict, profile: str | None = None) -> "ExperimentConfig":
        profile = profile or raw.get("profile", "desk")
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        merged = json.loads(json.dumps(raw))  # deep copy, JSON-clean
        for key, value in {**_SIMPLE_DEFAULTS, **PROFILES[profile]}.items():
            if not isinstance(value, dict):
                merged.setdefault(key, value)
                continue
            user = merged.get(key, {})
            if not isinstance(user, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            merged[key] = {**value, **user}
        cfg = cls(merged, profile)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        raw = self.raw
        if "data" not in raw:
            raise ConfigError("config must define a 'data' mixture spec")
        if raw["schedule"] not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule {raw['schedule']!r}")
        if not isinstance(raw["seed"], int):
            raise ConfigError("seed must be an integer")
        try:
            self.data_spec()
            if "data_b" in raw:
                self.data_spec("data_b")
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad mixture spec: {exc}") from exc
        if raw["w_min"] > raw["w_max"]:
            raise ConfigError("w_min must be <= w_max")

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def schedule(self):
        return make_schedule(self.raw["schedule"])

    def data_spec(self, key: str = "data") -> GmmSpec:
        return GmmSpec.from_dict(self.raw[key])

    def model_cfg(self) -> dict:
        return dict(self.raw["model"])

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def job(self, section: str, seed_offset: int = 0) -> DistillJob:
        s = self.section(section)
        return DistillJob(
            iterations=s.get("iterations", 2000),
            batch_size=s.get("batch_size", 256),
            lr=s.get("lr", 1e-3),
            lr_end=s.get("lr_end"),
            w_min=self.raw["w_min"],
            w_max=self.raw["w_max"],
            loss=s.get("loss", "snr"),
            seed=self.seed + seed_offset,
            ema_decay=s.get("ema_decay"),
            log_every=s.get("log_every", 200),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
