"""Experiment configuration.

Configs are JSON objects; any key left out falls back to the experiment's
defaults in :data:`DEFAULTS`. Example::

    {
      "experiment": "fig1",
      "seed": 0,
      "data": {"d": 2, "n": 2000, "sigma": [[5, 0], [0, 1]],
               "teacher": {"neurons": [[1.0, [0.87, 0.5]]], "act": "relu", "noise_std": 0.0}},
      "ensemble": {"m": 100, "act": "leaky_relu", "init_scales": [1.0]},
      "integration": {"scheme": "rk4", "dt": 0.01, "t_end": 1.0, "retraction": "renormalize"},
      "params": {"lr": 0.05, "iterations": 8000}
    }

``data.csv`` may name a ``x1,...,xd,y`` file instead of generating Gaussian
samples (``data.center_policy`` is then ``reject`` or ``recenter``).
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import (
    DataDistribution,
    TeacherSpec,
    generate_gaussian,
    get_activation,
    get_loss,
    load_csv,
    teacher_targets,
)

EXPERIMENTS = ("generate", "simulate", "verify", "fig1", "fig2", "fig3", "convergence")


class ConfigError(ValueError):
    pass


def _angle_neurons(angles_deg, weights):
    return [[float(w), [math.cos(math.radians(t)), math.sin(math.radians(t))]] for t, w in zip(angles_deg, weights)]


_BASE = {
    "seed": 0,
    "data": {
        "d": 2,
        "n": 2000,
        "sigma": [[5.0, 0.0], [0.0, 1.0]],
        "seed": None,
        "center_tol": 1e-8,
        "pd_tol": 1e-10,
        "csv": None,
        "center_policy": "reject",
        "teacher": {"neurons": _angle_neurons([30, 150, 270], [1.0, 1.0, 1.0]), "act": "relu", "noise_std": 0.0},
    },
    "ensemble": {"m": 100, "act": "leaky_relu", "loss": "squared", "init_scales": [1.0]},
    "integration": {"scheme": "rk4", "dt": 0.01, "t_end": 1.0, "retraction": "renormalize", "mean_field": True},
    "params": {},
}

DEFAULTS: dict[str, dict] = {
    "generate": {},
    "simulate": {"ensemble": {"m": 20}, "integration": {"t_end": 5.0}},
    "fig1": {
        "data": {"n": 1000},
        "params": {
            "lr": 0.05,
            "iterations": 8000,
            "speed_iteration": 500,
            "repetitions": 8,
            "snapshot_iterations": [0, 2000, 4000, 6000, 8000],
            "n_angles": 360,
            "sector_halfwidth_deg": 30.0,
            "min_ratio": 1.5,
            "control": True,
            "control_range": [0.5, 2.0],
        },
    },
    "fig2": {
        "ensemble": {"m": 50, "act": "relu", "init_scales": [1.0, 10.0]},
        "params": {
            "lr": 0.5,
            "iterations": 8000,
            "snapshot_iterations": [0, 2000, 4000, 6000, 8000],
            "angle_threshold": 0.1,
            "a_init": "positive",
            "a_scale": 0.01,
        },
    },
    "fig3": {
        "ensemble": {"m": 20, "act": "relu", "init_scales": [1e-3, 1e-2, 1e-1, 1.0]},
        "params": {"lr": 0.5},
    },
    "verify": {
        "data": {"d": 3, "n": 400, "sigma": [[4.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.5]],
                 "teacher": {"neurons": [[1.5, [1.0, 0.0, 0.0]], [-1.0, [0.0, 1.0, 1.0]], [1.0, [1.0, -1.0, 0.5]]],
                             "act": "relu", "noise_std": 0.0}},
        "ensemble": {"m": 4, "act": "leaky_relu"},
        "params": {
            "gradient_configs": 100,
            "metric_trials": 1000,
            "ot_trials": 200,
            "regular_trials": 1000,
            "norm_dt": 1e-3,
            "norm_t_end": 10.0,
            "equiv_dt": 1e-4,
            "equiv_t_end": 2.0,
            "order_dts": [0.1, 0.05],
            "order_act": "tanh",
        },
    },
    "convergence": {
        "params": {
            "m_list": [16, 64, 256],
            "t_grid": [0.5, 1.0],
            "seeds": [0, 1, 2, 3, 4],
            "paired_seeds": False,
            "dt": 0.05,
            "init_kind": "iid",
            "a_dist": "uniform",
            "base_m": 16,
            "min_decrease_fraction": 0.8,
        },
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    data: dict
    ensemble: dict
    integration: dict
    params: dict
    out: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, experiment: str, overrides: dict | None = None, seed: int | None = None) -> ExperimentConfig:
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
        overrides = dict(overrides or {})
        named = overrides.pop("experiment", experiment)
        if named != experiment:
            raise ConfigError(f"config is for experiment {named!r}, not {experiment!r}")
        merged = deep_merge(deep_merge(_BASE, DEFAULTS[experiment]), overrides)
        if seed is not None:
            merged["seed"] = seed
        cfg = cls(
            experiment=experiment,
            seed=int(merged["seed"]),
            data=merged["data"],
            ensemble=merged["ensemble"],
            integration=merged["integration"],
            params=merged["params"],
            out=merged.get("out"),
            raw=merged,
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, experiment: str, seed: int | None = None) -> ExperimentConfig:
        if path is None:
            return cls.from_dict(experiment, {}, seed)
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(experiment, raw, seed)

    def validate(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        d = self.data
        if d.get("csv") is None:
            sigma = np.asarray(d["sigma"], dtype=float)
            dim = int(d["d"])
            if sigma.shape != (dim, dim):
                raise ConfigError(f"data.sigma must be {dim}x{dim}, got shape {sigma.shape}")
            if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
                raise ConfigError("data.sigma is not symmetric")
            eig = np.linalg.eigvalsh(sigma)
            if eig[0] <= float(d.get("pd_tol", 1e-10)) * max(eig[-1], 0.0) or eig[-1] <= 0:
                raise ConfigError(f"data.sigma is not positive definite (smallest eigenvalue {eig[0]:.6g})")
            if int(d["n"]) < dim:
                raise ConfigError("data.n must be >= data.d")
        elif d.get("center_policy", "reject") not in ("reject", "recenter"):
            raise ConfigError("data.center_policy must be 'reject' or 'recenter'")
        t = d.get("teacher") or {}
        try:
            get_activation(t.get("act", "relu"))
            get_activation(self.ensemble.get("act", "leaky_relu"))
            get_loss(self.ensemble.get("loss", "squared"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if float(t.get("noise_std", 0.0)) < 0:
            raise ConfigError("teacher noise_std must be >= 0")
        if int(self.ensemble.get("m", 1)) < 1:
            raise ConfigError("ensemble.m must be >= 1")
        scales = self.ensemble.get("init_scales", [1.0])
        if not scales or any(float(s) <= 0 for s in scales):
            raise ConfigError("ensemble.init_scales must be positive")
        integ = self.integration
        if integ.get("scheme") not in ("euler", "rk4"):
            raise ConfigError("integration.scheme must be 'euler' or 'rk4'")
        if integ.get("retraction") not in ("none", "renormalize"):
            raise ConfigError("integration.retraction must be 'none' or 'renormalize'")
        if not float(integ["dt"]) > 0 or float(integ["t_end"]) < float(integ["dt"]):
            raise ConfigError("integration needs dt > 0 and t_end >= dt")
        if self.experiment in ("fig1", "fig2") and d.get("csv") is None and int(d["d"]) != 2:
            raise ConfigError(f"{self.experiment} needs d = 2 data")
        if "lr" in self.params and not float(self.params["lr"]) > 0:
            raise ConfigError("params.lr must be positive")

    @property
    def data_seed(self) -> int:
        s = self.data.get("seed")
        return self.seed if s is None else int(s)

    def teacher_spec(self) -> TeacherSpec:
        t = self.data.get("teacher") or {}
        neurons = [(float(a), [float(v) for v in b]) for a, b in t.get("neurons", [])]
        return TeacherSpec(teacher_neurons=neurons, noise_std=float(t.get("noise_std", 0.0)), act=t.get("act", "relu"))

    def build_data(self, sigma=None) -> DataDistribution:
        """Samples plus teacher targets; ``sigma`` overrides the configured covariance."""
        d = self.data
        if d.get("csv") is not None and sigma is None:
            dist = load_csv(d["csv"], d.get("center_policy", "reject"),
                            center_tol=float(d["center_tol"]), pd_tol=float(d["pd_tol"]))
            if not (d.get("teacher") or {}).get("neurons"):
                return dist
        else:
            sig = np.asarray(d["sigma"] if sigma is None else sigma, dtype=float)
            dist = generate_gaussian(int(d["d"]) if sigma is None else sig.shape[0], int(d["n"]), sig,
                                     self.data_seed, center_tol=float(d["center_tol"]), pd_tol=float(d["pd_tol"]))
        spec = self.teacher_spec()
        if spec.teacher_neurons and len(spec.teacher_neurons[0][1]) != dist.d:
            raise ConfigError(f"teacher neurons have dimension {len(spec.teacher_neurons[0][1])}, data has {dist.d}")
        return teacher_targets(dist, spec, self.data_seed + 1)

    def to_json(self) -> str:
        return json.dumps({"experiment": self.experiment, **self.raw}, indent=2, sort_keys=True, default=float)
