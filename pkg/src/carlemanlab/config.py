"""Experiment configuration: TOML files, dotted overrides and validation."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import CFLViolation, ConditionViolation, ConfigViolation
from .expr import compile_expr
from .geometry import (
    DomainSpec,
    ObservationGeometry,
    ParabolicGeometry,
    compute_gamma,
    construct_d,
    critical_time_hyperbolic,
    critical_time_observability,
)
from .solvers import CFL_SAFETY, Coefficients, SourceSpec, cfl_limit
from .weights import default_s_sweep

DEFAULTS: dict[str, Any] = {
    "equation": "hyperbolic",
    "scenario": None,
    "domain": {"lower": [0.0], "upper": [1.0], "nx": 201, "x0": None, "gamma": None,
               "omega0": None, "eta": None, "exponent": None},
    "coefficients": {"b": None, "c": "0"},
    "source": {"R": "1 + t", "dR": None, "f": "sin(pi*x)", "r0": None},
    "weight": {"lambda": 0.5, "lambdas": [0.5, 1.0, 2.0], "beta": None, "t0": None,
               "s_min": 1.0, "s_max": 64.0, "s_steps": 16},
    "run": {"T": None, "dt": None, "grid_ladder": [101, 201, 401], "n_samples": 50, "n_modes": 8, "seed": 0,
            "noise_levels": [1e-4, 1e-3, 1e-2, 1e-1], "noise_level": 0.0, "t0": 0.5, "delta": 0.25,
            "epsilon": 0.2, "M_cap": 10.0, "alpha": 1e-8, "alpha_rule": "fixed", "tau": 1.1,
            "max_iter": 500, "tol": 1e-10, "exploratory": False, "n_jobs": 1, "ratio_factor": 10.0,
            "ratio_creep": 0.05, "fields": None, "nt": 201, "lemma": None, "u0": None},
    "output": {"dir": "out"},
}

SECTIONS = tuple(k for k, v in DEFAULTS.items() if isinstance(v, dict))


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigViolation(f"unknown configuration key {key!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigViolation(f"{key!r} must be a table")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``section.key=value``; the value is read as a TOML literal, else as a string."""
    if "=" not in assignment:
        raise ConfigViolation(f"override {assignment!r} must look like KEY=VALUE")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) == 1:
        parts = ([s for s in SECTIONS if parts[0] in DEFAULTS[s]] or [None])[:1] + parts
        if parts[0] is None:
            parts = parts[1:]
    node = {}
    cur = node
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = _parse_value(value.strip())
    return _merge(data, node)


@dataclass
class ExperimentConfig:
    """Validated configuration; ``data`` holds the merged nested tables."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict | None = None, overrides=()) -> "ExperimentConfig":
        data = _merge(DEFAULTS, raw or {})
        for ov in overrides:
            data = apply_override(data, ov)
        cfg = cls(data)
        cfg._check_static()
        return cfg

    @classmethod
    def load(cls, path, overrides=()) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigViolation(f"config file {path} not found") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigViolation(f"config file {path}: {exc}") from exc
        return cls.from_dict(raw, overrides)

    # -- accessors -----------------------------------------------------------
    def __getitem__(self, key: str):
        return self.data[key]

    @property
    def run(self) -> dict:
        return self.data["run"]

    @property
    def equation(self) -> str:
        return self.data["equation"]

    def digest(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def _check_static(self) -> None:
        if self.equation not in ("hyperbolic", "parabolic"):
            raise ConfigViolation(f"equation must be 'hyperbolic' or 'parabolic', got {self.equation!r}")
        dom = self.data["domain"]
        if len(dom["lower"]) != len(dom["upper"]) or len(dom["lower"]) not in (1, 2):
            raise ConfigViolation("domain.lower and domain.upper must both have 1 or 2 entries")
        sw = self.data["weight"]
        if not 0 < sw["s_min"] < sw["s_max"] or int(sw["s_steps"]) < 2:
            raise ConfigViolation("need 0 < s_min < s_max and s_steps >= 2")
        for key in ("R", "f", "dR"):
            if self.data["source"][key] is not None and key != "f":
                compile_expr(self.data["source"][key])

    # -- builders ------------------------------------------------------------
    def domain(self, nx: int | None = None) -> DomainSpec:
        d = self.data["domain"]
        n = int(nx if nx is not None else d["nx"])
        return DomainSpec(tuple(float(v) for v in d["lower"]), tuple(float(v) for v in d["upper"]), n)

    def observation_geometry(self, domain: DomainSpec | None = None) -> ObservationGeometry:
        x0 = self.data["domain"]["x0"]
        if x0 is None:
            raise ConfigViolation("domain.x0 is required for the hyperbolic experiments")
        return compute_gamma(domain or self.domain(), x0)

    def parabolic_geometry(self, domain: DomainSpec | None = None) -> ParabolicGeometry:
        d = domain or self.domain()
        dd = self.data["domain"]
        gamma = dd["gamma"] or [f.name for f in d.faces[-1:]]
        omega0 = None
        if dd["omega0"] is not None:
            omega0 = (tuple(dd["omega0"][0]), tuple(dd["omega0"][1]))
        return construct_d(d, gamma, eta=dd["eta"], exponent=dd["exponent"], omega0=omega0)

    def coefficients(self, domain: DomainSpec) -> Coefficients:
        c = self.data["coefficients"]
        b = c["b"]
        bf = [compile_expr(e) for e in b] if b else None
        if bf is not None and len(bf) != domain.ndim:
            raise ConfigViolation(f"coefficients.b needs {domain.ndim} entries")
        cf = compile_expr(c["c"])
        return Coefficients.from_functions(domain, [lambda p, e=e: e(p) for e in bf] if bf else None, lambda p: cf(p))

    def source(self, domain: DomainSpec) -> SourceSpec:
        s = self.data["source"]
        R = compile_expr(s["R"])
        dR = compile_expr(s["dR"]) if s["dR"] is not None else R.derivative_t()
        f = compile_expr(s["f"])(domain.points()) if s["f"] is not None else np.zeros(domain.shape)
        r0 = s["r0"]
        if r0 is None:
            t_floor = 0.0 if self.equation == "hyperbolic" else float(self.run["t0"])
            r0 = float(np.min(np.abs(R(domain.points(), t_floor))))
        return SourceSpec(R=lambda p, t: R(p, t), f=f, r0=float(r0), dR=(lambda p, t: dR(p, t)) if dR else None)

    def s_sweep(self) -> tuple[float, ...]:
        w = self.data["weight"]
        return default_s_sweep(int(w["s_steps"]), float(w["s_min"]), float(w["s_max"]))

    def T(self, command: str | None = None) -> float:
        """Configured ``T``, else 1.15 times the critical time of the command's hypothesis."""
        T = self.run["T"]
        if T is not None:
            T = float(T)
            if not (math.isfinite(T) and T > 0):
                raise ConfigViolation(f"T={T} must be positive")
            return T
        if self.equation == "parabolic":
            return 1.0
        geom = self.observation_geometry()
        crit = critical_time_observability(geom) if command == "observe" else critical_time_hyperbolic(geom)
        return 1.15 * crit

    # -- validation before any solve ------------------------------------------
    def validate(self, command: str) -> list[str]:
        """Check source floors, time conditions and the CFL bound; return warnings for exploratory runs."""
        notes: list[str] = []
        exploratory = bool(self.run["exploratory"])
        d = self.domain()
        if command in ("stability", "absorb", "reconstruct", "noise-study", "forward") and self.data["source"]["R"]:
            src = self.source(d)
            t_floor = 0.0 if self.equation == "hyperbolic" else float(self.run["t0"])
            what = ("source floor |R(x, 0)| >= r0 > 0 of the hyperbolic problem" if self.equation == "hyperbolic"
                    else "source floor |R(x, t0)| >= r0 > 0 of the parabolic problem")
            src.check_floor(d, t_floor, what)
        if self.equation == "hyperbolic" and command in ("stability", "observe", "absorb", "reconstruct", "noise-study"):
            geom = self.observation_geometry(d)
            T = self.T(command)
            if command == "observe":
                crit, what = critical_time_observability(geom), "observation time T > 2 sqrt(d1^2 - d0^2)"
            else:
                crit, what = critical_time_hyperbolic(geom), "observation time T > sqrt(d1^2 - d0^2)"
            if not T > crit:
                msg = f"T={T:g} <= critical {crit:.6g}: hypothesis {what} fails"
                if not exploratory or command in ("absorb", "reconstruct", "noise-study"):
                    raise ConditionViolation(msg, what)
                notes.append(msg + " (exploratory run)")
        dt = self.run["dt"]
        if self.equation == "hyperbolic" and dt is not None:
            ladder = self.run["grid_ladder"] if command in ("stability", "observe") else [d.nx]
            for nx in ladder:
                lim = cfl_limit(self.domain(nx))
                if float(dt) > lim * (1 + 1e-12):
                    raise CFLViolation(
                        f"dt={dt:g} exceeds the CFL limit {lim:.6g} = {CFL_SAFETY} dx / sqrt(ndim) on grid {nx}", "CFL"
                    )
        return notes

    def heat_dt(self) -> float:
        return float(self.run["dt"]) if self.run["dt"] is not None else 0.01

    def ensemble_kwargs(self) -> dict:
        r = self.run
        return {"n_samples": int(r["n_samples"]), "n_modes": int(r["n_modes"]), "seed": int(r["seed"])}

