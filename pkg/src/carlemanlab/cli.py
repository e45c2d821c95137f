"""Command-line entry point: ``carlemanlab <subcommand> --config FILE``.

Exit status 0 on success, 2 when the configuration violates a hypothesis or a
contract, 3 on a numerical failure.  Every run writes ``manifest.json`` next
to its artifacts; nothing time-dependent goes into any output file.
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import sklearn

from . import __version__
from .carleman import (
    absorption_diagnostics_hyperbolic,
    absorption_diagnostics_parabolic,
    check_lemma1,
    check_lemma2,
    manufactured_suite,
)
from .config import ExperimentConfig
from .exceptions import ConfigViolation, GridMismatch, LabError, NumericalFailure
from .geometry import select_beta_hyperbolic
from .harness import (
    EnsembleSpec,
    cauchy_stability_experiment,
    holder_experiment,
    lipschitz_experiment,
    observability_experiment,
)
from .expr import compile_expr
from .operators import HyperbolicBoundary, ParabolicCauchy, ParabolicLocal, add_noise
from .reconstruction import SourceReconstructor, cauchy_interior_error, noise_scaling_study
from .analysis import spatial_norm
from .reporting import clean, write_csv, write_json
from .solvers import cfl_limit, solve_heat, solve_wave_ibvp
from .weights import CarlemanConstants, WeightParams, select_beta_parabolic

COMMANDS = ("forward", "carleman", "absorb", "stability", "observe", "cauchy", "reconstruct", "noise-study", "report")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _versions() -> dict:
    return {
        "carlemanlab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


class Run:
    """Output directory plus the list of files written, for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, rows, columns=None):
        write_csv(rows, self.out / name, columns)
        self.files.append(name)

    def json(self, name: str, obj):
        write_json(obj, self.out / name)
        self.files.append(name)

    def report(self, stem: str, rep):
        rep.to_csv(self.out / f"{stem}.csv")
        rep.to_json(self.out / f"{stem}.json")
        self.files += [f"{stem}.csv", f"{stem}.json"]

    def field(self, name: str, fld):
        fld.to_binary(self.out / name)
        self.files.append(name)


# ---------------------------------------------------------------------------
# subcommands


def cmd_forward(cfg: ExperimentConfig, run: Run) -> dict:
    d = cfg.domain()
    co = cfg.coefficients(d)
    src = cfg.source(d)
    T = cfg.T()
    if cfg.equation == "hyperbolic":
        dt = float(cfg.run["dt"]) if cfg.run["dt"] is not None else cfl_limit(d)
        u = solve_wave_ibvp(d, co, src, T, dt)
        run.field("u.bin", u)
    else:
        u, z = solve_heat(d, co, src, None, T, cfg.heat_dt())
        run.field("u.bin", u)
        run.field("z.bin", z)
    return {"nt": u.nt, "dt": u.dt, "max_abs_u": float(np.max(np.abs(u.values))), "T": T}


def _lemma(cfg: ExperimentConfig) -> int:
    lemma = cfg.run["lemma"]
    if lemma is None:
        return 1 if cfg.equation == "hyperbolic" else 2
    if int(lemma) not in (1, 2):
        raise ConfigViolation(f"run.lemma must be 1 or 2, got {lemma}")
    return int(lemma)


def cmd_carleman(cfg: ExperimentConfig, run: Run) -> dict:
    lemma = _lemma(cfg)
    kind = "hyperbolic" if lemma == 1 else "parabolic"
    d = cfg.domain()
    if d.ndim != 1 or d.lower != (0.0,) or d.upper != (1.0,):
        raise GridMismatch("the manufactured suite lives on the unit interval")
    suite = {m.name: m for m in manufactured_suite() if m.kind == kind}
    names = cfg.run["fields"] or sorted(suite)
    unknown = [n for n in names if n not in suite]
    if unknown:
        raise ConfigViolation(f"unknown {kind} fields {unknown}; choose from {sorted(suite)}")
    nt = int(cfg.run["nt"])
    w = cfg["weight"]
    factor, creep = float(cfg.run["ratio_factor"]), float(cfg.run["ratio_creep"])
    results = {}
    if lemma == 1:
        geom = cfg.observation_geometry(d)
        T = cfg.T()
        beta = w["beta"] if w["beta"] is not None else select_beta_hyperbolic(geom, T)
        t = np.linspace(-T, T, nt)
    else:
        pg = cfg.parabolic_geometry(d)
        t0 = float(w["t0"] if w["t0"] is not None else cfg.run["t0"])
        delta = float(cfg.run["delta"])
        beta = w["beta"] if w["beta"] is not None else select_beta_parabolic(pg, delta)
        I = (t0 - delta, t0 + delta)
        t = np.linspace(*I, nt)
    for lam in w["lambdas"]:
        for name in names:
            v, F, co = suite[name].sample(d, t)
            if lemma == 1:
                p = WeightParams(lam=float(lam), beta=float(beta), x0=geom.x0, s_sweep=cfg.s_sweep())
                rep = check_lemma1(v, F, geom, p, co)
            else:
                p = WeightParams(lam=float(lam), beta=float(beta), t0=t0, kind="parabolic", pgeom=pg, s_sweep=cfg.s_sweep())
                rep = check_lemma2(v, F, pg, p, I, co)
            stem = f"lemma{lemma}_{name}_lam{float(lam):g}"
            run.csv(f"{stem}.csv", rep.rows())
            results[stem] = {
                "bounded": rep.bounded(factor, creep),
                "ratio_s_min": rep.ratio[0],
                "ratio_max": max(rep.ratio),
                "ratio_s_max": rep.ratio[-1],
                "meta": rep.meta,
            }
    return {"lemma": lemma, "beta": beta, "checks": results, "all_bounded": all(r["bounded"] for r in results.values())}


def cmd_absorb(cfg: ExperimentConfig, run: Run) -> dict:
    d = cfg.domain()
    src = cfg.source(d)
    lam = float(cfg["weight"]["lambda"])
    beta = cfg["weight"]["beta"]
    if cfg.equation == "hyperbolic":
        geom = cfg.observation_geometry(d)
        T = cfg.T()
        beta = beta if beta is not None else select_beta_hyperbolic(geom, T)
        p = WeightParams(lam=lam, beta=float(beta), x0=geom.x0, s_sweep=cfg.s_sweep())
        rep = absorption_diagnostics_hyperbolic(src, geom, p, T)
    else:
        pg = cfg.parabolic_geometry(d)
        t0, delta = float(cfg.run["t0"]), float(cfg.run["delta"])
        beta = beta if beta is not None else select_beta_parabolic(pg, delta)
        p = WeightParams(lam=lam, beta=float(beta), t0=t0, kind="parabolic", pgeom=pg, s_sweep=cfg.s_sweep())
        rep = absorption_diagnostics_parabolic(src, pg, p, (t0 - delta, t0 + delta))
    run.csv("absorption.csv", rep.rows())
    r = np.asarray(rep.ratio)
    out = {
        "ratio_strictly_decreasing": bool(np.all(np.diff(r) < 0)),
        "ratio_s_max": float(r[-1]),
        "meta": rep.meta,
    }
    if rep.decay:
        out["constants"] = {"c0": rep.meta["c0"]}
    return out


def cmd_stability(cfg: ExperimentConfig, run: Run) -> dict:
    ens = EnsembleSpec(**cfg.ensemble_kwargs())
    exploratory = bool(cfg.run["exploratory"])
    lam = float(cfg["weight"]["lambda"])
    d = cfg.domain()
    if cfg.equation == "hyperbolic":
        rep = lipschitz_experiment(
            ens, cfg.observation_geometry(d), cfg.source(d), cfg.T(), coeffs=cfg.coefficients,
            grid_ladder=[int(n) for n in cfg.run["grid_ladder"]], lam=lam, exploratory=exploratory,
            n_jobs=int(cfg.run["n_jobs"]),
        )
    else:
        rep = holder_experiment(
            ens, cfg.parabolic_geometry(d), cfg.source(d), float(cfg.run["t0"]), float(cfg.run["delta"]), cfg.T(),
            cfg.heat_dt(), float(cfg.run["M_cap"]), coeffs=cfg.coefficients, lam=lam,
        )
    run.report("stability", rep)
    return rep.as_dict()


def cmd_observe(cfg: ExperimentConfig, run: Run) -> dict:
    ens = EnsembleSpec(**cfg.ensemble_kwargs())
    d = cfg.domain()
    rep = observability_experiment(
        ens, cfg.observation_geometry(d), cfg.T("observe"), coeffs=cfg.coefficients,
        grid_ladder=[int(n) for n in cfg.run["grid_ladder"]], lam=float(cfg["weight"]["lambda"]),
        exploratory=bool(cfg.run["exploratory"]), n_jobs=int(cfg.run["n_jobs"]),
    )
    run.report("observe", rep)
    return rep.as_dict()


def cmd_cauchy(cfg: ExperimentConfig, run: Run) -> dict:
    ens = EnsembleSpec(**cfg.ensemble_kwargs())
    d = cfg.domain()
    rep = cauchy_stability_experiment(
        ens, cfg.parabolic_geometry(d), cfg.T(), float(cfg.run["epsilon"]), cfg.heat_dt(),
        float(cfg.run["M_cap"]), coeffs=cfg.coefficients, lam=float(cfg["weight"]["lambda"]),
    )
    run.report("cauchy", rep)
    return rep.as_dict()


def _scenario(cfg: ExperimentConfig) -> str:
    sc = cfg["scenario"]
    if sc is None:
        return "hyperbolic_boundary" if cfg.equation == "hyperbolic" else "parabolic_local"
    return sc


def build_operator(cfg: ExperimentConfig, d=None):
    """Forward operator, true unknown (full grid) and parabolic geometry (or None)."""
    d = d or cfg.domain()
    sc = _scenario(cfg)
    co = cfg.coefficients(d)
    if sc == "hyperbolic_boundary":
        geom = cfg.observation_geometry(d)
        src = cfg.source(d)
        dt = float(cfg.run["dt"]) if cfg.run["dt"] is not None else None
        op = HyperbolicBoundary(d, gamma=list(geom.gamma), R=src.R, coeffs=co, T=cfg.T(), dt=dt)
        return op, src.f, None
    pg = cfg.parabolic_geometry(d)
    if sc == "parabolic_local":
        src = cfg.source(d)
        op = ParabolicLocal(d, gamma=list(pg.gamma), R=src.R, coeffs=co, T=cfg.T(), dt=cfg.heat_dt(),
                            t0=float(cfg.run["t0"]))
        return op, src.f, pg
    if sc == "parabolic_cauchy":
        u0 = compile_expr(cfg.run["u0"] or cfg["source"]["f"])(d.points())
        op = ParabolicCauchy(d, gamma=list(pg.gamma), coeffs=co, T=cfg.T(), dt=cfg.heat_dt())
        return op, u0, pg
    raise ConfigViolation(f"unknown scenario {sc!r}")


def cmd_reconstruct(cfg: ExperimentConfig, run: Run) -> dict:
    op, f_true, pg = build_operator(cfg)
    clean_data = op.forward(op.from_grid(f_true))
    level = float(cfg.run["noise_level"])
    rng = np.random.default_rng(int(cfg.run["seed"]))
    data = add_noise(op, clean_data, level, rng)
    noise_norm = op.data_norm(data - clean_data)
    est = SourceReconstructor(
        op, alpha=float(cfg.run["alpha"]), alpha_rule=cfg.run["alpha_rule"], tau=float(cfg.run["tau"]),
        max_iter=int(cfg.run["max_iter"]), tol=float(cfg.run["tol"]),
    ).fit(data, noise_norm=noise_norm if level > 0 else 0.0)
    d = op.domain
    pts = d.points().reshape(-1, d.ndim)
    cols = [f"x{i + 1}" for i in range(d.ndim)]
    rows = [dict(zip(cols, p), f_true=a, f_rec=b) for p, a, b in zip(pts, f_true.ravel(), est.source_.ravel())]
    run.csv("f_rec.csv", rows, cols + ["f_true", "f_rec"])
    run.csv("history.csv", est.history_.history_rows())
    err = spatial_norm(d, est.source_ - f_true) / spatial_norm(d, f_true)
    out = {
        "scenario": _scenario(cfg),
        "relative_error": err,
        "alpha": est.alpha_,
        "iterations": est.n_iter_,
        "converged": est.history_.converged,
        "cg_monotone": est.history_.monotone(),
        "noise_level": level,
    }
    if pg is not None:
        out["relative_error_omega0"] = spatial_norm(d, est.source_ - f_true, "L2", pg.omega0) / spatial_norm(
            d, f_true, "L2", pg.omega0
        )
    return out


def cmd_noise_study(cfg: ExperimentConfig, run: Run) -> dict:
    op, f_true, pg = build_operator(cfg)
    sc = _scenario(cfg)
    kw = dict(levels=cfg.run["noise_levels"], seed=int(cfg.run["seed"]), tau=float(cfg.run["tau"]),
              max_iter=int(cfg.run["max_iter"]), tol=float(cfg.run["tol"]), floor_alpha=float(cfg.run["alpha"]))
    if sc == "hyperbolic_boundary":
        rep = noise_scaling_study(op, f_true, **kw)
    elif sc == "parabolic_local":
        rep = noise_scaling_study(op, f_true, region=pg.omega0, slope_range=(0.0, 1.05), lower_open=True, **kw)
    else:
        eps = float(cfg.run["epsilon"])
        efn = cauchy_interior_error(op, f_true, pg.omega0, (eps, op.T - eps))
        rep = noise_scaling_study(op, f_true, slope_range=(0.0, 1.05), lower_open=True, error_fn=efn, **kw)
    run.report("noise_study", rep)
    return rep.as_dict()


CONSTANT_COLUMNS = CarlemanConstants.NAMES


def _find_constants(obj: dict) -> dict:
    found = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k in CONSTANT_COLUMNS and not isinstance(v, (dict, list)):
                found.setdefault(k, v)
            elif isinstance(v, dict):
                for kk, vv in _find_constants(v).items():
                    found.setdefault(kk, vv)
    return found


def cmd_report(paths: list[str], run: Run) -> dict:
    rows = []
    for p in sorted(paths):
        obj = json.loads(Path(p).read_text())
        consts = _find_constants(obj)
        row = {"source": str(p), "experiment": obj.get("experiment", obj.get("command", ""))}
        row.update({k: consts.get(k) for k in CONSTANT_COLUMNS})
        rows.append(row)
    cols = ["source", "experiment", *CONSTANT_COLUMNS]
    run.csv("report.csv", rows, cols)
    run.json("report.json", rows)
    print("  ".join(cols))
    for r in rows:
        print("  ".join("" if r[c] is None else (f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c])) for c in cols))
    return {"rows": rows}


HANDLERS = {
    "forward": cmd_forward,
    "carleman": cmd_carleman,
    "absorb": cmd_absorb,
    "stability": cmd_stability,
    "observe": cmd_observe,
    "cauchy": cmd_cauchy,
    "reconstruct": cmd_reconstruct,
    "noise-study": cmd_noise_study,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="carlemanlab", description="Carleman-estimate numerical laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", default=None, help="output directory")
        if name == "report":
            p.add_argument("inputs", nargs="+", help="JSON summaries to merge")
            continue
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--s-min", type=float, dest="s_min")
        p.add_argument("--s-max", type=float, dest="s_max")
        p.add_argument("--s-steps", type=int, dest="s_steps")
        p.add_argument("--grid", type=int, help="grid nodes per axis")
        p.add_argument("--T", type=float, dest="T", help="final time")
        p.add_argument("--exploratory", action="store_true", help="allow runs below the critical time")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return ap


def _flag_overrides(args) -> list[str]:
    ov = []
    for flag, key in (("seed", "run.seed"), ("s_min", "weight.s_min"), ("s_max", "weight.s_max"),
                      ("s_steps", "weight.s_steps"), ("grid", "domain.nx"), ("T", "run.T")):
        v = getattr(args, flag)
        if v is not None:
            ov.append(f"{key}={v!r}")
    if args.exploratory:
        ov.append("run.exploratory=true")
    return ov


def execute(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            run = Run(Path(args.out or "out"))
            summary = cmd_report(args.inputs, run)
            manifest = {"command": "report", "inputs": sorted(args.inputs), "versions": _versions()}
        else:
            cfg = ExperimentConfig.load(args.config, list(args.override) + _flag_overrides(args))
            notes = cfg.validate(args.command)
            run = Run(Path(args.out or cfg["output"]["dir"]))
            summary = HANDLERS[args.command](cfg, run)
            summary = {"command": args.command, "exploratory": bool(cfg.run["exploratory"]), "notes": notes, **summary}
            manifest = {
                "command": args.command,
                "config_sha256": cfg.digest(),
                "config": cfg.data,
                "seed": cfg.run["seed"],
                "grid": cfg["domain"]["nx"],
                "versions": _versions(),
            }
        run.json("summary.json", summary)
        manifest["outputs"] = sorted(run.files) + ["manifest.json"]
        write_json(manifest, run.out / "manifest.json")
    except ConfigViolation as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(execute())


if __name__ == "__main__":
    main()
