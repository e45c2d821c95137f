"""Stability and observability experiments over seeded ensembles.

Each experiment measures a ratio ``(norm of the unknown) / (norm of the data)``
per sample, repeats it on a grid ladder where that makes sense, and collects
the named constants of the corresponding argument.  The unknown constants of
the stability estimates are never asserted, only whether the measured ratios
stay bounded under refinement.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .analysis import (
    boundary_trace_norm,
    cauchy_apriori_norm,
    apriori_norm,
    sobolev_norm,
    spatial_gradient,
    spatial_norm,
    time_derivative,
)
from .exceptions import ConditionViolation, FitUnderdetermined
from .geometry import (
    DomainSpec,
    ObservationGeometry,
    ParabolicGeometry,
    critical_time_hyperbolic,
    critical_time_observability,
    select_beta_hyperbolic,
    select_beta_observability,
)
from .operators import HyperbolicBoundary, normal_derivative_matrix
from .reporting import write_csv, write_json
from .solvers import (
    Coefficients,
    SourceSpec,
    SpaceTimeField,
    cfl_limit,
    elliptic_matrix,
    leapfrog,
    restrict,
    solve_heat,
    time_grid,
)
from .weights import (
    cauchy_constants,
    cauchy_parameters,
    holder_constants,
    lipschitz_constants,
    observability_constants,
    select_beta_parabolic,
)
from .analysis import _time_weights, face_weights

DEFAULT_LADDER = (101, 201, 401)
REFINEMENT_TOL = 0.2
THETA_MAX = 1.05


@dataclass(frozen=True)
class EnsembleSpec:
    """Random truncated sine series with coefficients ``a_k ~ N(0, |k|^-2)``.

    Sample ``i`` draws from its own seed stream ``(seed, i)``, so samples do not
    depend on how many others are drawn or on the grid they are sampled on.
    """

    n_samples: int = 50
    n_modes: int = 8
    seed: int = 0
    include_zero: bool = True
    noise_levels: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConditionViolation("an ensemble needs at least one sample", "n_samples >= 1")

    def _rng(self, i: int, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(i, stream)))

    def coefficients(self, i: int, ndim: int, stream: int = 0) -> np.ndarray:
        k = np.arange(1, self.n_modes + 1, dtype=float)
        kk = np.sqrt(sum(np.meshgrid(*([k**2] * ndim), indexing="ij"))) if ndim > 1 else k
        return self._rng(i, stream).standard_normal(kk.shape) / kk

    def sample(self, i: int, domain: DomainSpec, stream: int = 0) -> np.ndarray:
        """Sample ``i`` on the full grid of ``domain`` (zero on the boundary)."""
        a = self.coefficients(i, domain.ndim, stream)
        k = np.arange(1, self.n_modes + 1)
        basis = [
            np.sin(np.pi * np.outer((ax - lo) / (hi - lo), k))
            for ax, lo, hi in zip(domain.axes, domain.lower, domain.upper)
        ]
        if domain.ndim == 1:
            return basis[0] @ a
        return basis[0] @ a @ basis[1].T

    def samples(self, domain: DomainSpec, stream: int = 0) -> np.ndarray:
        return np.stack([self.sample(i, domain, stream) for i in range(self.n_samples)])


@dataclass
class StabilityReport:
    """Per-sample rows and a summary; ``constants`` lists the named constants of the run."""

    experiment: str
    rows: list[dict]
    summary: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    exploratory: bool = False

    def ratios(self, grid: int | None = None) -> np.ndarray:
        return np.array(
            [r["ratio"] for r in self.rows if not r["consistency"] and (grid is None or r.get("grid") == grid)]
        )

    def to_csv(self, path):
        cols: list[str] = []
        for r in self.rows:
            cols += [k for k in r if k not in cols]
        return write_csv(self.rows, path, cols)

    def to_json(self, path):
        return write_json(self.as_dict(), path)

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "exploratory": self.exploratory,
            "summary": self.summary,
            "constants": self.constants,
        }


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> dict:
    """Least-squares fit of ``log y = slope * log x + b``; needs four or more points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 4:
        raise FitUnderdetermined(f"{int(keep.sum())} usable points; a power-law fit needs at least 4", "fit points >= 4")
    res = stats.linregress(np.log(x[keep]), np.log(y[keep]))
    return {"slope": float(res.slope), "intercept": float(res.intercept), "r2": float(res.rvalue**2), "n": int(keep.sum())}


def _coeffs_on(coeffs, domain: DomainSpec) -> Coefficients:
    if coeffs is None:
        return Coefficients.zero(domain)
    if callable(coeffs) and not isinstance(coeffs, Coefficients):
        return coeffs(domain)
    coeffs.validate(domain)
    return coeffs


def _pmap(fn: Callable, items: Sequence, n_jobs: int) -> list:
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _refinement_summary(report_rows: list[dict], ladder: Sequence[int]) -> dict:
    per_grid = {}
    for nx in ladder:
        r = np.array([row["ratio"] for row in report_rows if row["grid"] == nx and not row["consistency"]])
        per_grid[str(nx)] = {"max_ratio": float(r.max()), "median_ratio": float(np.median(r)), "n": int(r.size)}
    maxima = np.array([v["max_ratio"] for v in per_grid.values()])
    variation = float((maxima.max() - maxima.min()) / maxima.min())
    finite = bool(np.all(np.isfinite(maxima)))
    consistency = all(row["consistency_ok"] for row in report_rows if row["consistency"])
    return {
        "per_grid": per_grid,
        "refinement_variation": variation,
        "refinement_ok": finite and variation < REFINEMENT_TOL,
        "finite": finite,
        "consistency_ok": consistency,
    }


def _time_condition(T: float, critical: float, what: str, exploratory: bool) -> None:
    if not T > critical and not exploratory:
        raise ConditionViolation(
            f"T={T:.6g} <= critical {critical:.6g}: {what} fails (rerun with exploratory to measure anyway)", what
        )


# ---------------------------------------------------------------------------
# Lipschitz stability for the hyperbolic source problem


def lipschitz_experiment(
    ensemble: EnsembleSpec,
    geom: ObservationGeometry,
    source: SourceSpec,
    T: float,
    coeffs=None,
    grid_ladder: Sequence[int] = DEFAULT_LADDER,
    lam: float = 0.5,
    exploratory: bool = False,
    n_jobs: int = 1,
) -> StabilityReport:
    """``|f|_{L2} / |d_t d_nu u|_{L2(gamma x (0,T))}`` for each sample on each grid.

    Only ``source.R`` and ``source.r0`` are used; the sources come from the ensemble.
    """
    _time_condition(T, critical_time_hyperbolic(geom), "observation time T > sqrt(d1^2 - d0^2)", exploratory)
    constants: dict = {}
    if not exploratory:
        beta = select_beta_hyperbolic(geom, T)
        constants = lipschitz_constants(geom, lam, beta, T).as_dict()

    def run(nx: int) -> list[dict]:
        d = geom.domain.refine(nx)
        source.check_floor(d, 0.0, "source floor |R(x, 0)| >= r0")
        op = HyperbolicBoundary(
            d, adjoint_mode="matrix_free", gamma=[d.face(n) for n in geom.gamma_names], R=source.R,
            coeffs=_coeffs_on(coeffs, d), T=T,
        )
        F = ensemble.samples(d)
        if ensemble.include_zero:
            F = np.concatenate([np.zeros((1,) + d.shape), F])
        data = op.apply(np.stack([restrict(d, f) for f in F], axis=-1))
        rows = []
        for j, f in enumerate(F):
            zero = ensemble.include_zero and j == 0
            fn = spatial_norm(d, f, "L2")
            D = op.data_norm(data[:, j])
            rows.append({
                "sample": "zero" if zero else j - int(ensemble.include_zero),
                "grid": nx,
                "f_norm": fn,
                "data_norm": D,
                "ratio": 0.0 if zero else fn / D,
                "consistency": zero,
                "consistency_ok": (D == 0.0) if zero else None,
            })
        return rows

    rows = [r for block in _pmap(run, list(grid_ladder), n_jobs) for r in block]
    summary = _refinement_summary(rows, grid_ladder)
    summary.update({"T": T, "critical_time": critical_time_hyperbolic(geom), "gamma": geom.gamma_names})
    return StabilityReport("lipschitz", rows, summary, constants, exploratory)


# ---------------------------------------------------------------------------
# observability for the free wave equation


def observability_experiment(
    ensemble: EnsembleSpec,
    geom: ObservationGeometry,
    T: float,
    coeffs=None,
    grid_ladder: Sequence[int] = DEFAULT_LADDER,
    lam: float = 0.5,
    eigenmode: bool = True,
    exploratory: bool = False,
    n_jobs: int = 1,
) -> StabilityReport:
    """``(|u0|_{H1_0} + |v0|_{L2}) / |d_nu u|_{L2(gamma x (0,T))}``; ``H1_0`` is the gradient norm.

    Initial positions and velocities are drawn from two independent streams of
    the ensemble; the first row per grid is the lowest eigenmode with zero velocity.
    """
    crit = critical_time_observability(geom)
    _time_condition(T, crit, "observation time T > 2 sqrt(d1^2 - d0^2)", exploratory)
    constants: dict = {}
    if not exploratory:
        beta = select_beta_observability(geom, T)
        c = observability_constants(geom, lam, beta, T)
        constants = c.as_dict()
        constants["kappa2_gt_kappa1"] = bool(c.kappa2 > c.kappa1)

    def run(nx: int) -> list[dict]:
        d = geom.domain.refine(nx)
        co = _coeffs_on(coeffs, d)
        U0, V0, names = [], [], []
        if ensemble.include_zero:
            U0.append(np.zeros(d.shape)), V0.append(np.zeros(d.shape)), names.append("zero")
        if eigenmode:
            mode = np.ones(d.shape)
            for ax, (xs, lo, hi) in enumerate(zip(d.axes, d.lower, d.upper)):
                shape = [1] * d.ndim
                shape[ax] = -1
                mode = mode * np.sin(np.pi * (xs - lo) / (hi - lo)).reshape(shape)
            U0.append(mode), V0.append(np.zeros(d.shape)), names.append("eigenmode")
        for i in range(ensemble.n_samples):
            U0.append(ensemble.sample(i, d, 0)), V0.append(ensemble.sample(i, d, 1)), names.append(i)
        dt = cfl_limit(d)
        times, step = time_grid(T, dt)
        L = elliptic_matrix(d, co)
        faces = [d.face(n) for n in geom.gamma_names]
        N = normal_derivative_matrix(d, faces)
        k = len(U0)
        tr = np.zeros((times.size, N.shape[0], k))

        def observe(n, u):
            tr[n] = N @ u

        leapfrog(
            L, np.stack([restrict(d, u) for u in U0], -1), np.stack([restrict(d, v) for v in V0], -1),
            None, times.size - 1, step, observe,
        )
        fw = np.concatenate([face_weights(d, f).ravel() for f in faces])
        w = np.multiply.outer(_time_weights(times), fw)
        rows = []
        for j in range(k):
            D = math.sqrt(float(np.sum(w * tr[:, :, j] ** 2)))
            num = spatial_norm(d, U0[j], "H1_semi") + spatial_norm(d, V0[j], "L2")
            zero = names[j] == "zero"
            rows.append({
                "sample": names[j],
                "grid": nx,
                "initial_norm": num,
                "data_norm": D,
                "ratio": 0.0 if zero else num / D,
                "consistency": zero,
                "consistency_ok": (D == 0.0 and num == 0.0) if zero else None,
            })
        return rows

    rows = [r for block in _pmap(run, list(grid_ladder), n_jobs) for r in block]
    summary = _refinement_summary(rows, grid_ladder)
    if eigenmode:
        em = [r["ratio"] for r in rows if r["sample"] == "eigenmode"]
        summary["eigenmode_ratio"] = {str(nx): v for nx, v in zip(grid_ladder, em)}
    summary.update({"T": T, "critical_time": crit, "gamma": geom.gamma_names})
    return StabilityReport("observability", rows, summary, constants, exploratory)


# ---------------------------------------------------------------------------
# Hölder-type experiments for the parabolic problems


def _trace_norm_all(u: SpaceTimeField, gamma) -> tuple[float, float]:
    """``(|grad_xt u|, |u|)`` in ``L2(gamma x (0,T))``."""
    comps = spatial_gradient(u) + [time_derivative(u)]
    g2 = sum(boundary_trace_norm(u, c, gamma) ** 2 for c in comps)
    return math.sqrt(g2), boundary_trace_norm(u, u.values, gamma)


def _holder_summary(rows: list[dict], constants: dict) -> dict:
    fits = {}
    for s in sorted({r["sample"] for r in rows if not r["consistency"]}, key=str):
        fam = [r for r in rows if r["sample"] == s and not r["consistency"]]
        fits[str(s)] = fit_power_law([r["data_norm"] for r in fam], [r["target_norm"] for r in fam])
    thetas = np.array([f["slope"] for f in fits.values()])
    r2 = np.array([f["r2"] for f in fits.values()])
    c_emp = max(r["ratio"] for r in rows if not r["consistency"])
    mu = constants.get("mu") if constants.get("mu") is not None else constants.get("mu0")
    return {
        "fits": fits,
        "theta_min": float(thetas.min()),
        "theta_max": float(thetas.max()),
        "r2_min": float(r2.min()),
        "theta_ok": bool(np.all((thetas > 0) & (thetas <= THETA_MAX))),
        "C_emp": float(c_emp),
        # derived from the measured ratio constant, not a value of the estimate
        "theta_lower_bound_derived": float(mu / (c_emp + mu)) if mu is not None else None,
        "consistency_ok": all(r["consistency_ok"] for r in rows if r["consistency"]),
    }


def holder_experiment(
    ensemble: EnsembleSpec,
    pgeom: ParabolicGeometry,
    source: SourceSpec,
    t0: float,
    delta: float,
    T: float,
    dt: float,
    M_cap: float,
    coeffs=None,
    lam: float = 0.5,
    scales: Sequence[float] = (1.0, 0.5, 0.25, 0.125, 0.0625),
    outside_row: bool = True,
) -> StabilityReport:
    """``|f|_{L2(omega0)}`` against ``D~ = |grad_xt u_t|_gamma + |u_t|_gamma + |u(., t0)|_{H2}``.

    Every sample is first rescaled so that the a priori norm of ``u`` is at most
    ``M_cap``; each scaled member ``eps * f`` is then solved afresh.  A source
    supported away from ``omega0`` is added as a consistency row.
    """
    d = pgeom.domain
    source.check_floor(d, t0, "source floor |R(x, t0)| >= r0")
    beta = select_beta_parabolic(pgeom, delta)
    constants = holder_constants(pgeom, lam, beta, t0, delta, T).as_dict()
    co = _coeffs_on(coeffs, d)
    gamma = list(pgeom.gamma)
    omega0 = pgeom.omega0

    def measure(f: np.ndarray) -> tuple[float, float, float]:
        u, z = solve_heat(d, co, source.with_f(f), None, T, dt)
        g, tr = _trace_norm_all(z, gamma)
        snap = spatial_norm(d, u.at(t0), "H2")
        return g + tr + snap, apriori_norm(u), spatial_norm(d, f, "L2", omega0)

    rows = []
    for i in range(ensemble.n_samples):
        f = ensemble.sample(i, d)
        _, M0, _ = measure(f)
        cap = min(1.0, M_cap / M0) if M0 > 0 else 1.0
        for eps in scales:
            D, M, fn = measure(eps * cap * f)
            rows.append({
                "sample": i, "scale": eps * cap, "target_norm": fn, "data_norm": D, "apriori_norm": M,
                "ratio": fn / D, "case": 1 if M_cap**2 > D**2 else 2, "consistency": False, "consistency_ok": None,
            })
    if outside_row:
        x = d.points()[..., 0]
        lo, hi = d.lower[0], omega0[0][0]
        bump = np.where((x > lo) & (x < hi), np.sin(np.pi * (x - lo) / (hi - lo)) ** 2, 0.0)
        for ax in range(1, d.ndim):
            y = d.points()[..., ax]
            bump = bump * np.sin(np.pi * (y - d.lower[ax]) / (d.upper[ax] - d.lower[ax]))
        D, M, fn = measure(bump)
        rows.append({
            "sample": "outside_omega0", "scale": 1.0, "target_norm": fn, "data_norm": D, "apriori_norm": M,
            "ratio": 0.0, "case": 1 if M_cap**2 > D**2 else 2, "consistency": True, "consistency_ok": fn == 0.0,
        })
    summary = _holder_summary(rows, constants)
    summary.update({"t0": t0, "delta": delta, "T": T, "M_cap": M_cap, "omega0": omega0})
    return StabilityReport("holder", rows, summary, constants)


def cauchy_stability_experiment(
    ensemble: EnsembleSpec,
    pgeom: ParabolicGeometry,
    T: float,
    epsilon: float,
    dt: float,
    M_cap: float,
    coeffs=None,
    lam: float = 0.5,
    scales: Sequence[float] = (1.0, 0.5, 0.25, 0.125, 0.0625),
) -> StabilityReport:
    """Interior norm on ``omega0 x (eps, T - eps)`` against Cauchy data on ``gamma x (0, T)``.

    Samples are homogeneous heat solutions started from ensemble initial states,
    rescaled so that ``|u|_{H1(L2)} + |u|_{L2(H2)} <= M_cap``.
    """
    d = pgeom.domain
    params = cauchy_parameters(pgeom, T, epsilon)
    constants = cauchy_constants(pgeom, lam, params.beta, params.eps_t, params.delta_t).as_dict()
    constants.update({"N": params.N, "beta_lower": params.beta_lower, "beta_upper": params.beta_upper})
    co = _coeffs_on(coeffs, d)
    gamma = list(pgeom.gamma)
    window = (epsilon, T - epsilon)

    def measure(u0: np.ndarray) -> tuple[float, float, float]:
        u, _ = solve_heat(d, co, None, u0, T, dt)
        g, tr = _trace_norm_all(u, gamma)
        target = sobolev_norm(u, "H1t_L2x", pgeom.omega0, window) + sobolev_norm(u, "L2t_H2x", pgeom.omega0, window)
        return g + tr, cauchy_apriori_norm(u), target

    rows = []
    if ensemble.include_zero:
        D, M, tg = measure(np.zeros(d.shape))
        rows.append({"sample": "zero", "scale": 0.0, "target_norm": tg, "data_norm": D, "apriori_norm": M,
                     "ratio": 0.0, "consistency": True, "consistency_ok": D == 0.0 and tg == 0.0})
    for i in range(ensemble.n_samples):
        u0 = ensemble.sample(i, d)
        _, M0, _ = measure(u0)
        cap = min(1.0, M_cap / M0) if M0 > 0 else 1.0
        for eps in scales:
            D, M, tg = measure(eps * cap * u0)
            rows.append({"sample": i, "scale": eps * cap, "target_norm": tg, "data_norm": D, "apriori_norm": M,
                         "ratio": tg / D, "consistency": False, "consistency_ok": None})
    summary = _holder_summary(rows, constants)
    summary.update({"T": T, "epsilon": epsilon, "M_cap": M_cap, "omega0": pgeom.omega0})
    return StabilityReport("cauchy", rows, summary, constants)
