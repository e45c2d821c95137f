"""Tikhonov-regularized source reconstruction and noise-scaling studies.

The estimator follows the scikit-learn conventions: hyper-parameters in the
constructor, ``fit`` on a data vector, learned quantities with a trailing
underscore.  The forward operator is a constructor parameter because it fixes
the problem, not the data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigViolation, FitUnderdetermined, MaxIterationsExceeded
from .harness import StabilityReport, fit_power_law
from .operators import LinearForwardOperator, add_noise
from .analysis import spatial_norm

SCENARIOS = ("hyperbolic_boundary", "parabolic_local", "parabolic_cauchy")
# rounding slack for the monotone-residual check, relative to the first value
MONOTONE_SLACK = 1e-12


@dataclass
class InverseProblemSpec:
    scenario: str = "hyperbolic_boundary"
    alpha: float = 1e-8
    max_iter: int = 500
    tol: float = 1e-10
    noise_level: float = 0.0
    alpha_rule: str = "fixed"  # or "discrepancy"
    tau: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigViolation(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.alpha < 0:
            raise ConfigViolation(f"alpha={self.alpha} must be nonnegative", "alpha >= 0")
        if not self.tol > 0:
            raise ConfigViolation(f"tol={self.tol} must be positive", "tol > 0")
        if self.alpha_rule not in ("fixed", "discrepancy"):
            raise ConfigViolation(f"unknown alpha rule {self.alpha_rule!r}")


@dataclass
class ReconstructionResult:
    f: np.ndarray  # interior vector
    alpha: float
    iterations: int
    converged: bool
    objective: list[float] = field(default_factory=list)  # sqrt(|Af - d|^2 + alpha |f|^2)
    data_residual: list[float] = field(default_factory=list)
    normal_residual: list[float] = field(default_factory=list)

    def history_rows(self) -> list[dict]:
        return [
            {"iteration": k, "objective": o, "data_residual": r, "normal_residual": s}
            for k, (o, r, s) in enumerate(zip(self.objective, self.data_residual, self.normal_residual))
        ]

    def monotone(self) -> bool:
        o = np.asarray(self.objective)
        return bool(np.all(np.diff(o) <= MONOTONE_SLACK * o[0])) if o.size else True


def cgls(
    op: LinearForwardOperator,
    data: np.ndarray,
    alpha: float,
    max_iter: int = 500,
    tol: float = 1e-10,
    raise_on_max_iter: bool = False,
) -> ReconstructionResult:
    """Conjugate gradients on ``(A*A + alpha I) f = A* d`` in the weighted inner products.

    Stops when ``|A* r - alpha f| <= tol |A* d|``.  The recorded ``objective``
    is the square root of the Tikhonov functional, which CG decreases at every
    step.
    """
    data = np.asarray(data, dtype=float)
    f = np.zeros(op.n_unknown)
    r = data.copy()
    s = op.adjoint(r)
    norm0 = op.space_norm(s)
    p = s.copy()
    gamma = op.space_inner(s, s)
    hist = ReconstructionResult(f, alpha, 0, norm0 == 0.0)
    hist.objective.append(op.data_norm(r))
    hist.data_residual.append(op.data_norm(r))
    hist.normal_residual.append(norm0)
    if norm0 == 0.0:
        return hist
    for k in range(1, max_iter + 1):
        q = op.forward(p)
        denom = op.data_inner(q, q) + alpha * op.space_inner(p, p)
        a = gamma / denom
        f = f + a * p
        r = r - a * q
        s = op.adjoint(r) - alpha * f
        gamma_new = op.space_inner(s, s)
        rn = op.data_norm(r)
        hist.data_residual.append(rn)
        hist.objective.append(math.sqrt(rn**2 + alpha * op.space_inner(f, f)))
        hist.normal_residual.append(math.sqrt(gamma_new))
        hist.iterations = k
        if math.sqrt(gamma_new) <= tol * norm0:
            hist.converged = True
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    hist.f = f
    if not hist.converged and raise_on_max_iter:
        exc = MaxIterationsExceeded(f"no convergence in {max_iter} iterations (normal residual {hist.normal_residual[-1]:.3g})")
        exc.result = hist
        raise exc
    return hist


def operator_norm_sq(op: LinearForwardOperator, n_iter: int = 30, seed: int = 0) -> float:
    """Power-iteration estimate of ``|A*A|``."""
    x = np.random.default_rng(seed).standard_normal(op.n_unknown)
    lam = 0.0
    for _ in range(n_iter):
        x = x / op.space_norm(x)
        y = op.adjoint(op.forward(x))
        lam = op.space_inner(x, y)
        x = y
    return lam


def discrepancy_alpha(
    op: LinearForwardOperator, data: np.ndarray, noise_norm: float, tau: float = 1.1, max_iter: int = 500, tol: float = 1e-10
) -> tuple[float, ReconstructionResult]:
    """``alpha`` with ``|A f_alpha - d| = tau * noise_norm``, by root finding in ``log alpha``.

    The residual grows with ``alpha``; the bracket spans fourteen decades
    below ``|A*A|``.  When even the largest ``alpha`` stays below the target the
    data are indistinguishable from noise and the zero source is returned.
    """
    target = tau * noise_norm
    scale = operator_norm_sq(op)
    lo, hi = math.log(scale * 1e-14), math.log(scale)
    cache: dict[float, ReconstructionResult] = {}

    def gap(log_a: float) -> float:
        res = cgls(op, data, math.exp(log_a), max_iter, tol)
        cache[log_a] = res
        return res.data_residual[-1] - target

    if gap(hi) <= 0:
        return math.exp(hi), cache[hi]
    if gap(lo) >= 0:
        return math.exp(lo), cache[lo]
    root = brentq(gap, lo, hi, xtol=1e-3)
    if root not in cache:
        gap(root)
    return math.exp(root), cache[root]


def reconstruct(op: LinearForwardOperator, data: np.ndarray, spec: InverseProblemSpec, noise_norm: float | None = None):
    """Fixed-``alpha`` CG or discrepancy-principle CG, per ``spec.alpha_rule``."""
    if spec.alpha_rule == "discrepancy":
        if noise_norm is None:
            raise ConfigViolation("the discrepancy principle needs the noise norm", "noise norm known")
        if noise_norm == 0.0:
            return cgls(op, data, spec.alpha, spec.max_iter, spec.tol)
        return discrepancy_alpha(op, data, noise_norm, spec.tau, spec.max_iter, spec.tol)[1]
    if spec.alpha == 0.0 and spec.noise_level > 0:
        raise ConfigViolation("noisy data need alpha > 0", "alpha > 0 or noiseless data")
    return cgls(op, data, spec.alpha, spec.max_iter, spec.tol)


class SourceReconstructor(BaseEstimator):
    """Tikhonov source estimate for a fixed linear forward operator.

    Parameters
    ----------
    operator : LinearForwardOperator
        Forward map and its adjoint.
    alpha : float
        Penalty weight; used as is when ``alpha_rule="fixed"``.
    alpha_rule : {"fixed", "discrepancy"}
        ``"discrepancy"`` picks ``alpha`` so the data residual equals
        ``tau * noise_norm`` (``noise_norm`` is passed to ``fit``).
    tau, max_iter, tol : float, int, float
        Safety factor, CG iteration cap and relative stopping tolerance.

    Attributes
    ----------
    source_ : ndarray
        Reconstructed source on the full grid.
    alpha_ : float
    history_ : ReconstructionResult
    n_iter_ : int
    """

    def __init__(self, operator=None, alpha=1e-8, alpha_rule="fixed", tau=1.1, max_iter=500, tol=1e-10):
        self.operator = operator
        self.alpha = alpha
        self.alpha_rule = alpha_rule
        self.tau = tau
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None, noise_norm=None):
        """``X`` is the flat data vector (or a single-row 2D array)."""
        if self.operator is None:
            raise ConfigViolation("SourceReconstructor needs an operator")
        d = check_array(X, ensure_2d=False, dtype=np.float64).ravel()
        if d.size != self.operator.n_data:
            raise ConfigViolation(f"data has {d.size} entries, the operator expects {self.operator.n_data}")
        spec = InverseProblemSpec(alpha=self.alpha, alpha_rule=self.alpha_rule, tau=self.tau,
                                  max_iter=self.max_iter, tol=self.tol)
        res = reconstruct(self.operator, d, spec, noise_norm)
        self.history_ = res
        self.alpha_ = res.alpha
        self.n_iter_ = res.iterations
        self.source_ = self.operator.to_grid(res.f)
        return self

    def predict(self, X=None):
        """Predicted data ``A f`` of the fitted source."""
        check_is_fitted(self, "source_")
        return self.operator.forward(self.operator.from_grid(self.source_))

    def score(self, X, y=None):
        """``1 - |A f - d|^2 / |d|^2`` in the data norm."""
        d = check_array(X, ensure_2d=False, dtype=np.float64).ravel()
        r = self.predict() - d
        dn = self.operator.data_norm(d)
        return 1.0 - (self.operator.data_norm(r) / dn) ** 2 if dn > 0 else 0.0


def _relative_error(op: LinearForwardOperator, f_rec: np.ndarray, f_true: np.ndarray, region=None) -> float:
    d = op.domain
    err = spatial_norm(d, op.to_grid(f_rec) - f_true, "L2", region)
    ref = spatial_norm(d, f_true, "L2", region)
    return err / ref


def noise_scaling_study(
    op: LinearForwardOperator,
    f_true: np.ndarray,
    levels=(1e-4, 1e-3, 1e-2, 1e-1),
    seed: int = 0,
    tau: float = 1.1,
    max_iter: int = 500,
    tol: float = 1e-10,
    region=None,
    floor_alpha: float = 1e-8,
    slope_range: tuple[float, float] = (0.8, 1.1),
    lower_open: bool = False,
    error_fn=None,
) -> StabilityReport:
    """Error versus noise level with ``alpha`` from the discrepancy principle.

    ``f_true`` lives on the full grid.  ``region`` (a box) adds a restricted
    error column; the fit uses the restricted error when it is given.  The
    noiseless run at ``floor_alpha`` is reported as a floor and left out of
    the fit.  ``slope_range`` is closed unless ``lower_open``.  ``error_fn``
    maps a reconstructed interior vector to a custom error that then drives
    the fit.
    """
    levels = sorted(float(v) for v in levels)
    if len([v for v in levels if v > 0]) < 4 or levels[-1] / levels[0] < 100:
        raise FitUnderdetermined("need at least 4 noise levels spanning 2 decades", "fit points >= 4")
    clean = op.forward(op.from_grid(f_true))
    rows = []
    floor = cgls(op, clean, floor_alpha, max_iter, tol)
    rows.append(_study_row(op, floor, f_true, 0.0, 0.0, region, True, error_fn))
    for j, level in enumerate(levels):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))
        noisy = add_noise(op, clean, level, rng)
        noise_norm = op.data_norm(noisy - clean)
        alpha, res = discrepancy_alpha(op, noisy, noise_norm, tau, max_iter, tol)
        rows.append(_study_row(op, res, f_true, level, noise_norm, region, False, error_fn))
    key = "error_custom" if error_fn is not None else ("error_region" if region is not None else "error")
    fitted = [r for r in rows if not r["consistency"]]
    fit = fit_power_law([r["noise_level"] for r in fitted], [r[key] for r in fitted])
    errs = [r[key] for r in fitted]
    inversions = sum(1 for a, b in zip(errs, errs[1:]) if b < a)
    lo, hi = slope_range
    in_range = (fit["slope"] > lo if lower_open else fit["slope"] >= lo) and fit["slope"] <= hi
    summary = {
        "fit": fit,
        "slope": fit["slope"],
        "r2": fit["r2"],
        "slope_range": [lo, hi],
        "slope_ok": bool(in_range),
        "inversions": inversions,
        "monotone_ok": inversions <= 1,
        "cg_monotone": all(r["cg_monotone"] for r in rows),
        "floor_error": rows[0][key],
        "fit_on": key,
    }
    return StabilityReport("noise_study", rows, summary, {})


def _study_row(op, res: ReconstructionResult, f_true, level, noise_norm, region, floor, error_fn=None) -> dict:
    row = {
        "noise_level": level,
        "noise_norm": noise_norm,
        "alpha": res.alpha,
        "iterations": res.iterations,
        "converged": res.converged,
        "cg_monotone": res.monotone(),
        "error": _relative_error(op, res.f, f_true),
        "consistency": floor,
        "consistency_ok": None,
    }
    if error_fn is not None:
        row["error_custom"] = float(error_fn(res.f))
    row["ratio"] = row["error"] / level if level > 0 else 0.0
    if region is not None:
        row["error_region"] = _relative_error(op, res.f, f_true, region)
    return row


def cauchy_interior_error(op, u0_true: np.ndarray, region, window):
    """Relative interior error of the evolved state for a ``ParabolicCauchy`` operator."""
    true_int = op.from_grid(u0_true)
    ref = op.interior_norm(true_int, region, window)
    return lambda rec: op.interior_norm(rec - true_int, region, window) / ref
