"""Both sides of the hyperbolic and parabolic Carleman estimates, swept over ``s``.

The unknown constants of the estimates are replaced by the ratio curve
``lhs(s) / sum(rhs terms)(s)``; a bounded, eventually non-increasing curve is the
observable signature of the estimate.  All integrals are kept as natural
logarithms because ``e^{2 s phi}`` leaves double range long before ``s = 64``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy

from .analysis import (
    _log_add,
    _time_weights,
    face_weights,
    hessian_sq,
    log_sum,
    normal_derivative,
    operator_residual,
    space_weights,
    spatial_gradient,
    time_derivative,
)
from .exceptions import BoundaryViolation, ConditionViolation, ConfigViolation, GridMismatch, ParameterConflict, ResidualTooLarge
from .geometry import DomainSpec, ObservationGeometry, ParabolicGeometry
from .reporting import write_csv, write_json
from .solvers import Coefficients, SourceSpec, SpaceTimeField
from .weights import HYPERBOLIC, PARABOLIC, WeightParams, lipschitz_constants, phi_grid

RESIDUAL_TOL = 1e-2
REFERENCE_DX = 1.0 / 200


@dataclass
class CarlemanCheckReport:
    """One row per ``s``; ``log_*`` entries are natural logs of the integrals."""

    lemma: str
    s: list[float]
    log_lhs: list[float]
    log_rhs: dict[str, list[float]]
    ratio: list[float]
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for i, s in enumerate(self.s):
            row = {"s": s, "log_lhs": self.log_lhs[i]}
            for k, v in self.log_rhs.items():
                row[f"log_rhs_{k}"] = v[i]
            row["ratio"] = self.ratio[i]
            out.append(row)
        return out

    def to_csv(self, path):
        return write_csv(self.rows(), path)

    def to_json(self, path):
        return write_json({"lemma": self.lemma, "meta": self.meta, "rows": self.rows()}, path)

    def bounded(self, factor: float = 10.0, creep: float = 0.05, s_after: float = 16.0) -> bool:
        """``max ratio <= factor * ratio(s_min)`` and no step-to-step rise above ``creep`` past ``s_after``."""
        r = np.asarray(self.ratio)
        if np.all(r == 0):
            return True
        if r[0] <= 0 or not np.all(np.isfinite(r)):
            return False
        if r.max() > factor * r[0]:
            return False
        s = np.asarray(self.s)
        for i in range(1, r.size):
            if s[i - 1] >= s_after and r[i] > (1.0 + creep) * r[i - 1]:
                return False
        return True


@dataclass
class AbsorptionDiagnostics:
    s: list[float]
    log_J: list[float]
    log_denominator: list[float]
    ratio: list[float]
    decay: list[float]  # s^3 e^{-c0 s}; empty for the parabolic case
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for i, s in enumerate(self.s):
            row = {"s": s, "log_J": self.log_J[i], "log_denominator": self.log_denominator[i], "ratio": self.ratio[i]}
            if self.decay:
                row["s3_exp_minus_c0_s"] = self.decay[i]
            out.append(row)
        return out

    def to_csv(self, path):
        return write_csv(self.rows(), path)

    def to_json(self, path):
        return write_json({"meta": self.meta, "rows": self.rows()}, path)


def _ratio(log_lhs: float, log_rhs: Sequence[float]) -> float:
    total = _log_add(log_rhs)
    if log_lhs == -math.inf:
        return 0.0
    if total == -math.inf:
        return math.inf
    return math.exp(log_lhs - total)


def _residual_check(v, F, coeffs, order, tol):
    res, scale = operator_residual(v, F, coeffs, order)
    fnorm = math.sqrt(float(np.sum(F.values**2)) * abs(v.dt) * float(np.prod(v.domain.spacing)))
    ref = max(fnorm, scale)
    loosen = max(1.0, (v.domain.dx / REFERENCE_DX) ** 2, (abs(v.dt) / REFERENCE_DX) ** 2)
    if ref > 0 and res > tol * loosen * ref:
        raise ResidualTooLarge(f"discrete residual {res:.3g} exceeds {tol * loosen:.3g} x {ref:.3g}")
    return res, ref


def _default_coeffs(domain: DomainSpec, coeffs):
    return Coefficients.zero(domain) if coeffs is None else coeffs


def _log_ints(logw_base: np.ndarray, s: float, integrand: np.ndarray, q: np.ndarray) -> float:
    return log_sum(2.0 * s * logw_base, integrand * q)


def check_lemma1(
    v: SpaceTimeField,
    F: SpaceTimeField,
    geom: ObservationGeometry,
    params: WeightParams,
    coeffs: Coefficients | None = None,
    residual_tol: float = RESIDUAL_TOL,
) -> CarlemanCheckReport:
    """Hyperbolic estimate on ``Omega x (-T, T)`` (the time grid of ``v``).

    Right-hand groups: source, ``s |d_nu v|^2`` on ``Gamma``, the cap at ``T``
    weighted by ``phi(., T)`` and the cap at ``-T`` weighted by ``phi(., 0)``.
    """
    if params.kind != HYPERBOLIC:
        raise ConfigViolation("the hyperbolic check needs a hyperbolic weight")
    d = v.domain
    coeffs = _default_coeffs(d, coeffs)
    scale = float(np.max(np.abs(v.values))) if v.values.size else 0.0
    if scale > 0 and np.max(np.abs(v.values[:, d.boundary_mask()])) > 1e-10 * scale:
        raise BoundaryViolation("v must vanish on the boundary")
    res, ref = _residual_check(v, F, coeffs, 2, residual_tol) if scale > 0 else (0.0, 0.0)

    pts = d.points()
    t = v.t
    phi = phi_grid(pts, t, params)
    q = np.multiply.outer(_time_weights(t), space_weights(d))
    grads = spatial_gradient(v)
    vt = time_derivative(v)
    g_xt = sum(g**2 for g in grads) + vt**2
    v2 = v.values**2
    F2 = F.values**2
    wsp = space_weights(d)
    phi_T = phi_grid(pts, t[-1:], params)[0]
    phi_0 = phi_grid(pts, [0.0], params)[0]
    bnd = []
    for face in geom.gamma:
        tr = normal_derivative(v, face) ** 2
        fpts = pts[d.face_index(face)]
        bnd.append((phi_grid(fpts, t, params), tr * np.multiply.outer(_time_weights(t), face_weights(d, face))))

    rows = {"source": [], "boundary": [], "cap_T": [], "cap_minus_T": []}
    lhs_all, ratios = [], []
    for s in params.s_sweep:
        ls = math.log(s)
        lhs = _log_add([ls + _log_ints(phi, s, g_xt, q), 3 * ls + _log_ints(phi, s, v2, q)])
        src = _log_ints(phi, s, F2, q)
        bd = _log_add([ls + log_sum(2 * s * ph, w) for ph, w in bnd])
        capT = _log_add([ls + log_sum(2 * s * phi_T, g_xt[-1] * wsp), 3 * ls + log_sum(2 * s * phi_T, v2[-1] * wsp)])
        capm = _log_add([ls + log_sum(2 * s * phi_0, g_xt[0] * wsp), 3 * ls + log_sum(2 * s * phi_0, v2[0] * wsp)])
        for k, val in zip(rows, (src, bd, capT, capm)):
            rows[k].append(val)
        lhs_all.append(lhs)
        ratios.append(_ratio(lhs, [src, bd, capT, capm]))
    meta = {"lam": params.lam, "beta": params.beta, "t0": params.t0, "x0": params.x0, "gamma": geom.gamma_names,
            "residual": res, "residual_reference": ref, "nx": d.nx, "nt": v.nt, "field": v.name}
    return CarlemanCheckReport("hyperbolic", list(params.s_sweep), lhs_all, rows, ratios, meta)


def check_lemma2(
    v: SpaceTimeField,
    F: SpaceTimeField,
    pgeom: ParabolicGeometry,
    params: WeightParams,
    I: tuple[float, float],
    coeffs: Coefficients | None = None,
    residual_tol: float = RESIDUAL_TOL,
) -> CarlemanCheckReport:
    """Parabolic estimate on ``Omega x I`` (``v`` must be sampled on ``I`` exactly).

    Right-hand groups: source, ``s^3 (|grad_xt v|^2 + |v|^2)`` on the whole
    boundary, and the two time slices weighted by ``phi~(., t0 + delta)``.
    """
    if params.kind != PARABOLIC:
        raise ConfigViolation("the parabolic check needs a parabolic weight")
    d = v.domain
    if abs(v.t[0] - I[0]) > 1e-9 or abs(v.t[-1] - I[1]) > 1e-9:
        raise GridMismatch(f"v must be sampled on I={I}")
    coeffs = _default_coeffs(d, coeffs)
    scale = float(np.max(np.abs(v.values)))
    res, ref = _residual_check(v, F, coeffs, 1, residual_tol) if scale > 0 else (0.0, 0.0)

    pts = d.points()
    t = v.t
    phi = phi_grid(pts, t, params)
    q = np.multiply.outer(_time_weights(t), space_weights(d))
    grads = spatial_gradient(v)
    gx2 = sum(g**2 for g in grads)
    vt = time_derivative(v)
    second = vt**2 + hessian_sq(v)
    v2 = v.values**2
    F2 = F.values**2
    wsp = space_weights(d)
    phi_top = phi_grid(pts, t[-1:], params)[0]
    slices = gx2[-1] + v2[-1] + gx2[0] + v2[0]
    bnd = []
    for face in d.faces:
        idx = (slice(None),) + d.face_index(face)
        vals = (gx2 + vt**2 + v2)[idx]
        fpts = pts[d.face_index(face)]
        bnd.append((phi_grid(fpts, t, params), vals * np.multiply.outer(_time_weights(t), face_weights(d, face))))

    rows = {"source": [], "boundary": [], "slices": []}
    lhs_all, ratios = [], []
    for s in params.s_sweep:
        ls = math.log(s)
        lhs = _log_add([
            -ls + _log_ints(phi, s, second, q),
            ls + _log_ints(phi, s, gx2, q),
            3 * ls + _log_ints(phi, s, v2, q),
        ])
        src = _log_ints(phi, s, F2, q)
        bd = 3 * ls + _log_add([log_sum(2 * s * ph, w) for ph, w in bnd])
        sl = 3 * ls + log_sum(2 * s * phi_top, slices * wsp)
        for k, val in zip(rows, (src, bd, sl)):
            rows[k].append(val)
        lhs_all.append(lhs)
        ratios.append(_ratio(lhs, [src, bd, sl]))
    meta = {"lam": params.lam, "beta": params.beta, "t0": params.t0, "I": list(I), "exponent": pgeom.exponent,
            "residual": res, "residual_reference": ref, "nx": d.nx, "nt": v.nt, "field": v.name}
    return CarlemanCheckReport("parabolic", list(params.s_sweep), lhs_all, rows, ratios, meta)


def _as_condition(exc: ParameterConflict) -> ConditionViolation:
    return ConditionViolation(str(exc), exc.inequality)


def absorption_diagnostics_hyperbolic(
    source: SourceSpec, geom: ObservationGeometry, params: WeightParams, T: float, nt: int = 401
) -> AbsorptionDiagnostics:
    """``J(s) = int_Q |R_t f|^2 e^{2 s phi}`` against ``int |f|^2 e^{2 s phi(., 0)}`` (weight centred at 0)."""
    d = geom.domain
    source.check_floor(d, 0.0, "source floor |R(x, 0)| >= r0")
    try:
        c0 = lipschitz_constants(geom, params.lam, params.beta, T).c0
    except ParameterConflict as exc:
        raise _as_condition(exc) from exc
    prm = params.replace(t0=0.0)
    t = np.linspace(0.0, T, nt)
    return _absorption(d, source, prm, t, 0.0, c0, {"c0": c0, "T": T})


def absorption_diagnostics_parabolic(
    source: SourceSpec, pgeom: ParabolicGeometry, params: WeightParams, I: tuple[float, float], nt: int = 201
) -> AbsorptionDiagnostics:
    """``J~(s)`` over ``Omega x I`` against ``int |f|^2 e^{2 s phi~(., t0)}``."""
    d = pgeom.domain
    t0 = params.t0
    if not I[0] < t0 < I[1]:
        raise ConditionViolation(f"t0={t0} must lie inside I={I}", "t0 in I")
    source.check_floor(d, t0, "source floor |R(x, t0)| >= r0")
    t = np.linspace(I[0], I[1], nt)
    return _absorption(d, source, params, t, t0, None, {"I": list(I)})


def _absorption(d: DomainSpec, source: SourceSpec, params: WeightParams, t: np.ndarray, t_center: float, c0, meta):
    pts = d.points()
    f2 = np.asarray(source.f, dtype=float) ** 2
    dR2 = np.stack([source.dR_at(pts, float(tn)) ** 2 for tn in t])
    phi = phi_grid(pts, t, params)
    phi_c = phi_grid(pts, [t_center], params)[0]
    q = np.multiply.outer(_time_weights(t), space_weights(d))
    wsp = space_weights(d)
    logJ, logD, ratio, decay = [], [], [], []
    for s in params.s_sweep:
        lj = log_sum(2 * s * phi, dR2 * f2[None] * q)
        ld = log_sum(2 * s * phi_c, f2 * wsp)
        logJ.append(lj)
        logD.append(ld)
        ratio.append(0.0 if lj == -math.inf else (math.exp(lj - ld) if ld > -math.inf else math.inf))
        if c0 is not None:
            decay.append(s**3 * math.exp(-c0 * s))
    meta = dict(meta, lam=params.lam, beta=params.beta, t0=params.t0, nx=d.nx, nt=t.size)
    return AbsorptionDiagnostics(list(params.s_sweep), logJ, logD, ratio, decay, meta)


# ---------------------------------------------------------------------------
# manufactured fields


_X, _T = sympy.symbols("x t", real=True)


@dataclass
class ManufacturedField:
    """A closed-form ``v(x, t)`` on ``(0, 1)`` and the source ``F`` it induces for given ``b``, ``c``."""

    name: str
    kind: str  # "hyperbolic" (second order in t) or "parabolic"
    expr: sympy.Expr
    b: float = 0.0
    c: float = 0.0

    def _funcs(self):
        order = 2 if self.kind == "hyperbolic" else 1
        F = sympy.diff(self.expr, _T, order) - sympy.diff(self.expr, _X, 2) - self.b * sympy.diff(self.expr, _X) - self.c * self.expr
        return sympy.lambdify((_X, _T), self.expr, "numpy"), sympy.lambdify((_X, _T), sympy.simplify(F), "numpy")

    def sample(self, domain: DomainSpec, t: np.ndarray) -> tuple[SpaceTimeField, SpaceTimeField, Coefficients]:
        if domain.ndim != 1:
            raise GridMismatch("manufactured fields are one-dimensional")
        vf, Ff = self._funcs()
        x = domain.axes[0][None, :]
        tt = np.asarray(t, dtype=float)[:, None]
        shape = (tt.size, x.size)
        v = np.broadcast_to(np.asarray(vf(x, tt), dtype=float), shape).copy()
        F = np.broadcast_to(np.asarray(Ff(x, tt), dtype=float), shape).copy()
        coeffs = Coefficients.constant(domain, b=self.b, c=self.c)
        return SpaceTimeField(v, t, domain, self.name), SpaceTimeField(F, t, domain, "F"), coeffs


def manufactured_suite() -> list[ManufacturedField]:
    """Three hyperbolic fields vanishing at ``x = 0, 1`` and three parabolic fields."""
    x, t, pi = _X, _T, sympy.pi
    return [
        ManufacturedField("h_eigen", "hyperbolic", sympy.sin(pi * x) * sympy.sin(pi * t)),
        ManufacturedField("h_mixed", "hyperbolic", sympy.sin(2 * pi * x) * t * sympy.cos(t), b=0.5, c=-1.0),
        ManufacturedField("h_poly", "hyperbolic", x * (1 - x) * sympy.exp(x) * (t + sympy.sin(2 * t)), b=-0.3, c=0.5),
        ManufacturedField("p_eigen", "parabolic", sympy.exp(-pi**2 * t) * sympy.sin(pi * x)),
        ManufacturedField("p_mixed", "parabolic", (1 + t) * sympy.cos(pi * x / 2), b=0.5, c=-1.0),
        ManufacturedField("p_poly", "parabolic", x**2 * (1 - x) * sympy.exp(t) + x * t, b=-0.3, c=0.5),
    ]
