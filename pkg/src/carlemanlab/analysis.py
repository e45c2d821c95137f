"""Discrete norms, weighted integrals, boundary traces and energies.

Quadrature is the composite trapezoidal rule on the solver grids.  Weighted
integrals are accumulated in log space: the exponent ``2 s phi`` is shifted by
its maximum before exponentiation and the shifted terms are summed with
``math.fsum``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import EmptyGamma, GridMismatch
from .geometry import DomainSpec, Face
from .solvers import Coefficients, SpaceTimeField
from .weights import FLAT, WeightParams, log_weight


# ---------------------------------------------------------------------------
# quadrature and differences


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _time_weights(t: np.ndarray) -> np.ndarray:
    if t.size == 1:
        return np.ones(1)
    return trapezoid_weights(t.size, abs(float(t[1] - t[0])))


def space_weights(domain: DomainSpec) -> np.ndarray:
    ws = [trapezoid_weights(domain.nx, h) for h in domain.spacing]
    out = ws[0]
    for w in ws[1:]:
        out = np.multiply.outer(out, w)
    return out


def face_weights(domain: DomainSpec, face: Face) -> np.ndarray:
    """Trapezoid weights along a face (a single unit weight for an interval endpoint)."""
    if domain.ndim == 1:
        return np.ones(())
    other = 1 - face.axis
    return trapezoid_weights(domain.nx, domain.spacing[other])


def second_difference(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Three-point second difference, four-point one-sided (second order) at both ends."""
    u = np.moveaxis(np.asarray(u, dtype=float), axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    if u.shape[0] >= 4:
        out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h**2
        out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / h**2
    else:
        out[0], out[-1] = out[1], out[-2]
    return np.moveaxis(out, 0, axis)


def first_difference(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(np.asarray(u, dtype=float), h, axis=axis, edge_order=2)


def spatial_gradient(field: SpaceTimeField) -> list[np.ndarray]:
    """``[d u / d x_j]`` as arrays shaped like ``field.values``."""
    return [first_difference(field.values, h, axis + 1) for axis, h in enumerate(field.domain.spacing)]


def time_derivative(field: SpaceTimeField) -> np.ndarray:
    if field.nt < 3:
        raise GridMismatch("time derivative needs at least 3 time levels")
    return np.gradient(field.values, field.t, axis=0, edge_order=2)


def hessian_sq(field: SpaceTimeField) -> np.ndarray:
    """``sum_{i,j} |d^2 u / dx_i dx_j|^2``."""
    d = field.domain
    total = np.zeros(field.values.shape)
    for i, hi in enumerate(d.spacing):
        total += second_difference(field.values, hi, i + 1) ** 2
    if d.ndim == 2:
        mixed = first_difference(first_difference(field.values, d.spacing[0], 1), d.spacing[1], 2)
        total += 2.0 * mixed**2
    return total


def normal_derivative(field: SpaceTimeField, face: Face) -> np.ndarray:
    """Second-order one-sided outward normal derivative on a face, shape ``(nt, *face)``."""
    d = field.domain
    h = d.spacing[face.axis]
    u = np.moveaxis(field.values, face.axis + 1, 1)
    if face.side > 0:
        b, i1, i2 = u[:, -1], u[:, -2], u[:, -3]
    else:
        b, i1, i2 = u[:, 0], u[:, 1], u[:, 2]
    return (3.0 * b - 4.0 * i1 + i2) / (2.0 * h)


def face_values(field: SpaceTimeField, values: np.ndarray, face: Face) -> np.ndarray:
    idx = (slice(None),) + field.domain.face_index(face)
    return values[idx]


# ---------------------------------------------------------------------------
# weighted integrals


INTEGRANDS = ("abs2", "grad_xt", "grad_x", "dt", "hess", "normal")


@dataclass(frozen=True)
class Region:
    """``kind`` is ``spacetime``, ``slice`` (at time ``t``) or ``boundary`` (over ``faces``)."""

    kind: str = "spacetime"
    t: float | None = None
    faces: tuple[Face, ...] = ()
    time_window: tuple[float, float] | None = None

    @classmethod
    def spacetime(cls, time_window=None) -> "Region":
        return cls("spacetime", time_window=time_window)

    @classmethod
    def time_slice(cls, t: float) -> "Region":
        return cls("slice", t=t)

    @classmethod
    def boundary(cls, faces: Sequence[Face], time_window=None) -> "Region":
        return cls("boundary", faces=tuple(faces), time_window=time_window)


@dataclass(frozen=True)
class WeightedIntegralSpec:
    """``s^power * integrand * e^{2 s phi}`` integrated over ``region``."""

    integrand: str
    s: float
    s_power: int
    weight: WeightParams
    region: Region = Region()

    def __post_init__(self):
        if self.integrand not in INTEGRANDS:
            raise GridMismatch(f"unknown integrand {self.integrand!r}")
        if not self.s > 0:
            raise GridMismatch("s must be positive")


def integrand_values(field: SpaceTimeField, kind: str) -> np.ndarray:
    v = field.values
    if kind == "abs2":
        return v**2
    if kind == "grad_x":
        return sum(g**2 for g in spatial_gradient(field))
    if kind == "dt":
        return time_derivative(field) ** 2
    if kind == "grad_xt":
        return sum(g**2 for g in spatial_gradient(field)) + time_derivative(field) ** 2
    if kind == "hess":
        return hessian_sq(field)
    raise GridMismatch(f"integrand {kind!r} is not a volume integrand")


def log_sum(log_w: np.ndarray, values: np.ndarray) -> float:
    """``log(sum values * exp(log_w))`` for nonnegative ``values``; ``-inf`` for an all-zero sum."""
    log_w = np.broadcast_to(log_w, values.shape).ravel()
    values = values.ravel()
    pos = values > 0
    if not np.any(pos):
        return -math.inf
    a, b = log_w[pos], values[pos]
    m = float(np.max(a))
    total = math.fsum((b * np.exp(a - m)).tolist())
    return m + math.log(total) if total > 0 else -math.inf


def _window_mask(t: np.ndarray, window) -> np.ndarray:
    if window is None:
        return np.ones(t.size, dtype=bool)
    lo, hi = window
    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    return (t >= lo - tol) & (t <= hi + tol)


def _window_weights(t: np.ndarray, window) -> tuple[np.ndarray, np.ndarray]:
    mask = _window_mask(t, window)
    sub = t[mask]
    if sub.size == 0:
        raise GridMismatch(f"time window {window} contains no grid times")
    return mask, _time_weights(sub)


def log_weighted_integral(field: SpaceTimeField, spec: WeightedIntegralSpec, integrand: np.ndarray | None = None) -> float:
    """Natural log of the weighted integral (``-inf`` when it vanishes).

    ``integrand`` may be passed precomputed (shape of ``field.values``, or
    ``(nt, *face)`` stacked per face for boundary regions) to avoid repeated
    differencing across an ``s`` sweep.
    """
    d = field.domain
    reg = spec.region
    s, p = spec.s, spec.s_power
    pts = d.points()
    shift = p * math.log(s)
    if reg.kind == "boundary":
        if not reg.faces:
            raise EmptyGamma("boundary region has no faces")
        mask, wt = _window_weights(field.t, reg.time_window)
        parts = []
        for k, face in enumerate(reg.faces):
            if integrand is None:
                vals = _boundary_integrand(field, spec.integrand, face)
            else:
                vals = integrand[k]
            vals = vals[mask]
            fw = face_weights(d, face)
            fpts = pts[d.face_index(face)]
            lw = log_weight(fpts, field.t[mask], s, spec.weight) + shift
            q = np.multiply.outer(wt, fw)
            parts.append(log_sum(lw, vals * q))
        return _log_add(parts)
    vals = integrand_values(field, spec.integrand) if integrand is None else integrand
    if reg.kind == "slice":
        i = field.index(reg.t)
        lw = log_weight(pts, field.t[i : i + 1], s, spec.weight)[0] + shift
        return log_sum(lw, vals[i] * space_weights(d))
    if reg.kind == "spacetime":
        mask, wt = _window_weights(field.t, reg.time_window)
        lw = log_weight(pts, field.t[mask], s, spec.weight) + shift
        q = np.multiply.outer(wt, space_weights(d))
        return log_sum(lw, vals[mask] * q)
    raise GridMismatch(f"unknown region kind {reg.kind!r}")


def _log_add(logs: Sequence[float]) -> float:
    finite = [v for v in logs if v > -math.inf]
    if not finite:
        return -math.inf
    m = max(finite)
    return m + math.log(math.fsum(math.exp(v - m) for v in finite))


def _boundary_integrand(field: SpaceTimeField, kind: str, face: Face) -> np.ndarray:
    if kind == "normal":
        return normal_derivative(field, face) ** 2
    return face_values(field, integrand_values(field, kind), face)


def weighted_integral(field: SpaceTimeField, spec: WeightedIntegralSpec) -> float:
    """Weighted integral as a float; overflows to ``inf`` for huge weights (use the log form then)."""
    lv = log_weighted_integral(field, spec)
    if lv == -math.inf:
        return 0.0
    return math.exp(lv) if lv < 709.0 else math.inf


def flat_weight() -> WeightParams:
    """Weight with ``phi == 0`` (``e^{2 s phi} == 1``)."""
    return WeightParams(lam=0.0, kind=FLAT)


# ---------------------------------------------------------------------------
# traces, energies and norms


def _trace_series(field: SpaceTimeField, face: Face, differentiate_t: bool) -> np.ndarray:
    tr = normal_derivative(field, face)
    if differentiate_t:
        tr = np.gradient(tr, field.t, axis=0, edge_order=2)
    return tr


def boundary_flux_norm(
    field: SpaceTimeField, gamma: Sequence[Face], time_window=None, differentiate_t: bool = False
) -> float:
    """Discrete ``L^2(gamma x window)`` norm of ``d_nu u`` (or of ``d_t d_nu u``)."""
    if not gamma:
        raise EmptyGamma("observation boundary is empty")
    mask, wt = _window_weights(field.t, time_window)
    total = 0.0
    for face in gamma:
        tr = _trace_series(field, face, differentiate_t)[mask]
        total += float(np.sum(np.multiply.outer(wt, face_weights(field.domain, face)) * tr**2))
    return math.sqrt(total)


def boundary_trace_norm(field: SpaceTimeField, values: np.ndarray, gamma: Sequence[Face], time_window=None) -> float:
    """``L^2(gamma x window)`` norm of an arbitrary grid quantity restricted to the faces."""
    if not gamma:
        raise EmptyGamma("observation boundary is empty")
    mask, wt = _window_weights(field.t, time_window)
    total = 0.0
    for face in gamma:
        tr = face_values(field, values, face)[mask]
        total += float(np.sum(np.multiply.outer(wt, face_weights(field.domain, face)) * tr**2))
    return math.sqrt(total)


def energy(field: SpaceTimeField, t: float, velocity: np.ndarray | None = None) -> float:
    """``E(t) = int |grad u|^2 + |u_t|^2 dx`` at a grid time."""
    i = field.index(t)
    ut = time_derivative(field)[i] if velocity is None else velocity
    grad2 = sum(g[i] ** 2 for g in spatial_gradient(field))
    return float(np.sum(space_weights(field.domain) * (grad2 + ut**2)))


def energy_curve(field: SpaceTimeField) -> np.ndarray:
    ut = time_derivative(field)
    grad2 = sum(g**2 for g in spatial_gradient(field))
    w = space_weights(field.domain)
    return np.array([float(np.sum(w * (grad2[n] + ut[n] ** 2))) for n in range(field.nt)])


NORMS = ("L2", "H1", "H1_semi", "H2", "H1t_L2x", "L2t_H2x", "H2t_H1x", "H1t_H2x")


def _box_slices(domain: DomainSpec, region) -> tuple:
    if region is None:
        return (slice(None),) * domain.ndim
    lo, hi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in region)
    out = []
    for ax, xs in enumerate(domain.axes):
        tol = 1e-9 * (domain.upper[ax] - domain.lower[ax])
        idx = np.nonzero((xs >= lo[ax] - tol) & (xs <= hi[ax] + tol))[0]
        if idx.size < 2:
            raise GridMismatch(f"region {region} holds fewer than two nodes along axis {ax}")
        out.append(slice(int(idx[0]), int(idx[-1]) + 1))
    return tuple(out)


def _region_weights(domain: DomainSpec, sl: tuple) -> np.ndarray:
    ws = []
    for ax, s in enumerate(sl):
        n = len(range(*s.indices(domain.nx)))
        ws.append(trapezoid_weights(n, domain.spacing[ax]))
    out = ws[0]
    for w in ws[1:]:
        out = np.multiply.outer(out, w)
    return out


def sobolev_norm(field: SpaceTimeField, kind: str, region=None, time_window=None) -> float:
    """Finite-difference realization of a named norm.

    Spatial norms are integrated over time when the field has several time
    levels (``H1`` means ``L^2(0,T; H^1)``); a single-level field gives the
    plain spatial norm.  ``region`` is an optional box ``(lo, hi)`` restricting
    the spatial integration; derivatives are taken on the full grid first.
    """
    if kind not in NORMS:
        raise GridMismatch(f"unknown norm {kind!r}; choose from {NORMS}")
    d = field.domain
    sl = (slice(None),) + _box_slices(d, region)
    w_space = _region_weights(d, sl[1:])
    if field.nt > 1:
        mask, wt = _window_weights(field.t, time_window)
    else:
        mask, wt = np.ones(1, dtype=bool), np.ones(1)
    q = np.multiply.outer(wt, w_space)

    def integ(a: np.ndarray) -> float:
        return float(np.sum(q * a[sl][mask]))

    u2 = field.values**2
    parts: list[np.ndarray] = []

    def grad2() -> np.ndarray:
        return sum(g**2 for g in spatial_gradient(field))

    if kind == "L2":
        parts = [u2]
    elif kind == "H1_semi":
        parts = [grad2()]
    elif kind == "H1":
        parts = [u2, grad2()]
    elif kind in ("H2", "L2t_H2x"):
        parts = [u2, grad2(), hessian_sq(field)]
    elif kind == "H1t_L2x":
        parts = [u2, time_derivative(field) ** 2]
    elif kind == "H1t_H2x":
        z = SpaceTimeField(time_derivative(field), field.t, d)
        parts = [u2, grad2(), hessian_sq(field), z.values**2, sum(g**2 for g in spatial_gradient(z)), hessian_sq(z)]
    elif kind == "H2t_H1x":
        z = SpaceTimeField(time_derivative(field), field.t, d)
        zz = SpaceTimeField(time_derivative(z), field.t, d)
        parts = [u2, grad2()]
        for g in (z, zz):
            parts += [g.values**2, sum(a**2 for a in spatial_gradient(g))]
    return math.sqrt(sum(integ(a) for a in parts))


def apriori_norm(field: SpaceTimeField) -> float:
    """``|u|_{H^2(0,T;H^1)} + |u|_{H^1(0,T;H^2)}``."""
    return sobolev_norm(field, "H2t_H1x") + sobolev_norm(field, "H1t_H2x")


def cauchy_apriori_norm(field: SpaceTimeField) -> float:
    """``|u|_{H^1(0,T;L^2)} + |u|_{L^2(0,T;H^2)}``."""
    return sobolev_norm(field, "H1t_L2x") + sobolev_norm(field, "L2t_H2x")


def spatial_norm(domain: DomainSpec, u: np.ndarray, kind: str = "L2", region=None) -> float:
    """Norm of a single spatial array."""
    fld = SpaceTimeField(np.asarray(u, dtype=float)[None], np.zeros(1), domain)
    return sobolev_norm(fld, kind, region)


# ---------------------------------------------------------------------------
# operator residuals


def _lower_order(field: SpaceTimeField, coeffs: Coefficients) -> np.ndarray:
    d = field.domain
    lap = sum(second_difference(field.values, h, ax + 1) for ax, h in enumerate(d.spacing))
    adv = sum(b[None] * g for b, g in zip(coeffs.b, spatial_gradient(field)))
    return lap + adv + coeffs.c[None] * field.values


def operator_residual(v: SpaceTimeField, F: SpaceTimeField, coeffs: Coefficients, time_order: int) -> tuple[float, float]:
    """Discrete ``L^2`` norms of ``d_t^k v - Lap v - b.grad v - c v - F`` and of ``d_t^k v``.

    Evaluated on interior space nodes and interior time levels.
    """
    if v.values.shape != F.values.shape:
        raise GridMismatch("v and F must share the grid")
    if time_order == 2:
        tt = second_difference(v.values, abs(v.dt), 0)
    else:
        tt = time_derivative(v)
    res = tt - _lower_order(v, coeffs) - F.values
    inner = (slice(1, -1),) * (v.domain.ndim + 1)
    w = np.multiply.outer(_time_weights(v.t)[1:-1], space_weights(v.domain)[(slice(1, -1),) * v.domain.ndim])
    return math.sqrt(float(np.sum(w * res[inner] ** 2))), math.sqrt(float(np.sum(w * tt[inner] ** 2)))
