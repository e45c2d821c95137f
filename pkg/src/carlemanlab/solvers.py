"""Finite-difference forward solvers.

All schemes share one spatial operator ``L u = Lap u + b . grad u + c u`` on the
interior nodes (homogeneous Dirichlet data), assembled once as a sparse matrix
by :func:`elliptic_matrix`.  The wave solvers use explicit leapfrog, the heat
solver backward Euler.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (
    CFLViolation,
    ConditionViolation,
    ConfigViolation,
    GridMismatch,
    LinearSolveFailure,
    NonzeroTrace,
    UnstableSolution,
)
from .geometry import DomainSpec

CFL_SAFETY = 0.9


@dataclass
class Coefficients:
    """Lower-order coefficients sampled on the grid: ``b[j]`` and ``c`` have the domain shape."""

    b: tuple[np.ndarray, ...]
    c: np.ndarray

    @classmethod
    def zero(cls, domain: DomainSpec) -> "Coefficients":
        return cls(tuple(np.zeros(domain.shape) for _ in range(domain.ndim)), np.zeros(domain.shape))

    @classmethod
    def constant(cls, domain: DomainSpec, b=0.0, c=0.0) -> "Coefficients":
        b = np.broadcast_to(np.atleast_1d(np.asarray(b, dtype=float)), (domain.ndim,))
        return cls(tuple(np.full(domain.shape, v) for v in b), np.full(domain.shape, float(c)))

    @classmethod
    def from_functions(cls, domain: DomainSpec, b: Sequence[Callable] | None = None, c: Callable | None = None):
        pts = domain.points()
        bb = tuple(np.broadcast_to(np.asarray(f(pts), dtype=float), domain.shape).copy() for f in b) if b else None
        cc = np.broadcast_to(np.asarray(c(pts), dtype=float), domain.shape).copy() if c else np.zeros(domain.shape)
        return cls(bb if bb is not None else tuple(np.zeros(domain.shape) for _ in range(domain.ndim)), cc)

    def validate(self, domain: DomainSpec) -> None:
        if len(self.b) != domain.ndim or any(np.shape(v) != domain.shape for v in self.b):
            raise GridMismatch("b must have one grid-shaped component per axis")
        if np.shape(self.c) != domain.shape:
            raise GridMismatch("c must have the grid shape")
        if not all(np.all(np.isfinite(v)) for v in (*self.b, self.c)):
            raise ConfigViolation("coefficients must be finite")

    @property
    def is_zero(self) -> bool:
        return not any(np.any(v) for v in (*self.b, self.c))


@dataclass
class SourceSpec:
    """Source ``R(x, t) f(x)``.

    ``R`` and ``dR`` take grid points of shape ``(*space, ndim)`` and a scalar
    time and return a grid-shaped array.  Without ``dR`` the time derivative
    is a centred difference with step ``1e-6``.
    """

    R: Callable
    f: np.ndarray
    r0: float = 0.0
    dR: Optional[Callable] = None

    def R_at(self, points: np.ndarray, t: float) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.R(points, t), dtype=float), points.shape[:-1])

    def dR_at(self, points: np.ndarray, t: float) -> np.ndarray:
        if self.dR is not None:
            return np.broadcast_to(np.asarray(self.dR(points, t), dtype=float), points.shape[:-1])
        h = 1e-6
        return (self.R_at(points, t + h) - self.R_at(points, t - h)) / (2 * h)

    def with_f(self, f: np.ndarray) -> "SourceSpec":
        return SourceSpec(self.R, f, self.r0, self.dR)

    def check_floor(self, domain: DomainSpec, t: float, what: str) -> None:
        """Require ``|R(x, t)| >= r0 > 0`` at every grid node."""
        vals = np.abs(self.R_at(domain.points(), t))
        if not self.r0 > 0 or np.min(vals) < self.r0:
            raise ConditionViolation(
                f"min |R(x, {t:g})| = {np.min(vals):.6g} with r0 = {self.r0:g}: {what} needs |R| >= r0 > 0",
                what,
            )


@dataclass
class SpaceTimeField:
    """Grid function ``values[n, ...] = u(x, t[n])``."""

    values: np.ndarray
    t: np.ndarray
    domain: DomainSpec
    name: str = "u"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        if self.values.shape != (self.t.size,) + self.domain.shape:
            raise GridMismatch(f"values shape {self.values.shape} != {(self.t.size,) + self.domain.shape}")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def nt(self) -> int:
        return self.t.size

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.t - t)))
        tol = 1e-9 * max(1.0, abs(t)) + 1e-6 * abs(self.dt)
        if abs(self.t[i] - t) > tol:
            raise GridMismatch(f"t={t} is not a grid time")
        return i

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]

    def time_derivative(self) -> "SpaceTimeField":
        """Centred differences inside, second-order one-sided at both ends."""
        return SpaceTimeField(np.gradient(self.values, self.t, axis=0, edge_order=2), self.t, self.domain, f"d_t {self.name}")

    def scaled(self, a: float) -> "SpaceTimeField":
        return SpaceTimeField(a * self.values, self.t, self.domain, self.name)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    # -- serialization --------------------------------------------------
    _MAGIC = b"STF1"

    def to_binary(self, path) -> None:
        """Header ``STF1, ndim, nt, nx, t_start, dt, lower..., upper...`` then row-major doubles."""
        d = self.domain
        head = struct.pack("<4siii", self._MAGIC, d.ndim, self.nt, d.nx)
        head += struct.pack(f"<2d{2 * d.ndim}d", float(self.t[0]), self.dt, *d.lower, *d.upper)
        with open(path, "wb") as fh:
            fh.write(head)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path, name: str = "u") -> "SpaceTimeField":
        raw = Path(path).read_bytes()
        magic, ndim, nt, nx = struct.unpack_from("<4siii", raw, 0)
        if magic != cls._MAGIC:
            raise ConfigViolation(f"{path}: not a field file")
        off = struct.calcsize("<4siii")
        nums = struct.unpack_from(f"<2d{2 * ndim}d", raw, off)
        off += struct.calcsize(f"<2d{2 * ndim}d")
        t_start, dt = nums[0], nums[1]
        domain = DomainSpec(nums[2 : 2 + ndim], nums[2 + ndim :], nx)
        values = np.frombuffer(raw, dtype="<f8", offset=off).reshape((nt,) + domain.shape)
        return cls(values.copy(), t_start + dt * np.arange(nt), domain, name)

    def to_csv(self, path) -> None:
        d = self.domain
        pts = d.points().reshape(-1, d.ndim)
        cols = ["t"] + [f"x{i + 1}" for i in range(d.ndim)] + [self.name]
        rows = []
        for n, tn in enumerate(self.t):
            vals = self.values[n].reshape(-1)
            rows.append(np.column_stack([np.full(vals.size, tn), pts, vals]))
        np.savetxt(path, np.vstack(rows), delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# spatial operator


def interior_shape(domain: DomainSpec) -> tuple[int, ...]:
    return (domain.nx - 2,) * domain.ndim


def interior_slice(domain: DomainSpec) -> tuple:
    return (slice(1, -1),) * domain.ndim


def embed(domain: DomainSpec, u_int: np.ndarray) -> np.ndarray:
    """Interior vector(s) ``(n_int, *batch)`` to full grid arrays ``(*shape, *batch)`` with zero boundary."""
    batch = u_int.shape[1:]
    out = np.zeros(domain.shape + batch)
    out[interior_slice(domain)] = u_int.reshape(interior_shape(domain) + batch)
    return out


def restrict(domain: DomainSpec, u: np.ndarray) -> np.ndarray:
    """Full grid array ``(*shape, *batch)`` to interior vector(s) ``(n_int, *batch)``."""
    inner = u[interior_slice(domain)]
    return inner.reshape((-1,) + u.shape[domain.ndim :])


def elliptic_matrix(domain: DomainSpec, coeffs: Coefficients) -> sp.csr_matrix:
    """Sparse ``Lap + b . grad + c`` on interior nodes, Dirichlet zero outside.

    Second-order central differences on every axis.
    """
    coeffs.validate(domain)
    m = domain.nx - 2
    eye = sp.identity(m, format="csr")
    mats = []
    for axis, h in enumerate(domain.spacing):
        d2 = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
        d1 = sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 1]) / (2.0 * h)
        factors2 = [eye] * domain.ndim
        factors1 = [eye] * domain.ndim
        factors2[axis], factors1[axis] = d2, d1
        lap = factors2[0]
        grad = factors1[0]
        for k in range(1, domain.ndim):
            lap = sp.kron(lap, factors2[k])
            grad = sp.kron(grad, factors1[k])
        bj = restrict(domain, coeffs.b[axis])
        mats.append(lap + sp.diags(bj) @ grad)
    total = mats[0]
    for extra in mats[1:]:
        total = total + extra
    total = total + sp.diags(restrict(domain, coeffs.c))
    return sp.csr_matrix(total)


def cfl_limit(domain: DomainSpec) -> float:
    """Largest admissible leapfrog step: ``0.9 dx / sqrt(ndim)`` (``0.9 dx`` in 1D)."""
    return CFL_SAFETY * domain.dx / math.sqrt(domain.ndim)


def time_grid(T: float, dt: float) -> tuple[np.ndarray, float]:
    """``nt`` equal steps of size ``|T|/nt <= |dt|`` covering ``[0, T]`` (``T`` may be negative)."""
    if dt == 0 or T == 0 or np.sign(T) != np.sign(dt):
        raise ConfigViolation(f"T={T} and dt={dt} must be nonzero with the same sign")
    nt = max(1, int(math.ceil(abs(T) / abs(dt) - 1e-9)))
    step = T / nt
    return step * np.arange(nt + 1), step


def _check_cfl(domain: DomainSpec, dt: float) -> None:
    lim = cfl_limit(domain)
    if abs(dt) > lim * (1 + 1e-12):
        raise CFLViolation(f"dt={abs(dt):.6g} exceeds the CFL limit {lim:.6g} (0.9 dx / sqrt(ndim))", "CFL")


def leapfrog(
    L: sp.csr_matrix,
    u0: np.ndarray,
    v0: np.ndarray,
    forcing: Callable[[int], np.ndarray] | None,
    nt: int,
    dt: float,
    observe: Callable[[int, np.ndarray], None],
) -> None:
    """Leapfrog on interior vectors; ``observe(n, u^n)`` is called for ``n = 0..nt``.

    ``forcing(n)`` returns the source at step ``n`` (``None`` for no source).
    The first step is the Taylor expansion ``u^1 = u0 + dt v0 + dt^2/2 (L u0 + s^0)``.
    """
    dt2 = dt * dt
    s0 = forcing(0) if forcing is not None else 0.0
    u_prev = u0
    u = u0 + dt * v0 + 0.5 * dt2 * (L @ u0 + s0)
    observe(0, u_prev)
    observe(1, u)
    for n in range(1, nt):
        rhs = L @ u
        if forcing is not None:
            rhs = rhs + forcing(n)
        u_next = 2.0 * u - u_prev + dt2 * rhs
        u_prev, u = u, u_next
        if n % 256 == 0 and not np.all(np.isfinite(u)):
            raise UnstableSolution(f"non-finite values at step {n}")
        observe(n + 1, u)
    if not np.all(np.isfinite(u)):
        raise UnstableSolution("non-finite values in the final state")


def _collect(domain: DomainSpec, nt: int, batch: tuple = ()):
    out = np.zeros((nt + 1,) + domain.shape + batch)
    inner = (slice(None),) + interior_slice(domain)

    def observe(n, u):
        out[n][inner[1:]] = u.reshape(interior_shape(domain) + batch)

    return out, observe


def _source_forcing(domain: DomainSpec, source: SourceSpec, times: np.ndarray, f_int: np.ndarray):
    pts = domain.points()

    def forcing(n):
        r = restrict(domain, source.R_at(pts, float(times[n])))
        return r.reshape(r.shape + (1,) * (f_int.ndim - 1)) * f_int

    return forcing


def solve_wave_ibvp(domain: DomainSpec, coeffs: Coefficients, source: SourceSpec, T: float, dt: float) -> SpaceTimeField:
    """``u_tt - Lap u - b . grad u - c u = R f`` with zero initial and boundary data."""
    _check_cfl(domain, dt)
    times, step = time_grid(T, dt)
    L = elliptic_matrix(domain, coeffs)
    f_int = restrict(domain, np.asarray(source.f, dtype=float))
    zero = np.zeros_like(f_int)
    out, observe = _collect(domain, times.size - 1)
    leapfrog(L, zero, zero, _source_forcing(domain, source, times, f_int), times.size - 1, step, observe)
    return SpaceTimeField(out, times, domain)


def _check_dirichlet(domain: DomainSpec, u: np.ndarray, name: str, tol: float = 1e-12) -> None:
    bnd = domain.boundary_mask()
    if np.any(np.abs(u[bnd]) > tol * max(1.0, np.max(np.abs(u)))):
        raise ConfigViolation(f"{name} must vanish on the boundary nodes")


def solve_wave_free(
    domain: DomainSpec, coeffs: Coefficients, u0: np.ndarray, v0: np.ndarray, T: float, dt: float
) -> SpaceTimeField:
    """Homogeneous wave equation with data ``(u0, v0)``; a negative ``dt`` integrates backwards to ``-|T|``."""
    _check_cfl(domain, dt)
    T = math.copysign(abs(T), dt)
    u0 = np.asarray(u0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    _check_dirichlet(domain, u0, "u0")
    times, step = time_grid(T, dt)
    L = elliptic_matrix(domain, coeffs)
    out, observe = _collect(domain, times.size - 1)
    leapfrog(L, restrict(domain, u0), restrict(domain, v0), None, times.size - 1, step, observe)
    return SpaceTimeField(out, times, domain)


def heat_factor(domain: DomainSpec, coeffs: Coefficients, dt: float):
    """Sparse LU of ``I - dt L``."""
    L = elliptic_matrix(domain, coeffs)
    A = sp.identity(L.shape[0], format="csc") - dt * L.tocsc()
    try:
        return L, spla.splu(A)
    except RuntimeError as exc:
        raise LinearSolveFailure(f"factorization of I - dt L failed: {exc}") from exc


def backward_euler(lu, u0: np.ndarray, forcing: Callable[[int], np.ndarray] | None, nt: int, dt: float, observe) -> None:
    """``(I - dt L) u^{n+1} = u^n + dt s^{n+1}`` on interior vectors."""
    u = u0
    observe(0, u)
    for n in range(nt):
        rhs = u if forcing is None else u + dt * forcing(n + 1)
        u = lu.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(u)):
            raise LinearSolveFailure(f"non-finite solution at step {n + 1}")
        observe(n + 1, u)


def solve_heat(
    domain: DomainSpec,
    coeffs: Coefficients,
    source: SourceSpec | None,
    u0: np.ndarray | None,
    T: float,
    dt: float,
) -> tuple[SpaceTimeField, SpaceTimeField]:
    """Backward Euler for ``u_t - Lap u - b . grad u - c u = R f`` with Dirichlet zero data.

    Returns ``(u, z)`` where ``z = u_t`` by centred differences in time.
    """
    if dt <= 0:
        raise ConfigViolation("dt must be positive")
    times, step = time_grid(T, dt)
    _, lu = heat_factor(domain, coeffs, step)
    u_init = np.zeros(domain.shape) if u0 is None else np.asarray(u0, dtype=float)
    u_int = restrict(domain, u_init)
    forcing = None
    if source is not None:
        forcing = _source_forcing(domain, source, times, restrict(domain, np.asarray(source.f, dtype=float)))
    out, observe = _collect(domain, times.size - 1)
    backward_euler(lu, u_int, forcing, times.size - 1, step, observe)
    # keep the prescribed initial data on the boundary nodes too
    out[0] = u_init
    u = SpaceTimeField(out, times, domain, "u")
    z = u.time_derivative()
    z.name = "z"
    return u, z


def extend_odd(field: SpaceTimeField, rhs: SpaceTimeField | None = None, tol: float = 1e-10):
    """Odd extension ``y(., -t) = -y(., t)`` from ``[0, T]`` to ``[-T, T]``.

    Requires ``y(., 0) == 0`` (max-norm at most ``tol``).  When ``rhs`` is given
    it is extended the same way and the pair is returned.
    """
    if abs(field.t[0]) > 1e-14:
        raise GridMismatch("field must start at t = 0")
    trace = float(np.max(np.abs(field.values[0])))
    if trace > tol:
        raise NonzeroTrace(f"|y(., 0)|_inf = {trace:.3g} exceeds {tol:g}; the odd extension would jump", "y(., 0) = 0")

    def ext(fld: SpaceTimeField) -> SpaceTimeField:
        t = np.concatenate([-fld.t[:0:-1], fld.t])
        vals = np.concatenate([-fld.values[:0:-1], fld.values])
        return SpaceTimeField(vals, t, fld.domain, fld.name)

    if rhs is None:
        return ext(field)
    if rhs.t.shape != field.t.shape or not np.allclose(rhs.t, field.t):
        raise GridMismatch("rhs must share the time grid")
    return ext(field), ext(rhs)


def source_field(domain: DomainSpec, source: SourceSpec, times: np.ndarray, derivative: bool = False) -> SpaceTimeField:
    """``R f`` (or ``dR/dt f``) sampled on a space-time grid."""
    pts = domain.points()
    f = np.asarray(source.f, dtype=float)
    get = source.dR_at if derivative else source.R_at
    vals = np.stack([get(pts, float(t)) * f for t in times])
    return SpaceTimeField(vals, np.asarray(times, dtype=float), domain, "dR f" if derivative else "R f")
