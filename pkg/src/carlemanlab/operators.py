"""Linear source-to-data maps and their exact discrete adjoints.

Every operator acts on interior-node vectors (the Dirichlet boundary carries no
unknowns) and returns flat data vectors.  Inner products are weighted: ``h^n``
per interior node in space, trapezoid in time times face quadrature in the
data space, so that ``adjoint`` is the adjoint in those weighted products.

``adjoint_euclid`` is the transpose of the discrete time-stepping recurrence,
obtained by running it backwards; it never forms the operator.  For small 1D
problems the operator can also be assembled column by column.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .analysis import _time_weights, face_weights, sobolev_norm
from .exceptions import EmptyGamma, GridMismatch
from .geometry import DomainSpec, Face
from .solvers import (
    Coefficients,
    SourceSpec,
    SpaceTimeField,
    _check_cfl,
    cfl_limit,
    elliptic_matrix,
    embed,
    heat_factor,
    interior_shape,
    restrict,
    time_grid,
)

ASSEMBLE_LIMIT = 512


def normal_derivative_matrix(domain: DomainSpec, faces: Sequence[Face]) -> sp.csr_matrix:
    """Sparse map from interior values to one-sided outward normal derivatives on ``faces``.

    Uses ``(3 u_b - 4 u_{b-1} + u_{b-2}) / (2h)`` with ``u_b = 0``; rows are the
    face nodes of each face in turn (row-major within a face).
    """
    if not faces:
        raise EmptyGamma("observation boundary is empty")
    full_to_int = -np.ones(domain.shape, dtype=np.int64)
    full_to_int[(slice(1, -1),) * domain.ndim] = np.arange(int(np.prod(interior_shape(domain)))).reshape(
        interior_shape(domain)
    )
    idx = np.indices(domain.shape)
    rows, cols, vals = [], [], []
    offset = 0
    for face in faces:
        fi = domain.face_index(face)
        node_idx = [a[fi].ravel() for a in idx]
        nf = node_idx[0].size
        h = domain.spacing[face.axis]
        b = 0 if face.side < 0 else domain.nx - 1
        step = 1 if face.side < 0 else -1
        for k, coef in ((1, -4.0 / (2 * h)), (2, 1.0 / (2 * h))):
            nb = [a.copy() for a in node_idx]
            nb[face.axis] = np.full(nf, b + step * k)
            j = full_to_int[tuple(nb)]
            keep = j >= 0
            rows.append(offset + np.nonzero(keep)[0])
            cols.append(j[keep])
            vals.append(np.full(int(keep.sum()), coef))
        offset += nf
    n_int = int(np.prod(interior_shape(domain)))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(offset, n_int)
    )


def gradient_matrix(t: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of ``np.gradient(., t, edge_order=2)`` on a uniform grid."""
    n = t.size
    h = float(t[1] - t[0])
    if n < 3:
        raise GridMismatch("time derivative needs at least three levels")
    rows = [0, 0, 0, n - 1, n - 1, n - 1]
    cols = [0, 1, 2, n - 3, n - 2, n - 1]
    vals = [-1.5, 2.0, -0.5, 0.5, -2.0, 1.5]
    i = np.arange(1, n - 1)
    rows += list(i) + list(i)
    cols += list(i - 1) + list(i + 1)
    vals += [-0.5] * (n - 2) + [0.5] * (n - 2)
    return sp.csr_matrix((np.asarray(vals) / h, (rows, cols)), shape=(n, n))


def _as_source(R) -> Callable:
    if isinstance(R, SourceSpec):
        return R.R
    return R


@dataclass
class LinearForwardOperator:
    """Shared plumbing: weights, inner products, assembly and the weighted adjoint."""

    domain: DomainSpec
    adjoint_mode: str = "auto"
    _matrix: np.ndarray | None = field(default=None, init=False, repr=False)

    # subclasses set: n_unknown, data_weights
    @property
    def space_weight(self) -> float:
        return float(np.prod(self.domain.spacing))

    def space_inner(self, a, b) -> float:
        return self.space_weight * float(np.dot(np.ravel(a), np.ravel(b)))

    def data_inner(self, a, b) -> float:
        return float(np.sum(self.data_weights * np.ravel(a) * np.ravel(b)))

    def space_norm(self, a) -> float:
        return float(np.sqrt(max(self.space_inner(a, a), 0.0)))

    def data_norm(self, a) -> float:
        return float(np.sqrt(max(self.data_inner(a, a), 0.0)))

    @property
    def assembled(self) -> bool:
        if self.adjoint_mode == "assembled":
            return True
        if self.adjoint_mode == "matrix_free":
            return False
        return self.domain.ndim == 1 and self.n_unknown <= ASSEMBLE_LIMIT

    def matrix(self) -> np.ndarray:
        """Dense ``(n_data, n_unknown)`` matrix, built from forward solves on identity columns."""
        if self._matrix is None:
            self._matrix = self.apply(np.eye(self.n_unknown))
        return self._matrix

    def forward(self, f_int: np.ndarray) -> np.ndarray:
        f_int = np.asarray(f_int, dtype=float)
        if self.assembled:
            return self.matrix() @ f_int
        return self.apply(f_int)

    def adjoint(self, data: np.ndarray) -> np.ndarray:
        """Adjoint in the weighted inner products: ``W_x^{-1} A^T W_d``."""
        data = np.asarray(data, dtype=float)
        wd = self.data_weights.reshape((-1,) + (1,) * (data.ndim - 1)) * data
        if self.assembled:
            return (self.matrix().T @ wd) / self.space_weight
        return self.adjoint_euclid(wd) / self.space_weight

    def to_grid(self, f_int: np.ndarray) -> np.ndarray:
        return embed(self.domain, np.asarray(f_int, dtype=float))

    def from_grid(self, f: np.ndarray) -> np.ndarray:
        return restrict(self.domain, np.asarray(f, dtype=float))


@dataclass
class HyperbolicBoundary(LinearForwardOperator):
    """``f -> d_t d_nu u`` on ``gamma x [0, T]`` for ``u_tt - L u = R f``, zero initial and boundary data."""

    gamma: Sequence[Face] = ()
    R: Callable | SourceSpec | None = None
    coeffs: Coefficients | None = None
    T: float = 1.0
    dt: float | None = None

    def __post_init__(self):
        d = self.domain
        self.coeffs = Coefficients.zero(d) if self.coeffs is None else self.coeffs
        step = cfl_limit(d) if self.dt is None else self.dt
        _check_cfl(d, step)
        self.times, self.step = time_grid(self.T, step)
        self.nt = self.times.size - 1
        self.L = elliptic_matrix(d, self.coeffs)
        self.LT = sp.csr_matrix(self.L.T)
        R = _as_source(self.R)
        pts = d.points()
        self.r = np.stack([restrict(d, np.broadcast_to(R(pts, float(t)), d.shape)) for t in self.times])
        self.N = normal_derivative_matrix(d, self.gamma)
        self.Dt = gradient_matrix(self.times)
        fw = np.concatenate([face_weights(d, f).ravel() for f in self.gamma])
        self.data_weights = np.multiply.outer(_time_weights(self.times), fw).ravel()
        self.n_unknown = self.L.shape[0]
        self.n_face = self.N.shape[0]
        self.n_data = self.data_weights.size

    def _states(self, f_int: np.ndarray, observe) -> None:
        dt2 = self.step**2
        r = self.r.reshape(self.r.shape + (1,) * (f_int.ndim - 1))
        u_prev = np.zeros_like(f_int)
        u = 0.5 * dt2 * r[0] * f_int
        observe(0, u_prev)
        observe(1, u)
        for n in range(1, self.nt):
            u_next = 2.0 * u - u_prev + dt2 * (self.L @ u + r[n] * f_int)
            u_prev, u = u, u_next
            observe(n + 1, u)

    def apply(self, f_int: np.ndarray) -> np.ndarray:
        batch = f_int.shape[1:]
        tr = np.zeros((self.nt + 1, self.n_face) + batch)

        def observe(n, u):
            tr[n] = self.N @ u

        self._states(f_int, observe)
        out = self.Dt @ tr.reshape(self.nt + 1, -1)
        return out.reshape((self.n_data,) + batch)

    def states(self, f_int: np.ndarray) -> np.ndarray:
        """All interior states ``(nt + 1, n_int)`` for one source."""
        out = np.zeros((self.nt + 1, self.n_unknown))

        def observe(n, u):
            out[n] = u

        self._states(np.asarray(f_int, dtype=float), observe)
        return out

    def adjoint_euclid(self, a: np.ndarray) -> np.ndarray:
        batch = a.shape[1:]
        a = a.reshape((self.nt + 1, self.n_face, -1))
        b = (self.Dt.T @ a.reshape(self.nt + 1, -1)).reshape(a.shape)
        dt2 = self.step**2
        k = a.shape[2]
        w_next = np.zeros((self.n_unknown, k))  # w^{n+1}
        w_next2 = np.zeros((self.n_unknown, k))  # w^{n+2}
        grad = np.zeros((self.n_unknown, k))
        for n in range(self.nt, 0, -1):
            w = self.N.T @ b[n] + self.LT @ (dt2 * w_next) + 2.0 * w_next - w_next2
            # w is w^n; it multiplies the source injected at step n - 1
            coef = 0.5 * dt2 if n == 1 else dt2
            grad += coef * self.r[n - 1][:, None] * w
            w_next2, w_next = w_next, w
        return grad.reshape((self.n_unknown,) + batch)


@dataclass
class ParabolicLocal(LinearForwardOperator):
    """``f -> (d_t d_nu u on gamma x [0, T], u(., t0))`` for ``u_t - L u = R f``, ``u(., 0) = 0``.

    Under homogeneous Dirichlet data ``d_t u`` and ``d_t^2 u`` vanish on ``gamma``,
    so the remaining boundary component is ``d_t d_nu u``.
    """

    gamma: Sequence[Face] = ()
    R: Callable | SourceSpec | None = None
    coeffs: Coefficients | None = None
    T: float = 1.0
    dt: float = 0.01
    t0: float = 0.5

    def __post_init__(self):
        d = self.domain
        self.coeffs = Coefficients.zero(d) if self.coeffs is None else self.coeffs
        self.times, self.step = time_grid(self.T, self.dt)
        self.nt = self.times.size - 1
        i0 = int(round(self.t0 / self.step))
        if not 0 < i0 < self.nt or abs(self.times[i0] - self.t0) > 1e-9:
            raise GridMismatch(f"t0={self.t0} is not an interior time level of the grid (step {self.step:.6g})")
        self.i0 = i0
        self.L, self.lu = heat_factor(d, self.coeffs, self.step)
        R = _as_source(self.R)
        pts = d.points()
        self.r = np.stack([restrict(d, np.broadcast_to(R(pts, float(t)), d.shape)) for t in self.times])
        self.N = normal_derivative_matrix(d, self.gamma)
        self.Dt = gradient_matrix(self.times)
        fw = np.concatenate([face_weights(d, f).ravel() for f in self.gamma])
        self.n_unknown = self.L.shape[0]
        self.n_face = self.N.shape[0]
        self.n_trace = (self.nt + 1) * self.n_face
        self.data_weights = np.concatenate(
            [np.multiply.outer(_time_weights(self.times), fw).ravel(), np.full(self.n_unknown, self.space_weight)]
        )
        self.n_data = self.data_weights.size

    def _solve(self, rhs: np.ndarray, trans: str = "N") -> np.ndarray:
        if rhs.ndim == 1:
            return self.lu.solve(rhs, trans=trans)
        return self.lu.solve(np.ascontiguousarray(rhs), trans=trans)

    def apply(self, f_int: np.ndarray) -> np.ndarray:
        batch = f_int.shape[1:]
        r = self.r.reshape(self.r.shape + (1,) * (f_int.ndim - 1))
        tr = np.zeros((self.nt + 1, self.n_face) + batch)
        u = np.zeros_like(f_int)
        snap = None
        for n in range(self.nt):
            u = self._solve(u + self.step * r[n + 1] * f_int)
            tr[n + 1] = self.N @ u
            if n + 1 == self.i0:
                snap = u.copy()
        trace = (self.Dt @ tr.reshape(self.nt + 1, -1)).reshape((self.n_trace,) + batch)
        return np.concatenate([trace, snap], axis=0)

    def adjoint_euclid(self, a: np.ndarray) -> np.ndarray:
        batch = a.shape[1:]
        k = int(np.prod(batch)) if batch else 1
        a = a.reshape(self.n_data, k)
        at = a[: self.n_trace].reshape(self.nt + 1, self.n_face * k)
        b = (self.Dt.T @ at).reshape(self.nt + 1, self.n_face, k)
        snap = a[self.n_trace :]
        z = np.zeros((self.n_unknown, k))  # z_k
        grad = np.zeros((self.n_unknown, k))
        for n in range(self.nt, 0, -1):
            src = self.N.T @ b[n]
            if n == self.i0:
                src = src + snap
            z = self._solve(src + z, trans="T")  # z_{n-1}
            grad += self.step * self.r[n][:, None] * z
        return grad.reshape((self.n_unknown,) + batch)


@dataclass
class ParabolicCauchy(LinearForwardOperator):
    """Unknown initial state ``u0 -> d_nu u`` on ``gamma x [0, T]`` for the homogeneous heat equation."""

    gamma: Sequence[Face] = ()
    coeffs: Coefficients | None = None
    T: float = 1.0
    dt: float = 0.01

    def __post_init__(self):
        d = self.domain
        self.coeffs = Coefficients.zero(d) if self.coeffs is None else self.coeffs
        self.times, self.step = time_grid(self.T, self.dt)
        self.nt = self.times.size - 1
        self.L, self.lu = heat_factor(d, self.coeffs, self.step)
        self.N = normal_derivative_matrix(d, self.gamma)
        fw = np.concatenate([face_weights(d, f).ravel() for f in self.gamma])
        self.data_weights = np.multiply.outer(_time_weights(self.times), fw).ravel()
        self.n_unknown = self.L.shape[0]
        self.n_face = self.N.shape[0]
        self.n_data = self.data_weights.size

    def states(self, u0_int: np.ndarray) -> np.ndarray:
        u = np.asarray(u0_int, dtype=float)
        out = np.zeros((self.nt + 1,) + u.shape)
        out[0] = u
        for n in range(self.nt):
            u = self.lu.solve(np.ascontiguousarray(u))
            out[n + 1] = u
        return out

    def interior_norm(self, u0_int: np.ndarray, region, window) -> float:
        """``|u|_{H1(window; L2(region))} + |u|_{L2(window; H2(region))}`` of the evolved state."""
        st = self.states(u0_int)
        u = SpaceTimeField(np.stack([embed(self.domain, s) for s in st]), self.times, self.domain)
        return sobolev_norm(u, "H1t_L2x", region, window) + sobolev_norm(u, "L2t_H2x", region, window)

    def apply(self, u0_int: np.ndarray) -> np.ndarray:
        batch = u0_int.shape[1:]
        st = self.states(u0_int)
        tr = np.stack([self.N @ st[n] for n in range(self.nt + 1)])
        return tr.reshape((self.n_data,) + batch)

    def adjoint_euclid(self, a: np.ndarray) -> np.ndarray:
        batch = a.shape[1:]
        a = a.reshape(self.nt + 1, self.n_face, -1)
        w = self.N.T @ a[self.nt]
        for n in range(self.nt - 1, -1, -1):
            w = self.N.T @ a[n] + self.lu.solve(np.ascontiguousarray(w), trans="T")
        return w.reshape((self.n_unknown,) + batch)


def add_noise(op: LinearForwardOperator, data: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """``data + level * |data| * g / |g|`` with white ``g`` on the data grid (weighted norms)."""
    if level == 0:
        return np.array(data, dtype=float)
    g = rng.standard_normal(np.shape(data))
    return data + level * op.data_norm(data) * g / op.data_norm(g)
