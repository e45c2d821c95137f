"""Spatial domains, observation boundaries and the pseudoconvex function d.

Domains are intervals or axis-aligned rectangles sampled on uniform grids with
``nx`` nodes per axis (boundary nodes included).  Spatial arrays use ``ij``
indexing, so a 2D field has shape ``(nx, nx)`` with axis 0 along ``x1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import (
    ConfigViolation,
    NoValidExponent,
    OmegaOutsideExtension,
    TimeBelowCritical,
    X0InsideDomain,
)


@dataclass(frozen=True)
class Face:
    """One flat piece of the boundary: the set ``x[axis] == coord``."""

    axis: int
    side: int  # -1 for the lower face, +1 for the upper face
    coord: float
    ndim: int

    @property
    def name(self) -> str:
        return f"x{self.axis + 1}_{'lo' if self.side < 0 else 'hi'}"

    @property
    def normal(self) -> tuple[float, ...]:
        nu = [0.0] * self.ndim
        nu[self.axis] = float(self.side)
        return tuple(nu)

    def __repr__(self) -> str:
        return f"Face({self.name}, {self.axis}, {self.coord})"


@dataclass(frozen=True)
class DomainSpec:
    """Interval ``(a, b)`` or rectangle ``(a1, b1) x (a2, b2)`` with a uniform grid."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    nx: int

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) != len(upper) or len(lower) not in (1, 2):
            raise ConfigViolation("domain must be an interval or a rectangle")
        if any(b <= a for a, b in zip(lower, upper)):
            raise ConfigViolation(f"degenerate domain {lower} -> {upper}: need b > a on every axis")
        if int(self.nx) != self.nx or self.nx < 3:
            raise ConfigViolation(f"nx={self.nx}: need an integer >= 3")
        object.__setattr__(self, "nx", int(self.nx))

    @classmethod
    def interval(cls, a: float, b: float, nx: int) -> "DomainSpec":
        return cls((a,), (b,), nx)

    @classmethod
    def rectangle(cls, a1, b1, a2, b2, nx: int) -> "DomainSpec":
        return cls((a1, a2), (b1, b2), nx)

    @property
    def ndim(self) -> int:
        return len(self.lower)

    @property
    def kind(self) -> str:
        return "interval" if self.ndim == 1 else "rectangle"

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.ndim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (self.nx - 1) for a, b in zip(self.lower, self.upper))

    @property
    def dx(self) -> float:
        """Smallest grid spacing."""
        return min(self.spacing)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, self.nx) for a, b in zip(self.lower, self.upper)]

    @property
    def diameter(self) -> float:
        return math.dist(self.lower, self.upper)

    @property
    def faces(self) -> list[Face]:
        out = []
        for axis in range(self.ndim):
            out.append(Face(axis, -1, self.lower[axis], self.ndim))
            out.append(Face(axis, +1, self.upper[axis], self.ndim))
        return out

    def face(self, name: str) -> Face:
        for f in self.faces:
            if f.name == name:
                return f
        raise ConfigViolation(f"unknown face {name!r}; choose from {[f.name for f in self.faces]}")

    def points(self) -> np.ndarray:
        """Grid nodes as an array of shape ``(*shape, ndim)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def face_index(self, face: Face) -> tuple:
        idx: list = [slice(None)] * self.ndim
        idx[face.axis] = 0 if face.side < 0 else -1
        return tuple(idx)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for f in self.faces:
            mask[self.face_index(f)] = True
        return mask

    def contains(self, x, closed: bool = True) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = np.array(self.lower), np.array(self.upper)
        if closed:
            return bool(np.all(x >= lo) and np.all(x <= hi))
        return bool(np.all(x > lo) and np.all(x < hi))

    def corners(self) -> list[tuple[float, ...]]:
        return list(itertools.product(*zip(self.lower, self.upper)))

    def refine(self, nx: int) -> "DomainSpec":
        return DomainSpec(self.lower, self.upper, nx)


@dataclass(frozen=True)
class ObservationGeometry:
    """Observation point ``x0`` outside the domain and the boundary it illuminates.

    ``gamma`` lists the faces (or parts of faces) where ``(x - x0) . nu >= 0``;
    ``gamma_params`` holds, per face, the closed parameter interval along the
    face (``None`` for the endpoint faces of an interval).
    """

    domain: DomainSpec
    x0: tuple[float, ...]
    gamma: tuple[Face, ...]
    gamma_params: tuple
    d0: float
    d1: float

    @property
    def gamma_names(self) -> list[str]:
        return [f.name for f in self.gamma]


def _face_segment(domain: DomainSpec, face: Face):
    """Return ``(origin, direction, length)`` parametrizing a 2D face, or None in 1D."""
    if domain.ndim == 1:
        return None
    other = 1 - face.axis
    origin = np.zeros(2)
    origin[face.axis] = face.coord
    origin[other] = domain.lower[other]
    direction = np.zeros(2)
    direction[other] = 1.0
    return origin, direction, domain.upper[other] - domain.lower[other]


def compute_gamma(domain: DomainSpec, x0) -> ObservationGeometry:
    """Sub-boundary where ``(x - x0) . nu(x) >= 0`` plus the distance extremes.

    Along a flat face the dot product is affine in the face parameter, so the
    admissible part of each face is found exactly from its values at the two
    face ends.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (domain.ndim,):
        raise ConfigViolation(f"x0 must have {domain.ndim} coordinates")
    if domain.contains(x0, closed=True):
        raise X0InsideDomain(f"x0={tuple(x0)} lies in the closed domain", "x0 outside closure")

    gamma, params = [], []
    for face in domain.faces:
        nu = np.array(face.normal)
        seg = _face_segment(domain, face)
        if seg is None:
            p = np.array([face.coord])
            if float((p - x0) @ nu) >= 0.0:
                gamma.append(face)
                params.append(None)
            continue
        origin, direction, length = seg
        g0 = float((origin - x0) @ nu)
        g1 = float((origin + length * direction - x0) @ nu)
        slope = (g1 - g0) / length
        if slope == 0.0:
            lo, hi = (0.0, length) if g0 >= 0.0 else (None, None)
        else:
            root = -g0 / slope
            lo, hi = (max(0.0, root), length) if slope > 0 else (0.0, min(length, root))
            if lo > hi:
                lo = hi = None
        if lo is not None:
            gamma.append(face)
            params.append((lo, hi))

    lo, hi = np.array(domain.lower), np.array(domain.upper)
    d0 = float(np.linalg.norm(np.clip(x0, lo, hi) - x0))
    d1 = max(math.dist(c, x0) for c in domain.corners())
    return ObservationGeometry(domain, tuple(x0), tuple(gamma), tuple(params), d0, d1)


def critical_time_hyperbolic(geom: ObservationGeometry) -> float:
    """``sqrt(d1^2 - d0^2)``; Lipschitz stability needs ``T`` strictly above it."""
    return math.sqrt(geom.d1**2 - geom.d0**2)


def critical_time_observability(geom: ObservationGeometry) -> float:
    """Twice the hyperbolic critical time."""
    return 2.0 * critical_time_hyperbolic(geom)


def _midpoint_beta(lower: float, T: float, critical: float, what: str) -> float:
    if lower >= 1.0:
        raise TimeBelowCritical(
            f"T={T:.6g} <= critical time {critical:.6g}: {what} fails, no beta in (0, 1) exists",
            what,
        )
    return 0.5 * (lower + 1.0)


def select_beta_hyperbolic(geom: ObservationGeometry, T: float) -> float:
    """Midpoint of the admissible interval ``((d1^2 - d0^2) / T^2, 1)``.

    Any beta there gives ``T * sqrt(beta) > sqrt(d1^2 - d0^2)``.
    """
    lower = (geom.d1**2 - geom.d0**2) / T**2
    return _midpoint_beta(lower, T, critical_time_hyperbolic(geom), "observation-time condition T > sqrt(d1^2-d0^2)")


def select_beta_observability(geom: ObservationGeometry, T: float) -> float:
    """Midpoint of ``(4 (d1^2 - d0^2) / T^2, 1)`` so that ``T sqrt(beta) > 2 sqrt(d1^2 - d0^2)``."""
    lower = 4.0 * (geom.d1**2 - geom.d0**2) / T**2
    return _midpoint_beta(lower, T, critical_time_observability(geom), "observability time condition T > 2 sqrt(d1^2-d0^2)")


# ---------------------------------------------------------------------------
# parabolic geometry


Box = tuple[tuple[float, ...], tuple[float, ...]]


def _box(lo, hi) -> Box:
    return tuple(float(v) for v in np.atleast_1d(lo)), tuple(float(v) for v in np.atleast_1d(hi))


def _in_box(points: np.ndarray, box: Box, closed: bool = True) -> np.ndarray:
    lo, hi = np.array(box[0]), np.array(box[1])
    if closed:
        return np.all((points >= lo - 1e-12) & (points <= hi + 1e-12), axis=-1)
    return np.all((points > lo) & (points < hi), axis=-1)


def _profile(l: float, r: float, p: int, scale: float, toward_upper: bool = True):
    """``((x - l)/scale)^p ((r - x)/scale)`` and its derivative; maximizer ``(p r + l)/(p + 1)``.

    With ``toward_upper=False`` the roles of ``l`` and ``r`` swap, so the
    maximizer sits near ``l``.
    """
    sgn = 1.0 if toward_upper else -1.0
    near, far = (r, l) if toward_upper else (l, r)

    def val(x):
        x = np.asarray(x, dtype=float)
        return (sgn * (x - far) / scale) ** p * (sgn * (near - x) / scale)

    def der(x):
        x = np.asarray(x, dtype=float)
        u = sgn * (x - far) / scale
        v = sgn * (near - x) / scale
        return sgn * (p * u ** (p - 1) * v - u**p) / scale

    return val, der, (p * near + far) / (p + 1)


def _tangential(lo: float, hi: float):
    w = hi - lo

    def val(x):
        xi = (np.asarray(x, dtype=float) - lo) / w
        return 4.0 * xi * (1.0 - xi)

    def der(x):
        xi = (np.asarray(x, dtype=float) - lo) / w
        return 4.0 * (1.0 - 2.0 * xi) / w

    return val, der, 0.5 * (lo + hi)


def _unimodal_range(f: Callable, peak: float, lo: float, hi: float) -> tuple[float, float]:
    ends = [float(f(lo)), float(f(hi))]
    top = float(f(min(max(peak, lo), hi)))
    return min(ends), max(ends + [top])


@dataclass(frozen=True)
class ParabolicGeometry:
    """Enlarged domain ``omega1``, control set ``omega``, subdomain ``omega0`` and ``d``.

    ``d`` is a product of a 1D profile ``(x - l)^p (r - x)`` normal to the
    observed face(s) and, in 2D, a parabola vanishing on the two side faces.
    """

    domain: DomainSpec
    gamma: tuple[Face, ...]
    omega1: Box
    omega: Box
    omega0: Box
    exponent: int
    eta: float
    normal_axis: int
    _parts: tuple = field(repr=False, compare=False, default=())

    def d(self, x) -> np.ndarray:
        x = _as_points(x, self.domain.ndim)
        prof, _, _ = self._parts[0]
        out = prof(x[..., self.normal_axis])
        if self.domain.ndim == 2:
            tang, _, _ = self._parts[1]
            out = out * tang(x[..., 1 - self.normal_axis])
        return out

    def grad_d(self, x) -> np.ndarray:
        x = _as_points(x, self.domain.ndim)
        prof, dprof, _ = self._parts[0]
        k = self.normal_axis
        if self.domain.ndim == 1:
            return dprof(x[..., 0])[..., None]
        tang, dtang, _ = self._parts[1]
        g = np.empty(x.shape)
        g[..., k] = dprof(x[..., k]) * tang(x[..., 1 - k])
        g[..., 1 - k] = prof(x[..., k]) * dtang(x[..., 1 - k])
        return g

    @property
    def maximizer(self) -> tuple[float, ...]:
        peak = [0.0] * self.domain.ndim
        peak[self.normal_axis] = self._parts[0][2]
        if self.domain.ndim == 2:
            peak[1 - self.normal_axis] = self._parts[1][2]
        return tuple(peak)

    def _range_over(self, box: Box) -> tuple[float, float]:
        k = self.normal_axis
        prof, _, peak = self._parts[0]
        lo, hi = _unimodal_range(prof, peak, box[0][k], box[1][k])
        if self.domain.ndim == 2:
            tang, _, tpeak = self._parts[1]
            tlo, thi = _unimodal_range(tang, tpeak, box[0][1 - k], box[1][1 - k])
            lo, hi = lo * tlo, hi * thi
        return lo, hi

    @property
    def d_min_omega0(self) -> float:
        """Minimum of ``d`` over the closure of ``omega0`` (exact: d is a product of unimodal factors)."""
        return self._range_over(self.omega0)[0]

    @property
    def d_max_domain(self) -> float:
        """Maximum of ``d`` over the closure of the physical domain."""
        return self._range_over((self.domain.lower, self.domain.upper))[1]

    @property
    def d_max_unobserved(self) -> float:
        """Maximum of ``d`` over the closure of the unobserved boundary (zero by construction)."""
        vals = [0.0]
        for face in self.domain.faces:
            if face in self.gamma:
                continue
            lo, hi = list(self.domain.lower), list(self.domain.upper)
            lo[face.axis] = hi[face.axis] = face.coord
            vals.append(self._range_over((tuple(lo), tuple(hi)))[1])
        return max(vals)

    def omega1_domain(self) -> DomainSpec:
        """Grid on the enlarged domain with (roughly) the spacing of the physical grid."""
        ext = max(b - a for a, b in zip(*self.omega1))
        base = max(b - a for a, b in zip(self.domain.lower, self.domain.upper))
        nx = int(round((self.domain.nx - 1) * ext / base)) + 1
        return DomainSpec(self.omega1[0], self.omega1[1], nx)


def _as_points(x, ndim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if ndim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x


def construct_d(
    domain: DomainSpec,
    gamma: Sequence[Face | str],
    eta: float | None = None,
    omega_bounds=None,
    exponent: int | None = None,
    omega0=None,
) -> ParabolicGeometry:
    """Build ``omega1``, ``omega`` and a closed-form pseudoconvex ``d``.

    Parameters
    ----------
    gamma : faces (or face names) observed.  In 1D any nonempty subset of the
        two endpoints; in 2D a single face.
    eta : extension width, default half the domain diameter.
    omega_bounds : ``(lo, hi)`` of the control set along the normal axis (1D
        interval), or a full box in 2D.  Default: middle third of the extension.
    exponent : profile exponent ``p``.  Default: the smallest integer ``p >= 2``
        putting the maximizer inside ``omega``.
    omega0 : ``(lo, hi)`` box for the subdomain where the source is recovered.
    """
    faces = tuple(domain.face(g) if isinstance(g, str) else g for g in gamma)
    if not faces:
        raise ConfigViolation("observed boundary must be nonempty")
    if domain.ndim == 2 and len(faces) != 1:
        raise ConfigViolation("rectangles support a single observed face")
    eta = 0.5 * domain.diameter if eta is None else float(eta)
    if eta <= 0:
        raise ConfigViolation("extension width eta must be positive")

    k = faces[0].axis
    if any(f.axis != k for f in faces):
        raise ConfigViolation("observed faces must share one normal axis")
    a, b = domain.lower[k], domain.upper[k]
    length = b - a
    sides = {f.side for f in faces}
    l = a - eta if -1 in sides else a
    r = b + eta if +1 in sides else b
    # the control set sits in the extension beyond the upper face when it exists
    ext_lo, ext_hi = (b, r) if +1 in sides else (l, a)

    lo1, hi1 = list(domain.lower), list(domain.upper)
    lo1[k], hi1[k] = l, r
    omega1 = _box(lo1, hi1)

    if omega_bounds is None:
        w = (ext_hi - ext_lo) / 3.0
        om_k = (ext_lo + w, ext_hi - w)
        om_box = None
    else:
        om = np.asarray(omega_bounds, dtype=float)
        if om.ndim == 2:
            om_box = _box(om[0], om[1])
            om_k = (om_box[0][k], om_box[1][k])
        else:
            om_box = None
            om_k = (float(om[0]), float(om[1]))
    if not (ext_lo < om_k[0] < om_k[1] < ext_hi):
        raise OmegaOutsideExtension(
            f"omega {om_k} must lie strictly inside the extension ({ext_lo}, {ext_hi})", "omega in omega1 minus closure"
        )

    if domain.ndim == 2:
        j = 1 - k
        cj, wj = 0.5 * (domain.lower[j] + domain.upper[j]), domain.upper[j] - domain.lower[j]
        if om_box is None:
            lo, hi = [0.0, 0.0], [0.0, 0.0]
            lo[k], hi[k] = om_k
            lo[j], hi[j] = cj - wj / 6.0, cj + wj / 6.0
            om_box = _box(lo, hi)
    else:
        om_box = _box([om_k[0]], [om_k[1]])

    toward_upper = +1 in sides
    near, far = (r, l) if toward_upper else (l, r)

    def peak_of(p):
        return (p * near + far) / (p + 1)
    if exponent is None:
        for p in range(2, 400):
            if om_k[0] < peak_of(p) < om_k[1]:
                exponent = p
                break
        else:
            raise NoValidExponent(f"no exponent p puts the maximizer of d inside omega={om_k}", "critical point in omega")
    elif not (om_k[0] < peak_of(exponent) < om_k[1]):
        raise NoValidExponent(
            f"p={exponent} puts the maximizer at {peak_of(exponent):.6g}, outside omega={om_k}", "critical point in omega"
        )

    parts = [_profile(l, r, int(exponent), length, toward_upper)]
    if domain.ndim == 2:
        parts.append(_tangential(domain.lower[1 - k], domain.upper[1 - k]))

    if omega0 is None:
        lo0, hi0 = list(domain.lower), list(domain.upper)
        for ax in range(domain.ndim):
            span = domain.upper[ax] - domain.lower[ax]
            lo0[ax], hi0[ax] = domain.lower[ax] + 0.25 * span, domain.upper[ax] - 0.25 * span
        if toward_upper:
            lo0[k], hi0[k] = a + 0.5 * length, a + 0.9 * length
        else:
            lo0[k], hi0[k] = a + 0.1 * length, a + 0.5 * length
        omega0 = (lo0, hi0)
    om0 = _box(*omega0)
    pg = ParabolicGeometry(domain, faces, omega1, om_box, om0, int(exponent), eta, k, tuple(parts))
    _check_omega0(pg)
    return pg


def _check_omega0(pg: ParabolicGeometry) -> None:
    dom = pg.domain
    lo, hi = pg.omega0
    for ax in range(dom.ndim):
        if not (dom.lower[ax] <= lo[ax] < hi[ax] <= dom.upper[ax]):
            raise ConfigViolation(f"omega0 {pg.omega0} must be a box inside the domain")
    # closure(omega0) may touch the boundary only on observed faces
    for face in dom.faces:
        touches = (lo[face.axis] if face.side < 0 else hi[face.axis]) == face.coord
        if touches and face not in pg.gamma:
            raise ConfigViolation(f"omega0 touches the unobserved face {face.name}", "closure(omega0) in domain + gamma")


def check_pseudoconvexity(pg: ParabolicGeometry, grad_tol: float = 1e-10) -> dict[str, bool]:
    """Nodewise check of the sign, gradient and zero-set requirements on ``d``.

    Gradients are finite differences on a grid covering ``omega1``.  The four
    corners of a rectangular ``omega1`` are skipped in the gradient test.
    """
    g1 = pg.omega1_domain()
    pts = g1.points()
    dv = pg.d(pts)
    interior = ~g1.boundary_mask()
    grads = np.gradient(dv, *g1.axes, edge_order=2) if g1.ndim > 1 else [np.gradient(dv, g1.axes[0], edge_order=2)]
    gnorm = np.sqrt(sum(g**2 for g in grads))
    outside_omega = ~_in_box(pts, pg.omega, closed=True)
    if g1.ndim == 2:
        # d vanishes on both faces through a corner of omega1, so its gradient does too
        on_edge = [np.isclose(pts[..., ax], g1.lower[ax]) | np.isclose(pts[..., ax], g1.upper[ax]) for ax in range(2)]
        outside_omega &= ~(on_edge[0] & on_edge[1])

    dpts = pg.domain.points()
    d_dom = pg.d(dpts)
    in0 = _in_box(dpts, pg.omega0, closed=True)
    unobserved = np.zeros(pg.domain.shape, dtype=bool)
    for face in pg.domain.faces:
        if face not in pg.gamma:
            unobserved[pg.domain.face_index(face)] = True
    return {
        "positive_in_omega1": bool(np.all(dv[interior] > 0)),
        "zero_on_boundary_omega1": bool(np.all(np.abs(dv[~interior]) <= 1e-14)),
        "gradient_nonzero_outside_omega": bool(np.all(gnorm[outside_omega] > grad_tol)),
        "positive_on_omega0": bool(np.all(d_dom[in0] > 0)) and bool(np.any(in0)),
        "zero_on_unobserved_boundary": bool(np.all(np.abs(d_dom[unobserved]) <= 1e-14)),
    }
