"""Carleman weight functions and the scalar constants built from them.

Everything large is handled through logarithms: ``e^{2 s phi}`` is never formed
directly, callers receive ``2 s phi`` (see :func:`log_weight`) and exponentiate
after subtracting a maximum.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import (
    ConfigViolation,
    ConditionViolation,
    KindMismatch,
    NoAdmissibleBeta,
    ParameterConflict,
    TimeOutOfRange,
)
from .geometry import ObservationGeometry, ParabolicGeometry, _as_points

HYPERBOLIC = "hyperbolic"
PARABOLIC = "parabolic"
BLOWUP = "blowup"
FLAT = "flat"
KINDS = (HYPERBOLIC, PARABOLIC, BLOWUP, FLAT)


def default_s_sweep(n: int = 16, s_min: float = 1.0, s_max: float = 64.0) -> tuple[float, ...]:
    return tuple(float(s) for s in np.geomspace(s_min, s_max, n))


@dataclass(frozen=True)
class WeightParams:
    """Parameters of one weight family.

    ``kind`` selects the phase:

    * ``hyperbolic``: ``psi = |x - x0|^2 - beta (t - t0)^2``
    * ``parabolic``: ``psi = d(x) - beta (t - t0)^2`` with ``d`` from ``pgeom``
    * ``blowup``: ``(e^{lam d} - e^{2 lam |d|_inf}) / (t (T - t))`` (evaluated, never checked)
    * ``flat``: ``phi == 0``, the weight is identically one
    """

    lam: float
    beta: float = 0.0
    t0: float = 0.0
    kind: str = HYPERBOLIC
    x0: Optional[tuple[float, ...]] = None
    pgeom: Optional[ParabolicGeometry] = None
    T: Optional[float] = None
    d_func: Optional[Callable] = field(default=None, compare=False)
    d_norm: Optional[float] = None
    s_sweep: tuple[float, ...] = field(default_factory=default_s_sweep)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigViolation(f"unknown weight kind {self.kind!r}")
        if self.kind != FLAT and not self.lam > 0:
            raise ConfigViolation(f"lambda={self.lam}: must be positive")
        if self.beta < 0:
            raise ConfigViolation(f"beta={self.beta}: must be nonnegative")
        sw = tuple(float(s) for s in self.s_sweep)
        if any(s <= 0 for s in sw) or any(b <= a for a, b in zip(sw, sw[1:])):
            raise ConfigViolation("s_sweep must be positive and strictly increasing")
        object.__setattr__(self, "s_sweep", sw)
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if self.kind == HYPERBOLIC and self.x0 is None:
            raise ConfigViolation("hyperbolic weight needs x0")
        if self.kind in (PARABOLIC, BLOWUP) and self.pgeom is None and self.d_func is None:
            raise ConfigViolation(f"{self.kind} weight needs pgeom or d_func")
        if self.kind == BLOWUP and (self.T is None or self.T <= 0):
            raise ConfigViolation("blow-up weight needs T > 0")

    @property
    def d(self) -> Callable:
        return self.d_func if self.d_func is not None else self.pgeom.d

    def replace(self, **changes) -> "WeightParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return WeightParams(**values)


def _ndim(params: WeightParams) -> int:
    if params.x0 is not None:
        return len(params.x0)
    if params.pgeom is not None:
        return params.pgeom.domain.ndim
    return 1


def _spatial_phase(x, params: WeightParams) -> np.ndarray:
    x = _as_points(x, _ndim(params))
    if params.kind == HYPERBOLIC:
        return np.sum((x - np.asarray(params.x0)) ** 2, axis=-1)
    return np.asarray(params.d(x), dtype=float)


def eval_psi_hyperbolic(x, t, params: WeightParams) -> np.ndarray:
    """``|x - x0|^2 - beta (t - t0)^2`` (broadcast over ``x`` and ``t``)."""
    if params.kind != HYPERBOLIC:
        raise KindMismatch(f"expected a hyperbolic weight, got {params.kind!r}")
    return _spatial_phase(x, params) - params.beta * (np.asarray(t, dtype=float) - params.t0) ** 2


def eval_psi(x, t, params: WeightParams) -> np.ndarray:
    if params.kind not in (HYPERBOLIC, PARABOLIC):
        raise KindMismatch(f"psi is defined for hyperbolic/parabolic weights, got {params.kind!r}")
    return _spatial_phase(x, params) - params.beta * (np.asarray(t, dtype=float) - params.t0) ** 2


def eval_phi(x, t, params: WeightParams) -> np.ndarray:
    """``exp(lam * psi)``; strictly positive."""
    return np.exp(params.lam * eval_psi(x, t, params))


def blowup_log_weight(d_x, d_norm: float, lam: float, t, T: float) -> np.ndarray:
    """Logarithm of the blow-up weight, ``(e^{lam d} - e^{2 lam |d|}) / (t (T - t))``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(t >= T):
        raise TimeOutOfRange(f"blow-up weight needs 0 < t < T={T}")
    return (np.exp(lam * np.asarray(d_x, dtype=float)) - math.exp(2.0 * lam * d_norm)) / (t * (T - t))


def eval_blowup_weight(x, t, params: WeightParams) -> np.ndarray:
    if params.kind != BLOWUP:
        raise KindMismatch(f"expected a blow-up weight, got {params.kind!r}")
    d_norm = params.d_norm if params.d_norm is not None else params.pgeom.d_max_domain
    return np.exp(blowup_log_weight(_spatial_phase(x, params), d_norm, params.lam, t, params.T))


def phi_grid(points: np.ndarray, t, params: WeightParams) -> np.ndarray:
    """``phi`` on a space-time grid: ``points`` of shape ``(*space, ndim)``, result ``(nt, *space)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if params.kind == FLAT:
        return np.zeros((t.size,) + np.shape(points)[:-1])
    space = _spatial_phase(points, params)
    tt = t.reshape((-1,) + (1,) * space.ndim)
    if params.kind == BLOWUP:
        d_norm = params.d_norm if params.d_norm is not None else params.pgeom.d_max_domain
        return np.exp(blowup_log_weight(space[None], d_norm, params.lam, tt, params.T))
    return np.exp(params.lam * (space[None] - params.beta * (tt - params.t0) ** 2))


def log_weight(points: np.ndarray, t, s: float, params: WeightParams) -> np.ndarray:
    """``log(e^{2 s phi}) = 2 s phi`` on a space-time grid."""
    return 2.0 * s * phi_grid(points, t, params)


# ---------------------------------------------------------------------------
# named constants


@dataclass
class CarlemanConstants:
    """Scalar constants driving the absorption arguments; ``None`` means not applicable."""

    c0: Optional[float] = None
    kappa0: Optional[float] = None
    kappa1: Optional[float] = None
    kappa2: Optional[float] = None
    sigma0: Optional[float] = None
    sigma1: Optional[float] = None
    mu: Optional[float] = None
    mu0: Optional[float] = None
    mu1: Optional[float] = None
    mu2: Optional[float] = None
    extras: dict = field(default_factory=dict)

    FORMULAS = {
        "c0": "2 (exp(lam d0^2) - exp(lam d1^2 - lam beta T^2))",
        "kappa0": "exp(lam d0^2)",
        "kappa1": "exp(lam (d1^2 - beta T^2 / 4))",
        "kappa2": "exp(lam (d0^2 - beta delta^2))",
        "sigma0": "min over closure(omega0) of phi~(x, t0) = exp(lam min d)",
        "sigma1": "max(max phi~ on unobserved boundary x closure(I), max phi~(., t0 - delta))",
        "mu": "sigma0 - sigma1",
        "mu1": "exp(lam (d0~^2 - beta eps~^2))",
        "mu2": "max(1, exp(lam (d1~^2 - beta delta~^2)))",
        "mu0": "mu1 - mu2",
    }

    NAMES = ("c0", "kappa0", "kappa1", "kappa2", "sigma0", "sigma1", "mu", "mu0", "mu1", "mu2")

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.NAMES}
        out.update(self.extras)
        return out


def lipschitz_constants(geom: ObservationGeometry, lam: float, beta: float, T: float) -> CarlemanConstants:
    """``c0`` for the hyperbolic source problem; needs ``T sqrt(beta) > sqrt(d1^2 - d0^2)``, ``beta < 1``."""
    gap = geom.d1**2 - geom.d0**2
    if not (0 < beta < 1) or not T * math.sqrt(beta) > math.sqrt(gap):
        raise ParameterConflict(
            f"beta={beta:.6g}, T={T:.6g}: need 0 < beta < 1 and T sqrt(beta) > sqrt(d1^2 - d0^2) = {math.sqrt(gap):.6g}",
            "beta-adjusted observation time",
        )
    c0 = 2.0 * (math.exp(lam * geom.d0**2) - math.exp(lam * geom.d1**2 - lam * beta * T**2))
    return CarlemanConstants(c0=c0, extras={"beta": beta, "lam": lam, "T": T})


def max_observability_delta(geom: ObservationGeometry, beta: float, T: float) -> float:
    """Supremum of ``delta`` with ``T > 2 sqrt(d1^2 - d0^2 + beta delta^2) / sqrt(beta)``."""
    room = T**2 / 4.0 - (geom.d1**2 - geom.d0**2) / beta
    if room <= 0:
        raise ParameterConflict(
            f"T={T:.6g}, beta={beta:.6g}: need T sqrt(beta) > 2 sqrt(d1^2 - d0^2)", "observability time with beta"
        )
    return math.sqrt(room)


def observability_constants(
    geom: ObservationGeometry, lam: float, beta: float, T: float, delta: float | None = None
) -> CarlemanConstants:
    """``kappa0 > kappa1`` and ``kappa2 > kappa1`` for the observability argument (centre ``T/2``)."""
    if not 0 < beta < 1:
        raise ParameterConflict(f"beta={beta}: need 0 < beta < 1", "observability time with beta")
    dmax = max_observability_delta(geom, beta, T)
    if delta is None:
        delta = 0.5 * min(dmax, T / 2.0)
    elif not 0 < delta < dmax:
        raise ParameterConflict(
            f"delta={delta:.6g} must lie in (0, {dmax:.6g}) so that kappa2 > kappa1", "kappa2 > kappa1"
        )
    k0 = math.exp(lam * geom.d0**2)
    k1 = math.exp(lam * (geom.d1**2 - T**2 * beta / 4.0))
    k2 = math.exp(lam * (geom.d0**2 - beta * delta**2))
    return CarlemanConstants(kappa0=k0, kappa1=k1, kappa2=k2, extras={"beta": beta, "lam": lam, "T": T, "delta": delta})


def select_beta_parabolic(pgeom: ParabolicGeometry, delta: float, factor: float = 2.0) -> float:
    """A ``beta`` with ``max d - beta delta^2 < 0``: ``factor * max d / delta^2``."""
    if delta <= 0:
        raise ConfigViolation("delta must be positive")
    return factor * pgeom.d_max_domain / delta**2


def holder_constants(pgeom: ParabolicGeometry, lam: float, beta: float, t0: float, delta: float, T: float | None = None) -> CarlemanConstants:
    """``sigma0``, ``sigma1`` and ``mu = sigma0 - sigma1`` for the local parabolic problem."""
    if delta <= 0 or t0 - delta < 0 or (T is not None and t0 + delta > T):
        raise ParameterConflict(
            f"time window ({t0 - delta:.6g}, {t0 + delta:.6g}) must lie in (0, T)", "time window inside (0, T)"
        )
    sigma0 = math.exp(lam * pgeom.d_min_omega0)
    # phi~ is largest at t = t0 on the unobserved boundary
    on_unobserved = math.exp(lam * pgeom.d_max_unobserved)
    at_early_slice = math.exp(lam * (pgeom.d_max_domain - beta * delta**2))
    sigma1 = max(on_unobserved, at_early_slice)
    if not sigma1 < sigma0:
        raise ParameterConflict(
            f"sigma1={sigma1:.6g} >= sigma0={sigma0:.6g}: need max(max d on unobserved boundary, "
            f"max d - beta delta^2) < min d on omega0 (increase beta)",
            "sigma1 < sigma0",
        )
    return CarlemanConstants(
        sigma0=sigma0, sigma1=sigma1, mu=sigma0 - sigma1, extras={"beta": beta, "lam": lam, "t0": t0, "delta": delta}
    )


def select_cauchy_exponent(d0t: float, d1t: float) -> int:
    """Smallest integer ``N > 1`` with ``N - 1 > (d1~^2 - d0~^2) / d0~^2``."""
    if d0t <= 0:
        raise ConditionViolation("min of d over closure(omega0) must be positive", "d > 0 on omega0")
    q = (d1t**2 - d0t**2) / d0t**2
    n = math.floor(q) + 2
    return max(n, 2)


@dataclass(frozen=True)
class CauchyParameters:
    N: int
    eps_t: float
    delta_t: float
    beta_lower: float
    beta_upper: float
    beta: float

    def as_dict(self) -> dict:
        return asdict(self)


def cauchy_parameters(pgeom: ParabolicGeometry, T: float, epsilon: float) -> CauchyParameters:
    """``N``, ``eps~ = eps/(N-1)``, ``delta~ = N eps~`` and the admissible ``beta`` interval.

    ``beta`` is the midpoint of
    ``((d1~^2 - d0~^2) / (delta~^2 - eps~^2), d0~^2 / eps~^2)``.
    """
    if not 0 < epsilon < T / 2.0:
        raise ConditionViolation(f"epsilon={epsilon} must lie in (0, T/2) with T={T}", "0 < epsilon < T/2")
    d0t, d1t = pgeom.d_min_omega0, pgeom.d_max_domain
    n = select_cauchy_exponent(d0t, d1t)
    eps_t = epsilon / (n - 1)
    delta_t = n * eps_t
    if not 2 * delta_t < T:
        raise ConditionViolation(
            f"delta~={delta_t:.6g}: the centre range (delta~, T - delta~) is empty for T={T}", "t0 range nonempty"
        )
    lo = (d1t**2 - d0t**2) / (delta_t**2 - eps_t**2)
    hi = d0t**2 / eps_t**2
    if not lo < hi:
        raise NoAdmissibleBeta(f"beta interval ({lo:.6g}, {hi:.6g}) is empty", "beta interval nonempty")
    return CauchyParameters(n, eps_t, delta_t, lo, hi, 0.5 * (lo + hi))


def cauchy_constants(pgeom: ParabolicGeometry, lam: float, beta: float, eps_t: float, delta_t: float) -> CarlemanConstants:
    d0t, d1t = pgeom.d_min_omega0, pgeom.d_max_domain
    mu1 = math.exp(lam * (d0t**2 - beta * eps_t**2))
    mu2 = max(1.0, math.exp(lam * (d1t**2 - beta * delta_t**2)))
    if not mu1 > mu2:
        raise ParameterConflict(f"mu1={mu1:.6g} <= mu2={mu2:.6g}: beta={beta:.6g} outside the admissible interval", "mu1 > mu2")
    return CarlemanConstants(
        mu0=mu1 - mu2, mu1=mu1, mu2=mu2, extras={"beta": beta, "lam": lam, "eps_t": eps_t, "delta_t": delta_t}
    )


def compute_constants(
    geom,
    params: WeightParams,
    T: float,
    delta: float | None = None,
    epsilon_t: float | None = None,
    scenario: str | None = None,
) -> CarlemanConstants:
    """Fill every constant applicable to the scenario.

    ``scenario`` is one of ``lipschitz``, ``observability`` (observation
    geometry) or ``holder``, ``cauchy`` (parabolic geometry).  When omitted it
    is inferred: observation geometry gives ``lipschitz``; parabolic geometry
    gives ``cauchy`` if ``epsilon_t`` is set, else ``holder``.
    """
    if scenario is None:
        if isinstance(geom, ObservationGeometry):
            scenario = "lipschitz"
        else:
            scenario = "cauchy" if epsilon_t is not None else "holder"
    lam, beta = params.lam, params.beta
    if scenario == "lipschitz":
        return lipschitz_constants(geom, lam, beta, T)
    if scenario == "observability":
        return observability_constants(geom, lam, beta, T, delta)
    if scenario == "holder":
        if delta is None:
            raise ConfigViolation("holder constants need delta")
        return holder_constants(geom, lam, beta, params.t0, delta, T)
    if scenario == "cauchy":
        if epsilon_t is None or delta is None:
            raise ConfigViolation("cauchy constants need epsilon_t and delta")
        return cauchy_constants(geom, lam, beta, epsilon_t, delta)
    raise ConfigViolation(f"unknown scenario {scenario!r}")
