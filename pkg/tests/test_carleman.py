import math

import numpy as np
import pytest

from carlemanlab.carleman import (
    absorption_diagnostics_hyperbolic,
    absorption_diagnostics_parabolic,
    check_lemma1,
    check_lemma2,
    manufactured_suite,
)
from carlemanlab.exceptions import BoundaryViolation, ConfigViolation, GridMismatch, ResidualTooLarge
from carlemanlab.geometry import DomainSpec, compute_gamma, construct_d, select_beta_hyperbolic
from carlemanlab.solvers import SourceSpec, SpaceTimeField
from carlemanlab.weights import WeightParams, select_beta_parabolic

T_HYP = 1.15 * math.sqrt(3.0)
SUITE = {m.name: m for m in manufactured_suite()}


@pytest.fixture(scope="module")
def dom():
    return DomainSpec.interval(0, 1, 101)


@pytest.fixture(scope="module")
def geom(dom):
    return compute_gamma(dom, (-1.0,))


@pytest.fixture(scope="module")
def pgeom(dom):
    return construct_d(dom, ["x1_hi"])


def hyp_params(geom, lam=0.5):
    return WeightParams(lam=lam, beta=select_beta_hyperbolic(geom, T_HYP), x0=geom.x0)


def par_params(pg, lam=0.5):
    return WeightParams(lam=lam, beta=select_beta_parabolic(pg, 0.25), t0=0.5, kind="parabolic", pgeom=pg)


def hyp_sample(name, dom, nt=101):
    return SUITE[name].sample(dom, np.linspace(-T_HYP, T_HYP, nt))


def par_sample(name, dom, nt=101):
    return SUITE[name].sample(dom, np.linspace(0.25, 0.75, nt))


def test_suite_has_six_fields():
    kinds = sorted(m.kind for m in SUITE.values())
    assert kinds == ["hyperbolic"] * 3 + ["parabolic"] * 3


def test_zero_field_gives_zero_ratio(dom, geom):
    v, F, co = hyp_sample("h_eigen", dom)
    zero = SpaceTimeField(0 * v.values, v.t, dom)
    rep = check_lemma1(zero, zero, geom, hyp_params(geom), co)
    assert all(r == 0.0 for r in rep.ratio)
    assert all(v == -math.inf for v in rep.log_lhs)


def test_eigen_field_bounded(dom, geom):
    v, F, co = hyp_sample("h_eigen", dom)
    rep = check_lemma1(v, F, geom, hyp_params(geom), co)
    assert rep.ratio[-1] <= 10 * rep.ratio[0]
    assert rep.bounded()


def test_report_columns(dom, geom):
    v, F, co = hyp_sample("h_mixed", dom)
    rows = check_lemma1(v, F, geom, hyp_params(geom), co).rows()
    assert len(rows) == 16
    assert list(rows[0]) == ["s", "log_lhs", "log_rhs_source", "log_rhs_boundary", "log_rhs_cap_T", "log_rhs_cap_minus_T", "ratio"]


@pytest.mark.parametrize("name", ["h_eigen", "h_poly"])
def test_lemma1_scale_invariant(dom, geom, name):
    v, F, co = hyp_sample(name, dom)
    a = check_lemma1(v, F, geom, hyp_params(geom), co).ratio
    b = check_lemma1(v.scaled(2.0), F.scaled(2.0), geom, hyp_params(geom), co).ratio
    assert np.allclose(a, b, rtol=1e-12)


def test_lemma2_scale_invariant(dom, pgeom):
    v, F, co = par_sample("p_mixed", dom)
    I = (0.25, 0.75)
    a = check_lemma2(v, F, pgeom, par_params(pgeom), I, co).ratio
    b = check_lemma2(v.scaled(-3.0), F.scaled(-3.0), pgeom, par_params(pgeom), I, co).ratio
    assert np.allclose(a, b, rtol=1e-12)


def test_lemma1_requires_hyperbolic_weight(dom, geom, pgeom):
    v, F, co = hyp_sample("h_eigen", dom)
    with pytest.raises(ConfigViolation):
        check_lemma1(v, F, geom, par_params(pgeom), co)


def test_lemma1_boundary_violation(dom, geom):
    v, F, co = hyp_sample("h_eigen", dom)
    bad = SpaceTimeField(v.values + 1.0, v.t, dom)
    with pytest.raises(BoundaryViolation):
        check_lemma1(bad, F, geom, hyp_params(geom), co)


def test_lemma1_residual_checked(dom, geom):
    v, F, co = hyp_sample("h_mixed", dom, nt=401)
    with pytest.raises(ResidualTooLarge):
        check_lemma1(v, F.scaled(3.0), geom, hyp_params(geom), co)


def test_lemma2_interval_must_match(dom, pgeom):
    v, F, co = par_sample("p_eigen", dom)
    with pytest.raises(GridMismatch):
        check_lemma2(v, F, pgeom, par_params(pgeom), (0.2, 0.8), co)


def sine_source(dom, R, dR):
    return SourceSpec(R=R, f=np.sin(math.pi * dom.points()[..., 0]), r0=1.0, dR=dR)


def test_absorption_zero_without_time_dependence(dom, geom):
    src = sine_source(dom, lambda p, t: np.ones(p.shape[:-1]), lambda p, t: np.zeros(p.shape[:-1]))
    a = absorption_diagnostics_hyperbolic(src, geom, hyp_params(geom), T_HYP)
    assert all(v == -math.inf for v in a.log_J) and all(r == 0 for r in a.ratio)


def test_absorption_hyperbolic(dom, geom):
    src = sine_source(dom, lambda p, t: (1 + t) * np.ones(p.shape[:-1]), lambda p, t: np.ones(p.shape[:-1]))
    a = absorption_diagnostics_hyperbolic(src, geom, hyp_params(geom), T_HYP)
    r = np.array(a.ratio)
    assert np.all(np.diff(r) < 0) and r[-1] < 0.1
    s = np.array(a.s)
    dec = np.array(a.decay)[(s >= 8) & (s <= 64)]
    assert np.all(np.diff(dec) < 0)


def test_absorption_parabolic_and_scaling(dom, pgeom):
    x = dom.points()[..., 0]
    f = ((x >= 0.5) & (x <= 0.9)).astype(float)
    src = SourceSpec(R=lambda p, t: (1 + t) * np.ones(p.shape[:-1]), f=f, r0=1.0, dR=lambda p, t: np.ones(p.shape[:-1]))
    a = absorption_diagnostics_parabolic(src, pgeom, par_params(pgeom), (0.25, 0.75))
    r = np.array(a.ratio)
    assert np.all(np.diff(r) < 0) and r[-1] < 0.1
    b = absorption_diagnostics_parabolic(src.with_f(2 * f), pgeom, par_params(pgeom), (0.25, 0.75))
    assert np.allclose(a.ratio, b.ratio, rtol=1e-12)


def test_absorption_below_critical_time(dom, geom):
    src = sine_source(dom, lambda p, t: (1 + t) * np.ones(p.shape[:-1]), lambda p, t: np.ones(p.shape[:-1]))
    with pytest.raises(ConfigViolation):
        absorption_diagnostics_hyperbolic(src, geom, hyp_params(geom).replace(beta=0.5), 1.5)
