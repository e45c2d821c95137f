import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from carlemanlab.exceptions import TimeBelowCritical
from carlemanlab.geometry import DomainSpec, compute_gamma, critical_time_hyperbolic, select_beta_hyperbolic
from carlemanlab.operators import HyperbolicBoundary, ParabolicLocal
from carlemanlab.solvers import Coefficients
from carlemanlab.weights import WeightParams, eval_phi, log_weight

SQUARE = DomainSpec.rectangle(0, 1, 0, 1, 5)
coord = st.floats(-3.0, 4.0, allow_nan=False)


def _outside_square(p):
    return not (-1e-9 <= p[0] <= 1 + 1e-9 and -1e-9 <= p[1] <= 1 + 1e-9)


@given(st.tuples(coord, coord).filter(_outside_square))
def test_gamma_nonempty_and_distances(x0):
    g = compute_gamma(SQUARE, x0)
    assert g.gamma
    assert 0 < g.d0 < g.d1
    # each face on gamma sees x0 from behind at some admissible point
    for face, par in zip(g.gamma, g.gamma_params):
        lo, hi = par
        assert 0.0 <= lo <= hi <= 1.0


@given(st.floats(-5.0, -0.01), st.floats(0.1, 20.0))
def test_beta_satisfies_time_condition(x0, T):
    g = compute_gamma(DomainSpec.interval(0, 1, 5), (x0,))
    crit = critical_time_hyperbolic(g)
    try:
        beta = select_beta_hyperbolic(g, T)
    except TimeBelowCritical:
        assert T <= crit * (1 + 1e-12)
        return
    assert 0 < beta < 1 and T * math.sqrt(beta) > crit


@given(st.floats(0.1, 3.0), st.floats(0.1, 0.99), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(0.0, 1.0))
def test_phi_time_shift(lam, beta, t0, t, x):
    centred = WeightParams(lam=lam, beta=beta, x0=(-1.0,), t0=t0)
    plain = WeightParams(lam=lam, beta=beta, x0=(-1.0,))
    a = float(eval_phi(np.array([x]), t, centred))
    b = float(eval_phi(np.array([x]), t - t0, plain))
    assert math.isclose(a, b, rel_tol=1e-12)


@given(st.floats(0.1, 3.0), st.floats(1.0, 64.0), st.floats(-1.0, 1.0))
def test_log_weight_linear_in_s(lam, s, t):
    p = WeightParams(lam=lam, beta=0.5, x0=(-1.0,))
    pts = np.linspace(0, 1, 7)[:, None]
    a = log_weight(pts, t, s, p)
    b = log_weight(pts, t, 2 * s, p)
    assert np.allclose(b, 2 * a, rtol=1e-12, atol=0)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.floats(-1.0, 1.0), st.floats(-2.0, 2.0), st.integers(0, 2**32 - 1), st.booleans())
def test_adjoint_random_coefficients(b, c, seed, hyperbolic):
    dom = DomainSpec.interval(0, 1, 21)
    co = Coefficients.constant(dom, b=b, c=c)
    g = [dom.face("x1_hi")]
    R = lambda p, t: 1 + t * p[..., 0]
    if hyperbolic:
        op = HyperbolicBoundary(dom, gamma=g, R=R, coeffs=co, T=1.0)
    else:
        op = ParabolicLocal(dom, gamma=g, R=R, coeffs=co, T=0.2, dt=0.02, t0=0.1)
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal(op.n_unknown), rng.standard_normal(op.n_data)
    lhs, rhs = op.data_inner(op.forward(f), h), op.space_inner(f, op.adjoint(h))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))


@settings(max_examples=20, deadline=None)
@given(st.floats(-10.0, 10.0).filter(lambda a: abs(a) > 1e-6), st.integers(0, 1000))
def test_forward_homogeneous(a, seed):
    dom = DomainSpec.interval(0, 1, 21)
    op = HyperbolicBoundary(dom, gamma=[dom.face("x1_hi")], R=lambda p, t: 1 + t, T=1.0)
    f = np.random.default_rng(seed).standard_normal(op.n_unknown)
    assert np.allclose(op.forward(a * f), a * op.forward(f), rtol=1e-12, atol=1e-12 * abs(a))
