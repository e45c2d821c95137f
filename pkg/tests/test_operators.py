import math

import numpy as np
import pytest

from carlemanlab.exceptions import GridMismatch
from carlemanlab.geometry import DomainSpec
from carlemanlab.operators import HyperbolicBoundary, ParabolicCauchy, ParabolicLocal, add_noise
from carlemanlab.solvers import Coefficients

PI = math.pi
R_VAR = lambda p, t: 1 + t + 0.3 * p[..., 0]


def build(kind, dom, mode="auto"):
    co = Coefficients.constant(dom, b=0.4, c=-0.7)
    g = [dom.face("x1_hi")] if dom.ndim == 1 else [dom.face("x1_hi"), dom.face("x2_lo")]
    if kind == "hyp":
        return HyperbolicBoundary(dom, adjoint_mode=mode, gamma=g, R=R_VAR, coeffs=co, T=1.3)
    if kind == "loc":
        return ParabolicLocal(dom, adjoint_mode=mode, gamma=g, R=R_VAR, coeffs=co, T=0.5, dt=0.01, t0=0.25)
    return ParabolicCauchy(dom, adjoint_mode=mode, gamma=g, coeffs=co, T=0.5, dt=0.01)


def dot_gap(op, rng, pairs=20):
    worst = 0.0
    for _ in range(pairs):
        f = rng.standard_normal(op.n_unknown)
        h = rng.standard_normal(op.n_data)
        lhs = op.data_inner(op.forward(f), h)
        rhs = op.space_inner(f, op.adjoint(h))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    return worst


@pytest.mark.parametrize("kind", ["hyp", "loc", "cauchy"])
@pytest.mark.parametrize("mode", ["assembled", "matrix_free"])
def test_dot_product_1d(kind, mode, rng):
    assert dot_gap(build(kind, DomainSpec.interval(0, 1, 41), mode), rng) <= 1e-10


@pytest.mark.parametrize("kind", ["hyp", "loc", "cauchy"])
def test_dot_product_2d_matrix_free(kind, rng):
    op = build(kind, DomainSpec.rectangle(0, 1, 0, 1, 15))
    assert not op.assembled
    assert dot_gap(op, rng, pairs=5) <= 1e-10


def test_assembly_rule():
    assert build("hyp", DomainSpec.interval(0, 1, 201)).assembled
    assert not build("hyp", DomainSpec.interval(0, 1, 601)).assembled


@pytest.mark.parametrize("kind", ["hyp", "loc", "cauchy"])
def test_zero_maps(kind):
    op = build(kind, DomainSpec.interval(0, 1, 31))
    assert not np.any(op.forward(np.zeros(op.n_unknown)))
    assert not np.any(op.adjoint(np.zeros(op.n_data)))


@pytest.mark.parametrize("kind", ["hyp", "loc", "cauchy"])
def test_linearity(kind, rng):
    op = build(kind, DomainSpec.interval(0, 1, 31), "matrix_free")
    f1, f2 = rng.standard_normal((2, op.n_unknown))
    a = op.forward(f1 + f2)
    assert np.allclose(a, op.forward(f1) + op.forward(f2), rtol=0, atol=1e-12 * np.max(np.abs(a)))
    h1, h2 = rng.standard_normal((2, op.n_data))
    b = op.adjoint(h1 + h2)
    assert np.allclose(b, op.adjoint(h1) + op.adjoint(h2), rtol=0, atol=1e-12 * np.max(np.abs(b)))


def test_batched_apply_matches_columns(rng):
    op = build("hyp", DomainSpec.interval(0, 1, 31), "matrix_free")
    F = rng.standard_normal((op.n_unknown, 3))
    out = op.apply(F)
    for j in range(3):
        assert np.allclose(out[:, j], op.apply(F[:, j]), atol=1e-13)


def hyperbolic_trace_error(nx):
    d = DomainSpec.interval(0, 1, nx)
    op = HyperbolicBoundary(d, gamma=[d.face("x1_hi")], R=lambda p, t: np.ones(p.shape[:-1]), T=1.0, dt=0.5 * d.dx)
    f = np.sin(PI * d.points()[..., 0])
    data = op.forward(op.from_grid(f))
    # u = sin(pi x)(1 - cos(pi t))/pi^2, so d_t d_nu u(1, t) = -sin(pi t)
    return float(np.max(np.abs(data + np.sin(PI * op.times))))


def test_hyperbolic_trace_oracle():
    e = [hyperbolic_trace_error(n) for n in (51, 101, 201)]
    assert e[-1] < 1e-3
    assert min(math.log2(a / b) for a, b in zip(e, e[1:])) > 1.8


def test_parabolic_local_t0_on_grid():
    d = DomainSpec.interval(0, 1, 21)
    with pytest.raises(GridMismatch):
        ParabolicLocal(d, gamma=[d.face("x1_hi")], R=R_VAR, T=0.5, dt=0.01, t0=0.255)


def test_noise_level_in_data_norm(rng):
    op = build("hyp", DomainSpec.interval(0, 1, 31))
    data = op.forward(rng.standard_normal(op.n_unknown))
    noisy = add_noise(op, data, 0.01, rng)
    assert op.data_norm(noisy - data) == pytest.approx(0.01 * op.data_norm(data), rel=1e-12)
    assert np.array_equal(add_noise(op, data, 0.0, rng), data)
