import math

import numpy as np
import pytest
from sklearn.base import clone

from carlemanlab.exceptions import ConfigViolation, FitUnderdetermined, MaxIterationsExceeded
from carlemanlab.geometry import DomainSpec
from carlemanlab.operators import HyperbolicBoundary, add_noise
from carlemanlab.reconstruction import (
    InverseProblemSpec,
    SourceReconstructor,
    cgls,
    discrepancy_alpha,
    noise_scaling_study,
    reconstruct,
)
from carlemanlab.analysis import spatial_norm

PI = math.pi
R1 = lambda p, t: 1 + t + 0 * p[..., 0]


@pytest.fixture(scope="module")
def op():
    d = DomainSpec.interval(0, 1, 101)
    return HyperbolicBoundary(d, gamma=[d.face("x1_hi")], R=R1, T=1.15 * math.sqrt(3))


def test_spec_validation():
    with pytest.raises(ConfigViolation):
        InverseProblemSpec(scenario="elliptic")
    with pytest.raises(ConfigViolation):
        InverseProblemSpec(alpha=-1.0)
    with pytest.raises(ConfigViolation):
        InverseProblemSpec(tol=0.0)


def test_zero_data_gives_zero(op):
    res = cgls(op, np.zeros(op.n_data), 1e-3)
    assert not np.any(res.f) and res.converged


def test_noiseless_recovery(op):
    f = np.sin(PI * op.domain.points()[..., 0])
    data = op.forward(op.from_grid(f))
    res = cgls(op, data, 1e-8, 500, 1e-10)
    err = spatial_norm(op.domain, op.to_grid(res.f) - f) / spatial_norm(op.domain, f)
    assert err <= 1e-2
    assert res.monotone()


def test_linearity_of_solve(op, rng):
    data = op.forward(rng.standard_normal(op.n_unknown))
    a = cgls(op, data, 1e-4, 300, 1e-12).f
    b = cgls(op, 2 * data, 1e-4, 300, 1e-12).f
    assert np.allclose(b, 2 * a, rtol=1e-8, atol=1e-10 * np.max(np.abs(a)))


def test_max_iterations_flagged(op, rng):
    data = op.forward(rng.standard_normal(op.n_unknown))
    res = cgls(op, data, 1e-10, 3, 1e-14)
    assert not res.converged and res.iterations == 3
    with pytest.raises(MaxIterationsExceeded) as info:
        cgls(op, data, 1e-10, 3, 1e-14, raise_on_max_iter=True)
    assert info.value.result.iterations == 3


def test_discrepancy_hits_target(op, rng):
    f = np.sin(PI * op.domain.points()[..., 0])
    clean = op.forward(op.from_grid(f))
    noisy = add_noise(op, clean, 0.01, rng)
    nn = op.data_norm(noisy - clean)
    alpha, res = discrepancy_alpha(op, noisy, nn, tau=1.1)
    assert alpha > 0
    assert res.data_residual[-1] == pytest.approx(1.1 * nn, rel=2e-2)


def test_reconstruct_dispatch(op):
    data = op.forward(np.ones(op.n_unknown))
    with pytest.raises(ConfigViolation):
        reconstruct(op, data, InverseProblemSpec(alpha_rule="discrepancy"))
    with pytest.raises(ConfigViolation):
        reconstruct(op, data, InverseProblemSpec(alpha=0.0, noise_level=0.1))


def test_estimator_api(op):
    f = np.sin(PI * op.domain.points()[..., 0])
    data = op.forward(op.from_grid(f))
    est = SourceReconstructor(op, alpha=1e-8)
    assert clone(est).get_params()["alpha"] == 1e-8
    est.fit(data)
    assert est.source_.shape == f.shape and est.n_iter_ > 0
    assert est.score(data) > 0.999999
    with pytest.raises(ConfigViolation):
        SourceReconstructor(op).fit(data[:-1])


def test_noise_study_needs_levels(op):
    f = np.sin(PI * op.domain.points()[..., 0])
    with pytest.raises(FitUnderdetermined):
        noise_scaling_study(op, f, levels=(1e-3, 1e-2, 1e-1))
    with pytest.raises(FitUnderdetermined):
        noise_scaling_study(op, f, levels=(1e-3, 2e-3, 5e-3, 9e-3))


def test_noise_study_floor_row(op):
    f = np.sin(PI * op.domain.points()[..., 0])
    rep = noise_scaling_study(op, f, seed=3)
    assert rep.rows[0]["noise_level"] == 0.0 and rep.rows[0]["consistency"]
    assert rep.summary["fit"]["n"] == 4
    assert rep.summary["monotone_ok"]
