import math

import numpy as np
import pytest

from carlemanlab.exceptions import ConditionViolation, FitUnderdetermined
from carlemanlab.geometry import DomainSpec, compute_gamma
from carlemanlab.harness import (
    EnsembleSpec,
    cauchy_stability_experiment,
    fit_power_law,
    holder_experiment,
    lipschitz_experiment,
    observability_experiment,
)
from carlemanlab.solvers import SourceSpec

SQRT3 = math.sqrt(3.0)
R_LIN = SourceSpec(R=lambda p, t: (1 + t) * np.ones(p.shape[:-1]), f=None, r0=1.0)


def test_ensemble_grid_independent():
    e = EnsembleSpec(n_samples=3, seed=7)
    a = e.sample(2, DomainSpec.interval(0, 1, 101))
    b = e.sample(2, DomainSpec.interval(0, 1, 201))
    assert np.allclose(a, b[::2], atol=1e-14)
    assert a[0] == 0.0 and a[-1] == pytest.approx(0.0, abs=1e-13)


def test_ensemble_independent_of_size():
    d = DomainSpec.interval(0, 1, 51)
    assert np.array_equal(EnsembleSpec(2, seed=1).sample(1, d), EnsembleSpec(9, seed=1).sample(1, d))


def test_ensemble_spectrum():
    c = np.stack([EnsembleSpec(1, seed=s).coefficients(0, 1) for s in range(4000)])
    k = np.arange(1, 9)
    assert np.allclose(c.var(axis=0) * k**2, 1.0, atol=0.1)


def test_ensemble_needs_samples():
    with pytest.raises(ConditionViolation):
        EnsembleSpec(n_samples=0)


def test_fit_power_law():
    x = np.array([1e-3, 1e-2, 1e-1, 1.0])
    fit = fit_power_law(x, 3 * x**0.7)
    assert fit["slope"] == pytest.approx(0.7) and fit["r2"] == pytest.approx(1.0)
    with pytest.raises(FitUnderdetermined):
        fit_power_law(x[:3], x[:3])


@pytest.fixture(scope="module")
def geom():
    return compute_gamma(DomainSpec.interval(0, 1, 101), (-1.0,))


def test_lipschitz_small(geom):
    rep = lipschitz_experiment(EnsembleSpec(6, seed=1), geom, R_LIN, 1.15 * SQRT3, grid_ladder=(51, 101, 201))
    s = rep.summary
    assert s["consistency_ok"] and s["finite"] and s["refinement_ok"]
    zero = [r for r in rep.rows if r["sample"] == "zero"]
    assert len(zero) == 3 and all(r["data_norm"] == 0.0 for r in zero)
    assert rep.constants["c0"] > 0


def test_lipschitz_scaling_invariance(geom):
    class Doubled(EnsembleSpec):
        def sample(self, i, domain, stream=0):
            return 2.0 * super().sample(i, domain, stream)

    a = lipschitz_experiment(EnsembleSpec(3, seed=4), geom, R_LIN, 2.0, grid_ladder=(51,))
    b = lipschitz_experiment(Doubled(3, seed=4), geom, R_LIN, 2.0, grid_ladder=(51,))
    assert np.allclose(a.ratios(), b.ratios(), rtol=1e-10)
    da = [r["data_norm"] for r in a.rows if not r["consistency"]]
    db = [r["data_norm"] for r in b.rows if not r["consistency"]]
    assert np.allclose(db, 2 * np.array(da), rtol=1e-12)


def test_lipschitz_time_gate(geom):
    with pytest.raises(ConditionViolation):
        lipschitz_experiment(EnsembleSpec(2), geom, R_LIN, 1.0, grid_ladder=(51,))
    rep = lipschitz_experiment(EnsembleSpec(2), geom, R_LIN, 1.0, grid_ladder=(51,), exploratory=True)
    assert rep.exploratory and rep.constants == {}


def test_observability_small(geom):
    rep = observability_experiment(EnsembleSpec(4, seed=2), geom, 4.0, grid_ladder=(51, 101))
    assert rep.summary["consistency_ok"] and rep.summary["finite"]
    assert rep.constants["kappa2_gt_kappa1"]
    for v in rep.summary["eigenmode_ratio"].values():
        assert v == pytest.approx(0.5, abs=0.01)


def test_observability_time_gate(geom):
    with pytest.raises(ConditionViolation):
        observability_experiment(EnsembleSpec(2), geom, 3.0, grid_ladder=(51,))


def test_holder_small(heat_geometry):
    rep = holder_experiment(EnsembleSpec(2, seed=3), heat_geometry, R_LIN, 0.5, 0.25, 1.0, 0.02, 10.0)
    s = rep.summary
    assert s["theta_ok"] and s["r2_min"] >= 0.95 and 0 < s["theta_min"] <= s["theta_max"] <= 1 + 1e-12
    outside = [r for r in rep.rows if r["consistency"]]
    assert outside and outside[0]["target_norm"] == 0.0 and s["consistency_ok"]
    assert 0 < s["theta_lower_bound_derived"] < 1
    assert {r["case"] for r in rep.rows} <= {1, 2}


def test_cauchy_small(heat_geometry):
    rep = cauchy_stability_experiment(EnsembleSpec(2, seed=4), heat_geometry, 1.0, 0.2, 0.02, 10.0)
    s = rep.summary
    assert s["theta_ok"] and s["consistency_ok"]
    c = rep.constants
    assert c["beta_lower"] < c["beta"] < c["beta_upper"]
    assert c["mu0"] > 0 and c["N"] >= 2
