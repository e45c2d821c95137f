import math

import numpy as np
import pytest

from carlemanlab.exceptions import (
    NoValidExponent,
    OmegaOutsideExtension,
    TimeBelowCritical,
    X0InsideDomain,
)
from carlemanlab.geometry import (
    DomainSpec,
    check_pseudoconvexity,
    compute_gamma,
    construct_d,
    critical_time_hyperbolic,
    critical_time_observability,
    select_beta_hyperbolic,
)


def test_gamma_left_observer(unit_interval):
    g = compute_gamma(unit_interval, (-1.0,))
    assert g.gamma_names == ["x1_hi"]
    assert (g.d0, g.d1) == (1.0, 2.0)


def test_gamma_right_observer(unit_interval):
    assert compute_gamma(unit_interval, (2.0,)).gamma_names == ["x1_lo"]


def test_gamma_square_excludes_near_face():
    sq = DomainSpec.rectangle(0, 1, 0, 1, 21)
    g = compute_gamma(sq, (-1.0, 0.5))
    assert sorted(g.gamma_names) == ["x1_hi", "x2_hi", "x2_lo"]


def test_observer_inside_rejected(unit_interval):
    with pytest.raises(X0InsideDomain):
        compute_gamma(unit_interval, (0.5,))


@pytest.mark.parametrize(
    "d0,d1,crit,obs",
    [(1.0, 2.0, 1.7320508, 3.4641016), (10.0, 11.0, 4.5825757, 9.1651514)],
)
def test_critical_times(d0, d1, crit, obs):
    g = compute_gamma(DomainSpec.interval(0, 1, 11), (-d0,))
    assert g.d1 == pytest.approx(d1)
    assert critical_time_hyperbolic(g) == pytest.approx(crit, abs=1e-7)
    assert critical_time_observability(g) == pytest.approx(obs, abs=1e-7)


def test_select_beta_midpoint(observer):
    assert select_beta_hyperbolic(observer, 2.0) == pytest.approx(0.875, abs=1e-15)
    assert select_beta_hyperbolic(observer, 10.0) == pytest.approx(0.515, abs=1e-15)


def test_select_beta_at_critical_time_fails(observer):
    with pytest.raises(TimeBelowCritical):
        select_beta_hyperbolic(observer, math.sqrt(3.0))


def test_distances_bound_every_node():
    sq = DomainSpec.rectangle(0, 2, 0, 1, 31)
    g = compute_gamma(sq, (-0.5, 3.0))
    r = np.linalg.norm(sq.points() - np.array(g.x0), axis=-1)
    assert g.d0 <= r.min() + 1e-14 and r.max() <= g.d1 + 1e-14


def test_construct_d_example():
    d = DomainSpec.interval(0, 1, 41)
    pg = construct_d(d, ["x1_hi"], eta=0.5, omega_bounds=(1.1, 1.4), exponent=4)
    assert pg.maximizer[0] == pytest.approx(1.2)
    assert float(pg.d(1.2)) == pytest.approx(0.62208, abs=1e-12)
    assert float(pg.d(0.0)) == 0.0 and float(pg.d(1.5)) == 0.0
    x = np.linspace(0, 1.5, 301)[1:-1]
    assert np.all(pg.d(x) > 0)


def test_construct_d_rejects_bad_exponent():
    d = DomainSpec.interval(0, 1, 41)
    with pytest.raises(NoValidExponent):
        construct_d(d, ["x1_hi"], eta=0.5, omega_bounds=(1.1, 1.4), exponent=2)


def test_construct_d_rejects_omega_outside_extension():
    d = DomainSpec.interval(0, 1, 41)
    with pytest.raises(OmegaOutsideExtension):
        construct_d(d, ["x1_hi"], eta=0.5, omega_bounds=(0.8, 1.2))


@pytest.mark.parametrize("faces", [["x1_hi"], ["x1_lo"], ["x1_lo", "x1_hi"]])
def test_pseudoconvexity_interval(faces):
    pg = construct_d(DomainSpec.interval(0, 1, 81), faces)
    assert all(check_pseudoconvexity(pg).values())


@pytest.mark.parametrize("face", ["x1_lo", "x1_hi", "x2_lo", "x2_hi"])
def test_pseudoconvexity_square(face):
    pg = construct_d(DomainSpec.rectangle(0, 1, 0, 1, 31), [face])
    assert all(check_pseudoconvexity(pg).values())


def test_d_extremes_are_exact(heat_geometry):
    pg = heat_geometry
    x = pg.domain.points()[..., 0]
    inside = (x >= 0.5) & (x <= 0.9)
    assert pg.d_min_omega0 == pytest.approx(pg.d(x[inside]).min(), rel=1e-12)
    assert pg.d_max_domain == pytest.approx(pg.d(x).max(), rel=1e-12)
    assert pg.d_max_unobserved == 0.0
