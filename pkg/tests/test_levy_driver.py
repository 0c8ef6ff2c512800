import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from levy_loewner.levy_driver import (
    DriverParams,
    IncrementSampler,
    LevyMeasure,
    NonIntegrableMeasure,
    ahlfors_check,
    jump_variance,
    load_driver_json,
    sample_driver,
    tune_cutoff,
)


def stable_variance_formula(alpha, eps, scale=1.0):
    return 2 * scale * eps ** (2 - alpha) / (2 - alpha)


def test_jump_variance_stable_alpha1():
    assert jump_variance(LevyMeasure.stable(1.0), 0.5) == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("alpha", [0.3, 0.8, 1.2, 1.5, 1.9])
@pytest.mark.parametrize("eps", [0.01, 0.25, 1.0])
def test_jump_variance_matches_power_formula(alpha, eps):
    assert jump_variance(LevyMeasure.stable(alpha, 0.7), eps) == pytest.approx(
        stable_variance_formula(alpha, eps, 0.7), rel=1e-10)


def test_jump_variance_atoms_and_zero():
    assert jump_variance(LevyMeasure.compound_poisson([(2.0, 3.0)]), 1.0) == 0.0
    assert jump_variance(LevyMeasure.zero(), 1.0) == 0.0
    nu = LevyMeasure.compound_poisson([(0.1, 2.0), (-0.3, 1.0), (0.9, 5.0)])
    assert jump_variance(nu, 0.5) == pytest.approx(2 * 0.01 + 0.09)


def test_jump_variance_density_against_independent_quadrature():
    dens = lambda v: np.exp(-np.abs(v)) / np.abs(v) ** 1.4  # noqa: E731
    nu = LevyMeasure.from_density(dens)
    ref = 2 * integrate.quad(lambda v: v ** 0.6 * math.exp(-v), 0, 0.3, epsabs=1e-14, epsrel=1e-12)[0]
    assert jump_variance(nu, 0.3) == pytest.approx(ref, rel=1e-9)


def test_density_not_integrable_is_rejected():
    nu = LevyMeasure.from_density(lambda v: np.abs(v) ** -3.5)
    with pytest.raises(NonIntegrableMeasure):
        jump_variance(nu, 0.5)


def test_no_atom_at_origin():
    with pytest.raises(ValueError):
        LevyMeasure.compound_poisson([(0.0, 1.0)])


@given(st.floats(0.1, 1.9), st.floats(1e-3, 0.99), st.floats(1e-3, 0.99))
def test_jump_variance_monotone(alpha, e1, e2):
    nu = LevyMeasure.stable(alpha)
    lo, hi = sorted((e1, e2))
    assert jump_variance(nu, lo) <= jump_variance(nu, hi) * (1 + 1e-12)


def test_tune_cutoff_examples():
    res = tune_cutoff(LevyMeasure.stable(1.0), 1.0)
    assert res.eps == pytest.approx(0.5, abs=1e-8) and not res.saturated
    res = tune_cutoff(LevyMeasure.compound_poisson([(2.0, 3.0)]), 0.1)
    assert res.eps == 1.0 and res.saturated
    nu = LevyMeasure.stable(1.5)
    lam = jump_variance(nu, 0.25)
    res = tune_cutoff(nu, lam)
    assert res.eps == pytest.approx(0.25, abs=1e-8)
    assert jump_variance(nu, res.eps) < lam


@given(st.floats(0.2, 1.8), st.floats(1e-3, 0.5))
def test_tune_cutoff_inverts_power_law(alpha, lam):
    res = tune_cutoff(LevyMeasure.stable(alpha), lam)
    if res.saturated:
        return
    closed = ((2 - alpha) / 2) ** (1 / (2 - alpha)) * lam ** (1 / (2 - alpha))
    assert res.eps == pytest.approx(closed, rel=2e-9)


def test_ahlfors_examples():
    cert = ahlfors_check(LevyMeasure.stable(1.5), 0.25, 0.5, 0.5)
    assert cert.verified and math.isfinite(cert.worst_ratio)
    cert = ahlfors_check(LevyMeasure.compound_poisson([(0.01, 1.0)]), 0.25, 0.5, 0.5)
    assert not cert.verified
    cert = ahlfors_check(LevyMeasure.zero(), 0.25, 0.5, 0.5)
    assert cert.verified and cert.worst_ratio == 0.0


def test_ahlfors_stable_analytic_constant():
    # mu((-rho, rho)) = 2 scale rho^(2-a)/(2-a) is the worst ball; with alpha_nu = 1 and
    # rho <= eps_nu the ratio is bounded by 2 scale eps_nu^(1-a) for a < 1
    a, eps = 0.5, 0.45
    c = 2 * eps ** (1 - a)
    cert = ahlfors_check(LevyMeasure.stable(a), eps, 1.0, 0.9, c_nu=c)
    assert cert.verified


def test_sample_driver_trivial_paths():
    p = sample_driver(DriverParams(seed=0), 1.0, 0.01)
    assert np.all(p.values == 0)
    p = sample_driver(DriverParams(a=1.0, seed=0), 2.0, 0.01)
    assert p.values[-1] == pytest.approx(2.0)
    assert p.values[0] == 0.0


def test_sample_driver_jumps_on_grid():
    nu = LevyMeasure.stable(1.2, 0.5)
    p = sample_driver(DriverParams(kappa=1.0, nu=nu, epsilon=0.5, delta_sim=0.05, seed=3), 1.0, 0.01)
    assert np.all(np.diff(p.times) > 0)
    for t, s in p.jumps:
        i = int(np.searchsorted(p.times, t))
        assert p.times[i] == t
        assert p.values[i] - p.left_values[i] == pytest.approx(s, abs=1e-12)
        assert abs(s) > 0.05
    assert p.sup_abs == pytest.approx(np.max(np.abs(np.concatenate([p.values, p.left_values]))))


def test_brownian_moments():
    d = DriverParams(kappa=1.0, seed=5)
    samp = IncrementSampler(d, 1.0)
    w = samp.draw(10_000)
    assert abs(w.mean()) < 3 / 100
    assert w.var(ddof=1) == pytest.approx(1.0, rel=0.05)


def test_compensated_small_jump_variance():
    nu = LevyMeasure.stable(1.5, 1.0)
    d = DriverParams(nu=nu, epsilon=0.5, delta_sim=0.01, gaussian_remainder=False, seed=9)
    t, n = 0.5, 20_000
    w = IncrementSampler(d, t, micro_only=True).draw(n)
    target = t * nu.variance_between(0.01, 0.5)
    # standard error of the sample variance from the fourth moment
    m4 = t * 2 * (0.5 ** 2.5 - 0.01 ** 2.5) / 2.5 + 3 * target ** 2
    se = math.sqrt((m4 - target ** 2) / n)
    assert abs(w.var(ddof=1) - target) < 3 * se
    assert abs(w.mean()) < 3 * math.sqrt(target / n)


def test_stable_jump_sizes_follow_truncated_tail():
    nu = LevyMeasure.stable(0.8)
    rng = np.random.default_rng(1)
    x = np.abs(nu.sample_jumps(rng, 5000, 0.1, 1.0))
    cdf = lambda v: (0.1 ** -0.8 - v ** -0.8) / (0.1 ** -0.8 - 1.0)  # noqa: E731
    assert stats.kstest(x, cdf).pvalue > 1e-3


def test_driver_json_round_trip(tmp_path):
    d = DriverParams(a=0.5, kappa=2.0, nu=LevyMeasure.stable(1.2, 0.3), epsilon=0.2, delta_sim=0.02, seed=4)
    path = tmp_path / "d.json"
    path.write_text(json.dumps(d.to_json()))
    assert load_driver_json(path) == d


def test_driver_csv(tmp_path):
    nu = LevyMeasure.compound_poisson([(0.7, 4.0)])
    p = sample_driver(DriverParams(nu=nu, seed=2), 1.0, 0.1)
    p.to_csv(tmp_path / "w.csv")
    rows = np.genfromtxt(tmp_path / "w.csv", delimiter=",", names=True)
    assert rows.dtype.names == ("t", "W", "is_jump", "jump_size")
    assert int(rows["is_jump"].sum()) == len(p.jumps)


def test_params_invariants():
    with pytest.raises(ValueError):
        DriverParams(epsilon=0.1, delta_sim=0.2)
    with pytest.raises(ValueError):
        DriverParams(kappa=-1.0)
