import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levy_loewner.backward_flow import (
    UnderResolved,
    bridge_samples,
    distributional_bridge,
    forward_trajectory,
    mble_inverse_step,
    mble_shift_residual,
    mble_step,
    solve_bleh_reversed,
    solve_mble,
    time_change,
)
from levy_loewner.forward_flow import LoewnerChain, evaluate_f
from levy_loewner.levy_driver import DriverParams, LevyMeasure, sample_driver

from oracles import integrate_segments, mirror_rhs, reversed_rhs

T1 = 3 / 16


def jump_chain(T=0.5):
    return LoewnerChain(np.array([T1, T - T1]), np.array([0.0, 1.0]), 1.0)


def random_chain(seed, kappa=2.0, T=1.0, dt=1e-3):
    d = DriverParams(kappa=kappa, nu=LevyMeasure.stable(1.5, 0.2), epsilon=0.2, delta_sim=0.01, seed=seed)
    return LoewnerChain.from_driver(sample_driver(d, T, dt))


def test_zero_driver_closed_form():
    st_ = solve_mble(LoewnerChain.constant(0.0, 2.0, 16), 1j)
    assert st_.h[-1] == pytest.approx(3j, abs=1e-14)
    t = st_.t
    assert np.allclose(st_.h, 1j * np.sqrt(1 + 4 * t), atol=1e-14)
    assert np.allclose(st_.hprime, 1 / np.sqrt(1 + 4 * t), atol=1e-14)


def test_mble_step_inverse():
    rng = np.random.default_rng(3)
    h = rng.normal(size=200) + 1j * rng.uniform(0.05, 2, 200)
    W = rng.normal(size=200)
    d = rng.uniform(1e-4, 0.3, 200)
    out, _ = mble_step(h, W, d)
    assert np.all(out.imag >= h.imag)
    assert np.max(np.abs(mble_inverse_step(out, W, d) - h)) < 1e-12


def test_jump_fixture_against_rk4():
    ch = jump_chain()
    z0 = 0.3 + 0.4j
    ref = integrate_segments(mirror_rhs, z0, [0, T1, 0.5], [0.0, 1.0])
    assert abs(solve_mble(ch, z0).h[-1] - ref) < 1e-8


@pytest.mark.parametrize("seed", range(20))
def test_pathwise_bounds(seed):
    ch = random_chain(seed)
    for z0 in (0.1j, 0.5 + 0.05j, -0.2 + 0.3j):
        s = solve_mble(ch, z0)
        y0 = z0.imag
        Y = s.Y
        assert np.all(np.diff(Y) > 0)
        assert np.all(Y >= y0) and np.all(Y <= np.sqrt(y0 ** 2 + 4 * s.t) * (1 + 1e-12))
        assert np.all(np.log(np.abs(s.hprime)) <= 2 * s.t / y0 ** 2 + 1e-12)


def test_time_change_closed_form():
    s = solve_mble(LoewnerChain.constant(0.0, 1.0, 50), 1j)
    tc = time_change(s)
    assert np.allclose(tc.S, 0.25 * np.log1p(4 * s.t), atol=1e-12)
    assert tc.residual() < 1e-10
    tt = np.linspace(0, 1, 37)
    assert np.max(np.abs(tc.sigma(tc.S_at(tt)) - tt)) < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_time_change_random(seed):
    ch = random_chain(seed)
    tc = time_change(solve_mble(ch, 0.2 + 0.1j))
    assert tc.residual() < 1e-4
    tt = np.linspace(0, 1, 23)
    assert np.max(np.abs(tc.sigma(tc.S_at(tt)) - tt)) < 1e-8


def test_forward_time_change_decays():
    ch = random_chain(11)
    tr = forward_trajectory(ch, 0.4 + 0.9j)
    tc = time_change(tr)
    assert tc.residual() < 1e-4


def test_under_resolved_raises():
    s = solve_mble(LoewnerChain.constant(0.0, 1.0, 1), 1e-3j)
    with pytest.raises(UnderResolved) as err:
        time_change(s, rtol=1e-14, max_m=8)
    assert err.value.segment == 0


def test_reversed_equals_inverse_zero_driver():
    ch = LoewnerChain.constant(0.0, 1.0, 8)
    w = 0.7 + 1.3j
    assert solve_bleh_reversed(ch, w, 1.0) == pytest.approx(np.sqrt(w * w - 4), abs=1e-14)


@pytest.mark.parametrize("seed", range(100))
def test_reversed_equals_inverse_random(seed):
    ch = random_chain(seed, T=0.5, dt=5e-3)
    w = ch.terminal + 0.3j
    assert abs(solve_bleh_reversed(ch, w, 0.5) - evaluate_f(ch, w, 0.5)) < 1e-8


def test_reversed_jump_fixture():
    ch = jump_chain()
    w = 1.0 + 0.3j
    k = solve_bleh_reversed(ch, w, 0.5)
    assert abs(k - evaluate_f(ch, w, 0.5)) < 1e-8
    ref = integrate_segments(reversed_rhs, w, [0, 0.5 - T1, 0.5], [1.0, 0.0])
    assert abs(k - ref) < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_markov_shift(seed):
    ch = random_chain(seed)
    assert mble_shift_residual(ch, 0.4, [0.1j, 0.3 + 0.2j, -1 + 0.05j]) < 1e-8


def test_bridge_deterministic():
    fwd, bwd = bridge_samples(DriverParams(seed=0), 1.0, [0.05, 0.1, 1.0], 4)
    ys = np.array([0.05, 0.1, 1.0])
    exact = ys / np.sqrt(ys ** 2 + 4)
    assert np.allclose(fwd, exact, rtol=1e-12) and np.allclose(bwd, exact, rtol=1e-12)


def test_bridge_small_mc():
    rep = distributional_bridge(DriverParams(kappa=2.0, seed=5), 0.5, [0.1], 2000, dt=1e-2)
    assert rep.passed
    assert 0 <= rep.rows[0].ks_pvalue <= 1


def test_trajectory_csv(tmp_path):
    s = solve_mble(random_chain(1, T=0.1, dt=1e-2), 0.5j)
    p = tmp_path / "traj.csv"
    s.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["t", "re_h", "im_h", "abs_hprime", "S"]
    assert len(rows) == len(s.t) + 1
    assert float(rows[-1][2]) == pytest.approx(s.Y[-1], rel=1e-15)


@given(st.floats(-2, 2), st.floats(0.01, 2), st.floats(-3, 3), st.floats(1e-5, 1))
def test_mble_segment_monotone(x, y, W, d):
    out, fac = mble_step(complex(x, y), W, d)
    assert out.imag >= y
    assert math.log(abs(fac)) <= 2 * d / y ** 2 + 1e-12
