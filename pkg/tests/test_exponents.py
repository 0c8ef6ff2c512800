import math

import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from levy_loewner import exponents as ex

K, L, A = sp.symbols("kappa lambda alpha", positive=True)


# symbolic oracle: exponents built from the parameter choices only

def sym_backward(kappa_expr):
    r = sp.Rational(1, 4) + 1 / kappa_expr
    p = r * (kappa_expr + 4 - kappa_expr * r) / 2
    q = p - r * (kappa_expr + L) / 2
    return r, p, q


def sym_case2():
    r = sp.Rational(1, 4) - 2 / K
    p = r * (8 - K + 2 * K * r) / 4
    q = p + 4 ** (1 - r) * r * (r - 1) * L
    return r, p, q


def test_theta_hol_closed_form_matches_symbolic_ratio():
    r, p, q = sym_backward(K)
    ratio = sp.simplify((p + q - 2 * r - 1) / (2 * p + q))
    closed = (2 * (K - 4) ** 2 - 4 * (K + 4) * L) / ((K + 4) * (5 * K - 4 * L + 36))
    assert sp.simplify(ratio - closed) == 0
    # r = 1 branch
    p1 = (K + 4 - K) / 2
    q1 = p1 - (K + L) / 2
    assert sp.simplify((p1 + q1 - 3) / (2 * p1 + q1) - (1 + 10 / (K + L - 12))) == 0


def test_theta_tr_closed_form_matches_symbolic_ratio():
    r = sp.Rational(1, 4) - 2 / K
    p = r * (4 - K + K * r) / 2
    q = p + r * (K + L) / 2
    closed = 2 * (K - 8) * (K - 2 * (L + 4)) / ((K + 8) * (3 * K + 8))
    assert sp.simplify((p + q) / (p - 2) - closed) == 0


def test_case2_p_identity_symbolic():
    r, p, _ = sym_case2()
    assert sp.simplify(p + (8 - K) ** 2 / (32 * K)) == 0


def test_vartheta_closed_form_symbolic():
    r, p, _ = sym_case2()
    vs = -2 * r / (A - 2 * r)
    closed = 32 * A * (8 - K) / ((K + 48 + 64 / K) * (2 * A * K + 8 - K))
    assert sp.simplify(A * vs / (2 - p) - closed) == 0


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0, 3.0, 5.0, 7.5])
@pytest.mark.parametrize("frac", [0.0, 0.3, 0.9])
def test_alpha_tr_two_forms_agree(kappa, frac):
    lam = frac * ex.lambda_tr_max(kappa)
    assert ex.alpha_tr_max(kappa, lam) == pytest.approx(ex.alpha_tr_max_closed(kappa, lam), rel=1e-10)


def test_alpha_tr_vanishes_at_lambda_tr_symbolically():
    r, p, q = sym_case2()
    lam_tr = K / 2 ** (4 / K + sp.Rational(3, 2)) * (8 - K) / (3 * K + 8)
    for k in (1, 2, 3, 5, 7):
        val = (p + q).subs({K: k, L: lam_tr.subs(K, k)})
        assert abs(float(sp.N(val, 40))) < 1e-30


def test_printed_constants_exact():
    for name, val, ref in ex.printed_constants():
        assert abs(val - ref) <= 1e-12, name


def test_limits_by_extended_precision():
    f = ex.precise(ex.theta_hol_max)
    assert float(f(mpmath.mpf("1e-30"), 0)) == pytest.approx(1 / 6, abs=1e-12)
    assert float(f(mpmath.mpf("1e30"), 0)) == pytest.approx(2 / 5, abs=1e-12)
    g = ex.precise(ex.theta_tr_max)
    assert float(g(mpmath.mpf("1e30"), 0)) == pytest.approx(2 / 3, abs=1e-12)


def test_backward_examples():
    assert ex.backward_params(0) == (1, 2, 2)
    r, p, _ = ex.backward_params(4)
    assert (r, p) == (0.5, 1.5)
    r, p, _ = ex.backward_params(8)
    assert r == pytest.approx(3 / 8) and p == pytest.approx(27 / 16)
    assert ex.theta_hol_max(1, 0) == pytest.approx(1 / 11)
    assert ex.lambda_hol_max(4) == 0


def test_theta_tr_16():
    assert ex.theta_tr_max(16, 0) == pytest.approx(2 / 21, rel=1e-14)


def test_kappa8_refused():
    for fn in (ex.lambda_tr_max, ex.r_forward, lambda k: ex.trace_thresholds(k)):
        with pytest.raises(ex.UnsupportedPhase):
            fn(8)


def test_vartheta0_range_and_sup():
    a = np.geomspace(1e-3, 13.999, 200)
    v = np.array([ex.vartheta_tr(x, 0) for x in a])
    assert np.all((v > 0) & (v < 8 / 15))
    assert np.all(np.diff(v) > 0)
    assert ex.vartheta_tr(math.inf, 0) == pytest.approx(8 / 15)


def test_varsigma_forms():
    for a in (0.1, 1.0, 3.0):
        assert ex.sigma_r(a, -1) == pytest.approx(2 / (a + 2))


def test_theta_hol_zero_set_and_range():
    for k in (0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 30.0):
        assert ex.theta_hol_max(k, ex.lambda_hol_max(k)) == pytest.approx(0, abs=1e-12)
        assert 0 < ex.theta_hol_max(k, 0) < 2 / 5
    for k in (9.0, 12.0, 40.0):
        assert ex.theta_tr_max(k, ex.lambda_tr_max(k)) == pytest.approx(0, abs=1e-12)
        assert 0 < ex.theta_tr_max(k, 0) < 2 / 3


def test_theta_hol_shape_in_kappa():
    ks = np.linspace(0.1, 3.99, 100)
    v = [ex.theta_hol_max(k, 0) for k in ks]
    assert np.all(np.diff(v) < 0)
    ks = np.linspace(4.01, 60, 100)
    v = [ex.theta_hol_max(k, 0) for k in ks]
    assert np.all(np.diff(v) > 0)


@given(st.floats(0.05, 60), st.floats(0.0, 0.95), st.floats(0.01, 0.04))
def test_theta_hol_decreasing_in_lambda(kappa, frac, step):
    if abs(kappa - 4) < 1e-3:
        return
    lh = ex.lambda_hol_max(kappa)
    a, b = frac * lh, min(frac + step, 1.0) * lh
    assert ex.theta_hol_max(kappa, b) < ex.theta_hol_max(kappa, a)


@given(st.floats(0.05, 60))
def test_theta_hol_branches_agree(kappa):
    lam = 0.3 * ex.lambda_hol_max(kappa)
    assert ex.theta_hol_max(kappa, lam) == pytest.approx(ex.theta_hol_max_closed(kappa, lam), rel=1e-9, abs=1e-12)


@given(st.floats(8.05, 200), st.floats(0.0, 0.95))
def test_theta_tr_decreasing_and_closed(kappa, frac):
    lt = ex.lambda_tr_max(kappa)
    lam = frac * lt
    assert ex.theta_tr_max(kappa, lam) == pytest.approx(ex.theta_tr_max_closed(kappa, lam), rel=1e-9, abs=1e-12)
    assert ex.theta_tr_max(kappa, lam + 0.04 * lt) < ex.theta_tr_max(kappa, lam)


@given(st.floats(0.05, 7.95), st.floats(0.0, 0.95))
def test_alpha_tr_decreasing(kappa, frac):
    lt = ex.lambda_tr_max(kappa)
    assert ex.alpha_tr_max(kappa, (frac + 0.04) * lt) < ex.alpha_tr_max(kappa, frac * lt)


def test_gate_case2_default_exponents():
    for k in (1.0, 2.0, 6.0):
        g = ex.gate_check("case2", k, 0.0)
        assert g.passed
        assert g.values["forward inequality 1"] == pytest.approx(0, abs=1e-12)
        r = ex.r_forward(k)
        assert g.values["forward inequality 2"] == pytest.approx(k * r, rel=1e-12)


def test_gate_kappa0_boundary():
    g = ex.gate_check("kappa0-drift", 0.0, 7 / 128, p=-7 / 4)
    assert g.passed and g.boundary


def test_gate_names_violation():
    g = ex.gate_check("backward", 2.0, 10.0)
    assert not g.passed and "lambda_hol" in g.violated
    g = ex.gate_check("case1", 12.0, 3.0)
    assert not g.passed and "lambda_tr" in g.violated


def test_case2_alpha_condition():
    lam = 0.036
    at = ex.alpha_tr_max(2.0, lam)
    assert ex.gate_check("case2", 2.0, lam, alpha=0.5 * at).passed
    assert not ex.gate_check("case2", 2.0, lam, alpha=1.01 * at).passed


def test_beta():
    assert ex.beta_exponent(0, 1.3, 0.7) == pytest.approx(2.0)
    assert ex.beta_exponent(0, 1.3, 0.7, forward=True) == pytest.approx(2.0)
    r, p, q = ex.backward_params(2, 0)
    th = ex.theta_hol_max(2, 0) / 2
    assert ex.beta_backward(th, p, q) == pytest.approx((1 - 2 * th) * p + (1 - th) * q)


@given(st.floats(0.1, 40), st.floats(0.0, 0.9), st.floats(0.01, 0.99))
def test_beta_gate_below_theta_hol(kappa, frac, tfrac):
    lam = frac * ex.lambda_hol_max(kappa)
    r, p, q = ex.backward_params(kappa, lam)
    th = tfrac * ex.theta_hol_max(kappa, lam)
    assert ex.beta_backward(th, p, q) > 1 + 2 * r


def test_figure_tables_shape(tmp_path):
    tabs = ex.figure_tables()
    assert len(tabs["lambda_hol"]) == 512
    th = {}
    for k, c, v in tabs["theta_hol"]:
        th.setdefault(c, []).append(v)
    cs = sorted(th)
    for lo, hi in zip(cs, cs[1:]):
        assert np.all(np.array(th[hi]) <= np.array(th[lo]) + 1e-15)
    ex.write_table_csv(tabs["theta_hol"], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("kappa,lambda_frac,value")


def test_ledger_fields():
    led = ex.exponent_ledger(2.0, 0.01)
    assert led.r_star == pytest.approx(0.75)
    assert led.alpha_tr_max is not None
