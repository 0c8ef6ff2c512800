"""Closed-form exponent algebra: parameter choices, jump-variance thresholds,
Hölder exponents and validity gates.

Formulas use plain arithmetic so they also accept ``mpmath.mpf`` inputs;
``precise(fn)(...)`` evaluates any of them at 50 digits.  ``kappa = inf``
evaluates the continuous extension at infinity (used for the large-kappa
limits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath


class UnsupportedPhase(ValueError):
    """kappa = 8 is excluded from the trace estimates."""


def _isinf(x) -> bool:
    return x == math.inf


# --------------------------------------------------------------------------
# backward (Hölder) branch
# --------------------------------------------------------------------------

def r_backward(kappa):
    """r(kappa) = (1/4 + 1/kappa) ^ 1 with r(0) = 1."""
    if kappa == 0:
        return 1
    if _isinf(kappa):
        return 0.25
    return min(0.25 + 1 / kappa, 1)


def p_backward(kappa, r):
    return r * (kappa + 4 - kappa * r) / 2


def q_backward(kappa, lam, r):
    return p_backward(kappa, r) - r * (kappa + lam) / 2


def backward_params(kappa, lambda_eps=0):
    """(r*, p, q) for the backward observable."""
    r = r_backward(kappa)
    return r, p_backward(kappa, r), q_backward(kappa, lambda_eps, r)


def lambda_hol_max(kappa):
    """(2 - kappa) v (kappa - 4)^2 / (2 (kappa + 4))."""
    if _isinf(kappa):
        return math.inf
    return max(2 - kappa, (kappa - 4) ** 2 / (2 * (kappa + 4)))


def theta_hol_max(kappa, lambda_eps=0):
    """(p + q - 2r - 1) / (2p + q) at r = r(kappa)."""
    if _isinf(kappa):
        return theta_hol_max_closed(kappa, lambda_eps)
    r, p, q = backward_params(kappa, lambda_eps)
    return (p + q - 2 * r - 1) / (2 * p + q)


def theta_hol_max_closed(kappa, lambda_eps=0):
    """Two-branch rational form, split at kappa = 4/3."""
    lam = lambda_eps
    if _isinf(kappa):
        return 2 / 5
    if kappa <= 4 / 3:
        return 1 + 10 / (kappa + lam - 12)
    return (2 * (kappa - 4) ** 2 - 4 * (kappa + 4) * lam) / ((kappa + 4) * (5 * kappa - 4 * lam + 36))


def beta_backward(theta, p, q):
    return (1 - 2 * theta) * p + (1 - theta) * q


def beta_forward(theta, p, q):
    return (1 - theta) * p + q


def beta_exponent(theta, p, q, forward=False):
    return beta_forward(theta, p, q) if forward else beta_backward(theta, p, q)


# kappa = 0 with drift, backward
def lambda_hol_kappa0(p):
    return 7 - 2 * p


def theta_hol_kappa0(p):
    """theta(p) = (p - 3)/p, meaningful for p in (3, 7/2)."""
    return (p - 3) / p


# --------------------------------------------------------------------------
# forward (trace) branch
# --------------------------------------------------------------------------

def r_forward(kappa):
    """r(kappa) = 1/4 - 2/kappa (positive for kappa > 8, negative below)."""
    if kappa == 8:
        raise UnsupportedPhase("kappa = 8 is not covered")
    if kappa == 0:
        return -1
    if _isinf(kappa):
        return 0.25
    return 0.25 - 2 / kappa


def p_forward_case1(kappa, r):
    return r * (4 - kappa + kappa * r) / 2


def q_forward_case1(kappa, lam, r):
    return p_forward_case1(kappa, r) + r * (kappa + lam) / 2


def p_forward_case2(kappa, r):
    return r * (8 - kappa + 2 * kappa * r) / 4


def q_forward_case2(kappa, lam, r):
    return p_forward_case2(kappa, r) + 4 ** (1 - r) * r * (r - 1) * lam


def forward_params(kappa, lambda_eps=0):
    """(variant, r*, p, q) for the forward observable at the default choice."""
    if kappa == 8:
        raise UnsupportedPhase("kappa = 8 is not covered")
    if kappa == 0:
        return "kappa0-drift", -1, -7 / 4, 0
    r = r_forward(kappa)
    if kappa > 8:
        return "case1", r, p_forward_case1(kappa, r), q_forward_case1(kappa, lambda_eps, r)
    return "case2", r, p_forward_case2(kappa, r), q_forward_case2(kappa, lambda_eps, r)


def sigma_r(alpha, r):
    """varsigma_r(alpha) = -2r / (alpha - 2r)."""
    return -2 * r / (alpha - 2 * r)


def lambda_tr_max(kappa):
    if kappa == 8:
        raise UnsupportedPhase("kappa = 8 is not covered")
    if kappa == 0:
        return 7 / 128
    if _isinf(kappa):
        return math.inf
    if kappa < 8:
        return kappa / 2 ** (4 / kappa + 1.5) * (8 - kappa) / (3 * kappa + 8)
    return (kappa - 8) / 2


def theta_tr_max(kappa, lambda_eps=0):
    """(p + q)/(p - 2) at r = r(kappa), kappa > 8."""
    if not kappa > 8:
        raise ValueError("the capacity exponent is defined for kappa > 8")
    if _isinf(kappa):
        return theta_tr_max_closed(kappa, lambda_eps)
    _, r, p, q = forward_params(kappa, lambda_eps)
    return (p + q) / (p - 2)


def theta_tr_max_closed(kappa, lambda_eps=0):
    if _isinf(kappa):
        return 2 / 3
    lam = lambda_eps
    return 2 * (kappa - 8) * (kappa - 2 * (lam + 4)) / ((kappa + 8) * (3 * kappa + 8))


def alpha_of_p(p):
    """alpha(p) = -2p/(p + 2) for the kappa = 0 branch."""
    return -2 * p / (p + 2)


def alpha_tr_max(kappa, lambda_eps=0, p0=-7 / 4):
    """Largest admissible Ahlfors exponent, via 2r(p+q)/(p+q-2r)."""
    if kappa == 0:
        return alpha_of_p(p0)
    if not 0 < kappa < 8:
        raise UnsupportedPhase("alpha threshold needs kappa in [0, 8)")
    _, r, p, q = forward_params(kappa, lambda_eps)
    return 2 * r * (p + q) / (p + q - 2 * r)


def alpha_tr_max_closed(kappa, lambda_eps=0):
    if kappa == 0:
        return 14
    lam = lambda_eps
    return ((8 - kappa) ** 2 / (2 * kappa ** 2 + 2 ** (4 / kappa + 2.5) * (3 * kappa + 8) * lam)
            * (1 - lam / lambda_tr_max(kappa)))


def vartheta_tr(alpha, kappa, p0=-7 / 4):
    """alpha varsigma_r(alpha) / (2 - p), capped at 1."""
    if kappa == 8:
        raise UnsupportedPhase("kappa = 8 is not covered")
    if kappa == 0:
        if _isinf(alpha):
            return 2 / (2 - p0)
        return alpha * sigma_r(alpha, -1) / (2 - p0)
    if not 0 < kappa < 8:
        raise ValueError("vartheta is defined for kappa in [0, 8)")
    r = r_forward(kappa)
    p = p_forward_case2(kappa, r)
    return min(alpha * sigma_r(alpha, r) / (2 - p), 1)


def vartheta_tr_closed(alpha, kappa):
    if kappa == 0:
        if _isinf(alpha):
            return 8 / 15
        return 8 * alpha / (15 * (alpha + 2))
    return min(32 * alpha * (8 - kappa) / ((kappa + 48 + 64 / kappa) * (2 * alpha * kappa + 8 - kappa)), 1)


@dataclass
class TraceThresholds:
    kappa: float
    lambda_tr: float
    theta_tr: float | None = None
    alpha_tr: float | None = None
    vartheta_tr: float | None = None


def trace_thresholds(kappa, lambda_eps=0, alpha=None) -> TraceThresholds:
    """kappa > 8: (lambda, Theta); kappa in [0, 8): (lambda, alpha, vartheta(alpha))."""
    lam_max = lambda_tr_max(kappa)
    if kappa > 8:
        return TraceThresholds(kappa, lam_max, theta_tr=theta_tr_max(kappa, lambda_eps))
    a_max = alpha_tr_max(kappa, lambda_eps)
    vt = vartheta_tr(alpha, kappa) if alpha is not None else None
    return TraceThresholds(kappa, lam_max, alpha_tr=a_max, vartheta_tr=vt)


# --------------------------------------------------------------------------
# gates
# --------------------------------------------------------------------------

@dataclass
class GateResult:
    passed: bool
    boundary: bool = False
    violated: str | None = None
    values: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed


def _gate(checks, tol=1e-12):
    """checks: list of (name, value) meaning value <= 0 (or < 0 if name ends with '<')."""
    values, boundary = {}, False
    for name, val in checks:
        strict = name.endswith("<")
        key = name.rstrip("<").strip()
        values[key] = float(val)
        if strict:
            if not val < 0:
                return GateResult(False, violated=key, values=values)
        else:
            if val > tol:
                return GateResult(False, violated=key, values=values)
            if abs(val) <= tol:
                boundary = True
    return GateResult(True, boundary=boundary, values=values)


def gate_check(variant: str, kappa=0.0, lambda_eps=0.0, r=None, p=None, q=None, alpha=None,
               a=0.0) -> GateResult:
    """Evaluate every hypothesis inequality of a variant and name the first violation.

    Variants: ``backward``, ``backward-kappa0``, ``case1``, ``case2``, ``kappa0-drift``.
    """
    lam = lambda_eps
    if variant == "backward":
        r = r_backward(kappa) if r is None else r
        return _gate([("r in (0,1] <", -1 if 0 < r <= 1 else 1),
                      ("lambda_eps < lambda_hol_max(kappa) <", lam - lambda_hol_max(kappa))])
    if variant == "backward-kappa0":
        if p is None:
            raise ValueError("backward kappa0 gate needs p")
        return _gate([("p in (0,7/2) <", -1 if 0 < p < 3.5 else 1),
                      ("lambda_eps < 2p <", lam - 2 * p),
                      ("lambda_eps < 7 - 2p <", lam - lambda_hol_kappa0(p))])
    if kappa == 8:
        raise UnsupportedPhase("kappa = 8 is not covered")
    if variant == "case1":
        if not kappa > 8:
            return GateResult(False, violated="kappa > 8")
        r = r_forward(kappa) if r is None else r
        return _gate([("r in (0,1] <", -1 if 0 < r <= 1 else 1),
                      ("lambda_eps < lambda_tr_max(kappa) <", lam - lambda_tr_max(kappa))])
    if variant == "case2":
        if not 0 < kappa < 8:
            return GateResult(False, violated="kappa in (0,8)")
        r = r_forward(kappa) if r is None else r
        p = p_forward_case2(kappa, r) if p is None else p
        q = q_forward_case2(kappa, lam, r) if q is None else q
        c = 2 ** (3 - 2 * r) * r * (r - 1) * lam
        checks = [("r < 0 <", r),
                  ("p < 0 <", p),
                  ("forward inequality 1", -2 * p - 2 * q + r * (kappa * (2 * r - 1) + 8) + c),
                  ("forward inequality 2", 2 * p - 2 * q + r * kappa + c),
                  ("lambda_eps < lambda_tr_max(kappa) <", lam - lambda_tr_max(kappa))]
        if alpha is not None:
            checks.append(("p + q + alpha varsigma_r(alpha) < 0 <", p + q + alpha * sigma_r(alpha, r)))
        return _gate(checks)
    if variant == "kappa0-drift":
        p = -7 / 4 if p is None else p
        checks = [("p in (-2,0) <", -1 if -2 < p < 0 else 1),
                  ("-2p - 7 + 64 lambda_eps <= 0", -2 * p - 7 + 64 * lam),
                  ("2p + 64 lambda_eps <= 0", 2 * p + 64 * lam)]
        if alpha is not None:
            checks.append(("alpha < alpha(p) <", alpha - alpha_of_p(p)))
        return _gate(checks)
    raise ValueError(f"unknown variant {variant!r}")


# --------------------------------------------------------------------------
# comparison curves, tables, printed constants
# --------------------------------------------------------------------------

def holder_optimal_inverse_map(kappa):
    """Known optimal Hölder exponent of the inverse map for Brownian drivers."""
    return 1 - (4 * kappa + 2 * math.sqrt(2) * math.sqrt(kappa * (kappa + 2) * (kappa + 8))) / (4 + kappa) ** 2


def holder_optimal_curve(kappa):
    """Known optimal Hölder exponent of the capacity-parametrised curve."""
    return 1 - kappa / (2 * kappa + 24 - 8 * math.sqrt(kappa + 8))


def capacity_holder_hint(kappa):
    """Half the trace exponent at lambda = 0 (hinted curve exponent)."""
    if kappa > 8:
        return theta_tr_max(kappa, 0) / 2
    return (8 - kappa) ** 2 / (kappa * (kappa + 48) + 64)


def precise(fn, dps: int = 50):
    """Wrap fn so that float arguments are promoted to mpmath at ``dps`` digits."""
    def wrapped(*args, **kw):
        with mpmath.workdps(dps):
            conv = [mpmath.mpf(a) if isinstance(a, (int, float)) and not _isinf(a) else a for a in args]
            return fn(*conv, **kw)
    return wrapped


def printed_constants() -> list[tuple[str, float, float]]:
    """(name, computed, printed value) for the constants quoted as exact."""
    return [
        ("lambda_tr(0)", lambda_tr_max(0), 7 / 128),
        ("alpha_tr at p=-7/4", alpha_of_p(-7 / 4), 14.0),
        ("sup_alpha vartheta0", vartheta_tr(math.inf, 0), 8 / 15),
        ("Theta_hol(kappa->0, 0)", theta_hol_max(0, 0), 1 / 6),
        ("Theta_hol(kappa->inf, 0)", theta_hol_max(math.inf, 0), 2 / 5),
        ("Theta_tr(kappa->inf, 0)", theta_tr_max(math.inf, 0), 2 / 3),
        ("lambda_hol(4)", lambda_hol_max(4), 0.0),
    ]


def figure_tables(kappas=None, lambda_fracs=(0.0, 0.25, 0.5, 0.75), alpha_fracs=(0.2, 0.4, 0.6, 0.8)):
    """Curve tables keyed by name; rows are (kappa, lambda_frac, value[, alpha_frac])."""
    import numpy as np

    if kappas is None:
        kappas = np.linspace(0.0, 40.0, 513)[1:]
    tables = {"lambda_hol": [], "theta_hol": [], "lambda_tr": [], "theta_tr": [],
              "alpha_tr": [], "vartheta_tr": [], "holder_optimal_inverse": [], "holder_optimal_curve": []}
    for k in kappas:
        k = float(k)
        lh = lambda_hol_max(k)
        tables["lambda_hol"].append((k, 0.0, lh))
        tables["holder_optimal_inverse"].append((k, 0.0, holder_optimal_inverse_map(k)))
        for c in lambda_fracs:
            tables["theta_hol"].append((k, c, theta_hol_max(k, c * lh)))
        if k == 8:
            continue
        lt = lambda_tr_max(k)
        tables["lambda_tr"].append((k, 0.0, lt))
        tables["holder_optimal_curve"].append((k, 0.0, holder_optimal_curve(k)))
        for c in lambda_fracs:
            if k > 8:
                tables["theta_tr"].append((k, c, theta_tr_max(k, c * lt)))
            else:
                at = alpha_tr_max(k, c * lt)
                tables["alpha_tr"].append((k, c, at))
                for ca in alpha_fracs:
                    tables["vartheta_tr"].append((k, c, vartheta_tr(ca * at, k), ca))
    return tables


def write_table_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("kappa,lambda_frac,value\n")
        for row in rows:
            fh.write(f"{row[0]:.17g},{row[1]:.17g},{row[2]:.17g}\n")


@dataclass
class ExponentLedger:
    """Every exponent at one (kappa, lambda_eps), with validity flags per gate."""
    kappa: float
    lambda_eps: float
    r_star: float
    p: float
    q: float
    lambda_hol_max: float
    theta_hol_max: float
    lambda_tr_max: float | None
    theta_tr_max: float | None
    alpha_tr_max: float | None
    flags: dict

    def vartheta_tr(self, alpha):
        return vartheta_tr(alpha, self.kappa)

    def beta(self, theta):
        return beta_backward(theta, self.p, self.q)

    @staticmethod
    def sigma_r(alpha, r):
        return sigma_r(alpha, r)


def exponent_ledger(kappa, lambda_eps=0.0) -> ExponentLedger:
    r, p, q = backward_params(kappa, lambda_eps)
    lam_tr = th_tr = a_tr = None
    flags = {"backward": gate_check("backward", kappa, lambda_eps).passed}
    if kappa != 8:
        lam_tr = lambda_tr_max(kappa)
        if kappa > 8:
            th_tr = theta_tr_max(kappa, lambda_eps)
            flags["case1"] = gate_check("case1", kappa, lambda_eps).passed
        elif kappa > 0:
            a_tr = alpha_tr_max(kappa, lambda_eps)
            flags["case2"] = gate_check("case2", kappa, lambda_eps).passed
        else:
            a_tr = alpha_tr_max(0)
            flags["kappa0-drift"] = gate_check("kappa0-drift", 0, lambda_eps).passed
    return ExponentLedger(kappa, lambda_eps, r, p, q, lambda_hol_max(kappa),
                          theta_hol_max(kappa, lambda_eps), lam_tr, th_tr, a_tr, flags)
