"""Martingale-type observables of the backward and forward flows, their
Itô drifts, and Monte Carlo harnesses.

Every observable has the form

    M(t) = |phi_t'(z0)|^p  Y^(q - 2r) |Z|^(2r)  e^(-c t),

i.e. |phi'|^p Y^q (sin arg Z)^(-2r) e^(-ct), where phi = h (backward,
Z = h + W) or phi = g (forward, Z = g - W).  The drift per unit M is

    backward: [r(k(2r-1) - 8) X^2 + r k Y^2]/|Z|^4 + int G_r dnu
              + 2 r a X/|Z|^2 + 2p (X^2 - Y^2)/|Z|^4 + 2q/|Z|^2 - c
    forward:  [r(k(2r-1) + 8) X^2 + r k Y^2]/|Z|^4 + int F_r dnu
              - 2 r a X/|Z|^2 - 2p (X^2 - Y^2)/|Z|^4 - 2q/|Z|^2 - c

with G_r(v) = |(Z+v)/Z|^(2r) - 1 - 2 r v X/|Z|^2 and F_r as below.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.stats import binomtest

from . import exponents as ex
from .forward_flow import sqrt_upper
from .levy_driver import DriverParams, IncrementSampler, LevyMeasure, make_rng


class GateViolation(ValueError):
    def __init__(self, variant, inequality, values=None):
        super().__init__(f"{variant}: violated {inequality}")
        self.variant = variant
        self.inequality = inequality
        self.values = values or {}


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass
class ObservableParams:
    """Exponents of M and the flow it lives on."""

    flow: str  # "backward" | "forward"
    variant: str
    p: float
    q: float
    r: float
    kappa: float
    lambda_eps: float
    a: float = 0.0
    c: float = 0.0
    alpha: float | None = None
    c_nu: float | None = None

    def M0(self, z0) -> float:
        z0 = complex(z0)
        return z0.imag ** (self.q - 2 * self.r) * abs(z0) ** (2 * self.r)


def BackwardObservableParams(kappa, lambda_eps, r=None, p=None, a=0.0) -> ObservableParams:
    """Backward exponents; p = (r(k+4-kr))/2, q = p - r(k+lambda)/2 unless p is given with kappa = 0."""
    if kappa == 0 and p is not None:
        return ObservableParams("backward", "backward-kappa0", p, 0.0, 1.0, 0.0, lambda_eps, a, a * a)
    r = ex.r_backward(kappa) if r is None else r
    return ObservableParams("backward", "backward", ex.p_backward(kappa, r),
                            ex.q_backward(kappa, lambda_eps, r), r, kappa, lambda_eps)


def ForwardObservableParams(kappa, lambda_eps, r=None, alpha=None, c_nu=None, p=None,
                            a=0.0) -> ObservableParams:
    """Forward exponents for the variant selected by kappa (> 8, in (0, 8), or 0 with drift)."""
    if kappa == 8:
        raise ex.UnsupportedPhase("kappa = 8 is not covered")
    if kappa == 0:
        p = -7 / 4 if p is None else p
        return ObservableParams("forward", "kappa0-drift", p, 0.0, -1.0, 0.0, lambda_eps, a, a * a,
                                alpha, c_nu)
    r = ex.r_forward(kappa) if r is None else r
    if kappa > 8:
        return ObservableParams("forward", "case1", ex.p_forward_case1(kappa, r),
                                ex.q_forward_case1(kappa, lambda_eps, r), r, kappa, lambda_eps)
    return ObservableParams("forward", "case2", ex.p_forward_case2(kappa, r),
                            ex.q_forward_case2(kappa, lambda_eps, r), r, kappa, lambda_eps,
                            alpha=alpha, c_nu=c_nu)


def check_gate(params: ObservableParams) -> ex.GateResult:
    """Refuse parameters outside the variant's hypotheses (GateViolation names the inequality)."""
    v = params.variant
    if v == "backward":
        res = ex.gate_check("backward", params.kappa, params.lambda_eps, r=params.r)
    elif v == "backward-kappa0":
        res = ex.gate_check("backward-kappa0", 0.0, params.lambda_eps, p=params.p)
    elif v == "case1":
        res = ex.gate_check("case1", params.kappa, params.lambda_eps, r=params.r)
    elif v == "case2":
        res = ex.gate_check("case2", params.kappa, params.lambda_eps, r=params.r, p=params.p,
                            q=params.q, alpha=params.alpha)
    else:
        res = ex.gate_check("kappa0-drift", 0.0, params.lambda_eps, p=params.p, alpha=params.alpha)
    if not res.passed:
        raise GateViolation(v, res.violated, res.values)
    return res


# --------------------------------------------------------------------------
# jump integrands
# --------------------------------------------------------------------------

def F_r(v, x, y, r):
    """((x-v)^2 + y^2)^r/(x^2 + y^2)^r - 1 + 2 r v x/(x^2 + y^2)."""
    n2 = x * x + y * y
    u = v * (v - 2 * x) / n2
    # expm1/log1p keep the O(v^2) result accurate for tiny jumps
    return np.expm1(r * np.log1p(u)) + 2 * r * v * x / n2


def G_r(v, x, y, r):
    """Backward counterpart |(Z+v)/Z|^(2r) - 1 - 2 r v x/|Z|^2, i.e. F_r(-v)."""
    return F_r(-v, x, y, r)


@dataclass
class NuQuadrature:
    """Fixed nodes and weights with sum_j w_j f(v_j) ~ int_{lo<|v|<=hi} f dnu.

    Continuous parts use Gauss-Legendre in log|v| on each side; atoms are
    carried exactly.
    """

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, nu: LevyMeasure, lo: float, hi: float, n: int = 24) -> "NuQuadrature":
        if nu.kind == "zero" or hi <= lo:
            return cls(np.zeros(0), np.zeros(0))
        if nu.kind == "compound-poisson":
            sel = [(v, w) for v, w in nu.atoms if lo < abs(v) <= hi]
            return cls(np.array([v for v, _ in sel]), np.array([w for _, w in sel]))
        x, w = np.polynomial.legendre.leggauss(n)
        ul, uh = math.log(lo), math.log(hi)
        u = 0.5 * (uh - ul) * (x + 1) + ul
        v = np.exp(u)
        base = 0.5 * (uh - ul) * w * v
        nodes = np.concatenate([v, -v])
        weights = np.concatenate([base * nu.density_at(v), base * nu.density_at(-v)])
        return cls(nodes, weights)

    def integrate(self, fn, *args):
        """fn(v, *args) with args broadcast against a trailing node axis."""
        if self.nodes.size == 0:
            return 0.0
        args = [np.asarray(a)[..., None] for a in args]
        return np.sum(fn(self.nodes, *args) * self.weights, axis=-1)


def nu_integral_reference(nu: LevyMeasure, fn, lo, hi, *args) -> float:
    """Adaptive-quadrature reference for NuQuadrature."""
    if nu.kind == "zero":
        return 0.0
    if nu.kind == "compound-poisson":
        return sum(w * fn(v, *args) for v, w in nu.atoms if lo < abs(v) <= hi)
    tot = 0.0
    for s in (1, -1):
        tot += quad(lambda u: fn(s * u, *args) * float(nu.density_at(s * u)), lo, hi,
                    epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    return tot


# --------------------------------------------------------------------------
# drifts
# --------------------------------------------------------------------------

def drift_per_unit(params: ObservableParams, Z, kappa_eff, a, nuq: NuQuadrature | None):
    """Itô drift of M divided by M, at Z = X + iY (vectorised)."""
    X, Y = Z.real, Z.imag
    n2 = X * X + Y * Y
    n4 = n2 * n2
    r, p, q = params.r, params.p, params.q
    if params.flow == "backward":
        d = (r * (kappa_eff * (2 * r - 1) - 8) * X * X + r * kappa_eff * Y * Y) / n4
        d = d + 2 * r * a * X / n2 + 2 * p * (X * X - Y * Y) / n4 + 2 * q / n2 - params.c
        if nuq is not None:
            d = d + nuq.integrate(G_r, X, Y, r)
    else:
        d = (r * (kappa_eff * (2 * r - 1) + 8) * X * X + r * kappa_eff * Y * Y) / n4
        d = d - 2 * r * a * X / n2 - 2 * p * (X * X - Y * Y) / n4 - 2 * q / n2 - params.c
        if nuq is not None:
            d = d + nuq.integrate(F_r, X, Y, r)
    return d


def L_rate(params: ObservableParams, Z, T, y0):
    """Integrand of the Ahlfors compensator L (divided by nothing; it is not multiplied by M)."""
    r = params.r
    if params.variant == "kappa0-drift":
        expo = params.p + params.alpha * ex.sigma_r(params.alpha, -1)
    else:
        expo = params.p + params.q + params.alpha * ex.sigma_r(params.alpha, r)
    pref = 8 * (params.lambda_eps + params.c_nu) * (y0 * y0 + 4 * T) ** (-params.p / 2)
    return pref * Z.imag ** expo / np.abs(Z) ** 2


def drift_bound_case2(x, y, r, eps, nu: LevyMeasure, alpha, c_nu, lambda_eps=None):
    """Exact jump integral of F_r and the region-wise bounds used for kappa < 8.

    Returns a dict with the exact pieces (``I``, ``I1``, ``I2``, ``I3``) and
    bounds (``case_x_le_y`` when |x| <= y, else ``I1_bound``, ``I2_bound``,
    ``I3_outer_bound``, ``I3_inner_bound``), plus ``total_bound``.
    """
    lam = nu.variance_between(0.0, eps) if lambda_eps is None else lambda_eps
    n2 = x * x + y * y
    rr = r * (r - 1)

    def piece(lo, hi, sign):
        lo, hi = max(lo, 0.0), min(hi, eps)
        if hi <= lo:
            return 0.0
        return nu_integral_side(nu, lambda v: F_r(v, x, y, r), lo, hi, sign)

    out = {"I": piece(0, eps, 1) + piece(0, eps, -1)}
    if abs(x) <= y:
        out["case_x_le_y"] = 2 ** (2 - r) * rr * lam / n2
        out["total_bound"] = out["case_x_le_y"]
        return out
    half = abs(x) / 2
    sx = 1 if x > 0 else -1
    out["I1"] = piece(0, half, 1) + piece(0, half, -1)
    out["I2"] = piece(half, eps, -sx)
    out["I3"] = piece(half, eps, sx)
    ys = y ** ex.sigma_r(alpha, r)
    amp = 8 / n2 * (n2 / (y * y)) ** (-r) * y ** (alpha * ex.sigma_r(alpha, r))
    out["I1_bound"] = 2 ** (3 - 2 * r) * rr * lam / n2
    out["I2_bound"] = 2 * rr * lam / n2
    out["I3_outer_bound"] = amp * lam
    out["I3_inner_bound"] = amp * c_nu
    out["I3_window"] = ys
    out["total_bound"] = 2 ** (3 - 2 * r) * rr * lam / n2 + amp * (lam + c_nu)
    return out


def nu_integral_side(nu: LevyMeasure, fn, lo, hi, sign) -> float:
    """int over sign*v in (lo, hi] of fn dnu."""
    if nu.kind == "zero" or hi <= lo:
        return 0.0
    if nu.kind == "compound-poisson":
        return sum(w * fn(v) for v, w in nu.atoms if lo < sign * v <= hi)
    return quad(lambda u: fn(sign * u) * float(nu.density_at(sign * u)), lo, hi,
                epsabs=1e-14, epsrel=1e-10, limit=200)[0]


# --------------------------------------------------------------------------
# path simulation
# --------------------------------------------------------------------------

@dataclass
class ObservableTrajectory:
    """Checkpoint samples over many paths (rows: checkpoints, columns: paths)."""

    params: ObservableParams
    z0: complex
    t: np.ndarray
    M: np.ndarray
    drift_integral: np.ndarray
    L: np.ndarray
    stopped: np.ndarray
    M0: float
    extra: dict = field(default_factory=dict)

    @property
    def residual(self) -> np.ndarray:
        """M(t) - M(0) - int_0^t M D ds; a martingale."""
        return self.M - self.M0 - self.drift_integral


def adaptive_dt(Z, dt_max, ds):
    """Step length min(dt_max, ds |Z|^2): constant in the time-changed clock near the hull."""
    return np.minimum(dt_max, ds * np.abs(Z) ** 2)


def default_ds(kappa_eff):
    """Keep the Gaussian step at about a tenth of |Z|."""
    return 0.01 / max(kappa_eff, 1.0)


def simulate_observable(params: ObservableParams, driver: DriverParams, z0, T, dt, n_paths,
                        checkpoints=None, seed=None, y_floor=1e-4, nu_nodes=24,
                        with_L=None, ds=None, max_iter=1_000_000) -> ObservableTrajectory:
    """Run n_paths flows with exact constant-driver segments.

    Each path steps with its own length min(dt, ds |Z|^2), clipped to land on
    the checkpoints.  Within a step the orbit is Z^2 -/+ 4s exactly, so the
    drift integral uses Simpson with left limits; the driver then jumps by one
    increment (Gaussian plus small jumps in (delta_sim, epsilon]).  Forward
    paths freeze once Y drops below ``y_floor``; that is a stopping time, so
    supermartingale statements are unaffected.
    """
    z0 = complex(z0)
    if checkpoints is None:
        checkpoints = np.linspace(T / 5, T, 5)
    ck = np.asarray(sorted(checkpoints), dtype=float)
    rng = make_rng(driver.seed if seed is None else seed)
    samp = IncrementSampler(driver, dt, micro_only=True, rng=rng)
    nuq = NuQuadrature.build(driver.nu, driver.delta_sim, driver.epsilon, nu_nodes)
    keff, a = driver.kappa_eff, driver.a
    ds = default_ds(keff) if ds is None else ds
    back = params.flow == "backward"
    sgn = -1 if back else 1
    use_L = (params.variant in ("case2", "kappa0-drift") and params.alpha is not None
             and params.c_nu is not None) if with_L is None else with_L
    y0 = z0.imag
    nck = len(ck)

    Z = np.full(n_paths, z0, dtype=complex)
    t = np.zeros(n_paths)
    nxt = np.zeros(n_paths, dtype=int)
    logd = np.zeros(n_paths)
    active = np.ones(n_paths, dtype=bool)
    stopped = np.zeros(n_paths, dtype=bool)
    I = np.zeros(n_paths)
    Lacc = np.zeros(n_paths)
    rec_M = np.full((nck, n_paths), np.nan)
    rec_I = np.full((nck, n_paths), np.nan)
    rec_L = np.full((nck, n_paths), np.nan)
    rec_S = np.zeros((nck, n_paths), dtype=bool)
    n_steps = 0

    def logM(Zv, ld, tv):
        return (params.p * ld + (params.q - 2 * params.r) * np.log(Zv.imag)
                + params.r * np.log(np.abs(Zv) ** 2) - params.c * tv)

    Mcur = np.exp(logM(Z, logd, 0.0))
    it = 0
    while np.any(active):
        it += 1
        if it > max_iter:
            raise RuntimeError("adaptive stepping did not finish")
        idx = np.nonzero(active)[0]
        Za, ta = Z[idx], t[idx]
        h = np.minimum(adaptive_dt(Za, dt, ds), ck[nxt[idx]] - ta)
        n_steps += idx.size
        Zm = sqrt_upper(Za * Za + 2 * sgn * h, Za)
        Z1 = sqrt_upper(Za * Za + 4 * sgn * h, Za)
        ldm = logd[idx] + np.log(np.abs(Za / Zm))
        ld1 = logd[idx] + np.log(np.abs(Za / Z1))
        f0 = Mcur[idx] * drift_per_unit(params, Za, keff, a, nuq)
        fm = np.exp(logM(Zm, ldm, ta + h / 2)) * drift_per_unit(params, Zm, keff, a, nuq)
        M1 = np.exp(logM(Z1, ld1, ta + h))
        f1 = M1 * drift_per_unit(params, Z1, keff, a, nuq)
        I[idx] += h / 6 * (f0 + 4 * fm + f1)
        if use_L:
            Lacc[idx] += h / 6 * (L_rate(params, Za, T, y0) + 4 * L_rate(params, Zm, T, y0)
                                  + L_rate(params, Z1, T, y0))
        dW = samp.draw_dt(h)
        Znew = Z1 + dW if back else Z1 - dW
        t[idx] = ta + h
        logd[idx] = ld1
        Z[idx] = Znew
        Mcur[idx] = np.exp(logM(Znew, ld1, ta + h))
        if not back:
            low = Z1.imag <= y_floor
            if np.any(low):
                li = idx[low]
                Z[li] = Z1[low]
                Mcur[li] = M1[low]
                stopped[li] = True
                active[li] = False
                for i in li:
                    rec_M[nxt[i]:, i] = Mcur[i]
                    rec_I[nxt[i]:, i] = I[i]
                    rec_L[nxt[i]:, i] = Lacc[i]
                    rec_S[nxt[i]:, i] = True
        hitk = idx[active[idx] & (np.abs(t[idx] - ck[nxt[idx]]) <= 1e-12 * max(T, 1.0))]
        if hitk.size:
            j = nxt[hitk]
            rec_M[j, hitk] = Mcur[hitk]
            rec_I[j, hitk] = I[hitk]
            rec_L[j, hitk] = Lacc[hitk]
            nxt[hitk] += 1
            done = hitk[nxt[hitk] >= nck]
            active[done] = False
            nxt[done] = nck - 1
    return ObservableTrajectory(params, z0, ck, rec_M, rec_I, rec_L, rec_S, params.M0(z0),
                                {"dt_max": dt, "ds": ds, "n_paths": n_paths, "kappa_eff": keff,
                                 "mean_steps": n_steps / n_paths})


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class Checkpoint:
    t: float
    mean: float
    se: float
    bound: float
    passed: bool
    mean_M: float | None = None


@dataclass
class MCReport:
    variant: str
    params: dict
    checkpoints: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checkpoints)

    def to_json(self) -> str:
        return json.dumps({"variant": self.variant, "params": self.params,
                           "checkpoints": [asdict(c) for c in self.checkpoints]}, indent=2)


def _mean_se(x):
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x)))


def mc_supermartingale_test(params: ObservableParams, driver: DriverParams, z0=1j, T=1.0,
                            dt=2e-3, n_paths=10_000, checkpoints=None, seed=None,
                            traj: ObservableTrajectory | None = None) -> MCReport:
    """E[M(t) - L(t)] <= M(0) at each checkpoint, judged as mean <= M(0) + 3 SE.

    L is the Ahlfors compensator for the kappa < 8 variants and zero otherwise.
    """
    check_gate(params)
    if params.variant in ("case2", "kappa0-drift") and (params.alpha is None or params.c_nu is None):
        raise ValueError("the kappa < 8 variants need alpha and c_nu for the compensator")
    if traj is None:
        traj = simulate_observable(params, driver, z0, T, dt, n_paths, checkpoints, seed)
    cks = []
    for i, t in enumerate(traj.t):
        mean, se = _mean_se(traj.M[i] - traj.L[i])
        cks.append(Checkpoint(float(t), mean, se, traj.M0, bool(mean <= traj.M0 + 3 * se),
                              float(np.mean(traj.M[i]))))
    return MCReport(params.variant, asdict(params), cks)


def sde_residual_test(traj: ObservableTrajectory) -> MCReport:
    """Mean of M(t) - M(0) - int M D ds within 3 SE of zero."""
    cks = []
    for i, t in enumerate(traj.t):
        mean, se = _mean_se(traj.residual[i])
        cks.append(Checkpoint(float(t), mean, se, 0.0, bool(abs(mean) <= 3 * se)))
    return MCReport(traj.params.variant + "-residual", asdict(traj.params), cks)


# --------------------------------------------------------------------------
# stopping times and events
# --------------------------------------------------------------------------

def stopping_time_Sn(tc, y0, n, n_grid=4000) -> float:
    """First s with |X^(s)| <= Y^(s) = y0 e^{-2s} in [2^{-n-1}, 3 2^{-n-1}], capped.

    ``tc`` is the TimeChange of a forward trajectory.  The cap is
    log sqrt(y0 2^{n+1}) (also the end of the trajectory if it comes first).
    """
    lo = 0.5 * math.log(y0 / (3 * 2.0 ** (-n - 1)))
    cap = 0.5 * math.log(y0 * 2.0 ** (n + 1))
    end = float(tc.S[-1])
    top = min(cap, end)
    lo = max(lo, 0.0)
    if top <= lo:
        return top
    s = np.linspace(lo, top, n_grid)
    t = tc.sigma(s)
    k, loc = tc._locate(t)
    Zs = tc.state.Z_within(k, loc)
    hit = np.nonzero(np.abs(Zs.real) <= Zs.imag)[0]
    return float(s[hit[0]]) if hit.size else top


def stopping_bracket(y0, n):
    return 0.5 * math.log(y0 / (3 * 2.0 ** (-n - 1))), 0.5 * math.log(y0 * 2.0 ** (n + 1))


def event_probability_En(driver: DriverParams, theta, n_values, z0_list, n_paths, T=1.0,
                         dt=1e-3, seed=None, ds=None, y_floor=1e-12):
    """P[exists t: |Z(t) - i 2^-n| <= 2^-n-1 and |g_t'(z0)| <= (80/27) 2^{-n(1-theta)}].

    Returns an array of shape (len(n_values), len(z0_list)); Z = g_t(z0) - W(t)
    follows the forward micro-jump flow with steps min(dt, ds |Z|^2) and is
    checked after every step.  Each (path, start point) pair has its own driver.
    """
    rng = make_rng(driver.seed if seed is None else seed)
    ds = default_ds(driver.kappa_eff) if ds is None else ds
    n_values = np.asarray(n_values)
    z0 = np.asarray(z0_list, dtype=complex)
    samp = IncrementSampler(driver, dt, micro_only=True, rng=rng)
    Z = np.repeat(z0[None, :], n_paths, axis=0).ravel()
    t = np.zeros(Z.size)
    logd = np.zeros(Z.size)
    hit = np.zeros((len(n_values), Z.size), dtype=bool)
    rad = 2.0 ** (-n_values.astype(float))
    dthr = np.log(80 / 27) - n_values * (1 - theta) * math.log(2)

    def mark(idx, Zc, ld):
        for j in range(len(n_values)):
            hit[j, idx] |= (np.abs(Zc - 1j * rad[j]) <= rad[j] / 2) & (ld <= dthr[j])

    mark(np.arange(Z.size), Z, logd)
    live = np.arange(Z.size)
    while live.size:
        Zl = Z[live]
        h = np.minimum(adaptive_dt(Zl, dt, ds), T - t[live])
        Z1 = sqrt_upper(Zl * Zl + 4 * h, Zl)
        ld = logd[live] + np.log(np.abs(Zl / Z1))
        mark(live, Z1, ld)
        Z1 = Z1 - samp.draw_dt(h)
        mark(live, Z1, ld)
        Z[live], logd[live] = Z1, ld
        t[live] += h
        live = live[(t[live] < T * (1 - 1e-12)) & (Z1.imag > y_floor)]
    return hit.reshape(len(n_values), n_paths, len(z0)).mean(axis=1)


def disc_contained(Z, n) -> bool:
    """Whether the disc condition implies |X| <= Y in [2^-n-1, 3 2^-n-1] at Z."""
    R = 2.0 ** -n
    if abs(Z - 1j * R) > R / 2:
        return True
    return abs(Z.real) <= Z.imag and R / 2 <= Z.imag <= 1.5 * R


# --------------------------------------------------------------------------
# tail bound
# --------------------------------------------------------------------------

def chi_r(y0, zeta, kappa, lambda_eps, r, tol=1e-9):
    p = ex.p_backward(kappa, r)
    e = r * (kappa + lambda_eps) / 2
    gap = kappa * r - (4 - lambda_eps)
    if abs(gap) <= tol:
        return 1 - math.log(zeta * y0)
    if gap < 0:
        return zeta ** (e - p)
    return y0 ** (p - e)


def tail_regime(kappa, lambda_eps, r, tol=1e-9) -> str:
    gap = kappa * r - (4 - lambda_eps)
    return "log" if abs(gap) <= tol else ("power" if gap < 0 else "flat")


def tail_shape(x0, y0, zeta, kappa, lambda_eps, r):
    p = ex.p_backward(kappa, r)
    return (abs(complex(x0, y0)) / y0) ** (2 * r) * zeta ** (-p) * chi_r(y0, zeta, kappa, lambda_eps, r)


def backward_derivative_samples(driver: DriverParams, z0_list, T, dt, n_paths, seed=None, ds=None):
    """|h_T'(z0)| for each start point, shape (n_paths, len(z0_list)).

    Steps are min(dt, ds |Z|^2) per sample; each (path, start point) pair has
    its own driver, so columns are independent.
    """
    rng = make_rng(driver.seed if seed is None else seed)
    ds = default_ds(driver.kappa_eff) if ds is None else ds
    samp = IncrementSampler(driver, dt, micro_only=True, rng=rng)
    npts = len(z0_list)
    Z = np.repeat(np.asarray(z0_list, dtype=complex)[None, :], n_paths, axis=0).ravel()
    t = np.zeros(Z.size)
    logd = np.zeros(Z.size)
    live = np.arange(Z.size)
    while live.size:
        Zl = Z[live]
        h = np.minimum(adaptive_dt(Zl, dt, ds), T - t[live])
        Z1 = sqrt_upper(Zl * Zl - 4 * h, Zl)
        logd[live] += np.log(np.abs(Zl / Z1))
        Z[live] = Z1 + samp.draw_dt(h)
        t[live] += h
        live = live[t[live] < T * (1 - 1e-12)]
    return np.exp(logd).reshape(n_paths, npts)


def wilson_upper(k, n, level=0.99) -> float:
    return float(binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson").high)


@dataclass
class TailReport:
    regime: str
    r: float
    c0: float
    rows: list  # (x0, y0, zeta, p_hat, wilson_upper, envelope, passed)

    @property
    def passed(self) -> bool:
        return all(row[-1] for row in self.rows)


def tail_bound_check(driver: DriverParams, r, T, calib, valid, n_paths, dt=1e-3, seed=None,
                     level=0.99) -> TailReport:
    """Fit c0 on ``calib`` points, then test the envelope on ``valid`` points.

    ``calib`` and ``valid`` are lists of (x0, y0, zeta) with y0 in (0, 1] and
    zeta in (0, 1/y0].  c0 is the largest ratio of the Wilson upper bound to
    the tail shape over the calibration set; validation uses fresh paths.
    """
    kappa, lam = driver.kappa, driver.lambda_eps if driver.nu.kind != "zero" else 0.0
    if not 0 < r <= 1:
        raise ValueError("r must lie in (0, 1]")
    for _, y0, z in list(calib) + list(valid):
        if not (0 < y0 <= 1 and 0 < z <= 1 / y0):
            raise ValueError("need y0 in (0,1] and zeta in (0, 1/y0]")
    rng = make_rng(driver.seed if seed is None else seed)
    r1, r2 = rng.spawn(2)

    def run(points, g):
        starts = sorted({(x, y) for x, y, _ in points})
        der = backward_derivative_samples(driver, [complex(x, y) for x, y in starts], T, dt, n_paths, g)
        col = {s: i for i, s in enumerate(starts)}
        res = []
        for x, y, z in points:
            k = int(np.sum(der[:, col[(x, y)]] >= z))
            res.append((x, y, z, k / n_paths, wilson_upper(k, n_paths, level),
                        tail_shape(x, y, z, kappa, lam, r)))
        return res

    cal = run(calib, r1)
    c0 = max(row[4] / row[5] for row in cal)
    val = run(valid, r2)
    rows = [(x, y, z, ph, wu, c0 * sh, bool(wu <= c0 * sh)) for x, y, z, ph, wu, sh in val]
    return TailReport(tail_regime(kappa, lam, r), r, c0, rows)
