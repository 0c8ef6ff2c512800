"""Geometric diagnostics for Loewner hulls and their traces.

Annulus crossings of polylines, Koebe distortion probes on f_t, Hölder moduli
from derivative samples, and the convergence profile of trace extraction.
Everything here is evidence gathered on finitely many samples, not proof.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import exponents as ex
from .forward_flow import (
    LoewnerChain,
    TraceSample,
    evaluate_f_many,
    evaluate_g_many,
    loglog_slope,
    trace_extract,
)
from .levy_driver import DriverParams, ahlfors_check, make_rng, sample_driver

KOEBE_LO = 48 / 125
KOEBE_HI = 80 / 27


# --------------------------------------------------------------------------
# annulus crossings
# --------------------------------------------------------------------------

@dataclass
class CrossingReport:
    z0: complex
    r0: float
    R0: float
    count: int
    first_infinite_suspect_time: float | None = None
    crossing_params: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {"z0": [self.z0.real, self.z0.imag], "r0": self.r0, "R0": self.R0,
                "count": self.count, "first_infinite_suspect_time": self.first_infinite_suspect_time}


def segment_circle_params(p, q, c, rho, guard=1e-12):
    """Parameters s in [0, 1] where p + s (q - p) meets |z - c| = rho, ascending.

    A tangent contact is reported once.  Segments shorter than ``guard`` times
    the local scale are treated as points.
    """
    d = q - p
    u = p - c
    a = abs(d) ** 2
    scale = max(abs(u), rho, 1.0)
    if a <= (guard * scale) ** 2:
        return [0.0] if abs(abs(u) - rho) <= guard * scale else []
    b = 2 * (d.real * u.real + d.imag * u.imag)
    cc = abs(u) ** 2 - rho * rho
    disc = b * b - 4 * a * cc
    if disc < -guard * scale * scale * a:
        return []
    if disc <= 0:
        roots = [-b / (2 * a)]
    else:
        sq = math.sqrt(disc)
        # stable pair of roots
        qq = -0.5 * (b + math.copysign(sq, b))
        r1 = qq / a
        r2 = cc / qq if qq != 0 else -r1
        roots = sorted((r1, r2))
    tol = guard
    return [min(max(s, 0.0), 1.0) for s in roots if -tol <= s <= 1 + tol]


def annulus_crossings(polyline, z0, r0, R0, breaks=(), times=None, suspect_count=None,
                      guard=1e-12) -> CrossingReport:
    """Count maximal subpaths running between |z - z0| = r0 and |z - z0| = R0.

    A crossing is registered each time the path touches one circle after last
    touching the other.  ``breaks`` holds indices i such that the segment from
    point i-1 to point i is a jump connector and not part of the curve; the
    state resets there.  With ``times`` (one per vertex) and ``suspect_count``
    the time of the crossing that reaches that count is recorded.
    """
    pts = np.asarray(polyline, dtype=complex).ravel()
    z0 = complex(z0)
    if not 0 < r0 < R0:
        raise ValueError("need 0 < r0 < R0")
    rep = CrossingReport(z0, float(r0), float(R0), 0)
    if pts.size < 2:
        return rep
    breaks = set(int(b) for b in breaks)

    def classify(z):
        dist = abs(z - z0)
        if dist <= r0:
            return "in"
        if dist >= R0:
            return "out"
        return None

    state = classify(pts[0])
    for i in range(1, pts.size):
        if i in breaks:
            state = classify(pts[i])
            continue
        p, q = pts[i - 1], pts[i]
        events = [(s, "in") for s in segment_circle_params(p, q, z0, r0, guard)]
        events += [(s, "out") for s in segment_circle_params(p, q, z0, R0, guard)]
        events.sort()
        for s, which in events:
            if state is not None and which != state:
                rep.count += 1
                par = (i - 1) + s
                rep.crossing_params.append(par)
                if (suspect_count is not None and times is not None
                        and rep.count == suspect_count and rep.first_infinite_suspect_time is None):
                    t0, t1 = times[i - 1], times[i]
                    rep.first_infinite_suspect_time = float(t0 + s * (t1 - t0))
            state = which
    return rep


def comb_polyline(n_teeth, r0, height=0.5, connected=False):
    """Truncated comb with teeth at x_k = r0 / (k + 2), k = 0..n-1, plus the limit tooth x = 0 omitted.

    Disconnected form: each tooth runs from the base up to height and is its
    own component (returned ``breaks`` separate them).  Connected form walks
    base -> up a tooth -> down -> next tooth, to the full height 2 * height.
    Returns (points, breaks).
    """
    xs = r0 / (np.arange(n_teeth) + 2.0)
    pts, breaks = [], []
    if connected:
        for k, x in enumerate(xs):
            pts += [complex(x, 0), complex(x, 2 * height), complex(x, 0)]
        return np.array(pts), breaks
    for k, x in enumerate(xs):
        if k:
            breaks.append(len(pts))
        pts += [complex(x, 0), complex(x, height)]
    return np.array(pts), breaks


def crossing_score(samples: list[TraceSample], centers, radii_pairs, jump_tol=None):
    """Crossing counts of a sampled trace over several annuli.

    Consecutive samples further apart than ``jump_tol`` are treated as jump
    connectors.  Returns a list of CrossingReport.
    """
    pts = np.array([s.gamma_sharp for s in samples])
    tt = np.array([s.t for s in samples])
    breaks = []
    if jump_tol is not None:
        breaks = list(np.nonzero(np.abs(np.diff(pts)) > jump_tol)[0] + 1)
    return [annulus_crossings(pts, c, r0, R0, breaks, tt) for c in centers for r0, R0 in radii_pairs]


# --------------------------------------------------------------------------
# Koebe probes
# --------------------------------------------------------------------------

def koebe_item_a_bounds(a):
    """Bounds for |phi'(i a y)| / |phi'(i y)| from the disc distortion theorem.

    The Möbius map from the disc sending 0 to iy sends (a-1)/(a+1) to iay.
    """
    a = np.asarray(a, dtype=float)
    rho = np.abs(a - 1) / (a + 1)
    geo = (1 - rho ** 2) / a
    return geo * (1 - rho) / (1 + rho) ** 3, geo * (1 + rho) / (1 - rho) ** 3


def koebe_item_b_bound(x):
    """Bound for |phi'(y(x+i))| / |phi'(iy)|; at most 16 (1 + x^2)^3."""
    x = np.abs(np.asarray(x, dtype=float))
    s = np.sqrt(x * x + 4)
    return (s + x) ** 4 / 16


@dataclass
class KoebeReport:
    n_probes: int
    n_skipped: int
    pass_a: int
    n_a: int
    pass_b: int
    n_b: int
    pass_c: int
    n_c: int
    ratio_range_c: tuple
    displacement_max: float  # max |phi^{-1}(z) - w0| / y0

    @property
    def passed(self) -> bool:
        return self.pass_a == self.n_a and self.pass_b == self.n_b and self.pass_c == self.n_c

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def koebe_check(chain: LoewnerChain, t, w0, probes=None, n_probe=8, rng=None,
                a_values=(0.5, 0.75, 1.5, 2.0), x_values=(-3.0, -1.0, 0.5, 2.0),
                rtol=1e-9) -> KoebeReport:
    """Distortion probes of phi = f_t around base points w0 in H.

    (a) |phi'(i a y)| against |phi'(i y)| for a in [1/2, 2], (b) |phi'(y(x+i))|
    against |phi'(iy)|, both after translating w0 to the imaginary axis, and
    (c) the 48/125 .. 80/27 sandwich for (phi^{-1})' = g_t' on the disc
    B(phi(w0), y0 |phi'(w0)| / 8) together with |phi^{-1}(z) - w0| <= y0 / 2.
    ``probes`` is an optional (len(w0), m) array of points z; those outside
    their disc are skipped.  Otherwise n_probe points per disc are drawn
    uniformly.
    """
    w0 = np.asarray(w0, dtype=complex).ravel()
    if np.any(w0.imag <= 0):
        raise ValueError("base points must lie in H")
    rng = make_rng(rng)
    x0, y0 = w0.real, w0.imag
    a = np.asarray(a_values, dtype=float)
    xv = np.asarray(x_values, dtype=float)

    _, d0 = evaluate_f_many(chain, w0, t, with_derivative=True)
    m0 = np.abs(d0)
    _, da = evaluate_f_many(chain, x0[:, None] + 1j * y0[:, None] * a[None, :], t, with_derivative=True)
    ra = np.abs(da) / m0[:, None]
    lo, hi = koebe_item_a_bounds(a)
    ok_a = (ra >= lo * (1 - rtol)) & (ra <= hi * (1 + rtol))
    _, db = evaluate_f_many(chain, x0[:, None] + y0[:, None] * (xv[None, :] + 1j), t, with_derivative=True)
    rb = np.abs(db) / m0[:, None]
    ok_b = rb <= koebe_item_b_bound(xv) * (1 + rtol)

    center, dc = evaluate_f_many(chain, w0, t, with_derivative=True)
    rad = y0 * np.abs(dc) / 8
    if probes is None:
        u = rng.uniform(size=(w0.size, n_probe))
        ang = rng.uniform(0, 2 * np.pi, size=(w0.size, n_probe))
        z = center[:, None] + rad[:, None] * np.sqrt(u) * np.exp(1j * ang)
        inside = np.ones(z.shape, dtype=bool)
    else:
        z = np.asarray(probes, dtype=complex).reshape(w0.size, -1)
        inside = np.abs(z - center[:, None]) <= rad[:, None]
    gz, tau, gd = evaluate_g_many(chain, z, t, with_derivative=True)
    valid = inside & np.isnan(tau)
    ratio = np.abs(gd) * np.abs(dc)[:, None]  # |g'(z)| / |g'(phi(w0))|
    disp = np.abs(gz - w0[:, None]) / y0[:, None]
    ok_c = (ratio >= KOEBE_LO * (1 - rtol)) & (ratio <= KOEBE_HI * (1 + rtol)) & (disp <= 0.5 * (1 + rtol))
    rv = ratio[valid]
    return KoebeReport(
        n_probes=int(z.size), n_skipped=int(np.sum(~valid)),
        pass_a=int(ok_a.sum()), n_a=int(ok_a.size), pass_b=int(ok_b.sum()), n_b=int(ok_b.size),
        pass_c=int(np.sum(ok_c & valid)), n_c=int(valid.sum()),
        ratio_range_c=(float(rv.min()), float(rv.max())) if rv.size else (math.nan, math.nan),
        displacement_max=float(disp[valid].max()) if rv.size else math.nan)


# --------------------------------------------------------------------------
# Hölder modulus
# --------------------------------------------------------------------------

@dataclass
class HolderFit:
    theta: float
    C: float
    H: float
    slope: float
    passed: bool


def holder_modulus(y, deriv, theta, slope_tol=0.05) -> HolderFit:
    """Check |phi'(x+iy)| <= C (y^(theta-1) v 1) on samples at heights y.

    ``deriv`` has shape (len(y),) or (len(y), m) for m abscissae.  C is the
    smallest constant that fits; the pass decision is that the envelope
    max_x |phi'| grows no faster than y^(theta-1) as y -> 0 (log-log slope
    over y < 1 at least theta - 1 - slope_tol).  Integrating the bound along
    vertical lines gives |phi(x+iy2) - phi(x+iy1)| <= (C/theta) y^theta, and
    H = C/theta is returned.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    y = np.asarray(y, dtype=float)
    d = np.abs(np.asarray(deriv, dtype=float)).reshape(y.size, -1)
    env = d.max(axis=1)
    C = float(np.max(env / np.maximum(y ** (theta - 1), 1.0)))
    small = y < 1
    slope = loglog_slope(y[small], env[small]) if small.sum() >= 2 else 0.0
    return HolderFit(theta, C, C / theta, slope, bool(slope >= theta - 1 - slope_tol))


def derivative_profile(chain: LoewnerChain, t, x_values, n_levels=20, y0=1.0):
    """|f_t'(x + i y0 2^-k)| for k < n_levels; returns (y, array (n_levels, len(x)))."""
    y = y0 * 2.0 ** -np.arange(n_levels)
    x = np.asarray(x_values, dtype=float)
    _, d = evaluate_f_many(chain, x[None, :] + 1j * y[:, None], t, with_derivative=True)
    return y, np.abs(d)


# --------------------------------------------------------------------------
# trace diagnostics
# --------------------------------------------------------------------------

def trace_increment_profile(t, gamma, h_values):
    """sup |gamma(u) - gamma(v)| over sample pairs with |u - v| <= h, for each h.

    Returns an array of shape (len(h_values),).
    """
    t = np.asarray(t, dtype=float)
    g = np.asarray(gamma, dtype=complex)
    order = np.argsort(t)
    t, g = t[order], g[order]
    out = np.zeros(len(h_values))
    for j, h in enumerate(h_values):
        best = 0.0
        lag = 1
        while lag < t.size:
            close = (t[lag:] - t[:-lag]) <= h
            if not close.any():
                break
            best = max(best, float(np.max(np.abs(g[lag:] - g[:-lag])[close])))
            lag += 1
        out[j] = best
    return out


def geometric_ratio(increments, kmin=3, floor=1e-12):
    """Fitted per-level ratio of trace increments |gamma(y_k) - gamma(y_{k+1})|.

    Increments below ``floor`` (round-off) are dropped.  Returns nan when
    fewer than three usable levels remain.
    """
    inc = np.asarray(increments, dtype=float)
    k = np.arange(inc.size)
    use = (k >= kmin) & (inc > floor)
    if use.sum() < 3:
        return math.nan
    slope = np.polyfit(k[use], np.log(inc[use]), 1)[0]
    return float(math.exp(slope))


def geometric_decrease(sample: TraceSample, ratio_max=0.9, kmin=3, floor=1e-12) -> bool:
    """Whether the trace increments of one sample shrink geometrically.

    Increments that reach the round-off floor before kmin + 3 levels count as
    decreasing.
    """
    inc = sample.increments
    if inc is None:
        raise ValueError("sample carries no increments")
    q = geometric_ratio(inc, kmin, floor)
    if math.isnan(q):
        return bool(np.all(inc[kmin:] <= floor) or sample.converged)
    return q <= ratio_max


def trace_gate(driver: DriverParams, alpha=None, eps_nu=None, alpha_nu=None, rho_nu=None,
               c_nu=None):
    """Parameter gate for trace existence; raises UnsupportedPhase at kappa = 8.

    kappa > 8 needs lambda < lambda^tr; kappa in (0, 8) additionally needs a
    verified Ahlfors certificate (alpha_nu, eps_nu, rho_nu) and epsilon within
    its range; kappa = 0 needs lambda <= 7/128.  Returns a dict of the checks.
    """
    kappa = driver.kappa
    lam = driver.lambda_eps if driver.nu.kind != "zero" else 0.0
    th = ex.trace_thresholds(kappa, lam, alpha)  # raises at kappa = 8
    out = {"kappa": kappa, "lambda_eps": lam, "lambda_tr": th.lambda_tr}
    if kappa == 0:
        out["passed"] = lam <= th.lambda_tr
        return out
    out["passed"] = lam < th.lambda_tr
    if 0 < kappa < 8 and driver.nu.kind != "zero":
        if None in (eps_nu, alpha_nu, rho_nu):
            raise ValueError("kappa in (0, 8) with jumps needs an Ahlfors certificate")
        cert = ahlfors_check(driver.nu, eps_nu, alpha_nu, rho_nu, c_nu=c_nu)
        out["ahlfors"] = cert.verified
        out["eps_ok"] = driver.epsilon <= min(eps_nu, rho_nu / 2)
        out["passed"] = out["passed"] and cert.verified and out["eps_ok"]
    return out


@dataclass
class TraceConvergenceReport:
    gate: dict
    n_paths: int
    n_times: int
    fraction: float
    ratios: np.ndarray = field(repr=False)

    def passed(self, level=0.95) -> bool:
        return bool(self.gate["passed"]) and self.fraction >= level

    def to_json(self) -> str:
        return json.dumps({"gate": self.gate, "n_paths": self.n_paths, "n_times": self.n_times,
                           "fraction": self.fraction}, indent=2, default=float)


def trace_convergence(driver: DriverParams, T, dt, n_paths, n_times, seed=None, ratio_max=0.9,
                      kmax=40, gate_kw=None) -> TraceConvergenceReport:
    """Fraction of sampled (path, time) pairs whose trace increments shrink geometrically.

    The gate is applied first; kappa = 8 raises UnsupportedPhase.
    """
    gate = trace_gate(driver, **(gate_kw or {}))
    rng = make_rng(driver.seed if seed is None else seed)
    good, total, ratios = 0, 0, []
    for g in rng.spawn(n_paths):
        path = sample_driver(driver, T, dt, rng=g)
        chain = LoewnerChain.from_driver(path)
        times = np.sort(g.uniform(0, T, n_times))
        for s in trace_extract(chain, times, kmax=kmax, tol=0.0):
            ok = geometric_decrease(s, ratio_max)
            ratios.append(geometric_ratio(s.increments))
            good += ok
            total += 1
    return TraceConvergenceReport(gate, n_paths, n_times, good / total, np.array(ratios))


# --------------------------------------------------------------------------
# time distortion
# --------------------------------------------------------------------------

def time_distortion(chain: LoewnerChain, t, w, s):
    """log(|f_{t+s}'(w)| / |f_t'(w)|) and the bound 8 s / Im(w)^2.

    Within s <= Im(w)^2 the ratio lies in [e^-8, e^8].
    """
    w = np.asarray(w, dtype=complex)
    s = np.broadcast_to(np.asarray(s, dtype=float), w.shape)
    _, d0 = evaluate_f_many(chain, w, t, with_derivative=True)
    d1 = np.empty_like(d0)
    for val in np.unique(s):
        sel = s == val
        _, d1[sel] = evaluate_f_many(chain, w[sel], t + float(val), with_derivative=True)
    return np.log(np.abs(d1) / np.abs(d0)), 8 * s / w.imag ** 2
