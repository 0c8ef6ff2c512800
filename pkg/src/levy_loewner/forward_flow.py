"""Forward Loewner chain from a piecewise-constant driver.

Each driver segment (duration d, value W) contributes the exact vertical-slit
map z -> W + sqrt((z - W)^2 + 4d); no ODE stepping is involved.  The chain is

    g_t = g^(k) o ... o g^(1),     f_t = g_t^{-1} = f^(1) o ... o f^(k).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

SWALLOW_IM = 1e-12
TOL_TAU_REL = 1e-9
MAX_BISECT = 60
TOL_TRACE = 1e-6
TRACE_Y0 = 1.0
TRACE_KMAX = 40


class SwallowedAt(ArithmeticError):
    """Point absorbed by the hull at time ``tau``."""

    def __init__(self, tau, point=None):
        super().__init__(f"swallowed at tau={tau!r}")
        self.tau = tau
        self.point = point


def sqrt_upper(w, sign_hint=None):
    """Square root with Im >= 0; real roots take the sign of ``sign_hint``."""
    s = np.sqrt(np.asarray(w, dtype=complex))
    flip = s.imag < 0
    if sign_hint is not None:
        flip = flip | ((s.imag == 0) & (np.real(sign_hint) * s.real < 0))
    return np.where(flip, -s, s)


def sq_plus(u, d):
    """u^2 + 4d as (u - 2i sqrt d)(u + 2i sqrt d): no cancellation near u = +-2i sqrt d."""
    r = 2j * np.sqrt(d)
    return (u - r) * (u + r)


def sq_minus(u, d):
    """u^2 - 4d as (u - 2 sqrt d)(u + 2 sqrt d): accurate near the slit base u = +-2 sqrt d."""
    r = 2 * np.sqrt(d)
    return (u - r) * (u + r)


def g_step(z, W, d):
    """One slit map and its derivative factor; vectorised over z, W, d."""
    u = z - W
    s = sqrt_upper(sq_plus(u, d), u)
    with np.errstate(divide="ignore", invalid="ignore"):
        return W + s, u / s


def f_step(w, W, d):
    """Inverse slit map and its derivative factor."""
    u = w - W
    s = sqrt_upper(sq_minus(u, d), u)
    with np.errstate(divide="ignore", invalid="ignore"):
        return W + s, u / s


def elementary_map(z, W, d):
    """Time-d map of the constant-driver flow.  Raises SwallowedAt(local time)."""
    z = complex(z)
    if z.imag <= SWALLOW_IM:
        raise SwallowedAt(0.0, z)
    out, _ = g_step(z, W, d)
    out = complex(out)
    if out.imag <= SWALLOW_IM:
        tau = float(_bisect_tau(np.array([z - W]), np.array([float(d)]))[0])
        raise SwallowedAt(tau, out)
    return out


def inverse_elementary_map(w, W, d):
    return complex(f_step(complex(w), W, d)[0])


def _bisect_tau(u, d):
    """Smallest local time s in (0, d] with Im sqrt(u^2 + 4s) <= SWALLOW_IM (monotone in s)."""
    lo = np.zeros_like(d)
    hi = d.copy()
    u2 = u * u
    tol = TOL_TAU_REL * np.maximum(d, 1e-300)
    for _ in range(MAX_BISECT):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        dead = sqrt_upper(u2 + 4 * mid, u).imag <= SWALLOW_IM
        hi = np.where(dead, mid, hi)
        lo = np.where(dead, lo, mid)
    return hi


@dataclass(frozen=True)
class LoewnerChain:
    """Segments (duration_i, W_i) plus the terminal driver value W(T)."""

    durations: np.ndarray
    drivers: np.ndarray
    terminal: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = np.asarray(self.durations, dtype=float)
        w = np.asarray(self.drivers, dtype=float)
        if d.shape != w.shape or d.ndim != 1:
            raise ValueError("durations and drivers must be 1-d and equal length")
        if np.any(d <= 0):
            raise ValueError("segment durations must be positive")
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "drivers", w)
        object.__setattr__(self, "times", np.concatenate([[0.0], np.cumsum(d)]))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def hcap(self) -> float:
        return 2.0 * self.T

    def __len__(self):
        return len(self.durations)

    @classmethod
    def from_driver(cls, path) -> "LoewnerChain":
        d = np.diff(path.times)
        keep = d > 0
        return cls(d[keep], np.asarray(path.values[:-1])[keep], float(path.values[-1]),
                   meta=dict(path.meta))

    @classmethod
    def constant(cls, W: float, T: float, n: int = 1) -> "LoewnerChain":
        return cls(np.full(n, T / n), np.full(n, float(W)), float(W))

    @classmethod
    def from_function(cls, fn, T: float, n: int) -> "LoewnerChain":
        """Left-endpoint sampling of a deterministic driver on n equal segments."""
        t = np.linspace(0.0, T, n + 1)
        vals = np.array([fn(s) for s in t], dtype=float)
        return cls(np.diff(t), vals[:-1], float(vals[-1]))

    def driver_at(self, t):
        """Right-continuous W(t); W(T) is the terminal value."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right") - 1
        vals = np.append(self.drivers, self.terminal)
        return vals[np.clip(k, 0, len(self.drivers))]

    @property
    def sup_abs(self) -> float:
        return float(max(np.max(np.abs(self.drivers)), abs(self.terminal)))

    def _split(self, t):
        if t < 0 or t > self.T * (1 + 1e-12):
            raise ValueError(f"t={t} outside [0, {self.T}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(k, len(self.durations))
        rem = t - self.times[k] if k < len(self.durations) else 0.0
        return k, rem

    def segments_until(self, t):
        """(W_i, d_i) pairs composing g_t, including a partial last segment."""
        k, rem = self._split(t)
        segs = list(zip(self.drivers[:k], self.durations[:k]))
        if rem > 0:
            segs.append((self.drivers[k], rem))
        return segs


def evaluate_g_many(chain: LoewnerChain, z, t, with_derivative=False):
    """Vectorised g_t.  Returns (values, tau[, derivative]); swallowed entries are NaN
    with tau set to the swallowing time (tau is NaN for survivors)."""
    z = np.array(z, dtype=complex, copy=True)
    shape = z.shape
    z = z.ravel()
    der = np.ones_like(z)
    tau = np.full(z.shape, np.nan)
    alive = z.imag > SWALLOW_IM
    tau[~alive] = 0.0
    start = 0.0
    for W, d in chain.segments_until(t):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        znew, fac = g_step(z[idx], W, d)
        dead = znew.imag <= SWALLOW_IM
        if np.any(dead):
            di = idx[dead]
            tau[di] = start + _bisect_tau(z[di] - W, np.full(di.size, d))
            alive[di] = False
        z[idx] = znew
        der[idx] *= fac
        start += d
    z[~alive] = np.nan
    der[~alive] = np.nan
    out = (z.reshape(shape), tau.reshape(shape))
    if with_derivative:
        out += (der.reshape(shape),)
    return out


def evaluate_g(chain: LoewnerChain, z, t):
    """g_t(z) for one point; raises SwallowedAt(tau) if tau(z) <= t."""
    val, tau = evaluate_g_many(chain, [z], t)
    if not np.isnan(tau[0]):
        raise SwallowedAt(float(tau[0]))
    return complex(val[0])


def evaluate_g_prime(chain: LoewnerChain, z, t):
    _, tau, der = evaluate_g_many(chain, [z], t, with_derivative=True)
    if not np.isnan(tau[0]):
        raise SwallowedAt(float(tau[0]))
    return complex(der[0])


def swallowing_time(chain: LoewnerChain, z):
    """tau(z) within the chain horizon, or inf if z survives."""
    _, tau = evaluate_g_many(chain, [z], chain.T)
    return math.inf if np.isnan(tau[0]) else float(tau[0])


def evaluate_f_many(chain: LoewnerChain, w, t, with_derivative=False):
    """Vectorised f_t (reverse composition of inverse slit maps)."""
    w = np.array(w, dtype=complex, copy=True)
    der = np.ones_like(w)
    for W, d in reversed(chain.segments_until(t)):
        w, fac = f_step(w, W, d)
        der = der * fac
    return (w, der) if with_derivative else w


def evaluate_f(chain: LoewnerChain, w, t, with_derivative=False):
    """f_t(w) and optionally f_t'(w) for a single point."""
    if complex(w).imag <= 0:
        raise ValueError("f_t is evaluated on the open upper half-plane")
    out = evaluate_f_many(chain, np.array([w]), t, with_derivative)
    if with_derivative:
        return complex(out[0][0]), complex(out[1][0])
    return complex(out[0])


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

@dataclass
class TraceSample:
    t: float
    gamma_sharp: complex
    y_used: float
    converged: bool
    est_error: float
    increments: np.ndarray = field(repr=False, default=None)


def _f_at_times(chain: LoewnerChain, w, tt, with_derivative=False):
    """f_{t_j}(w_j) for rows of w, with tt sorted ascending (one time per row)."""
    w = np.array(w, dtype=complex, copy=True)
    der = np.ones_like(w) if with_derivative else None
    times = chain.times
    for i in range(len(chain.durations) - 1, -1, -1):
        first = int(np.searchsorted(tt, times[i], side="right"))
        if first >= len(tt):
            continue
        d = np.minimum(chain.durations[i], tt[first:] - times[i])
        d = d.reshape((-1,) + (1,) * (w.ndim - 1))
        new, fac = f_step(w[first:], chain.drivers[i], d)
        w[first:] = new
        if with_derivative:
            der[first:] *= fac
    return (w, der) if with_derivative else w


def trace_extract(chain: LoewnerChain, times, y0=TRACE_Y0, kmax=TRACE_KMAX, tol=TOL_TRACE,
                  chunk=256) -> list[TraceSample]:
    """gamma(t) = lim_{y->0} f_t(W(t) + iy) along y_k = y0 2^-k for all times at once.

    All (t, y_k) pairs travel through the segments together, last segment
    first, so each segment is applied once per batch.
    """
    times = np.asarray(times, dtype=float)
    order = np.argsort(times, kind="stable")
    ys = y0 * 2.0 ** -np.arange(kmax + 1)
    out: list[TraceSample | None] = [None] * len(times)
    for c0 in range(0, len(times), chunk):
        sel = order[c0:c0 + chunk]
        tt = times[sel]
        w = chain.driver_at(tt)[:, None] + 1j * ys[None, :]
        pts = _f_at_times(chain, w, tt)
        for row, j in enumerate(sel):
            out[j] = _trace_sample(float(tt[row]), pts[row], ys, tol)
    return out


def _trace_sample(t, pts, ys, tol):
    inc = np.abs(np.diff(pts))
    hit = np.nonzero(inc < tol)[0]
    if hit.size:
        k = int(hit[0]) + 1
        return TraceSample(t, complex(pts[k]), float(ys[k]), True, float(inc[k - 1]), inc)
    return TraceSample(t, complex(pts[-1]), float(ys[-1]), False, float(inc[-1]), inc)


def trace_point(chain: LoewnerChain, t, y0=TRACE_Y0, kmax=TRACE_KMAX, tol=TOL_TRACE) -> TraceSample:
    return trace_extract(chain, [t], y0, kmax, tol)[0]


def trace_to_csv(samples, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,re_gamma,im_gamma,converged,est_error\n")
        for s in samples:
            fh.write(f"{s.t:.17g},{s.gamma_sharp.real:.17g},{s.gamma_sharp.imag:.17g},"
                     f"{int(s.converged)},{s.est_error:.6g}\n")


# --------------------------------------------------------------------------
# capacity
# --------------------------------------------------------------------------

class ProbeRadiusTooSmall(ValueError):
    def __init__(self, radius, suggested):
        super().__init__(f"probe radius {radius:g} too small; try {suggested:g}")
        self.radius = radius
        self.suggested = suggested


def hull_scale(chain: LoewnerChain, t=None) -> float:
    """Crude upper bound for the hull diameter at time t."""
    t = chain.T if t is None else t
    return chain.sup_abs + 2.0 * math.sqrt(t) + 1.0


def hcap_estimate(chain: LoewnerChain, t=None, probe_radius=None, n_angles=64, spread_tol=0.05):
    """Half-plane capacity from z (g_t(z) - z) averaged over a large semicircle.

    g - z is accumulated segment by segment as 4d/(sqrt(u^2+4d) + u), which
    avoids the cancellation of subtracting two numbers of size R.  Midpoint
    angles annihilate the higher Laurent terms in the real part.
    """
    t = chain.T if t is None else float(t)
    if t == 0:
        return 0.0
    scale = hull_scale(chain, t)
    R = 1e4 * scale if probe_radius is None else float(probe_radius)
    theta = (np.arange(n_angles) + 0.5) * np.pi / n_angles
    z = R * np.exp(1j * theta)
    cur = z.copy()
    incr = np.zeros_like(z)
    for W, d in chain.segments_until(t):
        u = cur - W
        s = sqrt_upper(u * u + 4 * d, u)
        step = 4 * d / (s + u)
        incr += step
        cur = cur + step
    vals = z * incr
    if np.any(~np.isfinite(vals)) or np.any(cur.imag <= 0):
        raise ProbeRadiusTooSmall(R, 100 * max(R, scale))
    mean = float(np.mean(vals.real))
    spread = float(np.std(vals.real))
    if spread > spread_tol * abs(mean):
        raise ProbeRadiusTooSmall(R, R * 10 * spread / (spread_tol * abs(mean)))
    return mean


# --------------------------------------------------------------------------
# Markov shift
# --------------------------------------------------------------------------

def shifted_chain(chain: LoewnerChain, sigma: float, probes=None, check=True) -> LoewnerChain:
    """Chain of g_{sigma+t}(f_sigma(z + W(sigma))) - W(sigma), driven by W(sigma+.) - W(sigma).

    ``sigma`` is snapped to the nearest segment boundary.  With ``check`` the
    identity is tested at probe points and the largest residual is stored in
    ``meta['shift_residual']``.
    """
    k = int(np.argmin(np.abs(chain.times - sigma)))
    if not math.isclose(chain.times[k], sigma, rel_tol=1e-12, abs_tol=1e-15):
        warnings.warn(f"sigma={sigma} snapped to segment boundary {chain.times[k]}")
    sigma = float(chain.times[k])
    if k >= len(chain.durations):
        raise ValueError("nothing left after sigma")
    Ws = float(chain.driver_at(sigma))
    new = LoewnerChain(chain.durations[k:], chain.drivers[k:] - Ws, chain.terminal - Ws,
                       meta={**chain.meta, "shifted_by": sigma})
    if check:
        if probes is None:
            rng = np.random.default_rng(0)
            probes = rng.uniform(-2, 2, 10) + 1j * rng.uniform(0.5, 3, 10)
        probes = np.asarray(probes, dtype=complex)
        lhs, tau = evaluate_g_many(new, probes, new.T)
        pre = evaluate_f_many(chain, probes + Ws, sigma)
        rhs, tau2 = evaluate_g_many(chain, pre, chain.T)
        ok = np.isnan(tau) & np.isnan(tau2)
        res = float(np.max(np.abs(lhs[ok] - (rhs[ok] - Ws)))) if np.any(ok) else 0.0
        new.meta["shift_residual"] = res
    return new


# --------------------------------------------------------------------------
# approximation grid
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Lattice with Re in (a/8)Z n [-R, R] and Im in (a/8)(k+8) n [a, sqrt(1+4T)]."""

    a: float
    T: float
    R: float
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.xs) * len(self.ys)

    def points(self):
        """All grid points (materialised; use only for small grids)."""
        return (self.xs[None, :] + 1j * self.ys[:, None]).ravel()


def build_grid(a: float, T: float, R: float) -> GridSpec:
    if not 0 < a <= 1:
        raise ValueError("a must lie in (0, 1]")
    h = a / 8
    lmax = math.floor(R / h + 1e-9)
    kmax = math.floor(math.sqrt(1 + 4 * T) / h + 1e-9) - 8
    xs = h * np.arange(-lmax, lmax + 1)
    ys = h * (np.arange(max(kmax + 1, 0)) + 8)
    return GridSpec(a, T, R, xs, ys)


def grid_sum(spec: GridSpec, q: float, r: float) -> float:
    """Sum over the grid of Im(z)^(q-2r) |z|^(2r), one row at a time."""
    x2 = spec.xs ** 2
    total = 0.0
    for y in spec.ys:
        total += y ** (q - 2 * r) * float(np.sum((x2 + y * y) ** r))
    return total


def grid_chi(a: float, q: float, r: float) -> float:
    """Growth rate of the grid sum as the mesh a -> 0."""
    L = max(math.log(1 / a), 1.0)
    if r < -0.5:
        e = q + 2
        return a ** q if e < 0 else (a ** -2 * L if e == 0 else a ** -2)
    if r == -0.5:
        e = q + 2
        return a ** q * L if e < 0 else (a ** -2 * L ** 2 if e == 0 else a ** -2 * L)
    e = q - 2 * r + 1
    return a ** (q - 2 * r - 1) if e < 0 else (a ** -2 * L if e == 0 else a ** -2)


def loglog_slope(a_values, values) -> float:
    a = np.log(np.asarray(a_values, dtype=float))
    v = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(a, v, 1)[0])


def fit_grid_constant(q, r, T, R, a_values) -> float:
    """Smallest c with grid_sum <= c chi over the supplied meshes."""
    return max(grid_sum(build_grid(a, T, R), q, r) / grid_chi(a, q, r) for a in a_values)
