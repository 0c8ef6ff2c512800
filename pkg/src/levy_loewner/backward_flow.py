"""Mirror backward flow dh/dt = -2/(h + W), its time change, and the
comparison with the inverse forward chain.

On a constant-driver segment Z = h + W solves dZ/dt = -2/Z, so
Z(s)^2 = Z(0)^2 - 4s exactly.  The same closed form with +4s describes the
forward flow Z = g - W, which is why one trajectory type serves both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.stats import ks_2samp

from .forward_flow import SWALLOW_IM, LoewnerChain, f_step, sq_minus, sq_plus, sqrt_upper
from .levy_driver import DriverParams, IncrementSampler, make_rng


class UnderResolved(RuntimeError):
    def __init__(self, segment, needed):
        super().__init__(f"segment {segment} needs more than {needed} quadrature substeps")
        self.segment = segment
        self.needed = needed


def _as_chain(driver, T=None) -> LoewnerChain:
    chain = driver if isinstance(driver, LoewnerChain) else LoewnerChain.from_driver(driver)
    if T is not None and T < chain.T * (1 - 1e-12):
        chain = _truncate(chain, T)
    return chain


def _truncate(chain: LoewnerChain, T: float) -> LoewnerChain:
    k, rem = chain._split(T)
    d = list(chain.durations[:k])
    w = list(chain.drivers[:k])
    if rem > 0:
        d.append(rem)
        w.append(chain.drivers[k])
    return LoewnerChain(np.array(d), np.array(w), float(chain.driver_at(T)), meta=dict(chain.meta))


def mble_step(h, W, d):
    """Exact segment map h -> -W + sqrt((h + W)^2 - 4d) and its derivative factor."""
    u = h + W
    s = sqrt_upper(sq_minus(u, d), u)
    return s - W, u / s


def mble_inverse_step(h, W, d):
    u = h + W
    return sqrt_upper(sq_plus(u, d), u) - W


@dataclass
class BackwardState:
    """Trajectory sampled at segment boundaries.

    ``zstart[k]`` is Z at the start of segment k measured against that
    segment's driver value; ``direction`` is -1 for the backward flow and +1
    for the forward flow (Z^2 moves by 4 * direction * s).
    """

    z0: complex
    t: np.ndarray
    h: np.ndarray
    hprime: np.ndarray
    zstart: np.ndarray
    durations: np.ndarray
    direction: int = -1
    meta: dict = field(default_factory=dict)

    @property
    def y0(self) -> float:
        return float(self.z0.imag)

    @property
    def Y(self) -> np.ndarray:
        return self.h.imag

    def Z_within(self, k, s):
        """Z at local time s of segment k."""
        return sqrt_upper(self.zstart[k] ** 2 + 4 * self.direction * s, self.zstart[k])

    def to_csv(self, path, S=None) -> None:
        S = time_change(self).S if S is None else S
        with open(path, "w") as fh:
            fh.write("t,re_h,im_h,abs_hprime,S\n")
            for row in zip(self.t, self.h.real, self.h.imag, np.abs(self.hprime), S):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def solve_mble(driver, z0, T=None) -> BackwardState:
    """Run the mirror backward flow from z0 along every driver segment up to T."""
    z0 = complex(z0)
    if z0.imag <= 0:
        raise ValueError("z0 must lie in the open upper half-plane")
    chain = _as_chain(driver, T)
    n = len(chain)
    h = np.empty(n + 1, dtype=complex)
    hp = np.empty(n + 1, dtype=complex)
    zs = np.empty(n, dtype=complex)
    h[0], hp[0] = z0, 1.0
    cur, der = z0, 1.0 + 0j
    for k, (W, d) in enumerate(zip(chain.drivers, chain.durations)):
        zs[k] = cur + W
        new, fac = mble_step(cur, W, d)
        if not new.imag >= cur.imag * (1 - 1e-14):
            raise ArithmeticError(f"branch contact on segment {k}")
        cur, der = complex(new), complex(der * fac)
        h[k + 1], hp[k + 1] = cur, der
    return BackwardState(z0, chain.times.copy(), h, hp, zs, chain.durations.copy(), -1,
                         meta={"terminal": chain.terminal})


def forward_trajectory(chain: LoewnerChain, z0, T=None) -> BackwardState:
    """Forward orbit Z = g_t(z0) - W(t) in the same trajectory format; stops at swallowing."""
    z0 = complex(z0)
    chain = _as_chain(chain, T)
    hs, hps, zs = [z0], [1.0 + 0j], []
    cur, der = z0, 1.0 + 0j
    for W, d in zip(chain.drivers, chain.durations):
        u = cur - W
        s = complex(sqrt_upper(u * u + 4 * d, u))
        if s.imag <= SWALLOW_IM:
            break
        zs.append(u)
        der *= u / s
        cur = W + s
        hs.append(cur)
        hps.append(der)
    m = len(zs)
    return BackwardState(z0, chain.times[:m + 1].copy(), np.array(hs), np.array(hps),
                         np.array(zs, dtype=complex), chain.durations[:m].copy(), +1)


def solve_bleh_reversed(driver, z0, t) -> complex:
    """Backward equation dk/ds = -2/(k - W(t - s)), k_0 = z0, integrated to s = t.

    The reversed driver visits the segments last to first; each step is the
    exact constant-driver map.  k_t equals f_t(z0) pathwise.
    """
    chain = _as_chain(driver, t)
    rev_W = chain.drivers[::-1]
    rev_d = chain.durations[::-1]
    k = complex(z0)
    for W, d in zip(rev_W, rev_d):
        k = complex(f_step(k, W, d)[0])
    return k


def mble_shift_residual(driver, sigma, probes, T=None) -> float:
    """Largest gap in the domain Markov property of the backward flow.

    For z = h_sigma(z') + W(sigma) the shifted map equals
    h_{sigma+t}(z') + W(sigma), which is compared with a fresh backward run on
    the shifted driver W(sigma + .) - W(sigma).
    """
    chain = _as_chain(driver, T)
    k = int(np.argmin(np.abs(chain.times - sigma)))
    sigma = float(chain.times[k])
    Ws = float(chain.driver_at(sigma))
    shifted = LoewnerChain(chain.durations[k:], chain.drivers[k:] - Ws, chain.terminal - Ws)
    worst = 0.0
    for zp in np.atleast_1d(probes):
        full = solve_mble(chain, zp)
        z = full.h[k] + Ws
        lhs = solve_mble(shifted, z).h[-1]
        rhs = full.h[-1] + Ws
        worst = max(worst, abs(lhs - rhs))
    return worst


# --------------------------------------------------------------------------
# time change
# --------------------------------------------------------------------------

@dataclass
class TimeChange:
    """S(t) = int_0^t du/|Z(u-)|^2 on the segment grid and its inverse sigma."""

    state: BackwardState
    t: np.ndarray
    S: np.ndarray
    quad_error: float

    def __post_init__(self):
        self._sigma = PchipInterpolator(self.S, self.t)

    def _local(self, k, s):
        """int_0^s du/|Z|^2 inside segment k (Gauss-Legendre on the exact orbit)."""
        x, w = _GL
        u = 0.5 * s[:, None] * (x[None, :] + 1)
        Z = sqrt_upper(self.state.zstart[k][:, None] ** 2 + 4 * self.state.direction * u,
                       self.state.zstart[k][:, None])
        return 0.5 * s * ((1.0 / np.abs(Z) ** 2) @ w)

    def _locate(self, t):
        st = self.state
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(st.t, t, side="right") - 1, 0, len(st.durations) - 1)
        return k, np.clip(t - st.t[k], 0, st.durations[k])

    def S_at(self, t):
        k, s = self._locate(t)
        return self.S[k] + self._local(k, s)

    def sigma(self, s, iters=8):
        """Inverse of S: monotone cubic guess, then Newton on the in-segment integral."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = np.clip(self._sigma(s), self.t[0], self.t[-1])
        for _ in range(iters):
            k, loc = self._locate(t)
            F = self.S[k] + self._local(k, loc) - s
            dF = 1.0 / np.abs(self.state.Z_within(k, loc)) ** 2
            t = np.clip(t - F / dF, self.t[0], self.t[-1])
        return t

    def Y_at(self, t):
        """Exact Im Z at arbitrary times via the in-segment closed form."""
        k, s = self._locate(t)
        return np.imag(self.state.Z_within(k, s))

    def Y_hat(self, s):
        return self.Y_at(self.sigma(s))

    def residual(self, n=200) -> float:
        """max |Y(sigma(s)) - y0 exp(2 direction' s)| over an s-grid."""
        s = np.linspace(0.0, self.S[-1], n)
        sign = -self.state.direction
        return float(np.max(np.abs(self.Y_hat(s) - self.state.y0 * np.exp(2 * sign * s))))


_GL = np.polynomial.legendre.leggauss(24)


def _simpson_segments(z0, dur, direction, m):
    s = dur[:, None] * np.linspace(0.0, 1.0, m + 1)[None, :]
    Z = sqrt_upper(z0[:, None] ** 2 + 4 * direction * s, z0[:, None])
    f = 1.0 / np.abs(Z) ** 2
    w = np.ones(m + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return dur * (f @ w) / (3 * m)


def time_change(state: BackwardState, rtol=1e-10, max_m=4096) -> TimeChange:
    """Adaptive Simpson per segment on the exact in-segment orbit, Richardson-corrected."""
    n = len(state.durations)
    inc = np.zeros(n)
    err = np.zeros(n)
    todo = np.arange(n)
    m = 2
    prev = _simpson_segments(state.zstart, state.durations, state.direction, m)
    while todo.size:
        m *= 2
        if m > max_m:
            raise UnderResolved(int(todo[0]), max_m)
        cur = _simpson_segments(state.zstart[todo], state.durations[todo], state.direction, m)
        diff = np.abs(cur - prev)
        ok = diff <= rtol * np.abs(cur) + 1e-300
        done = todo[ok]
        inc[done] = cur[ok] + (cur[ok] - prev[ok]) / 15
        err[done] = diff[ok] / 15
        todo, prev = todo[~ok], cur[~ok]
    S = np.concatenate([[0.0], np.cumsum(inc)])
    return TimeChange(state, state.t.copy(), S, float(np.sum(err)))


# --------------------------------------------------------------------------
# distributional bridge
# --------------------------------------------------------------------------

@dataclass
class BridgeRow:
    y: float
    mean_f: float
    mean_h: float
    z_mean: float
    m2_f: float
    m2_h: float
    z_m2: float
    ks_stat: float
    ks_pvalue: float

    @property
    def passed(self) -> bool:
        return abs(self.z_mean) < 3 and abs(self.z_m2) < 3


@dataclass
class BridgeReport:
    t: float
    n_paths: int
    dt: float
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def _zgap(a, b):
    se = math.sqrt(np.var(a, ddof=1) / len(a) + np.var(b, ddof=1) / len(b))
    gap = float(np.mean(a) - np.mean(b))
    return gap / se if se > 0 else (0.0 if gap == 0 else math.inf)


def bridge_samples(params: DriverParams, t, y_list, n_paths, dt=1e-3, seed=None,
                   micro_only=False):
    """(|f_t'(W(t) + iy)|, |h_t'(iy)|) samples on independent drivers, shape (n_paths, len(y)).

    The backward run uses the right endpoint of every increment cell, which
    makes the two discretised maps equal in law and not only in the limit.
    """
    rng = make_rng(params.seed if seed is None else seed)
    rf, rh = rng.spawn(2)
    n = max(1, int(round(t / dt)))
    dt = t / n
    ys = np.asarray(y_list, dtype=float)

    samp = IncrementSampler(params, dt, micro_only=micro_only, rng=rf)
    W = np.zeros((n + 1, n_paths))
    for k in range(n):
        W[k + 1] = W[k] + samp.draw(n_paths)
    w = W[n][:, None] + 1j * ys[None, :]
    der = np.ones_like(w)
    for k in range(n - 1, -1, -1):
        w, fac = f_step(w, W[k][:, None], dt)
        der = der * fac
    fwd = np.abs(der)

    samp = IncrementSampler(params, dt, micro_only=micro_only, rng=rh)
    h = np.broadcast_to(1j * ys[None, :], (n_paths, len(ys))).copy()
    hp = np.ones_like(h)
    Wc = np.zeros(n_paths)
    for _ in range(n):
        Wc = Wc + samp.draw(n_paths)
        h, fac = mble_step(h, Wc[:, None], dt)
        hp = hp * fac
    return fwd, np.abs(hp)


def distributional_bridge(params: DriverParams, t, y_list, n_paths, dt=1e-3, seed=None,
                          micro_only=False) -> BridgeReport:
    fwd, bwd = bridge_samples(params, t, y_list, n_paths, dt, seed, micro_only)
    rows = []
    for j, y in enumerate(y_list):
        a, b = fwd[:, j], bwd[:, j]
        ks = ks_2samp(a, b)
        rows.append(BridgeRow(float(y), float(a.mean()), float(b.mean()), _zgap(a, b),
                              float((a ** 2).mean()), float((b ** 2).mean()), _zgap(a ** 2, b ** 2),
                              float(ks.statistic), float(ks.pvalue)))
    return BridgeReport(float(t), int(n_paths), float(t / max(1, round(t / dt))), rows)
