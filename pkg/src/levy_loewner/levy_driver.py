"""Lévy measures, cutoff variances, Ahlfors certificates and driver sampling.

A driver is sampled through its Lévy-Itô decomposition

    W(t) = a t + sqrt(kappa) B(t) + (compensated jumps |v| <= 1) + (jumps |v| > 1).

Jumps below ``delta_sim`` cannot be drawn one by one for infinite-activity
measures, so they are replaced by their compensator (and optionally by a
Gaussian with the same variance rate).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

QUAD_RTOL = 1e-10


class NonIntegrableMeasure(ValueError):
    """The variance integral of a measure diverges near the origin."""


class InfeasibleGrid(MemoryError):
    """The requested grid would exceed the point cap."""

    def __init__(self, required: int, cap: int):
        super().__init__(f"driver grid needs about {required} points, cap is {cap}")
        self.required = required
        self.cap = cap


def make_rng(seed=None) -> np.random.Generator:
    """Counter-based generator (Philox) seeded through a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    """Independent per-path streams."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(n)]


def _quad(fun, lo, hi, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fun, lo, hi, epsabs=0.0, epsrel=QUAD_RTOL, limit=400, **kw)
        except integrate.IntegrationWarning as exc:
            raise NonIntegrableMeasure(f"quadrature on ({lo}, {hi}) failed: {exc}") from None
    if not np.isfinite(val):
        raise NonIntegrableMeasure(f"quadrature on ({lo}, {hi}) is not finite")
    return val


@dataclass(frozen=True)
class LevyMeasure:
    """Jump intensity nu.

    kind is one of ``"symmetric-stable"`` (density ``scale*|v|^(-1-alpha)``),
    ``"compound-poisson"`` (atoms ``(v_i, rate_i)``), ``"density"`` (a callable
    density on ``v != 0``) or ``"zero"``.
    """

    kind: str
    alpha: float | None = None
    scale: float = 1.0
    atoms: tuple[tuple[float, float], ...] = ()
    density: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    description: str = ""

    def __post_init__(self):
        if self.kind == "symmetric-stable":
            if self.alpha is None or not (0.0 < self.alpha < 2.0):
                raise ValueError("stable index must lie in (0, 2)")
            if self.scale <= 0:
                raise ValueError("scale must be positive")
        elif self.kind == "compound-poisson":
            for v, rate in self.atoms:
                if v == 0.0:
                    raise ValueError("an atom at the origin is not allowed")
                if rate < 0:
                    raise ValueError("atom rates must be nonnegative")
        elif self.kind == "density":
            if self.density is None:
                raise ValueError("density measure needs a callable")
        elif self.kind != "zero":
            raise ValueError(f"unknown measure kind {self.kind!r}")

    # constructors
    @classmethod
    def stable(cls, alpha: float, scale: float = 1.0) -> "LevyMeasure":
        return cls("symmetric-stable", alpha=float(alpha), scale=float(scale),
                   description=f"symmetric {alpha}-stable, scale {scale}")

    @classmethod
    def compound_poisson(cls, atoms: Sequence[tuple[float, float]]) -> "LevyMeasure":
        atoms = tuple((float(v), float(r)) for v, r in atoms)
        return cls("compound-poisson", atoms=atoms, description=f"atoms {list(atoms)}")

    @classmethod
    def from_density(cls, density: Callable, description: str = "") -> "LevyMeasure":
        return cls("density", density=density, description=description or "density")

    @classmethod
    def zero(cls) -> "LevyMeasure":
        return cls("zero", description="zero measure")

    @property
    def symmetric(self) -> bool:
        if self.kind in ("zero", "symmetric-stable"):
            return True
        if self.kind == "compound-poisson":
            pos = sorted((v, r) for v, r in self.atoms if v > 0)
            neg = sorted((-v, r) for v, r in self.atoms if v < 0)
            return pos == neg
        return False

    # pointwise density of the absolutely continuous part
    def density_at(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "symmetric-stable":
            return self.scale * np.abs(v) ** (-1.0 - self.alpha)
        if self.kind == "density":
            return np.asarray(self.density(v), dtype=float)
        return np.zeros_like(v)

    def _side_integral(self, power: int, lo: float, hi: float, sign: int) -> float:
        """int_{lo < |v| <= hi, sign(v) = sign} |v|^power nu(dv), continuous part."""
        if hi <= lo:
            return 0.0
        if self.kind == "symmetric-stable":
            # algebraic weight handles the endpoint singularity at the origin
            expo = power - 1.0 - self.alpha
            if lo == 0.0:
                if expo <= -1.0:
                    raise NonIntegrableMeasure(f"|v|^{power} is not nu-integrable at 0")
                val = _quad(lambda v: 1.0, 0.0, hi, weight="alg", wvar=(expo, 0.0))
            elif math.isinf(hi):
                val = _quad(lambda v: v ** expo, lo, np.inf)
            else:
                val = _quad(lambda v: v ** expo, lo, hi)
            return self.scale * val
        if self.kind == "density":
            f = self.density
            fun = lambda v: v ** power * float(f(sign * v))  # noqa: E731
            if lo == 0.0:
                # decade pieces toward 0 must shrink geometrically
                cut = min(hi, 1e-3)
                pieces, b = [], cut
                for _ in range(4):
                    pieces.append(_quad(fun, b * 1e-2, b))
                    b *= 1e-2
                if pieces[-1] > 0 and pieces[-1] >= 0.99 * pieces[-2]:
                    raise NonIntegrableMeasure("variance integral does not settle near 0")
                head = _quad(fun, cut, hi) if cut < hi else 0.0
                return head + _quad(fun, 0.0, cut)
            return _quad(fun, lo, hi)
        return 0.0

    def _atoms_sum(self, weight: Callable[[float], float], lo: float, hi: float) -> float:
        return sum(rate * weight(v) for v, rate in self.atoms if lo < abs(v) <= hi)

    def variance_between(self, lo: float, hi: float) -> float:
        """int_{lo < |v| <= hi} v^2 nu(dv)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "compound-poisson":
            return self._atoms_sum(lambda v: v * v, lo, hi)
        return self._side_integral(2, lo, hi, 1) + self._side_integral(2, lo, hi, -1)

    def mass_between(self, lo: float, hi: float) -> float:
        """nu(lo < |v| <= hi); requires lo > 0 for infinite-activity measures."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "compound-poisson":
            return self._atoms_sum(lambda v: 1.0, lo, hi)
        if self.kind == "symmetric-stable":
            if lo <= 0:
                return math.inf
            a = self.alpha
            top = 0.0 if math.isinf(hi) else hi ** (-a)
            return 2.0 * self.scale * (lo ** (-a) - top) / a
        return self._side_integral(0, lo, hi, 1) + self._side_integral(0, lo, hi, -1)

    def mean_between(self, lo: float, hi: float) -> float:
        """int_{lo < |v| <= hi} v nu(dv) (compensator rate)."""
        if self.symmetric:
            return 0.0
        if self.kind == "compound-poisson":
            return self._atoms_sum(lambda v: v, lo, hi)
        return self._side_integral(1, lo, hi, 1) - self._side_integral(1, lo, hi, -1)

    def variance_measure(self, a: float, b: float) -> float:
        """mu_nu((a, b)) = int_(a,b) v^2 nu(dv) for an open interval."""
        if b <= a or self.kind == "zero":
            return 0.0
        if self.kind == "compound-poisson":
            return sum(r * v * v for v, r in self.atoms if a < v < b)
        if self.kind == "symmetric-stable":
            e = 2.0 - self.alpha

            def prim(x):  # antiderivative of |x|^(1-alpha), odd
                return math.copysign(abs(x) ** e / e, x)

            return self.scale * (prim(b) - prim(a))
        total = 0.0
        if a < 0.0:
            lo, hi = max(0.0, -b), -a
            total += self._side_integral(2, lo, hi, -1)
        if b > 0.0:
            lo, hi = max(0.0, a), b
            total += self._side_integral(2, lo, hi, 1)
        return total

    def sample_jumps(self, rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
        """n i.i.d. jump sizes from nu restricted to lo < |v| <= hi (normalised)."""
        if n == 0:
            return np.zeros(0)
        if self.kind == "symmetric-stable":
            a = self.alpha
            u = rng.random(n)
            top = 0.0 if math.isinf(hi) else hi ** (-a)
            mag = (lo ** (-a) - u * (lo ** (-a) - top)) ** (-1.0 / a)
            sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            return sign * mag
        if self.kind == "compound-poisson":
            sel = [(v, r) for v, r in self.atoms if lo < abs(v) <= hi and r > 0]
            if not sel:
                raise ValueError("no atoms in the requested range")
            vals = np.array([v for v, _ in sel])
            p = np.array([r for _, r in sel])
            return rng.choice(vals, size=n, p=p / p.sum())
        if self.kind == "density":
            return self._sample_density(rng, n, lo, hi)
        raise ValueError("zero measure has no jumps")

    def _sample_density(self, rng, n, lo, hi):
        top = hi if not math.isinf(hi) else 1e3
        grid = np.geomspace(lo, top, 2049)
        out = []
        for sign in (1, -1):
            dens = np.asarray(self.density(sign * grid), dtype=float)
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
            out.append((sign, cum))
        tot = np.array([c[-1] for _, c in out])
        side = rng.choice(2, size=n, p=tot / tot.sum())
        res = np.empty(n)
        for k, (sign, cum) in enumerate(out):
            m = side == k
            u = rng.random(m.sum()) * cum[-1]
            res[m] = sign * np.interp(u, cum, grid)
        return res

    def to_json(self) -> dict:
        if self.kind == "symmetric-stable":
            return {"kind": self.kind, "params": {"alpha": self.alpha, "scale": self.scale}}
        if self.kind == "compound-poisson":
            return {"kind": self.kind, "params": {"atoms": [list(a) for a in self.atoms]}}
        if self.kind == "zero":
            return {"kind": "zero", "params": {}}
        raise ValueError("density measures are not JSON-serialisable")

    @classmethod
    def from_json(cls, kind: str, params: dict) -> "LevyMeasure":
        if kind == "symmetric-stable":
            return cls.stable(params["alpha"], params.get("scale", 1.0))
        if kind == "compound-poisson":
            return cls.compound_poisson(params["atoms"])
        if kind == "zero":
            return cls.zero()
        raise ValueError(f"unsupported measure kind {kind!r} in JSON")


def jump_variance(nu: LevyMeasure, eps: float) -> float:
    """lambda_eps = int_{|v| <= eps} v^2 nu(dv)."""
    if eps <= 0:
        raise ValueError("cutoff must be positive")
    return nu.variance_between(0.0, eps)


@dataclass
class CutoffResult:
    eps: float
    saturated: bool  # True when eps = 1 already meets the target


def tune_cutoff(nu: LevyMeasure, lambda_target: float, tol: float = 1e-9) -> CutoffResult:
    """Largest probed eps in (0, 1] with jump_variance(nu, eps) < lambda_target.

    Bisection stops at relative width ``tol``, so tiny cutoffs keep full precision.
    """
    if lambda_target <= 0:
        raise ValueError("target variance must be positive")
    if jump_variance(nu, 1.0) < lambda_target:
        return CutoffResult(1.0, True)
    lo, hi = 0.0, 1.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid > 0 and jump_variance(nu, mid) < lambda_target:
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise ValueError("no positive cutoff reaches the target")
    return CutoffResult(lo, False)


@dataclass
class AhlforsCertificate:
    epsilon_nu: float
    alpha_nu: float
    c_nu: float
    rho_nu: float
    verified: bool
    worst_ratio: float


def ahlfors_check(nu: LevyMeasure, eps_nu: float, alpha_nu: float, rho_nu: float,
                  probe_density: int = 64, c_nu: float | None = None,
                  rho_min: float | None = None) -> AhlforsCertificate:
    """Probe mu_nu((x-rho, x+rho) & [-eps_nu, eps_nu]) <= c_nu rho^alpha_nu.

    Without an explicit c_nu the constant is fitted on the coarse half of the
    radii and then checked on all radii, so growth as rho -> 0 fails.
    """
    if not (0 < eps_nu < 0.5):
        raise ValueError("eps_nu must lie in (0, 1/2)")
    if not (0 < rho_nu < 1):
        raise ValueError("rho_nu must lie in (0, 1)")
    rho_min = rho_min if rho_min is not None else rho_nu * 1e-8
    rhos = np.geomspace(rho_min, rho_nu, probe_density, endpoint=False)
    xs = list(np.linspace(-eps_nu, eps_nu, 2 * (probe_density // 2) + 1))
    xs += [v for v, _ in nu.atoms if abs(v) <= eps_nu]
    ratios = np.empty((len(rhos), len(xs)))
    for i, rho in enumerate(rhos):
        for j, x in enumerate(xs):
            a, b = max(x - rho, -eps_nu), min(x + rho, eps_nu)
            ratios[i, j] = nu.variance_measure(a, b) / rho ** alpha_nu
    per_rho = ratios.max(axis=1)
    worst = float(per_rho.max())
    if c_nu is None:
        coarse = per_rho[len(rhos) // 2:]
        c_nu = float(coarse.max()) * (1 + 1e-9)
    c_nu = max(c_nu, np.finfo(float).tiny)
    return AhlforsCertificate(eps_nu, alpha_nu, c_nu, rho_nu, bool(worst <= c_nu), worst)


@dataclass
class DriverParams:
    a: float = 0.0
    kappa: float = 0.0
    nu: LevyMeasure = field(default_factory=LevyMeasure.zero)
    epsilon: float = 1.0
    delta_sim: float = 1e-2
    seed: int | None = None
    gaussian_remainder: bool = True

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if not (0 < self.delta_sim <= self.epsilon <= 1):
            raise ValueError("need 0 < delta_sim <= epsilon <= 1")

    @property
    def lambda_eps(self) -> float:
        return jump_variance(self.nu, self.epsilon)

    @property
    def remainder_variance(self) -> float:
        """Variance rate of the jumps below delta_sim."""
        return jump_variance(self.nu, self.delta_sim) if self.nu.kind != "zero" else 0.0

    @property
    def kappa_eff(self) -> float:
        """Diffusivity including the Gaussian stand-in for the tiniest jumps."""
        return self.kappa + (self.remainder_variance if self.gaussian_remainder else 0.0)

    def to_json(self) -> dict:
        d = self.nu.to_json()
        d.update(a=self.a, kappa=self.kappa, epsilon=self.epsilon,
                 delta_sim=self.delta_sim, seed=self.seed,
                 gaussian_remainder=self.gaussian_remainder)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DriverParams":
        nu = LevyMeasure.from_json(d.get("kind", "zero"), d.get("params", {}))
        eps = float(d.get("epsilon", 1.0))
        return cls(a=float(d.get("a", 0.0)), kappa=float(d.get("kappa", 0.0)), nu=nu,
                   epsilon=eps, delta_sim=float(d.get("delta_sim", min(1e-2, eps))),
                   seed=d.get("seed"), gaussian_remainder=bool(d.get("gaussian_remainder", True)))


def load_driver_json(path) -> DriverParams:
    with open(path) as fh:
        return DriverParams.from_json(json.load(fh))


@dataclass
class DriverPath:
    """Piecewise-constant càdlàg sample: W = values[i] on [times[i], times[i+1])."""

    times: np.ndarray
    values: np.ndarray
    left_values: np.ndarray  # W(t_i-) with the diffusive part continuous
    jumps: list[tuple[float, float]]
    meta: dict

    @property
    def sup_abs(self) -> float:
        """R(T) = sup |W| over the path."""
        return float(np.max(np.abs(np.concatenate([self.values, self.left_values]))))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def value_at(self, t: float) -> float:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[min(max(i, 0), len(self.values) - 1)])

    def to_csv(self, path) -> None:
        is_jump = np.zeros(len(self.times), dtype=int)
        size = np.zeros(len(self.times))
        idx = {float(t): s for t, s in self.jumps}
        for i, t in enumerate(self.times):
            if float(t) in idx:
                is_jump[i] = 1
                size[i] = idx[float(t)]
        with open(path, "w") as fh:
            fh.write("t,W,is_jump,jump_size\n")
            for t, w, j, s in zip(self.times, self.values, is_jump, size):
                fh.write(f"{t:.17g},{w:.17g},{j},{s:.17g}\n")

    @classmethod
    def from_arrays(cls, times, values, meta=None) -> "DriverPath":
        """Deterministic driver from grid values (every change counted as a jump)."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        left = np.concatenate([[values[0]], values[:-1]])
        jumps = [(float(t), float(v - l)) for t, v, l in zip(times, values, left) if v != l]
        return cls(times, values, left, jumps, meta or {})


def _jump_range(params: DriverParams, micro_only: bool):
    """(upper jump size, compensated-part upper limit) for the simulated jumps."""
    if micro_only:
        return params.epsilon, params.epsilon
    return math.inf, 1.0


def sample_driver(params: DriverParams, T: float, dt: float, micro_only: bool = False,
                  rng=None, max_points: int = 5_000_000) -> DriverPath:
    """One driver path on [0, T]; every realised jump lands on a grid point.

    With ``micro_only`` only jumps of size at most ``params.epsilon`` are kept,
    which is the driver of the small-jump estimates.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    rng = make_rng(params.seed if rng is None else rng)
    nu = params.nu
    top, comp_top = _jump_range(params, micro_only)
    rate = nu.mass_between(params.delta_sim, top)
    n_base = int(math.ceil(T / dt - 1e-12))
    if n_base + rate * T > max_points:
        raise InfeasibleGrid(int(n_base + rate * T), max_points)
    n_jumps = int(rng.poisson(rate * T)) if rate > 0 else 0
    jt = np.sort(rng.random(n_jumps) * T)
    js = nu.sample_jumps(rng, n_jumps, params.delta_sim, top)
    base = np.minimum(np.arange(n_base + 1) * dt, T)
    base[-1] = T
    times = np.union1d(base, jt)
    dts = np.diff(times)
    drift = params.a - nu.mean_between(params.delta_sim, comp_top) if nu.kind != "zero" else params.a
    diff = math.sqrt(params.kappa_eff)
    cont = np.concatenate([[0.0], np.cumsum(drift * dts + diff * np.sqrt(dts) * rng.standard_normal(len(dts)))])
    jump_part = np.zeros(len(times))
    idx = np.searchsorted(times, jt)
    np.add.at(jump_part, idx, js)
    cum_jumps = np.cumsum(jump_part)
    values = cont + cum_jumps
    left = values - jump_part
    jumps = [(float(times[i]), float(s)) for i, s in zip(idx, js)]
    meta = params.to_json() if nu.kind != "density" else {"kind": "density"}
    meta.update(T=T, dt=dt, micro_only=micro_only, remainder_gaussian=params.gaussian_remainder
                and params.remainder_variance > 0)
    return DriverPath(times, values, left, jumps, meta)


class IncrementSampler:
    """Vectorised driver increments on a uniform grid, many paths at once.

    Jumps falling in the same cell are aggregated into that cell's increment.
    """

    def __init__(self, params: DriverParams, dt: float, micro_only: bool = True, rng=None):
        self.params = params
        self.dt = dt
        self.rng = make_rng(params.seed if rng is None else rng)
        top, comp_top = _jump_range(params, micro_only)
        self.top = top
        nu = params.nu
        self.rate = nu.mass_between(params.delta_sim, top) if nu.kind != "zero" else 0.0
        comp = nu.mean_between(params.delta_sim, comp_top) if nu.kind != "zero" else 0.0
        self.drift = params.a - comp
        self.sigma = math.sqrt(params.kappa_eff * dt)

    def draw(self, n_paths: int) -> np.ndarray:
        return self.draw_dt(np.full(n_paths, self.dt))

    def draw_dt(self, dts) -> np.ndarray:
        """One increment per path over its own cell length dts[i]."""
        rng = self.rng
        dts = np.asarray(dts, dtype=float)
        n_paths = dts.size
        dw = self.drift * dts + math.sqrt(self.params.kappa_eff) * np.sqrt(dts) * rng.standard_normal(n_paths)
        if self.rate > 0:
            counts = rng.poisson(self.rate * dts)
            total = int(counts.sum())
            if total:
                sizes = self.params.nu.sample_jumps(rng, total, self.params.delta_sim, self.top)
                owner = np.repeat(np.arange(n_paths), counts)
                dw += np.bincount(owner, weights=sizes, minlength=n_paths)
        return dw
