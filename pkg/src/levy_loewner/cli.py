"""Command line: campaigns from a JSON config, exponent checks and trace plots.

    levy-loewner run --config cfg.json [--seed N] [--out DIR]
    levy-loewner verify-exponents
    levy-loewner trace --driver driver.json --T 1 --svg out.svg

A campaign writes its artifacts plus manifest.json (sha256 of every file) and
exits 0 only if every suite's assertion held.  LL_THREADS caps the number of
suites run concurrently.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import exponents as ex
from . import geometry as geo
from . import observables as obs
from .forward_flow import LoewnerChain, trace_extract, trace_to_csv
from .levy_driver import DriverParams, ahlfors_check, load_driver_json, make_rng, sample_driver

SUITES = ("simulate", "trace", "verify-exponents", "mc-supermartingale", "tail-bounds",
          "geometry", "ahlfors")

DEFAULTS = {
    "T": 1.0,
    "dt": 1e-3,
    "n_paths": 1000,
    "output_dir": "out",
    "trace_times": 200,
    "tolerances": {"constants": 1e-12, "trace": 1e-6, "trace_fraction": 0.95},
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    out = {**DEFAULTS, **cfg}
    out["tolerances"] = {**DEFAULTS["tolerances"], **cfg.get("tolerances", {})}
    suites = out.get("suites")
    if not suites or not isinstance(suites, list):
        raise ConfigError("'suites' must be a nonempty list")
    bad = [s for s in suites if s not in SUITES]
    if bad:
        raise ConfigError(f"unknown suites {bad}; choose from {list(SUITES)}")
    for key in ("T", "dt"):
        if not (isinstance(out[key], (int, float)) and out[key] > 0):
            raise ConfigError(f"'{key}' must be a positive number")
    if not (isinstance(out["n_paths"], int) and out["n_paths"] > 0):
        raise ConfigError("'n_paths' must be a positive integer")
    try:
        out["driver_params"] = DriverParams.from_json(out.get("driver", {}))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad driver: {err}") from err
    return out


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not serialisable: {type(x)}")


# --------------------------------------------------------------------------
# SVG
# --------------------------------------------------------------------------

def render_svg(samples, jump_times=(), size=480, margin=40) -> str:
    """Trace polyline with dotted connectors across driver jumps, real axis and a scale bar."""
    pts = np.array([s.gamma_sharp for s in samples], dtype=complex)
    tt = np.array([s.t for s in samples], dtype=float)
    pts_ok = pts[np.isfinite(pts)]
    if pts_ok.size:
        x0, x1 = float(pts_ok.real.min()), float(pts_ok.real.max())
        y1 = float(pts_ok.imag.max())
    else:
        x0, x1, y1 = -1.0, 1.0, 1.0
    span = max(x1 - x0, y1, 1e-9)
    cx = 0.5 * (x0 + x1)
    scale = (size - 2 * margin) / span

    def X(z):
        return margin + (z.real - cx) * scale + (size - 2 * margin) / 2

    def Y(z):
        return size - margin - z.imag * scale

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<line x1="0" y1="{size - margin}" x2="{size}" y2="{size - margin}" '
             f'stroke="black" stroke-width="1"/>']
    jt = np.sort(np.asarray([float(t) for t in jump_times]))
    runs, cur = [], []
    for i, z in enumerate(pts):
        if not np.isfinite(z):
            continue
        if cur and jt.size:
            k = np.searchsorted(jt, tt[i - 1], side="right")
            if k < jt.size and jt[k] <= tt[i]:
                a = cur[-1]
                lines.append(f'<line x1="{X(a):.3f}" y1="{Y(a):.3f}" x2="{X(z):.3f}" y2="{Y(z):.3f}" '
                             f'stroke="gray" stroke-dasharray="2,3"/>')
                runs.append(cur)
                cur = []
        cur.append(z)
    if cur:
        runs.append(cur)
    for run in runs:
        if len(run) == 1:
            z = run[0]
            lines.append(f'<circle cx="{X(z):.3f}" cy="{Y(z):.3f}" r="1.5" fill="navy"/>')
            continue
        coords = " ".join(f"{X(z):.3f},{Y(z):.3f}" for z in run)
        lines.append(f'<polyline points="{coords}" fill="none" stroke="navy" stroke-width="1.2"/>')
    bar = 10 ** math.floor(math.log10(span))
    bx = margin
    by = size - margin / 2
    lines.append(f'<line x1="{bx}" y1="{by}" x2="{bx + bar * scale:.3f}" y2="{by}" stroke="black" '
                 f'stroke-width="2"/>')
    lines.append(f'<text x="{bx}" y="{by - 4}" font-size="10">{bar:g}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

def _path_and_chain(cfg, rng):
    path = sample_driver(cfg["driver_params"], cfg["T"], cfg["dt"], rng=rng)
    return path, LoewnerChain.from_driver(path)


def suite_simulate(cfg, out: Path, rng):
    path, chain = _path_and_chain(cfg, rng)
    path.to_csv(out / "driver.csv")
    summary = {"segments": len(chain), "sup_abs_W": path.sup_abs, "n_jumps": len(path.jumps),
               "hcap": chain.hcap}
    _dump(summary, out / "simulate.json")
    return True, ["driver.csv", "simulate.json"]


def suite_trace(cfg, out: Path, rng):
    path, chain = _path_and_chain(cfg, rng)
    times = np.linspace(0.0, cfg["T"], int(cfg["trace_times"]))
    samples = trace_extract(chain, times, tol=cfg["tolerances"]["trace"])
    trace_to_csv(samples, out / "trace.csv")
    (out / "trace.svg").write_text(render_svg(samples, [t for t, _ in path.jumps]))
    frac = float(np.mean([s.converged for s in samples]))
    _dump({"converged_fraction": frac}, out / "trace.json")
    return frac >= cfg["tolerances"]["trace_fraction"], ["trace.csv", "trace.svg", "trace.json"]


def exponent_checklist(tol=1e-12):
    rows = [(name, val, ref, abs(val - ref) <= tol) for name, val, ref in ex.printed_constants()]
    worst = max(ex.theta_hol_max(4, lam) for lam in (0.0, 0.1, 1.0, 10.0))
    rows.append(("Theta_hol(4, .) <= 0", worst, 0.0, worst <= tol))
    return rows


def suite_verify_exponents(cfg, out: Path, rng):
    rows = exponent_checklist(cfg["tolerances"]["constants"])
    _dump([{"name": n, "computed": v, "printed": r, "passed": ok} for n, v, r, ok in rows],
          out / "exponents.json")
    return all(r[-1] for r in rows), ["exponents.json"]


def _observable_params(cfg):
    d = cfg["driver_params"]
    oc = cfg.get("observable", {})
    lam = d.lambda_eps if d.nu.kind != "zero" else 0.0
    if oc.get("flow", "backward") == "backward":
        return obs.BackwardObservableParams(d.kappa, lam, r=oc.get("r"), p=oc.get("p"), a=d.a)
    c_nu = oc.get("c_nu")
    if "ahlfors" in cfg and c_nu is None:
        c_nu = _ahlfors(cfg).c_nu
    return obs.ForwardObservableParams(d.kappa, lam, r=oc.get("r"), alpha=oc.get("alpha"),
                                       c_nu=c_nu, p=oc.get("p"), a=d.a)


def suite_mc(cfg, out: Path, rng):
    params = _observable_params(cfg)
    oc = cfg.get("observable", {})
    z0 = complex(*oc.get("z0", [0.0, 1.0]))
    rep = obs.mc_supermartingale_test(params, cfg["driver_params"], z0=z0, T=cfg["T"],
                                      dt=oc.get("dt_max", 2e-3), n_paths=cfg["n_paths"],
                                      seed=rng)
    (out / "mc.json").write_text(rep.to_json() + "\n")
    return rep.passed, ["mc.json"]


def suite_tail(cfg, out: Path, rng):
    tc = cfg.get("tail", {})
    rep = obs.tail_bound_check(cfg["driver_params"], tc.get("r", 0.75), cfg["T"],
                               [tuple(p) for p in tc["calib"]], [tuple(p) for p in tc["valid"]],
                               cfg["n_paths"], dt=cfg["dt"], seed=rng)
    _dump({"regime": rep.regime, "r": rep.r, "c0": rep.c0, "passed": rep.passed,
           "rows": [list(r) for r in rep.rows]}, out / "tail.json")
    return rep.passed, ["tail.json"]


def suite_geometry(cfg, out: Path, rng):
    n = min(cfg["n_paths"], cfg.get("geometry_chains", 100))
    total = None
    for g in rng.spawn(n):
        _, chain = _path_and_chain(cfg, g)
        w0 = g.uniform(-2, 2, 4) + 1j * g.uniform(0.05, 2, 4)
        rep = geo.koebe_check(chain, cfg["T"], w0, rng=g)
        d = rep.to_json()
        if total is None:
            total = {k: 0 for k in ("n_probes", "n_skipped", "pass_a", "n_a", "pass_b", "n_b",
                                    "pass_c", "n_c")}
        for k in total:
            total[k] += d[k]
    ok = (total["pass_a"] == total["n_a"] and total["pass_b"] == total["n_b"]
          and total["pass_c"] == total["n_c"])
    total["passed"] = ok
    _dump(total, out / "geometry.json")
    return ok, ["geometry.json"]


def _ahlfors(cfg):
    ac = cfg["ahlfors"]
    return ahlfors_check(cfg["driver_params"].nu, ac["eps_nu"], ac["alpha_nu"], ac["rho_nu"],
                         c_nu=ac.get("c_nu"))


def suite_ahlfors(cfg, out: Path, rng):
    cert = _ahlfors(cfg)
    _dump(cert.__dict__, out / "ahlfors.json")
    return cert.verified, ["ahlfors.json"]


RUNNERS = {"simulate": suite_simulate, "trace": suite_trace,
           "verify-exponents": suite_verify_exponents, "mc-supermartingale": suite_mc,
           "tail-bounds": suite_tail, "geometry": suite_geometry, "ahlfors": suite_ahlfors}


def run(cfg: dict, seed=None, out_dir=None) -> int:
    out = Path(out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.get("seed", 0) if seed is None else seed
    rngs = dict(zip(cfg["suites"], make_rng(seed).spawn(len(cfg["suites"]))))
    workers = max(1, int(os.environ.get("LL_THREADS", "1")))

    def one(name):
        try:
            return name, *RUNNERS[name](cfg, out, rngs[name]), None
        except (obs.GateViolation, ex.UnsupportedPhase) as err:
            return name, False, [], f"gate refused: {err}"

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one, cfg["suites"]))
    files, status = [], {}
    for name, ok, written, msg in results:
        status[name] = bool(ok)
        files += written
        print(f"{name}: {'PASS' if ok else 'FAIL'}" + (f" ({msg})" if msg else ""))
    manifest = {"seed": seed, "suites": status,
                "artifacts": [{"file": f, "sha256": sha256(out / f)} for f in files]}
    _dump(manifest, out / "manifest.json")
    return 0 if all(status.values()) else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="levy-loewner")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a campaign from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    sub.add_parser("verify-exponents", help="print the exact-constant checklist")
    t = sub.add_parser("trace", help="simulate a driver and draw its trace")
    t.add_argument("--driver", required=True)
    t.add_argument("--T", type=float, required=True)
    t.add_argument("--svg", required=True)
    t.add_argument("--dt", type=float, default=1e-3)
    t.add_argument("--n-times", type=int, default=400)
    t.add_argument("--csv")
    t.add_argument("--seed", type=int)
    args = ap.parse_args(argv)

    if args.cmd == "verify-exponents":
        rows = exponent_checklist()
        for name, val, ref, ok in rows:
            print(f"{'ok  ' if ok else 'FAIL'} {name:28s} {val:.16g}  (expected {ref:.16g})")
        return 0 if all(r[-1] for r in rows) else 1
    if args.cmd == "trace":
        d = load_driver_json(args.driver)
        rng = make_rng(d.seed if args.seed is None else args.seed)
        path = sample_driver(d, args.T, args.dt, rng=rng)
        chain = LoewnerChain.from_driver(path)
        samples = trace_extract(chain, np.linspace(0, args.T, args.n_times))
        Path(args.svg).write_text(render_svg(samples, [t for t, _ in path.jumps]))
        if args.csv:
            trace_to_csv(samples, args.csv)
        return 0
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    return run(cfg, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
