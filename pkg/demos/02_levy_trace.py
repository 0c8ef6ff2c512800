"""A stable-driven hull: sample a driver, extract the trace, write CSV and SVG.

Jumps of the driver show up as gaps in the trace; the SVG draws them dashed.
"""

import sys

import numpy as np

from levy_loewner.cli import render_svg
from levy_loewner.forward_flow import LoewnerChain, trace_extract, trace_to_csv
from levy_loewner.levy_driver import DriverParams, LevyMeasure, sample_driver

out = sys.argv[1] if len(sys.argv) > 1 else "levy_trace"
d = DriverParams(kappa=2.0, nu=LevyMeasure.stable(1.5, 0.1), epsilon=0.3, delta_sim=0.01, seed=4)
path = sample_driver(d, 1.0, 1e-3)
print("macro jumps:", len(path.jumps), " sup|W| =", round(path.sup_abs, 3))

ch = LoewnerChain.from_driver(path)
tt = np.linspace(0, 1, 401)
samples = trace_extract(ch, tt)
trace_to_csv(samples, out + ".csv")
with open(out + ".svg", "w") as fh:
    fh.write(render_svg(samples, [t for t, _ in path.jumps]))
g = np.array([s.gamma_sharp for s in samples])
print("max Im gamma:", round(g.imag.max(), 3), " wrote", out + ".csv,", out + ".svg")
