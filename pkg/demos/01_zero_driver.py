"""Zero driver: the vertical slit, checked against its closed forms.

With W = 0 the hull at time t is the segment [0, 2i sqrt(t)], g_t(z) = sqrt(z^2 + 4t)
f_t(w) = sqrt(w^2 - 4t) and the mirror flow started at i reaches i sqrt(1 + 4t).
"""

import numpy as np

from levy_loewner.backward_flow import solve_mble, time_change
from levy_loewner.forward_flow import LoewnerChain, evaluate_f, evaluate_g, trace_point

ch = LoewnerChain.constant(0.0, 1.0, 16)

z = 0.3 + 0.5j
print("g_1(z)      ", evaluate_g(ch, z, 1.0), " closed form", np.sqrt(z * z + 4))
print("f_1(3i)     ", evaluate_f(ch, 3j, 1.0), " closed form", np.sqrt(-9 - 4 + 0j))
print("tip at t=1  ", trace_point(ch, 1.0, tol=1e-10).gamma_sharp, " expected 2i")

s = solve_mble(ch, 1j)
print("h_1(i)      ", s.h[-1], " expected", 1j * np.sqrt(5))
tc = time_change(s)
print("S(1)        ", tc.S[-1], " = log(5)/4 =", np.log(5) / 4)
