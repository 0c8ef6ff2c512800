"""Monte Carlo check that the backward observable does not grow in mean.

The driver is kappa = 2 plus small symmetric stable jumps, well below the
lambda_hol_max threshold.  Each checkpoint compares mean(M) with M0 + 3 SE.
"""

from levy_loewner.levy_driver import DriverParams, LevyMeasure
from levy_loewner.observables import BackwardObservableParams, mc_supermartingale_test, sde_residual_test, simulate_observable

d = DriverParams(kappa=2.0, nu=LevyMeasure.stable(1.5, 0.1), epsilon=0.1, delta_sim=0.005, seed=1)
P = BackwardObservableParams(d.kappa, d.lambda_eps)
print(f"lambda_eps = {d.lambda_eps:.4g}, p = {P.p:.4f}, q = {P.q:.4f}, r = {P.r:.4f}")

tr = simulate_observable(P, d, 1j, 1.0, 5e-3, 2000)
rep = mc_supermartingale_test(P, d, traj=tr)
print("   t    mean(M)     SE    M0+3SE  ok")
for c in rep.checkpoints:
    print(f"{c.t:4.2f}  {c.mean_M:8.4f}  {c.se:.4f}  {c.bound + 3 * c.se:7.4f}  {c.passed}")
print("SDE residual check passed:", sde_residual_test(tr).passed)
