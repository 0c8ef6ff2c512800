"""Exponent tables: how the admissible jump variance shrinks the Hölder and trace ranges."""

from levy_loewner import exponents as ex

print("kappa  lambda_hol_max  theta_hol(0)  lambda_tr_max  theta_tr(0)")
for k in (0.5, 1.0, 2.0, 4.0, 6.0, 12.0, 16.0):
    # the capacity exponent only exists above kappa = 8
    th = f"{ex.theta_tr_max(k):11.5f}" if k > 8 else f"{'-':>11}"
    print(f"{k:5.1f}  {ex.lambda_hol_max(k):14.5f}  {ex.theta_hol_max(k):12.5f}"
          f"  {ex.lambda_tr_max(k):13.5f}  {th}")

print("\nbackward exponents at kappa = 2, lambda = 0.1:")
led = ex.exponent_ledger(2.0, 0.1)
print(f"r* = {led.r_star:.4f}  p = {led.p:.4f}  q = {led.q:.4f}  gates {led.flags}")
print("beta(theta = 0.3) =", led.beta(0.3))
