"""Numeric regret bounds as a function of the horizon.

The AdaLinUCB bound has a (log T)^2 part paid only in low-factor slots and
a part that is constant in T up to the alpha_T^2 factor.  The LinUCB bound
pays (log T)^2 at the mean factor.  Their leading coefficients compare as
eps0 against (1 - eps1 + eps0) / 2, but the constant part is huge, so the
asymptotic ordering only kicks in at astronomically large T.

    python demos/bounds_landscape.py
"""

import math

from oppbandits import bounds as bd

c = bd.BoundConstants(c_noise=0.1, c_theta=1.0, c_context=1.0, delta_min=0.1, delta_max=1.0,
                      n_contexts=100, dim=6, rho=0.5, eps0=0.1, eps1=0.1)
print(f"C_slots = {bd.c_slots(c)}")
ada_coef, lin_coef = bd.leading_log2_coefficients(c)
print(f"(log T)^2 coefficients: AdaLinUCB {ada_coef:.4g}, LinUCB {lin_coef:.4g}")

print(f"\n{'log10 T':>8}{'AdaLinUCB':>14}{'LinUCB':>14}{'ratio':>10}")
for e in (4, 6, 8, 10, 20, 50, 100, 200):
    log_T = e * math.log(10)
    ada = bd.bound_adalinucb_binary(c, log_T=log_T)
    lin = bd.bound_linucb(c, log_T=log_T)
    print(f"{e:8d}{ada:14.4g}{lin:14.4g}{ada / lin:10.4f}")
print(f"limit of the ratio: {ada_coef / lin_coef:.4f}")
