#!/usr/bin/env python3
"""Does the settling time depend on the initial time?

Uniform asymptotic stability asks for one settling time that works for
every initial time t0.  This script measures the settling time into a
ball of radius sigma from the unit sphere for several t0 and shows how the
verdict separates:

* x' = -x                  : same settling time for every t0,
* x' = -x / (1 + t)        : settling time 9 (1 + t0), growing without bound,
* gradient adaptive loop   : uniform when the regressor is sin t,
                             non-uniform when it is 1/(1+t).
"""

from pelab.signal_model import named_signal
from pelab.stability_probe import ules_fit, uniformity_probe
from pelab.system_catalog import make_exp_decay, make_gradient_adaptive, make_inverse_time_decay


def table(title, rep):
    print(f"\n{title}")
    print(f"  r = {rep.r}, sigma = {rep.sigma}, horizon = {rep.horizon}")
    for t0 in rep.t0_grid:
        print(f"  t0 = {t0:>6}: T = {rep.settling[t0]:.2f}")
    print(f"  dispersion = {rep.dispersion:.3g}, trend = {rep.trend:.3g}, verdict = {rep.verdict}")


table("x' = -x", uniformity_probe(make_exp_decay(), 1.0, 0.1, [0.0, 10.0, 50.0], horizon=20.0))
table("x' = -x / (1 + t)  (closed form 9, 99, 459)",
      uniformity_probe(make_inverse_time_decay(), 1.0, 0.1, [0.0, 10.0, 50.0], horizon=500.0))

grid = [0.0, 7.3, 40.0, 100.0]
pe = make_gradient_adaptive(named_signal("sin"))
table("gradient adaptive, regressor sin t", uniformity_probe(pe.ode, 1.0, 0.1, grid, horizon=200.0))
nope = make_gradient_adaptive(named_signal("inverse_time"))
table("gradient adaptive, regressor 1/(1+t), sigma = 0.9",
      uniformity_probe(nope.ode, 1.0, 0.9, grid, horizon=200.0))

print("\nexponential envelope fits")
for label, sys, r in (("x' = -2x", make_exp_decay(2.0), 1.0),
                      ("x' = -x / (1 + t)", make_inverse_time_decay(), 1.0),
                      ("gradient adaptive, sin t", pe.ode, 0.5)):
    fit = ules_fit(sys, r, [0.0, 7.3], horizon=40.0 if r < 1 else 20.0)
    if fit.ok:
        print(f"  {label}: |x(t)| <= {fit.gamma1:.3f} |x0| exp(-{fit.gamma2:.4f} (t - t0))")
    else:
        print(f"  {label}: no exponential envelope ({fit.reason})")
