#!/usr/bin/env python3
"""Excitation certificates on small, hand-checkable functions.

Walks through the four kinds of certificate the library issues:

1. classical PE of a time signal (windowed Gram matrix),
2. state-dependent excitation on an annulus of states,
3. the monotone certificate map over shrinking annuli,
4. the scalar rate test that separates |sin t| from 1/(1+t).

Every number printed here has a closed form, noted next to it.
"""

import math

import numpy as np

from pelab.pe_engine import (
    AnnulusGrid,
    certificate_map,
    classical_pe_certificate,
    mornar_scalar_pe,
    pointwise_pe_scan,
    power_certificate,
    udpe_certificate,
)
from pelab.signal_model import along_path, named_signal, named_state_function, window_integral_norm

TWO_PI = 2 * math.pi
starts = np.linspace(0.0, TWO_PI, 9)


def show(title, cert):
    if cert.ok:
        print(f"  {title}: certificate T = {cert.T:.4f}, mu = {cert.mu:.6f}")
    else:
        print(f"  {title}: counterexample at t = {cert.t}, x = {cert.x}, value = {cert.value:.3g}")


print("1. classical PE of (sin t, cos t)")
S = named_signal("sin_cos")
show("Gram over one period (expect pi)", classical_pe_certificate(S, TWO_PI, t_grid=starts))
show("constant (1, 0) (expect failure)",
     classical_pe_certificate(named_signal("constant", value=[1.0, 0.0]), 1.0, t_grid=[0.0, 1.0]))

print("\n2. psi(t, x) = x1 sin t - x2 cos t")
psi = named_state_function("eg31_psi")
circle = window_integral_norm(along_path(psi, named_signal("cos_sin")), [0.0], 0.0, TWO_PI)
print(f"  integral of |psi| along x = (cos t, sin t): {circle:.2e} (psi vanishes there)")
show("annulus |x| = 1 (expect 4)", udpe_certificate(psi, AnnulusGrid.build(2, 0, 1.0, 1.0, starts), TWO_PI))
pt = pointwise_pe_scan(psi, [1.0, 0.0], 4 * math.pi, T0=math.pi)
print(f"  at the single state (1, 0) a half period suffices: T = {pt.T:.4f}, mu = {pt.mu:.4f}")

x2 = named_state_function("coordinate", n=2, n1=1, index=1)
show("x2 excited w.r.t. x1? (expect failure at (1, 0))",
     udpe_certificate(x2, AnnulusGrid.build(1, 1, 1.0, 1.0, starts), TWO_PI))

print("\n3. certificate map of psi on 0 < delta <= |x| <= 2")
cmap = certificate_map(psi, 2.0, [0.25, 0.5, 1.0, 2.0], T0=TWO_PI)
for d, th, g in zip(cmap.deltas, cmap.theta, cmap.gamma):
    print(f"  delta = {d:<5} theta = {th:.4f}  gamma = {g:.4f}  (gamma/delta = {g / d:.4f}, expect 4)")
for s in (0.1, 0.75, 1.5):
    print(f"  envelope at s = {s}: gamma = {cmap.gamma_at(s):.4f}, theta = {cmap.theta_at(s):.4f}")

base = udpe_certificate(psi, AnnulusGrid.build(2, 0, 1.0, 1.0, starts), TWO_PI)
for p in (1.5, 2.0, 3.0):
    print(f"  power p = {p}: mu^p / T^(p-1) = {power_certificate(base, p).mu:.4f}")

print("\n4. scalar rate test")
one = [np.ones(1)]
for name, grid in (("abs_sin", [0, 10, 50, 100]), ("inverse_time", [0, 10, 20, 50, 100, 200])):
    m = mornar_scalar_pe(named_signal(name), one, grid, TWO_PI)
    if m.ok:
        print(f"  {name}: rate a = {m.mu:.5f} (2/pi = {2 / math.pi:.5f})")
    else:
        print(f"  {name}: fails ({m.reason}), a = {m.value}")
