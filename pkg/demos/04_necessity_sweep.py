#!/usr/bin/env python3
"""Uniform attractivity needs an excited vector field.

For every catalog system the script asks two independent questions:

* is the settling time independent of t0 (uniformity probe)?
* is |F(t, x)| excited on an annulus of states, without fading in t?

and files the system into a 3 x 2 table.  A system that is uniform but
whose vector field is not excited would contradict the necessity result;
that cell should stay empty.  The other cells are all allowed: excitation
alone does not make a rotation attractive.
"""

from pelab.cli import load_config, run_necessity_sweep
from pelab.stability_probe import contingency_table

params = load_config("necessity.json").analysis[0]["params"]
reports = run_necessity_sweep(params["systems"], params)

print(f"{'system':<32} {'verdict':<13} excited")
for r in reports:
    print(f"{r.label:<32} {r.verdict:<13} {r.udpe}")

print()
for cell, systems in contingency_table(reports).items():
    print(f"{cell:<24} {len(systems)}  {', '.join(systems)}")
