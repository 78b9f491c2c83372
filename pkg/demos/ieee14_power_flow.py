"""Solve the IEEE 14-bus case with Newton-Raphson and print a bus report.

Run from the repository root:

    python demos/ieee14_power_flow.py
"""

import numpy as np

from gridflows import data_path
from gridflows.cdf import read_cdf
from gridflows.powerflow import SolverConfig, solve

case = read_cdf(data_path("ieee14.cdf"))
print(f"{case.title}: {len(case.buses)} buses, {len(case.branches)} branches, {case.mva_base} MVA base")

sol = solve(case, SolverConfig("nr", tolerance=1e-8))
print(f"converged in {sol.iterations} iterations, max mismatch {sol.mismatch:.2e} pu\n")

print(" bus  type   kV     |V| pu   angle deg    P MW     Q Mvar")
for b, vm, va, s in zip(case.buses, sol.v_mag, sol.v_ang_deg, sol.injections * case.mva_base):
    print(f"{b.number:4d}  {b.bus_type.value:5s} {b.base_kv:5.1f}  {vm:8.4f}  {va:9.3f}  {s.real:8.2f}  {s.imag:8.2f}")

# Losses follow from the two branch-end powers; the shunt at bus 9 adds reactive support.
loss = np.sum(sol.losses) * case.mva_base
print(f"\ntotal branch losses: {loss.real:.3f} MW, {loss.imag:.3f} Mvar")
worst = int(np.argmax(np.abs(sol.s_from)))
f, t = sol.branch_ends[worst]
print(f"most loaded branch: {f}-{t} carrying {abs(sol.s_from[worst]) * case.mva_base:.1f} MVA")
