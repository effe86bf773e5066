"""Two interacting fermions after a trap quench (omega 1 -> 2).

The exact state is a rescaled copy of the initial one, so sum <x_i^2> follows
L(t)^2 M(0), with L from the Ermakov equation. We check that first, then
compare against a network trained on the first 0.42 time units.

  python demos/02_fermion_breathing.py --run runs/fermion2
"""
import argparse
import math

import numpy as np

from tdsenet import oracles
from tdsenet.metrics import mc_observable

parser = argparse.ArgumentParser()
parser.add_argument("--run", help="directory written by `tdsenet train` "
                    "with demos/configs/fermion2.json")
args = parser.parse_args()

f = oracles.FermionScaling(2)
m0 = f.initial_monopole()
print(f"E0 = {f.ground_energy:.12f}, M(0) = {m0:.10f}")

# %% breathing period pi/omega_f: L^2 swings between 1 and 1/4 and back
ts = np.linspace(0, math.pi / 2, 9)
ref = oracles.monopole_ref(ts, m0=m0)
for t, m in zip(ts, ref):
  print(f"  t={t:5.3f}  L^2 M(0) = {m:.5f}  {'#' * int(40 * m / m0)}")

# %% the sampler reproduces it from |psi|^2 alone
s = mc_observable(f, "monopole", ts[::2], n_samples=2048, seed=3)
z = (s.values - ref[::2]) / s.stderr
print("oracle MC z-scores", np.round(z, 2))

# %% a trained run, if one was given
if args.run:
  from tdsenet.cli import open_run
  view, sol, _ = open_run(args.run)
  horizon = sol.plan.horizon
  tt = np.linspace(0, horizon, 8)
  got = mc_observable(view, "monopole", tt, seed=0)
  want = oracles.monopole_ref(tt, m0=m0)
  for t, v, e, w in zip(tt, got.values, got.stderr, want):
    print(f"  t={t:5.3f}  network {v:.4f} +- {e:.4f}   exact {w:.4f}   "
          f"off by {abs(v - w) / w:.1%}")
