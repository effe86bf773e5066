"""Hydrogen: stationary states only rotate their phase.

For |1s> the autocorrelation <psi(0)|psi(t)> is exp(+i t/2), so its phase
grows with slope -E_1 = 0.5. A short superposition shows the beat instead.

  python demos/03_hydrogen_phase.py --run runs/hydrogen_1s
"""
import argparse

import numpy as np

from tdsenet import oracles
from tdsenet.metrics import mc_observable, rel_l2_error

parser = argparse.ArgumentParser()
parser.add_argument("--run", help="directory trained from "
                    "demos/configs/hydrogen_1s.json")
args = parser.parse_args()

ts = np.linspace(0, 1, 11)

# %% oracle: the phase is exact, the magnitude stays at one
s = mc_observable(oracles.oracle_from_name("h1s"), "overlap", ts, seed=0)
print("oracle |<0|t>|", np.round(np.abs(s.values), 12))
print("oracle slope  ", np.polyfit(ts, np.unwrap(np.angle(s.values)), 1)[0])

# %% 1s + 2p_z: overlap modulus beats at the level spacing 3/8
beat = oracles.oracle_from_name("h1s2p_z")
tb = np.linspace(0, 16.8, 8)
b = mc_observable(beat, "overlap", tb, seed=1)
print("beat |<0|t>|  ", np.round(np.abs(b.values), 3))
print("expected      ", np.round(np.abs(0.5 + 0.5 * np.exp(-0.375j * tb)), 3))

# %% trained network
if args.run:
  from tdsenet.cli import open_run
  view, _, _ = open_run(args.run)
  n = mc_observable(view, "overlap", ts, seed=0)
  phase = np.unwrap(np.angle(n.values))
  slope = np.polyfit(ts, phase, 1)[0]
  print(f"network slope {slope:.5f} (target 0.5, off by "
        f"{abs(slope - 0.5) / 0.5:.2%})")
  rep = rel_l2_error(view, oracles.oracle_from_name("h1s"), 1.0,
                     time_order=8, space_order=32)
  print(f"network rel_l2 {rep.rel_l2:.3e}")
