"""Harmonic oscillator walkthrough.

Train the ground state |0> over t in [0, pi], then compare the network with
the closed-form solution psi(x, t) = pi^-1/4 exp(-x^2/2 - i t/2).

  python demos/01_harmonic_oscillator.py            # shipped budget, ~6 min
  python demos/01_harmonic_oscillator.py --quick    # smoke run, ~1 min
"""
import argparse
import math
from pathlib import Path

import numpy as np

from tdsenet import oracles
from tdsenet.cli import main, open_run
from tdsenet.metrics import mc_observable, rel_l2_error

HERE = Path(__file__).parent
parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true")
parser.add_argument("--out", default="runs/demo_ho0")
args = parser.parse_args()

# %% the reference first: the oracle solves the equation to rounding
ho = oracles.oracle_from_name("ho0")
x = np.linspace(-3, 3, 7)[:, None]
print("|psi(x, 1)|   ", np.round(np.abs(ho.values(x, 1.0)), 6))
print("arg psi(0, 1) ", float(np.angle(ho.values(np.zeros((1, 1)), 1.0))[0]),
      "(expect -0.5)")

# %% train from the shipped config; --set overrides any key
overrides = []
if args.quick:
  overrides = ["--set", "train.stage1.steps=100", "--set",
               "train.stage2.outer_rounds=2", "--set",
               "train.stage2.lbfgs_steps_per_round=50"]
code = main(["train", "--config", str(HERE / "configs" / "ho0.json"),
             "--out", args.out, *overrides])
print("train exit code", code)

# %% global error: one complex scale fitted at t=0, then held fixed
view, solution, _ = open_run(args.out)
rep = rel_l2_error(view, ho, math.pi)
print(f"rel_l2 over [0, pi]: {rep.rel_l2:.3e}")
for t, num, den in rep.per_time_errors[::8]:
  print(f"  t={t:5.3f}  slice error {math.sqrt(num / den):.2e}")

# %% a stationary state keeps <x^2> = 1/2 at all times
s = mc_observable(view, "monopole", [0.0, 1.5, 3.0], seed=1)
for row in s.rows():
  print(f"  <x^2>(t={row['time']:.1f}) = {row['value']:.4f} +- "
        f"{row['stderr']:.4f}")
