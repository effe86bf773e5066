"""H2 in a linearly polarised laser, length gauge.

Only the pieces are shown here: geometry, the trapezoidal pulse, the coupled
potential and the dipole estimator. Training the laser-driven molecule to
publication quality needs far more compute than a desk machine.
"""
import math

import jax.numpy as jnp
import numpy as np

from tdsenet import oracles
from tdsenet.hamiltonian import MolecularLaser, laser_ramp
from tdsenet.metrics import mc_observable

h = MolecularLaser()
(a, qa), (b, qb) = h.nuclei
print(f"protons at x = {a[0]} and {b[0]}, bond {b[0] - a[0]:.6f} bohr")
print(f"field max {h.field_max}, omega {h.omega}, period {h.period:.3f}")

# %% s(t) ramps up over one period, holds one, ramps down over the third
for frac in np.arange(0, 3.5, 0.25):
  t = frac * h.period
  s = float(laser_ramp(t, h.period))
  e = float(h.field(t))
  print(f"  t/T={frac:4.2f}  s={s:4.2f}  E={e:+.4f} {'*' * int(20 * s)}")

# %% two electrons: V = Coulomb - E(t) (x1 + x2)
r = jnp.array([0.5, 0.2, -0.1, -2.0, 0.3, 0.4])
t = 1.25 * h.period
print("coulomb part", float(h.coulomb(r)))
print("laser part  ", float(h.potential(r, t) - h.coulomb(r)),
      "= -E(t) * (0.5 - 2.0) with E =", float(h.field(t)))

# %% dipole -<sum x_i> on a state that has one: (1s + 2p_x)/sqrt2 in hydrogen
mix = oracles.HydrogenSuperposition((((1, 0, "s"), 1 / math.sqrt(2)),
                                     ((2, 1, "p_x"), 1 / math.sqrt(2))))
ts = np.linspace(0, 16 * math.pi / 3, 5)
d = mc_observable(mix, "dipole", ts, seed=0)
exact = -128 * math.sqrt(2) / 243 * np.cos(3 * ts / 8)
for t, v, e, w in zip(ts, d.values, d.stderr, exact):
  print(f"  t={t:6.3f}  dipole {v:+.4f} +- {e:.4f}   exact {w:+.4f}")
