"""Hamiltonians of the benchmark problems, as potential-energy functions.

Every Hamiltonian has kinetic part -1/(2m) sum_j d^2/dr_j^2 (m = 1 except for
the oscillator, whose mass is a parameter); the classes below only supply
``V(r, t)``. Positions are flat arrays of length d*N; a leading batch axis is
allowed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

# Walkers closer than this to a nucleus or another electron are rejected.
COULOMB_EXCLUSION_RADIUS = 1e-6

H2_BOND_HALF_LENGTH = 1.393038
H2_NUCLEI = (((-H2_BOND_HALF_LENGTH, 0.0, 0.0), 1.0),
             ((H2_BOND_HALF_LENGTH, 0.0, 0.0), 1.0))


def _split(r, d: int):
  r = jnp.asarray(r)
  return r.reshape(r.shape[:-1] + (r.shape[-1] // d, d))


def _pair_sq_sum(x):
  # sum_{i<j} (x_i - x_j)^2 = N sum x^2 - (sum x)^2, per coordinate axis
  n = x.shape[-1]
  return n * jnp.sum(x * x, axis=-1) - jnp.sum(x, axis=-1) ** 2


@dataclass(frozen=True)
class HarmonicOscillator1D:
  omega: float = 1.0
  mass: float = 1.0
  d: int = 1

  @property
  def kinetic_prefactor(self) -> float:
    return 0.5 / self.mass

  def potential(self, r, t):
    r = jnp.asarray(r)
    return 0.5 * self.mass * self.omega**2 * jnp.sum(r * r, axis=-1)

  def singular(self, r) -> np.ndarray:
    return np.zeros(np.shape(r)[:-1], dtype=bool)


@dataclass(frozen=True)
class TrappedInteracting1D:
  """Harmonic trap with quadratic pair interaction, quenched at t = 0.

  V = sum_i w(t)^2 r_i^2 / 2 + g(t)/2 sum_{i<j} (r_i - r_j)^2 with
  (w, g) = (omega0, g0) before the quench and (omega_f, g0 / L(t)^4) after.
  The g/2 convention is the one under which the exact scaling solution
  annihilates the TDSE residual.
  """
  omega0: float = 1.0
  omega_f: float = 2.0
  g0: float = 1.0
  d: int = 1
  kinetic_prefactor: float = 0.5

  def scale(self, t):
    """Scaling function L(t) of the post-quench dynamics."""
    a = (self.omega_f**2 - self.omega0**2) / (2 * self.omega_f**2)
    c = (self.omega_f**2 + self.omega0**2) / (2 * self.omega_f**2)
    return jnp.sqrt(a * jnp.cos(2 * self.omega_f * t) + c)

  def interaction(self, t):
    t = jnp.asarray(t, dtype=jnp.float64)
    return jnp.where(t < 0, self.g0, self.g0 / self.scale(t)**4)

  def trap_frequency(self, t):
    t = jnp.asarray(t, dtype=jnp.float64)
    return jnp.where(t < 0, self.omega0, self.omega_f)

  def potential(self, r, t):
    r = jnp.asarray(r)
    w = self.trap_frequency(t)
    g = self.interaction(t)
    return 0.5 * w**2 * jnp.sum(r * r, axis=-1) + 0.5 * g * _pair_sq_sum(r)

  def singular(self, r) -> np.ndarray:
    return np.zeros(np.shape(r)[:-1], dtype=bool)


@dataclass(frozen=True)
class Coulomb3D:
  """Electrons and fixed point nuclei; nuclear repulsion is omitted."""
  nuclei: tuple = (((0.0, 0.0, 0.0), 1.0),)
  d: int = 3
  kinetic_prefactor: float = 0.5

  def _nuclear_arrays(self):
    pos = jnp.asarray([p for p, _ in self.nuclei], dtype=jnp.float64)
    z = jnp.asarray([q for _, q in self.nuclei], dtype=jnp.float64)
    return pos, z

  def coulomb(self, r):
    x = _split(r, 3)  # (..., N, 3)
    pos, z = self._nuclear_arrays()
    en = jnp.linalg.norm(x[..., :, None, :] - pos, axis=-1)
    v = -jnp.sum(z / en, axis=(-1, -2))
    n = x.shape[-2]
    for i in range(n):
      for j in range(i + 1, n):
        v = v + 1.0 / jnp.linalg.norm(x[..., i, :] - x[..., j, :], axis=-1)
    return v

  def potential(self, r, t):
    return self.coulomb(r)

  def singular(self, r) -> np.ndarray:
    x = np.asarray(r).reshape(np.shape(r)[:-1] + (-1, 3))
    pos = np.asarray([p for p, _ in self.nuclei])
    close = (np.linalg.norm(x[..., :, None, :] - pos, axis=-1)
             < COULOMB_EXCLUSION_RADIUS).any(axis=(-1, -2))
    n = x.shape[-2]
    for i in range(n):
      for j in range(i + 1, n):
        close |= (np.linalg.norm(x[..., i, :] - x[..., j, :], axis=-1)
                  < COULOMB_EXCLUSION_RADIUS)
    return close


def laser_ramp(t, period):
  """Trapezoidal envelope s(t): ramp up over one period, hold, ramp down."""
  u = jnp.asarray(t, dtype=jnp.float64) / period
  return jnp.where(u < 0, 0.0,
                   jnp.where(u < 1, u,
                             jnp.where(u < 2, 1.0,
                                       jnp.where(u < 3, 3.0 - u, 0.0))))


@dataclass(frozen=True)
class MolecularLaser(Coulomb3D):
  """Coulomb system driven in the length gauge by a field along x."""
  nuclei: tuple = H2_NUCLEI
  field_max: float = 0.07
  omega: float = 0.1

  @property
  def period(self) -> float:
    return 2 * math.pi / self.omega

  def field(self, t):
    t = jnp.asarray(t, dtype=jnp.float64)
    return self.field_max * laser_ramp(t, self.period) * jnp.sin(self.omega * t)

  def potential(self, r, t):
    x = _split(r, 3)
    return self.coulomb(r) - self.field(t) * jnp.sum(x[..., 0], axis=-1)


HamiltonianKind = (HarmonicOscillator1D | TrappedInteracting1D | Coulomb3D
                   | MolecularLaser)


def potential(h, r, t):
  return h.potential(r, t)


def hamiltonian_from_dict(cfg: dict):
  kind = cfg["kind"]
  args = {k: v for k, v in cfg.items() if k != "kind"}
  if "nuclei" in args:
    args["nuclei"] = tuple((tuple(n["position"]), float(n["charge"]))
                           for n in args["nuclei"])
  classes = {
      "harmonic_oscillator_1d": HarmonicOscillator1D,
      "trapped_interacting_1d": TrappedInteracting1D,
      "coulomb_3d": Coulomb3D,
      "molecular_laser": MolecularLaser,
  }
  if kind not in classes:
    raise ValueError(f"unknown hamiltonian kind {kind!r}")
  return classes[kind](**args)
