"""Closed-form reference solutions for the benchmark problems.

Each state exposes ``log_psi(r, t) -> (log|psi|, arg psi)`` for one flat
configuration (JAX-traceable, so derivative bundles of the exact solutions
can be formed) plus vectorised helpers. States can also be wrapped as a
parameter-free ``WavefunctionProgram``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from tdsenet import numerics
from tdsenet.autodiff import WavefunctionProgram
from tdsenet.hamiltonian import (Coulomb3D, HarmonicOscillator1D,
                                 TrappedInteracting1D, potential)

__all__ = [
    "AnalyticState", "HOSuperposition", "FermionScaling",
    "HydrogenSuperposition", "ScalingFunctions", "scaling_functions",
    "ho_state", "fermion_psi", "monopole_ref", "hydrogen_state", "potential",
    "oracle_from_name", "oracle_from_dict", "ORACLE_NAMES",
]


class AnalyticState:
  """Base class: subclasses implement ``log_psi`` for a flat configuration."""
  n_coords: int
  d: int

  def log_psi(self, r, t):
    raise NotImplementedError

  def value(self, r, t):
    logabs, phase = self.log_psi(jnp.asarray(r, dtype=jnp.float64), t)
    return jnp.exp(logabs + 1j * phase)

  def values(self, rs, ts):
    """Complex psi for a batch ``rs`` of shape (B, n_coords)."""
    rs = jnp.asarray(rs, dtype=jnp.float64)
    ts = jnp.broadcast_to(jnp.asarray(ts, dtype=jnp.float64), rs.shape[:1])
    logabs, phase = jax.vmap(self.log_psi)(rs, ts)
    return jnp.exp(logabs + 1j * phase)

  def log_density(self, rs, t=0.0):
    rs = jnp.asarray(rs, dtype=jnp.float64)
    ts = jnp.broadcast_to(jnp.asarray(t, dtype=jnp.float64), rs.shape[:1])
    return 2.0 * jax.vmap(self.log_psi)(rs, ts)[0]

  def program(self) -> WavefunctionProgram:
    return WavefunctionProgram(lambda params, r, t: self.log_psi(r, t),
                               jnp.zeros(1), self.n_coords)

  def hamiltonian(self):
    raise NotImplementedError


def _log_complex(z):
  re, im = jnp.real(z), jnp.imag(z)
  return 0.5 * jnp.log(re * re + im * im), jnp.arctan2(im, re)


# ---------------------------------------------------------------------------
# 1D harmonic oscillator


def _ho_norm(n: int, mass: float = 1.0, omega: float = 1.0) -> float:
  return ((mass * omega / math.pi) ** 0.25
          / math.sqrt(2.0**n * math.factorial(n)))


@dataclass(frozen=True)
class HOSuperposition(AnalyticState):
  """sum_n c_n psi_n(r) exp(-i E_n t) with E_n = omega (n + 1/2)."""
  coeffs: tuple = ((0, 1.0),)
  omega: float = 1.0
  mass: float = 1.0
  n_coords: int = 1
  d: int = 1

  def log_psi(self, r, t):
    x = jnp.asarray(r)[0]
    s = math.sqrt(self.mass * self.omega)
    poly = 0.0 + 0.0j
    for n, c in self.coeffs:
      energy = self.omega * (n + 0.5)
      poly = poly + (c * _ho_norm(n, self.mass, self.omega)
                     * numerics.hermite(n, s * x)
                     * jnp.exp(-1j * energy * t))
    logabs, phase = _log_complex(poly)
    return logabs - 0.5 * self.mass * self.omega * x * x, phase

  def hamiltonian(self):
    return HarmonicOscillator1D(omega=self.omega, mass=self.mass)


def ho_state(coeffs, r, t):
  return HOSuperposition(tuple(coeffs)).value(jnp.atleast_1d(r), t)


# ---------------------------------------------------------------------------
# quenched interacting fermions


class ScalingFunctions(NamedTuple):
  L: jnp.ndarray
  tau: jnp.ndarray
  F: jnp.ndarray
  R: jnp.ndarray
  g_t: jnp.ndarray


def _scaling_constants(omega0, omega_f):
  a = (omega_f**2 - omega0**2) / (2 * omega_f**2)
  c = (omega_f**2 + omega0**2) / (2 * omega_f**2)
  return a, c


def scale_and_derivatives(t, omega0, omega_f):
  """L, dL/dt and d^2L/dt^2, all analytic."""
  a, c = _scaling_constants(omega0, omega_f)
  t = jnp.asarray(t, dtype=jnp.float64)
  cos2 = jnp.cos(2 * omega_f * t)
  sin2 = jnp.sin(2 * omega_f * t)
  L = jnp.sqrt(a * cos2 + c)
  Ldot = -a * omega_f * sin2 / L
  Lddot = -2 * a * omega_f**2 * cos2 / L - Ldot**2 / L
  return L, Ldot, Lddot


def scaled_time(t, omega0, omega_f):
  t = jnp.asarray(t, dtype=jnp.float64)
  theta = omega_f * t
  # reduce with the same branch index that is added back, so the arctan
  # branch and the offset switch together at the poles of tan
  k = jnp.floor(theta / math.pi + 0.5)
  reduced = theta - k * math.pi
  return (jnp.arctan(omega0 / omega_f * jnp.tan(reduced)) + k * math.pi) / omega0


def scaling_functions(t, omega0: float = 1.0, omega_f: float = 2.0,
                      g0: float = 1.0, n: int = 2) -> ScalingFunctions:
  L, Ldot, _ = scale_and_derivatives(t, omega0, omega_f)
  return ScalingFunctions(
      L=L,
      tau=scaled_time(t, omega0, omega_f),
      F=Ldot / (2 * L),
      R=L ** (n * 1 / 2),
      g_t=g0 / L**4,
  )


@dataclass(frozen=True)
class FermionScaling(AnalyticState):
  """Exact post-quench state of N spin-polarised fermions in a 1D trap.

  Starts in the interacting ground state
  Phi(y) = V(y) exp(-w/2 sum y^2 - (1-w)/(2N) (sum y)^2), w = sqrt(1 + N g0^2),
  and evolves as R^{-1} exp(i F sum r^2) Phi(r / L, tau) exp(-i E0 tau).
  """
  n: int = 2
  omega0: float = 1.0
  omega_f: float = 2.0
  g0: float = 1.0
  d: int = 1
  # swappable so the self-test can check that a broken factor is caught
  vandermonde: Callable = field(default=numerics.vandermonde, compare=False,
                                repr=False)

  def __post_init__(self):
    if self.g0 != 1.0:
      raise ValueError("the scaling solution is only supported for g0 = 1")

  @property
  def n_coords(self) -> int:
    return self.n

  @property
  def omega(self) -> float:
    return math.sqrt(1.0 + self.n * self.g0**2)

  @property
  def ground_energy(self) -> float:
    return 0.5 * (1.0 + (self.n**2 - 1) * self.omega)

  def ground_log_psi(self, y):
    """log of Phi(y) without the time factor."""
    w, n = self.omega, self.n
    v = self.vandermonde(y)
    logabs = (jnp.log(jnp.abs(v)) - 0.5 * w * jnp.sum(y * y)
              - (1 - w) / (2 * n) * jnp.sum(y) ** 2)
    return logabs, jnp.arctan2(0.0, v)

  def log_psi(self, r, t):
    r = jnp.asarray(r)
    sf = scaling_functions(t, self.omega0, self.omega_f, self.g0, self.n)
    logabs, phase = self.ground_log_psi(r / sf.L)
    logabs = logabs - jnp.log(sf.R)
    phase = phase + sf.F * jnp.sum(r * r) - self.ground_energy * sf.tau
    return logabs, phase

  def hamiltonian(self):
    return TrappedInteracting1D(self.omega0, self.omega_f, self.g0)

  def initial_monopole(self, order: int = 64, box: float = 8.0) -> float:
    """Sum_i <r_i^2> at t = 0 by tensor Gauss-Legendre quadrature (N <= 3)."""
    if self.n > 3:
      raise ValueError("tensor quadrature of the monopole supports N <= 3")
    rule = numerics.gauss_legendre(order, -box, box)
    grids = np.meshgrid(*([rule.nodes] * self.n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.ones(len(pts))
    for ax in range(self.n):
      w = w * rule.weights[np.unravel_index(np.arange(len(pts)),
                                            (order,) * self.n)[ax]]
    logabs, _ = jax.vmap(self.ground_log_psi)(jnp.asarray(pts))
    dens = np.exp(2 * np.asarray(logabs))
    dens = np.where(np.isfinite(dens), dens, 0.0)
    return float(np.sum(w * dens * np.sum(pts**2, axis=-1)) / np.sum(w * dens))


def fermion_psi(r, t, n: int = 2, omega0: float = 1.0, omega_f: float = 2.0,
                g0: float = 1.0):
  return FermionScaling(n, omega0, omega_f, g0).value(r, t)


def monopole_ref(t, n: int = 2, omega0: float = 1.0, omega_f: float = 2.0,
                 g0: float = 1.0, m0: float | None = None):
  """L(t)^2 M(0) for the quenched trap."""
  if m0 is None:
    m0 = FermionScaling(n, omega0, omega_f, g0).initial_monopole()
  L, _, _ = scale_and_derivatives(t, omega0, omega_f)
  return np.asarray(L) ** 2 * m0


# ---------------------------------------------------------------------------
# hydrogen


def _hydrogen_norm(n: int, l: int) -> float:
  return math.sqrt((2.0 / n) ** 3 * math.factorial(n - l - 1)
                   / (2 * n * math.factorial(n + l)))


_LABEL_L = {"s": 0, "p_x": 1, "p_y": 1, "p_z": 1, "d_xy": 2, "d_yz": 2,
            "d_xz": 2, "d_z2": 2, "d_x2-y2": 2}


def hydrogen_orbital(n: int, l: int, label: str, v):
  """Real stationary orbital psi_{n,l,label}(v) (atomic units, a = 1)."""
  label = label.replace("²", "2")
  if label not in _LABEL_L or _LABEL_L[label] != l:
    raise ValueError(f"unknown hydrogen orbital ({n}, {l}, {label!r})")
  if not (1 <= n <= 3 and 0 <= l < n):
    raise ValueError(f"unsupported quantum numbers n={n}, l={l}")
  v = jnp.asarray(v)
  q = jnp.sum(v * v, axis=-1)
  nz = q > 0
  r = jnp.where(nz, jnp.sqrt(jnp.where(nz, q, 1.0)), 0.0)
  radial = (_hydrogen_norm(n, l) * jnp.exp(-r / n) * (2.0 / n) ** l
            * numerics.assoc_laguerre(n - l - 1, 2 * l + 1, 2 * r / n))
  return radial * numerics.real_solid_harmonic(l, label, v)


@dataclass(frozen=True)
class HydrogenSuperposition(AnalyticState):
  """sum c psi_{n l label}(v) exp(-i E_n t), E_n = -1/(2 n^2)."""
  terms: tuple = (((1, 0, "s"), 1.0),)
  n_coords: int = 3
  d: int = 3

  def __post_init__(self):
    for (n, l, label), _ in self.terms:
      hydrogen_orbital(n, l, label, jnp.ones(3))

  def log_psi(self, r, t):
    v = jnp.asarray(r)[:3]
    total = 0.0 + 0.0j
    for (n, l, label), c in self.terms:
      energy = -0.5 / n**2
      total = total + c * hydrogen_orbital(n, l, label, v) * jnp.exp(
          -1j * energy * t)
    return _log_complex(total)

  def hamiltonian(self):
    return Coulomb3D()


def hydrogen_state(terms, v, t):
  return HydrogenSuperposition(tuple(terms)).value(v, t)


# ---------------------------------------------------------------------------
# named presets

_S2 = 1 / math.sqrt(2)
_S3 = 1 / math.sqrt(3)
_PRESETS = {
    "ho0": lambda: HOSuperposition(((0, 1.0),)),
    "ho1": lambda: HOSuperposition(((1, 1.0),)),
    "ho2": lambda: HOSuperposition(((2, 1.0),)),
    "ho01": lambda: HOSuperposition(((0, _S2), (1, _S2))),
    "ho02": lambda: HOSuperposition(((0, _S2), (2, _S2))),
    "ho012": lambda: HOSuperposition(((0, _S3), (1, _S3), (2, _S3))),
    "fermion2": lambda: FermionScaling(2),
    "fermion3": lambda: FermionScaling(3),
    "h1s": lambda: HydrogenSuperposition((((1, 0, "s"), 1.0),)),
    "h2s": lambda: HydrogenSuperposition((((2, 0, "s"), 1.0),)),
    "h2p_z": lambda: HydrogenSuperposition((((2, 1, "p_z"), 1.0),)),
    "h3s": lambda: HydrogenSuperposition((((3, 0, "s"), 1.0),)),
    "h1s2p_z": lambda: HydrogenSuperposition(
        (((1, 0, "s"), _S2), ((2, 1, "p_z"), _S2))),
    # (psi_210 - psi_211 + psi_21-1)/sqrt(3) in the real Cartesian basis
    "h2p_x2p_z": lambda: HydrogenSuperposition(
        (((2, 1, "p_z"), _S3), ((2, 1, "p_x"), math.sqrt(2) * _S3))),
    "h1s2s3s": lambda: HydrogenSuperposition(
        (((1, 0, "s"), _S3), ((2, 0, "s"), _S3), ((3, 0, "s"), _S3))),
    "h2s2p_z3d_z2": lambda: HydrogenSuperposition(
        (((2, 0, "s"), _S3), ((2, 1, "p_z"), _S3), ((3, 2, "d_z2"), _S3))),
}
ORACLE_NAMES = tuple(_PRESETS)


def oracle_from_name(name: str) -> AnalyticState:
  if name not in _PRESETS:
    raise ValueError(f"unknown oracle {name!r}; known: {', '.join(_PRESETS)}")
  return _PRESETS[name]()


def oracle_from_dict(cfg: dict) -> AnalyticState:
  """Build an oracle from a config mapping such as
  ``{"kind": "ho", "coeffs": [{"n": 0, "c": 0.7071}, {"n": 1, "c": 0.7071}]}``.
  """
  kind = cfg["kind"]
  if kind == "preset":
    return oracle_from_name(cfg["name"])
  if kind == "ho":
    return HOSuperposition(tuple((int(e["n"]), complex(e["c"]))
                                 for e in cfg["coeffs"]),
                           omega=cfg.get("omega", 1.0),
                           mass=cfg.get("mass", 1.0))
  if kind == "fermion":
    return FermionScaling(int(cfg["n"]), cfg.get("omega0", 1.0),
                          cfg.get("omega_f", 2.0), cfg.get("g0", 1.0))
  if kind == "hydrogen":
    return HydrogenSuperposition(tuple(
        ((int(e["n"]), int(e["l"]), e["label"]), complex(e["c"]))
        for e in cfg["terms"]))
  raise ValueError(f"unknown oracle kind {kind!r}")
