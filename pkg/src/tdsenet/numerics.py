"""Special functions, quadrature rules and complex determinants.

The polynomial and harmonic helpers are written against ``jax.numpy`` so the
analytic reference states built from them can be differentiated; they accept
plain floats and numpy arrays as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import jax.numpy as jnp
import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
  nodes: np.ndarray
  weights: np.ndarray
  interval: tuple[float, float]

  def integrate(self, values) -> float:
    return float(np.sum(self.weights * np.asarray(values)))


def gauss_legendre(n: int, lo: float = -1.0, hi: float = 1.0,
                   tol: float = 1e-14) -> QuadratureRule:
  """Gauss-Legendre rule with ``n`` nodes mapped onto ``[lo, hi]``.

  Roots of P_n are polished by Newton iteration started from the Chebyshev
  guesses cos(pi (i - 1/4) / (n + 1/2)).
  """
  if not (math.isfinite(lo) and math.isfinite(hi)):
    raise ValueError(f"interval bounds must be finite, got ({lo}, {hi})")
  if n < 1:
    raise ValueError(f"need at least one node, got n={n}")
  if not lo < hi:
    raise ValueError(f"need lo < hi, got ({lo}, {hi})")

  i = np.arange(1, n + 1)
  x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
  for _ in range(100):
    p, dp = _legendre_with_derivative(n, x)
    dx = p / dp
    x = x - dx
    if np.max(np.abs(dx)) < tol:
      break
  _, dp = _legendre_with_derivative(n, x)
  w = 2.0 / ((1.0 - x * x) * dp * dp)

  order = np.argsort(x)
  x, w = x[order], w[order]
  half = 0.5 * (hi - lo)
  nodes = lo + half * (x + 1.0)
  return QuadratureRule(nodes=nodes, weights=w * half, interval=(lo, hi))


def _legendre_with_derivative(n: int, x: np.ndarray):
  p0 = np.ones_like(x)
  p1 = x.copy()
  for k in range(2, n + 1):
    p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
  return p1, n * (x * p1 - p0) / (x * x - 1.0)


class LogDet(NamedTuple):
  log_abs: float
  phase: float


def complex_slogdet(m) -> LogDet:
  """log|det M| and arg(det M) by LU with partial pivoting.

  A singular matrix returns ``log_abs = -inf`` and phase 0.
  """
  a = np.array(m, dtype=complex)
  if a.ndim != 2 or a.shape[0] != a.shape[1]:
    raise ValueError(f"expected a square matrix, got shape {a.shape}")
  n = a.shape[0]
  log_abs = 0.0
  phase = 0.0
  for k in range(n):
    p = k + int(np.argmax(np.abs(a[k:, k])))
    pivot = a[p, k]
    if pivot == 0:
      return LogDet(-math.inf, 0.0)
    if p != k:
      a[[k, p]] = a[[p, k]]
      phase += math.pi
    log_abs += math.log(abs(pivot))
    phase += math.atan2(pivot.imag, pivot.real)
    if k + 1 < n:
      factors = a[k + 1:, k] / pivot
      a[k + 1:, k + 1:] -= np.outer(factors, a[k, k + 1:])
  phase = math.remainder(phase, 2 * math.pi)
  if phase == -math.pi:
    phase = math.pi
  return LogDet(log_abs, phase)


def hermite(n: int, x):
  """Physicists' Hermite polynomial H_n(x) by the three-term recurrence."""
  x = jnp.asarray(x)
  h_prev = jnp.ones_like(x)
  if n == 0:
    return h_prev
  h = 2.0 * x
  for k in range(1, n):
    h_prev, h = h, 2.0 * x * h - 2.0 * k * h_prev
  return h


def assoc_laguerre(n: int, k: int, x):
  """Generalised Laguerre polynomial L_n^k(x)."""
  x = jnp.asarray(x)
  l_prev = jnp.ones_like(x)
  if n == 0:
    return l_prev
  l = 1.0 + k - x
  for m in range(1, n):
    l_prev, l = l, ((2 * m + 1 + k - x) * l - (m + k) * l_prev) / (m + 1)
  return l


# Real solid harmonics r^l Y_l(label), Cartesian form.
_SOLID = {
    "s": (0, math.sqrt(1 / (4 * math.pi))),
    "p_x": (1, math.sqrt(3 / (4 * math.pi))),
    "p_y": (1, math.sqrt(3 / (4 * math.pi))),
    "p_z": (1, math.sqrt(3 / (4 * math.pi))),
    "d_xy": (2, math.sqrt(15 / (4 * math.pi))),
    "d_yz": (2, math.sqrt(15 / (4 * math.pi))),
    "d_xz": (2, math.sqrt(15 / (4 * math.pi))),
    "d_z2": (2, math.sqrt(5 / (16 * math.pi))),
    "d_x2-y2": (2, math.sqrt(15 / (16 * math.pi))),
}
ORBITAL_LABELS = tuple(_SOLID)


def real_solid_harmonic(l: int, label: str, v):
  """r^l times the real spherical harmonic named by ``label`` at ``v``.

  ``v`` has a trailing axis of length 3. ``d_z2`` is also accepted as
  ``d_z²``.
  """
  label = label.replace("²", "2")
  if label not in _SOLID:
    raise ValueError(f"unknown orbital label {label!r}")
  family, norm = _SOLID[label]
  if family != l:
    raise ValueError(f"label {label!r} has l={family}, not {l}")
  v = jnp.asarray(v)
  x, y, z = v[..., 0], v[..., 1], v[..., 2]
  if label == "s":
    return norm * jnp.ones_like(x)
  poly = {
      "p_x": lambda: x,
      "p_y": lambda: y,
      "p_z": lambda: z,
      "d_xy": lambda: x * y,
      "d_yz": lambda: y * z,
      "d_xz": lambda: x * z,
      "d_z2": lambda: 2 * z * z - x * x - y * y,
      "d_x2-y2": lambda: x * x - y * y,
  }[label]()
  return norm * poly


def vandermonde(r):
  """prod_{i<j} (r_j - r_i) over the last axis."""
  r = jnp.asarray(r)
  n = r.shape[-1]
  out = jnp.ones(r.shape[:-1], dtype=r.dtype)
  for i in range(n):
    for j in range(i + 1, n):
      out = out * (r[..., j] - r[..., i])
  return out
