"""Residual, initial-condition and continuity losses and their gradients.

All functions take a log-wavefunction ``fn(params, r, t) -> (log|psi|, arg psi)``
(a plain callable or a ``WavefunctionProgram``) and a Hamiltonian object
from :mod:`tdsenet.hamiltonian`.

Residual points are grouped into time slices: arrays of shape
``(n_slices, per_slice, n_coords)`` with times ``(n_slices, per_slice)``.
Slices are averaged first and slice means are then averaged, so every slice
carries equal weight regardless of how many of its points are masked out.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from tdsenet.autodiff import (DerivativeBundle, WavefunctionProgram,
                              batched_bundle, bundle)

__all__ = [
    "LossWeights", "SampleBatch", "local_energy", "residual_density",
    "residual_loss", "initial_loss", "continuity_penalties",
    "BoundaryTargets", "boundary_targets", "continuity_from_targets",
    "residual_grad", "residual_surrogate", "winsorize_weights",
    "WINSOR_MADS",
]

WINSOR_MADS = 5.0


def _fn(program):
  return program.fn if isinstance(program, WavefunctionProgram) else program


@dataclass(frozen=True)
class LossWeights:
  residual: float = 1.0
  initial: float = 10.0
  value: float = 1.0
  time_derivative: float = 1.0
  gradient: float = 1.0

  def __post_init__(self):
    vals = (self.residual, self.initial, self.value, self.time_derivative,
            self.gradient)
    if any(v < 0 for v in vals):
      raise ValueError(f"loss weights must be non-negative, got {vals}")
    if not any(v > 0 for v in vals):
      raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class SampleBatch:
  """Residual points grouped by time slice plus initial-condition points.

  ``mask`` marks points whose derivative bundle is usable; masked-out points
  contribute nothing to any loss or gradient.
  """
  points: np.ndarray                  # (n_slices, per_slice, n_coords)
  times: np.ndarray                   # (n_slices, per_slice)
  initial_points: np.ndarray | None = None
  mask: np.ndarray | None = None

  def __post_init__(self):
    pts = np.asarray(self.points, dtype=np.float64)
    if pts.ndim != 3:
      raise ValueError(f"points must have shape (slices, per_slice, coords), "
                       f"got {pts.shape}")
    ts = np.broadcast_to(np.asarray(self.times, dtype=np.float64)
                         .reshape(-1, 1) if np.ndim(self.times) == 1
                         else np.asarray(self.times, dtype=np.float64),
                         pts.shape[:2])
    mask = (np.ones(pts.shape[:2], dtype=bool) if self.mask is None
            else np.asarray(self.mask, dtype=bool))
    object.__setattr__(self, "points", pts)
    object.__setattr__(self, "times", np.array(ts))
    object.__setattr__(self, "mask", mask)

  @property
  def n_slices(self) -> int:
    return self.points.shape[0]

  @property
  def per_slice(self) -> int:
    return self.points.shape[1]

  @property
  def size(self) -> int:
    return self.n_slices * self.per_slice


def local_energy(b: DerivativeBundle, r, t, h):
  """(H psi)/psi from a derivative bundle; works on single points or batches.

  Invalid bundles give NaN so the node flag cannot be silently ignored.
  """
  kinetic = -h.kinetic_prefactor * (b.laplacian_log
                                    + jnp.sum(b.grad_r**2, axis=-1))
  e = kinetic + h.potential(r, t)
  return jnp.where(b.valid, e, jnp.nan)


def residual_density(b: DerivativeBundle, r, t, h):
  """|i d/dt log psi - E_L|^2."""
  diff = 1j * b.dlog_dt - local_energy(b, r, t, h)
  return jnp.real(diff) ** 2 + jnp.imag(diff) ** 2


def _pointwise_residual(fn, params, r, t, h):
  b = bundle(fn, params, r, t)
  return residual_density(b, r, t, h), b.log_psi.real, b.valid


def winsorize_weights(rho, mask, n_mads: float = WINSOR_MADS):
  """Per-slice factors min(1, cap / rho) with cap = median + n_mads * MAD.

  Computed without gradient so the clipped points still pass their
  (scaled) gradient through.
  """
  rho = jax.lax.stop_gradient(rho)
  masked = jnp.where(mask, rho, jnp.nan)
  med = jnp.nanmedian(masked, axis=-1, keepdims=True)
  mad = jnp.nanmedian(jnp.abs(masked - med), axis=-1, keepdims=True)
  cap = med + n_mads * mad
  safe = jnp.where(rho > 0, rho, 1.0)
  return jnp.where((rho > cap) & (cap > 0), cap / safe, 1.0)


def _slice_mean(values, weights):
  per_slice = (jnp.sum(values * weights, axis=-1)
               / jnp.maximum(jnp.sum(weights, axis=-1), 1e-300))
  return jnp.mean(per_slice)


def residual_surrogate(program, params, points, times, mask, ref_logabs, h,
                       winsorize: bool = True):
  """Importance-weighted residual loss whose gradient is the score estimator.

  Points were drawn from |psi_ref|^2 where ``ref_logabs`` holds log|psi_ref|
  at them. Each slice is self-normalised with weights |psi|^2 / |psi_ref|^2.
  When ``params`` are the sampling parameters the value is the plain batch
  mean of the residual density and the gradient equals the score-weighted,
  baseline-subtracted, pathwise estimator; with a frozen batch and moving
  parameters it stays a deterministic function, which line searches need.

  Returns ``(loss, rho)``.
  """
  fn = _fn(program)
  f = jax.vmap(jax.vmap(lambda r, t: _pointwise_residual(fn, params, r, t, h)))
  rho, logabs, valid = f(points, times)
  use = mask & valid
  rho = jnp.where(use, rho, 0.0)
  log_w = jnp.where(use, 2.0 * (logabs - ref_logabs), -jnp.inf)
  # subtracting the per-slice max keeps the weights finite
  log_w = log_w - jax.lax.stop_gradient(
      jnp.max(jnp.where(use, log_w, -1e300), axis=-1, keepdims=True))
  w = jnp.where(use, jnp.exp(jnp.where(use, log_w, 0.0)), 0.0)
  if winsorize:
    rho = rho * winsorize_weights(rho, use)
  return _slice_mean(rho, w), rho


def _batch_arrays(batch: SampleBatch):
  return (jnp.asarray(batch.points), jnp.asarray(batch.times),
          jnp.asarray(batch.mask))


def residual_loss(program, params, batch: SampleBatch, h,
                  winsorize: bool = False) -> float:
  """Slice-averaged mean residual density over a batch."""
  if batch.size == 0:
    raise ValueError("empty residual batch")
  points, times, mask = _batch_arrays(batch)
  fn = _fn(program)
  logabs = jax.vmap(jax.vmap(lambda r, t: fn(params, r, t)[0]))(points, times)
  loss, _ = residual_surrogate(fn, params, points, times, mask,
                               jax.lax.stop_gradient(logabs), h, winsorize)
  return float(loss)


def initial_loss(program, params, psi0, points) -> jnp.ndarray:
  """Mean |psi(r, 0) - psi0(r)|^2 over points drawn from |psi0|^2.

  ``psi0`` is any object with a ``log_psi(r, t)`` method (the oracles) or a
  callable returning complex values for a batch.
  """
  points = jnp.asarray(points, dtype=jnp.float64)
  if points.shape[0] == 0:
    raise ValueError("empty initial batch")
  target = _initial_values(psi0, points)
  return _initial_loss_against(program, params, points, target)


def _initial_values(psi0, points):
  if hasattr(psi0, "log_psi"):
    la, ph = jax.vmap(lambda r: psi0.log_psi(r, 0.0))(points)
    return jnp.exp(la + 1j * ph)
  return jnp.asarray(psi0(points))


def _initial_loss_against(program, params, points, target):
  fn = _fn(program)
  la, ph = jax.vmap(lambda r: fn(params, r, 0.0))(points)
  diff = jnp.exp(la + 1j * ph) - target
  return jnp.mean(jnp.real(diff) ** 2 + jnp.imag(diff) ** 2)


class BoundaryTargets(NamedTuple):
  """psi, d psi/dt and grad psi of the previous interval's network."""
  psi: jnp.ndarray
  dpsi_dt: jnp.ndarray
  grad_psi: jnp.ndarray


def boundary_targets(program, params, t_boundary, points) -> BoundaryTargets:
  fn = _fn(program)
  b = batched_bundle(fn, params, jnp.asarray(points, dtype=jnp.float64),
                     t_boundary)
  psi = jnp.exp(b.log_psi)
  return BoundaryTargets(psi, psi * b.dlog_dt, psi[:, None] * b.grad_r)


def _sq(z):
  return jnp.real(z) ** 2 + jnp.imag(z) ** 2


def continuity_from_targets(program, params, t_boundary, points,
                            targets: BoundaryTargets):
  """(L_value, L_time, L_space) of ``params`` against frozen targets."""
  new = boundary_targets(program, params, t_boundary, points)
  return (jnp.mean(_sq(new.psi - targets.psi)),
          jnp.mean(_sq(new.dpsi_dt - targets.dpsi_dt)),
          jnp.mean(jnp.sum(_sq(new.grad_psi - targets.grad_psi), axis=-1)))


def continuity_penalties(program, params_new, params_old, t_boundary, points):
  """Mean squared mismatch of psi, d psi/dt and grad psi at the boundary."""
  old = boundary_targets(program, params_old, t_boundary, points)
  return tuple(float(x) for x in continuity_from_targets(
      program, params_new, t_boundary, points, old))


def residual_grad(program, params, batch: SampleBatch, h,
                  winsorize: bool = False) -> np.ndarray:
  """Explicit three-term gradient estimate of the residual loss.

  Per slice: mean[(grad log psi* + grad log psi) rho] minus
  mean[grad log psi* + grad log psi] * mean[rho], plus mean[grad rho];
  then averaged over slices. Per-point parameter gradients are formed
  explicitly, so this is meant for checking rather than training.
  """
  points, times, mask = _batch_arrays(batch)
  counts = np.asarray(batch.mask).sum(axis=-1)
  if batch.n_slices == 0 or np.any(counts < 2):
    raise ValueError("every time slice needs at least two usable points")
  fn = _fn(program)

  def point_terms(r, t):
    rho_fn = lambda p: _pointwise_residual(fn, p, r, t, h)[0]
    score = jax.grad(lambda p: fn(p, r, t)[0])(params)
    rho, drho = jax.value_and_grad(rho_fn)(params)
    return rho, 2.0 * score, drho

  rho, score2, drho = jax.vmap(jax.vmap(point_terms))(points, times)
  maskf = mask.astype(jnp.float64)
  if winsorize:
    c = winsorize_weights(rho, mask)
    rho, drho = rho * c, drho * c[..., None]
  n = jnp.sum(maskf, axis=-1, keepdims=True)
  m = maskf[..., None]
  mean = lambda x: jnp.sum(x * m, axis=1) / n
  term_score = mean(score2 * rho[..., None])
  baseline = mean(score2) * (jnp.sum(rho * maskf, axis=-1, keepdims=True) / n)
  path = mean(drho)
  return np.asarray(jnp.mean(term_score - baseline + path, axis=0))
