"""Relative space-time L2 error and Monte Carlo observables."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from tdsenet import numerics
from tdsenet.sampler import sample_conditional, state_log_psi

__all__ = [
    "StateView", "ErrorReport", "rel_l2_error", "spatial_grid",
    "ObservableSeries", "mc_observable", "OBSERVABLES", "BOX_MASS_TOLERANCE",
]

BOX_MASS_TOLERANCE = 1e-8
OBSERVABLES = ("monopole", "dipole", "overlap")


class StateView:
  """Uniform access to oracles, single parameter sets and piecewise solutions.

  ``params_at(t)`` returns the parameter set responsible for time ``t``.
  """

  def __init__(self, log_psi_fn: Callable, params_at: Callable, n_coords: int,
               d: int, hamiltonian=None):
    self.fn = log_psi_fn
    self.params_at = params_at
    self.n_coords = n_coords
    self.d = d
    self.hamiltonian = hamiltonian
    self._eval = jax.jit(jax.vmap(log_psi_fn, in_axes=(None, 0, None)))

  @classmethod
  def from_oracle(cls, oracle) -> "StateView":
    h = None
    try:
      h = oracle.hamiltonian()
    except NotImplementedError:
      pass
    return cls(state_log_psi(oracle), lambda t: jnp.zeros(1),
               oracle.n_coords, oracle.d, h)

  @classmethod
  def from_params(cls, log_psi_fn, params, n_coords: int, d: int,
                  hamiltonian=None) -> "StateView":
    params = jnp.asarray(params)
    return cls(log_psi_fn, lambda t: params, n_coords, d, hamiltonian)

  @classmethod
  def from_solution(cls, solution, n_coords: int, d: int,
                    hamiltonian=None) -> "StateView":
    return cls(solution.log_psi_fn,
               lambda t: jnp.asarray(solution.params[solution.index(t)]),
               n_coords, d, hamiltonian)

  def log_psi(self, rs, t: float):
    return self._eval(self.params_at(t), jnp.asarray(rs, dtype=jnp.float64),
                      jnp.asarray(t, dtype=jnp.float64))

  def values(self, rs, t: float) -> np.ndarray:
    la, ph = self.log_psi(rs, t)
    return np.asarray(jnp.exp(la + 1j * ph))


def _as_view(x) -> StateView:
  if isinstance(x, StateView):
    return x
  if hasattr(x, "log_psi") and hasattr(x, "n_coords"):
    return StateView.from_oracle(x)
  raise TypeError(f"cannot evaluate {type(x).__name__} as a state")


# ---------------------------------------------------------------------------
# spatial quadrature


@dataclass(frozen=True)
class SpatialGrid:
  points: np.ndarray   # (P, n_coords)
  weights: np.ndarray  # (P,)
  description: dict


def _tensor(rule, dims: int):
  axes = np.meshgrid(*([rule.nodes] * dims), indexing="ij")
  waxes = np.meshgrid(*([rule.weights] * dims), indexing="ij")
  pts = np.stack([a.ravel() for a in axes], axis=-1)
  w = np.prod(np.stack([a.ravel() for a in waxes], axis=-1), axis=-1)
  return pts, w


def _radial_rule(order: int, r_max: float):
  # composite panels resolve the near-nucleus region and the long tail
  edges = [0.0, 2.0, 8.0, r_max]
  nodes, weights = [], []
  for lo, hi in zip(edges[:-1], edges[1:]):
    rule = numerics.gauss_legendre(order, lo, hi)
    nodes.append(rule.nodes)
    weights.append(rule.weights)
  return np.concatenate(nodes), np.concatenate(weights)


def spatial_grid(n_coords: int, d: int, order: int = 64, box: float = 8.0,
                 r_max: float = 40.0, angular_order: int = 16) -> SpatialGrid:
  """Tensor Gauss-Legendre grid on [-box, box]^n (n <= 3), or a spherical
  product grid for one particle in 3D."""
  if d == 3 and n_coords == 3:
    r, wr = _radial_rule(order, r_max)
    mu = numerics.gauss_legendre(angular_order, -1.0, 1.0)
    n_phi = 2 * angular_order
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    R, MU, PHI = np.meshgrid(r, mu.nodes, phi, indexing="ij")
    W = (np.meshgrid(wr * r * r, mu.weights, np.full(n_phi, 2 * math.pi
                                                     / n_phi),
                     indexing="ij"))
    s = np.sqrt(1 - MU * MU)
    pts = np.stack([R * s * np.cos(PHI), R * s * np.sin(PHI), R * MU],
                   axis=-1).reshape(-1, 3)
    w = (W[0] * W[1] * W[2]).ravel()
    return SpatialGrid(pts, w, {"kind": "spherical", "radial_order": order,
                                "r_max": r_max,
                                "angular_order": angular_order})
  if d == 1 and n_coords <= 3:
    rule = numerics.gauss_legendre(order, -box, box)
    pts, w = _tensor(rule, n_coords)
    return SpatialGrid(pts, w, {"kind": f"tensor{n_coords}d", "order": order,
                                "box": box})
  raise ValueError(f"no quadrature grid for {n_coords} coordinates in {d}D; "
                   "use Monte Carlo observables instead")


# ---------------------------------------------------------------------------
# relative L2 error


@dataclass
class ErrorReport:
  rel_l2: float
  per_time_errors: list            # (t, numerator, denominator)
  quadrature: dict
  scale: complex = 1.0
  warnings: list = field(default_factory=list)

  def rows(self) -> list[dict]:
    return [{"time": t, "numerator": num, "denominator": den,
             "slice_error": math.sqrt(num / den) if den > 0 else math.nan}
            for t, num, den in self.per_time_errors]


def _outside_mass(view: StateView, grid_small: SpatialGrid,
                  grid_big: SpatialGrid, t: float) -> float:
  inside = np.sum(grid_small.weights * np.abs(view.values(grid_small.points,
                                                          t)) ** 2)
  total = np.sum(grid_big.weights * np.abs(view.values(grid_big.points,
                                                       t)) ** 2)
  return float(max(0.0, 1.0 - inside / total))


def rel_l2_error(pred, ref, horizon: float, t_start: float = 0.0,
                 space_order: int = 64, time_order: int = 32,
                 box: float = 8.0, r_max: float = 40.0,
                 angular_order: int = 16) -> ErrorReport:
  """Relative L2 error over [box] x [t_start, horizon].

  ``pred`` is aligned to ``ref`` by one complex factor fitted at t_start
  and kept fixed for all later times.
  """
  pred, ref = _as_view(pred), _as_view(ref)
  grid = spatial_grid(ref.n_coords, ref.d, space_order, box, r_max,
                      angular_order)
  t_rule = numerics.gauss_legendre(time_order, t_start, horizon)

  p0 = pred.values(grid.points, t_start)
  r0 = ref.values(grid.points, t_start)
  norm = np.sum(grid.weights * np.abs(p0) ** 2)
  scale = complex(np.sum(grid.weights * np.conj(p0) * r0) / norm)

  rows = []
  num_total = den_total = 0.0
  for t, wt in zip(t_rule.nodes, t_rule.weights):
    p = pred.values(grid.points, t)
    r = ref.values(grid.points, t)
    num = float(np.sum(grid.weights * np.abs(scale * p - r) ** 2))
    den = float(np.sum(grid.weights * np.abs(r) ** 2))
    rows.append((float(t), num, den))
    num_total += wt * num
    den_total += wt * den

  notes = []
  # the doubled box needs doubled order to keep the same resolution
  big = spatial_grid(ref.n_coords, ref.d, 2 * space_order, 2 * box,
                     2 * r_max, angular_order)
  for t in (t_start, horizon):
    lost = _outside_mass(ref, grid, big, t)
    if lost > BOX_MASS_TOLERANCE:
      msg = (f"reference mass outside the quadrature box at t={t:g} is "
             f"{lost:.2e} > {BOX_MASS_TOLERANCE:g}")
      notes.append(msg)
      warnings.warn(msg)
  quad = dict(grid.description, time_order=time_order,
              interval=(t_start, horizon))
  return ErrorReport(math.sqrt(num_total / den_total), rows, quad, scale,
                     notes)


# ---------------------------------------------------------------------------
# Monte Carlo observables


@dataclass
class ObservableSeries:
  observable: str
  times: np.ndarray
  values: np.ndarray
  stderr: np.ndarray

  def rows(self) -> list[dict]:
    out = []
    for t, v, e in zip(self.times, self.values, self.stderr):
      if np.iscomplexobj(self.values):
        out.append({"time": t, "value": abs(v), "phase": float(np.angle(v)),
                    "real": v.real, "imag": v.imag, "stderr": e})
      else:
        out.append({"time": t, "value": v, "stderr": e})
    return out


def _batch_means(x: np.ndarray, n_batches: int):
  n = (len(x) // n_batches) * n_batches
  means = x[:n].reshape(n_batches, -1).mean(axis=1)
  return x.mean(), means.std(ddof=1) / math.sqrt(n_batches)


def _walker_major(x: np.ndarray, walkers: int) -> np.ndarray:
  """Reorder snapshot-major samples so each walker's history is contiguous;
  batches of whole chains are then independent."""
  w = min(walkers, len(x))
  n = (len(x) // w) * w
  return x[:n].reshape(n // w, w, -1).swapaxes(0, 1).reshape(n, -1)


def _pointwise(observable: str, x: np.ndarray, d: int) -> np.ndarray:
  if observable == "monopole":
    return np.sum(x * x, axis=-1)
  if observable == "dipole":
    return -np.sum(x.reshape(len(x), -1, d)[..., 0], axis=-1)
  raise ValueError(f"unknown observable {observable!r}")


def mc_observable(state, observable: str, times, n_samples: int = 4096,
                  burn_in: int = 300, seed: int = 0, walkers: int = 256,
                  thinning: int = 10, step_size: float = 0.5,
                  init_width: float = 1.0, n_batches: int = 32
                  ) -> ObservableSeries:
  """Per-time estimates of <O> under |psi(., t)|^2 with batch-means errors.

  ``overlap`` returns <psi(0)|psi(t)> / <psi(0)|psi(0)> sampled from
  |psi(., 0)|^2.
  """
  if observable not in OBSERVABLES:
    raise ValueError(f"unknown observable {observable!r}; "
                     f"expected one of {OBSERVABLES}")
  view = _as_view(state)
  times = np.asarray(times, dtype=np.float64)

  def draw(t, s):
    x = sample_conditional(view.fn, view.params_at(t), float(t), n_samples,
                           burn_in, s, n_coords=view.n_coords,
                           walkers=walkers, thinning=thinning,
                           step_size=step_size, init_width=init_width,
                           hamiltonian=view.hamiltonian)
    return _walker_major(x, walkers)

  if observable == "overlap":
    x = draw(0.0, seed)
    la0, ph0 = (np.asarray(a) for a in view.log_psi(x, 0.0))
    vals, errs = [], []
    for t in times:
      la, ph = (np.asarray(a) for a in view.log_psi(x, float(t)))
      ratio = np.exp(la - la0 + 1j * (ph - ph0))
      m_re, e_re = _batch_means(ratio.real, n_batches)
      m_im, e_im = _batch_means(ratio.imag, n_batches)
      vals.append(m_re + 1j * m_im)
      errs.append(math.hypot(e_re, e_im))
    return ObservableSeries(observable, times, np.asarray(vals),
                            np.asarray(errs))

  vals, errs = [], []
  for i, t in enumerate(times):
    x = draw(t, seed + i)
    m, e = _batch_means(_pointwise(observable, x, view.d), n_batches)
    vals.append(m)
    errs.append(e)
  return ObservableSeries(observable, times, np.asarray(vals),
                          np.asarray(errs))
