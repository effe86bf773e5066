"""Metropolis-Hastings sampling of configurations from |psi|^2.

Every walker owns an independent random stream derived from
``(seed, walker index, step)`` with ``jax.random.fold_in``, so chains are
reproducible and independent of how many walkers run next to them. Moves are
isotropic Gaussian displacements of all coordinates at once. Proposals that
land on a node (non-finite or vanishing density) or inside a Coulomb
exclusion ball are rejected outright and counted.
"""
from __future__ import annotations

from functools import lru_cache, partial
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from tdsenet.autodiff import NODE_LOG_THRESHOLD

__all__ = [
    "WalkerState", "ChainDiagnostics", "SamplerStuckError", "mh_chain",
    "sample_conditional", "sample_initial", "SliceSampler",
    "TARGET_ACCEPTANCE", "state_log_psi",
]

TARGET_ACCEPTANCE = 0.5
ADAPT_BLOCK = 10
# 2 log|psi| below this counts as a node
NODE_LOG_DENSITY = 2.0 * NODE_LOG_THRESHOLD


class SamplerStuckError(RuntimeError):
  pass


class WalkerState(NamedTuple):
  position: jnp.ndarray     # (W, n_coords)
  log_density: jnp.ndarray  # (W,)
  age: jnp.ndarray          # (W,) steps since last acceptance


class ChainDiagnostics(NamedTuple):
  acceptance_rate: float
  step_size: float
  n_rejected_node_flags: int
  accepted: int
  proposed: int


def _walker_keys(seed, n_walkers: int, offset: int = 0):
  base = jax.random.PRNGKey(seed)
  return jax.vmap(lambda i: jax.random.fold_in(base, i))(
      jnp.arange(n_walkers) + offset)


def _mh_scan(log_density_fn, reject_fn, state: WalkerState, keys, step_size,
             first_step, n_steps: int):
  """n_steps of random-walk MH; returns the final state and counters."""

  def one(carry, s):
    st, acc, nodes = carry
    k = jax.vmap(lambda key: jax.random.fold_in(key, first_step + s))(keys)
    k_prop, k_u = jax.vmap(jax.random.split, out_axes=1)(k)
    noise = jax.vmap(lambda kk: jax.random.normal(
        kk, st.position.shape[1:], dtype=jnp.float64))(k_prop)
    prop = st.position + step_size[:, None] * noise
    ld = log_density_fn(prop)
    node = ~jnp.isfinite(ld) | (ld < NODE_LOG_DENSITY) | reject_fn(prop)
    u = jax.vmap(lambda kk: jax.random.uniform(kk, dtype=jnp.float64))(k_u)
    accept = ~node & (jnp.log(u) < ld - st.log_density)
    new = WalkerState(
        jnp.where(accept[:, None], prop, st.position),
        jnp.where(accept, ld, st.log_density),
        jnp.where(accept, 0, st.age + 1))
    return (new, acc + accept, nodes + node), None

  zeros = jnp.zeros(state.position.shape[0], dtype=jnp.int64)
  (state, acc, nodes), _ = jax.lax.scan(one, (state, zeros, zeros),
                                        jnp.arange(n_steps))
  return state, acc, nodes


def _no_reject(pos):
  return jnp.zeros(pos.shape[0], dtype=bool)


def mh_chain(log_density_fn: Callable, init, n_steps: int, step_size: float,
             seed: int, reject_fn: Callable | None = None,
             first_step: int = 0) -> tuple[WalkerState, ChainDiagnostics]:
  """Run a set of independent chains targeting exp(log_density_fn).

  ``log_density_fn`` maps a (W, n_coords) array to (W,) and must be
  JAX-traceable. ``init`` is a ``WalkerState`` or a position array.
  """
  if not isinstance(init, WalkerState):
    pos = jnp.asarray(init, dtype=jnp.float64)
    if pos.ndim == 1:
      pos = pos[:, None]
    init = WalkerState(pos, log_density_fn(pos),
                       jnp.zeros(pos.shape[0], dtype=jnp.int64))
  if not bool(jnp.all(jnp.isfinite(init.log_density))):
    raise ValueError("log density is not finite at every initial walker")
  n_walkers = init.position.shape[0]
  steps = jnp.full(n_walkers, step_size, dtype=jnp.float64)
  keys = _walker_keys(seed, n_walkers)
  run = jax.jit(partial(_mh_scan, log_density_fn, reject_fn or _no_reject),
                static_argnums=(4,))
  state, acc, nodes = run(init, keys, steps, first_step, n_steps)
  accepted = int(jnp.sum(acc))
  proposed = n_walkers * n_steps
  if proposed and accepted == 0:
    raise SamplerStuckError(
        f"no proposal accepted in {n_steps} steps over {n_walkers} walkers "
        f"(step size {step_size:g}, {int(jnp.sum(nodes))} node rejections)")
  diag = ChainDiagnostics(accepted / proposed if proposed else 0.0,
                          float(step_size), int(jnp.sum(nodes)), accepted,
                          proposed)
  return state, diag


class _Kernel:
  """Jitted MH kernel for a parametrised, time-dependent log|psi|."""

  def __init__(self, log_psi_fn, reject_fn=None):
    reject = reject_fn or _no_reject

    def density(params, times):
      return lambda pos: 2.0 * jax.vmap(log_psi_fn, in_axes=(None, 0, 0))(
          params, pos, times)[0]

    @partial(jax.jit, static_argnums=(6,))
    def run(params, pos, times, keys, steps, first_step, n_steps):
      f = density(params, times)
      state = WalkerState(pos, f(pos), jnp.zeros(pos.shape[0], jnp.int64))
      return _mh_scan(f, reject, state, keys, steps, first_step, n_steps)

    self.run = run
    self.log_density = jax.jit(
        lambda params, pos, times: density(params, times)(pos))


@lru_cache(maxsize=64)
def state_log_psi(state):
  """``(params, r, t) -> state.log_psi(r, t)`` for an analytic state; the
  same object comes back for equal states so compiled kernels are reused."""
  return lambda p, r, t: state.log_psi(r, t)


@lru_cache(maxsize=32)
def _kernel_for(log_psi_fn, hamiltonian) -> _Kernel:
  # one compiled kernel per (network, Hamiltonian) pair across samplers
  return _Kernel(log_psi_fn, _coulomb_reject(hamiltonian))


def _coulomb_reject(hamiltonian):
  if hamiltonian is None or not hasattr(hamiltonian, "nuclei"):
    return None
  from tdsenet.hamiltonian import COULOMB_EXCLUSION_RADIUS
  pos_n = jnp.asarray([p for p, _ in hamiltonian.nuclei], dtype=jnp.float64)

  def reject(pos):
    x = pos.reshape(pos.shape[0], -1, 3)
    close = jnp.any(jnp.linalg.norm(x[:, :, None, :] - pos_n, axis=-1)
                    < COULOMB_EXCLUSION_RADIUS, axis=(1, 2))
    n = x.shape[1]
    for i in range(n):
      for j in range(i + 1, n):
        close |= (jnp.linalg.norm(x[:, i] - x[:, j], axis=-1)
                  < COULOMB_EXCLUSION_RADIUS)
    return close

  return reject


class SliceSampler:
  """Persistent walkers for a set of time slices.

  Walkers live in an array of shape (n_slices, per_slice, n_coords); each
  slice has its own time and its own step size. ``advance`` warm-starts
  from the current positions, so a few steps per call suffice once the
  chains have burnt in.
  """

  def __init__(self, log_psi_fn, n_coords: int, n_slices: int,
               per_slice: int, seed: int, init_width: float = 1.0,
               step_size: float = 0.5, hamiltonian=None,
               target_acceptance: float = TARGET_ACCEPTANCE):
    self.kernel = _kernel_for(log_psi_fn, hamiltonian)
    self.shape = (n_slices, per_slice)
    self.n_coords = n_coords
    self.target = target_acceptance
    self.seed = seed
    rng = np.random.default_rng(seed)
    self.positions = init_width * rng.standard_normal(
        (n_slices, per_slice, n_coords))
    self.step_sizes = np.full(n_slices, step_size)
    self.keys = _walker_keys(seed, n_slices * per_slice)
    self.steps_taken = 0
    self.last_acceptance = np.full(n_slices, np.nan)
    self.node_rejections = 0

  def _run(self, params, times, n_steps):
    b = self.shape[0] * self.shape[1]
    flat_t = jnp.asarray(np.repeat(times, self.shape[1]))
    steps = jnp.asarray(np.repeat(self.step_sizes, self.shape[1]))
    pos = jnp.asarray(self.positions.reshape(b, -1))
    state, acc, nodes = self.kernel.run(params, pos, flat_t, self.keys, steps,
                                        self.steps_taken, n_steps)
    self.steps_taken += n_steps
    self.positions = np.asarray(state.position).reshape(self.positions.shape)
    self.node_rejections += int(jnp.sum(nodes))
    rate = np.asarray(acc).reshape(self.shape).mean(axis=1) / n_steps
    self.last_acceptance = rate
    return state, rate

  def burn_in(self, params, times, n_steps: int):
    """Run with step-size adaptation (x1.1 / x0.9 per block)."""
    done = 0
    while done < n_steps:
      block = min(ADAPT_BLOCK, n_steps - done)
      _, rate = self._run(params, times, block)
      self.step_sizes = np.where(rate > self.target, self.step_sizes * 1.1,
                                 self.step_sizes * 0.9)
      done += block

  def advance(self, params, times, n_steps: int):
    """Frozen-step-size MH moves; returns walkers and log|psi| at them."""
    state, rate = self._run(params, times, n_steps)
    if np.all(rate == 0) and n_steps > 0:
      raise SamplerStuckError("all slices rejected every proposal")
    logabs = 0.5 * np.asarray(state.log_density).reshape(self.shape)
    return self.positions.copy(), logabs

  @property
  def acceptance_rate(self) -> float:
    return float(np.mean(self.last_acceptance))


def _sample(log_psi_fn, params, t, n_samples, burn_in, seed, n_coords,
            walkers, thinning, step_size, init_width, hamiltonian):
  if n_samples == 0:
    return np.zeros((0, n_coords))
  walkers = min(walkers, n_samples)
  s = SliceSampler(log_psi_fn, n_coords, 1, walkers, seed,
                   init_width=init_width, step_size=step_size,
                   hamiltonian=hamiltonian)
  times = np.array([t], dtype=np.float64)
  s.burn_in(params, times, burn_in)
  out = []
  while sum(len(o) for o in out) < n_samples:
    pos, _ = s.advance(params, times, thinning)
    out.append(pos[0])
  return np.concatenate(out)[:n_samples]


def sample_conditional(log_psi_fn, params, t: float, n_samples: int,
                       burn_in: int = 500, seed: int = 0, *,
                       n_coords: int, walkers: int = 256, thinning: int = 10,
                       step_size: float = 0.5, init_width: float = 1.0,
                       hamiltonian=None) -> np.ndarray:
  """Draws from |psi(., t)|^2 for a parametrised ``log_psi_fn(params, r, t)``.

  Returns an (n_samples, n_coords) array collected every ``thinning`` steps
  across ``walkers`` chains after an adaptive burn-in.
  """
  return _sample(log_psi_fn, params, t, n_samples, burn_in, seed, n_coords,
                 walkers, thinning, step_size, init_width, hamiltonian)


def sample_initial(psi0, n_samples: int, burn_in: int = 500, seed: int = 0, *,
                   params=None, n_coords: int | None = None,
                   walkers: int = 256, thinning: int = 10,
                   step_size: float = 0.5, init_width: float = 1.0,
                   hamiltonian=None) -> np.ndarray:
  """Draws from |psi0(., 0)|^2.

  ``psi0`` is an analytic state (anything with ``log_psi(r, t)`` and
  ``n_coords``) or, together with ``params``, a parametrised log_psi.
  """
  if params is None:
    fn = state_log_psi(psi0)
    n_coords = psi0.n_coords
    params = jnp.zeros(1)
  else:
    fn = psi0
  return _sample(fn, params, 0.0, n_samples, burn_in, seed, n_coords, walkers,
                 thinning, step_size, init_width, hamiltonian)
