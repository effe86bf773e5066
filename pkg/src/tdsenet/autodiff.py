"""Spatial/time derivative bundles and parameter gradients of log-wavefunctions.

A wavefunction program is any JAX-traceable ``fn(params, r, t)`` returning the
pair ``(log|psi|, arg psi)``. The bundle is built with nested forward-mode
JVPs: one second-order directional pass per spatial coordinate gives the
gradient entry and the Hessian diagonal together, and one more JVP in ``t``
gives the time derivative. Parameter gradients of scalar objectives use
reverse mode.
"""
from __future__ import annotations

from typing import Any, Callable, NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from jax.extend import core as jex_core

LogPsiFn = Callable[[Any, jnp.ndarray, jnp.ndarray], tuple[jnp.ndarray, jnp.ndarray]]

# log|psi| below this marks the configuration as sitting on (or next to) a node.
NODE_LOG_THRESHOLD = -300.0

# Primitives a program may be built from. Structural bookkeeping primitives
# appear whenever jax.numpy reshapes or broadcasts; the arithmetic set covers
# affine maps, tanh/exp/log, products and quotients, norms, complex assembly,
# means and small dense linear algebra used for determinants.
SUPPORTED_PRIMITIVES = frozenset({
    # structural
    "slice", "squeeze", "reshape", "broadcast_in_dim", "concatenate",
    "convert_element_type", "transpose", "iota", "select_n", "gather",
    "dynamic_slice", "dynamic_update_slice", "scatter", "scatter-add",
    "scatter_add", "pad", "rev", "copy", "copy_p", "pjit", "jit",
    "closed_call", "custom_jvp_call", "stop_gradient", "platform_index",
    "cond", "split",
    # comparisons and logic
    "eq", "ne", "lt", "le", "gt", "ge", "and", "or", "not", "xor",
    # reductions
    "reduce_sum", "reduce_max", "reduce_min", "reduce_prod", "reduce_or",
    "reduce_and", "argmax", "argmin", "sort",
    # arithmetic
    "add", "sub", "mul", "div", "rem", "neg", "sign", "abs", "max", "min",
    "integer_pow", "pow", "square", "sqrt", "rsqrt", "exp", "exp2", "log",
    "log1p", "expm1", "tanh", "logistic", "sin", "cos", "tan", "atan",
    "atan2", "floor", "ceil", "round", "dot_general",
    # complex assembly
    "real", "imag", "complex", "conj",
    # small dense linear algebra
    "lu", "triangular_solve", "lu_pivots_to_permutation",
})


class UnsupportedPrimitiveError(TypeError):
  pass


class NonFiniteGradientError(FloatingPointError):

  def __init__(self, index: int):
    super().__init__(f"non-finite partial derivative at parameter {index}")
    self.index = index


def _collect_primitives(jaxpr, found: set[str]) -> None:
  for eqn in jaxpr.eqns:
    found.add(eqn.primitive.name)
    for value in eqn.params.values():
      for sub in _subjaxprs(value):
        _collect_primitives(sub, found)


def _subjaxprs(value):
  if isinstance(value, jex_core.ClosedJaxpr):
    yield value.jaxpr
  elif isinstance(value, jex_core.Jaxpr):
    yield value
  elif isinstance(value, (tuple, list)):
    for v in value:
      yield from _subjaxprs(v)


def check_program(fn: Callable, *example_args) -> set[str]:
  """Trace ``fn`` and raise if it uses a primitive outside the supported set."""
  closed = jax.make_jaxpr(fn)(*example_args)
  found: set[str] = set()
  _collect_primitives(closed.jaxpr, found)
  bad = sorted(found - SUPPORTED_PRIMITIVES)
  if bad:
    raise UnsupportedPrimitiveError(
        f"program uses unsupported primitive(s): {', '.join(bad)}")
  return found


class DerivativeBundle(NamedTuple):
  """log psi and its derivatives at one spacetime point (or a batch of them).

  Complex fields are carried as complex arrays assembled from the real
  (log-magnitude) and imaginary (phase) derivative passes.
  """
  log_psi: jnp.ndarray
  grad_r: jnp.ndarray
  laplacian_log: jnp.ndarray
  dlog_dt: jnp.ndarray
  valid: jnp.ndarray


def _stacked(log_psi_fn: LogPsiFn, params, r, t):
  logabs, phase = log_psi_fn(params, r, t)
  return jnp.stack([logabs, phase])


def bundle(log_psi_fn: LogPsiFn, params, r, t,
           node_threshold: float = NODE_LOG_THRESHOLD) -> DerivativeBundle:
  """Derivative bundle of a single configuration ``r`` (flat, length d*N)."""
  r = jnp.asarray(r, dtype=jnp.float64)
  t = jnp.asarray(t, dtype=jnp.float64)
  f_r = lambda x: _stacked(log_psi_fn, params, x, t)

  def directional(e):
    first = lambda x: jax.jvp(f_r, (x,), (e,))[1]
    d1, d2 = jax.jvp(first, (r,), (e,))
    return d1, d2

  d1, d2 = jax.vmap(directional)(jnp.eye(r.shape[0], dtype=r.dtype))
  value, dt = jax.jvp(lambda s: _stacked(log_psi_fn, params, r, s), (t,),
                      (jnp.ones_like(t),))
  log_psi = value[0] + 1j * value[1]
  grad_r = d1[:, 0] + 1j * d1[:, 1]
  lap = jnp.sum(d2[:, 0]) + 1j * jnp.sum(d2[:, 1])
  dlog_dt = dt[0] + 1j * dt[1]
  finite = (jnp.isfinite(value).all() & jnp.isfinite(d1).all()
            & jnp.isfinite(d2).all() & jnp.isfinite(dt).all())
  valid = finite & (value[0] > node_threshold)
  return DerivativeBundle(log_psi, grad_r, lap, dlog_dt, valid)


def batched_bundle(log_psi_fn: LogPsiFn, params, rs, ts) -> DerivativeBundle:
  """``bundle`` over a batch: ``rs`` is (B, d*N), ``ts`` is (B,) or scalar."""
  ts = jnp.broadcast_to(jnp.asarray(ts, dtype=jnp.float64), rs.shape[:1])
  return jax.vmap(lambda r, t: bundle(log_psi_fn, params, r, t))(rs, ts)


class WavefunctionProgram:
  """A checked log-wavefunction with jitted evaluation helpers.

  Construction traces ``log_psi_fn`` once on the example arguments and rejects
  programs built from unsupported primitives, so mistakes show up before any
  training starts rather than as silently wrong derivatives.
  """

  def __init__(self, log_psi_fn: LogPsiFn, example_params, n_coords: int):
    self.fn = log_psi_fn
    self.n_coords = n_coords
    check_program(log_psi_fn, example_params, jnp.zeros(n_coords) + 0.1,
                  jnp.asarray(0.0))
    self._bundle = jax.jit(lambda p, r, t: bundle(log_psi_fn, p, r, t))
    self._batched_bundle = jax.jit(
        lambda p, rs, ts: batched_bundle(log_psi_fn, p, rs, ts))
    self._log_psi = jax.jit(jax.vmap(log_psi_fn, in_axes=(None, 0, 0)))

  def __call__(self, params, r, t):
    return self.fn(params, r, t)

  def evaluate_bundle(self, params, r, t) -> DerivativeBundle:
    return self._bundle(params, jnp.asarray(r, dtype=jnp.float64),
                        jnp.asarray(t, dtype=jnp.float64))

  def batch_bundle(self, params, rs, ts) -> DerivativeBundle:
    rs = jnp.asarray(rs, dtype=jnp.float64)
    ts = jnp.broadcast_to(jnp.asarray(ts, dtype=jnp.float64), rs.shape[:1])
    return self._batched_bundle(params, rs, ts)

  def log_psi(self, params, rs, ts):
    """Vectorised (log|psi|, arg psi) over a batch of configurations."""
    rs = jnp.asarray(rs, dtype=jnp.float64)
    ts = jnp.broadcast_to(jnp.asarray(ts, dtype=jnp.float64), rs.shape[:1])
    return self._log_psi(params, rs, ts)

  def values(self, params, rs, ts):
    """Complex psi over a batch."""
    logabs, phase = self.log_psi(params, rs, ts)
    return jnp.exp(logabs + 1j * phase)


def evaluate_bundle(program: LogPsiFn | WavefunctionProgram, r, t,
                    params) -> DerivativeBundle:
  if isinstance(program, WavefunctionProgram):
    return program.evaluate_bundle(params, r, t)
  return bundle(program, params, r, t)


def grad_params(objective: Callable[[jnp.ndarray], jnp.ndarray],
                params: jnp.ndarray) -> np.ndarray:
  """Gradient of a real scalar objective w.r.t. a flat parameter vector.

  Raises:
    NonFiniteGradientError: carrying the index of the first bad partial.
  """
  g = np.asarray(jax.grad(objective)(params))
  bad = np.flatnonzero(~np.isfinite(g))
  if bad.size:
    raise NonFiniteGradientError(int(bad[0]))
  return g


def check_finite_gradient(g: Sequence[float]) -> None:
  bad = np.flatnonzero(~np.isfinite(np.asarray(g)))
  if bad.size:
    raise NonFiniteGradientError(int(bad[0]))
