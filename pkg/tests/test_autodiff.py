import jax
import jax.numpy as jnp
import numpy as np
import pytest
from jax.scipy.special import erf

from tdsenet.autodiff import (NODE_LOG_THRESHOLD, NonFiniteGradientError,
                              UnsupportedPrimitiveError, WavefunctionProgram,
                              batched_bundle, bundle, check_program,
                              evaluate_bundle, grad_params)


def gaussian(params, r, t):
  return -0.5 * jnp.sum(r * r), 0.0 * t


def gaussian_rotating(params, r, t):
  return -0.5 * jnp.sum(r * r), -0.5 * t


def test_gaussian_bundle():
  b = bundle(gaussian, None, jnp.array([1.0]), 0.3)
  assert complex(b.grad_r[0]) == -1.0
  assert complex(b.laplacian_log) == -1.0
  assert complex(b.dlog_dt) == 0.0
  assert bool(b.valid)


@pytest.mark.parametrize("r,t", [(-2.0, 0.0), (0.4, 1.7), (3.0, 10.0)])
def test_time_derivative_of_rotating_phase(r, t):
  b = bundle(gaussian_rotating, None, jnp.array([r]), t)
  assert complex(b.dlog_dt) == -0.5j


def test_bundle_on_two_coordinates():
  def fn(p, r, t):
    return p[0] * r[0] ** 2 * r[1] + t * r[1], jnp.sin(r[0]) * t
  r = jnp.array([0.7, -1.3])
  b = bundle(fn, jnp.array([2.0]), r, 0.5)
  x, y = 0.7, -1.3
  np.testing.assert_allclose(np.asarray(b.grad_r),
                             [4 * x * y + 0.5j * np.cos(x), 2 * x**2 + 0.5],
                             atol=1e-14)
  assert complex(b.laplacian_log) == pytest.approx(4 * y - 0.5j * np.sin(x))
  assert complex(b.dlog_dt) == pytest.approx(y + 1j * np.sin(x))


def test_batched_bundle_matches_single():
  rs = jnp.array([[0.1], [1.5], [-2.0]])
  ts = jnp.array([0.0, 1.0, 2.0])
  bb = batched_bundle(gaussian_rotating, None, rs, ts)
  for i in range(3):
    b = bundle(gaussian_rotating, None, rs[i], ts[i])
    assert complex(bb.grad_r[i, 0]) == complex(b.grad_r[0])


def test_node_flag():
  def deep(p, r, t):
    return jnp.asarray(NODE_LOG_THRESHOLD - 1.0) + 0 * r[0], 0.0 * t
  assert not bool(bundle(deep, None, jnp.array([0.0]), 0.0).valid)

  def nan(p, r, t):
    return jnp.log(r[0] - r[0]) * 0 + jnp.nan, 0.0 * t
  assert not bool(bundle(nan, None, jnp.array([0.0]), 0.0).valid)


def test_unsupported_primitive_rejected_at_construction():
  def uses_erf(p, r, t):
    return erf(r[0]), 0.0 * t
  with pytest.raises(UnsupportedPrimitiveError, match="erf"):
    WavefunctionProgram(uses_erf, None, 1)
  assert "tanh" in check_program(lambda p, r, t: (jnp.tanh(r[0]), t),
                                 None, jnp.zeros(1), 0.0)


def test_program_helpers():
  prog = WavefunctionProgram(gaussian_rotating, None, 1)
  rs = jnp.array([[0.0], [1.0]])
  vals = np.asarray(prog.values(None, rs, 2.0))
  np.testing.assert_allclose(vals, np.exp(-0.5 * np.array([0.0, 1.0]) - 1j),
                             atol=1e-15)
  b = evaluate_bundle(prog, jnp.array([1.0]), 0.0, None)
  assert complex(b.grad_r[0]) == -1.0


def test_grad_params_sum_of_squares():
  p = jnp.array([0.5, -2.0, 3.0])
  np.testing.assert_array_equal(grad_params(lambda q: jnp.sum(q * q), p),
                                2 * np.asarray(p))


def test_grad_params_gaussian_width():
  r = jnp.array([1.7])
  fn = lambda p, r, t: (-p[0] * jnp.sum(r * r), 0.0 * t)
  g = grad_params(lambda p: fn(p, r, 0.0)[0], jnp.array([0.8]))
  assert g[0] == pytest.approx(-1.7**2)


def test_grad_params_reports_nan_index():
  obj = lambda q: q[0] ** 2 + jnp.sqrt(q[2])
  with pytest.raises(NonFiniteGradientError) as info:
    grad_params(obj, jnp.array([1.0, 1.0, -1.0]))
  assert info.value.index == 2


def test_bundle_under_jit():
  f = jax.jit(lambda r: bundle(gaussian, None, r, 0.0).laplacian_log)
  assert complex(f(jnp.array([0.3]))) == -1.0
