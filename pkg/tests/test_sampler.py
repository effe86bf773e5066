import math

import jax.numpy as jnp
import numpy as np
import pytest

from tdsenet import numerics, oracles, sampler
from tdsenet.sampler import SamplerStuckError, WalkerState, mh_chain


def std_normal(x):
  return -0.5 * jnp.sum(x * x, axis=-1)


def test_standard_normal_variance():
  init = np.zeros((50000, 1))
  state, diag = mh_chain(std_normal, init, 200, 2.0, seed=0)
  x = np.asarray(state.position[:, 0])
  assert np.var(x) == pytest.approx(1.0, abs=0.02)
  assert abs(np.mean(x)) < 3 / math.sqrt(len(x))
  assert diag.acceptance_rate == diag.accepted / diag.proposed


def test_first_step_acceptance_is_metropolis():
  # from x=0 the acceptance probability is E exp(-s^2 z^2 / 2) = 1/sqrt(1+s^2)
  n = 100000
  _, diag = mh_chain(std_normal, np.zeros((n, 1)), 1, 1.0, seed=3)
  se = math.sqrt(0.25 / n)
  assert abs(diag.acceptance_rate - 1 / math.sqrt(2)) < 4 * se


def test_tiny_steps_always_accepted():
  _, diag = mh_chain(std_normal, np.ones((100, 2)), 50, 1e-9, seed=1)
  assert diag.acceptance_rate == 1.0


def test_constant_shift_leaves_chain_identical():
  init = np.random.default_rng(0).normal(size=(64, 3))
  a, da = mh_chain(std_normal, init, 100, 1.3, seed=11)
  b, db = mh_chain(lambda x: std_normal(x) + 3.0, init, 100, 1.3, seed=11)
  np.testing.assert_array_equal(np.asarray(a.position), np.asarray(b.position))
  assert da.accepted == db.accepted


def test_cached_density_is_fresh():
  f = lambda x: -jnp.sum(x**4, axis=-1) + jnp.sin(x[:, 0])
  state, _ = mh_chain(f, np.zeros((32, 2)), 40, 0.7, seed=2)
  np.testing.assert_allclose(np.asarray(state.log_density),
                             np.asarray(f(state.position)), rtol=0, atol=1e-12)
  assert isinstance(state, WalkerState)


def test_deterministic_given_seed():
  init = np.zeros((16, 1))
  a, _ = mh_chain(std_normal, init, 30, 1.0, seed=5)
  b, _ = mh_chain(std_normal, init, 30, 1.0, seed=5)
  c, _ = mh_chain(std_normal, init, 30, 1.0, seed=6)
  np.testing.assert_array_equal(np.asarray(a.position), np.asarray(b.position))
  assert not np.array_equal(np.asarray(a.position), np.asarray(c.position))


def test_walker_streams_do_not_depend_on_walker_count():
  a, _ = mh_chain(std_normal, np.zeros((4, 1)), 20, 1.0, seed=9)
  b, _ = mh_chain(std_normal, np.zeros((9, 1)), 20, 1.0, seed=9)
  np.testing.assert_array_equal(np.asarray(a.position),
                                np.asarray(b.position[:4]))


def test_stuck_chain_raises():
  sharp = lambda x: -1e12 * jnp.sum((x - 0.5) ** 2, axis=-1)
  with pytest.raises(SamplerStuckError):
    mh_chain(sharp, np.full((8, 1), 0.5), 20, 1.0, seed=0)


def test_nonfinite_initial_density_rejected():
  with pytest.raises(ValueError):
    mh_chain(lambda x: jnp.log(x[:, 0]), np.zeros((2, 1)), 5, 0.1, seed=0)


def test_node_proposals_rejected():
  # density with a hard wall: log(0) outside [-1, 1]
  f = lambda x: jnp.log(jnp.maximum(1 - jnp.abs(x[:, 0]), 0.0))
  state, diag = mh_chain(f, np.zeros((200, 1)), 50, 1.5, seed=4)
  assert diag.n_rejected_node_flags > 0
  assert np.all(np.abs(np.asarray(state.position)) < 1)


def _batch_error(x, n_batches=32):
  # draws come out one thinning round (all walkers) at a time, so
  # contiguous blocks are rounds and their means are nearly independent
  means = x.reshape(n_batches, -1).mean(axis=1)
  return np.std(means, ddof=1) / math.sqrt(n_batches)


def _oracle_fn(state):
  return lambda p, r, t: state.log_psi(r, t)


@pytest.mark.parametrize("t", [0.0, 2.7])
def test_ho_ground_state_second_moment(t):
  ho = oracles.oracle_from_name("ho0")
  x = sampler.sample_conditional(_oracle_fn(ho), None, t, 8192, seed=1,
                                 n_coords=1)
  q = x[:, 0] ** 2
  assert abs(q.mean() - 0.5) < 3 * _batch_error(q)


def test_initial_ho_mean_and_seeds():
  ho = oracles.oracle_from_name("ho0")
  a = sampler.sample_initial(ho, 4096, seed=0)
  b = sampler.sample_initial(ho, 4096, seed=1)
  assert a.shape == (4096, 1)
  assert not np.array_equal(a, b)
  for x in (a, b):
    assert abs(x.mean()) < 3 * _batch_error(x[:, 0])
  assert abs((a**2).mean() - (b**2).mean()) < 0.1


def test_zero_samples_evaluates_nothing():
  calls = []

  def fn(p, r, t):
    calls.append(1)
    return -jnp.sum(r * r), 0.0 * t

  out = sampler.sample_conditional(fn, None, 0.0, 0, n_coords=2)
  assert out.shape == (0, 2)
  assert calls == []


def test_first_excited_state_node():
  ho1 = oracles.oracle_from_name("ho1")
  x = sampler.sample_initial(ho1, 4096, seed=2)[:, 0]
  near = np.sum(np.abs(x) < 0.1)
  # a Gaussian of the same width would put ~11% of draws here
  assert near < 30
  assert np.mean(x**2) == pytest.approx(1.5, abs=0.15)


def test_fermion_pair_distance_matches_quadrature():
  f = oracles.FermionScaling(2)
  x = sampler.sample_initial(f, 8192, seed=4)
  d2 = (x[:, 0] - x[:, 1]) ** 2

  rule = numerics.gauss_legendre(64, -8, 8)
  X, Y = np.meshgrid(rule.nodes, rule.nodes, indexing="ij")
  W = np.outer(rule.weights, rule.weights)
  pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
  logabs = np.array([float(f.log_psi(jnp.asarray(p), 0.0)[0]) for p in pts])
  dens = np.where(np.isfinite(logabs), np.exp(2 * logabs), 0.0)
  exact = np.sum(W.ravel() * dens * (X - Y).ravel() ** 2) / np.sum(
      W.ravel() * dens)

  assert abs(d2.mean() - exact) < 3 * _batch_error(d2)
