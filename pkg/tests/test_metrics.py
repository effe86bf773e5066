import math

import jax.numpy as jnp
import numpy as np
import pytest

from tdsenet import numerics, oracles
from tdsenet.metrics import (StateView, mc_observable, rel_l2_error,
                             spatial_grid)


def scaled(state, c):
  view = StateView.from_oracle(state)
  la = lambda p, r, t: (state.log_psi(r, t)[0] + math.log(abs(c)),
                        state.log_psi(r, t)[1] + np.angle(c))
  return StateView(la, view.params_at, view.n_coords, view.d)


def test_identical_states_have_zero_error():
  ho = oracles.oracle_from_name("ho01")
  rep = rel_l2_error(ho, ho, math.pi)
  assert rep.rel_l2 <= 1e-12
  assert rep.warnings == []
  assert rep.quadrature["order"] == 64 and rep.quadrature["box"] == 8.0


def test_constant_scale_is_aligned_away():
  ho = oracles.oracle_from_name("ho01")
  rep = rel_l2_error(scaled(ho, 1.1 * np.exp(0.7j)), ho, math.pi)
  assert rep.rel_l2 <= 1e-12
  assert rep.scale == pytest.approx(np.exp(-0.7j) / 1.1, rel=1e-12)


@pytest.mark.parametrize("eps", [1e-2, 1e-3])
def test_orthogonal_perturbation(eps):
  ref = oracles.oracle_from_name("ho0")
  pred = oracles.HOSuperposition(((0, 1.0), (1, eps)))
  rep = rel_l2_error(pred, ref, math.pi)
  # alignment divides by 1 + eps^2, leaving sqrt(eps^2 (1 + eps^2)) / (1 + eps^2)
  assert rep.rel_l2 == pytest.approx(eps / math.sqrt(1 + eps**2), rel=1e-10)


def test_report_composition_and_rows():
  ref = oracles.oracle_from_name("ho0")
  pred = oracles.HOSuperposition(((0, 1.0), (1, 0.05), (2, 0.02j)))
  rep = rel_l2_error(pred, ref, 2.0, time_order=16)
  rule = numerics.gauss_legendre(16, 0.0, 2.0)
  num = sum(w * n for w, (_, n, _) in zip(rule.weights, rep.per_time_errors))
  den = sum(w * d for w, (_, _, d) in zip(rule.weights, rep.per_time_errors))
  assert rep.rel_l2**2 == pytest.approx(num / den, rel=1e-12)
  rows = rep.rows()
  assert len(rows) == 16
  assert set(rows[0]) == {"time", "numerator", "denominator", "slice_error"}


def test_doubling_order_is_stable():
  ref = oracles.oracle_from_name("ho01")
  pred = oracles.HOSuperposition(((0, 0.7), (1, 0.72), (2, 0.03)))
  a = rel_l2_error(pred, ref, math.pi).rel_l2
  b = rel_l2_error(pred, ref, math.pi, space_order=128, time_order=64).rel_l2
  assert abs(a - b) < 1e-8


def test_small_box_warns():
  ho = oracles.oracle_from_name("ho0")
  with pytest.warns(UserWarning, match="outside the quadrature box"):
    rep = rel_l2_error(ho, ho, 1.0, box=2.0)
  assert len(rep.warnings) == 2


def test_fermion_grid_with_coincident_points():
  f = oracles.FermionScaling(2)
  rep = rel_l2_error(scaled(f, 0.3j), f, 0.42, time_order=8)
  assert rep.rel_l2 <= 1e-12
  assert rep.warnings == []


def test_hydrogen_spherical_grid():
  h = oracles.oracle_from_name("h1s2p_z")
  rep = rel_l2_error(scaled(h, 2.0), h, 1.0, time_order=8, space_order=32,
                     angular_order=8)
  assert rep.rel_l2 <= 1e-12
  assert rep.quadrature["kind"] == "spherical"


def test_grid_limits():
  with pytest.raises(ValueError):
    spatial_grid(4, 1)
  g = spatial_grid(1, 1)
  assert np.sum(g.weights * np.exp(-g.points[:, 0] ** 2)) == pytest.approx(
      math.sqrt(math.pi), rel=1e-13)


def _within(series, expected, k=3.0):
  dev = np.abs(np.asarray(series.values) - np.asarray(expected))
  return bool(np.all(dev <= k * np.asarray(series.stderr)))


def test_ho_monopole():
  ho = oracles.oracle_from_name("ho0")
  s = mc_observable(ho, "monopole", [0.0, 1.3, 3.0], seed=1)
  assert _within(s, 0.5)
  assert np.all(s.stderr > 0)
  assert [r["time"] for r in s.rows()] == [0.0, 1.3, 3.0]


def test_fermion_monopole_at_quarter_period():
  f = oracles.FermionScaling(2)
  m0 = f.initial_monopole()
  s = mc_observable(f, "monopole", [math.pi / 4], seed=2)
  assert _within(s, 0.25 * m0)


def test_fermion_monopole_over_breathing_period():
  f = oracles.FermionScaling(2)
  ts = np.linspace(0, math.pi / 2, 10)
  s = mc_observable(f, "monopole", ts, n_samples=2048, seed=3)
  assert _within(s, oracles.monopole_ref(ts, m0=f.initial_monopole()))


def test_dipole_of_symmetric_states():
  s = mc_observable(oracles.oracle_from_name("ho02"), "dipole", [0.0, 1.0],
                    seed=4)
  assert _within(s, 0.0)
  h = mc_observable(oracles.oracle_from_name("h1s"), "dipole", [0.5], seed=5)
  assert _within(h, 0.0)


def test_overlap_of_eigenstate():
  ts = np.array([0.0, 0.5, 2.0])
  s = mc_observable(oracles.oracle_from_name("ho0"), "overlap", ts, seed=6)
  np.testing.assert_allclose(s.values, np.exp(-0.5j * ts), atol=1e-12)
  row = s.rows()[1]
  assert row["phase"] == pytest.approx(-0.25, abs=1e-12)


def test_unknown_observable():
  with pytest.raises(ValueError):
    mc_observable(oracles.oracle_from_name("ho0"), "quadrupole", [0.0])
