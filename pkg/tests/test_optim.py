import numpy as np
import pytest

from tdsenet.optim import LBFGS, Adam, clip_gradient, learning_rate


def test_clip_gradient():
  g = np.array([3.0, 4.0])
  np.testing.assert_array_equal(clip_gradient(g, 10.0), g)
  out = clip_gradient(np.array([6.0, 8.0]), 5.0)
  assert np.linalg.norm(out) == pytest.approx(5.0, rel=1e-15)
  cos = out @ np.array([6.0, 8.0]) / (5.0 * 10.0)
  assert abs(cos - 1) <= 1e-14
  with pytest.raises(ValueError):
    clip_gradient(g, 0.0)


def test_learning_rate_schedule():
  assert learning_rate(0, 1e-3, 100, 0.1, 2000) == 0.0
  assert learning_rate(50, 1e-3, 100, 0.1, 2000) == pytest.approx(5e-4)
  assert learning_rate(100, 1e-3, 100, 0.1, 2000) == 1e-3
  assert learning_rate(2100, 1e-3, 100, 0.1, 2000) == pytest.approx(1e-4)
  left = learning_rate(99, 1e-3, 100, 0.1, 2000)
  right = learning_rate(101, 1e-3, 100, 0.1, 2000)
  assert abs(right - left) < 2e-5


def test_adam_zero_gradient():
  x = np.array([0.3, -1.2, 4.0])
  opt = Adam()
  y = x
  for _ in range(20):
    y = opt.step(y, np.zeros(3), 1e-2)
  assert np.max(np.abs(y - x)) < 1e-12


def test_adam_quadratic_bowl():
  star = np.random.default_rng(0).uniform(-1, 1, 5)
  x, opt = np.zeros(5), Adam()
  for k in range(1, 5001):
    x = opt.step(x, 2 * (x - star), learning_rate(k, 1e-2, 50, 0.1, 2000))
  assert np.max(np.abs(x - star)) < 1e-4


def _bowl(scales, star):
  def fg(x):
    d = x - star
    return float(np.sum(scales * d * d)), 2 * scales * d
  return fg


def test_lbfgs_quadratic_bowl():
  rng = np.random.default_rng(1)
  scales = np.logspace(0, 2, 8)
  star = rng.normal(size=8)
  res = LBFGS(history_size=10).minimize(_bowl(scales, star), np.zeros(8), 30)
  assert res.f <= 1e-10
  assert not res.stopped_early


def test_lbfgs_rosenbrock():
  def fg(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    return f, np.array([-2 * (1 - a) - 400 * a * (b - a * a),
                        200 * (b - a * a)])
  res = LBFGS().minimize(fg, np.array([-1.2, 1.0]), 200)
  np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)


def test_lbfgs_reset_empties_history():
  opt = LBFGS()
  opt.minimize(_bowl(np.ones(3), np.ones(3) * 2), np.zeros(3), 3)
  opt.minimize(_bowl(np.array([1.0, 5.0, 9.0]), np.ones(3)), np.zeros(3), 3)
  assert len(opt.history) > 0
  opt.reset()
  assert len(opt.history) == 0


def test_lbfgs_line_search_failures_end_run():
  calls = []

  def bad(x):
    calls.append(1)
    if len(calls) == 1:
      return 1.0, np.ones_like(x)
    return float("nan"), np.ones_like(x)

  res = LBFGS(max_backtracks=4).minimize(bad, np.zeros(2), 10)
  assert res.stopped_early
  assert res.line_search_failures == 3
  assert res.steps == 0
  np.testing.assert_array_equal(res.x, np.zeros(2))
