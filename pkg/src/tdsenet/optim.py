"""Adam, limited-memory BFGS and gradient clipping on flat parameter vectors."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["clip_gradient", "learning_rate", "Adam", "LBFGS", "LBFGSResult"]


def clip_gradient(g, threshold: float) -> np.ndarray:
  """Rescale ``g`` to norm ``threshold`` if it is longer than that."""
  if threshold <= 0:
    raise ValueError(f"clip threshold must be positive, got {threshold}")
  g = np.asarray(g, dtype=np.float64)
  norm = float(np.linalg.norm(g))
  if norm <= threshold:
    return g
  return g * (threshold / norm)


def learning_rate(k: int, base_lr: float, warmup_steps: int,
                  decay_rate: float, decay_period: int) -> float:
  """Linear warmup to ``base_lr`` then exponential decay."""
  ramp = min(k / warmup_steps, 1.0) if warmup_steps > 0 else 1.0
  return base_lr * ramp * decay_rate ** (max(k - warmup_steps, 0)
                                         / decay_period)


@dataclass
class Adam:
  beta1: float = 0.9
  beta2: float = 0.999
  eps: float = 1e-8
  m: np.ndarray | None = None
  v: np.ndarray | None = None
  t: int = 0

  def step(self, params, grad, lr: float) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if self.m is None:
      self.m = np.zeros_like(grad)
      self.v = np.zeros_like(grad)
    self.t += 1
    self.m = self.beta1 * self.m + (1 - self.beta1) * grad
    self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
    m_hat = self.m / (1 - self.beta1**self.t)
    v_hat = self.v / (1 - self.beta2**self.t)
    return np.asarray(params) - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class LBFGSResult:
  x: np.ndarray
  f: float
  grad_norm: float
  steps: int
  evaluations: int
  line_search_failures: int
  stopped_early: bool
  losses: list = field(default_factory=list)


class LBFGS:
  """Two-loop-recursion L-BFGS with backtracking Armijo line search.

  The curvature history lives on the instance; ``reset`` discards it.
  A failed line search halves the initial trial step and tries again; three
  failures in a row end the run.
  """

  def __init__(self, history_size: int = 10, c1: float = 1e-4,
               max_backtracks: int = 25, max_failures: int = 3,
               gtol: float = 1e-12):
    self.history_size = history_size
    self.c1 = c1
    self.max_backtracks = max_backtracks
    self.max_failures = max_failures
    self.gtol = gtol
    self.history: deque = deque(maxlen=history_size)

  def reset(self) -> None:
    self.history.clear()

  def direction(self, g: np.ndarray) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(self.history):
      a = rho * (s @ q)
      q -= a * y
      alphas.append(a)
    if self.history:
      s, y, _ = self.history[-1]
      q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(self.history, reversed(alphas)):
      b = rho * (y @ q)
      q += (a - b) * s
    return -q

  def minimize(self, fg: Callable[[np.ndarray], tuple[float, np.ndarray]],
               x0, max_steps: int, init_step: float = 1.0) -> LBFGSResult:
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fg(x)
    evals = 1
    failures = total_failures = 0
    step0 = init_step
    losses = [float(f)]
    steps = 0
    stopped = False
    while steps < max_steps:
      gnorm = float(np.linalg.norm(g))
      if gnorm <= self.gtol:
        break
      d = self.direction(g)
      slope = float(g @ d)
      if not slope < 0:
        self.reset()
        d, slope = -g, -gnorm**2
      alpha = step0 if self.history else step0 * min(1.0, 1.0 / gnorm)
      accepted = None
      for _ in range(self.max_backtracks):
        x_new = x + alpha * d
        f_new, g_new = fg(x_new)
        evals += 1
        if math.isfinite(f_new) and f_new <= f + self.c1 * alpha * slope:
          accepted = (x_new, f_new, np.asarray(g_new, dtype=np.float64))
          break
        alpha *= 0.5
      if accepted is None:
        failures += 1
        total_failures += 1
        step0 *= 0.5
        self.reset()
        if failures >= self.max_failures:
          stopped = True
          break
        continue
      failures = 0
      x_new, f_new, g_new = accepted
      s, y = x_new - x, g_new - g
      sy = float(s @ y)
      if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
        self.history.append((s, y, 1.0 / sy))
      x, f, g = x_new, f_new, g_new
      losses.append(float(f))
      steps += 1
    return LBFGSResult(x, float(f), float(np.linalg.norm(g)), steps, evals,
                       total_failures, stopped, losses)
