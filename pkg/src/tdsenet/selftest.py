"""Invariant suites shared by the ``selftest`` command and the test-suite.

Each suite returns a ``SuiteResult`` with a pass flag, the worst observed
value and the tolerance it was held to.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from tdsenet import numerics, objective, oracles
from tdsenet.ansatz import Ansatz, SystemSpec
from tdsenet.autodiff import bundle
from tdsenet.hamiltonian import HarmonicOscillator1D, TrappedInteracting1D

__all__ = ["SuiteResult", "antisymmetry_suite", "derivative_suite",
           "ermakov_suite", "oracle_residual_suite", "estimator_suite",
           "run_all", "SUITES", "gaussian_toy_loss", "toy_log_psi",
           "toy_batch", "TOY_ENERGY"]


@dataclass
class SuiteResult:
  name: str
  passed: bool
  details: dict = field(default_factory=dict)
  seconds: float = 0.0

  def line(self) -> str:
    status = "PASS" if self.passed else "FAIL"
    info = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items())
    return f"{status} {self.name} ({self.seconds:.1f}s): {info}"


def _fmt(v):
  if isinstance(v, float):
    return f"{v:.3g}"
  return str(v)


def _timed(name: str, fn: Callable[[], tuple[bool, dict]]) -> SuiteResult:
  t0 = time.perf_counter()
  passed, details = fn()
  return SuiteResult(name, bool(passed), details, time.perf_counter() - t0)


def _wrap(a):
  return np.abs(np.remainder(np.asarray(a) + np.pi, 2 * np.pi) - np.pi)


def small_spec(n_up: int, n_down: int = 0, d: int = 1, **kw) -> SystemSpec:
  opts = dict(layers=2, width_1e=8, width_2e=4, n_determinants=2,
              phase_hidden=8, envelope_hidden=4)
  opts.update(kw)
  return SystemSpec(n_up=n_up, n_down=n_down, d=d, **opts)


# ---------------------------------------------------------------------------


def antisymmetry_suite(n_draws: int = 200, seed: int = 0,
                       vandermonde: Callable | None = None,
                       log_tol: float = 1e-12,
                       phase_tol: float = 1e-10) -> SuiteResult:
  """Same-spin exchange flips the sign of the network and the fermion oracle.

  ``vandermonde`` replaces the oracle's antisymmetric prefactor, so a broken
  factor can be shown to fail the suite.
  """

  def run():
    rng = np.random.default_rng(seed)
    worst_log = worst_phase = 0.0
    for n_up, n_down in ((2, 0), (3, 0), (4, 0), (2, 1), (2, 2)):
      a = Ansatz(small_spec(n_up, n_down))
      n = n_up + n_down
      base = a.init_params(seed)
      params = base + 0.3 * rng.standard_normal((n_draws, base.size))
      rs = rng.standard_normal((n_draws, n))
      ts = rng.uniform(0, 3, n_draws)
      swapped = rs.copy()
      # swap a random same-spin pair within the spin-up block
      for k in range(n_draws):
        i, j = rng.choice(n_up, 2, replace=False)
        swapped[k, [i, j]] = swapped[k, [j, i]]
      f = jax.jit(jax.vmap(a.log_psi))
      la, pa = f(jnp.asarray(params), jnp.asarray(rs), jnp.asarray(ts))
      lb, pb = f(jnp.asarray(params), jnp.asarray(swapped), jnp.asarray(ts))
      worst_log = max(worst_log, float(jnp.max(jnp.abs(la - lb))))
      worst_phase = max(worst_phase, float(np.max(_wrap(pa - pb - np.pi))))
    # analytic fermion state
    oracle_bad = 0.0
    for n in (2, 3):
      o = oracles.FermionScaling(
          n, **({"vandermonde": vandermonde} if vandermonde else {}))
      for _ in range(20):
        r = rng.standard_normal(n)
        t = rng.uniform(0, 2)
        s = r.copy()
        s[[0, 1]] = s[[1, 0]]
        va, vb = complex(o.value(r, t)), complex(o.value(s, t))
        oracle_bad = max(oracle_bad, abs(va + vb) / max(abs(va), 1e-300))
    passed = (worst_log <= log_tol and worst_phase <= phase_tol
              and oracle_bad <= 1e-10)
    return passed, {"max_log_abs_diff": worst_log,
                    "max_phase_error": worst_phase,
                    "oracle_sign_error": oracle_bad,
                    "draws_per_system": n_draws}

  return _timed("antisymmetry", run)


# ---------------------------------------------------------------------------


def _rel(fd, ad):
  fd, ad = np.asarray(fd), np.asarray(ad)
  return float(np.max(np.abs(fd - ad)) / max(float(np.max(np.abs(ad))), 1.0))


def _central(g, g0):
  """Fourth-order central differences on the stencil -2h..2h, in units of h.

  Returns (h g', h^2 g''); ``g(s)`` evaluates at offset s*h.
  """
  gp1, gm1, gp2, gm2 = g(1.0), g(-1.0), g(2.0), g(-2.0)
  d1 = (8 * (gp1 - gm1) - (gp2 - gm2)) / 12
  if g0 is None:
    return d1, None
  d2 = (16 * (gp1 + gm1) - (gp2 + gm2) - 30 * g0) / 12
  return d1, d2


def derivative_suite(n_points: int = 50, n_params: int = 10, seed: int = 0,
                     h: float = 1e-4, tol: float = 1e-6,
                     param_tol: float = 1e-5) -> SuiteResult:
  """Derivative bundle and parameter gradient against central differences.

  Errors are |fd - ad| / max(|ad|, 1) over the components of each quantity.
  The stencil is fourth order so that truncation stays below the tolerance
  near nodes, where log psi has large higher derivatives.
  """

  def run():
    spec = small_spec(2, 1)
    a = Ansatz(spec)
    params = jnp.asarray(a.init_params(seed))
    rng = np.random.default_rng(seed)
    f = jax.jit(lambda r, t: jnp.stack(a.log_psi(params, r, t)))
    bun = jax.jit(lambda r, t: bundle(a.log_psi, params, r, t))
    worst = {"grad": 0.0, "laplacian": 0.0, "time": 0.0}
    n = spec.n_coords
    for _ in range(n_points):
      r = jnp.asarray(rng.standard_normal(n))
      t = float(rng.uniform(0, 2))
      b = bun(r, t)
      f0 = f(r, t)
      g_fd, lap_fd = [], 0.0
      for j in range(n):
        e = jnp.zeros(n).at[j].set(h)
        d1, d2 = _central(lambda s: f(r + s * e, t), f0)
        g_fd.append(d1 / h)
        lap_fd = lap_fd + d2 / h**2
      g_fd = np.array(g_fd)
      dt_fd = _central(lambda s: f(r, t + s * h), f0)[0] / h
      worst["grad"] = max(worst["grad"], _rel(
          g_fd[:, 0] + 1j * g_fd[:, 1], b.grad_r))
      worst["laplacian"] = max(worst["laplacian"], _rel(
          lap_fd[0] + 1j * lap_fd[1], b.laplacian_log))
      worst["time"] = max(worst["time"], _rel(
          dt_fd[0] + 1j * dt_fd[1], b.dlog_dt))

    # parameter gradient of the residual loss on a fixed small batch
    ham = HarmonicOscillator1D()
    pts = jnp.asarray(rng.standard_normal((2, 8, n)))
    tms = jnp.asarray(rng.uniform(0, 1, (2, 8)))
    mask = jnp.ones((2, 8), dtype=bool)
    ref = jax.vmap(jax.vmap(lambda r, t: a.log_psi(params, r, t)[0]))(pts,
                                                                       tms)
    loss = jax.jit(lambda p: objective.residual_surrogate(
        a.log_psi, p, pts, tms, mask, ref, ham, winsorize=False)[0])
    g = np.asarray(jax.grad(loss)(params))
    idx = rng.choice(params.size, n_params, replace=False)
    pg = 0.0
    for i in idx:
      e = jnp.zeros(params.size).at[i].set(h)
      fd = _central(lambda s: loss(params + s * e), None)[0] / h
      pg = max(pg, abs(float(fd) - g[i]) / max(abs(g[i]), 1.0))
    worst["param_grad"] = pg
    passed = (max(worst["grad"], worst["laplacian"], worst["time"]) <= tol
              and pg <= param_tol)
    return passed, worst

  return _timed("derivatives", run)


# ---------------------------------------------------------------------------


def ermakov_suite(n_grid: int = 1000, tol: float = 1e-9) -> SuiteResult:
  """L'' + w_f^2 L - w_0^2 / L^3 = 0 and a continuous, increasing tau."""

  def run():
    w0, wf = 1.0, 2.0
    t = np.linspace(0, np.pi, n_grid)
    L, _, Ldd = (np.asarray(x) for x in
                 oracles.scale_and_derivatives(t, w0, wf))
    res = float(np.max(np.abs(Ldd + wf**2 * L - w0**2 / L**3)))
    tau = np.asarray(oracles.scaled_time(np.linspace(0, 3 * np.pi, 20001),
                                         w0, wf))
    increasing = bool(np.all(np.diff(tau) > 0))
    jump = 0.0
    for k in range(1, 6):
      ts = (k - 0.5) * np.pi / wf
      lo, hi = (float(oracles.scaled_time(ts + s, w0, wf))
                for s in (-1e-12, 1e-12))
      jump = max(jump, abs(hi - lo))
    return (res <= tol and increasing and jump <= 1e-10,
            {"ermakov_residual": res, "tau_increasing": increasing,
             "tau_jump": jump})

  return _timed("ermakov", run)


# ---------------------------------------------------------------------------


def oracle_residual_suite(n_points: int = 50, seed: int = 0,
                          tol: float = 1e-8) -> SuiteResult:
  """Every analytic state solves its own TDSE; pre-quench E0 is exact."""

  def run():
    rng = np.random.default_rng(seed)
    worst = {}
    for name in oracles.ORACLE_NAMES:
      o = oracles.oracle_from_name(name)
      h = o.hamiltonian()
      f = jax.jit(jax.vmap(lambda r, t: objective.residual_density(
          bundle(lambda p, x, s: o.log_psi(x, s), None, r, t), r, t, h)))
      rs = 1.5 * rng.standard_normal((n_points, o.n_coords))
      ts = rng.uniform(0, 3, n_points)
      worst[name] = float(jnp.max(f(jnp.asarray(rs), jnp.asarray(ts))))
    e0_err = 0.0
    pre = TrappedInteracting1D()
    for n in (2, 3):
      o = oracles.FermionScaling(n)
      e0 = (1 + (n * n - 1) * math.sqrt(1 + n)) / 2
      f = jax.jit(jax.vmap(lambda r: objective.local_energy(
          bundle(lambda p, x, s: o.ground_log_psi(x), None, r, 0.0), r, -1.0,
          pre)))
      el = np.asarray(f(jnp.asarray(rng.standard_normal((n_points, n)))))
      e0_err = max(e0_err, float(np.max(np.abs(el - e0))))
    res = max(worst.values())
    return (res <= tol and e0_err <= tol,
            {"max_residual": res, "worst_state": max(worst, key=worst.get),
             "prequench_energy_error": e0_err})

  return _timed("oracle_residual", run)


# ---------------------------------------------------------------------------
# one-parameter Gaussian toy: psi_s = exp(-s r^2 - i E t) under the HO

TOY_ENERGY = 0.5


def toy_log_psi(p, r, t):
  return -p[0] * jnp.sum(r * r), -TOY_ENERGY * t


def gaussian_toy_loss(sigma: float, order: int = 400, box: float = 14.0
                      ) -> float:
  """Residual loss of the toy family by Gauss-Legendre quadrature."""
  rule = numerics.gauss_legendre(order, -box, box)
  r = rule.nodes
  rho = (TOY_ENERGY - sigma - r * r * (0.5 - 2 * sigma**2)) ** 2
  w = rule.weights * np.exp(-2 * sigma * r * r)
  return float(np.sum(w * rho) / np.sum(w))


def toy_batch(sigma: float, n_slices: int, per_slice: int,
              rng: np.random.Generator) -> objective.SampleBatch:
  """Exact draws from |psi_s|^2 = N(0, 1/(4 s)) at stratified times in [0, 1]."""
  pts = rng.normal(0.0, math.sqrt(1 / (4 * sigma)),
                   (n_slices, per_slice, 1))
  times = (np.arange(n_slices) + rng.uniform(size=n_slices)) / n_slices
  return objective.SampleBatch(pts, np.repeat(times[:, None], per_slice, 1))


def estimator_suite(n_batches: int = 200, sigma: float = 0.35,
                    n_slices: int = 4, per_slice: int = 4096, seed: int = 0,
                    n_sigmas: float = 3.0) -> SuiteResult:
  """Mean of the three-term gradient estimator vs the quadrature gradient."""

  def run():
    h = HarmonicOscillator1D()
    params = jnp.asarray([sigma])
    rng = np.random.default_rng(seed)
    est = np.array([objective.residual_grad(
        toy_log_psi, params, toy_batch(sigma, n_slices, per_slice, rng), h)[0]
                    for _ in range(n_batches)])
    eps = 1e-5
    exact = (gaussian_toy_loss(sigma + eps)
             - gaussian_toy_loss(sigma - eps)) / (2 * eps)
    mean = float(est.mean())
    se = float(est.std(ddof=1) / math.sqrt(n_batches))
    z = abs(mean - exact) / se
    return z <= n_sigmas, {"estimator_mean": mean, "quadrature_gradient":
                           exact, "standard_error": se, "z": z}

  return _timed("estimator", run)


SUITES = {
    "antisymmetry": antisymmetry_suite,
    "derivatives": derivative_suite,
    "ermakov": ermakov_suite,
    "oracle_residual": oracle_residual_suite,
    "estimator": estimator_suite,
}


def run_all(names=None, **overrides) -> list[SuiteResult]:
  out = []
  for name in names or SUITES:
    out.append(SUITES[name](**overrides.get(name, {})))
  return out
