"""Two-stage training and time-marching over overlapping intervals.

Stage 1 runs Adam on a fresh Monte Carlo batch every step (warmup, then
exponential decay, global-norm clipping). Stage 2 runs L-BFGS on frozen
batches, resampling between rounds and discarding the curvature history at
every restart. Long horizons are split into subintervals trained in order,
each initialised from its predecessor and tied to it by continuity penalties
at the shared boundary.
"""
from __future__ import annotations

import functools
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from tdsenet import objective
from tdsenet.objective import BoundaryTargets, LossWeights
from tdsenet.optim import LBFGS, Adam, clip_gradient, learning_rate
from tdsenet.sampler import SliceSampler, sample_conditional, state_log_psi

__all__ = [
    "Stage1Config", "Stage2Config", "TrainConfig", "Interval", "IntervalPlan",
    "partition_time", "BatchSource", "IntervalObjective", "adam_stage",
    "lbfgs_stage", "train_interval", "pretrain_sequence", "PiecewiseSolution",
    "PretrainResult", "TrainingDivergedError", "LOG_COLUMNS",
]

OVERLAP_FRACTION = 0.05

LOG_COLUMNS = ("interval", "stage", "step", "loss", "residual", "initial",
               "value", "time_derivative", "gradient", "grad_norm",
               "acceptance", "wall_time")


class TrainingDivergedError(FloatingPointError):

  def __init__(self, message: str, params: np.ndarray, step: int):
    super().__init__(message)
    self.params = params
    self.step = step


@dataclass(frozen=True)
class Stage1Config:
  steps: int = 2000
  base_lr: float = 1e-3
  warmup_steps: int = 100
  decay_rate: float = 0.1
  decay_period: int = 2000
  n_slices: int = 16
  per_slice: int = 256
  resample_every: int = 1
  mh_steps: int = 5
  initial_points: int = 1024


@dataclass(frozen=True)
class Stage2Config:
  outer_rounds: int = 10
  lbfgs_steps_per_round: int = 50
  history_size: int = 20
  resample_every: int = 1
  mh_steps: int = 20


@dataclass(frozen=True)
class TrainConfig:
  stage1: Stage1Config = field(default_factory=Stage1Config)
  stage2: Stage2Config = field(default_factory=Stage2Config)
  clip_threshold: float = 10.0
  seed: int = 0
  weights: LossWeights = field(default_factory=LossWeights)
  burn_in: int = 500
  step_size: float = 0.5
  init_width: float = 1.0
  boundary_points: int = 1024
  winsorize: bool = True
  convergence_threshold: float = 1e-4

  def __post_init__(self):
    counts = {
        "stage1.steps": self.stage1.steps,
        "stage1.warmup_steps": self.stage1.warmup_steps + 1,
        "stage1.decay_period": self.stage1.decay_period,
        "stage1.n_slices": self.stage1.n_slices,
        "stage1.per_slice": self.stage1.per_slice,
        "stage1.resample_every": self.stage1.resample_every,
        "stage1.initial_points": self.stage1.initial_points,
        "stage2.outer_rounds": self.stage2.outer_rounds + 1,
        "stage2.lbfgs_steps_per_round": self.stage2.lbfgs_steps_per_round,
        "stage2.history_size": self.stage2.history_size,
        "stage2.resample_every": self.stage2.resample_every,
        "boundary_points": self.boundary_points,
    }
    bad = [k for k, v in counts.items() if v <= 0]
    if bad:
      raise ValueError(f"counts must be positive: {', '.join(bad)}")
    if not self.clip_threshold > 0:
      raise ValueError("clip_threshold must be positive")

  @classmethod
  def from_dict(cls, cfg: dict) -> "TrainConfig":
    cfg = dict(cfg)
    s1 = Stage1Config(**cfg.pop("stage1", {}))
    s2 = Stage2Config(**cfg.pop("stage2", {}))
    w = LossWeights(**cfg.pop("weights", {}))
    return cls(stage1=s1, stage2=s2, weights=w, **cfg)

  def to_dict(self) -> dict:
    return asdict(self)


# ---------------------------------------------------------------------------
# time partition


@dataclass(frozen=True)
class Interval:
  start: float
  core_end: float
  end: float
  first: bool

  @property
  def flag(self) -> str:
    return "first" if self.first else "continuation"


@dataclass(frozen=True)
class IntervalPlan:
  intervals: tuple[Interval, ...]

  @property
  def horizon(self) -> float:
    return self.intervals[-1].core_end

  def __len__(self) -> int:
    return len(self.intervals)

  def __iter__(self):
    return iter(self.intervals)

  def __getitem__(self, i):
    return self.intervals[i]


def partition_time(horizon: float, schedule: int | Sequence[float]
                   ) -> IntervalPlan:
  """Split [0, horizon] into M equal pieces (int) or pieces of given lengths.

  Every piece but the last is extended past its end by 5% of its own length.
  """
  if isinstance(schedule, (int, np.integer)):
    if schedule < 1:
      raise ValueError(f"need at least one interval, got {schedule}")
    lengths = [horizon / schedule] * int(schedule)
  else:
    lengths = [float(x) for x in schedule]
    if not lengths or any(x <= 0 for x in lengths):
      raise ValueError("interval lengths must be positive")
    if not math.isclose(sum(lengths), horizon, rel_tol=1e-9, abs_tol=1e-12):
      raise ValueError(f"interval lengths sum to {sum(lengths)}, "
                       f"expected {horizon}")
  edges = np.concatenate([[0.0], np.cumsum(lengths)])
  edges[-1] = horizon
  out = []
  for i, dt in enumerate(lengths):
    last = i == len(lengths) - 1
    end = horizon if last else edges[i + 1] + OVERLAP_FRACTION * dt
    out.append(Interval(float(edges[i]), float(edges[i + 1]), float(end),
                        first=(i == 0)))
  return IntervalPlan(tuple(out))


# ---------------------------------------------------------------------------
# batches and objectives


class BatchSource:
  """Walkers for the residual slices and, on a first interval, for psi0."""

  def __init__(self, log_psi_fn, n_coords: int, interval: Interval,
               config: TrainConfig, psi0=None, hamiltonian=None,
               seed: int = 0):
    s1 = config.stage1
    self.interval = interval
    self.n_slices = s1.n_slices
    self.rng = np.random.default_rng(seed)
    self.walkers = SliceSampler(log_psi_fn, n_coords, s1.n_slices,
                                s1.per_slice, seed,
                                init_width=config.init_width,
                                step_size=config.step_size,
                                hamiltonian=hamiltonian)
    self.psi0 = psi0
    self.initial = None
    if psi0 is not None:
      self.initial = SliceSampler(state_log_psi(psi0),
                                  n_coords, 1, s1.initial_points, seed + 1,
                                  init_width=config.init_width,
                                  step_size=config.step_size,
                                  hamiltonian=hamiltonian)
      self._psi0_values = jax.jit(jax.vmap(
          lambda r: psi0.log_psi(r, 0.0)))
    self.times = self.slice_times()

  def slice_times(self) -> np.ndarray:
    """One time per slice, uniform within its stratum of the interval."""
    a, b = self.interval.start, self.interval.end
    u = self.rng.uniform(size=self.n_slices)
    return a + (np.arange(self.n_slices) + u) * (b - a) / self.n_slices

  def burn_in(self, params, n_steps: int) -> None:
    self.walkers.burn_in(params, self.times, n_steps)
    if self.initial is not None:
      self.initial.burn_in(None, np.zeros(1), n_steps)

  def draw(self, params, mh_steps: int, copies: int = 1) -> dict:
    self.times = self.slice_times()
    parts, logs = [], []
    for _ in range(copies):
      pos, logabs = self.walkers.advance(params, self.times, mh_steps)
      parts.append(pos)
      logs.append(logabs)
    points = np.concatenate(parts, axis=1)
    batch = {
        "points": points,
        "times": np.repeat(self.times[:, None], points.shape[1], axis=1),
        "mask": np.ones(points.shape[:2], dtype=bool),
        "ref_logabs": np.concatenate(logs, axis=1),
    }
    if self.initial is not None:
      ipts = np.concatenate([self.initial.advance(None, np.zeros(1),
                                                  mh_steps)[0][0]
                             for _ in range(copies)])
      la, ph = self._psi0_values(jnp.asarray(ipts))
      batch["initial_points"] = ipts
      batch["initial_target"] = np.asarray(jnp.exp(la + 1j * ph))
    return batch

  @property
  def acceptance(self) -> float:
    return self.walkers.acceptance_rate


def _weights_vector(w: LossWeights) -> jnp.ndarray:
  return jnp.asarray([w.residual, w.initial, w.value, w.time_derivative,
                      w.gradient], dtype=jnp.float64)


@functools.lru_cache(maxsize=32)
def _compiled_objective(log_psi_fn, hamiltonian, has_initial: bool,
                        has_boundary: bool, winsorize: bool):

  def total(params, weights, batch, boundary):
    res, _ = objective.residual_surrogate(
        log_psi_fn, params, batch["points"], batch["times"], batch["mask"],
        batch["ref_logabs"], hamiltonian, winsorize)
    zero = jnp.zeros(())
    ini = pv = pt = ps = zero
    if has_initial:
      ini = objective._initial_loss_against(
          log_psi_fn, params, batch["initial_points"],
          batch["initial_target"])
    if has_boundary:
      pv, pt, ps = objective.continuity_from_targets(
          log_psi_fn, params, boundary["t"], boundary["points"],
          BoundaryTargets(boundary["psi"], boundary["dpsi_dt"],
                          boundary["grad_psi"]))
    terms = jnp.stack([res, ini, pv, pt, ps])
    return jnp.dot(weights, terms), terms

  vg = jax.jit(jax.value_and_grad(total, has_aux=True))
  valid = jax.jit(lambda params, pts, ts: jax.vmap(jax.vmap(
      lambda r, t: objective.bundle(log_psi_fn, params, r, t).valid))(pts, ts))
  return vg, valid


class IntervalObjective:
  """Weighted loss of one interval: residual plus initial or continuity terms.

  ``boundary`` is ``(t_boundary, points, BoundaryTargets)`` for continuation
  intervals, frozen for the whole interval.
  """

  def __init__(self, log_psi_fn, hamiltonian, weights: LossWeights,
               psi0=None, boundary=None):
    self.log_psi_fn = log_psi_fn
    self.hamiltonian = hamiltonian
    self.weights = weights
    self.psi0 = psi0
    self.boundary = None
    if boundary is not None:
      t_b, pts, tg = boundary
      self.boundary = {"t": jnp.asarray(t_b, dtype=jnp.float64),
                       "points": jnp.asarray(pts), "psi": tg.psi,
                       "dpsi_dt": tg.dpsi_dt, "grad_psi": tg.grad_psi}
    w = weights
    if psi0 is None:
      w = replace(w, initial=0.0)
    if boundary is None:
      w = replace(w, value=0.0, time_derivative=0.0, gradient=0.0)
    self._w = _weights_vector(w)

  def _compiled(self, winsorize: bool):
    return _compiled_objective(self.log_psi_fn, self.hamiltonian,
                               self.psi0 is not None,
                               self.boundary is not None, winsorize)

  def value_and_grad(self, params, batch: dict, winsorize: bool = True):
    """Returns (loss, terms[5], grad) with NaN-producing points masked."""
    vg, valid = self._compiled(winsorize)
    jb = {k: jnp.asarray(v) for k, v in batch.items()}
    (loss, terms), g = vg(jnp.asarray(params), self._w, jb, self.boundary)
    if not bool(jnp.all(jnp.isfinite(g))):
      _mask_invalid(batch, np.asarray(valid(jnp.asarray(params),
                                            jb["points"], jb["times"])))
      jb = {k: jnp.asarray(v) for k, v in batch.items()}
      (loss, terms), g = vg(jnp.asarray(params), self._w, jb, self.boundary)
    return float(loss), np.asarray(terms), np.asarray(g)


def _mask_invalid(batch: dict, valid: np.ndarray) -> None:
  """Replace unusable points by a usable one from the same slice, masked."""
  pts, mask, ref = batch["points"], batch["mask"], batch["ref_logabs"]
  for k in np.flatnonzero(~valid.all(axis=1)):
    good = np.flatnonzero(valid[k])
    if good.size == 0:
      continue
    bad = np.flatnonzero(~valid[k])
    pts[k, bad] = pts[k, good[0]]
    ref[k, bad] = ref[k, good[0]]
    mask[k, bad] = False


# ---------------------------------------------------------------------------
# stages


def _row(interval, stage, step, loss, terms, gnorm, acc, t0):
  return {"interval": interval, "stage": stage, "step": step, "loss": loss,
          "residual": terms[0], "initial": terms[1], "value": terms[2],
          "time_derivative": terms[3], "gradient": terms[4],
          "grad_norm": gnorm, "acceptance": acc,
          "wall_time": time.perf_counter() - t0}


def adam_stage(params, config: TrainConfig, source: BatchSource,
               obj: IntervalObjective, log: list | None = None,
               interval_index: int = 0) -> np.ndarray:
  s1 = config.stage1
  params = np.asarray(params, dtype=np.float64).copy()
  opt = Adam()
  t0 = time.perf_counter()
  batch = None
  for k in range(1, s1.steps + 1):
    if batch is None or (k - 1) % s1.resample_every == 0:
      batch = source.draw(params, s1.mh_steps)
    loss, terms, g = obj.value_and_grad(params, batch, config.winsorize)
    gnorm = float(np.linalg.norm(g))
    g = clip_gradient(g, config.clip_threshold)
    if not (math.isfinite(loss) and np.all(np.isfinite(g))):
      raise TrainingDivergedError(
          f"non-finite loss or gradient at Adam step {k} (loss={loss})",
          params, k)
    lr = learning_rate(k, s1.base_lr, s1.warmup_steps, s1.decay_rate,
                       s1.decay_period)
    params = opt.step(params, g, lr)
    if log is not None:
      log.append(_row(interval_index, 1, k, loss, terms, gnorm,
                      source.acceptance, t0))
  return params


def lbfgs_stage(params, config: TrainConfig, source: BatchSource,
                obj: IntervalObjective, log: list | None = None,
                interval_index: int = 0,
                round_callback: Callable | None = None) -> np.ndarray:
  """Rounds of L-BFGS on frozen, importance-weighted batches.

  Stage 2 batches are twice the stage 1 size and are not winsorised, since a
  line search needs a loss whose gradient is exactly its derivative.
  """
  s2 = config.stage2
  params = np.asarray(params, dtype=np.float64).copy()
  opt = LBFGS(history_size=s2.history_size)
  t0 = time.perf_counter()
  batch = None
  for rnd in range(s2.outer_rounds):
    if batch is None or rnd % s2.resample_every == 0:
      batch = source.draw(params, s2.mh_steps, copies=2)
    opt.reset()
    if round_callback is not None:
      round_callback(rnd, opt, params)
    last = {}

    def fg(x, batch=batch):
      loss, terms, g = obj.value_and_grad(x, batch, winsorize=False)
      last["terms"] = terms
      return loss, g

    res = opt.minimize(fg, params, s2.lbfgs_steps_per_round)
    if not math.isfinite(res.f):
      raise TrainingDivergedError("non-finite loss in L-BFGS", params, rnd)
    params = res.x
    if log is not None:
      _, terms, g = obj.value_and_grad(params, batch, winsorize=False)
      log.append(_row(interval_index, 2, rnd + 1, res.f, terms,
                      float(np.linalg.norm(g)), source.acceptance, t0))
  return params


@dataclass
class IntervalDiagnostics:
  interval: Interval
  final_residual: float
  converged: bool
  penalties: tuple | None = None
  seconds: float = 0.0
  params: np.ndarray | None = None


def train_interval(log_psi_fn, n_coords: int, interval: Interval, params,
                   config: TrainConfig, hamiltonian, psi0=None, boundary=None,
                   log: list | None = None, interval_index: int = 0,
                   seed: int | None = None):
  """Train one interval with both stages; returns (params, diagnostics)."""
  t_start = time.perf_counter()
  seed = config.seed + 1000 * interval_index if seed is None else seed
  source = BatchSource(log_psi_fn, n_coords, interval, config, psi0=psi0,
                       hamiltonian=hamiltonian, seed=seed)
  obj = IntervalObjective(log_psi_fn, hamiltonian, config.weights,
                          psi0=psi0, boundary=boundary)
  params = jnp.asarray(params)
  source.burn_in(params, config.burn_in)
  if config.stage1.steps > 0:
    params = adam_stage(params, config, source, obj, log, interval_index)
  if config.stage2.outer_rounds > 0:
    params = lbfgs_stage(params, config, source, obj, log, interval_index)
  batch = source.draw(params, config.stage2.mh_steps, copies=2)
  _, terms, _ = obj.value_and_grad(params, batch, winsorize=False)
  final = float(terms[0])
  penalties = tuple(float(x) for x in terms[2:]) if boundary else None
  diag = IntervalDiagnostics(interval, final,
                             final <= config.convergence_threshold,
                             penalties, time.perf_counter() - t_start)
  return np.asarray(params), diag


# ---------------------------------------------------------------------------
# piecewise solution


class PiecewiseSolution:
  """Interval parameter sets with dispatch by time.

  A time t is served by the interval whose core range [start, core_end)
  contains it; the last interval also serves its right end point.
  """

  def __init__(self, log_psi_fn, plan: IntervalPlan, params: list):
    self.log_psi_fn = log_psi_fn
    self.plan = plan
    self.params = [np.asarray(p) for p in params]
    self._eval = jax.jit(jax.vmap(log_psi_fn, in_axes=(None, 0, 0)))

  @property
  def horizon(self) -> float:
    return self.plan[len(self.params) - 1].core_end

  def index(self, t: float) -> int:
    n = len(self.params)
    for i, iv in enumerate(self.plan.intervals[:n]):
      if iv.start <= t < iv.core_end:
        return i
    if n and 0.0 <= t <= self.horizon * (1 + 1e-12):
      return n - 1
    raise ValueError(f"t={t} outside the solved range [0, {self.horizon}]")

  def log_psi(self, rs, t: float):
    rs = jnp.asarray(rs, dtype=jnp.float64)
    ts = jnp.full(rs.shape[0], t, dtype=jnp.float64)
    return self._eval(jnp.asarray(self.params[self.index(t)]), rs, ts)

  def values(self, rs, t: float) -> np.ndarray:
    la, ph = self.log_psi(rs, t)
    return np.asarray(jnp.exp(la + 1j * ph))

  def boundary_values(self, i: int, rs):
    """psi of intervals i-1 and i at the start of interval i."""
    t = self.plan[i].start
    rs = jnp.asarray(rs, dtype=jnp.float64)
    ts = jnp.full(rs.shape[0], t)
    out = []
    for p in (self.params[i - 1], self.params[i]):
      la, ph = self._eval(jnp.asarray(p), rs, ts)
      out.append(np.asarray(jnp.exp(la + 1j * ph)))
    return out


@dataclass
class PretrainResult:
  solution: PiecewiseSolution
  diagnostics: list
  completed: bool
  log: list


def pretrain_sequence(plan: IntervalPlan, psi0, config: TrainConfig,
                      hamiltonian, log_psi_fn, n_coords: int, init_params,
                      done: Sequence[np.ndarray] = (),
                      on_interval: Callable | None = None,
                      stop_on_gate: bool = True) -> PretrainResult:
  """Train the plan's intervals in order.

  ``done`` holds parameter sets of already-finished intervals (resume).
  ``on_interval(i, params, diagnostics)`` runs after each interval. A failed
  convergence gate stops the sequence (unless ``stop_on_gate`` is false)
  and the completed prefix is returned.
  """
  params_list = [np.asarray(p) for p in done]
  diagnostics = []
  log: list = []
  completed = True
  for i in range(len(params_list), len(plan)):
    iv = plan[i]
    if i == 0:
      params, diag = train_interval(log_psi_fn, n_coords, iv, init_params,
                                    config, hamiltonian, psi0=psi0, log=log,
                                    interval_index=0)
    else:
      old = jnp.asarray(params_list[i - 1])
      pts = sample_conditional(log_psi_fn, old, iv.start,
                               config.boundary_points, config.burn_in,
                               seed=config.seed + 7919 * i, n_coords=n_coords,
                               step_size=config.step_size,
                               init_width=config.init_width,
                               hamiltonian=hamiltonian)
      targets = objective.boundary_targets(log_psi_fn, old, iv.start, pts)
      params, diag = train_interval(log_psi_fn, n_coords, iv, old, config,
                                    hamiltonian,
                                    boundary=(iv.start, pts, targets),
                                    log=log, interval_index=i)
    diagnostics.append(diag)
    if on_interval is not None:
      on_interval(i, params, diag)
    if not diag.converged and stop_on_gate:
      completed = False
      diag.params = params
      break
    params_list.append(params)
  return PretrainResult(PiecewiseSolution(log_psi_fn, plan, params_list),
                        diagnostics, completed, log)
