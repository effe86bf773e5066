"""Antisymmetric spatiotemporal neural wavefunction.

The network follows the FermiNet layout with time fed in as an extra input
everywhere: one- and two-electron feature streams, permutation-equivariant
residual blocks, orbitals built from a linear base amplitude times a
time-dependent envelope times a unit-modulus phase factor, and a weighted sum
over products of spin-block Slater determinants.

Parameters live in one flat float64 vector. ``ParamLayout`` is the shape table
that fixes the canonical ordering; it is what checkpoints record and what
parameter gradients are aligned to.
"""
from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import Any, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from tdsenet.autodiff import WavefunctionProgram


@dataclass(frozen=True)
class SystemSpec:
  """Physical system plus network sizes.

  ``nuclei`` is a tuple of ``(position, charge)``. For a 1D problem without
  nuclei a single virtual nucleus of zero charge sits at the origin so that
  the one-electron stream still has a reference point.
  """
  n_up: int
  n_down: int = 0
  d: int = 1
  nuclei: tuple = ()
  envelope_exponent: float = 2.0
  layers: int = 3
  width_1e: int = 32
  width_2e: int = 8
  n_determinants: int = 2
  phase_hidden: int = 16
  envelope_hidden: int = 16
  hamiltonian: Any = None

  def __post_init__(self):
    if self.n_up < 0 or self.n_down < 0 or self.n_up + self.n_down < 1:
      raise ValueError("need n_up, n_down >= 0 and at least one particle")
    if self.d not in (1, 3):
      raise ValueError(f"spatial dimension must be 1 or 3, got {self.d}")
    if not self.envelope_exponent > 0:
      raise ValueError("envelope exponent must be positive")
    if self.layers < 1:
      raise ValueError("need at least one equivariant layer")
    if self.n_determinants < 1:
      raise ValueError("need at least one determinant")
    for pos, _ in self.nuclei:
      if len(pos) != self.d:
        raise ValueError(f"nucleus position {pos} is not {self.d}-dimensional")

  @property
  def n_particles(self) -> int:
    return self.n_up + self.n_down

  @property
  def n_coords(self) -> int:
    return self.n_particles * self.d

  @property
  def effective_nuclei(self) -> tuple:
    if self.nuclei:
      return self.nuclei
    return (((0.0,) * self.d, 0.0),)

  @property
  def channels(self) -> tuple[tuple[int, int], ...]:
    """(first index, count) of every non-empty spin channel."""
    out = []
    if self.n_up:
      out.append((0, self.n_up))
    if self.n_down:
      out.append((self.n_up, self.n_down))
    return tuple(out)

  def to_dict(self) -> dict:
    out = dataclasses.asdict(self)
    out["nuclei"] = [{"position": list(p), "charge": q} for p, q in self.nuclei]
    h = self.hamiltonian
    out["hamiltonian"] = None if h is None else hamiltonian_to_dict(h)
    return out


def hamiltonian_to_dict(h) -> dict:
  from tdsenet import hamiltonian as ham
  kinds = {
      ham.MolecularLaser: "molecular_laser",
      ham.Coulomb3D: "coulomb_3d",
      ham.TrappedInteracting1D: "trapped_interacting_1d",
      ham.HarmonicOscillator1D: "harmonic_oscillator_1d",
  }
  out = {"kind": kinds[type(h)]}
  for f in dataclasses.fields(h):
    if f.name in ("d", "kinetic_prefactor"):
      continue
    value = getattr(h, f.name)
    if f.name == "nuclei":
      value = [{"position": list(p), "charge": q} for p, q in value]
    out[f.name] = value
  return out


def spec_from_dict(cfg: dict) -> SystemSpec:
  from tdsenet.hamiltonian import hamiltonian_from_dict
  cfg = dict(cfg)
  cfg["nuclei"] = tuple((tuple(float(x) for x in n["position"]),
                         float(n["charge"])) for n in cfg.get("nuclei", ()))
  if cfg.get("hamiltonian") is not None:
    cfg["hamiltonian"] = hamiltonian_from_dict(cfg["hamiltonian"])
  return SystemSpec(**cfg)


class ParamLayout:
  """Ordered shape table mapping names to slices of the flat vector."""

  def __init__(self, entries: list[tuple[str, tuple[int, ...]]]):
    self.entries = list(entries)
    self.offsets = {}
    offset = 0
    for name, shape in self.entries:
      size = int(np.prod(shape, dtype=int))
      self.offsets[name] = (offset, size, tuple(shape))
      offset += size
    self.size = offset

  def unflatten(self, vec) -> dict:
    return {name: vec[o:o + n].reshape(shape)
            for name, (o, n, shape) in self.offsets.items()}

  def flatten(self, params: dict) -> np.ndarray:
    return np.concatenate(
        [np.asarray(params[name], dtype=np.float64).ravel()
         for name, _ in self.entries])

  def index_of(self, name: str) -> slice:
    o, n, _ = self.offsets[name]
    return slice(o, o + n)

  def name_at(self, index: int) -> str:
    for name, (o, n, _) in self.offsets.items():
      if o <= index < o + n:
        return name
    raise IndexError(index)

  def table(self) -> list[dict]:
    return [{"name": name, "shape": list(shape)} for name, shape in self.entries]


def param_layout(spec: SystemSpec) -> ParamLayout:
  d = spec.d
  n_nuc = len(spec.effective_nuclei)
  n_chan = len(spec.channels)
  k = spec.n_determinants
  w1, w2 = spec.width_1e, spec.width_2e
  in1, in2 = n_nuc * (d + 2), d + 2

  entries = []
  for layer in range(spec.layers):
    w1_in = in1 if layer == 0 else w1
    w2_in = in2 if layer == 0 else w2
    f_width = (1 + n_chan) * w1_in + n_chan * w2_in
    entries.append((f"layer{layer}.V", (w1, f_width)))
    entries.append((f"layer{layer}.b", (w1,)))
    # the two-electron output of the last layer never reaches the orbitals
    if layer < spec.layers - 1:
      entries.append((f"layer{layer}.W", (w2, w2_in)))
      entries.append((f"layer{layer}.c", (w2,)))

  n_env_out = 0
  for a, (_, n) in enumerate(spec.channels):
    entries.append((f"orbital{a}.w", (k, n, w1)))
    entries.append((f"orbital{a}.g", (k, n)))
    entries.append((f"envelope{a}.pi0", (k, n, n_nuc)))
    entries.append((f"envelope{a}.sigma0", (k, n, n_nuc, d, d)))
    n_env_out += k * n * n_nuc * (1 + d * d)

  he = spec.envelope_hidden
  entries += [("envgen.A1", (he, 1)), ("envgen.a1", (he,)),
              ("envgen.A2", (n_env_out, he)), ("envgen.a2", (n_env_out,))]

  hp = spec.phase_hidden
  n_max = max(n for _, n in spec.channels)
  entries += [("phase.B1", (hp, w1 + 1)), ("phase.b1", (hp,)),
              ("phase.B2", (k * n_max, hp)), ("phase.b2", (k * n_max,))]
  entries.append(("omega", (k,)))
  return ParamLayout(entries)


def init_params(spec: SystemSpec, seed: int) -> np.ndarray:
  """Deterministic initial parameter vector.

  Dense weights are N(0, 1/fan_in) so that pre-activations have unit variance
  for unit-variance inputs. Envelopes start at pi = 1, Sigma = identity with a
  small time-dependent correction, the phase network starts close to zero and
  the determinant weights are uniform.
  """
  layout = param_layout(spec)
  rng = np.random.default_rng(seed)
  p = {}
  for name, shape in layout.entries:
    field = name.split(".")[-1]
    if field in ("V", "W", "B1", "A1"):
      p[name] = rng.normal(size=shape) / math.sqrt(shape[-1])
    elif field in ("b", "c", "b1", "a2", "b2"):
      p[name] = np.zeros(shape)
    elif field == "a1":
      p[name] = rng.normal(size=shape)
    elif field in ("A2", "B2"):
      p[name] = 0.01 * rng.normal(size=shape) / math.sqrt(shape[-1])
    elif field == "w":
      p[name] = rng.normal(size=shape) / math.sqrt(shape[-1])
    elif field == "g":
      p[name] = np.ones(shape)
    elif field == "pi0":
      p[name] = np.ones(shape)
    elif field == "sigma0":
      p[name] = np.broadcast_to(np.eye(spec.d), shape).copy()
    elif field == "omega":
      p[name] = np.full(shape, 1.0 / spec.n_determinants)
    else:
      raise AssertionError(name)
  return layout.flatten(p)


class FeatureStreams(NamedTuple):
  h1: jnp.ndarray  # (N, width)
  h2: jnp.ndarray  # (N, N, width)


def _safe_norm(v):
  # exact zero with zero derivative at the origin (diagonal pairs, r = R)
  q = jnp.sum(v * v, axis=-1)
  nonzero = q > 0
  return jnp.where(nonzero, jnp.sqrt(jnp.where(nonzero, q, 1.0)), 0.0)


def feature_streams(r, t, spec: SystemSpec) -> FeatureStreams:
  """Input one-electron and two-electron features at time ``t``."""
  n, d = spec.n_particles, spec.d
  x = jnp.asarray(r).reshape(n, d)
  t = jnp.asarray(t, dtype=x.dtype)
  nuclei = spec.effective_nuclei
  nuc = jnp.asarray([p for p, _ in nuclei], dtype=x.dtype)
  disp = x[:, None, :] - nuc[None, :, :]                    # (N, M, d)
  # Chargeless anchor sites get a smooth radial feature: a kink there would
  # put a delta function into the Laplacian that no sampled point can see.
  charged = jnp.asarray([q != 0 for _, q in nuclei])
  soft = jnp.sqrt(jnp.sum(disp * disp, axis=-1) + 1.0) - 1.0
  dist = jnp.where(charged, _safe_norm(disp), soft)[..., None]  # (N, M, 1)
  tt = jnp.broadcast_to(t, disp.shape[:2] + (1,))
  h1 = jnp.concatenate([disp, dist, tt], axis=-1).reshape(n, -1)

  pair = x[:, None, :] - x[None, :, :]                      # (N, N, d)
  pdist = _safe_norm(pair)[..., None]
  pt = jnp.broadcast_to(t, pair.shape[:2] + (1,))
  h2 = jnp.concatenate([pair, pdist, pt], axis=-1)
  return FeatureStreams(h1, h2)


def _per_row(x, weight):
  """x @ weight.T as one matrix-vector product per row.

  A plain GEMM may round a row differently depending on where it sits in
  the block; batching over rows applies the same arithmetic to every
  electron.
  """
  w = jnp.broadcast_to(weight, x.shape[:-1] + weight.shape)
  return jnp.einsum("...oi,...i->...o", w, x)


def _reslin(x, weight, bias, skip):
  out = jnp.tanh(_per_row(x, weight) + bias)
  if out.shape[-1] == skip.shape[-1]:
    return (out + skip) / math.sqrt(2.0)
  return out


def _channel_mean(x, axis):
  # summing in sorted order makes the rounding independent of electron order
  return jnp.mean(jnp.sort(x, axis=axis), axis=axis)


def equivariant_block(streams: FeatureStreams, layer_params: dict,
                      spec: SystemSpec) -> FeatureStreams:
  """One permutation-equivariant update of both streams.

  ``layer_params`` holds ``V, b`` and, except on the last layer, ``W, c``.
  When a layer changes the width of a stream the residual skip is dropped and
  the 1/sqrt(2) rescaling with it.
  """
  h1, h2 = streams
  means, pair_means = [], []
  for start, count in spec.channels:
    means.append(_channel_mean(h1[start:start + count], axis=0))
    pair_means.append(_channel_mean(h2[:, start:start + count], axis=1))
  n = h1.shape[0]
  global_means = [jnp.broadcast_to(g, (n, g.shape[-1])) for g in means]
  f = jnp.concatenate([h1] + global_means + pair_means, axis=-1)
  new_h1 = _reslin(f, layer_params["V"], layer_params["b"], h1)
  if "W" in layer_params:
    new_h2 = _reslin(h2, layer_params["W"], layer_params["c"], h2)
  else:
    new_h2 = h2
  return FeatureStreams(new_h1, new_h2)


def envelope_parameters(t, p: dict, spec: SystemSpec):
  """pi(t), Sigma(t) for every channel: bases plus a shared MLP of t."""
  t = jnp.asarray(t)
  hidden = jnp.tanh(p["envgen.A1"][:, 0] * t + p["envgen.a1"])
  delta = p["envgen.A2"] @ hidden + p["envgen.a2"]
  out = []
  offset = 0
  for a in range(len(spec.channels)):
    pi0 = p[f"envelope{a}.pi0"]
    sigma0 = p[f"envelope{a}.sigma0"]
    dpi = delta[offset:offset + pi0.size].reshape(pi0.shape)
    offset += pi0.size
    dsigma = delta[offset:offset + sigma0.size].reshape(sigma0.shape)
    offset += sigma0.size
    out.append((pi0 + dpi, sigma0 + dsigma))
  return out


def envelope(rj, pi, sigma, spec: SystemSpec):
  """sum_I pi_I exp(-||Sigma_I (r_j - R_I)||^p) for one orbital.

  ``pi`` has shape (M,), ``sigma`` (M, d, d); ``rj`` is a d-vector. Leading
  batch axes on ``pi``/``sigma`` broadcast.
  """
  nuc = jnp.asarray([pos for pos, _ in spec.effective_nuclei],
                    dtype=jnp.float64)
  disp = jnp.asarray(rj) - nuc                                   # (M, d)
  y = jnp.einsum("...mab,mb->...ma", sigma, disp)
  q = jnp.sum(y * y, axis=-1)
  return jnp.sum(pi * jnp.exp(-_power_of_norm(q, spec.envelope_exponent)),
                 axis=-1)


def _power_of_norm(q, p):
  """||y||^p given q = ||y||^2, smooth at q = 0 for p >= 2."""
  if p == 2:
    return q
  nonzero = q > 0
  return jnp.where(nonzero, jnp.where(nonzero, q, 1.0) ** (0.5 * p), 0.0)


def phase_angles(h_final, t, p: dict):
  """S(h_j, t) for every electron: (N, K * n_max) phase angles."""
  tt = jnp.broadcast_to(jnp.asarray(t), h_final.shape[:1] + (1,))
  z = jnp.concatenate([h_final, tt], axis=-1)
  hidden = jnp.tanh(_per_row(z, p["phase.B1"]) + p["phase.b1"])
  return _per_row(hidden, p["phase.B2"]) + p["phase.b2"]


def phase_factor(h_final, t, p: dict):
  return jnp.exp(1j * phase_angles(h_final, t, p))


def _log_det(m):
  """(log|det|, arg of the pivots, permutation sign) for a stack of matrices.

  Gaussian elimination with partial pivoting over the rows.  Rows are
  electrons, so permuting electrons only permutes the pivot search: the
  pivots come out bitwise identical and the exchange shows up in the exact
  sign alone.
  """
  n = m.shape[-1]
  batch = m.shape[:-2]
  a = m.reshape((-1, n, n))

  def one(a):
    logabs = jnp.zeros((), a.real.dtype)
    phase = jnp.zeros((), a.real.dtype)
    sign = jnp.ones((), a.real.dtype)
    rows = jnp.arange(n)
    for k in range(n):
      mag = jax.lax.stop_gradient(jnp.abs(a[k:, k]) ** 2)
      p = k + jnp.argmax(mag)
      perm = rows.at[k].set(p).at[p].set(k)
      a = a[perm]
      sign = jnp.where(p != k, -sign, sign)
      piv = a[k, k]
      logabs = logabs + jnp.log(jnp.abs(piv))
      phase = phase + jnp.angle(piv)
      if k + 1 < n:
        factor = a[k + 1:, k] / piv
        a = a.at[k + 1:, k + 1:].add(-factor[:, None] * a[k, k + 1:][None, :])
    return logabs, phase, sign

  la, ph, sg = jax.vmap(one)(a)
  return la.reshape(batch), ph.reshape(batch), sg.reshape(batch)


def orbitals(r, t, p: dict, spec: SystemSpec):
  """Orbital matrices phi[k, i, j] for each spin channel."""
  n, d = spec.n_particles, spec.d
  x = jnp.asarray(r).reshape(n, d)
  streams = feature_streams(x, t, spec)
  for layer in range(spec.layers):
    lp = {key: p[f"layer{layer}.{key}"] for key in ("V", "b", "W", "c")
          if f"layer{layer}.{key}" in p}
    streams = equivariant_block(streams, lp, spec)
  h = streams.h1
  k_det = spec.n_determinants
  n_max = max(c for _, c in spec.channels)
  angles = phase_angles(h, t, p).reshape(n, k_det, n_max)
  env_params = envelope_parameters(t, p, spec)

  mats = []
  for a, (start, count) in enumerate(spec.channels):
    hj = h[start:start + count]
    base = (jnp.sum(p[f"orbital{a}.w"][:, :, None, :] * hj, axis=-1)
            + p[f"orbital{a}.g"][:, :, None])
    pi, sigma = env_params[a]                      # (K, i, M), (K, i, M, d, d)
    xj = x[start:start + count]
    env = jax.vmap(lambda rj: envelope(rj, pi, sigma, spec),
                   out_axes=-1)(xj)                # (K, i, j)
    s = jnp.transpose(angles[start:start + count, :, :count], (1, 2, 0))
    mats.append(base * env * jnp.exp(1j * s))
  return mats


def log_psi(r, t, params, spec: SystemSpec, layout: ParamLayout | None = None):
  """(log|psi|, arg psi) of the network at one configuration."""
  layout = layout or param_layout(spec)
  p = layout.unflatten(jnp.asarray(params))
  mats = orbitals(r, t, p, spec)
  logabs = phase = 0.0
  sign = 1.0
  for m in mats:
    # electrons index the rows of the elimination
    la, ph, sg = _log_det(jnp.swapaxes(m, -1, -2))
    logabs = logabs + la
    phase = phase + ph
    sign = sign * sg
  omega = p["omega"]
  shift = jax.lax.stop_gradient(jnp.max(logabs))
  # every determinant vanishes exactly (coincident same-spin electrons)
  shift = jnp.where(shift > -jnp.inf, shift, 0.0)
  mag = omega * jnp.exp(logabs - shift) * sign
  re = jnp.sum(mag * jnp.cos(phase))
  im = jnp.sum(mag * jnp.sin(phase))
  return shift + 0.5 * jnp.log(re * re + im * im), jnp.arctan2(im, re)


class Ansatz:
  """A network instance: spec, parameter layout and checked program."""

  def __init__(self, spec: SystemSpec):
    self.spec = spec
    self.layout = param_layout(spec)
    layout = self.layout
    self.log_psi = lambda params, r, t: log_psi(r, t, params, spec, layout)
    self.program = WavefunctionProgram(
        self.log_psi, jnp.asarray(init_params(spec, 0)), spec.n_coords)

  @property
  def n_params(self) -> int:
    return self.layout.size

  def init_params(self, seed: int) -> np.ndarray:
    return init_params(self.spec, seed)


@functools.lru_cache(maxsize=16)
def ansatz_for(spec: SystemSpec) -> Ansatz:
  """Shared instance per spec, so repeated runs reuse compiled code."""
  return Ansatz(spec)
