"""Run configuration: JSON schema, loading with line-aware errors, overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from tdsenet.ansatz import SystemSpec
from tdsenet.hamiltonian import hamiltonian_from_dict
from tdsenet.oracles import oracle_from_dict
from tdsenet.trainer import TrainConfig, partition_time

__all__ = ["SCHEMA", "SCHEMA_VERSION", "ConfigError", "RunConfig",
           "load_config", "parse_config", "apply_overrides", "config_hash"]

SCHEMA_VERSION = 1

_NONNEG = {"type": "number", "minimum": 0}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}
_COUNT0 = {"type": "integer", "minimum": 0}


def _obj(props: dict, required=()) -> dict:
  return {"type": "object", "properties": props, "required": list(required),
          "additionalProperties": False}


_NUCLEUS = _obj({"position": {"type": "array", "items": {"type": "number"}},
                 "charge": {"type": "number"}}, ["position", "charge"])

SCHEMA = _obj({
    "version": {"const": SCHEMA_VERSION},
    "seed": {"type": "integer", "minimum": 0},
    "output": {"type": "string"},
    "problem": _obj({
        "system": _obj({
            "n_up": _COUNT0, "n_down": _COUNT0,
            "d": {"enum": [1, 3]},
            "nuclei": {"type": "array", "items": _NUCLEUS},
            "envelope_exponent": _POS,
        }, ["n_up", "d"]),
        "hamiltonian": _obj({
            "kind": {"enum": ["harmonic_oscillator_1d",
                              "trapped_interacting_1d", "coulomb_3d",
                              "molecular_laser"]},
            "omega": _POS, "mass": _POS, "omega0": _POS, "omega_f": _POS,
            "g0": {"type": "number"}, "field_max": {"type": "number"},
            "nuclei": {"type": "array", "items": _NUCLEUS},
        }, ["kind"]),
        "initial_state": {
            "type": "object",
            "properties": {"kind": {"enum": ["preset", "ho", "fermion",
                                             "hydrogen"]}},
            "required": ["kind"],
        },
    }, ["system", "hamiltonian", "initial_state"]),
    "ansatz": _obj({
        "layers": _COUNT, "width_1e": _COUNT, "width_2e": _COUNT,
        "n_determinants": _COUNT, "phase_hidden": _COUNT,
        "envelope_hidden": _COUNT,
    }),
    "sampler": _obj({
        "burn_in": _COUNT0, "thinning": _COUNT,
        "target_acceptance": {"type": "number", "exclusiveMinimum": 0,
                              "exclusiveMaximum": 1},
        "step_size": _POS, "init_width": _POS,
    }),
    "train": _obj({
        "stage1": _obj({
            "steps": _COUNT0, "base_lr": _POS, "warmup_steps": _COUNT0,
            "decay_rate": _POS, "decay_period": _COUNT, "n_slices": _COUNT,
            "per_slice": _COUNT, "resample_every": _COUNT,
            "mh_steps": _COUNT, "initial_points": _COUNT,
        }),
        "stage2": _obj({
            "outer_rounds": _COUNT0, "lbfgs_steps_per_round": _COUNT,
            "history_size": _COUNT, "resample_every": _COUNT,
            "mh_steps": _COUNT,
        }),
        "weights": _obj({
            "residual": _NONNEG, "initial": _NONNEG, "value": _NONNEG,
            "time_derivative": _NONNEG, "gradient": _NONNEG,
        }),
        "clip_threshold": _POS,
        "convergence_threshold": _POS,
        "boundary_points": _COUNT,
        "winsorize": {"type": "boolean"},
    }),
    "schedule": _obj({
        "horizon": _POS,
        "intervals": {"oneOf": [_COUNT, {"type": "array", "items": _POS,
                                         "minItems": 1}]},
    }, ["horizon"]),
    "metrics": _obj({
        "space_order": _COUNT, "time_order": _COUNT, "box": _POS,
        "observables": {"type": "array",
                        "items": {"enum": ["monopole", "dipole", "overlap"]}},
    }),
}, ["problem", "schedule"])


class ConfigError(ValueError):
  """Invalid configuration; ``line`` is 1-based when known."""

  def __init__(self, message: str, path: str = "", line: int | None = None,
               source: str | None = None):
    where = f"{source or '<config>'}"
    if line is not None:
      where += f":{line}"
    if path:
      where += f" [{path}]"
    super().__init__(f"{where}: {message}")
    self.path = path
    self.line = line


def _locate(text: str, path) -> int | None:
  """Line of the innermost key in ``path`` found by scanning the raw text."""
  pos = 0
  found = None
  for seg in path:
    if isinstance(seg, int):
      continue
    i = text.find(f'"{seg}"', pos)
    if i < 0:
      break
    pos = found = i
  return None if found is None else text.count("\n", 0, found) + 1


def config_hash(cfg: dict) -> str:
  blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
  return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class RunConfig:
  raw: dict
  spec: SystemSpec
  hamiltonian: object
  initial_state: object
  train: TrainConfig
  horizon: float
  intervals: object
  output: str
  seed: int
  sampler: dict
  metrics: dict

  @property
  def hash(self) -> str:
    return config_hash(self.raw)

  def plan(self):
    return partition_time(self.horizon, self.intervals)


def _validate(cfg: dict, text: str | None, source: str | None) -> None:
  validator = jsonschema.Draft202012Validator(SCHEMA)
  errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
  if not errors:
    return
  err = errors[0]
  path = list(err.path)
  if err.validator == "additionalProperties":
    extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
    path = path + extra[:1]
    message = f"unknown key {extra[0]!r}" if extra else err.message
  else:
    message = err.message
  line = _locate(text, path) if text is not None else None
  raise ConfigError(message, ".".join(str(p) for p in path), line, source)


def parse_config(cfg: dict, text: str | None = None,
                 source: str | None = None) -> RunConfig:
  _validate(cfg, text, source)
  problem = cfg["problem"]
  system = dict(problem["system"])
  nuclei = tuple((tuple(n["position"]), float(n["charge"]))
                 for n in system.pop("nuclei", []))
  h = hamiltonian_from_dict(problem["hamiltonian"])
  try:
    spec = SystemSpec(nuclei=nuclei, hamiltonian=h, **system,
                      **cfg.get("ansatz", {}))
    psi0 = oracle_from_dict(problem["initial_state"])
  except (TypeError, ValueError, KeyError) as e:
    raise ConfigError(str(e), "problem", _locate(text or "", ["problem"]),
                      source) from None
  sampler = dict(cfg.get("sampler", {}))
  train = dict(cfg.get("train", {}))
  for key in ("burn_in", "step_size", "init_width"):
    if key in sampler:
      train[key] = sampler[key]
  seed = int(cfg.get("seed", 0))
  train["seed"] = seed
  try:
    tc = TrainConfig.from_dict(train)
  except ValueError as e:
    raise ConfigError(str(e), "train", _locate(text or "", ["train"]),
                      source) from None
  sched = cfg["schedule"]
  intervals = sched.get("intervals", 1)
  try:
    partition_time(sched["horizon"], intervals)
  except ValueError as e:
    raise ConfigError(str(e), "schedule.intervals",
                      _locate(text or "", ["schedule", "intervals"]),
                      source) from None
  return RunConfig(cfg, spec, h, psi0, tc, float(sched["horizon"]),
                   intervals, cfg.get("output", "runs/out"), seed, sampler,
                   cfg.get("metrics", {}))


def apply_overrides(cfg: dict, overrides) -> dict:
  """Apply ``a.b.c=value`` strings; values are parsed as JSON when possible."""
  cfg = copy.deepcopy(cfg)
  for item in overrides or ():
    key, sep, value = item.partition("=")
    if not sep:
      raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
      parsed = json.loads(value)
    except json.JSONDecodeError:
      parsed = value
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
      node = node.setdefault(p, {})
      if not isinstance(node, dict):
        raise ConfigError(f"cannot set {key!r}: {p!r} is not a mapping")
    node[parts[-1]] = parsed
  return cfg


def load_config(path, overrides=()) -> RunConfig:
  text = Path(path).read_text()
  try:
    cfg = json.loads(text)
  except json.JSONDecodeError as e:
    raise ConfigError(e.msg, line=e.lineno, source=str(path)) from None
  cfg = apply_overrides(cfg, overrides)
  return parse_config(cfg, text, str(path))
