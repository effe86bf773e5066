import json

import numpy as np
import pytest

from tdsenet.ansatz import SystemSpec, param_layout
from tdsenet.checkpoint import (CheckpointMismatchError, check_compatible,
                                load_checkpoint, save_checkpoint,
                                write_csv_atomic)
from tdsenet.config import (ConfigError, apply_overrides, config_hash,
                            load_config, parse_config)
from tdsenet.hamiltonian import HarmonicOscillator1D

BASE = {
    "version": 1,
    "seed": 0,
    "problem": {
        "system": {"n_up": 1, "d": 1},
        "hamiltonian": {"kind": "harmonic_oscillator_1d"},
        "initial_state": {"kind": "preset", "name": "ho0"},
    },
    "ansatz": {"layers": 1, "width_1e": 4, "width_2e": 2,
               "n_determinants": 1, "phase_hidden": 4, "envelope_hidden": 4},
    "train": {"weights": {"residual": 1.0, "initial": 10.0}},
    "schedule": {"horizon": 3.14159, "intervals": 1},
}


def write(tmp_path, cfg, name="run.json"):
  path = tmp_path / name
  path.write_text(json.dumps(cfg, indent=2))
  return path


def test_valid_config(tmp_path):
  cfg = load_config(write(tmp_path, BASE))
  assert cfg.spec.n_up == 1 and cfg.spec.width_1e == 4
  assert isinstance(cfg.hamiltonian, HarmonicOscillator1D)
  assert cfg.initial_state.coeffs == ((0, 1.0),)
  assert len(cfg.plan()) == 1
  assert cfg.hash == config_hash(BASE)


def test_negative_weight_rejected_with_line(tmp_path):
  bad = apply_overrides(BASE, ["train.weights.residual=-1"])
  path = write(tmp_path, bad)
  with pytest.raises(ConfigError) as info:
    load_config(path)
  text = path.read_text().splitlines()
  assert '"residual"' in text[info.value.line - 1]
  assert info.value.path == "train.weights.residual"
  assert f"run.json:{info.value.line}" in str(info.value)


def test_unknown_key_rejected(tmp_path):
  bad = apply_overrides(BASE, ["ansatz.depth=3"])
  path = write(tmp_path, bad)
  with pytest.raises(ConfigError, match="unknown key 'depth'") as info:
    load_config(path)
  assert '"depth"' in path.read_text().splitlines()[info.value.line - 1]


def test_malformed_json_reports_line(tmp_path):
  path = tmp_path / "broken.json"
  path.write_text('{\n  "version": 1,\n  "seed": ,\n}')
  with pytest.raises(ConfigError) as info:
    load_config(path)
  assert info.value.line == 3


def test_overrides_parse_json_values():
  cfg = apply_overrides(BASE, ["train.stage1.steps=7", "output=runs/x",
                               "schedule.intervals=[1.0, 2.14159]"])
  assert cfg["train"]["stage1"]["steps"] == 7
  assert cfg["output"] == "runs/x"
  assert cfg["schedule"]["intervals"] == [1.0, 2.14159]
  assert BASE["train"].get("stage1") is None
  with pytest.raises(ConfigError):
    apply_overrides(BASE, ["seed"])
  with pytest.raises(ConfigError):
    apply_overrides(BASE, ["seed.x=1"])


def test_load_with_overrides(tmp_path):
  cfg = load_config(write(tmp_path, BASE), ["seed=5", "train.stage1.steps=2"])
  assert cfg.seed == 5 and cfg.train.seed == 5
  assert cfg.train.stage1.steps == 2


def test_inconsistent_schedule(tmp_path):
  bad = apply_overrides(BASE, ["schedule.intervals=[1.0, 1.0]"])
  with pytest.raises(ConfigError, match="sum"):
    parse_config(bad)


def test_bad_problem(tmp_path):
  bad = apply_overrides(BASE, ['problem.initial_state={"kind": "preset", '
                               '"name": "ho7"}'])
  with pytest.raises(ConfigError):
    parse_config(bad)


def _spec(**kw):
  opts = dict(n_up=1, d=1, width_1e=4, width_2e=2, layers=1, phase_hidden=4,
              envelope_hidden=4, n_determinants=1)
  opts.update(kw)
  return SystemSpec(**opts)


def test_checkpoint_round_trip(tmp_path):
  spec = _spec()
  n = param_layout(spec).size
  params = np.random.default_rng(0).normal(size=n)
  path = save_checkpoint(tmp_path / "ck", params, spec, seed=3,
                         config_hash="abc", extra={"note": 1})
  loaded, manifest = load_checkpoint(path)
  np.testing.assert_array_equal(loaded, params)
  assert manifest["seed"] == 3 and manifest["config_hash"] == "abc"
  assert manifest["byte_order"] == "little" and manifest["note"] == 1
  assert (tmp_path / "ck.bin").stat().st_size == 8 * n
  check_compatible(manifest, spec)
  assert not list(tmp_path.glob(".ck*"))


def test_checkpoint_checksum(tmp_path):
  spec = _spec()
  params = np.zeros(param_layout(spec).size)
  save_checkpoint(tmp_path / "ck", params, spec, seed=0)
  blob = bytearray((tmp_path / "ck.bin").read_bytes())
  blob[0] ^= 1
  (tmp_path / "ck.bin").write_bytes(bytes(blob))
  with pytest.raises(CheckpointMismatchError, match="checksum"):
    load_checkpoint(tmp_path / "ck.json")
  with pytest.raises(FileNotFoundError):
    load_checkpoint(tmp_path / "missing.json")


def test_checkpoint_shape_mismatch_diff(tmp_path):
  spec = _spec()
  path = save_checkpoint(tmp_path / "ck", np.zeros(param_layout(spec).size),
                         spec, seed=0)
  _, manifest = load_checkpoint(path)
  with pytest.raises(CheckpointMismatchError) as info:
    check_compatible(manifest, _spec(width_1e=6))
  msg = str(info.value)
  assert "checkpoint (4," in msg and "requested (6," in msg
  with pytest.raises(CheckpointMismatchError):
    save_checkpoint(tmp_path / "bad", np.zeros(3), spec, seed=0)


def test_csv_is_written_whole(tmp_path):
  rows = [{"time": 0.0, "value": np.float64(1.5)}, {"time": 1.0, "value": 2}]
  write_csv_atomic(tmp_path / "a.csv", rows, header={"config_hash": "h"})
  text = (tmp_path / "a.csv").read_text().splitlines()
  assert text == ["# config_hash: h", "time,value", "0.0,1.5", "1.0,2"]
