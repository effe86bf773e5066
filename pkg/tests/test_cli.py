import csv
import json
import math

import numpy as np
import pytest

from tdsenet import numerics, oracles
from tdsenet.cli import EXIT_FAIL, EXIT_GATE, EXIT_OK, EXIT_USAGE, main
from tdsenet.selftest import antisymmetry_suite

TINY = {
    "version": 1,
    "seed": 0,
    "problem": {
        "system": {"n_up": 1, "d": 1},
        "hamiltonian": {"kind": "harmonic_oscillator_1d"},
        "initial_state": {"kind": "preset", "name": "ho0"},
    },
    "ansatz": {"layers": 1, "width_1e": 4, "width_2e": 2,
               "n_determinants": 1, "phase_hidden": 4, "envelope_hidden": 4},
    "sampler": {"burn_in": 10},
    "train": {
        "stage1": {"steps": 3, "warmup_steps": 1, "n_slices": 2,
                   "per_slice": 8, "initial_points": 8, "mh_steps": 2},
        "stage2": {"outer_rounds": 1, "lbfgs_steps_per_round": 2,
                   "mh_steps": 2},
        "boundary_points": 8,
        "convergence_threshold": 1e6,
    },
    "schedule": {"horizon": 1.0, "intervals": 2},
}


def _config(tmp_path, **over):
  cfg = json.loads(json.dumps(TINY))
  for k, v in over.items():
    node = cfg
    *head, last = k.split(".")
    for h in head:
      node = node[h]
    node[last] = v
  path = tmp_path / "tiny.json"
  path.write_text(json.dumps(cfg, indent=2))
  return path


def _log(out):
  with open(out / "train_log.csv") as f:
    lines = [l for l in f if not l.startswith("#")]
  return list(csv.DictReader(lines))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
  base = tmp_path_factory.mktemp("cli")
  cfg = _config(base)
  out = base / "run"
  assert main(["train", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
  return cfg, out


def test_train_writes_artifacts(trained):
  _, out = trained
  run = json.loads((out / "run.json").read_text())
  assert run["completed"] and len(run["intervals"]) == 2
  for name in ("interval_00.json", "interval_00.bin", "interval_01.json"):
    assert (out / name).exists()
  manifest = json.loads((out / "interval_01.json").read_text())
  assert manifest["config_hash"] == run["config_hash"]
  assert manifest["interval"]["start"] == 0.5
  header = (out / "train_log.csv").read_text().splitlines()[0]
  assert header == f"# config_hash: {run['config_hash']}"
  rows = _log(out)
  assert {r["stage"] for r in rows} == {"1", "2"}
  assert {r["interval"] for r in rows} == {"0", "1"}


def test_rerun_is_identical_and_resume(trained, tmp_path):
  cfg, out = trained
  again = tmp_path / "again"
  assert main(["train", "--config", str(cfg), "--out", str(again)]) == EXIT_OK
  assert [r["loss"] for r in _log(again)] == [r["loss"] for r in _log(out)]

  (again / "interval_01.json").unlink()
  (again / "interval_01.bin").unlink()
  assert main(["train", "--config", str(cfg), "--out", str(again)]) == EXIT_OK
  a = (out / "interval_01.bin").read_bytes()
  b = (again / "interval_01.bin").read_bytes()
  assert a == b
  assert [r["loss"] for r in _log(again)] == [r["loss"] for r in _log(out)]


def test_resume_refuses_other_config(trained, tmp_path, capsys):
  cfg, out = trained
  other = _config(tmp_path, seed=4)
  assert main(["train", "--config", str(other), "--out", str(out)]) == (
      EXIT_FAIL)
  assert "different configuration" in capsys.readouterr().err


def test_negative_weight_rejected_before_compute(tmp_path, capsys):
  cfg = _config(tmp_path)
  out = tmp_path / "never"
  code = main(["train", "--config", str(cfg), "--out", str(out), "--set",
               "train.weights.residual=-1"])
  assert code == EXIT_USAGE
  assert "tiny.json" in capsys.readouterr().err
  assert not out.exists()


def test_gate_failure_keeps_prefix(tmp_path):
  cfg = _config(tmp_path, **{"train.convergence_threshold": 1e-30})
  out = tmp_path / "gate"
  assert main(["train", "--config", str(cfg), "--out", str(out)]) == EXIT_GATE
  run = json.loads((out / "run.json").read_text())
  assert not run["completed"] and run["intervals"] == []
  assert run["diagnostics"][0]["converged"] is False


def test_eval_writes_report(trained):
  _, out = trained
  dest = out.parent / "err.csv"
  code = main(["eval", "--checkpoint", str(out), "--oracle", "ho0",
               "--metric", "rel_l2", "--time-order", "4", "--out", str(dest)])
  assert code == EXIT_OK
  lines = dest.read_text().splitlines()
  assert lines[0] == "# metric: rel_l2"
  assert lines[4] == "time,numerator,denominator,slice_error"
  assert len(lines) == 5 + 4
  summary = json.loads(dest.with_suffix(".json").read_text())
  assert math.isfinite(summary["rel_l2"])


def test_eval_refuses_mismatched_ansatz(trained, tmp_path, capsys):
  _, out = trained
  wide = _config(tmp_path, **{"ansatz.width_1e": 6})
  code = main(["eval", "--checkpoint", str(out), "--oracle", "ho0",
               "--config", str(wide)])
  assert code == EXIT_FAIL
  err = capsys.readouterr().err
  assert "does not match" in err and "requested (6," in err


def test_observe_oracle_monopole_is_exact(tmp_path):
  dest = tmp_path / "m.csv"
  assert main(["observe", "--observable", "monopole", "--times", "0:1.5:4",
               "--oracle", "fermion2", "--out", str(dest)]) == EXIT_OK
  rows = list(csv.DictReader(l for l in dest.read_text().splitlines()
                             if not l.startswith("#")))
  ts = np.linspace(0, 1.5, 4)
  np.testing.assert_array_equal([float(r["value"]) for r in rows],
                                oracles.monopole_ref(ts))


def test_observe_checkpoint(trained, tmp_path):
  _, out = trained
  dest = tmp_path / "d.csv"
  assert main(["observe", "--observable", "dipole", "--times", "0.2,0.7",
               "--checkpoint", str(out), "--samples", "512", "--burn-in",
               "50", "--out", str(dest)]) == EXIT_OK
  assert len(dest.read_text().splitlines()) == 4


def test_observe_missing_checkpoint(tmp_path, capsys):
  code = main(["observe", "--observable", "monopole", "--times", "0",
               "--checkpoint", str(tmp_path / "nope.json")])
  assert code != EXIT_OK
  assert "not found" in capsys.readouterr().err


def test_selftest_single_suite(tmp_path):
  dest = tmp_path / "s.json"
  assert main(["selftest", "--suite", "ermakov", "--json", str(dest)]) == (
      EXIT_OK)
  summary = json.loads(dest.read_text())
  assert summary["passed"] and list(summary["suites"]) == ["ermakov"]


def test_broken_vandermonde_fails_antisymmetry():
  def broken(r):
    # loses the sign, so the oracle is no longer antisymmetric
    return abs(numerics.vandermonde(r))
  assert not antisymmetry_suite(n_draws=4, vandermonde=broken).passed
  assert antisymmetry_suite(n_draws=4).passed
