"""Command-line entry point: train, eval, observe, selftest."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from tdsenet import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_GATE = 0, 1, 2, 3


def _out_dir(args, cfg) -> Path:
  return Path(args.out or cfg.output)


def _interval_path(out: Path, i: int) -> Path:
  return out / f"interval_{i:02d}"


def _load_run(path: Path):
  """Parameter sets and manifest of a run directory or one interval file."""
  from tdsenet.checkpoint import load_checkpoint
  from tdsenet.trainer import Interval, IntervalPlan
  path = Path(path)
  if path.is_dir():
    run = json.loads((path / "run.json").read_text())
    params, manifests = [], []
    for entry in run["intervals"]:
      p, m = load_checkpoint(path / entry["checkpoint"])
      params.append(p)
      manifests.append(m)
  else:
    p, m = load_checkpoint(path)
    params, manifests = [p], [m]
  intervals = tuple(Interval(**m["interval"]) for m in manifests)
  return params, manifests, IntervalPlan(intervals)


def cmd_train(args) -> int:
  from tdsenet.ansatz import ansatz_for
  from tdsenet.checkpoint import (atomic_write_text, load_checkpoint,
                                  save_checkpoint, write_csv_atomic)
  from tdsenet.config import load_config
  from tdsenet.trainer import LOG_COLUMNS, pretrain_sequence

  overrides = list(args.set or [])
  if args.seed is not None:
    overrides.append(f"seed={args.seed}")
  cfg = load_config(args.config, overrides)
  out = _out_dir(args, cfg)
  out.mkdir(parents=True, exist_ok=True)
  plan = cfg.plan()
  ansatz = ansatz_for(cfg.spec)
  chash = cfg.hash

  done = []
  for i in range(len(plan)):
    path = _interval_path(out, i).with_suffix(".json")
    if not path.exists():
      break
    params, manifest = load_checkpoint(path)
    if manifest.get("config_hash") != chash:
      print(f"error: {path} was written by a different configuration",
            file=sys.stderr)
      return EXIT_FAIL
    done.append(params)
  if done:
    print(f"resuming after {len(done)} completed interval(s)")

  log_path = out / "train_log.csv"
  prior_rows = []
  if done and log_path.exists():
    import csv
    with open(log_path) as f:
      prior_rows = [r for r in csv.DictReader(
          line for line in f if not line.startswith("#"))
                    if int(r["interval"]) < len(done)]
  header = {"config_hash": chash, "seed": cfg.seed, "code_version":
            __version__}
  rows = list(prior_rows)
  diagnostics = []

  def on_interval(i, params, diag):
    iv = plan[i]
    save_checkpoint(_interval_path(out, i), params, cfg.spec, cfg.seed, chash,
                    extra={"interval": {"start": iv.start,
                                        "core_end": iv.core_end,
                                        "end": iv.end, "first": iv.first},
                           "final_residual": diag.final_residual,
                           "converged": diag.converged,
                           "penalties": diag.penalties})
    diagnostics.append({"interval": i, "final_residual": diag.final_residual,
                        "converged": diag.converged,
                        "penalties": diag.penalties,
                        "seconds": diag.seconds})
    print(f"interval {i}: residual {diag.final_residual:.3e} "
          f"({'converged' if diag.converged else 'gate failed'}, "
          f"{diag.seconds:.0f}s)")

  t0 = time.perf_counter()
  result = pretrain_sequence(plan, cfg.initial_state, cfg.train,
                             cfg.hamiltonian, ansatz.log_psi,
                             cfg.spec.n_coords, ansatz.init_params(cfg.seed),
                             done=done, on_interval=on_interval)
  rows.extend(result.log)
  write_csv_atomic(log_path, rows, LOG_COLUMNS, header)
  n_ok = len(result.solution.params)
  run = {
      "config_hash": chash, "seed": cfg.seed, "code_version": __version__,
      "config": cfg.raw, "completed": result.completed,
      "intervals": [{"index": i,
                     "checkpoint": _interval_path(out, i).name + ".json"}
                    for i in range(n_ok)],
      "diagnostics": diagnostics, "seconds": time.perf_counter() - t0,
  }
  atomic_write_text(out / "run.json", json.dumps(run, indent=2))
  if not result.completed:
    print("stopped: an interval failed its convergence gate; completed "
          f"prefix of {n_ok} interval(s) kept in {out}", file=sys.stderr)
    return EXIT_GATE
  print(f"wrote {n_ok} checkpoint(s) and {log_path}")
  return EXIT_OK


def open_run(path, requested_config=None):
  """Load a training run directory as (StateView, PiecewiseSolution, manifests)."""
  from tdsenet.ansatz import ansatz_for, spec_from_dict
  from tdsenet.checkpoint import check_compatible
  from tdsenet.metrics import StateView
  from tdsenet.trainer import PiecewiseSolution
  params, manifests, plan = _load_run(Path(path))
  spec = spec_from_dict(manifests[0]["spec"])
  if requested_config is not None:
    from tdsenet.config import load_config
    want = load_config(requested_config).spec
    for m in manifests:
      check_compatible(m, want)
  ansatz = ansatz_for(spec)
  sol = PiecewiseSolution(ansatz.log_psi, plan, params)
  return StateView.from_solution(sol, spec.n_coords, spec.d,
                                 spec.hamiltonian), sol, manifests


def cmd_eval(args) -> int:
  from tdsenet.checkpoint import write_csv_atomic, atomic_write_text
  from tdsenet.metrics import rel_l2_error
  from tdsenet.oracles import oracle_from_name
  view, sol, manifests = open_run(args.checkpoint, args.config)
  ref = oracle_from_name(args.oracle)
  horizon = args.horizon if args.horizon is not None else sol.horizon
  report = rel_l2_error(view, ref, horizon, space_order=args.space_order,
                        time_order=args.time_order, box=args.box)
  out = Path(args.out or Path(args.checkpoint).with_suffix("")
             .as_posix() + f"_{args.metric}.csv")
  header = {"metric": args.metric, "oracle": args.oracle,
            "rel_l2": f"{report.rel_l2:.10e}",
            "config_hash": manifests[0].get("config_hash", "")}
  write_csv_atomic(out, report.rows(), ["time", "numerator", "denominator",
                                        "slice_error"], header)
  summary = {"rel_l2": report.rel_l2, "quadrature": report.quadrature,
             "scale": [report.scale.real, report.scale.imag],
             "warnings": report.warnings}
  atomic_write_text(out.with_suffix(".json"), json.dumps(summary, indent=2))
  print(f"rel_l2 = {report.rel_l2:.6e}  ({out})")
  return EXIT_OK


def _parse_times(spec: str) -> np.ndarray:
  """'a:b:n' for n uniform points on [a, b], or a comma-separated list."""
  if ":" in spec:
    a, b, n = spec.split(":")
    return np.linspace(float(a), float(b), int(n))
  return np.array([float(x) for x in spec.split(",") if x.strip()])


def cmd_observe(args) -> int:
  from tdsenet.checkpoint import write_csv_atomic
  from tdsenet.metrics import mc_observable
  from tdsenet import oracles
  times = _parse_times(args.times)
  if args.checkpoint:
    view, _, _ = open_run(args.checkpoint)
    source = view
  elif args.oracle:
    source = oracles.oracle_from_name(args.oracle)
  else:
    print("error: give --checkpoint or --oracle", file=sys.stderr)
    return EXIT_USAGE

  if (not args.checkpoint and args.observable == "monopole"
      and isinstance(source, oracles.FermionScaling)):
    m0 = source.initial_monopole()
    vals = oracles.monopole_ref(times, source.n, source.omega0,
                                source.omega_f, source.g0, m0=m0)
    rows = [{"time": t, "value": v, "stderr": 0.0}
            for t, v in zip(times, np.atleast_1d(vals))]
  else:
    series = mc_observable(source, args.observable, times,
                           n_samples=args.samples, burn_in=args.burn_in,
                           seed=args.seed)
    rows = series.rows()
  out = Path(args.out or f"{args.observable}.csv")
  columns = list(rows[0]) if rows else ["time", "value", "stderr"]
  write_csv_atomic(out, rows, columns, {"observable": args.observable})
  print(f"wrote {len(rows)} rows to {out}")
  return EXIT_OK


def cmd_selftest(args) -> int:
  from tdsenet.checkpoint import atomic_write_text
  from tdsenet.selftest import SUITES, run_all
  names = args.suite or list(SUITES)
  results = run_all(names)
  for r in results:
    print(r.line())
  summary = {"passed": all(r.passed for r in results),
             "suites": {r.name: {"passed": r.passed, "seconds": r.seconds,
                                 "details": r.details} for r in results}}
  text = json.dumps(summary, indent=2, default=str)
  if args.json:
    atomic_write_text(args.json, text)
  else:
    print(text)
  if not summary["passed"]:
    failing = [r.name for r in results if not r.passed]
    print(f"failing suites: {', '.join(failing)}", file=sys.stderr)
    return EXIT_FAIL
  return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
  p = argparse.ArgumentParser(
      prog="tdsenet",
      description="Neural spacetime solver for the time-dependent "
                  "Schroedinger equation (atomic units).")
  p.add_argument("--version", action="version", version=__version__)
  sub = p.add_subparsers(dest="command", required=True)

  t = sub.add_parser("train", help="train a configured run (resumable)")
  t.add_argument("--config", required=True)
  t.add_argument("--out")
  t.add_argument("--seed", type=int)
  t.add_argument("--set", action="append", metavar="KEY=VALUE",
                 help="override a config key by dotted path")
  t.set_defaults(func=cmd_train)

  e = sub.add_parser("eval", help="relative L2 error against an oracle")
  e.add_argument("--checkpoint", required=True,
                 help="run directory or interval manifest")
  e.add_argument("--oracle", required=True)
  e.add_argument("--metric", default="rel_l2", choices=["rel_l2"])
  e.add_argument("--config", help="refuse if the checkpoint's ansatz differs")
  e.add_argument("--horizon", type=float)
  e.add_argument("--space-order", type=int, default=64)
  e.add_argument("--time-order", type=int, default=32)
  e.add_argument("--box", type=float, default=8.0)
  e.add_argument("--out")
  e.set_defaults(func=cmd_eval)

  o = sub.add_parser("observe", help="observable time series as CSV")
  o.add_argument("--observable", required=True,
                 choices=["monopole", "dipole", "overlap"])
  o.add_argument("--times", required=True, help="a:b:n or t1,t2,...")
  o.add_argument("--checkpoint")
  o.add_argument("--oracle")
  o.add_argument("--samples", type=int, default=4096)
  o.add_argument("--burn-in", type=int, default=300)
  o.add_argument("--seed", type=int, default=0)
  o.add_argument("--out")
  o.set_defaults(func=cmd_observe)

  s = sub.add_parser("selftest", help="run the invariant suites")
  s.add_argument("--suite", action="append",
                 choices=["antisymmetry", "derivatives", "ermakov",
                          "oracle_residual", "estimator"])
  s.add_argument("--json", help="write the summary here instead of stdout")
  s.set_defaults(func=cmd_selftest)
  return p


def main(argv=None) -> int:
  from tdsenet.checkpoint import CheckpointMismatchError
  from tdsenet.config import ConfigError
  args = build_parser().parse_args(argv)
  try:
    return args.func(args)
  except ConfigError as e:
    print(f"config error: {e}", file=sys.stderr)
    return EXIT_USAGE
  except (FileNotFoundError, CheckpointMismatchError) as e:
    print(f"error: {e}", file=sys.stderr)
    return EXIT_FAIL


if __name__ == "__main__":
  sys.exit(main())
