"""Checkpoints (JSON manifest + little-endian float64 blob) and atomic files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from tdsenet import __version__
from tdsenet.ansatz import SystemSpec, param_layout

__all__ = ["FORMAT_VERSION", "CheckpointMismatchError", "atomic_write_bytes",
           "atomic_write_text", "write_csv_atomic", "save_checkpoint",
           "load_checkpoint", "check_compatible"]

FORMAT_VERSION = 1


class CheckpointMismatchError(ValueError):
  pass


def atomic_write_bytes(path, data: bytes) -> None:
  """Write to a temporary file in the same directory, then rename."""
  path = Path(path)
  path.parent.mkdir(parents=True, exist_ok=True)
  fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
  try:
    with os.fdopen(fd, "wb") as f:
      f.write(data)
      f.flush()
      os.fsync(f.fileno())
    os.replace(tmp, path)
  except BaseException:
    if os.path.exists(tmp):
      os.unlink(tmp)
    raise


def atomic_write_text(path, text: str) -> None:
  atomic_write_bytes(path, text.encode())


def write_csv_atomic(path, rows, columns=None, header: dict | None = None
                     ) -> None:
  """Write dict rows as CSV; ``header`` entries become leading '# k: v' lines."""
  rows = list(rows)
  if columns is None:
    columns = list(rows[0]) if rows else []
  buf = io.StringIO()
  for k, v in (header or {}).items():
    buf.write(f"# {k}: {v}\n")
  w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore",
                     lineterminator="\n")
  w.writeheader()
  for row in rows:
    w.writerow({k: _plain(v) for k, v in row.items()})
  atomic_write_text(path, buf.getvalue())


def _plain(v):
  if isinstance(v, (np.floating, np.integer)):
    return v.item()
  return v


def save_checkpoint(path, params, spec: SystemSpec, seed: int,
                    config_hash: str = "", extra: dict | None = None) -> Path:
  """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path."""
  path = Path(path)
  layout = param_layout(spec)
  params = np.asarray(params, dtype="<f8")
  if params.shape != (layout.size,):
    raise CheckpointMismatchError(
        f"parameter vector has shape {params.shape}, layout needs "
        f"({layout.size},)")
  blob = params.tobytes()
  bin_path = path.with_suffix(".bin")
  manifest = {
      "format_version": FORMAT_VERSION,
      "code_version": __version__,
      "config_hash": config_hash,
      "seed": seed,
      "spec": spec.to_dict(),
      "n_params": layout.size,
      "shapes": layout.table(),
      "dtype": "float64",
      "byte_order": "little",
      "blob": bin_path.name,
      "blob_sha256": hashlib.sha256(blob).hexdigest(),
  }
  manifest.update(extra or {})
  atomic_write_bytes(bin_path, blob)
  json_path = path.with_suffix(".json")
  atomic_write_text(json_path, json.dumps(manifest, indent=2))
  return json_path


def load_checkpoint(path) -> tuple[np.ndarray, dict]:
  path = Path(path)
  if path.suffix != ".json":
    path = path.with_suffix(".json")
  if not path.exists():
    raise FileNotFoundError(f"checkpoint manifest {path} not found")
  manifest = json.loads(path.read_text())
  blob = (path.parent / manifest["blob"]).read_bytes()
  if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
    raise CheckpointMismatchError(f"blob of {path} fails its checksum")
  params = np.frombuffer(blob, dtype="<f8").astype(np.float64)
  if params.size != manifest["n_params"]:
    raise CheckpointMismatchError(
        f"blob holds {params.size} values, manifest says "
        f"{manifest['n_params']}")
  return params, manifest


def check_compatible(manifest: dict, spec: SystemSpec) -> None:
  """Refuse a checkpoint whose parameter shapes differ from ``spec``'s."""
  want = {e["name"]: tuple(e["shape"]) for e in param_layout(spec).table()}
  have = {e["name"]: tuple(e["shape"]) for e in manifest["shapes"]}
  if want == have:
    return
  lines = []
  for name in sorted(set(want) | set(have)):
    if want.get(name) != have.get(name):
      lines.append(f"  {name}: checkpoint {have.get(name)} vs requested "
                   f"{want.get(name)}")
  raise CheckpointMismatchError("checkpoint does not match the requested "
                                "ansatz:\n" + "\n".join(lines))
