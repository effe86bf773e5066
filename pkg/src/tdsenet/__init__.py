"""Neural spacetime solver for the real-space time-dependent Schrodinger equation."""
import os

# TDSENET_THREADS caps XLA's CPU thread pool; it must be set before jax loads.
_threads = os.environ.get("TDSENET_THREADS")
if _threads:
  os.environ["XLA_FLAGS"] = (
      os.environ.get("XLA_FLAGS", "")
      + f" --xla_cpu_multi_thread_eigen=false"
      f" intra_op_parallelism_threads={int(_threads)}").strip()

import jax  # noqa: E402

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
