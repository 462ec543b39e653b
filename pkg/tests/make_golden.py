"""Regenerate the golden files from a default-scenario run.

Usage: python3 tests/make_golden.py
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

GOLDEN = Path(__file__).with_name("golden")
# (file, row stride) pairs frozen from a run directory
TRACES = (("zd.csv", 50), ("orbit.csv", 50), ("gain.csv", 20), ("closed_loop.csv", 250))
RESULT_KEYS = ("p_star", "J_star", "omega_star", "seed", "solver", "n_evals")


def extract(run_dir):
    """Subsampled traces and the optimizer result of one run."""
    from zdshape.harness import read_csv
    run_dir = Path(run_dir)
    traces = {}
    for name, stride in TRACES:
        cols = read_csv(run_dir / name)
        traces[name] = {k: v[::stride] for k, v in cols.items()}
    result = json.loads((run_dir / "result.json").read_text())
    return traces, {k: result[k] for k in RESULT_KEYS}


def write(run_dir, dest=GOLDEN):
    from zdshape.harness import write_csv
    dest.mkdir(exist_ok=True)
    traces, result = extract(run_dir)
    for name, cols in traces.items():
        write_csv(dest / name, cols)
    (dest / "result.json").write_text(json.dumps(result, indent=2) + "\n")


def main():
    from zdshape.pipeline import run_scenario
    from zdshape.scenario import default_scenario
    tmp = Path(tempfile.mkdtemp())
    try:
        run_scenario(default_scenario(), tmp)
        write(tmp)
    finally:
        shutil.rmtree(tmp)
    print(f"golden files written to {GOLDEN}")
    return 0


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    sys.exit(main())
