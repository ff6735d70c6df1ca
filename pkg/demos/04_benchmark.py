"""A small benchmark through the command line: generate, fit, refine, evaluate.

Run with ``python3 demos/04_benchmark.py [workdir]``. Everything lands in
the work directory (a temporary one by default).
"""

import csv
import subprocess
import sys
import tempfile
from pathlib import Path


def binpose(*args):
    cmd = [sys.executable, "-m", "binpose", *map(str, args)]
    print("$", "binpose", *map(str, args))
    subprocess.run(cmd, check=True)


work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="binpose-"))

# %% Twelve noiseless scenes plus twelve with the rim covered.
binpose("generate", "--out", work / "rim", "--count", 12, "--seed", 3)
binpose("generate", "--out", work / "lid", "--count", 12, "--seed", 3, "--suite", "occluded")

# %% The edge-based fitter on both. Failures are recorded, not fatal.
binpose("fit", "--data", work / "rim", "--out", work / "fit_rim")
binpose("fit", "--data", work / "lid", "--out", work / "fit_lid")

# %% ICP from perturbed ground truth, and from the fitter's own output.
binpose("refine", "--data", work / "rim", "--out", work / "perturbed", "--jobs", 2)
binpose("refine", "--data", work / "rim", "--out", work / "hybrid", "--init", work / "fit_rim" / "poses",
        "--label", "analytic")

# %% Summary table and cumulative curves (plot-ready CSV under eval/curves).
# The hybrid run already carries the plain fitter's rows under "analytic".
binpose("eval", work / "perturbed" / "refine.csv", work / "hybrid" / "refine.csv", "--out", work / "eval")

with open(work / "fit_lid" / "fit.csv") as fh:
    failed = sum(row["failed"] == "1" for row in csv.DictReader(fh))
print(f"lidded suite: {failed} of 12 fits failed")
print("outputs in", work)
