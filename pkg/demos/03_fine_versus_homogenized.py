"""Does the fine-scale composite approach its homogenized model as eps -> 0?

For a bundled configuration this builds the effective model, solves the
macro problem once, solves the fine problem for each eps, and prints the
distance e(eps) between the two trajectories next to the discretization
floor (the part of e that comes from comparing different meshes).

    python demos/03_fine_versus_homogenized.py            # quick, seconds
    python demos/03_fine_versus_homogenized.py disk       # full study, ~1 min
    python demos/03_fine_versus_homogenized.py contrast1  # single material
"""

import sys
import tempfile

from viscohom import load_config, run_convergence
from viscohom.properties import config_path

name = sys.argv[1] if len(sys.argv) > 1 else "quick"
cfg = load_config(config_path(name))
with tempfile.TemporaryDirectory() as out:
    rec = run_convergence(cfg, out)
print(f"configuration {name!r}: T = {cfg.T}, dt = {cfg.dt}, eps = {list(cfg.eps)}")
print("    eps        e(eps)       floor")
for e in rec.ordered():
    print(f"  {e.eps:7.4f}  {e.error:.4e}  {e.floor:.4e}")
print(f"strictly decreasing: {rec.monotone};  at the floor: {rec.at_floor()}")
if name == "contrast1":
    print("one material everywhere: the two problems coincide, so only the floor remains")
