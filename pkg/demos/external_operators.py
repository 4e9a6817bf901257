"""
Reduced models from externally assembled operators
==================================================

Any mesh can be used if its operators are exported in Matrix Market form.
Here a small block stands in for an anatomical geometry: we write its
operators to disk, point a copy of the shipped template config at them and
drive the command-line pipeline (greedy, then validate) from Python.
"""

import tempfile
from pathlib import Path

import yaml

from cardiorom import assemble_operators, build_block_mesh, save_operators, shipped_config
from cardiorom.cli import main

work = Path(tempfile.mkdtemp(prefix="cardiorom-"))

# mass.mtx, stiffness.mtx, load.txt, flux.txt and one nodeset_<name>.txt
# per node set; the planar protocol needs the left_edge set.
ops = assemble_operators(build_block_mesh(12, 8, 1, lengths=(12.0, 8.0, 1.0)), 0.8)
paths = save_operators(ops, work / "operators")
print("operators:", ", ".join(sorted(p.name for p in paths.values())))

cfg = yaml.safe_load(shipped_config("external_template").read_text(encoding="utf-8"))
cfg["time"]["n_steps"] = 150
cfg["parameters"]["counts"] = [30]
(work / "run.yaml").write_text(yaml.safe_dump(cfg), encoding="utf-8")

# Each command prints key=value lines and writes its files to --out.
out = work / "out"
main(["greedy", "--config", str(work / "run.yaml"), "--out", str(out), "--algorithm", "alg2"])
main(["validate", "--config", str(work / "run.yaml"), "--out", str(out), "--rom", str(out / "rom.npz")])
print("results in", out)
