"""Stage-1 demo: single scene, lighting variation, no occluders.

Generates the dataset, trains 500 iterations, evaluates held-out
combinations, and renders one lighting-transfer image. Everything lands
under the output directory (default /tmp/splatkit_demo).
"""

import sys
from pathlib import Path

from splatkit.cli import main

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/splatkit_demo")
SEED = "7"

steps = [
    ["gen", "--out", str(OUT / "stage1"), "--stage", "1", "--seed", SEED],
    ["train", "--out", str(OUT / "run"), "--datasets", str(OUT / "stage1"),
     "--iterations", "500", "--seed", SEED, "--verbose"],
    ["eval", "--checkpoint", str(OUT / "run/stage1.wskt"),
     "--dataset", str(OUT / "stage1"), "--out", str(OUT / "report.json")],
    ["render", "--checkpoint", str(OUT / "run/stage1.wskt"),
     "--dataset", str(OUT / "stage1"), "--view", "5",
     "--reference-scene", "scene_0", "--reference-lighting", "2",
     "--out", str(OUT / "novel_view_relit.png"),
     "--export-ply", str(OUT / "scene.ply")],
]

for argv in steps:
    print("+ splatkit " + " ".join(argv))
    rc = main(argv)
    if rc != 0:
        sys.exit(rc)
print(f"demo artifacts in {OUT}")
