"""Paired ablation runs: full model vs no-adapter, no-mask, no-curriculum.

Each pair shares seeds and iteration budgets; the printed table mirrors
the component-ablation structure (directional ordering, not absolute
numbers). Expect roughly half an hour single-threaded.
"""

import json
import sys
from pathlib import Path

from splatkit.cli import main

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/splatkit_ablations")
SEED = "11"
S1, S2, S3 = str(OUT / "stage1"), str(OUT / "stage2"), str(OUT / "stage3")


def run(argv):
    print("+ splatkit " + " ".join(argv))
    rc = main(argv)
    if rc != 0:
        sys.exit(rc)


def heldout_psnr(checkpoint, dataset):
    report = OUT / "tmp_report.json"
    run(["eval", "--checkpoint", checkpoint, "--dataset", dataset,
         "--out", str(report)])
    mean = json.loads(report.read_text())["mean"]
    return 0.5 * (mean["heldout_lighting"]["psnr"] + mean["heldout_view"]["psnr"])


run(["gen", "--out", S1, "--stage", "1", "--seed", SEED])
run(["gen", "--out", S2, "--stage", "2", "--seed", SEED])
run(["gen", "--out", S3, "--stage", "3", "--seed", SEED])

results = {}

# pair 1: appearance adapter, multi-lighting data
for tag, extra in (("full", []), ("no-adapter", ["--ablate", "no-adapter"])):
    run(["train", "--out", str(OUT / f"p1_{tag}"), "--datasets", S1,
         "--iterations", "400", "--seed", SEED] + extra)
    results[f"p1_{tag}"] = heldout_psnr(str(OUT / f"p1_{tag}/stage1.wskt"), S1)

# pair 2: occlusion masking, occluded data
for tag, extra in (("full", []), ("no-mask", ["--ablate", "no-mask"])):
    run(["train", "--out", str(OUT / f"p2_{tag}"), "--datasets", S3,
         "--iterations", "400", "--seed", SEED] + extra)
    results[f"p2_{tag}"] = heldout_psnr(str(OUT / f"p2_{tag}/stage1.wskt"), S3)

# pair 3: curriculum vs flat training at the same total budget
run(["train", "--out", str(OUT / "p3_full"), "--datasets", S1, S2, S3,
     "--iterations", "200", "200", "400", "--seed", SEED])
results["p3_full"] = heldout_psnr(str(OUT / "p3_full/stage3.wskt"), S3)
run(["train", "--out", str(OUT / "p3_no-curriculum"), "--datasets", S1, S2, S3,
     "--iterations", "200", "200", "400", "--seed", SEED,
     "--ablate", "no-curriculum"])
results["p3_no-curriculum"] = heldout_psnr(str(OUT / "p3_no-curriculum/stage3.wskt"), S3)

print("\nheld-out PSNR (dB):")
for k, v in results.items():
    print(f"  {k:20s} {v:6.2f}")
