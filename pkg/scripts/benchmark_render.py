"""Feed-forward render throughput check: 1e5 splats at 256x256.

Builds a synthetic slab scene, exports it to PLY, and times the full
render command (checkpoint + PLY load, light encoding, adaptation,
rasterization, PNG write) after one JIT warmup call.
"""

import sys
import time
from pathlib import Path

import numpy as np

from splatkit import rng as rngmod
from splatkit.cameras import Extrinsics, Intrinsics, save_cameras
from splatkit.cli import main
from splatkit.imgio import save_png
from splatkit.ply import write_ply
from splatkit.scene import GaussianScene, logit
from splatkit.trainer import init_state, save_state

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/splatkit_bench")
OUT.mkdir(parents=True, exist_ok=True)
N = 100_000
SIZE = 256

gen = rngmod.stream(99, "scene")
pos = np.column_stack([gen.uniform(-2.2, 2.2, N), gen.uniform(-2.2, 2.2, N),
                       gen.uniform(4.0, 6.0, N)])
quats = np.zeros((N, 4))
quats[:, 0] = 1.0
scene = GaussianScene(positions=pos, opacity_logits=np.full(N, logit(0.9)),
                      rotations=quats, log_scales=np.full((N, 3), np.log(0.02)),
                      sh=gen.standard_normal((N, 75)) * 0.08, scene_id="bench")
write_ply(scene, OUT / "bench.ply")
f = SIZE / (2 * np.tan(np.radians(55) / 2))
K = Intrinsics(fx=f, fy=f, cx=(SIZE - 1) / 2, cy=(SIZE - 1) / 2, width=SIZE, height=SIZE)
E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
save_cameras(OUT / "camera.json", [(K, E)])
save_state(OUT / "params.wskt", init_state(3))
save_png(OUT / "reference.png", gen.random((64, 64, 3)))

argv = ["render", "--checkpoint", str(OUT / "params.wskt"), "--ply", str(OUT / "bench.ply"),
        "--camera", str(OUT / "camera.json"), "--view", "0",
        "--reference", str(OUT / "reference.png"), "--out", str(OUT / "render.png")]

main(argv)  # warmup: numba JIT, page cache
times = []
for _ in range(3):
    t0 = time.perf_counter()
    rc = main(argv)
    times.append(time.perf_counter() - t0)
    assert rc == 0
print(f"render of {N} splats at {SIZE}x{SIZE}: best {min(times):.2f}s "
      f"(trials: {', '.join(f'{t:.2f}' for t in times)})")
