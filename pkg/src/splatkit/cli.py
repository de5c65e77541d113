"""Command-line entry point.

Subcommands: gen | train | render | transfer | export-ply | eval. Every
option can come from a JSON config file (--config) whose keys must match
the subcommand's flag names exactly; explicit flags win over the file.
--print-config echoes the fully resolved configuration and exits, so any
run can be replayed from its printed config.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort.
--threads (or the WSK_THREADS env var) caps worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .metrics import psnr, ssim

STAGE_PRESETS = {
    1: {"scenes": 1, "lightings": 3, "occlude": False},
    2: {"scenes": 3, "lightings": 3, "occlude": False},
    3: {"scenes": 3, "lightings": 3, "occlude": True},
}
DEFAULT_ITERATIONS = {1: 500, 2: 500, 3: 1000}  # desk scale, 1:1:2 ratio


def _parse_background(text: str):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"background must be r,g,b  (got {text!r})")
    return tuple(parts)


def _apply_config_file(parser: argparse.ArgumentParser, args: list[str]):
    """Pull defaults from --config JSON, rejecting unknown keys."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(args)
    if not known.config:
        return
    path = Path(known.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        values = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a JSON object")
    valid = {a.dest for a in parser._actions}
    unknown = set(values) - valid
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    parser.set_defaults(**values)


def _resolved_config(ns: argparse.Namespace) -> dict:
    out = {}
    for k, v in sorted(vars(ns).items()):
        if k in ("func", "print_config", "config"):
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _maybe_print_config(ns) -> bool:
    if getattr(ns, "print_config", False):
        print(json.dumps({"command": ns.func.__name__.removeprefix("cmd_"),
                          **_resolved_config(ns)}, indent=1))
        return True
    return False


def _threads(ns) -> int:
    if ns.threads is not None:
        return max(1, ns.threads)
    env = os.environ.get("WSK_THREADS")
    return max(1, int(env)) if env else 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(ns) -> int:
    from .scenegen import build_dataset

    preset = STAGE_PRESETS[ns.stage]
    scenes = ns.scenes if ns.scenes is not None else preset["scenes"]
    lightings = ns.lightings if ns.lightings is not None else preset["lightings"]
    occlude = preset["occlude"] if ns.occlude is None else ns.occlude
    bank = None
    if ns.bank:
        from .occlusion import load_bank
        bank = load_bank(ns.bank)
    manifest = build_dataset(ns.out, n_scenes=scenes, lightings_per_scene=lightings,
                             occlude=occlude, seed=ns.seed, n_views=ns.views,
                             image_size=ns.size, background=ns.background, bank=bank)
    print(manifest)
    return 0


def _stage_configs(ns) -> list:
    from .trainer import StageConfig

    ablate = tuple(a for a in ns.ablate if a != "no-curriculum")
    datasets = list(ns.datasets)
    iters = ns.iterations if ns.iterations else [DEFAULT_ITERATIONS[s + 1]
                                                 for s in range(len(datasets))]
    if len(iters) != len(datasets):
        raise ConfigError(f"{len(datasets)} datasets need {len(datasets)} iteration "
                          f"counts, got {len(iters)}")
    configs = []
    for i, (ds, it) in enumerate(zip(datasets, iters)):
        stage = i + 1
        configs.append(StageConfig(stage=stage, dataset=ds, iterations=it,
                                   lr=ns.lr, lr_table=ns.lr_table, lam=ns.lam,
                                   occlusion=(stage == 3), holdout=not ns.no_holdout,
                                   ablate=ablate, voxel_size=ns.voxel_size,
                                   background=ns.background))
    if "no-curriculum" in ns.ablate:
        # single stage on the final (hardest) dataset with the full budget
        last = configs[-1]
        total = sum(c.iterations for c in configs)
        configs = [StageConfig(stage=last.stage, dataset=last.dataset, iterations=total,
                               lr=last.lr, lr_table=last.lr_table, lam=last.lam,
                               occlusion=last.occlusion, holdout=last.holdout,
                               ablate=ablate, voxel_size=last.voxel_size,
                               background=last.background)]
    return configs


def cmd_train(ns) -> int:
    from .trainer import run_curriculum

    configs = _stage_configs(ns)
    state = run_curriculum(configs, seed=ns.seed, out_dir=ns.out, resume=ns.resume,
                           threads=_threads(ns),
                           log=(lambda msg: print(msg, flush=True)) if ns.verbose else None)
    print(f"trained {state.iteration} iterations; checkpoints in {ns.out}")
    return 0


def _load_run(ns):
    """Checkpoint + registered scenes for render/eval commands."""
    from .scenegen import load_dataset
    from .trainer import load_state, register_scene

    if not ns.dataset:
        raise ConfigError("--dataset is required unless --ply is given")
    state = load_state(ns.checkpoint)
    dataset = load_dataset(ns.dataset)
    regs = {}
    for scene in dataset.scenes:
        reg = register_scene(scene, state.voxel_size)
        if reg.scene_id in state.tables and \
                state.tables[reg.scene_id].shape[0] != len(reg.geometry):
            raise DataError(
                f"checkpoint table for {reg.scene_id} has "
                f"{state.tables[reg.scene_id].shape[0]} rows but registration "
                f"produced {len(reg.geometry)}; dataset or voxel size differs from training")
        regs[reg.scene_id] = reg
    return state, dataset, regs


def _reference_image(ns, dataset):
    from .imgio import load_png

    if getattr(ns, "reference", None):
        return load_png(ns.reference)
    scene_id = getattr(ns, "reference_scene", None)
    if scene_id is not None:
        path = (Path(ns.dataset) / scene_id / f"view_{ns.reference_view}"
                / f"light_{ns.reference_lighting}.png")
        return load_png(path)
    return None


def _render_once(ns, state, regs, reference):
    from .renderer import rasterize
    from .trainer import render_view

    if ns.scene not in regs:
        raise DataError(f"scene {ns.scene!r} not in dataset")
    reg = regs[ns.scene]
    if not 0 <= ns.view < len(reg.cameras):
        raise DataError(f"view {ns.view} out of range for {ns.scene}")
    if reference is None:
        table = state.tables.get(ns.scene)
        if table is None:
            raise DataError(f"checkpoint has no table for {ns.scene}")
        K, E = reg.cameras[ns.view]
        return rasterize(reg.geometry.with_sh(table), K, E, background=ns.background), reg
    out = render_view(state, reg, ns.view, reference, background=ns.background,
                      precision=ns.precision)
    return out, reg


def _render_from_ply(ns):
    """Feed-forward render of a saved scene: PLY geometry, JSON camera."""
    from .appearance import adapt_scene
    from .cameras import load_cameras
    from .imgio import load_png
    from .ply import read_ply
    from .renderer import rasterize

    scene = read_ply(ns.ply)
    if not ns.camera:
        raise ConfigError("--camera is required with --ply")
    cams = load_cameras(ns.camera)
    if not 0 <= ns.view < len(cams):
        raise DataError(f"view {ns.view} out of range for {ns.camera}")
    K, E = cams[ns.view]
    if ns.reference:
        from .trainer import load_state

        state = load_state(ns.checkpoint)
        scene = adapt_scene(scene, load_png(ns.reference), state.encoder, state.adapter,
                            precision=ns.precision)
    return rasterize(scene, K, E, background=ns.background), scene


def cmd_render(ns) -> int:
    from .imgio import save_png, save_wsim

    if ns.ply:
        out, adapted = _render_from_ply(ns)
        save_png(ns.out, out.image)
        print(ns.out)
        if ns.wsim:
            save_wsim(ns.wsim, out.image)
        if ns.export_ply:
            from .ply import write_ply
            write_ply(adapted, ns.export_ply, compat_degree=ns.compat_degree)
            print(ns.export_ply)
        return 0

    state, dataset, regs = _load_run(ns)
    reference = _reference_image(ns, dataset)
    out, reg = _render_once(ns, state, regs, reference)
    save_png(ns.out, out.image)
    print(ns.out)
    if ns.wsim:
        save_wsim(ns.wsim, out.image)
    if ns.export_ply:
        from .appearance import adapt_scene
        from .ply import write_ply

        scene = reg.geometry.with_sh(state.tables[ns.scene])
        if reference is not None:
            scene = adapt_scene(scene, reference, state.encoder, state.adapter,
                                precision=ns.precision)
        write_ply(scene, ns.export_ply, compat_degree=ns.compat_degree)
        print(ns.export_ply)
    return 0


def cmd_export_ply(ns) -> int:
    from .appearance import adapt_scene
    from .imgio import load_png
    from .ply import read_ply, write_ply

    if ns.ply:
        scene = read_ply(ns.ply)
        if ns.reference:
            from .trainer import load_state
            state = load_state(ns.checkpoint)
            scene = adapt_scene(scene, load_png(ns.reference), state.encoder,
                                state.adapter, precision=ns.precision)
        write_ply(scene, ns.out, compat_degree=ns.compat_degree)
        print(ns.out)
        return 0

    state, dataset, regs = _load_run(ns)
    if ns.scene not in regs:
        raise DataError(f"scene {ns.scene!r} not in dataset")
    scene = regs[ns.scene].geometry.with_sh(state.tables[ns.scene])
    reference = _reference_image(ns, dataset)
    if reference is not None:
        scene = adapt_scene(scene, reference, state.encoder, state.adapter,
                            precision=ns.precision)
    write_ply(scene, ns.out, compat_degree=ns.compat_degree)
    print(ns.out)
    return 0


def cmd_eval(ns) -> int:
    from .trainer import StageConfig, render_view, train_plan

    state, dataset, regs = _load_run(ns)
    rows = []
    for scene_id, reg in sorted(regs.items()):
        scene = reg.data
        views, per_view, heldout = train_plan(scene, not ns.no_holdout)
        pairs = [("train", v, l) for v in views for l in per_view[v]]
        if not ns.no_holdout:
            pairs += [("heldout_lighting", v, heldout[v]) for v in views]
            pairs += [("heldout_view", scene.n_views - 1, l)
                      for l in range(scene.n_lightings)]
        for split, v, ell in pairs:
            out = render_view(state, reg, v, scene.images[(v, ell)],
                              background=ns.background, precision=ns.precision)
            clean = scene.clean_images[(v, ell)]
            mask = scene.masks.get((v, ell))
            m = mask.visibility.astype(bool) if (mask is not None and not ns.unmasked) \
                else None
            n_eval = int(m.sum()) if m is not None else clean.shape[0] * clean.shape[1]
            rows.append({
                "scene": scene_id, "view": v, "lighting": ell, "split": split,
                "psnr": psnr(out.image, clean, mask=m),
                "ssim": ssim(out.image, clean),
                "n_pixels_evaluated": n_eval,
                "mask_applied": m is not None,
            })

    def mean_of(split):
        vals = [r for r in rows if r["split"] == split]
        if not vals:
            return None
        return {"psnr": float(np.mean([r["psnr"] for r in vals])),
                "ssim": float(np.mean([r["ssim"] for r in vals])),
                "n_pixels_evaluated": int(sum(r["n_pixels_evaluated"] for r in vals)),
                "mask_applied": any(r["mask_applied"] for r in vals)}

    report = {"rows": rows,
              "mean": {s: mean_of(s) for s in ("train", "heldout_lighting", "heldout_view")
                       if mean_of(s) is not None}}
    text = json.dumps(report, indent=1)
    if ns.out:
        Path(ns.out).write_text(text)
        print(ns.out)
    else:
        print(text)
    if ns.csv:
        import csv as csvmod
        with open(ns.csv, "w", newline="") as fh:
            writer = csvmod.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", default=None, help="JSON file of flag defaults")
    p.add_argument("--print-config", action="store_true", dest="print_config")
    p.add_argument("--threads", type=int, default=None,
                   help="worker parallelism cap (env WSK_THREADS)")


def _add_render_common(p):
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--scene", default="scene_0")
    p.add_argument("--ply", default=None, help="render a saved PLY scene directly")
    p.add_argument("--camera", default=None, help="camera JSON for --ply mode")
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("--background", type=_parse_background, default=(0.0, 0.0, 0.0))
    p.add_argument("--reference", default=None, help="reference lighting image (PNG)")
    p.add_argument("--reference-scene", dest="reference_scene", default=None)
    p.add_argument("--reference-view", dest="reference_view", type=int, default=0)
    p.add_argument("--reference-lighting", dest="reference_lighting", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatkit",
                                     description=sys.modules[__name__].__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--lightings", type=int, default=None)
    p.add_argument("--views", type=int, default=6)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--occlude", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--background", type=_parse_background, default=(0.0, 0.0, 0.0))
    p.add_argument("--bank", default=None, help="directory of RGBA sprite PNGs")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="run the training curriculum")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--datasets", nargs="+", required=True,
                   help="stage dataset roots in stage order")
    p.add_argument("--iterations", nargs="+", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-table", dest="lr_table", type=float, default=1e-2)
    p.add_argument("--lam", type=float, default=0.05)
    p.add_argument("--voxel-size", dest="voxel_size", type=float, default=0.22)
    p.add_argument("--background", type=_parse_background, default=(0.0, 0.0, 0.0))
    p.add_argument("--no-holdout", dest="no_holdout", action="store_true")
    p.add_argument("--ablate", action="append", default=[],
                   choices=("no-adapter", "no-mask", "no-curriculum"))
    p.add_argument("--resume", default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a view under a reference lighting")
    _add_common(p)
    _add_render_common(p)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--wsim", default=None, help="also dump raw float64 image")
    p.add_argument("--export-ply", dest="export_ply", default=None)
    p.add_argument("--compat-degree", dest="compat_degree", type=int, default=4)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("transfer", help="cross-scene lighting transfer render")
    _add_common(p)
    _add_render_common(p)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--wsim", default=None)
    p.add_argument("--export-ply", dest="export_ply", default=None)
    p.add_argument("--compat-degree", dest="compat_degree", type=int, default=4)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("export-ply", help="export a scene to PLY")
    _add_common(p)
    _add_render_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--compat-degree", dest="compat_degree", type=int, default=4)
    p.set_defaults(func=cmd_export_ply)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out data")
    _add_common(p)
    _add_render_common(p)
    p.add_argument("--out", default=None, help="JSON report path (stdout if omitted)")
    p.add_argument("--csv", default=None, help="optional per-image CSV")
    p.add_argument("--no-holdout", dest="no_holdout", action="store_true")
    p.add_argument("--unmasked", action="store_true",
                   help="include transient pixels in PSNR")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        # config-file defaults apply to the selected subcommand's parser
        if argv and argv[0] in ("gen", "train", "render", "transfer", "export-ply", "eval"):
            subparser = {a.dest: a for a in parser._actions
                         if isinstance(a, argparse._SubParsersAction)}
            chosen = subparser["command"].choices[argv[0]]
            _apply_config_file(chosen, argv[1:])
        ns = parser.parse_args(argv)
        if _maybe_print_config(ns):
            return 0
        return ns.func(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
