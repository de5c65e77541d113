"""Curriculum training over frozen ground-truth geometry.

The trainable surface is exactly: encoder parameters, adapter parameters,
and one canonical SH table per scene. Geometry (positions, rotations,
scales, opacities) comes from depth unprojection plus voxel merging at
scene registration and never receives gradients; the parameter registry
below only ever contains "enc.", "adp.", and "table." names, which is
asserted every step.

Determinism: every stochastic choice during training is drawn by a
counter-based stream keyed on (seed, "train", iteration, view), so a run
resumed from a checkpoint replays the identical trajectory bit for bit.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from . import sh as shmod
from .appearance import (AdapterParams, EncoderParams, adapt_colors, adapt_colors_fast,
                         encode_light, init_adapter_params, init_encoder_params)
from .cameras import unproject_with_pixels
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractError, DataError, NumericError
from .metrics import psnr
from .occlusion import masked_loss
from .renderer import RasterConfig, rasterize, rasterize_node
from .scene import GaussianScene, logit, voxel_merge
from .scenegen import Dataset, SceneData, load_dataset

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_VOXEL = 0.22
METRICS_FLUSH_EVERY = 50
ALLOWED_PREFIXES = ("enc.", "adp.", "table.")


@dataclass
class StageConfig:
    stage: int
    dataset: str
    iterations: int
    lr: float = 1e-3
    lr_table: float = 1e-2
    lam: float = 0.05
    occlusion: bool = False
    holdout: bool = True
    ablate: tuple = ()
    voxel_size: float = DEFAULT_VOXEL
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigError(f"iterations must be > 0, got {self.iterations}")
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2, or 3, got {self.stage}")
        if self.stage == 3 and not self.occlusion:
            raise ConfigError("stage 3 requires the occlusion flag")
        bad = set(self.ablate) - {"no-adapter", "no-mask"}
        if bad:
            raise ConfigError(f"unknown ablation(s): {sorted(bad)}")


@dataclass
class RegisteredScene:
    scene_id: str
    geometry: GaussianScene
    cameras: list
    basis: list            # per view, (N,25) SH basis along rays
    data: SceneData


@dataclass
class TrainState:
    encoder: EncoderParams
    adapter: AdapterParams
    tables: dict = field(default_factory=dict)
    moments: dict = field(default_factory=dict)
    adam_step: int = 0
    iteration: int = 0
    stage: int = 1
    voxel_size: float = DEFAULT_VOXEL


def init_state(seed: int) -> TrainState:
    return TrainState(encoder=init_encoder_params(rngmod.stream(seed, "init", 0)),
                      adapter=init_adapter_params(rngmod.stream(seed, "init", 1)))


# ---------------------------------------------------------------------------
# scene registration
# ---------------------------------------------------------------------------

def register_scene(scene_data: SceneData, voxel_size: float = DEFAULT_VOXEL,
                   scale_factor: float = 0.75) -> RegisteredScene:
    """Frozen geometry plus an initial canonical table for one scene.

    All views' valid depth pixels unproject to isotropic splats (scale
    from local point spacing, opacity logit(0.9), identity rotation,
    DC-only SH from the observed pixel color), then voxel merging fuses
    them; the merged SH rows evaluate to the mean observed color of each
    splat's source pixels.
    """
    points, log_scales, sh_rows = [], [], []
    for v, (K, E) in enumerate(scene_data.cameras):
        depth = scene_data.depths[v]
        pts, pix = unproject_with_pixels(depth, K, E)
        if len(pts) == 0:
            continue
        img = scene_data.clean_images[(v, 0)]
        colors = img[pix[:, 0], pix[:, 1]]
        d = depth.values[pix[:, 0], pix[:, 1]]
        spacing = np.maximum(d / K.fx, 0.8 * voxel_size)
        points.append(pts)
        log_scales.append(np.log(scale_factor * spacing)[:, None].repeat(3, axis=1))
        sh_rows.append(shmod.dc_from_rgb(colors))
    if not points:
        raise DataError(f"scene {scene_data.scene_id} has no valid depth pixels")

    pos = np.vstack(points)
    n = len(pos)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    raw = GaussianScene(positions=pos, opacity_logits=np.full(n, logit(0.9)),
                        rotations=quats, log_scales=np.vstack(log_scales),
                        sh=np.vstack(sh_rows), scene_id=scene_data.scene_id)
    geometry = voxel_merge(raw, voxel_size)

    basis = []
    for K, E in scene_data.cameras:
        dirs = geometry.positions - E.camera_center()
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        basis.append(shmod.sh_basis(dirs))
    return RegisteredScene(scene_id=scene_data.scene_id, geometry=geometry,
                           cameras=scene_data.cameras, basis=basis, data=scene_data)


def colors_from_sh(sh_rows, basis: np.ndarray):
    """Raw RGB per splat from SH rows and a fixed per-view basis; stays in
    the tape when sh_rows is a node."""
    n = basis.shape[0]
    prod = ad.mul(ad.reshape(sh_rows, (n, 3, shmod.N_COEFFS)), basis[:, None, :])
    summed = ad.reshape(ad.matmul(ad.reshape(prod, (n * 3, shmod.N_COEFFS)),
                                  np.ones((shmod.N_COEFFS, 1))), (n, 3))
    return ad.add(summed, 0.5)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def optimizer_step(params: dict, grads: dict, moments: dict, lr, step: int):
    """Bias-corrected Adam; `lr` is a float or a name -> float mapping.

    Returns (new_params, new_moments); moments start at zero for names
    not yet present. Aborts on non-finite gradients.
    """
    new_params, new_moments = {}, {}
    bc1 = 1.0 - ADAM_BETA1 ** step
    bc2 = 1.0 - ADAM_BETA2 ** step
    for name, p in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
        m, v = moments.get(name, (np.zeros_like(p), np.zeros_like(p)))
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        rate = lr(name) if callable(lr) else lr
        new_params[name] = p - rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        new_moments[name] = (m, v)
    return new_params, new_moments


# ---------------------------------------------------------------------------
# one training step
# ---------------------------------------------------------------------------

def train_plan(scene: SceneData, holdout: bool):
    """Training pairs plus held-out assignments for one scene.

    With holdout the last view is excluded entirely (novel view) and each
    training view v excludes lighting (v mod L) from its supervision
    (novel view-lighting combination): every lighting is still observed
    from other views, mirroring photo collections where each image
    carries its own illumination and evaluation recombines them.

    Returns (train_views, lightings_per_view, heldout_lighting_per_view).
    """
    if not holdout:
        views = list(range(scene.n_views))
        return views, {v: list(range(scene.n_lightings)) for v in views}, {}
    views = list(range(scene.n_views - 1))
    per_view = {}
    heldout = {}
    for v in views:
        skip = v % scene.n_lightings
        per_view[v] = [l for l in range(scene.n_lightings) if l != skip]
        heldout[v] = skip
    return views, per_view, heldout


def _named_params(state: TrainState, scene_ids=None):
    out = dict(state.encoder.named())
    out.update(state.adapter.named())
    for sid, table in state.tables.items():
        if scene_ids is None or sid in scene_ids:
            out[f"table.{sid}"] = table
    return out


def train_step(state: TrainState, reg: RegisteredScene, cfg: StageConfig,
               lighting_for_view: dict, raster_cfg: RasterConfig | None = None,
               threads: int = 1) -> float:
    """One optimizer step on one scene over its training views.

    Gradients flow only into the encoder, the adapter, and this scene's
    canonical table; the geometry passed to the rasterizer consists of
    plain arrays, so nothing else can join the tape.
    """
    rcfg = raster_cfg if raster_cfg is not None else RasterConfig()
    named = _named_params(state, scene_ids={reg.scene_id})
    assert all(k.startswith(ALLOWED_PREFIXES) for k in named), "frozen-geometry registry violated"
    leaves = {k: ad.leaf(v) for k, v in named.items()}
    enc_nodes = EncoderParams.from_named(leaves)
    adp_nodes = AdapterParams.from_named(leaves)
    table_node = leaves[f"table.{reg.scene_id}"]

    views = sorted(lighting_for_view)
    use_adapter = "no-adapter" not in cfg.ablate
    use_masks = "no-mask" not in cfg.ablate

    def view_loss(v):
        ell = lighting_for_view[v]
        target = reg.data.images[(v, ell)]
        mask = reg.data.masks.get((v, ell))
        visibility = mask.visibility if (use_masks and mask is not None) \
            else np.ones(target.shape[:2])
        if use_adapter:
            code = encode_light(target, enc_nodes)
            sh_rows = adapt_colors(table_node, code, adp_nodes)
        else:
            sh_rows = table_node
        colors = colors_from_sh(sh_rows, reg.basis[v])
        K, E = reg.cameras[v]
        img_node, _ = rasterize_node(reg.geometry, K, E, colors,
                                     reg.geometry.opacity_logits,
                                     background=cfg.background, cfg=rcfg)
        return masked_loss(target, img_node, visibility, cfg.lam)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            losses = list(pool.map(view_loss, views))
    else:
        losses = [view_loss(v) for v in views]

    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    loss = ad.mul(total, 1.0 / len(losses))

    loss_value = float(ad.value_of(loss).reshape(()))
    if not np.isfinite(loss_value):
        raise NumericError(f"non-finite loss at iteration {state.iteration} "
                           f"(views {views}, lightings {lighting_for_view})")
    ad.backward(loss)

    grads = {}
    for k, node in leaves.items():
        g = node.grad if node.grad is not None else np.zeros_like(node.value)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient at iteration {state.iteration}: "
                               f"{k}, max |grad| {np.abs(g[np.isfinite(g)]).max(initial=0.0)}")
        grads[k] = g

    state.adam_step += 1
    lr = lambda name: cfg.lr_table if name.startswith("table.") else cfg.lr
    new_params, new_moments = optimizer_step(named, grads, state.moments, lr, state.adam_step)
    state.moments.update(new_moments)
    state.encoder = EncoderParams.from_named(new_params)
    state.adapter = AdapterParams.from_named(new_params)
    state.tables[reg.scene_id] = new_params[f"table.{reg.scene_id}"]
    state.iteration += 1
    return loss_value


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def render_view(state: TrainState, reg: RegisteredScene, v: int, reference_image,
                ablate=(), background=(0.0, 0.0, 0.0),
                raster_cfg: RasterConfig | None = None, precision: str = "f64"):
    """Render one registered view with the lighting of `reference_image`."""
    rcfg = raster_cfg if raster_cfg is not None else RasterConfig()
    table = state.tables[reg.scene_id]
    if "no-adapter" in ablate:
        adapted = table
    else:
        code = ad.value_of(encode_light(reference_image, state.encoder))
        dtype = np.float64 if precision == "f64" else np.float32
        adapted = adapt_colors_fast(table, code, state.adapter, dtype=dtype)
    K, E = reg.cameras[v]
    return rasterize(reg.geometry.with_sh(adapted), K, E, background=background, cfg=rcfg)


def evaluate(state: TrainState, regs: list, cfg: StageConfig,
             raster_cfg: RasterConfig | None = None) -> dict:
    """PSNR report: training pairs, held-out lighting, held-out view.

    Comparisons use the clean image and, when a mask exists, only static
    pixels, so occluders never count against reconstruction quality.
    """
    rows = {"train": [], "heldout_lighting": [], "heldout_view": []}
    for reg in regs:
        scene = reg.data
        views, per_view, heldout = train_plan(scene, cfg.holdout)
        pairs = {"train": [(v, l) for v in views for l in per_view[v]]}
        if cfg.holdout:
            pairs["heldout_lighting"] = [(v, heldout[v]) for v in views]
            pairs["heldout_view"] = [(scene.n_views - 1, l)
                                     for l in range(scene.n_lightings)]
        for split, vl in pairs.items():
            for v, ell in vl:
                out = render_view(state, reg, v, scene.images[(v, ell)],
                                  ablate=cfg.ablate, background=cfg.background,
                                  raster_cfg=raster_cfg)
                clean = scene.clean_images[(v, ell)]
                mask = scene.masks.get((v, ell))
                m = mask.visibility.astype(bool) if mask is not None else None
                rows[split].append(psnr(out.image, clean, mask=m))
    return {k: (float(np.mean(v)) if v else float("nan")) for k, v in rows.items()}


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def state_to_tensors(state: TrainState) -> dict:
    out = dict(state.encoder.named())
    out.update(state.adapter.named())
    for sid, table in state.tables.items():
        out[f"table.{sid}"] = table
    for name, (m, v) in state.moments.items():
        out[f"opt.m.{name}"] = m
        out[f"opt.v.{name}"] = v
    out["meta.counters"] = np.array([state.adam_step, state.iteration, state.stage,
                                     state.voxel_size], dtype=np.float64)
    return out


def state_from_tensors(tensors: dict) -> TrainState:
    encoder = EncoderParams.from_named(tensors)
    adapter = AdapterParams.from_named(tensors)
    tables = {k[len("table."):]: v for k, v in tensors.items() if k.startswith("table.")}
    moments = {}
    for k, v in tensors.items():
        if k.startswith("opt.m."):
            name = k[len("opt.m."):]
            moments[name] = (v, tensors[f"opt.v.{name}"])
    counters = tensors["meta.counters"]
    return TrainState(encoder=encoder, adapter=adapter, tables=tables, moments=moments,
                      adam_step=int(counters[0]), iteration=int(counters[1]),
                      stage=int(counters[2]),
                      voxel_size=float(counters[3]) if len(counters) > 3 else DEFAULT_VOXEL)


def save_state(path, state: TrainState) -> None:
    save_checkpoint(path, state_to_tensors(state))


def load_state(path) -> TrainState:
    return state_from_tensors(load_checkpoint(path))


# ---------------------------------------------------------------------------
# curriculum
# ---------------------------------------------------------------------------

def run_curriculum(configs: list, seed: int, out_dir,
                   resume: str | None = None, threads: int = 1,
                   raster_cfg: RasterConfig | None = None,
                   metrics_every: int = METRICS_FLUSH_EVERY,
                   log=None) -> TrainState:
    """Sequential stage execution carrying parameters forward.

    All stage datasets are validated before any training starts. A
    metrics CSV row (iteration, stage, loss, held-out PSNR) is appended
    and flushed every `metrics_every` iterations; a checkpoint lands at
    every stage boundary. `resume` continues a run bit-exactly from a
    stage checkpoint: iteration counters decide which steps remain.
    """
    if not configs:
        raise ConfigError("no stage configs given")
    stages = sorted(configs, key=lambda c: c.stage)
    if [c.stage for c in stages] != sorted({c.stage for c in stages}):
        raise ConfigError("duplicate stage ids in curriculum")

    datasets = {}
    for cfg in stages:
        try:
            datasets[cfg.stage] = load_dataset(cfg.dataset)
        except DataError as exc:
            raise ConfigError(f"stage {cfg.stage} dataset unusable: {exc}") from exc
        has_masks = any(m is not None for s in datasets[cfg.stage].scenes
                        for m in s.masks.values())
        if cfg.occlusion and not has_masks:
            raise ConfigError(f"stage {cfg.stage} expects occlusion masks "
                              f"but dataset {cfg.dataset} has none")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = load_state(resume) if resume else init_state(seed)
    state.voxel_size = stages[0].voxel_size

    registry: dict[str, RegisteredScene] = {}
    metrics_path = out_dir / "metrics.csv"
    mode = "a" if resume and metrics_path.exists() else "w"
    metrics_file = open(metrics_path, mode, newline="")
    writer = csv.writer(metrics_file)
    if mode == "w":
        writer.writerow(["iteration", "stage", "loss", "psnr_heldout_view",
                         "psnr_heldout_lighting", "psnr_train", "seconds"])
        metrics_file.flush()

    done = 0
    t0 = time.perf_counter()
    try:
        for cfg in stages:
            dataset = datasets[cfg.stage]
            regs = []
            for scene in dataset.scenes:
                if scene.scene_id not in registry:
                    registry[scene.scene_id] = register_scene(scene, cfg.voxel_size)
                reg = registry[scene.scene_id]
                if not _same_cameras(reg.cameras, scene.cameras):
                    raise ConfigError(
                        f"{scene.scene_id} differs between stage datasets; "
                        "generate all stages from one seed and geometry config")
                # rebind data so stage-specific images (occluded or not) win
                reg = RegisteredScene(scene_id=reg.scene_id, geometry=reg.geometry,
                                      cameras=reg.cameras, basis=reg.basis, data=scene)
                regs.append(reg)
                if reg.scene_id not in state.tables:
                    state.tables[reg.scene_id] = reg.geometry.sh.copy()

            if state.stage < cfg.stage:
                state.stage = cfg.stage
            target_end = done + cfg.iterations
            ran_any = state.iteration < target_end
            while state.iteration < target_end:
                reg = regs[state.iteration % len(regs)]
                views, per_view, _ = train_plan(reg.data, cfg.holdout)
                lighting_for_view = {
                    v: per_view[v][int(rngmod.stream(seed, "train", state.iteration, v)
                                       .integers(len(per_view[v])))]
                    for v in views
                }
                loss = train_step(state, reg, cfg, lighting_for_view,
                                  raster_cfg=raster_cfg, threads=threads)
                if state.iteration % metrics_every == 0 or state.iteration == target_end:
                    report = evaluate(state, regs, cfg, raster_cfg=raster_cfg)
                    writer.writerow([state.iteration, cfg.stage, f"{loss:.10g}",
                                     f"{report['heldout_view']:.6f}",
                                     f"{report['heldout_lighting']:.6f}",
                                     f"{report['train']:.6f}",
                                     f"{time.perf_counter() - t0:.2f}"])
                    metrics_file.flush()
                    if log:
                        log(f"iter {state.iteration} stage {cfg.stage} "
                            f"loss {loss:.6f} heldout {report['heldout_lighting']:.2f} dB")
            done = target_end
            ck = out_dir / f"stage{cfg.stage}.wskt"
            # a resumed run must not clobber earlier stages' checkpoints
            if ran_any or not ck.exists():
                save_state(ck, state)
    finally:
        metrics_file.close()
    return state


def _same_cameras(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    for (ka, ea), (kb, eb) in zip(a, b):
        if ka != kb or not np.array_equal(ea.rotation, eb.rotation) \
                or not np.array_equal(ea.translation, eb.translation):
            return False
    return True
