"""Procedural synthetic datasets: toy scenes, parametric relighting, layout.

Scenes are ground-plane-plus-clusters arrangements of opaque splats with
smooth color fields, viewed from an orbit arc. Ground-truth images come
from this package's own rasterizer; lighting variants apply a pointwise
tint/exposure/gamma transform with known parameters, so tests can verify
that light codes actually separate lighting conditions. Lighting spec
index ell is seeded independently of the scene index, making lighting
conditions shared across scenes within one dataset.

Dataset layout:
    <root>/manifest.json
    <root>/scene_<k>/cameras.json
    <root>/scene_<k>/view_<v>/depth.wsdm
    <root>/scene_<k>/view_<v>/light_<l>.png           supervision target
    <root>/scene_<k>/view_<v>/light_<l>.mask.png      when occluded
    <root>/scene_<k>/view_<v>/light_<l>.clean.png     when occluded
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod
from . import sh as shmod
from .cameras import (DepthMap, Extrinsics, Intrinsics, load_cameras, load_depth,
                      save_cameras, save_depth)
from .errors import ConfigError, ContractError, DataError
from .imgio import load_png, save_png
from .occlusion import TransientMask, builtin_bank, composite_occluders, load_mask, save_mask
from .renderer import RasterConfig, rasterize, render_depth
from .scene import GaussianScene, logit

DATASET_VERSION = 1
DEPTH_ALPHA_THRESHOLD = 0.5


@dataclass(frozen=True)
class LightingSpec:
    tint: tuple
    exposure: float
    gamma: float

    def __post_init__(self):
        if len(self.tint) != 3 or any(t <= 0 for t in self.tint):
            raise ContractError(f"tint must be 3 positive values, got {self.tint}")
        if self.exposure <= 0 or self.gamma <= 0:
            raise ContractError("exposure and gamma must be positive")

    @classmethod
    def identity(cls) -> "LightingSpec":
        return cls(tint=(1.0, 1.0, 1.0), exposure=1.0, gamma=1.0)

    @classmethod
    def sample(cls, gen) -> "LightingSpec":
        return cls(tint=tuple(gen.uniform(0.5, 1.5, 3)),
                   exposure=float(gen.uniform(0.5, 1.5)),
                   gamma=float(gen.uniform(0.8, 1.25)))

    def to_dict(self) -> dict:
        return {"tint": list(self.tint), "exposure": self.exposure, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d) -> "LightingSpec":
        return cls(tint=tuple(d["tint"]), exposure=d["exposure"], gamma=d["gamma"])


def relight(image: np.ndarray, spec: LightingSpec) -> np.ndarray:
    """Pointwise clamp(exposure * tint * image^gamma); monotone per channel."""
    img = np.asarray(image, dtype=np.float64)
    tint = np.asarray(spec.tint)
    return np.clip(spec.exposure * tint * np.power(img, spec.gamma), 0.0, 1.0)


def relight_inverse(image: np.ndarray, spec: LightingSpec) -> np.ndarray:
    """Inverse on the un-clamped interior."""
    img = np.asarray(image, dtype=np.float64)
    tint = np.asarray(spec.tint)
    return np.power(img / (spec.exposure * tint), 1.0 / spec.gamma)


@dataclass
class ToyScene:
    gt_gaussians: GaussianScene
    cameras: list
    scene_seed: int


def _orbit_camera(az, elevation, radius, target, image_size, focal):
    pos = target + radius * np.array([np.sin(az) * np.cos(elevation),
                                      -np.sin(elevation),
                                      -np.cos(az) * np.cos(elevation)])
    z_cam = target - pos
    z_cam = z_cam / np.linalg.norm(z_cam)
    down = np.array([0.0, 1.0, 0.0])
    y_cam = down - np.dot(down, z_cam) * z_cam
    y_cam = y_cam / np.linalg.norm(y_cam)
    x_cam = np.cross(y_cam, z_cam)
    rot = np.stack([x_cam, y_cam, z_cam])
    c = (image_size - 1) / 2.0
    K = Intrinsics(fx=focal, fy=focal, cx=c, cy=c, width=image_size, height=image_size)
    E = Extrinsics(rotation=rot, translation=-rot @ pos)
    return K, E


def _color_field(gen, xz):
    """Smooth low-frequency RGB over plane coordinates, values in ~[0.15,0.85]."""
    freqs = gen.uniform(0.5, 1.3, (3, 2))
    phases = gen.uniform(0, 2 * np.pi, 3)
    base = gen.uniform(0.35, 0.65, 3)
    amp = gen.uniform(0.1, 0.25, 3)
    out = np.empty((len(xz), 3))
    for c in range(3):
        wave = np.sin(freqs[c, 0] * xz[:, 0] + freqs[c, 1] * xz[:, 1] + phases[c])
        out[:, c] = base[c] + amp[c] * wave
    return np.clip(out, 0.05, 0.95)


def make_scene(seed: int, n_views: int = 6, image_size: int = 48,
               min_visible_fraction: float = 0.8) -> ToyScene:
    """Deterministic toy scene: ground plane, boxes, blobs, orbit cameras."""
    gen = rngmod.stream(seed, "scene")

    positions, colors, log_scales = [], [], []

    # ground plane patch
    side = int(gen.integers(8, 11))
    extent = 2.0
    spacing = 2 * extent / (side - 1)
    gx, gz = np.meshgrid(np.linspace(-extent, extent, side), np.linspace(-extent, extent, side))
    plane = np.column_stack([gx.ravel(), np.full(side * side, 0.8), gz.ravel()])
    plane[:, [0, 2]] += gen.uniform(-0.15, 0.15, (side * side, 2)) * spacing
    positions.append(plane)
    colors.append(_color_field(gen, plane[:, [0, 2]]))
    log_scales.append(np.full((side * side, 3), np.log(0.62 * spacing)))

    # clusters: boxes and blobs resting on the plane
    n_clusters = int(gen.integers(2, 5))
    for _ in range(n_clusters):
        center = np.array([gen.uniform(-1.4, 1.4), gen.uniform(0.15, 0.55), gen.uniform(-1.4, 1.4)])
        count = int(gen.integers(12, 40))
        if gen.random() < 0.5:  # box
            size = gen.uniform(0.25, 0.6, 3)
            pts = center + gen.uniform(-1, 1, (count, 3)) * size
            scale = 0.45 * size.mean()
        else:  # blob
            radius = gen.uniform(0.2, 0.5)
            pts = center + gen.standard_normal((count, 3)) * radius * 0.5
            scale = 0.5 * radius
        positions.append(pts)
        tint = gen.uniform(0.2, 0.9, 3)
        local = _color_field(gen, pts[:, [0, 2]])
        colors.append(np.clip(0.5 * local + 0.5 * tint, 0.05, 0.95))
        log_scales.append(np.full((count, 3), np.log(scale)))

    pos = np.vstack(positions)
    col = np.vstack(colors)
    ls = np.vstack(log_scales)
    n = len(pos)

    sh = shmod.dc_from_rgb(col)
    # mild low-order view dependence on top of the DC term
    wobble = gen.standard_normal((n, 3, 3)) * 0.02
    shr = sh.reshape(n, 3, shmod.N_COEFFS)
    shr[:, :, 1:4] += wobble

    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    gt = GaussianScene(positions=pos, opacity_logits=np.full(n, logit(0.97)),
                       rotations=quats, log_scales=ls, sh=shr.reshape(n, 75),
                       scene_id=f"toy_{seed}")

    target = np.array([0.0, 0.45, 0.0])
    radius = 4.6
    focal = image_size / (2.0 * np.tan(np.radians(55.0) / 2.0))
    azimuths = np.linspace(-0.62, 0.62, n_views)
    elevation = np.radians(14.0)
    cameras = [_orbit_camera(az, elevation, radius, target, image_size, focal)
               for az in azimuths]

    for K, E in cameras:
        cam = gt.positions @ E.rotation.T + E.translation
        z = cam[:, 2]
        u = K.fx * cam[:, 0] / np.maximum(z, 1e-9) + K.cx
        v = K.fy * cam[:, 1] / np.maximum(z, 1e-9) + K.cy
        visible = (z > 0) & (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)
        frac = visible.mean()
        if frac < min_visible_fraction:
            raise ContractError(f"camera sees only {frac:.0%} of gaussians; orbit misconfigured")

    return ToyScene(gt_gaussians=gt, cameras=cameras, scene_seed=seed)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def lighting_specs(seed: int, count: int) -> list[LightingSpec]:
    """Index 0 is always identity; others are sampled per lighting index
    only, so every scene in a dataset shares the same conditions."""
    specs = [LightingSpec.identity()]
    for ell in range(1, count):
        specs.append(LightingSpec.sample(rngmod.stream(seed, "lighting", ell)))
    return specs


def build_dataset(root, n_scenes: int, lightings_per_scene: int, occlude: bool,
                  seed: int, n_views: int = 6, image_size: int = 48,
                  background=(0.0, 0.0, 0.0), bank=None,
                  raster_cfg: RasterConfig | None = None) -> Path:
    """Write a full dataset tree; returns the manifest path.

    Pure function of its arguments: rerunning with the same values
    reproduces every file byte-identically.
    """
    if n_scenes < 1:
        raise ConfigError(f"n_scenes must be >= 1, got {n_scenes}")
    if lightings_per_scene < 2:
        raise ConfigError(f"lightings_per_scene must be >= 2, got {lightings_per_scene}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = raster_cfg if raster_cfg is not None else RasterConfig()
    if bank is None and occlude:
        bank = builtin_bank()

    specs = lighting_specs(seed, lightings_per_scene)
    manifest = {
        "version": DATASET_VERSION,
        "config": {
            "n_scenes": n_scenes, "lightings_per_scene": lightings_per_scene,
            "occlude": occlude, "seed": seed, "n_views": n_views,
            "image_size": image_size, "background": list(background),
        },
        "lightings": [s.to_dict() for s in specs],
        "scenes": [],
    }

    for k in range(n_scenes):
        scene_seed = int(rngmod.stream(seed, "scene-seed", k).integers(2 ** 62))
        toy = make_scene(scene_seed, n_views=n_views, image_size=image_size)
        scene_dir = root / f"scene_{k}"
        scene_dir.mkdir(exist_ok=True)
        save_cameras(scene_dir / "cameras.json", toy.cameras)

        entry = {"index": k, "scene_seed": scene_seed, "occluder_seeds": {}}
        for v, (K, E) in enumerate(toy.cameras):
            view_dir = scene_dir / f"view_{v}"
            view_dir.mkdir(exist_ok=True)
            identity_img = rasterize(toy.gt_gaussians, K, E, background=background,
                                     cfg=cfg).image
            depth = render_depth(toy.gt_gaussians, K, E,
                                 alpha_threshold=DEPTH_ALPHA_THRESHOLD, cfg=cfg)
            save_depth(view_dir / "depth.wsdm", depth)
            for ell, spec in enumerate(specs):
                img = relight(identity_img, spec)
                if occlude:
                    occ_seed = int(rngmod.stream(seed, "occluder-seed", k, v, ell)
                                   .integers(2 ** 62))
                    entry["occluder_seeds"][f"{v}:{ell}"] = occ_seed
                    occluded, mask = composite_occluders(img, bank, occ_seed)
                    save_png(view_dir / f"light_{ell}.clean.png", img)
                    save_png(view_dir / f"light_{ell}.png", occluded)
                    save_mask(view_dir / f"light_{ell}.mask.png", mask)
                else:
                    save_png(view_dir / f"light_{ell}.png", img)
        manifest["scenes"].append(entry)

    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


def build_dataset_from_manifest(manifest_path, out_root) -> Path:
    """Replay a recorded generation config into a fresh directory."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    cfg = json.loads(manifest_path.read_text())["config"]
    return build_dataset(out_root, n_scenes=cfg["n_scenes"],
                         lightings_per_scene=cfg["lightings_per_scene"],
                         occlude=cfg["occlude"], seed=cfg["seed"],
                         n_views=cfg["n_views"], image_size=cfg["image_size"],
                         background=tuple(cfg["background"]))


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------

@dataclass
class SceneData:
    scene_id: str
    directory: Path
    cameras: list
    depths: list
    images: dict          # (view, lighting) -> (H,W,3) float64
    clean_images: dict    # (view, lighting) -> clean target when occluded
    masks: dict           # (view, lighting) -> TransientMask or None
    n_views: int
    n_lightings: int


@dataclass
class Dataset:
    root: Path
    manifest: dict
    scenes: list

    @property
    def lighting_specs(self) -> list:
        return [LightingSpec.from_dict(d) for d in self.manifest["lightings"]]


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    cfg = manifest["config"]
    scenes = []
    for k in range(cfg["n_scenes"]):
        scene_dir = root / f"scene_{k}"
        cameras = load_cameras(scene_dir / "cameras.json")
        depths, images, cleans, masks = [], {}, {}, {}
        for v in range(cfg["n_views"]):
            view_dir = scene_dir / f"view_{v}"
            depths.append(load_depth(view_dir / "depth.wsdm"))
            for ell in range(cfg["lightings_per_scene"]):
                img_path = view_dir / f"light_{ell}.png"
                if not img_path.exists():
                    raise DataError(f"missing image {img_path}")
                images[(v, ell)] = load_png(img_path)
                clean_path = view_dir / f"light_{ell}.clean.png"
                cleans[(v, ell)] = load_png(clean_path) if clean_path.exists() \
                    else images[(v, ell)]
                mask_path = view_dir / f"light_{ell}.mask.png"
                masks[(v, ell)] = load_mask(mask_path) if mask_path.exists() else None
        scenes.append(SceneData(scene_id=f"scene_{k}", directory=scene_dir,
                                cameras=cameras, depths=depths, images=images,
                                clean_images=cleans, masks=masks,
                                n_views=cfg["n_views"],
                                n_lightings=cfg["lightings_per_scene"]))
    return Dataset(root=root, manifest=manifest, scenes=scenes)
