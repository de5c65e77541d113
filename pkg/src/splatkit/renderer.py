"""Differentiable software rasterizer for Gaussian scenes.

Splats are EWA-projected to screen, composited front-to-back per pixel,
and the analytic backward pass yields exact gradients with respect to
per-Gaussian colors and opacity logits. Geometry receives no gradients:
positions, rotations, and scales are frozen upstream.

Two evaluation paths share every piece of per-element arithmetic:

* `rasterize` walks 16x16 pixel tiles; per-splat alphas come from one
  shared numpy helper and the per-pixel compositing loop runs in a numba
  kernel of plain IEEE multiply/adds.
* `rasterize_reference` is the deliberately naive per-pixel loop used as
  the oracle in tests.

Bit-identical output between the two rests on all transcendentals being
evaluated by the same numpy ufunc over contiguous float64 buffers (the
compositing itself is exact-order arithmetic in both paths).

Pixel centers sit at integer coordinates; a splat contributes to a pixel
iff the pixel lies inside its axis-aligned 3-sigma marginal box, and the
whole splat is culled when that box misses the image or camera-space
depth is at most `near`. Per-pixel alpha is clipped to 0.999 so the
backward-pass division by (1 - alpha) stays bounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from . import autodiff as ad
from . import sh as shmod
from .cameras import DepthMap, Extrinsics, Intrinsics
from .errors import ContractError, NumericError
from .scene import Gaussian, GaussianScene, covariances, sigmoid


@dataclass(frozen=True)
class RasterConfig:
    near: float = 0.01
    cov_floor: float = 0.3
    alpha_clip: float = 0.999
    tile: int = 16
    sigma_cut: float = 3.0


DEFAULT_CONFIG = RasterConfig()


@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    source_index: int


@dataclass
class RenderOutput:
    image: np.ndarray
    alpha: np.ndarray
    per_pixel_contrib: Optional["ContribRecord"] = None


@dataclass
class ContribRecord:
    """Everything rasterize_backward needs, saved tile by tile.

    Each tile entry is (y0, y1, x0, x1, global_idx, ent_i, ent_p, alphas,
    gfactors, colors): a splat-major stream of per-(splat, pixel)
    contributions, where ent_i indexes the tile-local splat list and
    ent_p the tile's row-major pixels."""
    n_gaussians: int
    height: int
    width: int
    alpha_clip: float
    background: np.ndarray
    opacities: np.ndarray          # sigma per splat, scene order
    colors_raw: np.ndarray         # override or sh-evaluated colors, pre-clamp
    tiles: list


def _validate_finite(scene: GaussianScene) -> None:
    for name, arr in (("position", scene.positions), ("opacity_logit", scene.opacity_logits),
                      ("log_scale", scene.log_scales), ("rotation", scene.rotations),
                      ("sh", scene.sh)):
        bad = ~np.isfinite(arr.reshape(len(scene), -1)).all(axis=1)
        if bad.any():
            raise NumericError(f"gaussian {int(np.nonzero(bad)[0][0])} has non-finite {name}")


def _project_arrays(scene: GaussianScene, K: Intrinsics, E: Extrinsics, cfg: RasterConfig):
    """EWA-project all splats; returns arrays plus the surviving index set."""
    cam = scene.positions @ E.rotation.T + E.translation
    z = cam[:, 2]
    alive = z > cfg.near

    with np.errstate(divide="ignore", invalid="ignore"):
        mx = K.fx * cam[:, 0] / z + K.cx
        my = K.fy * cam[:, 1] / z + K.cy

        cov3 = covariances(scene.rotations, scene.log_scales)
        # V = J W rows: d(mean2d)/d(world position)
        w0, w1, w2 = E.rotation[0], E.rotation[1], E.rotation[2]
        inv_z = 1.0 / z
        v0 = K.fx * inv_z[:, None] * w0 - (K.fx * cam[:, 0] * inv_z ** 2)[:, None] * w2
        v1 = K.fy * inv_z[:, None] * w1 - (K.fy * cam[:, 1] * inv_z ** 2)[:, None] * w2
        c00 = np.einsum("ni,nij,nj->n", v0, cov3, v0, optimize=True) + cfg.cov_floor
        c01 = np.einsum("ni,nij,nj->n", v0, cov3, v1, optimize=True)
        c11 = np.einsum("ni,nij,nj->n", v1, cov3, v1, optimize=True) + cfg.cov_floor

    rx = cfg.sigma_cut * np.sqrt(np.abs(c00))
    ry = cfg.sigma_cut * np.sqrt(np.abs(c11))
    alive &= (mx + rx >= 0) & (mx - rx <= K.width - 1) & (my + ry >= 0) & (my - ry <= K.height - 1)

    idx = np.nonzero(alive)[0]
    det = c00[idx] * c11[idx] - c01[idx] ** 2
    inv00 = c11[idx] / det
    inv01 = -c01[idx] / det
    inv11 = c00[idx] / det
    return {
        "idx": idx, "depth": z[idx], "mx": mx[idx], "my": my[idx],
        "c00": c00[idx], "c01": c01[idx], "c11": c11[idx],
        "inv00": inv00, "inv01": inv01, "inv11": inv11,
        "rx": rx[idx], "ry": ry[idx],
    }


def project_gaussian(g: Gaussian, K: Intrinsics, E: Extrinsics,
                     cfg: RasterConfig = DEFAULT_CONFIG, source_index: int = 0):
    """Project one splat; returns a Splat2D or None when culled."""
    scene = GaussianScene.from_gaussians([g])
    proj = _project_arrays(scene, K, E, cfg)
    if len(proj["idx"]) == 0:
        return None
    direction = g.position - E.camera_center()
    direction = direction / np.linalg.norm(direction)
    color = shmod.sh_eval(g.sh, direction)
    cov2d = np.array([[proj["c00"][0], proj["c01"][0]], [proj["c01"][0], proj["c11"][0]]])
    return Splat2D(mean2d=np.array([proj["mx"][0], proj["my"][0]]), cov2d=cov2d,
                   depth=float(proj["depth"][0]), color=color,
                   opacity=float(sigmoid(g.opacity_logit)), source_index=source_index)


def _ray_colors(scene: GaussianScene, E: Extrinsics) -> np.ndarray:
    center = E.camera_center()
    dirs = scene.positions - center
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return shmod.eval_colors(scene.sh, dirs / norms)


def _power_block(mx, my, i00, i01, i11, rx, ry, px, py):
    """Shared per-element alpha geometry: exponent and in-box mask.

    mx..ry are per-splat columns shaped (..., 1); px, py are pixel rows
    shaped (1, P) or plain (P,). Both rasterize paths call this with the
    same scalars per element, keeping their arithmetic bit-identical.
    """
    dx = px - mx
    dy = py - my
    power = -0.5 * (i00 * dx * dx + 2.0 * i01 * dx * dy + i11 * dy * dy)
    inbox = (np.abs(dx) <= rx) & (np.abs(dy) <= ry)
    return power, inbox


def _alpha_matrix(proj, order, px, py, opac, clip):
    """Alpha matrix (G, P) for splats `order` over pixel block (px, py)."""
    col = lambda a: a[order][:, None]
    power, inbox = _power_block(col(proj["mx"]), col(proj["my"]),
                                col(proj["inv00"]), col(proj["inv01"]), col(proj["inv11"]),
                                col(proj["rx"]), col(proj["ry"]), px[None, :], py[None, :])
    alphas = np.zeros(power.shape)
    gfactors = np.zeros(power.shape)
    flat = np.exp(np.ascontiguousarray(power[inbox]))
    gfactors[inbox] = flat
    op = np.broadcast_to(opac[order][:, None], power.shape)
    alphas[inbox] = np.minimum(clip, np.ascontiguousarray(op[inbox]) * flat)
    return alphas, gfactors


@numba.njit(cache=True)
def _stream_extent(mx, my, rx, ry, x0, x1, y0, y1, bounds):
    """Clip each splat's pixel-box to the tile; returns an entry-count
    upper bound (the exact |dx|<=rx test runs during fill)."""
    total = 0
    for i in range(mx.shape[0]):
        ax0 = int(np.ceil(mx[i] - rx[i]))
        ax1 = int(np.floor(mx[i] + rx[i]))
        ay0 = int(np.ceil(my[i] - ry[i]))
        ay1 = int(np.floor(my[i] + ry[i]))
        if ax0 < x0:
            ax0 = x0
        if ax1 > x1 - 1:
            ax1 = x1 - 1
        if ay0 < y0:
            ay0 = y0
        if ay1 > y1 - 1:
            ay1 = y1 - 1
        bounds[i, 0] = ax0
        bounds[i, 1] = ax1
        bounds[i, 2] = ay0
        bounds[i, 3] = ay1
        if ax1 >= ax0 and ay1 >= ay0:
            total += (ax1 - ax0 + 1) * (ay1 - ay0 + 1)
    return total


@numba.njit(cache=True)
def _stream_fill(mx, my, i00, i01, i11, rx, ry, bounds, y0, x0, tw,
                 ent_i, ent_p, power):
    """Write the splat-major (splat, pixel, exponent) stream.

    The exponent expression must stay textually identical to
    _power_block so both rasterize paths produce the same bits (plain
    IEEE multiply/adds; exp itself happens outside in numpy).
    """
    k = 0
    for i in range(mx.shape[0]):
        ax0 = bounds[i, 0]
        ax1 = bounds[i, 1]
        ay0 = bounds[i, 2]
        ay1 = bounds[i, 3]
        a = i00[i]
        b = i01[i]
        c = i11[i]
        mxi = mx[i]
        myi = my[i]
        rxi = rx[i]
        ryi = ry[i]
        for py in range(ay0, ay1 + 1):
            dy = py - myi
            for px in range(ax0, ax1 + 1):
                dx = px - mxi
                if abs(dx) <= rxi and abs(dy) <= ryi:
                    power[k] = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
                    ent_i[k] = i
                    ent_p[k] = (py - y0) * tw + (px - x0)
                    k += 1
    return k


@numba.njit(cache=True)
def _stream_composite(ent_i, ent_p, alphas, colors, bg, trans, out_rgb, out_alpha):
    for e in range(ent_i.shape[0]):
        a = alphas[e]
        if a == 0.0:
            continue
        i = ent_i[e]
        p = ent_p[e]
        t = trans[p]
        w = a * t
        out_rgb[p, 0] += w * colors[i, 0]
        out_rgb[p, 1] += w * colors[i, 1]
        out_rgb[p, 2] += w * colors[i, 2]
        trans[p] = t * (1.0 - a)
    for p in range(trans.shape[0]):
        t = trans[p]
        out_rgb[p, 0] += t * bg[0]
        out_rgb[p, 1] += t * bg[1]
        out_rgb[p, 2] += t * bg[2]
        out_alpha[p] = 1.0 - t


@numba.njit(cache=True)
def _stream_backward(ent_i, ent_p, alphas, gfactors, colors, bg, dimg, clip,
                     trans, tent, suffix, dcolor, dsigma):
    for e in range(ent_i.shape[0]):
        p = ent_p[e]
        a = alphas[e]
        tent[e] = trans[p]
        if a != 0.0:
            trans[p] = trans[p] * (1.0 - a)
    for p in range(trans.shape[0]):
        suffix[p, 0] = bg[0] * trans[p]
        suffix[p, 1] = bg[1] * trans[p]
        suffix[p, 2] = bg[2] * trans[p]
    for e in range(ent_i.shape[0] - 1, -1, -1):
        a = alphas[e]
        if a == 0.0:
            continue
        i = ent_i[e]
        p = ent_p[e]
        ti = tent[e]
        w = a * ti
        g0 = dimg[p, 0]
        g1 = dimg[p, 1]
        g2 = dimg[p, 2]
        dcolor[i, 0] += g0 * w
        dcolor[i, 1] += g1 * w
        dcolor[i, 2] += g2 * w
        keep = 1.0 - a
        dalpha = (g0 * (colors[i, 0] * ti - suffix[p, 0] / keep)
                  + g1 * (colors[i, 1] * ti - suffix[p, 1] / keep)
                  + g2 * (colors[i, 2] * ti - suffix[p, 2] / keep))
        if a < clip:
            dsigma[i] += dalpha * gfactors[e]
        suffix[p, 0] += colors[i, 0] * w
        suffix[p, 1] += colors[i, 1] * w
        suffix[p, 2] += colors[i, 2] * w


def _prepare(scene, K, E, colors_override, opacity_logits_override, cfg):
    _validate_finite(scene)
    if colors_override is not None:
        colors_raw = np.ascontiguousarray(colors_override, dtype=np.float64)
        if colors_raw.shape != (len(scene), 3):
            raise ContractError(f"colors_override must be ({len(scene)},3), got {colors_raw.shape}")
        if not np.isfinite(colors_raw).all():
            bad = int(np.nonzero(~np.isfinite(colors_raw).all(axis=1))[0][0])
            raise NumericError(f"gaussian {bad} has non-finite override color")
    else:
        colors_raw = _ray_colors(scene, E)
    logits = scene.opacity_logits if opacity_logits_override is None \
        else np.ascontiguousarray(opacity_logits_override, dtype=np.float64)
    if logits.shape != (len(scene),):
        raise ContractError(f"opacity logits must be ({len(scene)},), got {logits.shape}")
    if not np.isfinite(logits).all():
        bad = int(np.nonzero(~np.isfinite(logits))[0][0])
        raise NumericError(f"gaussian {bad} has non-finite opacity logit")

    proj = _project_arrays(scene, K, E, cfg)
    # canonical compositing order: depth ascending, ties by source index
    local_order = np.lexsort((proj["idx"], proj["depth"]))
    for key in ("idx", "depth", "mx", "my", "c00", "c01", "c11",
                "inv00", "inv01", "inv11", "rx", "ry"):
        proj[key] = np.ascontiguousarray(proj[key][local_order])
    return colors_raw, logits, proj


def rasterize(scene: GaussianScene, K: Intrinsics, E: Extrinsics,
              colors_override: np.ndarray | None = None,
              opacity_logits_override: np.ndarray | None = None,
              background=(0.0, 0.0, 0.0),
              retain_contrib: bool = False,
              cfg: RasterConfig = DEFAULT_CONFIG) -> RenderOutput:
    """Tiled front-to-back compositing of a scene into an H x W x 3 image.

    Colors come from each splat's SH evaluated along the ray from the
    camera center unless `colors_override` is given (raw values either
    way; they are clamped to [0,1] here). With `retain_contrib` the
    output carries the saved state `rasterize_backward` requires.
    """
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = K.height, K.width
    image = np.empty((h, w, 3))
    alpha = np.zeros((h, w))
    n = len(scene)

    if n == 0:
        image[:] = bg
        record = ContribRecord(0, h, w, cfg.alpha_clip, bg, np.zeros(0), np.zeros((0, 3)), []) \
            if retain_contrib else None
        return RenderOutput(image=image, alpha=alpha, per_pixel_contrib=record)

    colors_raw, logits, proj = _prepare(scene, K, E, colors_override,
                                        opacity_logits_override, cfg)
    opac = sigmoid(logits)
    colors_clamped = np.clip(colors_raw, 0.0, 1.0)
    sorted_colors = np.ascontiguousarray(colors_clamped[proj["idx"]])
    sorted_opac = np.ascontiguousarray(opac[proj["idx"]])

    tiles = []
    bx0 = proj["mx"] - proj["rx"]
    bx1 = proj["mx"] + proj["rx"]
    by0 = proj["my"] - proj["ry"]
    by1 = proj["my"] + proj["ry"]

    for y0 in range(0, h, cfg.tile):
        y1 = min(y0 + cfg.tile, h)
        for x0 in range(0, w, cfg.tile):
            x1 = min(x0 + cfg.tile, w)
            hit = np.nonzero((bx1 >= x0) & (bx0 <= x1 - 1) & (by1 >= y0) & (by0 <= y1 - 1))[0]
            th, tw = y1 - y0, x1 - x0
            p_count = th * tw
            if len(hit) == 0:
                image[y0:y1, x0:x1] = bg
                continue
            mx, my = proj["mx"][hit], proj["my"][hit]
            rx, ry = proj["rx"][hit], proj["ry"][hit]
            bounds = np.empty((len(hit), 4), dtype=np.int64)
            cap = _stream_extent(mx, my, rx, ry, x0, x1, y0, y1, bounds)
            ent_i = np.empty(cap, dtype=np.int64)
            ent_p = np.empty(cap, dtype=np.int64)
            power = np.empty(cap)
            k = _stream_fill(mx, my, proj["inv00"][hit], proj["inv01"][hit],
                             proj["inv11"][hit], rx, ry, bounds, y0, x0, tw,
                             ent_i, ent_p, power)
            ent_i, ent_p, power = ent_i[:k], ent_p[:k], power[:k]
            gfactors = np.exp(power)
            opac_local = sorted_opac[hit]
            alphas = np.minimum(cfg.alpha_clip, opac_local[ent_i] * gfactors)
            colors_local = np.ascontiguousarray(sorted_colors[hit])
            tile_rgb = np.zeros((p_count, 3))
            tile_alpha = np.empty(p_count)
            trans = np.ones(p_count)
            _stream_composite(ent_i, ent_p, alphas, colors_local, bg, trans,
                              tile_rgb, tile_alpha)
            image[y0:y1, x0:x1] = tile_rgb.reshape(th, tw, 3)
            alpha[y0:y1, x0:x1] = tile_alpha.reshape(th, tw)
            if retain_contrib:
                tiles.append((y0, y1, x0, x1, proj["idx"][hit], ent_i, ent_p,
                              alphas, gfactors, colors_local))

    record = None
    if retain_contrib:
        record = ContribRecord(n_gaussians=n, height=h, width=w, alpha_clip=cfg.alpha_clip,
                               background=bg, opacities=opac, colors_raw=colors_raw, tiles=tiles)
    return RenderOutput(image=image, alpha=alpha, per_pixel_contrib=record)


def rasterize_reference(scene: GaussianScene, K: Intrinsics, E: Extrinsics,
                        colors_override: np.ndarray | None = None,
                        opacity_logits_override: np.ndarray | None = None,
                        background=(0.0, 0.0, 0.0),
                        cfg: RasterConfig = DEFAULT_CONFIG) -> RenderOutput:
    """Naive per-pixel oracle: global sort, every splat tested at every pixel."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = K.height, K.width
    image = np.empty((h, w, 3))
    alpha = np.zeros((h, w))
    if len(scene) == 0:
        image[:] = bg
        return RenderOutput(image=image, alpha=alpha)

    colors_raw, logits, proj = _prepare(scene, K, E, colors_override,
                                        opacity_logits_override, cfg)
    opac = sigmoid(logits)
    colors = np.clip(colors_raw, 0.0, 1.0)[proj["idx"]]
    sorted_opac = opac[proj["idx"]]
    g_count = len(proj["idx"])

    for row in range(h):
        for colx in range(w):
            px = np.array([float(colx)])
            py = np.array([float(row)])
            power, inbox = _power_block(proj["mx"][:, None], proj["my"][:, None],
                                        proj["inv00"][:, None], proj["inv01"][:, None],
                                        proj["inv11"][:, None], proj["rx"][:, None],
                                        proj["ry"][:, None], px[None, :], py[None, :])
            expvals = np.exp(np.ascontiguousarray(power[:, 0]))
            alphas = np.where(inbox[:, 0], np.minimum(cfg.alpha_clip, sorted_opac * expvals), 0.0)
            t = 1.0
            acc = np.zeros(3)
            for i in range(g_count):
                a = alphas[i]
                if a == 0.0:
                    continue
                wgt = a * t
                acc[0] += wgt * colors[i, 0]
                acc[1] += wgt * colors[i, 1]
                acc[2] += wgt * colors[i, 2]
                t *= 1.0 - a
            image[row, colx, 0] = acc[0] + t * bg[0]
            image[row, colx, 1] = acc[1] + t * bg[1]
            image[row, colx, 2] = acc[2] + t * bg[2]
            alpha[row, colx] = 1.0 - t
    return RenderOutput(image=image, alpha=alpha)


def rasterize_backward(grad_image: np.ndarray, contrib: ContribRecord | None):
    """Exact gradients of the composite w.r.t. raw colors and opacity logits.

    `contrib` must come from a rasterize call with retain_contrib=True.
    Returns (dL/d_colors (N,3), dL/d_opacity_logits (N,)); splats that
    contributed to no pixel get exactly zero.
    """
    if contrib is None:
        raise ContractError("rasterize_backward needs the contrib record "
                            "(run rasterize with retain_contrib=True)")
    n = contrib.n_gaussians
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (contrib.height, contrib.width, 3):
        raise ContractError(
            f"grad_image shape {grad_image.shape} != {(contrib.height, contrib.width, 3)}")

    dcolor_clamped = np.zeros((n, 3))
    dsigma = np.zeros(n)
    for (y0, y1, x0, x1, gidx, ent_i, ent_p, alphas, gfactors, colors) in contrib.tiles:
        dimg = np.ascontiguousarray(grad_image[y0:y1, x0:x1].reshape(-1, 3))
        p_count = (y1 - y0) * (x1 - x0)
        dcol_t = np.zeros((len(gidx), 3))
        dsig_t = np.zeros(len(gidx))
        trans = np.ones(p_count)
        tent = np.empty(len(ent_i))
        suffix = np.empty((p_count, 3))
        _stream_backward(ent_i, ent_p, alphas, gfactors, colors, contrib.background,
                         dimg, contrib.alpha_clip, trans, tent, suffix, dcol_t, dsig_t)
        np.add.at(dcolor_clamped, gidx, dcol_t)
        np.add.at(dsigma, gidx, dsig_t)

    inside = (contrib.colors_raw > 0.0) & (contrib.colors_raw < 1.0)
    dcolors = dcolor_clamped * inside
    dlogits = dsigma * contrib.opacities * (1.0 - contrib.opacities)
    return dcolors, dlogits


def rasterize_node(scene: GaussianScene, K: Intrinsics, E: Extrinsics,
                   colors, opacity_logits,
                   background=(0.0, 0.0, 0.0),
                   cfg: RasterConfig = DEFAULT_CONFIG):
    """Autodiff wrapper: image DiffNode from color/opacity-logit nodes."""
    colors_v = ad.value_of(colors)
    logits_v = ad.value_of(opacity_logits)
    out = rasterize(scene, K, E, colors_override=colors_v,
                    opacity_logits_override=logits_v, background=background,
                    retain_contrib=True, cfg=cfg)
    memo: dict[str, object] = {}

    def grads_for(g):
        # keyed by identity with a strong reference held, so a recycled id
        # can never alias a stale gradient pair
        if memo.get("g") is not g:
            memo["g"] = g
            memo["grads"] = rasterize_backward(g, out.per_pixel_contrib)
        return memo["grads"]

    node = ad.custom(out.image, [
        (colors, lambda g: grads_for(g)[0]),
        (opacity_logits, lambda g: grads_for(g)[1]),
    ])
    return node, out


def render_depth(scene: GaussianScene, K: Intrinsics, E: Extrinsics,
                 alpha_threshold: float = 0.5,
                 cfg: RasterConfig = DEFAULT_CONFIG) -> DepthMap:
    """Depth of the first splat along each ray whose alpha reaches the
    threshold; pixels never reaching it are invalid."""
    h, w = K.height, K.width
    values = np.ones((h, w))
    validity = np.zeros((h, w), dtype=bool)
    if len(scene) == 0:
        return DepthMap(width=w, height=h, values=values, validity=validity)

    colors_raw, logits, proj = _prepare(scene, K, E, None, None, cfg)
    opac = sigmoid(logits)
    sorted_opac = np.ascontiguousarray(opac[proj["idx"]])
    bx0, bx1 = proj["mx"] - proj["rx"], proj["mx"] + proj["rx"]
    by0, by1 = proj["my"] - proj["ry"], proj["my"] + proj["ry"]

    for y0 in range(0, h, cfg.tile):
        y1 = min(y0 + cfg.tile, h)
        for x0 in range(0, w, cfg.tile):
            x1 = min(x0 + cfg.tile, w)
            hit = np.nonzero((bx1 >= x0) & (bx0 <= x1 - 1) & (by1 >= y0) & (by0 <= y1 - 1))[0]
            if len(hit) == 0:
                continue
            ys, xs = np.mgrid[y0:y1, x0:x1]
            px = np.ascontiguousarray(xs.ravel().astype(np.float64))
            py = np.ascontiguousarray(ys.ravel().astype(np.float64))
            alphas, _ = _alpha_matrix(proj, hit, px, py, sorted_opac, cfg.alpha_clip)
            hits = alphas >= alpha_threshold
            any_hit = hits.any(axis=0)
            first = hits.argmax(axis=0)
            tile_depth = proj["depth"][hit][first]
            th, tw = y1 - y0, x1 - x0
            values[y0:y1, x0:x1][any_hit.reshape(th, tw)] = \
                tile_depth[any_hit].reshape(-1)
            validity[y0:y1, x0:x1] = any_hit.reshape(th, tw)
    return DepthMap(width=w, height=h, values=values, validity=validity)
