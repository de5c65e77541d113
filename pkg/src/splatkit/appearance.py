"""Light encoder and appearance adapter.

The encoder maps an image to a 16-dim light code: four 3x3 stride-2 conv
layers (channels 8, 16, 32, 64) with tanh, global average pooling, then a
64 -> 32 -> 16 head with a linear output. The adapter is a five-layer MLP
91 -> 256 -> 512 -> 512 -> 256 -> 75 applied per Gaussian to the
concatenation [light code; canonical SH row], tanh between layers, linear
output. Weight sharing across rows makes the adapter permutation
equivariant over Gaussians.

Both forwards are written once over autodiff ops: passing plain arrays
returns plain arrays on the identical arithmetic, passing DiffNodes joins
the training tape. `adapt_colors_fast` is the chunked inference variant;
at float64 it reproduces `adapt_colors` bit-exactly, at float32 it trades
~1e-7 relative error for the throughput bulk renders need.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, NumericError, ShapeError
from .imgio import resize_bilinear

ENCODER_INPUT = 64
ENCODER_CHANNELS = (8, 16, 32, 64)
HEAD_DIMS = (64, 32, 16)
ADAPTER_DIMS = (91, 256, 512, 512, 256, 75)
CODE_DIM = 16


def _glorot(rng, fan_in, fan_out, shape, scale=1.0):
    a = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


@dataclass
class EncoderParams:
    conv_w: list
    conv_b: list
    head_w: list
    head_b: list

    def named(self, prefix="enc."):
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"{prefix}conv{i}.w"] = w
            out[f"{prefix}conv{i}.b"] = b
        for i, (w, b) in enumerate(zip(self.head_w, self.head_b)):
            out[f"{prefix}head{i}.w"] = w
            out[f"{prefix}head{i}.b"] = b
        return out

    @classmethod
    def from_named(cls, tensors, prefix="enc."):
        conv_w = [tensors[f"{prefix}conv{i}.w"] for i in range(len(ENCODER_CHANNELS))]
        conv_b = [tensors[f"{prefix}conv{i}.b"] for i in range(len(ENCODER_CHANNELS))]
        head_w = [tensors[f"{prefix}head{i}.w"] for i in range(len(HEAD_DIMS) - 1)]
        head_b = [tensors[f"{prefix}head{i}.b"] for i in range(len(HEAD_DIMS) - 1)]
        return cls(conv_w, conv_b, head_w, head_b)

    def map(self, fn):
        return EncoderParams([fn(w) for w in self.conv_w], [fn(b) for b in self.conv_b],
                             [fn(w) for w in self.head_w], [fn(b) for b in self.head_b])


@dataclass
class AdapterParams:
    ws: list
    bs: list

    def named(self, prefix="adp."):
        out = {}
        for i, (w, b) in enumerate(zip(self.ws, self.bs)):
            out[f"{prefix}layer{i}.w"] = w
            out[f"{prefix}layer{i}.b"] = b
        return out

    @classmethod
    def from_named(cls, tensors, prefix="adp."):
        n = len(ADAPTER_DIMS) - 1
        return cls([tensors[f"{prefix}layer{i}.w"] for i in range(n)],
                   [tensors[f"{prefix}layer{i}.b"] for i in range(n)])

    def map(self, fn):
        return AdapterParams([fn(w) for w in self.ws], [fn(b) for b in self.bs])


def init_encoder_params(rng) -> EncoderParams:
    conv_w, conv_b = [], []
    in_ch = 3
    for out_ch in ENCODER_CHANNELS:
        conv_w.append(_glorot(rng, in_ch * 9, out_ch * 9, (out_ch, in_ch, 3, 3)))
        conv_b.append(np.zeros(out_ch))
        in_ch = out_ch
    head_w = [_glorot(rng, a, b, (a, b)) for a, b in zip(HEAD_DIMS, HEAD_DIMS[1:])]
    head_b = [np.zeros(b) for b in HEAD_DIMS[1:]]
    return EncoderParams(conv_w, conv_b, head_w, head_b)


def init_adapter_params(rng) -> AdapterParams:
    ws, bs = [], []
    n = len(ADAPTER_DIMS) - 1
    for i, (a, b) in enumerate(zip(ADAPTER_DIMS, ADAPTER_DIMS[1:])):
        # final layer at 1/10 scale keeps early renders near mid-gray
        ws.append(_glorot(rng, a, b, (a, b), scale=0.1 if i == n - 1 else 1.0))
        bs.append(np.zeros(b))
    return AdapterParams(ws, bs)


def params_all_zero(*param_sets) -> bool:
    for ps in param_sets:
        for arr in ps.named().values():
            if np.any(ad.value_of(arr) != 0.0):
                return False
    return True


def encode_light(image: np.ndarray, params: EncoderParams):
    """Image (H,W,3) in [0,1] -> 16-dim light code.

    The image is bilinearly resized to 64x64 first. Plain-array params
    give a plain (16,) array; DiffNode params join the tape.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"image must be (H,W,3), got {img.shape}")
    if not np.isfinite(img).all():
        raise NumericError("image contains non-finite pixels")
    img = resize_bilinear(img, ENCODER_INPUT, ENCODER_INPUT)
    h = np.ascontiguousarray(img.transpose(2, 0, 1))

    for w, b in zip(params.conv_w, params.conv_b):
        out_ch = ad.value_of(b).shape[0]
        h = ad.tanh(ad.add(ad.conv2d(h, w, 2), ad.reshape(b, (out_ch, 1, 1))))

    spatial = ad.value_of(h).shape[1] * ad.value_of(h).shape[2]
    pooled = ad.reshape(ad.matmul(ad.reshape(h, (HEAD_DIMS[0], spatial)),
                                  np.full((spatial, 1), 1.0 / spatial)), (1, HEAD_DIMS[0]))
    hid = ad.tanh(ad.add(ad.matmul(pooled, params.head_w[0]), params.head_b[0]))
    code = ad.add(ad.matmul(hid, params.head_w[1]), params.head_b[1])
    return ad.reshape(code, (CODE_DIM,))


def adapt_colors(canonical_sh, code, params: AdapterParams, residual: bool = False):
    """Per-Gaussian SH transform conditioned on a light code.

    canonical_sh is (N,75), code is (16,); each row passes through the
    shared MLP on [code; row], so the output is equivariant to row
    permutations. With `residual` the MLP output is added to the
    canonical coefficients instead of replacing them.
    """
    can_v = ad.value_of(canonical_sh)
    if can_v.ndim != 2 or can_v.shape[1] != ADAPTER_DIMS[-1]:
        raise ContractError(f"canonical_sh must be (N,{ADAPTER_DIMS[-1]}), got {can_v.shape}")
    code_v = ad.value_of(code)
    if code_v.shape != (CODE_DIM,):
        raise ContractError(f"light code must be ({CODE_DIM},), got {code_v.shape}")
    n = can_v.shape[0]

    h = ad.concat([ad.tile_rows(code, n), canonical_sh], axis=1)
    last = len(params.ws) - 1
    for i, (w, b) in enumerate(zip(params.ws, params.bs)):
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.tanh(h)
    if residual:
        h = ad.add(canonical_sh, h)
    return h


_chunk_buffers = threading.local()


def _layer_buffers(dtype, chunk):
    """Reused per-thread chunk buffers; fresh allocations at these sizes
    are page-fault bound and would dominate the GEMMs."""
    key = (np.dtype(dtype).str, chunk)
    cache = getattr(_chunk_buffers, "cache", None)
    if cache is None:
        cache = {}
        _chunk_buffers.cache = cache
    if key not in cache:
        block = np.empty((chunk, ADAPTER_DIMS[0]), dtype=dtype)
        bufs = [np.empty((chunk, w), dtype=dtype) for w in ADAPTER_DIMS[1:]]
        cache[key] = (block, bufs)
    return cache[key]


def adapt_colors_fast(canonical_sh: np.ndarray, code: np.ndarray, params: AdapterParams,
                      residual: bool = False, dtype=np.float32,
                      chunk: int = 65536) -> np.ndarray:
    """Chunked inference-only adapter forward with reused buffers.

    At float64 on a single chunk this reproduces adapt_colors bit-exactly
    (same GEMM, bias add, and tanh in the same order); float32 is the
    bulk default for render-time throughput. Always returns float64.
    """
    can = np.asarray(canonical_sh, dtype=np.float64)
    if can.ndim != 2 or can.shape[1] != ADAPTER_DIMS[-1]:
        raise ContractError(f"canonical_sh must be (N,{ADAPTER_DIMS[-1]}), got {can.shape}")
    code = np.asarray(code, dtype=np.float64).reshape(CODE_DIM)
    ws = [np.ascontiguousarray(w, dtype=dtype) for w in params.ws]
    bs = [np.ascontiguousarray(b, dtype=dtype) for b in params.bs]
    n = can.shape[0]
    out = np.empty((n, ADAPTER_DIMS[-1]))
    last = len(ws) - 1
    block, bufs = _layer_buffers(dtype, chunk)
    code_cast = code.astype(dtype)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        m = hi - lo
        blk = block[:m]
        blk[:, :CODE_DIM] = code_cast
        blk[:, CODE_DIM:] = can[lo:hi]
        h = blk
        for i, (w, b) in enumerate(zip(ws, bs)):
            target = bufs[i][:m]
            np.matmul(h, w, out=target)
            np.add(target, b, out=target)
            if i < last:
                np.tanh(target, out=target)
            h = target
        out[lo:hi] = h
    if residual:
        out += can
    return out


def adapt_scene(scene, reference_image, enc_params: EncoderParams, adp_params: AdapterParams,
                residual: bool = False, precision: str = "f32"):
    """Scene with SH replaced by the adapter output for the reference lighting."""
    if params_all_zero(enc_params, adp_params):
        warnings.warn("appearance parameters are all zero; rendering untrained output")
    code = ad.value_of(encode_light(reference_image, enc_params))
    dtype = np.float64 if precision == "f64" else np.float32
    adapted = adapt_colors_fast(scene.sh, code, adp_params, residual=residual, dtype=dtype)
    return scene.with_sh(adapted)


def transfer_lighting(scene, reference_image, enc_params: EncoderParams,
                      adp_params: AdapterParams, K, E, background=(0.0, 0.0, 0.0),
                      residual: bool = False, precision: str = "f32", cfg=None):
    """Render `scene` under the illumination extracted from `reference_image`.

    The reference may come from any scene; only colors change with it,
    never geometry, so the output alpha map is independent of the
    reference.
    """
    from .renderer import DEFAULT_CONFIG, rasterize

    adapted = adapt_scene(scene, reference_image, enc_params, adp_params,
                          residual=residual, precision=precision)
    return rasterize(adapted, K, E, background=background,
                     cfg=cfg if cfg is not None else DEFAULT_CONFIG)
