"""Lightweight windowed-attention SR model.

Architecture: shallow 3x3 conv into d channels; N residual blocks, each of L
transformer layers (window attention alternating unshifted/shifted) plus a
3x3 conv and a residual connection; a global residual from the shallow
features; and a one-step sub-pixel reconstruction head (conv d -> 3*s^2,
depth-to-space).  The lw preset (N=4, L=6, d=60, 6 heads, window 8, shift 4)
lands at ~0.897M parameters for s=4.

Inputs of any size are accepted: features are reflect-padded to window
multiples and the upscaled output is cropped back.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .tensor import TensorF

# channel means of the DIV2K training images (conventional normalization)
RGB_MEAN = np.array([0.4488, 0.4371, 0.4040], dtype=np.float64)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_rstb: int = 4
    stl_per_rstb: int = 6
    embed_dim: int = 60
    num_heads: int = 6
    window_size: int = 8
    shift_size: int = 4
    sr_factor: int = 4
    mlp_ratio: float = 2.0

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ModelError("embed_dim must be divisible by num_heads")
        if self.shift_size != self.window_size // 2:
            raise ModelError("shift_size must equal window_size // 2")
        if self.sr_factor < 1:
            raise ModelError("sr_factor must be >= 1")

    @classmethod
    def lw(cls, sr_factor: int = 4) -> "ModelConfig":
        return cls(4, 6, 60, 6, 8, 4, sr_factor)

    @classmethod
    def micro(cls, sr_factor: int = 2) -> "ModelConfig":
        return cls(1, 2, 8, 2, 4, 2, sr_factor)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = config.embed_dim
    w = config.window_size
    hidden = int(d * config.mlp_ratio)
    shapes: dict[str, tuple[int, ...]] = {
        "conv_first.weight": (d, 3, 3, 3),
        "conv_first.bias": (d,),
    }
    for i in range(config.num_rstb):
        for j in range(config.stl_per_rstb):
            p = f"rstb{i}.stl{j}"
            shapes[f"{p}.norm1.gamma"] = (d,)
            shapes[f"{p}.norm1.beta"] = (d,)
            shapes[f"{p}.attn.qkv.weight"] = (3 * d, d)
            shapes[f"{p}.attn.qkv.bias"] = (3 * d,)
            shapes[f"{p}.attn.proj.weight"] = (d, d)
            shapes[f"{p}.attn.proj.bias"] = (d,)
            shapes[f"{p}.attn.rpb"] = ((2 * w - 1) ** 2, config.num_heads)
            shapes[f"{p}.norm2.gamma"] = (d,)
            shapes[f"{p}.norm2.beta"] = (d,)
            shapes[f"{p}.mlp.fc1.weight"] = (hidden, d)
            shapes[f"{p}.mlp.fc1.bias"] = (hidden,)
            shapes[f"{p}.mlp.fc2.weight"] = (d, hidden)
            shapes[f"{p}.mlp.fc2.bias"] = (d,)
        shapes[f"rstb{i}.conv.weight"] = (d, d, 3, 3)
        shapes[f"rstb{i}.conv.bias"] = (d,)
    shapes["recon.weight"] = (3 * config.sr_factor**2, d, 3, 3)
    shapes["recon.bias"] = (3 * config.sr_factor**2,)
    return shapes


def count_params(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def _trunc_normal(rng: np.random.Generator, shape, std=0.02, dtype=np.float32):
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def init_params(
    config: ModelConfig, rng: np.random.Generator, dtype=np.float32
) -> dict[str, TensorF]:
    """Truncated-normal weights, zero biases/betas, unit gammas; seeded."""
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias") or name.endswith(".beta"):
            data = np.zeros(shape, dtype=dtype)
        elif name.endswith(".gamma"):
            data = np.ones(shape, dtype=dtype)
        else:
            data = _trunc_normal(rng, shape, dtype=dtype)
        params[name] = TensorF(data, requires_grad=True)
    return params


def _rpb_index(win: int) -> np.ndarray:
    """Pairwise relative-offset index into the (2w-1)^2 bias table."""
    coords = np.stack(np.meshgrid(np.arange(win), np.arange(win), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]  # 2, n, n
    return (rel[0] + win - 1) * (2 * win - 1) + (rel[1] + win - 1)


def _attn_mask(H: int, W: int, win: int, shift: int) -> np.ndarray:
    """Additive mask blocking cross-boundary attention in shifted windows."""
    region = np.zeros((H, W), dtype=np.int64)
    cnt = 0
    for ys in (slice(0, -win), slice(-win, -shift), slice(-shift, None)):
        for xs in (slice(0, -win), slice(-win, -shift), slice(-shift, None)):
            region[ys, xs] = cnt
            cnt += 1
    tiles = region.reshape(H // win, win, W // win, win).transpose(0, 2, 1, 3)
    m = tiles.reshape(-1, win * win)
    diff = m[:, None, :] != m[:, :, None]
    return np.where(diff, -1e9, 0.0)  # [nW, n, n]


def w_mhsa(
    x_windows: TensorF,
    params: dict[str, TensorF],
    prefix: str,
    config: ModelConfig,
    mask: np.ndarray | None = None,
) -> TensorF:
    """Per-window multi-head self-attention with relative position bias."""
    nw, n, d = x_windows.shape
    heads = config.num_heads
    dh = d // heads
    qkv = T.linear(x_windows, params[f"{prefix}.qkv.weight"], params[f"{prefix}.qkv.bias"])
    qkv = T.reshape(qkv, (nw, n, 3, heads, dh))
    qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # [3, nw, heads, n, dh]
    q = T.index_axis0(qkv, 0)
    k = T.index_axis0(qkv, 1)
    v = T.index_axis0(qkv, 2)
    scale = 1.0 / np.sqrt(dh)
    attn = T.matmul(q * scale, T.transpose(k, (0, 1, 3, 2)))  # [nw, heads, n, n]
    idx = _rpb_index(config.window_size)
    rpb = params[f"{prefix}.rpb"]
    if n != idx.shape[0]:
        raise ModelError("window token count does not match config window size")
    bias = T.transpose(
        T.reshape(_gather_rows(rpb, idx.reshape(-1)), (n, n, heads)), (2, 0, 1)
    )
    attn = attn + T.reshape(bias, (1, heads, n, n))
    if mask is not None:
        nW = mask.shape[0]
        if nw % nW:
            raise ModelError("mask shape does not match window count")
        attn = T.reshape(attn, (nw // nW, nW, heads, n, n))
        attn = attn + TensorF(mask[None, :, None].astype(attn.dtype))
        attn = T.reshape(attn, (nw, heads, n, n))
    attn = T.softmax_lastdim(attn)
    out = T.matmul(attn, v)  # [nw, heads, n, dh]
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (nw, n, d))
    return T.linear(out, params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"])


def _gather_rows(table: TensorF, idx: np.ndarray) -> TensorF:
    """Differentiable row gather from a 2-D table."""
    out = TensorF(table.data[idx])

    def bwd(g):
        dt = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(dt, idx, g)
        return (dt,)

    return T._record(out, (table,), bwd)


def stl_forward(
    x: TensorF,
    params: dict[str, TensorF],
    prefix: str,
    config: ModelConfig,
    shifted: bool,
) -> TensorF:
    """One transformer layer: attention and MLP blocks, each pre-normed."""
    B, H, W, d = x.shape
    win = config.window_size
    shift = config.shift_size
    if H % win or W % win:
        raise ModelError(f"feature map {H}x{W} not padded to window multiple {win}")
    y = T.layer_norm(x, params[f"{prefix}.norm1.gamma"], params[f"{prefix}.norm1.beta"])
    mask = None
    if shifted and shift > 0:
        y = T.cyclic_shift(y, -shift, -shift)
        mask = _attn_mask(H, W, win, shift)
    windows = T.window_partition(y, win)
    windows = w_mhsa(windows, params, f"{prefix}.attn", config, mask)
    y = T.window_merge(windows, win, H, W)
    if shifted and shift > 0:
        y = T.cyclic_shift(y, shift, shift)
    x = x + y
    z = T.layer_norm(x, params[f"{prefix}.norm2.gamma"], params[f"{prefix}.norm2.beta"])
    z = T.linear(z, params[f"{prefix}.mlp.fc1.weight"], params[f"{prefix}.mlp.fc1.bias"])
    z = T.gelu(z)
    z = T.linear(z, params[f"{prefix}.mlp.fc2.weight"], params[f"{prefix}.mlp.fc2.bias"])
    return x + z


def _nhwc(x: TensorF) -> TensorF:
    return T.transpose(x, (0, 2, 3, 1))


def _nchw(x: TensorF) -> TensorF:
    return T.transpose(x, (0, 3, 1, 2))


def rstb_forward(
    x: TensorF, params: dict[str, TensorF], prefix: str, config: ModelConfig
) -> TensorF:
    """L transformer layers (alternating shift, starting unshifted) + conv, residual."""
    y = x
    for j in range(config.stl_per_rstb):
        y = stl_forward(y, params, f"{prefix}.stl{j}", config, shifted=(j % 2 == 1))
    y = _nhwc(T.conv2d(_nchw(y), params[f"{prefix}.conv.weight"], params[f"{prefix}.conv.bias"]))
    return x + y


def forward(params: dict[str, TensorF], config: ModelConfig, lr) -> TensorF:
    """SR forward pass; lr is an (h, w, 3) uint8 image or a [1,3,h,w] TensorF in [0,1].

    Returns a [1, 3, s*h, s*w] tensor in [0, 1] (unclamped).
    """
    if isinstance(lr, np.ndarray) and lr.dtype == np.uint8:
        x = TensorF((lr.astype(np.float32) / 255.0).transpose(2, 0, 1)[None])
    elif isinstance(lr, TensorF):
        x = lr
    else:
        raise ModelError("lr must be a uint8 image or TensorF")
    _, C, h, w = x.shape
    if C != 3:
        raise ModelError("expected 3 input channels")
    mean = TensorF(RGB_MEAN.reshape(1, 3, 1, 1).astype(x.dtype))
    x = x - mean
    win = config.window_size
    pad_b = (win - h % win) % win
    pad_r = (win - w % win) % win
    if pad_b or pad_r:
        x = _nchw(T.pad_reflect_hw(_nhwc(x), (0, pad_b, 0, pad_r)))
    shallow = T.conv2d(x, params["conv_first.weight"], params["conv_first.bias"])
    feat = _nhwc(shallow)
    for i in range(config.num_rstb):
        feat = rstb_forward(feat, params, f"rstb{i}", config)
    deep = _nchw(feat) + shallow
    out = T.conv2d(deep, params["recon.weight"], params["recon.bias"])
    out = T.pixel_shuffle(out, config.sr_factor)
    out = out + mean
    s = config.sr_factor
    if pad_b or pad_r:
        out = T.crop_hw(out, 0, 0, s * h, s * w, axes=(2, 3))
    return out


def upscale_image(params: dict[str, TensorF], config: ModelConfig, lr: np.ndarray) -> np.ndarray:
    """Run the model on a uint8 image and return the uint8 SR output."""
    from .image import u8_round

    out = forward(params, config, lr)
    arr = out.data[0].transpose(1, 2, 0) * 255.0
    return u8_round(arr)


# ---------------------------------------------------------------------------
# checkpoint I/O

_MAGIC = b"MSTSRCK\x00"
_VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(IOError):
    pass


def save_checkpoint(params: dict[str, TensorF], config: ModelConfig, path: str) -> None:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        t = params[name]
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", _DTYPE_CODES[t.dtype], t.data.ndim))
        for dim in t.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(t.data).astype(t.dtype).tobytes(order="C"))
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path: str):
    """Read (params, config); validates names/shapes against the stored config."""
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)

    def need(n):
        b = buf.read(n)
        if len(b) != n:
            raise CheckpointError(f"{path}: truncated checkpoint")
        return b

    if need(len(_MAGIC)) != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", need(4))
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (cfg_len,) = struct.unpack("<I", need(4))
    config = ModelConfig.from_dict(json.loads(need(cfg_len)))
    (count,) = struct.unpack("<I", need(4))
    params: dict[str, TensorF] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", need(2))
        name = need(nlen).decode()
        code, ndim = struct.unpack("<BB", need(2))
        shape = tuple(struct.unpack("<I", need(4))[0] for _ in range(ndim))
        dtype = np.dtype(_DTYPES[code])
        raw = need(int(np.prod(shape)) * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        params[name] = TensorF(arr, requires_grad=True)
    expected = param_shapes(config)
    for name in sorted(expected):
        if name not in params:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if params[name].shape != expected[name]:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: "
                f"{params[name].shape} vs {expected[name]}"
            )
    extra = set(params) - set(expected)
    if extra:
        raise CheckpointError(f"{path}: unexpected parameter {sorted(extra)[0]}")
    return params, config


def transfer_trunk(
    src_params: dict[str, TensorF], dst_config: ModelConfig, rng: np.random.Generator
) -> dict[str, TensorF]:
    """Copy all shape-compatible parameters (the trunk) into a fresh ParamSet.

    Reconstruction-head tensors whose shapes differ (e.g. 2x -> 4x transfer)
    are freshly initialized.
    """
    dst = init_params(dst_config, rng)
    for name, t in dst.items():
        if name in src_params and src_params[name].shape == t.shape:
            t.data = src_params[name].data.astype(t.dtype).copy()
    return dst
