"""Fusion regression network mapping (wrist image, wrench) to a corrective action.

Pure numpy: three strided convolutions on the image, a small MLP on the
wrench, concatenation, and a linear five-output head. Activations are NHWC.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ._kernels import col2im_s2
from .errors import EmptyDataset, FormatError, ShapeMismatch

LEAK = 0.1
N_OUT = 5

CONV_CHANNELS = (3, 8, 16, 32)
IMAGE_FC = 64
WRENCH_HIDDEN = (32, 32)
FUSION_HIDDEN = 64

PARAMS_MAGIC = b"INBP"
PARAMS_VERSION = 1


@dataclass
class ModelParams:
    """Named float tensors in declaration order plus the I/O scaling."""

    tensors: dict[str, np.ndarray]
    image_shape: tuple[int, int, int]
    label_scale: np.ndarray
    wrench_scale: np.ndarray

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: v.copy() for k, v in self.tensors.items()},
            self.image_shape,
            self.label_scale.copy(),
            self.wrench_scale.copy(),
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {k: v.astype(dtype) for k, v in self.tensors.items()},
            self.image_shape,
            self.label_scale.copy(),
            self.wrench_scale.copy(),
        )

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def layer_shapes(image_shape: tuple[int, int, int]) -> dict[str, tuple[int, ...]]:
    h, w, c = image_shape
    if c != CONV_CHANNELS[0] or h % 8 or w % 8:
        raise ShapeMismatch(f"unsupported image shape {image_shape}")
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(3):
        cin, cout = CONV_CHANNELS[i], CONV_CHANNELS[i + 1]
        shapes[f"conv{i + 1}.w"] = (3, 3, cin, cout)
        shapes[f"conv{i + 1}.b"] = (cout,)
    flat = (h // 8) * (w // 8) * CONV_CHANNELS[-1]
    shapes["img_fc.w"] = (flat, IMAGE_FC)
    shapes["img_fc.b"] = (IMAGE_FC,)
    shapes["wr_fc1.w"] = (6, WRENCH_HIDDEN[0])
    shapes["wr_fc1.b"] = (WRENCH_HIDDEN[0],)
    shapes["wr_fc2.w"] = WRENCH_HIDDEN
    shapes["wr_fc2.b"] = (WRENCH_HIDDEN[1],)
    shapes["fuse_fc.w"] = (IMAGE_FC + WRENCH_HIDDEN[1], FUSION_HIDDEN)
    shapes["fuse_fc.b"] = (FUSION_HIDDEN,)
    shapes["head.w"] = (FUSION_HIDDEN, N_OUT)
    shapes["head.b"] = (N_OUT,)
    return shapes


def init_params(
    rng: np.random.Generator,
    image_shape=(64, 64, 3),
    label_scale=(0.01, 0.01, np.radians(10), np.radians(10), np.radians(10)),
    wrench_scale=(10.0, 1.0),
) -> ModelParams:
    """He-uniform weights, zero biases, zero head (untrained policy outputs zero)."""
    tensors = {}
    gain = np.sqrt(2.0 / (1.0 + LEAK**2))
    for name, shape in layer_shapes(tuple(image_shape)).items():
        if name.endswith(".b") or name.startswith("head"):
            tensors[name] = np.zeros(shape, np.float32)
            continue
        fan_in = int(np.prod(shape[:-1]))
        bound = gain * np.sqrt(3.0 / fan_in)
        tensors[name] = rng.uniform(-bound, bound, shape).astype(np.float32)
    return ModelParams(
        tensors,
        tuple(image_shape),
        np.asarray(label_scale, np.float32).astype(np.float64),
        np.asarray(wrench_scale, np.float32).astype(np.float64),
    )


# -- layer primitives -------------------------------------------------------


def _leaky(x):
    return np.maximum(x, LEAK * x)


def _leaky_back(g, pre):
    slope = (pre > 0) * g.dtype.type(1.0 - LEAK) + g.dtype.type(LEAK)
    return g * slope


def _im2col(x):
    """3x3, stride 2, zero pad 1 patches of an NHWC batch -> (B, Ho, Wo, 9C)."""
    b, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    xp = np.zeros((b, h + 2, w + 2, c), x.dtype)
    xp[:, 1:-1, 1:-1] = x
    s = xp.strides
    view = as_strided(xp, (b, ho, wo, 3, 3, c), (s[0], 2 * s[1], 2 * s[2], s[1], s[2], s[3]))
    return view.reshape(b, ho, wo, 9 * c)


def _col2im(dcols, shape):
    return col2im_s2(np.ascontiguousarray(dcols), shape[1], shape[2])


def normalize_wrench(p: ModelParams, wrench: np.ndarray) -> np.ndarray:
    wrench = np.asarray(wrench, np.float64)
    scale = np.repeat(p.wrench_scale, 3)
    return wrench / scale


def normalize_label(p: ModelParams, label: np.ndarray) -> np.ndarray:
    return np.asarray(label, np.float64) / p.label_scale


def denormalize_label(p: ModelParams, out: np.ndarray) -> np.ndarray:
    return np.asarray(out, np.float64) * p.label_scale


def _forward(p: ModelParams, images: np.ndarray, wrench_n: np.ndarray, keep: bool):
    t = p.tensors
    dtype = t["head.w"].dtype
    x = images.astype(dtype, copy=False)
    cache = []
    for i in range(1, 4):
        wk = t[f"conv{i}.w"]
        cols = _im2col(x)
        pre = cols @ wk.reshape(-1, wk.shape[-1]) + t[f"conv{i}.b"]
        if keep:
            cache.append((x.shape, cols, pre))
        x = _leaky(pre)
    flat = x.reshape(x.shape[0], -1)
    img_pre = flat @ t["img_fc.w"] + t["img_fc.b"]
    img_h = _leaky(img_pre)
    wr = wrench_n.astype(dtype, copy=False)
    w1_pre = wr @ t["wr_fc1.w"] + t["wr_fc1.b"]
    w1 = _leaky(w1_pre)
    w2_pre = w1 @ t["wr_fc2.w"] + t["wr_fc2.b"]
    w2 = _leaky(w2_pre)
    fused = np.concatenate([img_h, w2], axis=1)
    f_pre = fused @ t["fuse_fc.w"] + t["fuse_fc.b"]
    f_h = _leaky(f_pre)
    out = f_h @ t["head.w"] + t["head.b"]
    if not keep:
        return out, None
    acts = dict(
        conv=cache, flat=flat, x3_shape=x.shape, img_pre=img_pre, img_h=img_h, wr=wr,
        w1_pre=w1_pre, w1=w1, w2_pre=w2_pre, w2=w2, fused=fused, f_pre=f_pre, f_h=f_h,
    )
    return out, acts


def predict_normalized(p: ModelParams, images: np.ndarray, wrenches: np.ndarray) -> np.ndarray:
    """Batched network output in normalized label units."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if tuple(images.shape[1:]) != tuple(p.image_shape):
        raise ShapeMismatch(f"image {images.shape[1:]} != model {p.image_shape}")
    wr = normalize_wrench(p, np.atleast_2d(wrenches))
    out, _ = _forward(p, images, wr, keep=False)
    return out


def forward(p: ModelParams, image: np.ndarray, wrench: np.ndarray) -> np.ndarray:
    """Corrective action (dx, dy, dtheta_x, dtheta_y, dtheta_z) in SI units."""
    out = predict_normalized(p, image, np.asarray(wrench).reshape(1, 6))
    return denormalize_label(p, out[0].astype(np.float64))


def loss_and_grad_normalized(p: ModelParams, images, wrench_n, labels_n):
    """Mean squared L2 error and its gradient, everything in normalized units."""
    b = images.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    t = p.tensors
    out, a = _forward(p, images, wrench_n, keep=True)
    err = out - labels_n.astype(out.dtype)
    loss = float(np.sum(err.astype(np.float64) ** 2) / b)
    g = {}
    d_out = 2.0 * err / b
    g["head.w"] = a["f_h"].T @ d_out
    g["head.b"] = d_out.sum(0)
    d_f = _leaky_back(d_out @ t["head.w"].T, a["f_pre"])
    g["fuse_fc.w"] = a["fused"].T @ d_f
    g["fuse_fc.b"] = d_f.sum(0)
    d_fused = d_f @ t["fuse_fc.w"].T
    d_img_h = d_fused[:, :IMAGE_FC]
    d_w2 = _leaky_back(d_fused[:, IMAGE_FC:], a["w2_pre"])
    g["wr_fc2.w"] = a["w1"].T @ d_w2
    g["wr_fc2.b"] = d_w2.sum(0)
    d_w1 = _leaky_back(d_w2 @ t["wr_fc2.w"].T, a["w1_pre"])
    g["wr_fc1.w"] = a["wr"].T @ d_w1
    g["wr_fc1.b"] = d_w1.sum(0)
    d_img = _leaky_back(d_img_h, a["img_pre"])
    g["img_fc.w"] = a["flat"].T @ d_img
    g["img_fc.b"] = d_img.sum(0)
    dx = (d_img @ t["img_fc.w"].T).reshape(a["x3_shape"])
    for i in range(3, 0, -1):
        x_shape, cols, pre = a["conv"][i - 1]
        wk = t[f"conv{i}.w"]
        d_pre = _leaky_back(dx, pre)
        dp2 = d_pre.reshape(-1, wk.shape[-1])
        g[f"conv{i}.w"] = (cols.reshape(-1, cols.shape[-1]).T @ dp2).reshape(wk.shape)
        g[f"conv{i}.b"] = dp2.sum(0)
        if i > 1:
            dx = _col2im(d_pre @ wk.reshape(-1, wk.shape[-1]).T, x_shape)
    return loss, g


def loss_and_grad(p: ModelParams, images, wrenches, labels):
    """Loss ||delta - D||^2 averaged over the batch, with D given in SI units."""
    images = np.asarray(images)
    return loss_and_grad_normalized(
        p, images, normalize_wrench(p, wrenches), normalize_label(p, labels)
    )


# -- training ---------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 64
    steps: int = 10000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    f_unit: float = 10.0
    m_unit: float = 1.0
    augment: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0:
            raise ValueError("steps and batch_size must be positive")
        if self.f_unit <= 0 or self.m_unit <= 0:
            raise ValueError("wrench scales must be positive")


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            params.tensors[k] -= upd.astype(params.tensors[k].dtype)


def train(data, aug_cfg, cfg: TrainConfig, init: ModelParams | None = None, label_scale=None):
    """Fit the network on ``data`` (a Dataset) with on-the-fly augmentation.

    Batches are drawn with replacement. Returns (params, per-step loss array).
    ``init`` warm-starts from existing params (fine-tuning).
    """
    from .augment import augment_batch

    if len(data.records) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.rng_seed)
    images, wrenches, labels = data.arrays()
    if init is None:
        kwargs = {} if label_scale is None else {"label_scale": label_scale}
        params = init_params(
            rng, image_shape=images.shape[1:], wrench_scale=(cfg.f_unit, cfg.m_unit), **kwargs
        )
    else:
        params = init.copy()
        if tuple(params.image_shape) != tuple(images.shape[1:]):
            raise ShapeMismatch("warm-start params do not match dataset images")
    labels_n = normalize_label(params, labels).astype(np.float32)
    wrench_n = normalize_wrench(params, wrenches).astype(np.float32)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    losses = np.empty(cfg.steps)
    n = len(images)
    for step in range(cfg.steps):
        idx = rng.integers(0, n, cfg.batch_size)
        x, w = images[idx], wrench_n[idx]
        if cfg.augment and aug_cfg is not None:
            x, w = augment_batch(x, w, aug_cfg, rng)
        loss, grads = loss_and_grad_normalized(params, x, w, labels_n[idx])
        opt.step(params, grads)
        losses[step] = loss
    return params, losses


# -- parameter file -----------------------------------------------------------


def save_params(p: ModelParams, path) -> None:
    names = list(layer_shapes(p.image_shape))
    out = bytearray()
    out += PARAMS_MAGIC
    out += struct.pack("<HHHHH", PARAMS_VERSION, *p.image_shape, len(names) + 2)
    for name, arr in _file_tensors(p, names):
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, "<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def _file_tensors(p, names):
    for name in names:
        yield name, p.tensors[name]
    yield "label_scale", p.label_scale.astype(np.float32)
    yield "wrench_scale", p.wrench_scale.astype(np.float32)


def load_params(path) -> ModelParams:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(str(exc)) from exc
    if len(buf) < 14 or buf[:4] != PARAMS_MAGIC:
        raise FormatError("not a parameter file (bad magic)")
    version, h, w, c, n = struct.unpack_from("<HHHHH", buf, 4)
    if version != PARAMS_VERSION:
        raise FormatError(f"unsupported parameter file version {version}")
    pos = 14
    tensors = {}
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            try:
                name = buf[pos : pos + ln].decode()
            except UnicodeDecodeError as exc:
                raise FormatError("corrupt tensor name") from exc
            pos += ln
            (nd,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{nd}I", buf, pos)
            pos += 4 * nd
            size = int(np.prod(shape)) * 4
            if pos + size > len(buf):
                raise FormatError("truncated parameter file")
            tensors[name] = np.frombuffer(buf, "<f4", int(np.prod(shape)), pos).reshape(shape).astype(np.float32)
            pos += size
    except struct.error as exc:
        raise FormatError("truncated parameter file") from exc
    if pos != len(buf):
        raise FormatError("trailing bytes in parameter file")
    expected = layer_shapes((h, w, c))
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != shape:
            raise FormatError(f"tensor {name} missing or misshapen")
    label_scale = tensors.pop("label_scale").astype(np.float64)
    wrench_scale = tensors.pop("wrench_scale").astype(np.float64)
    ordered = {name: tensors[name] for name in expected}
    return ModelParams(ordered, (h, w, c), label_scale, wrench_scale)
