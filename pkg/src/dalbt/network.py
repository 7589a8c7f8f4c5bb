"""Encoder / projector / classifier network with hand-written backprop.

Images are NHWC float64 arrays. The encoder maps an image to a latent
vector ``z``; the projector maps ``z`` to the embedding used by the Barlow
Twins term; the classifier is a single linear layer on ``z``.

Parameters live in a flat ``name -> array`` mapping so optimizers, gradient
checks and checkpoints can treat them uniformly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, FormatError, NumericError, UsageError
from .losses import softmax

# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Dense:
    units: int
    kind: str = field(default="dense", init=False)


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 3
    padding: int = 1
    kind: str = field(default="conv", init=False)


@dataclass(frozen=True)
class MaxPool:
    size: int = 2
    kind: str = field(default="maxpool", init=False)


@dataclass(frozen=True)
class Flatten:
    kind: str = field(default="flatten", init=False)


@dataclass(frozen=True)
class ReLU:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class Tanh:
    kind: str = field(default="tanh", init=False)


Layer = Union[Dense, Conv, MaxPool, Flatten, ReLU, Tanh]

_LAYER_TYPES = {cls.__dataclass_fields__["kind"].default: cls for cls in (Dense, Conv, MaxPool, Flatten, ReLU, Tanh)}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _LAYER_TYPES:
        raise ConfigurationError(f"unknown layer kind {kind!r}")
    return _LAYER_TYPES[kind](**d)


def _layer_to_dict(layer: Layer) -> dict:
    return asdict(layer) | {"kind": layer.kind}


@dataclass(frozen=True)
class ArchSpec:
    """Network shape.

    ``projector`` lists output widths of the projector's dense layers (ReLU
    between them, linear output). An empty tuple makes the projector the
    identity, so the embedding dimension equals the latent dimension.
    """

    input_shape: tuple  # (H, W, C)
    encoder: tuple
    num_classes: int
    projector: tuple = (128, 128)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "encoder": [_layer_to_dict(layer) for layer in self.encoder],
            "num_classes": self.num_classes,
            "projector": list(self.projector),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            input_shape=tuple(d["input_shape"]),
            encoder=tuple(layer_from_dict(x) for x in d["encoder"]),
            num_classes=int(d["num_classes"]),
            projector=tuple(d["projector"]),
        )


def mlp_encoder(hidden=(128,), latent_dim=32) -> tuple:
    layers: list = [Flatten()]
    for h in hidden:
        layers += [Dense(h), ReLU()]
    layers.append(Dense(latent_dim))
    return tuple(layers)


def conv_encoder(channels=(8, 16), latent_dim=32, kernel=5) -> tuple:
    """Two conv + max-pool blocks and a dense layer to the latent (LeNet-like)."""
    layers: list = []
    for ch in channels:
        layers += [Conv(ch, kernel, kernel // 2), ReLU(), MaxPool(2)]
    layers += [Flatten(), Dense(latent_dim)]
    return tuple(layers)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class NetworkParams:
    arch: ArchSpec
    tensors: dict

    @property
    def latent_dim(self) -> int:
        return self.tensors[f"enc.{_last_dense(self.arch.encoder)}.W"].shape[1]

    @property
    def embedding_dim(self) -> int:
        if not self.arch.projector:
            return self.latent_dim
        return self.arch.projector[-1]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def _last_dense(layers) -> int:
    idx = [i for i, layer in enumerate(layers) if layer.kind in ("dense", "conv")]
    if not idx:
        raise ConfigurationError("encoder needs at least one dense or conv layer")
    if layers[idx[-1]].kind != "dense":
        raise ConfigurationError("encoder must end with a dense layer to produce a latent vector")
    return idx[-1]


def _out_shape(layer: Layer, shape: tuple) -> tuple:
    if layer.kind == "dense":
        if len(shape) != 1:
            raise ConfigurationError(f"dense layer needs a flat input, got shape {shape}; add a flatten layer")
        return (layer.units,)
    if layer.kind == "conv":
        if len(shape) != 3:
            raise ConfigurationError(f"conv layer needs an HxWxC input, got {shape}")
        h, w, _ = shape
        ho = h + 2 * layer.padding - layer.kernel + 1
        wo = w + 2 * layer.padding - layer.kernel + 1
        if ho < 1 or wo < 1:
            raise ConfigurationError(f"conv kernel {layer.kernel} does not fit input {shape}")
        return (ho, wo, layer.out_channels)
    if layer.kind == "maxpool":
        h, w, c = shape
        if h % layer.size or w % layer.size:
            raise ConfigurationError(f"max-pool size {layer.size} does not divide {h}x{w}")
        return (h // layer.size, w // layer.size, c)
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    return shape


def _uniform_init(rng, fan_in, fan_out, shape, he):
    limit = np.sqrt(6.0 / fan_in) if he else np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_stack(rng, layers, in_shape, prefix, tensors):
    shape = tuple(in_shape)
    for i, layer in enumerate(layers):
        nxt = layers[i + 1].kind if i + 1 < len(layers) else None
        he = nxt == "relu"
        if layer.kind == "dense":
            fan_in = shape[0] if len(shape) == 1 else -1
            if fan_in < 0:
                raise ConfigurationError(f"{prefix}.{i}: dense layer needs a flat input, got {shape}")
            tensors[f"{prefix}.{i}.W"] = _uniform_init(rng, fan_in, layer.units, (fan_in, layer.units), he)
            tensors[f"{prefix}.{i}.b"] = np.zeros(layer.units)
        elif layer.kind == "conv":
            cin = shape[2]
            fan_in = cin * layer.kernel**2
            fan_out = layer.out_channels * layer.kernel**2
            tensors[f"{prefix}.{i}.W"] = _uniform_init(
                rng, fan_in, fan_out, (layer.kernel, layer.kernel, cin, layer.out_channels), he
            )
            tensors[f"{prefix}.{i}.b"] = np.zeros(layer.out_channels)
        shape = _out_shape(layer, shape)
    return shape


def projector_layers(arch: ArchSpec) -> tuple:
    layers: list = []
    for i, width in enumerate(arch.projector):
        if i:
            layers.append(ReLU())
        layers.append(Dense(width))
    return tuple(layers)


def init_params(arch: ArchSpec, seed: int) -> NetworkParams:
    """Fan-in scaled uniform weights (He before ReLU, Glorot otherwise), zero biases."""
    if len(arch.input_shape) != 3:
        raise ConfigurationError(f"input_shape must be (H, W, C), got {arch.input_shape}")
    if arch.num_classes < 2:
        raise ConfigurationError("num_classes must be >= 2")
    _last_dense(arch.encoder)
    rng = np.random.default_rng(seed)
    tensors: dict = {}
    latent = _init_stack(rng, arch.encoder, arch.input_shape, "enc", tensors)
    if len(latent) != 1:
        raise ConfigurationError(f"encoder output must be a vector, got shape {latent}")
    _init_stack(rng, projector_layers(arch), latent, "proj", tensors)
    d = latent[0]
    tensors["cls.W"] = _uniform_init(rng, d, arch.num_classes, (d, arch.num_classes), False)
    tensors["cls.b"] = np.zeros(arch.num_classes)
    return NetworkParams(arch, tensors)


# ---------------------------------------------------------------------------
# forward / backward per layer


def _conv_forward(x, w, b, pad):
    k = w.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # N, Ho, Wo, C, k, k
    n, ho, wo, c = win.shape[:4]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
    out = cols @ w.reshape(k * k * c, -1) + b
    return out.reshape(n, ho, wo, -1), (cols, xp.shape)


def _conv_backward(dout, w, cache, pad):
    cols, xp_shape = cache
    k = w.shape[0]
    n, ho, wo, cout = dout.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, k, k, -1)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    if pad:
        dxp = dxp[:, pad:-pad, pad:-pad, :]
    return dxp, dw, db


def _pool_forward(x, s):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // s, s, w // s, s, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // s, w // s, c, s * s)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def _pool_backward(dout, cache, s):
    arg, shape = cache
    n, h, w, c = shape
    blocks = np.zeros((n, h // s, w // s, c, s * s))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    return blocks.reshape(n, h // s, w // s, c, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(shape)


def _stack_forward(tensors, layers, prefix, x, record):
    caches = []
    for i, layer in enumerate(layers):
        kind = layer.kind
        if kind == "dense":
            cache = x
            x = x @ tensors[f"{prefix}.{i}.W"] + tensors[f"{prefix}.{i}.b"]
        elif kind == "conv":
            x, cache = _conv_forward(x, tensors[f"{prefix}.{i}.W"], tensors[f"{prefix}.{i}.b"], layer.padding)
        elif kind == "maxpool":
            x, cache = _pool_forward(x, layer.size)
        elif kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif kind == "relu":
            cache = x > 0
            x = np.where(cache, x, 0.0)
        elif kind == "tanh":
            x = np.tanh(x)
            cache = x
        else:  # pragma: no cover - specs are validated at init
            raise ConfigurationError(f"unknown layer kind {kind!r}")
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite activation after layer {prefix}.{i} ({kind})")
        if record:
            caches.append(cache)
    return x, caches


def _stack_backward(tensors, layers, prefix, caches, dout, grads):
    for i in range(len(layers) - 1, -1, -1):
        layer, cache = layers[i], caches[i]
        kind = layer.kind
        if kind == "dense":
            grads[f"{prefix}.{i}.W"] += cache.T @ dout
            grads[f"{prefix}.{i}.b"] += dout.sum(axis=0)
            dout = dout @ tensors[f"{prefix}.{i}.W"].T
        elif kind == "conv":
            dout, dw, db = _conv_backward(dout, tensors[f"{prefix}.{i}.W"], cache, layer.padding)
            grads[f"{prefix}.{i}.W"] += dw
            grads[f"{prefix}.{i}.b"] += db
        elif kind == "maxpool":
            dout = _pool_backward(dout, cache, layer.size)
        elif kind == "flatten":
            dout = dout.reshape(cache)
        elif kind == "relu":
            dout = np.where(cache, dout, 0.0)
        elif kind == "tanh":
            dout = dout * (1.0 - cache * cache)
    return dout


# ---------------------------------------------------------------------------
# model-level passes


def _as_batch(params: NetworkParams, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != tuple(params.arch.input_shape):
        raise ValueError(f"expected inputs of shape (B, {', '.join(map(str, params.arch.input_shape))}), got {x.shape}")
    return x


def encode(params: NetworkParams, x_batch):
    x = _as_batch(params, x_batch)
    z, _ = _stack_forward(params.tensors, params.arch.encoder, "enc", x, False)
    return z


def project(params: NetworkParams, z_batch):
    z = np.asarray(z_batch, dtype=np.float64)
    p, _ = _stack_forward(params.tensors, projector_layers(params.arch), "proj", z, False)
    return p


def logits(params: NetworkParams, z_batch):
    z = np.asarray(z_batch, dtype=np.float64)
    out = z @ params.tensors["cls.W"] + params.tensors["cls.b"]
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite activation in classifier")
    return out


def classify(params: NetworkParams, z_batch):
    """Softmax class probabilities for latent vectors."""
    return softmax(logits(params, z_batch))


def predict_latents(params: NetworkParams, x, batch_size=512):
    """Latents and class probabilities of undistorted inputs, in chunks."""
    zs, ps = [], []
    for start in range(0, len(x), batch_size):
        z = encode(params, x[start:start + batch_size])
        zs.append(z)
        ps.append(classify(params, z))
    if not zs:
        return np.zeros((0, params.latent_dim)), np.zeros((0, params.arch.num_classes))
    return np.concatenate(zs), np.concatenate(ps)


class Tape:
    """Intermediates recorded by a forward pass, consumed by :func:`backward`."""

    def __init__(self):
        self.complete = False
        self.enc_caches = None
        self.proj_caches = None
        self.latent = None
        self.n_clean = 0
        self.has_views = False


@dataclass
class JointOutput:
    probs: np.ndarray
    logits: np.ndarray
    p1: np.ndarray | None
    p2: np.ndarray | None
    z: np.ndarray
    tape: Tape


def forward_joint(params: NetworkParams, x_batch, view1=None, view2=None, tape: Tape | None = None):
    """Classifier on clean inputs, projector on the two distorted views.

    All three batches go through the same encoder in a single stacked pass
    (there is no batch-coupled layer, so this equals three separate passes).
    When the views are omitted only the classifier path runs.
    """
    x = _as_batch(params, x_batch)
    n = len(x)
    has_views = view1 is not None
    if has_views:
        v1, v2 = _as_batch(params, view1), _as_batch(params, view2)
        if len(v1) != n or len(v2) != n:
            raise ValueError("clean and distorted batches must be aligned")
        stacked = np.concatenate([x, v1, v2])
    else:
        stacked = x
    tape = tape if tape is not None else Tape()
    z_all, tape.enc_caches = _stack_forward(params.tensors, params.arch.encoder, "enc", stacked, True)
    z = z_all[:n]
    lg = logits(params, z)
    p1 = p2 = None
    if has_views:
        p_views, tape.proj_caches = _stack_forward(
            params.tensors, projector_layers(params.arch), "proj", z_all[n:], True
        )
        p1, p2 = p_views[:n], p_views[n:]
    tape.latent, tape.n_clean, tape.has_views, tape.complete = z_all, n, has_views, True
    return JointOutput(softmax(lg), lg, p1, p2, z, tape)


def forward_encoder(params: NetworkParams, x_batch):
    """Encoder-only pass; returns ``(z, tape)`` for gradients w.r.t. ``z``."""
    x = _as_batch(params, x_batch)
    tape = Tape()
    z, tape.enc_caches = _stack_forward(params.tensors, params.arch.encoder, "enc", x, True)
    tape.latent, tape.n_clean, tape.complete = z, len(x), True
    return z, tape


def backward(params: NetworkParams, tape: Tape | None, grad_logits=None, grad_p1=None, grad_p2=None, grad_z=None):
    """Reverse-mode gradients of a scalar loss w.r.t. every parameter.

    ``grad_*`` are the loss gradients w.r.t. the recorded outputs; missing
    ones are treated as zero. Parameters the loss does not reach get exact
    zero gradients.
    """
    if tape is None or not tape.complete:
        raise UsageError("backward called before a completed forward pass")
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    z_all = tape.latent
    n = tape.n_clean
    dz_all = np.zeros_like(z_all)
    if grad_z is not None:
        dz_all[:n] += grad_z
    if grad_logits is not None:
        grads["cls.W"] += z_all[:n].T @ grad_logits
        grads["cls.b"] += grad_logits.sum(axis=0)
        dz_all[:n] += grad_logits @ params.tensors["cls.W"].T
    if tape.has_views and (grad_p1 is not None or grad_p2 is not None):
        dp = np.zeros((2 * n, params.embedding_dim))
        if grad_p1 is not None:
            dp[:n] = grad_p1
        if grad_p2 is not None:
            dp[n:] = grad_p2
        dz_all[n:] += _stack_backward(params.tensors, projector_layers(params.arch), "proj", tape.proj_caches, dp, grads)
    _stack_backward(params.tensors, params.arch.encoder, "enc", tape.enc_caches, dz_all, grads)
    return grads


# ---------------------------------------------------------------------------
# checkpoint file
#
# little-endian layout:
#   8s   magic b"DALBTCKP"
#   u32  format version (1)
#   u32  byte length A of the UTF-8 JSON architecture record, then A bytes
#   u32  tensor count T, then T entries of:
#        u16 name length, name bytes (UTF-8), u8 ndim, ndim x u32 dims,
#        prod(dims) float64 values in C order

CHECKPOINT_MAGIC = b"DALBTCKP"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: NetworkParams, path) -> None:
    arch = json.dumps(params.arch.to_dict(), sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arch)), arch,
             struct.pack("<I", len(params.tensors))]
    for name in sorted(params.tensors):
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> NetworkParams:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, alen = struct.unpack_from("<II", buf, 8)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        off = 16
        arch = ArchSpec.from_dict(json.loads(buf[off:off + alen]))
        off += alen
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape))
            if off + 8 * size > len(buf):
                raise FormatError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    return NetworkParams(arch, tensors)
