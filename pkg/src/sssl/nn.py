"""Minimal differentiable network with hand-written backpropagation.

Layer kinds: conv2d (valid, no padding), maxpool, dense, relu, dropout
(inverted scaling), flatten. The forward pass ends in a dense layer
producing logits; ``forward`` returns softmax probabilities plus a cache
sufficient for ``backward``. Heavy conv/pool arithmetic is delegated to
the selected kernel backend (compiled extension or numpy fallback).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonFiniteError, ShapeError
from .rng import RngState

CE_EPS = 1e-12
MODEL_MAGIC = b"SSSL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    out_dim: int = 0
    rate: float = 0.0


def conv(out_channels: int, kernel: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv", out_channels=out_channels, kernel=kernel, stride=stride)


def maxpool(kernel: int) -> LayerSpec:
    return LayerSpec("maxpool", kernel=kernel)


def dense(out_dim: int) -> LayerSpec:
    return LayerSpec("dense", out_dim=out_dim)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def dropout(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple
    input_shape: tuple
    class_count: int

    def __post_init__(self):
        shapes = self.layer_shapes()
        if shapes[-1] != (self.class_count,):
            raise ShapeError(
                f"network output shape {shapes[-1]} does not match class_count {self.class_count}"
            )
        if self.layers[-1].kind != "dense":
            raise ShapeError("final layer must be dense (produces the logits)")

    def layer_shapes(self) -> list:
        """Per-layer output shapes (excluding batch), input first."""
        shape = tuple(self.input_shape)
        shapes = [shape]
        for i, spec in enumerate(self.layers):
            if spec.kind == "conv":
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: conv needs (C,H,W) input, got {shape}")
                c, h, w = shape
                k, s = spec.kernel, spec.stride
                if h < k or w < k:
                    raise ShapeError(f"layer {i}: conv kernel {k} exceeds input {shape}")
                shape = (spec.out_channels, (h - k) // s + 1, (w - k) // s + 1)
            elif spec.kind == "maxpool":
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: maxpool needs (C,H,W) input, got {shape}")
                c, h, w = shape
                if h < spec.kernel or w < spec.kernel:
                    raise ShapeError(f"layer {i}: pool kernel {spec.kernel} exceeds input {shape}")
                shape = (c, h // spec.kernel, w // spec.kernel)
            elif spec.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif spec.kind == "dense":
                if len(shape) != 1:
                    raise ShapeError(f"layer {i}: dense needs flat input, got {shape}")
                shape = (spec.out_dim,)
            elif spec.kind in ("relu", "dropout"):
                pass
            else:
                raise ShapeError(f"layer {i}: unknown layer kind '{spec.kind}'")
            shapes.append(shape)
        return shapes

    def has_dropout(self) -> bool:
        return any(s.kind == "dropout" and s.rate > 0 for s in self.layers)

    def to_json(self) -> str:
        return json.dumps(
            {
                "input_shape": list(self.input_shape),
                "class_count": self.class_count,
                "layers": [
                    {k: v for k, v in vars(s).items() if v not in (0, 0.0) or k == "kind"}
                    for s in self.layers
                ],
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "NetworkConfig":
        d = json.loads(text)
        layers = tuple(LayerSpec(**spec) for spec in d["layers"])
        return NetworkConfig(layers=layers, input_shape=tuple(d["input_shape"]), class_count=d["class_count"])


def conv_backbone(input_shape, class_count: int, dropout_rate: float = 0.3) -> NetworkConfig:
    """Default small conv stack for spectrogram inputs."""
    layers = (
        conv(8, 3),
        relu(),
        maxpool(2),
        conv(16, 3),
        relu(),
        maxpool(2),
        flatten(),
        dropout(dropout_rate),
        dense(64),
        relu(),
        dropout(dropout_rate),
        dense(class_count),
    )
    return NetworkConfig(layers=layers, input_shape=tuple(input_shape), class_count=class_count)


def mlp_backbone(input_dim: int, class_count: int, hidden: int = 64, dropout_rate: float = 0.3) -> NetworkConfig:
    """Dense net for vector features (synthetic feature corpora)."""
    layers = (
        dense(hidden),
        relu(),
        dropout(dropout_rate),
        dense(class_count),
    )
    return NetworkConfig(layers=layers, input_shape=(input_dim,), class_count=class_count)


def default_backbone(input_shape, class_count: int, dropout_rate: float = 0.3) -> NetworkConfig:
    if len(input_shape) == 1:
        return mlp_backbone(input_shape[0], class_count, dropout_rate=dropout_rate)
    return conv_backbone(input_shape, class_count, dropout_rate=dropout_rate)


@dataclass
class ModelParams:
    tensors: list  # weight, bias per parameterized layer, in layer order

    def copy(self) -> "ModelParams":
        return ModelParams([t.copy() for t in self.tensors])

    def n_params(self) -> int:
        return int(sum(t.size for t in self.tensors))


def init_params(cfg: NetworkConfig, rng: RngState) -> ModelParams:
    """He-uniform weights, zero biases."""
    tensors = []
    shapes = cfg.layer_shapes()
    for i, spec in enumerate(cfg.layers):
        in_shape = shapes[i]
        if spec.kind == "conv":
            c = in_shape[0]
            fan_in = c * spec.kernel * spec.kernel
            limit = np.sqrt(6.0 / fan_in)
            w = (rng.uniform((spec.out_channels, c, spec.kernel, spec.kernel)) * 2 - 1) * limit
            tensors.append(w)
            tensors.append(np.zeros(spec.out_channels))
        elif spec.kind == "dense":
            fan_in = in_shape[0]
            limit = np.sqrt(6.0 / fan_in)
            w = (rng.uniform((fan_in, spec.out_dim)) * 2 - 1) * limit
            tensors.append(w)
            tensors.append(np.zeros(spec.out_dim))
    return ModelParams(tensors=tensors)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class ForwardCache:
    layer_caches: list
    logits: np.ndarray
    probs: np.ndarray
    batch_shape: tuple


def forward(
    params: ModelParams,
    cfg: NetworkConfig,
    batch: np.ndarray,
    dropout_on: bool = False,
    rng: RngState | None = None,
):
    """Run the network; returns (probs, cache).

    Dropout masks are sampled from ``rng`` only when ``dropout_on`` and
    the layer rate is positive (inverted dropout: kept units are scaled
    by 1/(1-rate) so inference needs no rescaling).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1:] != tuple(cfg.input_shape):
        raise ShapeError(f"batch shape {batch.shape[1:]} does not match input shape {cfg.input_shape}")
    x = batch
    caches = []
    t = 0  # index into params.tensors
    for spec in cfg.layers:
        if spec.kind == "conv":
            w, b = params.tensors[t], params.tensors[t + 1]
            t += 2
            y = kernels.conv2d_forward(x, w, b, spec.stride)
            caches.append(("conv", x, w, spec.stride))
            x = y
        elif spec.kind == "maxpool":
            y, idx = kernels.maxpool_forward(x, spec.kernel)
            caches.append(("maxpool", idx, x.shape, spec.kernel))
            x = y
        elif spec.kind == "flatten":
            caches.append(("flatten", x.shape))
            x = x.reshape(x.shape[0], -1)
        elif spec.kind == "dense":
            w, b = params.tensors[t], params.tensors[t + 1]
            t += 2
            caches.append(("dense", x, w))
            x = x @ w + b
        elif spec.kind == "relu":
            mask = x > 0
            caches.append(("relu", mask))
            x = x * mask
        elif spec.kind == "dropout":
            if dropout_on and spec.rate > 0:
                if rng is None:
                    raise ValueError("dropout_on requires an RngState")
                keep = 1.0 - spec.rate
                mask = (rng.uniform(x.shape) < keep) / keep
                caches.append(("dropout", mask))
                x = x * mask
            else:
                caches.append(("dropout", None))
    logits = x
    probs = softmax(logits)
    cache = ForwardCache(layer_caches=caches, logits=logits, probs=probs, batch_shape=batch.shape)
    return probs, cache


def backward(params: ModelParams, cfg: NetworkConfig, cache: ForwardCache, dlogits: np.ndarray) -> ModelParams:
    """Backpropagate d(loss)/d(logits) to parameter gradients.

    ``dlogits`` is the gradient of the scalar loss with respect to the
    final dense layer's output; for mean cross-entropy after softmax
    this is (probs - targets) / batch_size.
    """
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.logits.shape:
        raise ShapeError(f"dlogits shape {dlogits.shape} does not match logits {cache.logits.shape}")
    if len(cache.layer_caches) != len(cfg.layers):
        raise ShapeError("cache does not match network config (stale cache?)")
    grads = [np.zeros_like(p) for p in params.tensors]
    dy = dlogits
    t = len(params.tensors)
    for spec, lc in zip(reversed(cfg.layers), reversed(cache.layer_caches)):
        if spec.kind == "conv":
            _, x, w, stride = lc
            t -= 2
            dx, dw, db = kernels.conv2d_backward(x, w, stride, dy)
            grads[t] = dw
            grads[t + 1] = db
            dy = dx
        elif spec.kind == "maxpool":
            _, idx, x_shape, k = lc
            dy = kernels.maxpool_backward(dy, idx, x_shape, k)
        elif spec.kind == "flatten":
            dy = dy.reshape(lc[1])
        elif spec.kind == "dense":
            _, x, w = lc
            t -= 2
            grads[t] = x.T @ dy
            grads[t + 1] = dy.sum(axis=0)
            dy = dy @ w.T
        elif spec.kind == "relu":
            dy = dy * lc[1]
        elif spec.kind == "dropout":
            if lc[1] is not None:
                dy = dy * lc[1]
    return ModelParams(tensors=grads)


def cross_entropy(probs: np.ndarray, soft_labels: np.ndarray) -> float:
    """Mean cross-entropy against (possibly soft) target rows."""
    if probs.shape != soft_labels.shape:
        raise ShapeError(f"probs {probs.shape} vs labels {soft_labels.shape}")
    return float(-(soft_labels * np.log(probs + CE_EPS)).sum(axis=1).mean())


def cross_entropy_per_sample(probs: np.ndarray, soft_labels: np.ndarray) -> np.ndarray:
    if probs.shape != soft_labels.shape:
        raise ShapeError(f"probs {probs.shape} vs labels {soft_labels.shape}")
    return -(soft_labels * np.log(probs + CE_EPS)).sum(axis=1)


def one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), class_count))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass
class SgdState:
    velocity: list = field(default_factory=list)


def sgd_step(
    params: ModelParams,
    gradients: ModelParams,
    lr: float,
    momentum: float,
    state: SgdState | None = None,
):
    """In-place SGD with momentum: v <- m*v + g; theta <- theta - lr*v."""
    if state is None or not state.velocity:
        state = SgdState(velocity=[np.zeros_like(p) for p in params.tensors])
    for g in gradients.tensors:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient passed to sgd_step")
    for p, g, v in zip(params.tensors, gradients.tensors, state.velocity):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        v *= momentum
        v += g
        p -= lr * v
    return params, state


def grad_check(
    cfg: NetworkConfig,
    params: ModelParams,
    batch: np.ndarray,
    labels: np.ndarray,
    eps: float = 1e-4,
    rng: RngState | None = None,
    n_coords: int = 200,
    dropout_on: bool = False,
    gradient_fn=None,
) -> float:
    """Max relative error between analytic and central-difference grads.

    Compares on a random subsample of at least ``n_coords`` coordinates
    (all of them for small nets). ``gradient_fn`` substitutes the
    analytic gradient computation, which lets tests inject faults.
    Requires a deterministic loss, so dropout must stay off.
    """
    if dropout_on:
        raise ValueError("grad_check requires dropout_on=False (stochastic loss has no fixed gradient)")
    rng = rng or RngState(0)
    if labels.ndim == 1:
        labels = one_hot(labels, cfg.class_count)

    def loss_at(p: ModelParams) -> float:
        probs, _ = forward(p, cfg, batch, dropout_on=False)
        return cross_entropy(probs, labels)

    if gradient_fn is None:
        probs, cache = forward(params, cfg, batch, dropout_on=False)
        grads = backward(params, cfg, cache, (probs - labels) / len(batch))
    else:
        grads = gradient_fn(params, cfg, batch, labels)

    total = params.n_params()
    sizes = [t.size for t in params.tensors]
    offsets = np.cumsum([0] + sizes)
    if total <= n_coords:
        coords = np.arange(total)
    else:
        coords = rng.choice(total, size=n_coords, replace=False)

    max_rel = 0.0
    for flat in coords:
        ti = int(np.searchsorted(offsets, flat, side="right") - 1)
        off = int(flat - offsets[ti])
        t = params.tensors[ti]
        orig = t.flat[off]
        t.flat[off] = orig + eps
        lp = loss_at(params)
        t.flat[off] = orig - eps
        lm = loss_at(params)
        t.flat[off] = orig
        numeric = (lp - lm) / (2 * eps)
        analytic = grads.tensors[ti].flat[off]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        max_rel = max(max_rel, rel)
    return max_rel


def save_model(path, cfg: NetworkConfig, params: ModelParams) -> None:
    """Versioned binary model file.

    Layout: magic ``SSSL``, u32 version, u32 config length + UTF-8 JSON
    config, then per tensor: u32 ndim, u32 dims, float32 little-endian
    data. All integers little-endian.
    """
    cfg_bytes = cfg.to_json().encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", MODEL_VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        for t in params.tensors:
            f.write(struct.pack("<I", t.ndim))
            f.write(struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(t.astype("<f4").tobytes())


def load_model(path):
    """Read a model file back as (NetworkConfig, ModelParams)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        (cfg_len,) = struct.unpack("<I", f.read(4))
        cfg = NetworkConfig.from_json(f.read(cfg_len).decode("utf-8"))
        tensors = []
        while True:
            head = f.read(4)
            if not head:
                break
            (ndim,) = struct.unpack("<I", head)
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4").astype(np.float64)
            tensors.append(data.reshape(shape))
    return cfg, ModelParams(tensors=tensors)
