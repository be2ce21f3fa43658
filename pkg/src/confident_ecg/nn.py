"""1D convolutional layers with hand-written backward passes, the residual
backbone, a plain CNN used as the first-stage model, and checkpoint I/O.

All arrays are ``[batch, channels, time]``. Layers are stateless descriptions;
parameters live in a :class:`Network`'s ``params`` dict and batch-norm running
statistics in its ``buffers`` dict. A forward pass can return a *tape* of
per-layer caches that the matching backward pass consumes.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# functional kernels
# ---------------------------------------------------------------------------


def conv1d_forward(x, w, stride=1, padding=1):
    """Cross-correlation without bias.

    Returns the output ``[B, O, T_out]`` and the cache needed by
    :func:`conv1d_backward`.
    """
    B, C, T = x.shape
    O, C_w, k = w.shape
    if C != C_w:
        raise ShapeError(f"conv expects {C_w} input channels, got {C}")
    if T + 2 * padding < k:
        raise ShapeError(f"input length {T} too short for kernel {k} with padding {padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    T_out = (T + 2 * padding - k) // stride + 1
    # cols[b, t, c, j] = xp[b, c, stride*t + j]
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :][:, :, :T_out]
    cols = cols.transpose(0, 2, 1, 3).reshape(B, T_out, C * k)
    out = (cols @ w.reshape(O, C * k).T).transpose(0, 2, 1)
    return np.ascontiguousarray(out), (cols, x.shape, w, stride, padding)


def conv1d_backward(dout, cache):
    """Gradients with respect to the input and the kernel."""
    cols, (B, C, T), w, stride, padding = cache
    O, _, k = w.shape
    T_out = dout.shape[2]
    d = dout.transpose(0, 2, 1).reshape(-1, O)  # [B*T_out, O]
    dw = (d.T @ cols.reshape(-1, C * k)).reshape(O, C, k)
    if stride == 1 and padding <= k - 1:
        # input gradient = full correlation of dout with the flipped, transposed kernel
        dx, _ = conv1d_forward(dout, np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2)), 1, k - 1 - padding)
        return dx, dw
    dcols = (d @ w.reshape(O, C * k)).reshape(B, T_out, C, k)
    dxp = np.zeros((B, C, T + 2 * padding), dtype=dout.dtype)
    span = stride * (T_out - 1) + 1
    for j in range(k):
        dxp[:, :, j : j + span : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
    dx = dxp[:, :, padding : padding + T] if padding else dxp
    return np.ascontiguousarray(dx), dw


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode: Mode):
    """Per-channel normalisation over (batch, time).

    In train mode the batch statistics are used and the running statistics are
    updated in place (momentum 0.1, unbiased variance). In eval mode the
    running statistics are used.
    """
    if mode == Mode.TRAIN:
        m = x.shape[0] * x.shape[2]
        if m < 2:
            raise ShapeError("batch norm in train mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        running_mean *= 1 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var * m / (m - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, (xhat, inv_std, gamma, mode)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, mode = cache
    dgamma = (dout * xhat).sum(axis=(0, 2))
    dbeta = dout.sum(axis=(0, 2))
    dxhat = dout * gamma[None, :, None]
    if mode == Mode.TRAIN:
        dx = inv_std[None, :, None] * (
            dxhat
            - dxhat.mean(axis=(0, 2), keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=(0, 2), keepdims=True)
        )
    else:
        dx = dxhat * inv_std[None, :, None]
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x, size=2):
    B, C, T = x.shape
    if T < size:
        raise ShapeError(f"max pool of size {size} needs at least {size} samples, got {T}")
    T_out = T // size
    windows = x[:, :, : T_out * size].reshape(B, C, T_out, size)
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]
    return out, (arg, T, size)


def maxpool_backward(dout, cache):
    arg, T, size = cache
    B, C, T_out = dout.shape
    dwin = np.zeros((B, C, T_out, size), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=3)
    dx = np.zeros((B, C, T), dtype=dout.dtype)
    dx[:, :, : T_out * size] = dwin.reshape(B, C, T_out * size)
    return dx


def dropout_forward(x, keep_prob, mode: Mode, rng=None):
    """Inverted dropout; identity in eval mode or when ``keep_prob == 1``."""
    if not 0 < keep_prob <= 1:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if mode == Mode.EVAL or keep_prob == 1:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = rng.random(x.shape, dtype=np.float32 if x.dtype == np.float32 else np.float64) < keep_prob
    mask = mask.astype(x.dtype) / x.dtype.type(keep_prob)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


@dataclass
class Context:
    """Everything a forward pass reads besides its input."""

    params: dict
    buffers: dict
    mode: Mode = Mode.EVAL
    rng: Any = None
    dropout: bool = True


class Layer:
    def init(self, rng, dtype) -> tuple[dict, dict]:
        return {}, {}

    def forward(self, ctx: Context, x):
        raise NotImplementedError

    def backward(self, ctx: Context, cache, dout, grads: dict):
        raise NotImplementedError


class Conv1d(Layer):
    def __init__(self, name, c_in, c_out, kernel_size, stride=1, padding=None):
        self.name = name
        self.c_in, self.c_out, self.kernel_size = c_in, c_out, kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding

    def init(self, rng, dtype):
        fan_in = self.c_in * self.kernel_size
        w = rng.standard_normal((self.c_out, self.c_in, self.kernel_size)) * np.sqrt(2.0 / fan_in)
        return {f"{self.name}.weight": w.astype(dtype)}, {}

    def forward(self, ctx, x):
        return conv1d_forward(x, ctx.params[f"{self.name}.weight"], self.stride, self.padding)

    def backward(self, ctx, cache, dout, grads):
        dx, dw = conv1d_backward(dout, cache)
        grads[f"{self.name}.weight"] = dw
        return dx


class BatchNorm1d(Layer):
    def __init__(self, name, channels):
        self.name, self.channels = name, channels

    def init(self, rng, dtype):
        c = self.channels
        return (
            {f"{self.name}.gamma": np.ones(c, dtype), f"{self.name}.beta": np.zeros(c, dtype)},
            {f"{self.name}.running_mean": np.zeros(c, dtype), f"{self.name}.running_var": np.ones(c, dtype)},
        )

    def forward(self, ctx, x):
        p, b = ctx.params, ctx.buffers
        return batchnorm_forward(
            x,
            p[f"{self.name}.gamma"],
            p[f"{self.name}.beta"],
            b[f"{self.name}.running_mean"],
            b[f"{self.name}.running_var"],
            ctx.mode,
        )

    def backward(self, ctx, cache, dout, grads):
        dx, dgamma, dbeta = batchnorm_backward(dout, cache)
        grads[f"{self.name}.gamma"] = dgamma
        grads[f"{self.name}.beta"] = dbeta
        return dx


class ReLU(Layer):
    def forward(self, ctx, x):
        return relu_forward(x)

    def backward(self, ctx, cache, dout, grads):
        return relu_backward(dout, cache)


class MaxPool1d(Layer):
    def __init__(self, size=2):
        self.size = size

    def forward(self, ctx, x):
        return maxpool_forward(x, self.size)

    def backward(self, ctx, cache, dout, grads):
        return maxpool_backward(dout, cache)


class Dropout(Layer):
    def __init__(self, keep_prob):
        self.keep_prob = keep_prob

    def forward(self, ctx, x):
        keep = self.keep_prob if ctx.dropout else 1.0
        return dropout_forward(x, keep, ctx.mode, ctx.rng)

    def backward(self, ctx, cache, dout, grads):
        return dropout_backward(dout, cache)


class GlobalAvgPool(Layer):
    """``[B, C, T] -> [B, C]``."""

    def forward(self, ctx, x):
        return x.mean(axis=2), x.shape[2]

    def backward(self, ctx, cache, dout, grads):
        T = cache
        return np.repeat(dout[:, :, None] / T, T, axis=2)


class Dense(Layer):
    def __init__(self, name, n_in, n_out):
        self.name, self.n_in, self.n_out = name, n_in, n_out

    def init(self, rng, dtype):
        w = rng.standard_normal((self.n_out, self.n_in)) * np.sqrt(1.0 / self.n_in)
        return {f"{self.name}.weight": w.astype(dtype), f"{self.name}.bias": np.zeros(self.n_out, dtype)}, {}

    def forward(self, ctx, x):
        w, b = ctx.params[f"{self.name}.weight"], ctx.params[f"{self.name}.bias"]
        if x.shape[1] != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} features, got {x.shape[1]}")
        return x @ w.T + b, x

    def backward(self, ctx, cache, dout, grads):
        x = cache
        grads[f"{self.name}.weight"] = dout.T @ x
        grads[f"{self.name}.bias"] = dout.sum(axis=0)
        return dout @ ctx.params[f"{self.name}.weight"]


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, rng, dtype):
        params, buffers = {}, {}
        for layer in self.layers:
            p, b = layer.init(rng, dtype)
            params.update(p)
            buffers.update(b)
        return params, buffers

    def forward(self, ctx, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(ctx, x)
            caches.append(c)
        return x, caches

    def backward(self, ctx, cache, dout, grads):
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            dout = layer.backward(ctx, c, dout, grads)
        return dout


class ResidualBlock(Layer):
    """``out = F(x) + shortcut(x)`` with
    ``F = BN -> Conv -> ReLU -> Dropout -> BN -> Conv -> ReLU``.

    The shortcut is the identity when channel counts agree and a 1x1
    convolution otherwise.
    """

    def __init__(self, name, c_in, c_out, kernel_size=3, keep_prob=0.5):
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.branch = Sequential(
            [
                BatchNorm1d(f"{name}.bn1", c_in),
                Conv1d(f"{name}.conv1", c_in, c_out, kernel_size),
                ReLU(),
                Dropout(keep_prob),
                BatchNorm1d(f"{name}.bn2", c_out),
                Conv1d(f"{name}.conv2", c_out, c_out, kernel_size),
                ReLU(),
            ]
        )
        self.shortcut = None if c_in == c_out else Conv1d(f"{name}.shortcut", c_in, c_out, 1, padding=0)

    def init(self, rng, dtype):
        params, buffers = self.branch.init(rng, dtype)
        if self.shortcut is not None:
            params.update(self.shortcut.init(rng, dtype)[0])
        return params, buffers

    def forward(self, ctx, x):
        if x.shape[1] != self.c_in:
            raise ShapeError(f"{self.name} expects {self.c_in} channels, got {x.shape[1]}")
        f, branch_cache = self.branch.forward(ctx, x)
        if self.shortcut is None:
            return f + x, (branch_cache, None)
        s, sc_cache = self.shortcut.forward(ctx, x)
        return f + s, (branch_cache, sc_cache)

    def backward(self, ctx, cache, dout, grads):
        branch_cache, sc_cache = cache
        dx = self.branch.backward(ctx, branch_cache, dout, grads)
        if self.shortcut is None:
            return dx + dout
        return dx + self.shortcut.backward(ctx, sc_cache, dout, grads)


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackboneConfig:
    stem_filters: int = 64
    num_blocks: int = 5
    filter_schedule: tuple[int, ...] = (64, 64, 128, 128, 256)
    kernel_size: int = 3
    pool_every: int = 2
    dropout_keep_train: float = 0.5
    num_categories: int = 5
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "filter_schedule", tuple(int(f) for f in self.filter_schedule))
        if len(self.filter_schedule) != self.num_blocks:
            raise ValueError(
                f"filter_schedule has {len(self.filter_schedule)} entries for {self.num_blocks} blocks"
            )
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if not 0 < self.dropout_keep_train <= 1:
            raise ValueError("dropout_keep_train must lie in (0, 1]")
        if self.pool_every < 1 or self.num_categories < 2 or self.stem_filters < 1:
            raise ValueError("invalid backbone configuration")

    @classmethod
    def six_blocks(cls, **kw):
        return cls(num_blocks=6, filter_schedule=(64, 64, 128, 128, 256, 256), **kw)

    @property
    def num_pools(self) -> int:
        return self.num_blocks // self.pool_every


@dataclass(frozen=True)
class PlainCNNConfig:
    """Conv -> ReLU -> MaxPool stages followed by global average pooling and a dense head."""

    filters: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 5
    num_categories: int = 5
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    @property
    def num_pools(self) -> int:
        return len(self.filters)


def _backbone_layers(cfg: BackboneConfig) -> list[Layer]:
    layers: list[Layer] = [Conv1d("stem", cfg.in_channels, cfg.stem_filters, cfg.kernel_size)]
    c = cfg.stem_filters
    for i, f in enumerate(cfg.filter_schedule, 1):
        layers.append(ResidualBlock(f"block{i}", c, f, cfg.kernel_size, cfg.dropout_keep_train))
        if i % cfg.pool_every == 0:
            layers.append(MaxPool1d(2))
        c = f
    layers += [GlobalAvgPool(), Dense("head", c, cfg.num_categories)]
    return layers


def _plain_layers(cfg: PlainCNNConfig) -> list[Layer]:
    layers: list[Layer] = []
    c = cfg.in_channels
    for i, f in enumerate(cfg.filters, 1):
        layers += [Conv1d(f"conv{i}", c, f, cfg.kernel_size), ReLU(), MaxPool1d(2)]
        c = f
    layers += [GlobalAvgPool(), Dense("head", c, cfg.num_categories)]
    return layers


ARCHITECTURES = {"resnet": BackboneConfig, "plain_cnn": PlainCNNConfig}


class Network:
    """A parameterised layer stack.

    Attributes:
        architecture: ``"resnet"`` or ``"plain_cnn"``.
        config: the architecture's config dataclass.
        params: trainable tensors by name.
        buffers: batch-norm running statistics by name.
    """

    def __init__(self, architecture: str, config, params: dict, buffers: dict):
        self.architecture = architecture
        self.config = config
        layers = _backbone_layers(config) if architecture == "resnet" else _plain_layers(config)
        self.body = Sequential(layers)
        self.params = params
        self.buffers = buffers

    @classmethod
    def create(cls, config, seed: int = 0, dtype=np.float64) -> "Network":
        architecture = "resnet" if isinstance(config, BackboneConfig) else "plain_cnn"
        layers = _backbone_layers(config) if architecture == "resnet" else _plain_layers(config)
        params, buffers = Sequential(layers).init(np.random.default_rng(seed), dtype)
        return cls(architecture, config, params, buffers)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def num_categories(self) -> int:
        return self.config.num_categories

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def min_length(self) -> int:
        return 2**self.config.num_pools

    def copy(self) -> "Network":
        return Network(
            self.architecture,
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected [B, {self.config.in_channels}, T] input, got {x.shape}")
        if x.shape[2] < self.min_length():
            raise ShapeError(
                f"segment length {x.shape[2]} is shorter than the {self.min_length()} samples "
                "the pooling cascade needs"
            )
        return x

    def forward_with_tape(self, x, mode: Mode = Mode.TRAIN, rng=None, dropout: bool = True):
        """Logits plus the tape required by :meth:`backward`."""
        ctx = Context(self.params, self.buffers, Mode(mode), rng, dropout)
        logits, caches = self.body.forward(ctx, self._check_input(x))
        return logits, (ctx, caches)

    def forward(self, x, mode: Mode = Mode.EVAL, rng=None, dropout: bool = True):
        return self.forward_with_tape(x, mode, rng, dropout)[0]

    def backward(self, tape, dlogits) -> dict:
        ctx, caches = tape
        grads: dict = {}
        self.body.backward(ctx, caches, dlogits, grads)
        return grads

    def predict_proba(self, x, batch_size: int = 512) -> np.ndarray:
        from .optim import softmax

        x = self._check_input(x)
        out = [softmax(self.forward(x[i : i + batch_size], Mode.EVAL)) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.num_categories))

    def predict(self, x, batch_size: int = 512) -> np.ndarray:
        return self.predict_proba(x, batch_size).argmax(axis=1)


def build_backbone(config: BackboneConfig = BackboneConfig(), seed: int = 0, dtype=np.float64) -> Network:
    """Stem conv, residual blocks with a max pool after every ``pool_every``
    blocks, global average pooling and a dense head. Kaiming fan-in init, no
    conv bias."""
    return Network.create(config, seed, dtype)


def build_plain_cnn(config: PlainCNNConfig = PlainCNNConfig(), seed: int = 0, dtype=np.float64) -> Network:
    return Network.create(config, seed, dtype)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def gradient_check(
    model: Network,
    batch,
    epsilon: float = 1e-5,
    labels=None,
    fraction: float = 0.01,
    min_per_param: int = 2,
    seed: int = 0,
    per_parameter: bool = False,
):
    """Compare backprop against central differences of the cross-entropy loss.

    Dropout is disabled and batch norm uses batch statistics; running
    statistics are restored afterwards. Coordinates are sampled per parameter
    tensor (``fraction`` of it, at least ``min_per_param``).

    Returns:
        The maximum relative error, or ``(max_error, {name: max_error})`` when
        ``per_parameter`` is set.
    """
    from .optim import softmax_cross_entropy

    rng = np.random.default_rng(seed)
    x = np.asarray(batch, dtype=model.dtype)
    if labels is None:
        labels = rng.integers(0, model.num_categories, size=len(x))
    saved = {k: v.copy() for k, v in model.buffers.items()}

    def loss_at():
        logits = model.forward(x, Mode.TRAIN, None, dropout=False)
        return softmax_cross_entropy(logits, labels)[0]

    try:
        logits, tape = model.forward_with_tape(x, Mode.TRAIN, None, dropout=False)
        _, dlogits = softmax_cross_entropy(logits, labels)
        grads = model.backward(tape, dlogits)
        report = {}
        for name in sorted(model.params):
            p = model.params[name]
            count = min(p.size, max(min_per_param, int(np.ceil(fraction * p.size))))
            flat = p.reshape(-1)
            worst = 0.0
            for idx in rng.choice(p.size, size=count, replace=False):
                old = flat[idx]
                flat[idx] = old + epsilon
                up = loss_at()
                flat[idx] = old - epsilon
                down = loss_at()
                flat[idx] = old
                numeric = (up - down) / (2 * epsilon)
                worst = max(worst, float(relative_error(grads[name].reshape(-1)[idx], numeric)))
            report[name] = worst
    finally:
        for k, v in saved.items():
            model.buffers[k][...] = v
    worst = max(report.values()) if report else 0.0
    return (worst, report) if per_parameter else worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ECGCRN1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_blob(fh, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
    fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def _read_blob(fh):
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, n).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(shape)
    return name, data


def save_checkpoint(model: Network, path, extra: dict | None = None) -> None:
    """Write ``model`` (and optional extra named tensors, e.g. optimizer
    moments) in the ECGCRN1 format: magic, version byte, length-prefixed JSON
    config, then named little-endian float64 blobs with explicit shapes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(
        {"architecture": model.architecture, "config": asdict(model.config), "dtype": np.dtype(model.dtype).name},
        sort_keys=True,
    ).encode("utf-8")
    sections = [("param", model.params), ("buffer", model.buffers), ("extra", extra or {})]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for kind, tensors in sections:
            fh.write(struct.pack("<I", len(tensors)))
            for name in sorted(tensors):
                _write_blob(fh, f"{kind}:{name}", np.asarray(tensors[name]))


def load_checkpoint(path) -> tuple[Network, dict]:
    """Inverse of :func:`save_checkpoint`; returns the model and the extra tensors."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not an ECGCRN1 checkpoint")
        (version,) = struct.unpack("<B", _read_exact(fh, 1))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, n).decode("utf-8"))
        dtype = np.dtype(meta.get("dtype", "float64"))
        sections = {}
        for kind in ("param", "buffer", "extra"):
            (count,) = struct.unpack("<I", _read_exact(fh, 4))
            tensors = {}
            for _ in range(count):
                name, data = _read_blob(fh)
                prefix = f"{kind}:"
                if not name.startswith(prefix):
                    raise CheckpointError(f"unexpected tensor {name!r} in {kind} section")
                tensors[name[len(prefix):]] = data
            sections[kind] = tensors
    architecture = meta["architecture"]
    if architecture not in ARCHITECTURES:
        raise CheckpointError(f"unknown architecture {architecture!r}")
    config = ARCHITECTURES[architecture](**meta["config"])
    params = {k: v.astype(dtype) for k, v in sections["param"].items()}
    buffers = {k: v.astype(dtype) for k, v in sections["buffer"].items()}
    model = Network(architecture, config, params, buffers)
    expected = Network.create(config, 0, dtype)
    for kind, have, want in (("parameter", params, expected.params), ("buffer", buffers, expected.buffers)):
        if set(have) != set(want):
            raise CheckpointError(f"{kind} names do not match the architecture")
        for k in want:
            if have[k].shape != want[k].shape:
                raise CheckpointError(f"{kind} {k} has shape {have[k].shape}, expected {want[k].shape}")
    return model, {k: v.copy() for k, v in sections["extra"].items()}
