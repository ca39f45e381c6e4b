"""From-scratch dense-tensor layers for 1-D convolutional ResNets.

Forward and backward passes are explicit numpy; no autograd. Activations and
parameters are float32 by default (float64 available for finite-difference
checks); losses and ensemble statistics accumulate in float64.

Modes:

* ``train``  -- batch-norm uses batch statistics and updates running stats;
  every dropout layer is active.
* ``mc``     -- inference with only the test-enabled dropout layers active;
  this is the Monte Carlo ensemble mode.
* ``infer``  -- plain deterministic inference, all dropout disabled.

Dropout masks are derived from (pass seed, layer name), never from global
state, so a pass is reproducible no matter where in the graph execution
starts. That property is what makes trunk caching exact (see engine.py).

Backward passes take the cache dict that forward populated and return
(grad_input, [(param, grad), ...]) with grads aligned to params by identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .rngutil import derive_rng, derive_seed

TRAIN = "train"
MC = "mc"
INFER = "infer"
_MODES = (TRAIN, MC, INFER)


class ShapeError(ValueError):
    """Input tensor shape incompatible with a layer."""


def _check_mode(mode: str):
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")


class Conv1d:
    """Stride-1 same-padding 1-D convolution (kernel 1 or 3 in practice)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, bias: bool = True,
                 name: str = "conv", rng: Optional[np.random.Generator] = None,
                 dtype=np.float32):
        if kernel % 2 != 1:
            raise ValueError("kernel must be odd for same padding")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.name = name
        rng = rng or np.random.default_rng(0)
        scale = math.sqrt(2.0 / (in_ch * kernel))
        self.w = (rng.standard_normal((out_ch, in_ch, kernel)) * scale).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype) if bias else None

    def params(self):
        out = [(f"{self.name}.w", self.w)]
        if self.b is not None:
            out.append((f"{self.name}.b", self.b))
        return out

    def state(self):
        return []

    def forward(self, x, mode=INFER, seed=0, cache=None):
        if x.ndim != 3 or x.shape[1] != self.in_ch:
            raise ShapeError(f"{self.name}: expected (B, {self.in_ch}, L), got {x.shape}")
        pad = (self.kernel - 1) // 2
        L = x.shape[2]
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
        y = np.matmul(self.w[:, :, 0], xp[:, :, 0:L])
        for t in range(1, self.kernel):
            y += np.matmul(self.w[:, :, t], xp[:, :, t : t + L])
        if self.b is not None:
            y += self.b[:, None]
        if cache is not None:
            cache["xp"] = xp
            cache["L"] = L
        return y

    def backward(self, dy, cache):
        xp, L = cache["xp"], cache["L"]
        pad = (self.kernel - 1) // 2
        dw = np.empty_like(self.w)
        for t in range(self.kernel):
            # (B, O, L) @ (B, L, C) summed over batch -> (O, C)
            dw[:, :, t] = np.matmul(dy, xp[:, :, t : t + L].transpose(0, 2, 1)).sum(axis=0)
        dxp = np.zeros_like(xp)
        for t in range(self.kernel):
            dxp[:, :, t : t + L] += np.matmul(self.w[:, :, t].T, dy)
        dx = dxp[:, :, pad : pad + L] if pad else dxp
        grads = [(self.w, dw)]
        if self.b is not None:
            grads.append((self.b, dy.sum(axis=(0, 2))))
        return dx, grads


class BatchNorm1d:
    """Per-channel batch normalization over (batch, channel, length).

    Training normalizes with batch statistics and updates running stats with
    momentum (running variance uses the unbiased estimator, hence the
    batch-size >= 2 requirement). Inference normalizes with the frozen
    running stats and is batch-independent.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 name: str = "bn", dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def params(self):
        return [(f"{self.name}.gamma", self.gamma), (f"{self.name}.beta", self.beta)]

    def state(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def forward(self, x, mode=INFER, seed=0, cache=None):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected (B, {self.channels}, L), got {x.shape}")
        if mode == TRAIN:
            if x.shape[0] < 2:
                raise ValueError(f"{self.name}: training requires batch size >= 2")
            n = x.shape[0] * x.shape[2]
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[:, None]) * inv_std[:, None]
            m = self.momentum
            self.running_mean[:] = (1 - m) * self.running_mean + m * mean
            self.running_var[:] = (1 - m) * self.running_var + m * var * (n / (n - 1))
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[:, None]) * inv_std[:, None]
        y = self.gamma[:, None] * xhat + self.beta[:, None]
        if cache is not None:
            cache["xhat"] = xhat
            cache["inv_std"] = inv_std
            cache["mode"] = mode
        return y

    def backward(self, dy, cache):
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        dgamma = (dy * xhat).sum(axis=(0, 2))
        dbeta = dy.sum(axis=(0, 2))
        g_inv = (self.gamma * inv_std)[:, None]
        if cache["mode"] == TRAIN:
            n = dy.shape[0] * dy.shape[2]
            mean_dy = dy.mean(axis=(0, 2))[:, None]
            mean_dy_xhat = (dy * xhat).mean(axis=(0, 2))[:, None]
            dx = g_inv * (dy - mean_dy - xhat * mean_dy_xhat)
        else:
            dx = g_inv * dy
        return dx, [(self.gamma, dgamma), (self.beta, dbeta)]


class ReLU:
    def __init__(self, name: str = "relu"):
        self.name = name

    def params(self):
        return []

    def state(self):
        return []

    def forward(self, x, mode=INFER, seed=0, cache=None):
        y = np.maximum(x, 0)
        if cache is not None:
            cache["mask"] = x > 0
        return y

    def backward(self, dy, cache):
        return dy * cache["mask"], []


class GlobalAvgPool:
    """(B, C, L) -> (B, C) mean over length."""

    def __init__(self, name: str = "pool"):
        self.name = name

    def params(self):
        return []

    def state(self):
        return []

    def forward(self, x, mode=INFER, seed=0, cache=None):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected (B, C, L), got {x.shape}")
        if cache is not None:
            cache["L"] = x.shape[2]
        return x.mean(axis=2)

    def backward(self, dy, cache):
        L = cache["L"]
        return np.repeat(dy[:, :, None] / L, L, axis=2).astype(dy.dtype, copy=False), []


class Dropout:
    """Inverted dropout; the mask stream is a pure function of (seed, name).

    ``mc_enabled`` marks the layer stochastic at test time: active in mc mode
    as well as train mode. Disabled (infer mode, or mc mode when not
    mc_enabled) it is the identity, which inverted scaling makes the
    expectation of the active modes.
    """

    def __init__(self, rate: float = 0.5, mc_enabled: bool = True, name: str = "dropout"):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.mc_enabled = mc_enabled
        self.name = name

    def params(self):
        return []

    def state(self):
        return []

    def active(self, mode: str) -> bool:
        _check_mode(mode)
        if self.rate == 0.0:
            return False
        return mode == TRAIN or (mode == MC and self.mc_enabled)

    def forward(self, x, mode=INFER, seed=0, cache=None):
        if not self.active(mode):
            if cache is not None:
                cache["mask"] = None
            return x
        rng = derive_rng(seed, "drop", self.name)
        u = rng.random(x.shape, dtype=np.float32 if x.dtype == np.float32 else np.float64)
        mask = (u >= self.rate).astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        if cache is not None:
            cache["mask"] = mask
        return x * mask

    def backward(self, dy, cache):
        mask = cache["mask"]
        return (dy if mask is None else dy * mask), []


class Dense:
    """Fully connected (B, F) -> (B, O)."""

    def __init__(self, in_features: int, out_features: int, name: str = "fc",
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.name = name
        rng = rng or np.random.default_rng(0)
        scale = math.sqrt(2.0 / in_features)
        self.w = (rng.standard_normal((out_features, in_features)) * scale).astype(dtype)
        self.b = np.zeros(out_features, dtype=dtype)

    def params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]

    def state(self):
        return []

    def forward(self, x, mode=INFER, seed=0, cache=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected (B, {self.in_features}), got {x.shape}")
        if cache is not None:
            cache["x"] = x
        return x @ self.w.T + self.b

    def backward(self, dy, cache):
        x = cache["x"]
        return dy @ self.w, [(self.w, dy.T @ x), (self.b, dy.sum(axis=0))]


class Softmax:
    """Row-wise stable softmax with the full Jacobian backward."""

    def __init__(self, name: str = "softmax"):
        self.name = name

    def params(self):
        return []

    def state(self):
        return []

    def forward(self, x, mode=INFER, seed=0, cache=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        if cache is not None:
            cache["y"] = y
        return y

    def backward(self, dy, cache):
        y = cache["y"]
        inner = (dy * y).sum(axis=-1, keepdims=True)
        return y * (dy - inner), []


class ResidualBlock:
    """conv-bn-relu-conv-bn plus a shortcut, relu on the sum.

    The shortcut is the identity when channel counts match, otherwise a 1x1
    projection followed by batch norm.
    """

    def __init__(self, in_ch: int, out_ch: int, name: str = "block",
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.name = name
        rng = rng or np.random.default_rng(0)
        self.conv1 = Conv1d(in_ch, out_ch, 3, bias=False, name=f"{name}.conv1", rng=rng, dtype=dtype)
        self.bn1 = BatchNorm1d(out_ch, name=f"{name}.bn1", dtype=dtype)
        self.relu1 = ReLU(name=f"{name}.relu1")
        self.conv2 = Conv1d(out_ch, out_ch, 3, bias=False, name=f"{name}.conv2", rng=rng, dtype=dtype)
        self.bn2 = BatchNorm1d(out_ch, name=f"{name}.bn2", dtype=dtype)
        if in_ch != out_ch:
            self.proj = Conv1d(in_ch, out_ch, 1, bias=False, name=f"{name}.proj", rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm1d(out_ch, name=f"{name}.proj_bn", dtype=dtype)
        else:
            self.proj = None
            self.proj_bn = None
        self.relu_out = ReLU(name=f"{name}.relu_out")

    def _sublayers(self):
        layers = [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2]
        if self.proj is not None:
            layers += [self.proj, self.proj_bn]
        return layers + [self.relu_out]

    def params(self):
        out = []
        for sub in self._sublayers():
            out.extend(sub.params())
        return out

    def state(self):
        out = []
        for sub in self._sublayers():
            out.extend(sub.state())
        return out

    def forward(self, x, mode=INFER, seed=0, cache=None):
        caches = {} if cache is not None else None

        def sub(layer, inp, key):
            c = {} if caches is not None else None
            out = layer.forward(inp, mode, seed, c)
            if caches is not None:
                caches[key] = c
            return out

        h = sub(self.conv1, x, "conv1")
        h = sub(self.bn1, h, "bn1")
        h = sub(self.relu1, h, "relu1")
        h = sub(self.conv2, h, "conv2")
        h = sub(self.bn2, h, "bn2")
        if self.proj is not None:
            sc = sub(self.proj, x, "proj")
            sc = sub(self.proj_bn, sc, "proj_bn")
        else:
            sc = x
        y = sub(self.relu_out, h + sc, "relu_out")
        if cache is not None:
            cache["sub"] = caches
        return y

    def backward(self, dy, cache):
        caches = cache["sub"]
        grads = []

        def sub(layer, grad, key):
            gx, gp = layer.backward(grad, caches[key])
            grads.extend(gp)
            return gx

        d_sum = sub(self.relu_out, dy, "relu_out")
        # main path
        dh = sub(self.bn2, d_sum, "bn2")
        dh = sub(self.conv2, dh, "conv2")
        dh = sub(self.relu1, dh, "relu1")
        dh = sub(self.bn1, dh, "bn1")
        dx = sub(self.conv1, dh, "conv1")
        # shortcut path
        if self.proj is not None:
            dsc = sub(self.proj_bn, d_sum, "proj_bn")
            dx = dx + sub(self.proj, dsc, "proj")
        else:
            dx = dx + d_sum
        return dx, grads


@dataclass(frozen=True)
class NetSpec:
    """Architecture hyperparameters; one residual block per width entry."""

    widths: Tuple[int, ...]
    n_classes: int
    in_ch: int = 2
    dropout_rate: float = 0.5
    mc_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 1:
            raise ValueError("need at least one block")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def n_conv(self) -> int:
        return 2 * len(self.widths)

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "n_classes": self.n_classes,
                "in_ch": self.in_ch, "dropout_rate": self.dropout_rate,
                "mc_enabled": self.mc_enabled}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(widths=tuple(d["widths"]), n_classes=int(d["n_classes"]),
                   in_ch=int(d["in_ch"]), dropout_rate=float(d["dropout_rate"]),
                   mc_enabled=bool(d.get("mc_enabled", True)))


def default_widths(n_conv: int, base: int = 16, double_every: int = 4,
                   max_channels: int = 128) -> Tuple[int, ...]:
    """Per-block channel widths: doubling from ``base`` every ``double_every``
    conv layers, capped at ``max_channels``. ``n_conv`` must be even."""
    if n_conv < 2 or n_conv % 2 != 0:
        raise ValueError("n_conv must be even and >= 2 (two convs per block)")
    widths = []
    for b in range(n_conv // 2):
        widths.append(min(base * 2 ** (2 * b // double_every), max_channels))
    return tuple(widths)


class Network:
    """An ordered stack of layers ending in softmax.

    ``forward`` returns a row-stochastic (B, C) array. ``loss_and_grads``
    computes mean cross-entropy from the logits (float64) and backpropagates
    through every trainable parameter.
    """

    def __init__(self, layers: Sequence, spec: Optional[NetSpec] = None):
        self.layers = list(layers)
        self.spec = spec
        names = [n for n, _ in self.params() + self.state()]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names in network")
        drop_names = [l.name for l in self.layers if isinstance(l, Dropout)]
        if len(drop_names) != len(set(drop_names)):
            raise ValueError("duplicate dropout layer names")

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def state(self):
        out = []
        for layer in self.layers:
            out.extend(layer.state())
        return out

    def forward(self, x, mode=INFER, seed=0):
        _check_mode(mode)
        for layer in self.layers:
            x = layer.forward(x, mode, seed)
        return x

    def _forward_logits(self, x, mode, seed, caches):
        if not isinstance(self.layers[-1], Softmax):
            raise ValueError("network must end in softmax")
        for layer in self.layers[:-1]:
            c = {} if caches is not None else None
            x = layer.forward(x, mode, seed, c)
            if caches is not None:
                caches.append((layer, c))
        return x

    def loss_and_grads(self, x, targets, mode=TRAIN, seed=0):
        """Mean cross-entropy loss, per-parameter grads, and softmax probs."""
        targets = np.asarray(targets)
        caches: List[Tuple[object, dict]] = []
        logits = self._forward_logits(x, mode, seed, caches)
        B, C = logits.shape
        if targets.shape != (B,) or targets.min() < 0 or targets.max() >= C:
            raise ShapeError("targets must be class indices below the class count")
        z = logits.astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(logsumexp - z[np.arange(B), targets]))
        probs = np.exp(z - logsumexp[:, None])
        dlogits = probs.copy()
        dlogits[np.arange(B), targets] -= 1.0
        grad = (dlogits / B).astype(logits.dtype)
        grads = []
        for layer, c in reversed(caches):
            grad, gp = layer.backward(grad, c)
            grads.extend(gp)
        return loss, grads, probs

    def predict_probs(self, x, mode=INFER, seed=0, batch_size: int = 256):
        """Forward in batches; rows are softmax distributions."""
        outs = []
        for i in range(0, x.shape[0], batch_size):
            outs.append(self.forward(x[i : i + batch_size], mode, seed))
        return np.concatenate(outs, axis=0)

    def param_dict(self):
        return dict(self.params() + self.state())

    def load_param_dict(self, arrays: Dict[str, np.ndarray]):
        """Copy values into the network's parameter/state arrays by name."""
        own = self.param_dict()
        missing = set(own) - set(arrays)
        if missing:
            raise ValueError(f"weight file missing arrays: {sorted(missing)}")
        for name, arr in own.items():
            src = np.asarray(arrays[name])
            if src.shape != arr.shape:
                raise ValueError(f"{name}: shape {src.shape} does not match {arr.shape}")
            arr[:] = src.astype(arr.dtype)


def build_network(spec: NetSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Residual conv stack -> global average pool -> dropout -> fc -> softmax."""
    rng = derive_rng(seed, "init")
    layers = []
    in_ch = spec.in_ch
    for i, width in enumerate(spec.widths, start=1):
        layers.append(ResidualBlock(in_ch, width, name=f"block{i}", rng=rng, dtype=dtype))
        in_ch = width
    layers.append(GlobalAvgPool())
    layers.append(Dropout(spec.dropout_rate, mc_enabled=spec.mc_enabled, name="dropout"))
    layers.append(Dense(in_ch, spec.n_classes, name="fc", rng=rng, dtype=dtype))
    layers.append(Softmax())
    return Network(layers, spec=spec)
