import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for reference_impl

from splitdrop.layers import (BatchNorm1d, Conv1d, Dense, Dropout, GlobalAvgPool,
                              Network, ReLU, Softmax)

GOLDEN_DIR = Path(__file__).parent / "golden"


def build_tiny_net(dropout_rate=0.5, dtype=np.float32):
    """The two-conv C=3 golden net; dropout sits before the classifier."""
    layers = [
        Conv1d(2, 4, 3, name="conv1", dtype=dtype),
        BatchNorm1d(4, name="bn1", dtype=dtype),
        ReLU(name="relu1"),
        Conv1d(4, 4, 3, name="conv2", dtype=dtype),
        BatchNorm1d(4, name="bn2", dtype=dtype),
        ReLU(name="relu2"),
        GlobalAvgPool(),
        Dropout(dropout_rate, mc_enabled=True, name="dropout"),
        Dense(4, 3, name="fc", dtype=dtype),
        Softmax(),
    ]
    return Network(layers)


def load_golden_tiny_net(dropout_rate=0.5):
    """Golden net with the frozen weights, plus its input and expected output."""
    data = np.load(GOLDEN_DIR / "tiny_net_forward.npz")
    net = build_tiny_net(dropout_rate=dropout_rate)
    net.load_param_dict({k: data[k] for k in data.files if k not in ("x", "expected")})
    return net, data["x"], data["expected"]


def central_diff_grads(loss_fn, param, eps=1e-3):
    """Central finite differences of loss_fn() w.r.t. every entry of param."""
    flat = param.ravel()
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss_fn()
        flat[i] = orig - eps
        lm = loss_fn()
        flat[i] = orig
        out[i] = (lp - lm) / (2 * eps)
    return out.reshape(param.shape)


def assert_grads_close(analytic, numeric, rel_tol=1e-2, floor=1e-7):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = float(rel.max()) if rel.size else 0.0
    assert worst <= rel_tol, f"gradient mismatch: worst relative error {worst:.3e}"
