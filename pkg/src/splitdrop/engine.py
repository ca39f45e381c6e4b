"""Trunk/head split with cached first-pass activations for MC dropout.

The network is partitioned immediately before its first test-enabled dropout
layer. Everything before that point is deterministic at test time, so its
output is computed once per batch and reused for all K stochastic head
passes. Because dropout masks are a pure function of (pass seed, layer name),
each cached head pass is bit-identical to a full uncached forward with the
same derived seed -- caching changes cost, not distributions.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from statistics import median
from typing import Iterator, List, NamedTuple, Optional

import numpy as np

from .layers import MC, Dropout, Network
from .rngutil import derive_seed


class NoSplitPointError(ValueError):
    """Network has no test-enabled dropout layer to split at."""


@dataclass(frozen=True)
class TrunkCache:
    """The input to the first enabled dropout layer, plus batch identity."""

    activation: np.ndarray
    batch_digest: str


def _digest(x: np.ndarray) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(x.shape).encode())
    h.update(np.ascontiguousarray(x).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class SplitNetwork:
    """Deterministic trunk plus stochastic head; concatenation is the net."""

    net: Network
    split_index: int

    @property
    def trunk(self) -> list:
        return self.net.layers[: self.split_index]

    @property
    def head(self) -> list:
        return self.net.layers[self.split_index :]

    def run_trunk(self, x: np.ndarray) -> TrunkCache:
        """One deterministic pass up to the split point."""
        digest = _digest(x)
        for layer in self.trunk:
            x = layer.forward(x, MC, 0)
        return TrunkCache(activation=x, batch_digest=digest)

    def run_head(self, cache: TrunkCache, pass_seed: int) -> np.ndarray:
        """One stochastic head pass from the cached activation."""
        x = cache.activation
        for layer in self.head:
            x = layer.forward(x, MC, pass_seed)
        return x


def split(net: Network) -> SplitNetwork:
    """Partition at the first test-enabled dropout layer.

    Earlier dropout layers fall in the trunk and are inert in mc mode (their
    mc_enabled flag is false by construction of "first"), so the trunk is
    stochastic-free. Raises NoSplitPointError when no layer qualifies.
    """
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Dropout) and layer.mc_enabled:
            return SplitNetwork(net=net, split_index=i)
    raise NoSplitPointError("no split point: no test-enabled dropout layer")


def pass_seed(seed: int, k: int) -> int:
    """Seed for ensemble member k (1-based)."""
    return derive_seed(seed, "pass", k)


def mc_stream(sn: SplitNetwork, x: np.ndarray, K: int, seed: int = 0) -> Iterator[np.ndarray]:
    """Yield the K head outputs one at a time (constant memory in K)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    cache = sn.run_trunk(x)
    for k in range(1, K + 1):
        yield sn.run_head(cache, pass_seed(seed, k))


def mc_ensemble(sn: SplitNetwork, x: np.ndarray, K: int, seed: int = 0) -> np.ndarray:
    """(K, B, C) stack of softmax outputs, one per stochastic head pass.

    Element k is bit-identical to ``sn.net.forward(x, "mc", pass_seed(seed,
    k+1))``; the trunk is computed once and reused.
    """
    return np.stack(list(mc_stream(sn, x, K, seed)))


class BenchmarkResult(NamedTuple):
    trunk_seconds: float
    head_seconds: float
    ratio: float


def benchmark(sn: SplitNetwork, x: np.ndarray, passes: int = 10,
              warmup: int = 10) -> BenchmarkResult:
    """Median wall-clock seconds per trunk pass and per head pass.

    ``ratio`` is trunk over head: the factor saved on every pass after the
    first when the trunk activation is reused.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    for _ in range(warmup):
        cache = sn.run_trunk(x)
    trunk_times: List[float] = []
    for _ in range(passes):
        t0 = time.perf_counter()
        cache = sn.run_trunk(x)
        trunk_times.append(time.perf_counter() - t0)
    for k in range(warmup):
        sn.run_head(cache, pass_seed(0, k + 1))
    head_times: List[float] = []
    for k in range(passes):
        t0 = time.perf_counter()
        sn.run_head(cache, pass_seed(1, k + 1))
        head_times.append(time.perf_counter() - t0)
    trunk_med = median(trunk_times)
    head_med = median(head_times)
    return BenchmarkResult(trunk_med, head_med, trunk_med / head_med)
