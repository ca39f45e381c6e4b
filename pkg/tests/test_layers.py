"""Layer math: golden forward, gradient checks, batch-norm and dropout behavior."""

import numpy as np
import pytest

from conftest import (assert_grads_close, build_tiny_net, central_diff_grads,
                      load_golden_tiny_net)
from reference_impl import ref_tiny_forward, tiny_golden_inputs
from splitdrop.layers import (INFER, MC, TRAIN, BatchNorm1d, Conv1d, Dense, Dropout,
                              GlobalAvgPool, NetSpec, Network, ReLU, ResidualBlock,
                              ShapeError, Softmax, build_network, default_widths)
from splitdrop.rngutil import derive_rng


class TestGoldenForward:
    def test_golden_file_matches_reference_recompute(self):
        # guards the committed file: regenerate the expectation from the
        # straight-line reference and compare
        x, params = tiny_golden_inputs()
        net, gx, expected = load_golden_tiny_net()
        assert np.array_equal(gx, x)
        np.testing.assert_allclose(ref_tiny_forward(x, params), expected, atol=1e-12)

    def test_network_forward_matches_golden(self):
        net, x, expected = load_golden_tiny_net()
        out = net.forward(x, INFER, 0)
        np.testing.assert_allclose(out, expected, atol=5e-6)

    def test_infer_mode_ignores_seed(self):
        net, x, _ = load_golden_tiny_net()
        assert np.array_equal(net.forward(x, INFER, 1), net.forward(x, INFER, 999))


class TestForwardBasics:
    def test_softmax_rows_sum_to_one_in_f32(self):
        net = build_tiny_net()
        x = derive_rng(0, "x").standard_normal((8, 2, 32)).astype(np.float32) * 5
        out = net.forward(x, INFER, 0)
        assert out.dtype == np.float32
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_forward_deterministic_bitwise(self):
        net = build_tiny_net()
        x = derive_rng(1, "x").standard_normal((4, 2, 32)).astype(np.float32)
        for mode, seed in ((INFER, 0), (MC, 7), (TRAIN, 3)):
            a = net.forward(x, mode, seed)
            b = net.forward(x, mode, seed)
            assert np.array_equal(a, b), mode

    def test_zero_final_fc_gives_uniform(self):
        net = build_tiny_net()
        fc = net.layers[-2]
        fc.w[:] = 0.0
        fc.b[:] = 0.0
        x = derive_rng(2, "x").standard_normal((5, 2, 32)).astype(np.float32)
        np.testing.assert_allclose(net.forward(x, INFER, 0), 1 / 3, atol=1e-7)

    def test_shape_mismatch_raises(self):
        net = build_tiny_net()
        with pytest.raises(ShapeError):
            net.forward(np.zeros((2, 3, 32), dtype=np.float32), INFER, 0)
        with pytest.raises(ShapeError):
            net.forward(np.zeros((2, 2), dtype=np.float32), INFER, 0)

    def test_unknown_mode_rejected(self):
        net = build_tiny_net()
        with pytest.raises(ValueError):
            net.forward(np.zeros((2, 2, 8), dtype=np.float32), "test", 0)


class TestDropout:
    def test_rate_zero_is_identity_any_seed(self):
        layer = Dropout(0.0, name="d")
        x = derive_rng(3, "x").standard_normal((4, 8)).astype(np.float32)
        for seed in (0, 1, 2):
            assert np.array_equal(layer.forward(x, MC, seed), x)

    def test_disabled_modes_are_identity(self):
        layer = Dropout(0.5, mc_enabled=False, name="d")
        x = derive_rng(4, "x").standard_normal((4, 8)).astype(np.float32)
        assert np.array_equal(layer.forward(x, MC, 5), x)
        assert np.array_equal(layer.forward(x, INFER, 5), x)
        assert not np.array_equal(layer.forward(x, TRAIN, 5), x)

    def test_mask_depends_only_on_seed_and_name(self):
        a = Dropout(0.5, name="d")
        b = Dropout(0.5, name="d")
        x = np.ones((6, 10), dtype=np.float32)
        assert np.array_equal(a.forward(x, MC, 42), b.forward(x, MC, 42))
        c = Dropout(0.5, name="other")
        assert not np.array_equal(a.forward(x, MC, 42), c.forward(x, MC, 42))

    def test_surviving_activations_scaled(self):
        layer = Dropout(0.25, name="d")
        x = np.ones((100, 100), dtype=np.float32)
        y = layer.forward(x, TRAIN, 0)
        kept = y[y > 0]
        np.testing.assert_allclose(kept, 1.0 / 0.75, atol=1e-6)

    def test_inverted_dropout_expectation_linear_head(self):
        # dropout + dense with no relu: the seed-averaged mc output converges
        # to the disabled-mode output (inverted scaling makes it unbiased)
        rng = derive_rng(5, "x")
        drop = Dropout(0.5, name="d")
        dense = Dense(16, 4, name="fc", rng=derive_rng(5, "w"))
        x = rng.standard_normal((3, 16)).astype(np.float32)
        exact = dense.forward(drop.forward(x, INFER, 0), INFER, 0)
        n_seeds = 4000
        acc = np.zeros_like(exact, dtype=np.float64)
        samples = np.empty((n_seeds,) + exact.shape)
        for s in range(n_seeds):
            samples[s] = dense.forward(drop.forward(x, MC, s), MC, s)
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / np.sqrt(n_seeds)
        assert np.all(np.abs(mean - exact) <= 3 * se + 1e-9)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            Dropout(1.0)
        with pytest.raises(ValueError):
            Dropout(-0.1)


class TestBatchNorm:
    def test_frozen_unit_stats_identity(self):
        bn = BatchNorm1d(3, name="bn")
        x = derive_rng(6, "x").standard_normal((4, 3, 10)).astype(np.float32)
        np.testing.assert_allclose(bn.forward(x, INFER, 0), x, rtol=1e-4, atol=1e-5)

    def test_training_normalizes_batch(self):
        bn = BatchNorm1d(3, name="bn")
        x = (derive_rng(7, "x").standard_normal((8, 3, 20)) * 3 + 5).astype(np.float32)
        y = bn.forward(x, TRAIN, 0)
        np.testing.assert_allclose(y.mean(axis=(0, 2)), 0.0, atol=1e-5)
        np.testing.assert_allclose(y.var(axis=(0, 2)), 1.0, atol=1e-4)

    def test_running_stats_two_step_hand_computation(self):
        bn = BatchNorm1d(2, momentum=0.1, name="bn")
        rng = derive_rng(8, "x")
        b1 = rng.standard_normal((4, 2, 6)).astype(np.float32)
        b2 = rng.standard_normal((4, 2, 6)).astype(np.float32)
        n = 4 * 6
        rm, rv = np.zeros(2), np.ones(2)
        for b in (b1, b2):
            mu = b.mean(axis=(0, 2))
            var = b.var(axis=(0, 2)) * n / (n - 1)
            rm = 0.9 * rm + 0.1 * mu
            rv = 0.9 * rv + 0.1 * var
            bn.forward(b, TRAIN, 0)
        np.testing.assert_allclose(bn.running_mean, rm, rtol=1e-5)
        np.testing.assert_allclose(bn.running_var, rv, rtol=1e-5)

    def test_inference_is_batch_independent(self):
        bn = BatchNorm1d(2, name="bn")
        bn.running_mean[:] = [0.5, -0.2]
        bn.running_var[:] = [2.0, 0.7]
        x = derive_rng(9, "x").standard_normal((6, 2, 5)).astype(np.float32)
        full = bn.forward(x, INFER, 0)
        for i in range(6):
            row = bn.forward(x[i : i + 1], INFER, 0)
            assert np.array_equal(row[0], full[i])

    def test_batch_of_one_rejected_in_training(self):
        bn = BatchNorm1d(2, name="bn")
        with pytest.raises(ValueError, match="batch size"):
            bn.forward(np.zeros((1, 2, 8), dtype=np.float32), TRAIN, 0)


# ---------------------------------------------------------------------------
# gradient checks

def layer_loss_grads(layer, x, dy_weights, mode=TRAIN, seed=3, state_arrays=()):
    """Scalar loss sum(y * dy_weights); returns analytic grads and a loss fn."""
    snapshots = [(arr, arr.copy()) for arr in state_arrays]

    def loss():
        for arr, snap in snapshots:
            arr[:] = snap
        return float((layer.forward(x, mode, seed) * dy_weights).sum())

    for arr, snap in snapshots:
        arr[:] = snap
    cache = {}
    y = layer.forward(x, mode, seed, cache)
    dx, grads = layer.backward(dy_weights.astype(y.dtype), cache)
    return loss, dx, grads


LAYER_CASES = [
    ("conv3", lambda rng: Conv1d(3, 5, 3, name="c", rng=rng, dtype=np.float64), (2, 3, 11), (2, 5, 11)),
    ("conv1_nobias", lambda rng: Conv1d(3, 4, 1, bias=False, name="c", rng=rng, dtype=np.float64), (2, 3, 9), (2, 4, 9)),
    ("bn", lambda rng: BatchNorm1d(4, name="b", dtype=np.float64), (3, 4, 7), (3, 4, 7)),
    ("relu", lambda rng: ReLU(), (3, 4, 7), (3, 4, 7)),
    ("pool", lambda rng: GlobalAvgPool(), (3, 4, 7), (3, 4)),
    ("dense", lambda rng: Dense(6, 4, name="f", rng=rng, dtype=np.float64), (3, 6), (3, 4)),
    ("dropout", lambda rng: Dropout(0.4, name="d"), (3, 8), (3, 8)),
    ("softmax", lambda rng: Softmax(), (3, 5), (3, 5)),
    ("resblock_same", lambda rng: ResidualBlock(4, 4, name="r", rng=rng, dtype=np.float64), (2, 4, 9), (2, 4, 9)),
    ("resblock_proj", lambda rng: ResidualBlock(3, 5, name="r", rng=rng, dtype=np.float64), (2, 3, 9), (2, 5, 9)),
]


@pytest.mark.parametrize("name,make,shape,out_shape", LAYER_CASES, ids=[c[0] for c in LAYER_CASES])
def test_layer_gradients_match_finite_differences(name, make, shape, out_shape):
    rng = derive_rng(17, name)
    layer = make(rng)
    x = rng.standard_normal(shape)
    dy = rng.standard_normal(out_shape)
    state = [arr for _, arr in layer.state()]
    loss, dx, grads = layer_loss_grads(layer, x, dy, state_arrays=state)

    num_dx = central_diff_grads(lambda: _loss_wrt_input(layer, x, dy, state), x)
    assert_grads_close(dx, num_dx)
    for p, g in grads:
        assert_grads_close(g, central_diff_grads(loss, p))


def _loss_wrt_input(layer, x, dy, state_arrays):
    snapshots = [(arr, arr.copy()) for arr in state_arrays]

    def fn():
        for arr, snap in snapshots:
            arr[:] = snap
        return float((layer.forward(x, TRAIN, 3) * dy).sum())

    return fn()


def test_composed_network_gradients():
    spec = NetSpec(widths=(3,), n_classes=3, in_ch=2, dropout_rate=0.3)
    net = build_network(spec, seed=1, dtype=np.float64)
    rng = derive_rng(18, "x")
    x = rng.standard_normal((4, 2, 12))
    targets = np.array([0, 1, 2, 1])
    _, grads, _ = net.loss_and_grads(x, targets, TRAIN, seed=11)
    snapshots = [(arr, arr.copy()) for _, arr in net.state()]

    def loss():
        for arr, snap in snapshots:
            arr[:] = snap
        l, _, _ = net.loss_and_grads(x, targets, TRAIN, seed=11)
        return l

    checked = 0
    for p, g in grads:
        flat, gflat = p.ravel(), np.asarray(g).ravel()
        idx = rng.choice(flat.size, size=min(4, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + 1e-3
            lp = loss()
            flat[i] = orig - 1e-3
            lm = loss()
            flat[i] = orig
            fd = (lp - lm) / 2e-3
            assert_grads_close(np.array([gflat[i]]), np.array([fd]))
            checked += 1
    assert checked >= 30


def test_uniform_output_loss_is_log_c():
    net = build_tiny_net(dropout_rate=0.0)
    fc = net.layers[-2]
    fc.w[:] = 0.0
    fc.b[:] = 0.0
    x = derive_rng(19, "x").standard_normal((6, 2, 16)).astype(np.float32)
    loss, _, _ = net.loss_and_grads(x, np.zeros(6, dtype=np.int64), INFER, 0)
    assert loss == pytest.approx(np.log(3), abs=1e-6)


def test_softmax_cross_entropy_logit_gradient_identity():
    # d(CE)/d(logits) = softmax - one_hot, verified by finite differences
    rng = derive_rng(20, "x")
    logits = rng.standard_normal((3, 5))
    target = np.array([1, 4, 0])

    def ce(z):
        zz = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(zz).sum(axis=1))
        return float(np.mean(lse - zz[np.arange(3), target]))

    soft = np.exp(logits - logits.max(axis=1, keepdims=True))
    soft /= soft.sum(axis=1, keepdims=True)
    analytic = soft.copy()
    analytic[np.arange(3), target] -= 1.0
    analytic /= 3

    numeric = np.zeros_like(logits)
    eps = 1e-6
    for i in range(logits.shape[0]):
        for j in range(logits.shape[1]):
            zp, zm = logits.copy(), logits.copy()
            zp[i, j] += eps
            zm[i, j] -= eps
            numeric[i, j] = (ce(zp) - ce(zm)) / (2 * eps)
    np.testing.assert_allclose(analytic, numeric, atol=1e-8)


def test_targets_validated():
    net = build_tiny_net()
    x = np.zeros((2, 2, 8), dtype=np.float32)
    with pytest.raises(ShapeError):
        net.loss_and_grads(x, np.array([0, 3]), TRAIN, 0)  # class 3 of 3


class TestNetSpec:
    def test_default_widths_reference_16(self):
        assert default_widths(16, 16, 4, 128) == (16, 16, 32, 32, 64, 64, 128, 128)

    def test_default_widths_desk_8(self):
        assert default_widths(8, 16, 2, 64) == (16, 32, 64, 64)

    def test_odd_conv_count_rejected(self):
        with pytest.raises(ValueError):
            default_widths(7)

    def test_spec_roundtrip(self):
        spec = NetSpec(widths=(4, 8), n_classes=5, dropout_rate=0.3)
        assert NetSpec.from_dict(spec.to_dict()) == spec

    def test_reference_16_layer_count(self):
        spec = NetSpec(widths=default_widths(16), n_classes=44)
        net = build_network(spec, seed=0)
        assert spec.n_conv == 16
        blocks = [l for l in net.layers if isinstance(l, ResidualBlock)]
        assert len(blocks) == 8
        main_convs = sum(2 for _ in blocks)
        assert main_convs == 16

    def test_duplicate_names_rejected(self):
        layers = [Dense(4, 4, name="fc"), Dense(4, 4, name="fc"), Softmax()]
        with pytest.raises(ValueError, match="duplicate"):
            Network(layers)
