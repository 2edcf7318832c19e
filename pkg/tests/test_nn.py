"""Layers, losses, models: finite-difference checks and loss oracles."""

import numpy as np
import pytest

from eegpipe import nn
from eegpipe.nn.gradcheck import relative_error
from eegpipe.nn.layers import (
    AddChannelAxis,
    AvgPool,
    BatchNorm,
    Concat,
    Conv1dTemporal,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    Elu,
    Flatten,
    Relu,
    SeparableConv2d,
    Sequential,
)
from eegpipe.nn.losses import kl_divergence, kl_grad_logits, kl_loss, softmax

F64 = np.float64


def random_targets(rng, n, k):
    p = rng.random((n, k))
    return p / p.sum(axis=1, keepdims=True)


def micro_net(layers):
    return Sequential(layers, topology="micro", dtype=F64)


def run_grad_check(model, x, rng, tol=1e-3, **kwargs):
    y = model.forward(x, train=True, rng=None)
    targets = random_targets(rng, y.shape[0], y.shape[1])
    err = nn.grad_check(model, x, targets, np.ones(y.shape[0]), **kwargs)
    assert err < tol, f"gradcheck error {err} >= {tol}"
    return err


# One micro-network per layer kind; parameter-free layers sit between
# trainable ones so their backward pass carries the gradient signal.
# The relu net draws from its own stream: seed 2 keeps every
# preactivation >0.37 away from the kink, far beyond the 1e-3
# finite-difference step.
def relu_case():
    r = np.random.default_rng(2)
    model = micro_net([Dense(5, 4, r, F64), Relu()])
    return "relu", model, r.standard_normal((3, 5))


def kind_cases(rng):
    return [
        ("dense",
         micro_net([Dense(5, 4, rng, F64)]),
         rng.standard_normal((3, 5))),
        ("conv2d",
         micro_net([Conv2d(2, 3, 3, 3, rng, F64, padding="same"),
                    Flatten()]),
         rng.standard_normal((2, 2, 5, 6))),
        ("depthwise_conv2d",
         micro_net([DepthwiseConv2d(2, 2, 3, 3, rng, F64, padding="valid"),
                    Flatten()]),
         rng.standard_normal((2, 2, 6, 6))),
        ("separable_conv2d",
         micro_net([SeparableConv2d(2, 3, 3, 3, rng, F64), Flatten()]),
         rng.standard_normal((2, 2, 5, 6))),
        ("conv1d_temporal",
         micro_net([Conv1dTemporal(3, 2, 5, rng, F64), Flatten()]),
         rng.standard_normal((2, 3, 12))),
        ("batchnorm",
         micro_net([Conv2d(2, 3, 1, 1, rng, F64), BatchNorm(3, F64),
                    Flatten()]),
         rng.standard_normal((4, 2, 3, 4))),
        ("elu",
         micro_net([Dense(5, 4, rng, F64), Elu()]),
         rng.standard_normal((3, 5))),
        relu_case(),
        ("avgpool",
         micro_net([Conv2d(1, 2, 3, 3, rng, F64, padding="same"),
                    AvgPool(2, 2), Flatten()]),
         rng.standard_normal((2, 1, 5, 9))),
        ("dropout",
         micro_net([Dense(5, 4, rng, F64, name="fc1"), Dropout(0.0),
                    Dense(4, 3, rng, F64, name="fc2")]),
         rng.standard_normal((3, 5))),
        ("flatten",
         micro_net([Conv2d(2, 2, 1, 1, rng, F64), Flatten()]),
         rng.standard_normal((2, 2, 3, 4))),
        ("add_channel_axis",
         micro_net([AddChannelAxis(), Conv2d(1, 2, 1, 3, rng, F64),
                    Flatten()]),
         rng.standard_normal((2, 3, 8))),
    ]


class TestLayerGradients:
    def test_every_layer_kind(self):
        rng = np.random.default_rng(11)
        covered = set()
        for kind, model, x in kind_cases(rng):
            run_grad_check(model, x, rng, tol=1e-3)
            covered |= {layer.kind for layer in model.layers}
        required = {
            "dense", "conv2d", "depthwise_conv2d", "separable_conv2d",
            "conv1d_temporal", "batchnorm", "elu", "relu", "avgpool",
            "dropout", "flatten",
        }
        assert required <= covered

    def test_batchnorm_dense_axes(self):
        rng = np.random.default_rng(3)
        model = micro_net([Dense(4, 3, rng, F64), BatchNorm(3, F64)])
        run_grad_check(model, rng.standard_normal((5, 4)), rng)

    def test_concat_through_multimodal(self):
        rng = np.random.default_rng(4)
        model = nn.build_multimodal(
            n_channels=4, n_samples=64, image_shape=(4, 16, 32),
            eegnet_kwargs=dict(f1=2, depth_mult=1, f2=2, temporal_k=8,
                               sep_k=4, dropout_p=0.0),
            conv_channels=(2, 2), seed=2, dtype="float64")
        assert model.concat.kind == "concat"
        xw = rng.standard_normal((2, 4, 64))
        xi = rng.standard_normal((2, 4, 16, 32))
        targets = random_targets(rng, 2, 6)
        err = nn.grad_check(model, (xw, xi), targets, np.ones(2),
                            max_evals=250, rng=np.random.default_rng(7))
        assert err < 1e-3

    def test_dense_only_mlp_tight(self):
        rng = np.random.default_rng(5)
        model = nn.build_mlp(input_dim=12, hidden=(9, 7), dropout_p=0.0,
                             seed=8, dtype="float64")
        x = rng.standard_normal((4, 12))
        targets = random_targets(rng, 4, 6)
        err = nn.grad_check(model, x, targets, np.ones(4))
        assert err < 1e-4

    def test_micro_eegnet(self):
        rng = np.random.default_rng(6)
        model = nn.build_eegnet(n_channels=4, n_samples=64, f1=2,
                                depth_mult=1, f2=2, temporal_k=8, sep_k=4,
                                dropout_p=0.0, seed=1, dtype="float64")
        x = rng.standard_normal((3, 4, 64))
        targets = random_targets(rng, 3, 6)
        err = nn.grad_check(model, x, targets, np.ones(3))
        assert err < 1e-3

    def test_zero_input_zero_params(self):
        rng = np.random.default_rng(7)
        model = micro_net([Conv2d(1, 2, 3, 3, rng, F64, padding="valid"),
                           Flatten()])
        model.layers[0].w.data[...] = 0.0
        x = np.zeros((2, 1, 5, 5))
        targets = random_targets(rng, 2, 18)
        err = nn.grad_check(model, x, targets, np.ones(2))
        assert err == 0.0

    def test_weighted_rows_scale_gradients(self):
        # Doubling one row's weight doubles its contribution exactly.
        rng = np.random.default_rng(8)
        model = micro_net([Dense(4, 6, rng, F64)])
        x = rng.standard_normal((2, 4))
        targets = random_targets(rng, 2, 6)
        err = nn.grad_check(model, x, targets, np.array([2.0, 0.5]))
        assert err < 1e-4

    def test_float32_model_rejected(self):
        rng = np.random.default_rng(9)
        model = nn.build_mlp(input_dim=4, hidden=(3, 3), dropout_p=0.0)
        with pytest.raises(ValueError, match="float64"):
            nn.grad_check(model, rng.standard_normal((2, 4)),
                          random_targets(rng, 2, 6), np.ones(2))

    def test_relative_error_definition(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1.0, 1.0) == 0.0
        np.testing.assert_allclose(relative_error(1.0, 2.0), 1.0 / 3.0)


class TestSoftmax:
    def test_zero_logits_uniform(self):
        q = softmax(np.zeros((2, 6)))
        np.testing.assert_array_equal(q, np.full((2, 6), 1.0 / 6.0))

    def test_shift_invariance(self):
        rng = np.random.default_rng(10)
        logits = rng.standard_normal((5, 6))
        shifted = logits + 37.5
        np.testing.assert_allclose(softmax(logits), softmax(shifted),
                                   rtol=0, atol=1e-12)

    def test_large_logit_stability(self):
        logits = np.zeros((1, 6))
        logits[0, 0] = 1000.0
        q = softmax(logits)
        assert np.all(np.isfinite(q))
        assert q[0, 0] > 1.0 - 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            q = softmax(rng.standard_normal((8, 6)) * 10.0)
            np.testing.assert_allclose(q.sum(axis=1), 1.0, rtol=0, atol=1e-6)
            assert np.all(q > 0)


class TestKlLoss:
    def test_identity_is_zero(self):
        rng = np.random.default_rng(12)
        p = random_targets(rng, 4, 6)
        assert kl_loss(p, p.copy(), np.ones(4)) == 0.0

    def test_one_hot_vs_uniform(self):
        p = np.zeros((1, 6))
        p[0, 0] = 1.0
        q = np.full((1, 6), 1.0 / 6.0)
        loss = kl_loss(p, q, np.ones(1))
        assert abs(loss - np.log(6.0)) < 1e-12

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            p = random_targets(rng, 5, 6)
            q = random_targets(rng, 5, 6)
            w = rng.uniform(0.1, 2.0, size=5)
            expected = 0.0
            for i in range(5):
                row = 0.0
                for j in range(6):
                    if p[i, j] > 0:
                        row += p[i, j] * np.log(p[i, j] / q[i, j])
                expected += w[i] * row
            expected /= w.sum()
            loss = kl_loss(p, q, w)
            np.testing.assert_allclose(loss, expected, rtol=1e-10)

    def test_nonnegative(self):
        rng = np.random.default_rng(14)
        for _ in range(200):
            p = random_targets(rng, 3, 6)
            q = random_targets(rng, 3, 6)
            assert kl_loss(p, q, np.ones(3)) >= -1e-9

    def test_zero_target_terms_dropped(self):
        p = np.array([[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]])
        q = np.array([[0.25, 0.25, 0.125, 0.125, 0.125, 0.125]])
        expected = 0.5 * np.log(2.0) * 2
        np.testing.assert_allclose(kl_loss(p, q, np.ones(1)), expected,
                                   rtol=1e-12)

    def test_unit_weights_match_plain_mean(self):
        rng = np.random.default_rng(15)
        p = random_targets(rng, 7, 6)
        q = random_targets(rng, 7, 6)
        weighted = kl_loss(p, q, np.ones(7))
        plain = float(np.mean(kl_divergence(p, q)))
        assert weighted == plain

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(16)
        logits = rng.standard_normal((3, 6))
        p = random_targets(rng, 3, 6)
        w = rng.uniform(0.5, 2.0, size=3)
        loss, grad = kl_grad_logits(p, logits, w)
        np.testing.assert_allclose(loss, kl_loss(p, softmax(logits), w),
                                   rtol=1e-12)
        eps = 1e-6
        for i in range(3):
            for j in range(6):
                up = logits.copy()
                up[i, j] += eps
                down = logits.copy()
                down[i, j] -= eps
                num = (kl_loss(p, softmax(up), w)
                       - kl_loss(p, softmax(down), w)) / (2 * eps)
                np.testing.assert_allclose(grad[i, j], num, atol=1e-8)

    def test_weight_validation(self):
        p = np.full((2, 6), 1.0 / 6.0)
        with pytest.raises(ValueError, match="weight"):
            kl_loss(p, p, np.ones(3))
        with pytest.raises(ValueError, match="weight"):
            kl_loss(p, p, np.zeros(2))


class TestForwardContracts:
    def test_zero_head_gives_uniform(self):
        model = nn.build_mlp(input_dim=10, hidden=(8, 8), dropout_p=0.0,
                             seed=0)
        params = model.params()
        params["head.w"].data[...] = 0.0
        params["head.b"].data[...] = 0.0
        x = np.random.default_rng(17).standard_normal((3, 10))
        q = softmax(model.forward(x))
        np.testing.assert_array_equal(q, np.full((3, 6), 1.0 / 6.0))

    def test_duplicated_rows_identical_logits(self):
        rng = np.random.default_rng(18)
        model = nn.build_eegnet(n_channels=4, n_samples=32, f1=2,
                                depth_mult=1, f2=2, temporal_k=8, sep_k=4,
                                dropout_p=0.0, seed=2)
        row = rng.standard_normal((4, 32)).astype(np.float32)
        batch = np.stack([row, row])
        logits = model.forward(batch)
        np.testing.assert_array_equal(logits[0], logits[1])

    def test_eval_mode_bit_identical(self):
        rng = np.random.default_rng(19)
        model = nn.build_eegnet(n_channels=4, n_samples=32, f1=2,
                                depth_mult=1, f2=2, temporal_k=8, sep_k=4,
                                dropout_p=0.25, seed=3)
        x = rng.standard_normal((2, 4, 32)).astype(np.float32)
        a = model.forward(x, train=False)
        b = model.forward(x, train=False)
        np.testing.assert_array_equal(a, b)

    def test_duplicating_batch_keeps_grads(self):
        rng = np.random.default_rng(20)
        model = micro_net([Dense(5, 6, rng, F64)])
        x = rng.standard_normal((3, 5))
        p = random_targets(rng, 3, 6)

        def grads_for(xb, pb):
            model.zero_grad()
            logits = model.forward(xb, train=True)
            _, dl = kl_grad_logits(pb, logits, np.ones(len(pb)))
            model.backward(dl)
            return model.params()["dense.w"].grad.copy()

        single = grads_for(x, p)
        doubled = grads_for(np.vstack([x, x]), np.vstack([p, p]))
        np.testing.assert_allclose(doubled, single, rtol=1e-12, atol=1e-15)

    def test_zero_input_column_kills_weight_row(self):
        rng = np.random.default_rng(21)
        model = micro_net([Dense(4, 6, rng, F64)])
        x = rng.standard_normal((5, 4))
        x[:, 2] = 0.0
        p = random_targets(rng, 5, 6)
        model.zero_grad()
        logits = model.forward(x, train=True)
        _, dl = kl_grad_logits(p, logits, np.ones(5))
        model.backward(dl)
        np.testing.assert_array_equal(model.params()["dense.w"].grad[2],
                                      np.zeros(6))

    def test_zero_image_branch_leaves_conv_grad_zero(self):
        rng = np.random.default_rng(22)
        model = nn.build_multimodal(
            n_channels=4, n_samples=32, image_shape=(4, 8, 16),
            eegnet_kwargs=dict(f1=2, depth_mult=1, f2=2, temporal_k=8,
                               sep_k=4, dropout_p=0.0),
            conv_channels=(2,), seed=5, dtype="float64")
        xw = rng.standard_normal((2, 4, 32))
        xi = np.zeros((2, 4, 8, 16))
        p = random_targets(rng, 2, 6)
        model.zero_grad()
        logits = model.forward((xw, xi), train=True)
        _, dl = kl_grad_logits(p, logits, np.ones(2))
        model.backward(dl)
        conv_w = model.params()["image.conv1.w"]
        np.testing.assert_array_equal(conv_w.grad, np.zeros_like(conv_w.grad))

    def test_shape_error_names_layer(self):
        model = nn.build_eegnet(n_channels=4, n_samples=32, f1=2,
                                depth_mult=1, f2=2, temporal_k=8, sep_k=4,
                                seed=0)
        with pytest.raises(ValueError, match="addaxis"):
            model.forward(np.zeros((2, 7, 32), dtype=np.float32))

    def test_backward_before_forward(self):
        rng = np.random.default_rng(23)
        layer = Dense(3, 2, rng, F64)
        with pytest.raises(RuntimeError, match="backward called before"):
            layer.backward(np.zeros((1, 2)))

    def test_dropout_needs_rng_in_train(self):
        layer = Dropout(0.5)
        with pytest.raises(ValueError, match="rng"):
            layer.forward(np.zeros((2, 3)), train=True, rng=None)

    def test_dropout_scales_kept_values(self):
        layer = Dropout(0.5)
        x = np.ones((4, 100))
        y = layer.forward(x, train=True, rng=np.random.default_rng(24))
        kept = y != 0
        np.testing.assert_array_equal(y[kept], np.full(kept.sum(), 2.0))
        np.testing.assert_array_equal(
            layer.forward(x, train=False, rng=None), x)

    def test_duplicate_layer_names_rejected(self):
        rng = np.random.default_rng(25)
        with pytest.raises(ValueError, match="duplicate"):
            Sequential([Dense(2, 2, rng, F64, name="a"),
                        Dense(2, 2, rng, F64, name="a")], topology="micro")

    def test_debug_flags_nonfinite(self):
        rng = np.random.default_rng(26)
        model = micro_net([Dense(2, 2, rng, F64)])
        model.params()["dense.w"].data[...] = np.inf
        with pytest.raises(FloatingPointError, match="dense"):
            model.forward(np.ones((1, 2)), debug=True)


class TestLayerSemantics:
    def test_elu_values(self):
        layer = Elu(alpha=1.0)
        x = np.array([[-2.0, -0.5, 0.0, 0.5, 2.0]])
        y = layer.forward(x, train=False, rng=None)
        expected = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
        np.testing.assert_allclose(y, expected, rtol=1e-15)

    def test_avgpool_drops_remainder(self):
        layer = AvgPool(2, 3)
        x = np.arange(2 * 1 * 5 * 7, dtype=np.float64).reshape(2, 1, 5, 7)
        y = layer.forward(x, train=False, rng=None)
        assert y.shape == (2, 1, 2, 2)
        manual = x[0, 0, 0:2, 0:3].mean()
        np.testing.assert_allclose(y[0, 0, 0, 0], manual)

    def test_batchnorm_train_normalizes_batch(self):
        rng = np.random.default_rng(27)
        layer = BatchNorm(3, F64)
        x = rng.standard_normal((64, 3, 4, 5)) * 3.0 + 1.5
        y = layer.forward(x, train=True, rng=None)
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_batchnorm_running_stats_update(self):
        rng = np.random.default_rng(28)
        layer = BatchNorm(2, F64, momentum=0.1)
        x = rng.standard_normal((32, 2))
        layer.forward(x, train=True, rng=None)
        np.testing.assert_allclose(layer.running_mean,
                                   0.1 * x.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(
            layer.running_var, 0.9 * 1.0 + 0.1 * x.var(axis=0), rtol=1e-12)

    def test_batchnorm_eval_uses_running_stats(self):
        layer = BatchNorm(2, F64)
        layer.running_mean[...] = (1.0, -1.0)
        layer.running_var[...] = (4.0, 0.25)
        x = np.array([[3.0, 0.0]])
        y = layer.forward(x, train=False, rng=None)
        inv = 1.0 / np.sqrt(np.array([4.0, 0.25]) + layer.eps)
        np.testing.assert_allclose(
            y, (x - np.array([1.0, -1.0])) * inv, rtol=1e-10)

    def test_concat_backward_splits(self):
        layer = Concat()
        a = np.ones((2, 3))
        b = np.full((2, 5), 2.0)
        y = layer.forward([a, b], train=False, rng=None)
        assert y.shape == (2, 8)
        da, db = layer.backward(np.arange(16, dtype=np.float64).reshape(2, 8))
        assert da.shape == (2, 3) and db.shape == (2, 5)
        np.testing.assert_array_equal(da[0], [0, 1, 2])
        np.testing.assert_array_equal(db[0], [3, 4, 5, 6, 7])


class TestModels:
    def test_eegnet_default_param_count(self):
        model = nn.build_eegnet()
        f1, d, f2, k_t, k_sep = 8, 2, 16, 64, 16
        n_ch, n_samples = 16, 10000
        feat = f2 * ((n_samples // 4) // 8)
        expected = (
            f1 * k_t            # temporal conv
            + 2 * f1            # bn1 gamma+beta
            + f1 * d * n_ch     # depthwise spatial
            + 2 * f1 * d        # bn2
            + f1 * d * k_sep    # separable depthwise
            + f1 * d * f2       # separable pointwise
            + 2 * f2            # bn3
            + feat * 6 + 6      # head
        )
        assert expected == 31318
        assert nn.count_params(model) == expected

    def test_eegnet_feature_dim_matches_forward(self):
        model = nn.build_eegnet(n_channels=4, n_samples=256, f1=2,
                                depth_mult=1, f2=4, temporal_k=8, sep_k=4,
                                include_head=False, seed=0)
        x = np.zeros((2, 4, 256), dtype=np.float32)
        feats = model.forward(x)
        assert feats.shape == (2, nn.eegnet_feature_dim(256, f2=4))

    def test_conv2d_branch_feature_dim(self):
        model = nn.build_conv2d_branch(in_channels=4, height=40, width=624,
                                       seed=0)
        x = np.zeros((1, 4, 40, 624), dtype=np.float32)
        feats = model.forward(x)
        assert feats.shape == (1, nn.conv2d_branch_feature_dim(40, 624))

    def test_param_names_unique_and_prefixed(self):
        model = nn.build_multimodal(
            n_channels=4, n_samples=32, image_shape=(4, 8, 16),
            eegnet_kwargs=dict(f1=2, depth_mult=1, f2=2, temporal_k=8,
                               sep_k=4),
            conv_channels=(2,), seed=0)
        names = list(model.params())
        assert len(names) == len(set(names))
        prefixes = {n.split(".", 1)[0] for n in names}
        assert prefixes == {"wave", "image", "head"}

    def test_outputs_are_distributions(self):
        rng = np.random.default_rng(29)
        model = nn.build_eegnet(n_channels=16, n_samples=10000, seed=0)
        x = rng.standard_normal((2, 16, 10000)).astype(np.float32)
        q = softmax(model.forward(x))
        assert q.shape == (2, 6)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, rtol=0, atol=1e-6)

    def test_unknown_dtype_rejected(self):
        with pytest.raises(KeyError):
            nn.build_mlp(input_dim=4, dtype="float16")


class TestCheckpoint:
    def test_roundtrip_bit_identical_forward(self, tmp_path):
        rng = np.random.default_rng(30)
        model = nn.build_eegnet(n_channels=4, n_samples=64, f1=2,
                                depth_mult=1, f2=2, temporal_k=8, sep_k=4,
                                dropout_p=0.25, seed=4)
        # Move batchnorm running stats off their init values first.
        x = rng.standard_normal((8, 4, 64)).astype(np.float32)
        model.forward(x, train=True, rng=np.random.default_rng(0))
        prefix = str(tmp_path / "ck")
        jp, bp = nn.save_checkpoint(model, prefix, extra_meta={"stage": 1})
        loaded = nn.load_checkpoint(prefix)
        assert loaded.topology == "eegnet"
        for name, p in model.params().items():
            np.testing.assert_array_equal(p.data, loaded.params()[name].data)
        for name, b in model.buffers().items():
            np.testing.assert_array_equal(b, loaded.buffers()[name])
        np.testing.assert_array_equal(model.forward(x), loaded.forward(x))

    def test_multimodal_roundtrip(self, tmp_path):
        model = nn.build_multimodal(
            n_channels=4, n_samples=32, image_shape=(4, 8, 16),
            eegnet_kwargs=dict(f1=2, depth_mult=1, f2=2, temporal_k=8,
                               sep_k=4),
            conv_channels=(2,), seed=6)
        prefix = str(tmp_path / "mm")
        nn.save_checkpoint(model, prefix)
        loaded = nn.load_checkpoint(prefix)
        xw = np.ones((1, 4, 32), dtype=np.float32)
        xi = np.ones((1, 4, 8, 16), dtype=np.float32)
        np.testing.assert_array_equal(model.forward((xw, xi)),
                                      loaded.forward((xw, xi)))

    def test_truncated_blob_rejected(self, tmp_path):
        model = nn.build_mlp(input_dim=4, hidden=(3, 3), seed=0)
        prefix = str(tmp_path / "bad")
        nn.save_checkpoint(model, prefix)
        blob = np.fromfile(prefix + ".f32", dtype="<f4")
        blob[:-5].tofile(prefix + ".f32")
        with pytest.raises(ValueError, match="declares"):
            nn.load_checkpoint(prefix)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            nn.load_checkpoint(str(tmp_path / "nope"))
