"""Architecture tests: published layouts, fusion invariants, reductions."""

import numpy as np
import pytest

from mamc.archs import (
    MVCNN,
    WLCNN,
    BaseCNN,
    CoAMC,
    ResidualBlock,
    WeightLearningModule,
    build_model,
    coamc_predict,
    parameter_count,
    view_pool_max,
)
from mamc.gradcheck import grad_check
from mamc.optim import adam_step
from mamc.tensor import Tensor, no_grad, softmax_cross_entropy


def make_models(n_classes=4, width=0.25, frame_len=128, n_antennas=2, seed=0,
                dtype=np.float32):
    rng = np.random.default_rng(seed)
    base = BaseCNN(n_classes, width, rng=rng, dtype=dtype)
    wlm = WeightLearningModule(frame_len, width, rng=rng, dtype=dtype)
    return base, wlm, MVCNN(base, n_antennas), WLCNN(base, wlm, n_antennas), CoAMC(base, n_antennas)


def warm_up(model_or_base, x):
    """One train-mode pass so batch-norm running stats exist for eval."""
    with no_grad():
        if isinstance(model_or_base, BaseCNN):
            model_or_base.forward(Tensor(x), "train")
        else:
            model_or_base.forward(Tensor(x), "train")


class TestResidualBlock:
    def test_identity_shape(self):
        rng = np.random.default_rng(0)
        block = ResidualBlock(64, 64, 1, rng=rng)
        x = Tensor(rng.standard_normal((2, 64, 1, 128)).astype(np.float32))
        assert block(x, "train").shape == (2, 64, 1, 128)
        assert block.proj_conv is None

    def test_downsampling_shape(self):
        rng = np.random.default_rng(1)
        block = ResidualBlock(64, 128, 2, rng=rng)
        x = Tensor(rng.standard_normal((2, 64, 1, 128)).astype(np.float32))
        assert block(x, "train").shape == (2, 128, 1, 64)
        assert block.proj_conv is not None

    def test_zeroed_main_path_passes_input_through_relu(self):
        rng = np.random.default_rng(2)
        block = ResidualBlock(8, 8, 1, rng=rng, dtype=np.float64)
        block.conv2.weight.data[:] = 0.0
        x = rng.standard_normal((4, 8, 1, 16))
        out = block(Tensor(x), "train")
        np.testing.assert_allclose(out.data, np.maximum(x, 0.0), atol=1e-12)


class TestBaseCnnLayout:
    def test_published_shapes_at_nominal_width(self):
        rng = np.random.default_rng(3)
        base = BaseCNN(20, 1.0, rng=rng)
        x = Tensor(rng.standard_normal((1, 1, 2, 512)).astype(np.float32))
        record = []
        base.forward(x, "train", record=record)
        shapes = dict(record)
        assert shapes["stem"] == (1, 64, 1, 256)
        assert shapes["stem_pool"] == (1, 64, 1, 128)
        for i in range(3):
            assert shapes[f"stage1.block{i}"] == (1, 64, 1, 128)
        for i in range(4):
            assert shapes[f"stage2.block{i}"] == (1, 128, 1, 64)
        for i in range(6):
            assert shapes[f"stage3.block{i}"] == (1, 256, 1, 32)
        for i in range(3):
            assert shapes[f"stage4.block{i}"] == (1, 512, 1, 16)
        assert shapes["avg_pool"] == (1, 512, 1, 1)
        assert shapes["fc"] == (1, 20)

    def test_wlm_published_shapes(self):
        rng = np.random.default_rng(4)
        wlm = WeightLearningModule(512, 1.0, rng=rng)
        x = Tensor(rng.standard_normal((1, 1, 2, 512)).astype(np.float32))
        record = []
        wlm.forward(x, "train", record=record)
        shapes = dict(record)
        assert shapes["conv"] == (1, 16, 1, 256)
        assert shapes["block0"] == (1, 16, 1, 128)
        assert shapes["block1"] == (1, 16, 1, 64)
        assert shapes["block2"] == (1, 16, 1, 32)
        assert shapes["fc"] == (1, 1)

    def test_parameter_counts(self):
        rng = np.random.default_rng(5)
        base = BaseCNN(20, 1.0, rng=rng)
        count = parameter_count(base)
        assert abs(count - 7.23e6) / 7.23e6 < 0.05

        wlm = WeightLearningModule(512, 1.0, rng=rng)

        class Wrapper:
            def named_parameters(self):
                return wlm.named_parameters()

        wlm_count = parameter_count(Wrapper())
        assert abs(wlm_count - 6.34e3) / 6.34e3 < 0.10

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(6)
        base = BaseCNN(20, 0.125, rng=rng)
        x = Tensor(rng.standard_normal((5, 1, 2, 64)).astype(np.float32))
        probs = base.forward_proba(x, "train")
        assert probs.shape == (5, 20)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)

    def test_wrong_input_shape_rejected(self):
        rng = np.random.default_rng(7)
        base = BaseCNN(4, 0.125, rng=rng)
        with pytest.raises(ValueError, match="expected input"):
            base.forward(Tensor(np.zeros((2, 3, 2, 64), dtype=np.float32)), "train")


class TestViewPoolMax:
    def test_elementwise_maximum(self):
        a = Tensor(np.array([[1.0, -2.0]]))
        b = Tensor(np.array([[0.0, 5.0]]))
        out = view_pool_max([a, b])
        np.testing.assert_array_equal(out.data, [[1.0, 5.0]])

    def test_single_branch_identity(self):
        a = Tensor(np.array([[3.0, 1.0]]))
        assert view_pool_max([a]) is a

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        branches = [Tensor(rng.standard_normal((2, 3, 1, 4))) for _ in range(4)]
        fwd = view_pool_max(list(branches)).data
        rev = view_pool_max(list(reversed(branches))).data
        np.testing.assert_array_equal(fwd, rev)

    def test_dominates_every_input(self):
        rng = np.random.default_rng(9)
        branches = [Tensor(rng.standard_normal((2, 3, 1, 4))) for _ in range(3)]
        out = view_pool_max(branches).data
        for branch in branches:
            assert np.all(out >= branch.data)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            view_pool_max([])


class TestSingleAntennaReduction:
    def test_all_architectures_bit_exact(self):
        base, wlm, mv, wl, co = make_models(n_antennas=1)
        x = np.random.default_rng(10).standard_normal((6, 1, 2, 128)).astype(np.float32)
        warm_up(base, x)
        with no_grad():
            wlm.forward(Tensor(x), "train")
        reference = base.predict_proba(x)
        for model in (mv, wl, co):
            np.testing.assert_array_equal(model.predict_proba(x), reference)


class TestMVCNN:
    def test_antenna_permutation_invariance(self):
        base, _, mv, _, _ = make_models(n_antennas=3)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((4, 3, 2, 128)).astype(np.float32)
        warm_up(base, x[:, 0:1])
        probs = mv.predict_proba(x)
        for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
            permuted = mv.predict_proba(x[:, perm])
            np.testing.assert_allclose(permuted, probs, atol=1e-5)

    def test_antenna_count_mismatch(self):
        _, _, mv, _, _ = make_models(n_antennas=2)
        with pytest.raises(ValueError, match="antennas"):
            mv.forward(Tensor(np.zeros((2, 3, 2, 128), dtype=np.float32)), "train")

    def test_gradcheck_through_view_pooling(self):
        rng = np.random.default_rng(12)
        base = BaseCNN(3, 0.125, rng=rng, dtype=np.float64)
        mv = MVCNN(base, 2)
        x = Tensor(rng.standard_normal((2, 2, 2, 64)), requires_grad=True)
        labels = np.array([0, 2])

        def f():
            return softmax_cross_entropy(mv.forward(x, "train"), labels)

        leaves = [("input", x)]
        leaves += [(n, p.tensor) for n, p in mv.named_parameters()]
        report = grad_check(f, leaves, max_entries=3, rng=np.random.default_rng(0))
        assert report.ok, "\n" + "\n".join(
            f"{e.name}: {e.max_rel_err:.2e}" for e in report.failures()
        )


class TestWLCNN:
    def test_identical_signals_give_uniform_weights(self):
        base, wlm, _, wl, _ = make_models(n_antennas=4)
        rng = np.random.default_rng(13)
        one = rng.standard_normal((3, 1, 2, 128)).astype(np.float32)
        x = np.repeat(one[:, None, 0:1], 4, axis=1).reshape(3, 4, 2, 128)
        x = np.ascontiguousarray(x)
        weights = wl.antenna_weights(Tensor(x), "train").data
        np.testing.assert_allclose(weights, 0.25, atol=1e-6)

    def test_weights_sum_to_one(self):
        # the 1e-9 budget needs float64; float32 rounds at ~1e-7
        base, wlm, _, wl, _ = make_models(n_antennas=3, dtype=np.float64)
        rng = np.random.default_rng(14)
        x = rng.standard_normal((8, 3, 2, 128))
        weights = wl.antenna_weights(Tensor(x), "train").data
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(weights > 0.0) and np.all(weights < 1.0)

    def test_joint_permutation_invariance(self):
        base, wlm, _, wl, _ = make_models(n_antennas=3)
        rng = np.random.default_rng(15)
        x = rng.standard_normal((4, 3, 2, 128)).astype(np.float32)
        warm_up(base, x[:, 0:1])
        with no_grad():
            wlm.forward(Tensor(x[:, 0:1]), "train")
        probs = wl.predict_proba(x)
        permuted = wl.predict_proba(x[:, [2, 0, 1]])
        np.testing.assert_allclose(permuted, probs, atol=1e-5)

    def test_end_to_end_gradcheck_including_weight_path(self):
        rng = np.random.default_rng(16)
        base = BaseCNN(3, 0.125, rng=rng, dtype=np.float64)
        wlm = WeightLearningModule(64, 0.125, rng=rng, dtype=np.float64)
        wl = WLCNN(base, wlm, 2)
        x = Tensor(rng.standard_normal((2, 2, 2, 64)), requires_grad=True)
        labels = np.array([1, 0])

        def f():
            return softmax_cross_entropy(wl.forward(x, "train"), labels)

        leaves = [("input", x)]
        leaves += [(n, p.tensor) for n, p in wl.named_parameters()]
        report = grad_check(f, leaves, max_entries=3, rng=np.random.default_rng(1))
        assert report.ok, "\n" + "\n".join(
            f"{e.name}: {e.max_rel_err:.2e}" for e in report.failures()
        )

    def test_weight_path_gradient_nonzero(self):
        rng = np.random.default_rng(17)
        base = BaseCNN(3, 0.125, rng=rng)
        wlm = WeightLearningModule(64, 0.125, rng=rng)
        wl = WLCNN(base, wlm, 2)
        x = Tensor(rng.standard_normal((4, 2, 2, 64)).astype(np.float32))
        loss = softmax_cross_entropy(wl.forward(x, "train"), np.array([0, 1, 2, 0]))
        loss.backward()
        wlm_grads = [p.grad for n, p in wlm.named_parameters() if p.grad is not None]
        total = sum(float(np.abs(g).sum()) for g in wlm_grads)
        assert total > 0.0


class TestCoAMC:
    def test_hand_computed_average_and_decision(self):
        # two branches [0.6, 0.4] and [0.2, 0.8] average to [0.4, 0.6]
        p1, p2 = np.array([0.6, 0.4]), np.array([0.2, 0.8])
        avg = (p1 + p2) / 2.0
        np.testing.assert_allclose(avg, [0.4, 0.6])
        assert int(np.argmax(avg)) == 1

    def test_averaged_rows_sum_to_one(self):
        base, _, _, _, co = make_models(n_antennas=3, n_classes=5)
        rng = np.random.default_rng(18)
        x = rng.standard_normal((6, 3, 2, 128)).astype(np.float32)
        warm_up(base, x[:, 0:1])
        probs, decisions = co.predict(x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert decisions.shape == (6,)

    def test_matches_brute_force_recomputation(self):
        base, _, _, _, co = make_models(n_antennas=4, n_classes=4)
        rng = np.random.default_rng(19)
        x = rng.standard_normal((10, 4, 2, 128)).astype(np.float32)
        warm_up(base, x[:, 0:1])
        probs, decisions = co.predict(x)
        # independent recomputation: per-antenna forward, mean, argmax
        per_antenna = np.stack(
            [base.predict_proba(x[:, a : a + 1]) for a in range(4)], axis=1
        )
        expected = per_antenna.mean(axis=1)
        np.testing.assert_array_equal(probs, expected.astype(probs.dtype))
        np.testing.assert_array_equal(decisions, np.argmax(expected, axis=1))

    def test_functional_form_agrees(self):
        base, _, _, _, co = make_models(n_antennas=2)
        rng = np.random.default_rng(20)
        x = rng.standard_normal((4, 2, 2, 128)).astype(np.float32)
        warm_up(base, x[:, 0:1])
        p1, d1 = co.predict(x)
        p2, d2 = coamc_predict(x, base, 2)
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(d1, d2)


class TestWeightSharing:
    def test_branches_share_storage_after_update(self):
        base, wlm, mv, wl, _ = make_models(n_antennas=2)
        rng = np.random.default_rng(21)
        x = Tensor(rng.standard_normal((4, 2, 2, 128)).astype(np.float32))
        loss = softmax_cross_entropy(mv.forward(x, "train"), np.array([0, 1, 2, 3]))
        loss.backward()
        adam_step(list(mv.named_parameters()), 1e-3)
        # the fused model's parameters ARE the base network's parameters
        base_params = dict(base.named_parameters())
        for name, p in mv.named_parameters():
            assert p is base_params[name]

    def test_wlcnn_shares_base_parameters(self):
        base, wlm, _, wl, _ = make_models(n_antennas=2)
        base_ids = {id(p) for _, p in base.named_parameters()}
        shared = [p for _, p in wl.named_parameters() if id(p) in base_ids]
        assert len(shared) == len(base_ids)


class TestBuildModel:
    def test_arch_keys(self):
        for arch, cls in [
            ("base", BaseCNN),
            ("mvcnn", MVCNN),
            ("wlcnn", WLCNN),
            ("coamc", CoAMC),
        ]:
            n_antennas = 1 if arch == "base" else 2
            model = build_model(
                arch, n_classes=4, n_antennas=n_antennas, frame_len=64, width=0.125
            )
            assert isinstance(model, cls)

    def test_unknown_arch(self):
        with pytest.raises(ValueError, match="unknown arch"):
            build_model("resnet", n_classes=4, n_antennas=1, frame_len=64)

    def test_base_requires_single_antenna(self):
        with pytest.raises(ValueError, match="n_antennas"):
            build_model("base", n_classes=4, n_antennas=2, frame_len=64)
