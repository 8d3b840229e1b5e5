"""Model tests: forward contract, gradient oracles, training, checkpoints."""

import numpy as np
import pytest

from roboface.arkit import BLINK_NAMES, canonical_index
from roboface.lbs import BlendshapeBasis, FaceMesh, LbsRig, MotionSequence, apply_skinning
from roboface.motionnet import (
    AdamState,
    ModelParams,
    TrainConfig,
    TrainingSample,
    backward,
    cast_params,
    forward,
    human_decode,
    init_params,
    load_model,
    loss,
    named_arrays,
    save_model,
    synth_augment_blinks,
    train,
    training_loss,
)


def tiny_rig(seed=0):
    """V=5 vertices, B=3 blendshapes, mouth mask of two vertices."""
    rng = np.random.default_rng(seed)
    fields = tuple(rng.uniform(-1.0, 1.0, 15) for _ in range(3))
    return LbsRig(
        mesh=FaceMesh(rng.uniform(-3.0, 3.0, 15)),
        basis=BlendshapeBasis(("a", "b", "c"), fields),
        mouth_mask=np.array([1, 3]),
    )


def tiny_params(seed=1):
    return init_params(
        seed, window_size=4, hidden_size=4, style_count=3, output_size=3, class_count=6
    )


def tiny_sample(rig, seed=2, style_id=1):
    rng = np.random.default_rng(seed)
    return TrainingSample(
        window=rng.uniform(-2.0, 2.0, (4, 6)),
        style_id=style_id,
        target_vertices=rig.mesh.positions + rng.uniform(-0.5, 0.5, 15),
    )


class TestInit:
    def test_block_count_is_log2_window(self):
        assert len(init_params(0, window_size=8, hidden_size=4).blocks) == 3
        assert len(tiny_params().blocks) == 2

    def test_first_block_maps_class_count(self):
        params = init_params(0, window_size=8, hidden_size=5, class_count=392)
        assert params.blocks[0].conv1_weight.shape == (5, 392, 3)
        assert params.blocks[1].conv1_weight.shape == (5, 5, 3)

    def test_biases_and_style_start_zero(self):
        params = tiny_params()
        assert not params.head1_bias.any()
        assert not params.blocks[0].conv1_bias.any()
        assert not params.style_table.any()

    def test_rejects_non_power_of_two_window(self):
        with pytest.raises(ValueError, match="power of two"):
            init_params(0, window_size=6)

    def test_seeded_init_reproducible(self):
        a = dict(named_arrays(tiny_params(seed=9)))
        b = dict(named_arrays(tiny_params(seed=9)))
        for name in a:
            assert a[name].tobytes() == b[name].tobytes()


class TestForward:
    def test_zero_weights_give_half(self):
        params = tiny_params()
        for _, array in named_arrays(params):
            array[...] = 0.0
        theta = forward(params, np.ones((4, 6)), 0)
        np.testing.assert_array_equal(theta.values, np.full(3, 0.5))

    def test_eval_mode_deterministic(self):
        params = tiny_params()
        window = np.random.default_rng(3).normal(0.0, 1.0, (4, 6))
        a = forward(params, window, 1)
        b = forward(params, window, 1)
        assert a.values.tobytes() == b.values.tobytes()

    def test_outputs_strictly_inside_unit_interval(self):
        params = tiny_params()
        window = np.random.default_rng(4).normal(0.0, 3.0, (4, 6))
        theta = forward(params, window, 0).values
        assert (theta > 0.0).all() and (theta < 1.0).all()

    def test_style_separation(self):
        params = tiny_params()
        params.style_table[...] = np.random.default_rng(5).uniform(
            -0.5, 0.5, params.style_table.shape
        )
        window = np.random.default_rng(6).normal(0.0, 1.0, (4, 6))
        a = forward(params, window, 0).values
        b = forward(params, window, 1).values
        assert (a != b).any()

    def test_style_out_of_range(self):
        params = tiny_params()
        with pytest.raises(ValueError, match="style_id"):
            forward(params, np.zeros((4, 6)), 3)
        with pytest.raises(ValueError, match="style_id"):
            forward(params, np.zeros((4, 6)), -1)

    def test_bad_window_shape(self):
        with pytest.raises(ValueError, match="shape"):
            forward(tiny_params(), np.zeros((8, 6)), 0)

    def test_bad_mode(self):
        with pytest.raises(ValueError, match="mode"):
            forward(tiny_params(), np.zeros((4, 6)), 0, mode="predict")

    def test_train_mode_dropout_scales(self):
        # With rate just under 1 almost every hidden unit drops, pulling the
        # output to sigmoid(bias) = 0.5; eval mode must stay unaffected.
        params = tiny_params()
        window = np.random.default_rng(7).normal(0.0, 1.0, (4, 6))
        dropped = forward(
            params, window, 0, mode="train", dropout_rate=0.99,
            rng=np.random.default_rng(0),
        )
        np.testing.assert_allclose(dropped.values, 0.5, atol=1e-12)
        plain = forward(params, window, 0)
        assert (plain.values != dropped.values).any()

    def test_float32_path_agrees(self):
        params = tiny_params()
        params.style_table[...] = 0.1
        window = np.random.default_rng(8).normal(0.0, 1.0, (4, 6))
        exact = forward(params, window, 2).values
        fast = forward(cast_params(params, np.float32), window.astype(np.float32), 2)
        assert fast.values.dtype == np.float64  # coefficients stay canonical
        np.testing.assert_allclose(fast.values, exact, atol=1e-4)


class TestHumanDecode:
    def test_zero_is_neutral(self):
        rig = tiny_rig()
        np.testing.assert_array_equal(
            human_decode(rig, np.zeros(3)), rig.mesh.positions
        )

    def test_one_hot_adds_field(self):
        rig = tiny_rig()
        decoded = human_decode(rig, np.array([0.0, 1.0, 0.0]))
        np.testing.assert_array_equal(
            decoded, rig.mesh.positions + rig.basis.displacements[1]
        )

    def test_matches_skinning(self):
        rig = tiny_rig()
        rng = np.random.default_rng(11)
        for _ in range(100):
            theta = rng.uniform(0.0, 1.0, 3)
            expected = apply_skinning(rig, theta).positions
            assert np.abs(human_decode(rig, theta) - expected).max() < 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="blendshapes"):
            human_decode(tiny_rig(), np.zeros(4))


def two_loop_loss(pred, target, mask, mouth_weight):
    total = 0.0
    for i in range(pred.size):
        total += (target[i] - pred[i]) ** 2
    extra = 0.0
    for v in mask:
        for c in range(3):
            extra += (target[3 * v + c] - pred[3 * v + c]) ** 2
    return total + mouth_weight * extra


class TestLoss:
    def test_zero_when_equal(self):
        y = np.random.default_rng(0).uniform(-1.0, 1.0, 15)
        assert loss(y, y.copy(), np.array([1]), 1.0) == 0.0

    def test_unit_mouth_error_gives_two(self):
        target = np.zeros(15)
        pred = np.zeros(15)
        pred[3 * 3 + 1] = 1.0  # one coordinate of mouth vertex 3 off by 1
        assert loss(pred, target, np.array([1, 3]), 1.0) == 2.0

    def test_matches_two_loop_reference(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            pred = rng.uniform(-2.0, 2.0, 30)
            target = rng.uniform(-2.0, 2.0, 30)
            mask = rng.choice(10, size=3, replace=False)
            w = rng.uniform(0.0, 3.0)
            expected = two_loop_loss(pred, target, mask, w)
            assert loss(pred, target, mask, w) == pytest.approx(expected, abs=1e-12)

    def test_mask_out_of_range(self):
        with pytest.raises(ValueError, match="mask"):
            loss(np.zeros(15), np.zeros(15), np.array([5]), 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            loss(np.zeros(15), np.zeros(12), np.array([0]), 1.0)


def relative_gap(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


class TestBackward:
    def check_all_params(self, dropout_rate, seed):
        rig = tiny_rig()
        params = tiny_params()
        params.style_table[...] = np.random.default_rng(20).uniform(
            -0.5, 0.5, params.style_table.shape
        )
        sample = tiny_sample(rig)
        grads = backward(params, rig, sample, 1.0, dropout_rate, seed)
        h = 1e-4
        for name, array in named_arrays(params):
            flat = array.ravel()
            gflat = grads[name].ravel()
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = training_loss(params, rig, sample, 1.0, dropout_rate, seed)
                flat[k] = orig - h
                down = training_loss(params, rig, sample, 1.0, dropout_rate, seed)
                flat[k] = orig
                fd = (up - down) / (2.0 * h)
                assert relative_gap(gflat[k], fd) < 1e-4, f"{name}[{k}]"

    def test_gradcheck_every_parameter(self):
        self.check_all_params(dropout_rate=0.0, seed=None)

    def test_gradcheck_with_dropout(self):
        self.check_all_params(dropout_rate=0.3, seed=77)

    def test_zero_loss_gives_zero_gradients(self):
        rig = tiny_rig()
        params = tiny_params()
        window = np.random.default_rng(21).normal(0.0, 1.0, (4, 6))
        theta = forward(params, window, 0)
        sample = TrainingSample(
            window=window, style_id=0, target_vertices=human_decode(rig, theta)
        )
        grads = backward(params, rig, sample, 1.0)
        assert all(not g.any() for g in grads.values())

    def test_only_trainable_arrays_have_gradients(self):
        rig = tiny_rig()
        params = tiny_params()
        grads = backward(params, rig, tiny_sample(rig), 1.0)
        assert set(grads) == {name for name, _ in named_arrays(params)}


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.weight_decay) == (1e-4, 1e-4)
        assert (cfg.beta1, cfg.beta2) == (0.9, 0.99)
        assert (cfg.epochs, cfg.dropout_rate, cfg.mouth_weight) == (200, 0.1, 1.0)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(dropout_rate=1.0)


class TestTrain:
    def overfit_config(self):
        return TrainConfig(
            learning_rate=1e-2,
            weight_decay=0.0,
            dropout_rate=0.0,
            epochs=200,
            batch_size=1,
            seed=0,
        )

    def test_overfits_single_sample(self):
        rig = tiny_rig()
        params = init_params(
            3, window_size=4, hidden_size=8, style_count=2, output_size=3,
            class_count=12,
        )
        rng = np.random.default_rng(0)
        sample = TrainingSample(
            window=rng.normal(0.0, 1.0, (4, 12)),
            style_id=0,
            target_vertices=human_decode(rig, rng.uniform(0.1, 0.9, 3)),
        )
        _, history = train(params, rig, [sample], self.overfit_config())
        assert history.train_loss[-1] < 1e-3 * history.train_loss[0]

    def test_same_seed_bitwise_history(self):
        rig = tiny_rig()
        samples = [tiny_sample(rig, seed=s, style_id=s % 3) for s in range(4)]
        cfg = TrainConfig(epochs=5, batch_size=2, seed=42, learning_rate=1e-3)
        _, h1 = train(tiny_params(), rig, samples, cfg)
        _, h2 = train(tiny_params(), rig, samples, cfg)
        assert h1.train_loss.tobytes() == h2.train_loss.tobytes()

    def test_validation_history(self):
        rig = tiny_rig()
        samples = [tiny_sample(rig, seed=s) for s in range(3)]
        cfg = TrainConfig(epochs=3, batch_size=2, seed=0)
        _, history = train(tiny_params(), rig, samples[:2], cfg, validation=samples[2:])
        assert history.val_loss.shape == (3,)
        assert np.isfinite(history.val_loss).all()

    def test_empty_dataset_errors(self):
        with pytest.raises(ValueError, match="empty"):
            train(tiny_params(), tiny_rig(), [], TrainConfig(epochs=1))

    def test_history_length_matches_epochs(self):
        rig = tiny_rig()
        cfg = TrainConfig(epochs=4, batch_size=1, seed=1)
        _, history = train(tiny_params(), rig, [tiny_sample(rig)], cfg)
        assert history.train_loss.shape == (4,)
        assert history.val_loss is None


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        params = tiny_params(seed=5)
        params.style_table[...] = 0.25
        path = tmp_path / "model.mnet"
        save_model(path, params)
        loaded, state = load_model(path)
        assert state is None
        for (name, a), (_, b) in zip(named_arrays(params), named_arrays(loaded)):
            assert a.tobytes() == b.tobytes(), name
        assert loaded.window_size == 4 and loaded.output_size == 3

    def test_round_trip_with_adam(self, tmp_path):
        rig = tiny_rig()
        params = tiny_params()
        state = AdamState.zeros_like(params)
        cfg = TrainConfig(epochs=2, batch_size=1, seed=3)
        train(params, rig, [tiny_sample(rig)], cfg, adam_state=state)
        path = tmp_path / "model.mnet"
        save_model(path, params, state)
        _, loaded = load_model(path)
        assert loaded.step == state.step
        for name in state.first:
            assert loaded.first[name].tobytes() == state.first[name].tobytes()
            assert loaded.second[name].tobytes() == state.second[name].tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.mnet"
        path.write_bytes(b"XNET" + bytes(60))
        with pytest.raises(ValueError, match="magic"):
            load_model(path)

    def test_truncated(self, tmp_path):
        params = tiny_params()
        path = tmp_path / "model.mnet"
        save_model(path, params)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError, match="truncated"):
            load_model(path)


class TestBlinks:
    def base_sequence(self, frames=200, channels=51):
        return MotionSequence(25.0, np.zeros((frames, channels)))

    def test_rate_zero_is_identity(self):
        seq = self.base_sequence()
        out = synth_augment_blinks(seq, 0.0, seed=0)
        assert out.frames.tobytes() == seq.frames.tobytes()

    def test_same_seed_same_output(self):
        seq = self.base_sequence()
        a = synth_augment_blinks(seq, 1.0, seed=4)
        b = synth_augment_blinks(seq, 1.0, seed=4)
        assert a.frames.tobytes() == b.frames.tobytes()

    def test_pulse_peak_is_exactly_one(self):
        seq = self.base_sequence(frames=500)
        out = synth_augment_blinks(seq, 2.0, seed=1)
        for name in BLINK_NAMES:
            assert out.frames[:, canonical_index(name)].max() == 1.0

    def test_other_channels_untouched(self):
        rng = np.random.default_rng(6)
        frames = rng.uniform(0.0, 1.0, (120, 51))
        seq = MotionSequence(25.0, frames)
        out = synth_augment_blinks(seq, 3.0, seed=2)
        blink_cols = {canonical_index(n) for n in BLINK_NAMES}
        for c in range(51):
            if c not in blink_cols:
                assert out.frames[:, c].tobytes() == frames[:, c].tobytes()

    def test_pulse_shape_on_quiet_track(self):
        # A single blink on a zero track reads back the raised cosine.
        seq = MotionSequence(25.0, np.zeros((2000, 51)))
        out = synth_augment_blinks(seq, 0.05, seed=9)
        col = out.frames[:, canonical_index("eyeBlinkLeft")]
        peaks = np.flatnonzero(col == 1.0)
        assert peaks.size >= 1
        k = peaks[0]
        np.testing.assert_allclose(col[k - 1], 0.5, atol=1e-12)
        np.testing.assert_allclose(col[k + 1], 0.5, atol=1e-12)
        assert col[k - 2] == 0.0 and col[k + 2] == 0.0

    def test_custom_channel_indices(self):
        seq = MotionSequence(25.0, np.zeros((300, 3)))
        out = synth_augment_blinks(seq, 2.0, seed=3, channels=(1,))
        assert out.frames[:, 1].max() == 1.0
        assert not out.frames[:, 0].any() and not out.frames[:, 2].any()

    def test_non_canonical_layout_needs_channels(self):
        seq = MotionSequence(25.0, np.zeros((10, 3)))
        with pytest.raises(ValueError, match="channel"):
            synth_augment_blinks(seq, 1.0, seed=0)

    def test_negative_rate_errors(self):
        with pytest.raises(ValueError, match="rate"):
            synth_augment_blinks(self.base_sequence(), -1.0, seed=0)
