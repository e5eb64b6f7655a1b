import numpy as np
import pytest

from app.models.network import AdamState, LrSchedule, MlpParams
from app.schemas.config_schemas import TrainConfig
from app.services.metric_loss import LossKind, TripletBatch, compute_loss, loss_gradients
from app.services.numerics import adam_step, decay_epochs, lr_at_epoch, mlp_backward, mlp_forward, prelu
from app.services.trainer_service import schedule_from_config
from app.utils.errors import DimensionError, NumericError, StateError
from app.utils.seeding import make_rng


@pytest.fixture
def rng():
    return make_rng(11)


@pytest.fixture
def small_params(rng):
    return MlpParams.initialize(6, 3, rng, hidden=(5, 4))


def _batch_loss(params, stacked, eps0=1.0, which=LossKind.PROPOSED):
    out, _ = mlp_forward(params, stacked)
    return compute_loss(TripletBatch.from_stacked(out), eps0, which).total


def _analytic(params, stacked, eps0=1.0, which=LossKind.PROPOSED):
    out, tape = mlp_forward(params, stacked)
    grads = loss_gradients(TripletBatch.from_stacked(out), eps0, which)
    return mlp_backward(tape, np.vstack(grads), params)


def _close(analytic, numeric):
    return abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric)) + 1e-8


class TestForward:
    def test_prelu_scales_negative_part(self):
        x = np.array([[-2.0, 3.0], [1.0, -1.0]])
        out = prelu(x, np.array([0.5, 0.1]))
        np.testing.assert_allclose(out, [[-1.0, 3.0], [1.0, -0.1]])

    def test_prelu_rejects_wrong_slope_length(self):
        with pytest.raises(DimensionError):
            prelu(np.zeros((2, 3)), np.zeros(2))

    def test_output_shape(self, small_params, rng):
        out, tape = mlp_forward(small_params, rng.normal(size=(7, 6)))
        assert out.shape == (7, 3)
        assert len(tape.inputs) == 3

    def test_dropout_is_identity_outside_training(self, small_params, rng):
        x = rng.normal(size=(4, 6))
        plain, _ = mlp_forward(small_params, x)
        with_p, _ = mlp_forward(small_params, x, dropout_p=0.5, training=False)
        np.testing.assert_array_equal(plain, with_p)

    def test_training_dropout_needs_generator(self, small_params):
        with pytest.raises(ValueError):
            mlp_forward(small_params, np.zeros((2, 6)), dropout_p=0.2, training=True)

    def test_wrong_width_is_rejected(self, small_params):
        with pytest.raises(DimensionError):
            mlp_forward(small_params, np.zeros((2, 5)))

    def test_non_finite_input_is_rejected(self, small_params):
        x = np.zeros((2, 6))
        x[1, 2] = np.nan
        with pytest.raises(NumericError):
            mlp_forward(small_params, x)


class TestBackward:
    @pytest.mark.parametrize("n_inputs,dim,batch", [(8, 4, 1), (8, 4, 16), (64, 4, 1), (8, 32, 16), (64, 32, 16)])
    def test_parameter_gradients_match_finite_differences(self, n_inputs, dim, batch):
        rng = make_rng(n_inputs * 100 + dim + batch)
        params = MlpParams.initialize(n_inputs, dim, rng, hidden=(10, 8))
        stacked = rng.normal(size=(3 * batch, n_inputs))
        grads, _ = _analytic(params, stacked)

        h = 1e-6
        for index, (array, grad) in enumerate(zip(params.arrays(), grads.arrays())):
            flat = array.reshape(-1)
            for position in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                original = flat[position]
                flat[position] = original + h
                up = _batch_loss(params, stacked)
                flat[position] = original - h
                down = _batch_loss(params, stacked)
                flat[position] = original
                numeric = (up - down) / (2 * h)
                assert _close(grad.reshape(-1)[position], numeric), f"array {index}, entry {position}"

    def test_input_gradient_matches_finite_differences(self, small_params, rng):
        stacked = rng.normal(size=(9, 6))
        _, input_grad = _analytic(small_params, stacked, which=LossKind.SWAP)
        h = 1e-6
        for row, col in [(0, 0), (4, 3), (8, 5)]:
            shifted = stacked.copy()
            shifted[row, col] += h
            up = _batch_loss(small_params, shifted, which=LossKind.SWAP)
            shifted[row, col] -= 2 * h
            down = _batch_loss(small_params, shifted, which=LossKind.SWAP)
            assert _close(input_grad[row, col], (up - down) / (2 * h))

    def test_upstream_shape_must_match_output(self, small_params, rng):
        _, tape = mlp_forward(small_params, rng.normal(size=(3, 6)))
        with pytest.raises(DimensionError):
            mlp_backward(tape, np.zeros((3, 2)))

    def test_tape_from_other_parameters_is_rejected(self, small_params, rng):
        _, tape = mlp_forward(small_params, rng.normal(size=(3, 6)))
        with pytest.raises(StateError):
            mlp_backward(tape, np.zeros((3, 3)), small_params.copy())


class TestAdam:
    def test_first_step_moves_by_learning_rate_against_gradient_sign(self, small_params):
        grads = MlpParams.from_arrays([np.full_like(a, -0.5) for a in small_params.arrays()])
        state = AdamState.fresh(small_params, learning_rate=0.01)
        updated, new_state = adam_step(small_params, grads, state)
        assert new_state.step == 1
        for before, after in zip(small_params.arrays(), updated.arrays()):
            np.testing.assert_allclose(after - before, 0.01, atol=1e-9)

    def test_shape_mismatch_is_rejected(self, small_params, rng):
        other = MlpParams.initialize(6, 3, rng, hidden=(5,))
        with pytest.raises(DimensionError):
            adam_step(small_params, other, AdamState.fresh(small_params))


class TestSchedule:
    def test_default_schedule_values(self):
        schedule = schedule_from_config(TrainConfig())
        assert lr_at_epoch(schedule, 0) == 0.001
        assert lr_at_epoch(schedule, 499) == 0.001
        assert lr_at_epoch(schedule, 500) == 0.001
        assert lr_at_epoch(schedule, 549) == 0.001
        assert lr_at_epoch(schedule, 550) == 0.001 * 0.95
        assert lr_at_epoch(schedule, 600) == 0.001 * 0.95**2

    def test_rate_is_frozen_after_final_epoch(self):
        schedule = LrSchedule()
        assert lr_at_epoch(schedule, 800) == lr_at_epoch(schedule, 1200) == 0.001 * 0.95**6

    def test_decay_epochs(self):
        assert decay_epochs(LrSchedule()) == [550, 600, 650, 700, 750, 800]
        assert decay_epochs(LrSchedule(decay=1.0)) == []

    def test_negative_epoch_is_rejected(self):
        with pytest.raises(ValueError):
            lr_at_epoch(LrSchedule(), -1)

    def test_start_after_final_is_rejected(self):
        with pytest.raises(ValueError):
            LrSchedule(start_epoch=900, final_epoch=800)


class TestDropout:
    def test_gradients_match_finite_differences_under_a_fixed_mask(self):
        rng = make_rng(21)
        params = MlpParams.initialize(5, 3, rng, hidden=(7, 6))
        stacked = rng.normal(size=(12, 5))

        def loss_at(p):
            out, _ = mlp_forward(p, stacked, dropout_p=0.3, training=True, rng=make_rng(99))
            return compute_loss(TripletBatch.from_stacked(out), 1.0, LossKind.PROPOSED).total

        out, tape = mlp_forward(params, stacked, dropout_p=0.3, training=True, rng=make_rng(99))
        assert any(mask is not None and not mask.all() for mask in tape.masks)
        upstream = np.vstack(loss_gradients(TripletBatch.from_stacked(out), 1.0, LossKind.PROPOSED))
        grads, _ = mlp_backward(tape, upstream, params)

        h = 1e-6
        for index, (array, grad) in enumerate(zip(params.arrays(), grads.arrays())):
            flat = array.reshape(-1)
            for position in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                original = flat[position]
                flat[position] = original + h
                up = loss_at(params)
                flat[position] = original - h
                down = loss_at(params)
                flat[position] = original
                assert _close(grad.reshape(-1)[position], (up - down) / (2 * h)), f"array {index}, entry {position}"

    def test_training_mean_matches_inference_when_the_output_layer_is_linear(self):
        rng = make_rng(4)
        params = MlpParams.initialize(4, 2, rng, hidden=(6,))
        params.layers[-1].slope[:] = 1.0
        x = rng.normal(size=(1, 4))
        inference, _ = mlp_forward(params, x)

        draws = 10_000
        samples, _ = mlp_forward(params, np.repeat(x, draws, axis=0), dropout_p=0.3, training=True, rng=rng)
        standard_error = samples.std(axis=0, ddof=1) / np.sqrt(draws)
        assert (np.abs(samples.mean(axis=0) - inference[0]) <= 4 * standard_error).all()


class TestInvariances:
    def test_rows_are_processed_independently(self, small_params, rng):
        x = rng.normal(size=(10, 6))
        order = rng.permutation(10)
        out, _ = mlp_forward(small_params, x)
        shuffled, _ = mlp_forward(small_params, x[order])
        np.testing.assert_allclose(shuffled, out[order], rtol=0, atol=1e-12)


class TestAdamOracle:
    @staticmethod
    def _scalar_params(value: float) -> MlpParams:
        return MlpParams.from_arrays([np.array([[value]]), np.array([value]), np.array([value])])

    def test_two_steps_match_hand_computed_update(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        g1, g2 = 0.3, -1.2
        params = self._scalar_params(0.5)
        state = AdamState.fresh(params, learning_rate=lr)
        params, state = adam_step(params, self._scalar_params(g1), state)
        params, state = adam_step(params, self._scalar_params(g2), state)

        p = 0.5
        m, v = 0.0, 0.0
        for t, g in enumerate([g1, g2], start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert state.step == 2
        for array in params.arrays():
            assert abs(float(array.reshape(-1)[0]) - p) <= 1e-12

    def test_zero_gradient_from_fresh_state_leaves_parameters_unchanged(self, small_params):
        state = AdamState.fresh(small_params, learning_rate=0.05)
        updated, _ = adam_step(small_params, small_params.zeros_like(), state)
        for before, after in zip(small_params.arrays(), updated.arrays()):
            np.testing.assert_array_equal(after, before)
