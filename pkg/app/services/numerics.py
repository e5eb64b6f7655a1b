"""Embedding network forward/backward passes, Adam updates and the LR schedule.

All math is float64. Matrices are numpy arrays; rows are samples.
"""
import numpy as np

from ..models.network import AdamState, ForwardTape, LrSchedule, MlpParams
from ..utils.errors import DimensionError, NumericError, StateError


def _as_matrix(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains NaN or infinite entries")
    return x


def prelu(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    slopes = np.asarray(slopes, dtype=np.float64)
    if x.ndim != 2 or slopes.shape != (x.shape[1],):
        raise DimensionError(
            f"Slope vector length {slopes.shape} does not match column count of {x.shape}"
        )
    return np.where(x > 0, x, slopes * x)


def mlp_forward(
    params: MlpParams,
    x: np.ndarray,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTape]:
    """
    Runs affine -> PReLU per layer, with inverted dropout after every layer but the last.
    Dropout is identity unless training is set.
    """
    x = _as_matrix(x)
    if x.shape[1] != params.n_inputs:
        raise DimensionError(
            f"Input has {x.shape[1]} columns, network expects {params.n_inputs}"
        )
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError(f"Dropout probability must lie in [0, 1), got {dropout_p}")
    use_dropout = training and dropout_p > 0.0
    if use_dropout and rng is None:
        raise ValueError("Training-mode dropout needs a random generator")

    inputs, pre_activations, masks = [], [], []
    h = x
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        inputs.append(h)
        z = h @ layer.weight + layer.bias
        pre_activations.append(z)
        a = np.where(z > 0, z, layer.slope * z)
        mask = None
        if use_dropout and k < last:
            mask = rng.random(a.shape) >= dropout_p
            a = a * mask / (1.0 - dropout_p)
        masks.append(mask)
        h = a

    tape = ForwardTape(
        params=params,
        inputs=inputs,
        pre_activations=pre_activations,
        masks=masks,
        dropout_p=dropout_p,
        shapes=params.shapes,
    )
    return h, tape


def mlp_backward(
    tape: ForwardTape,
    upstream_grad: np.ndarray,
    params: MlpParams | None = None,
) -> tuple[MlpParams, np.ndarray]:
    """Exact gradients of the taped forward pass. Returns (parameter grads, input grad)."""
    if params is not None and params is not tape.params:
        raise StateError("Tape was recorded on a different parameter set")
    if tape.params.shapes != tape.shapes:
        raise StateError("Parameters changed shape since the forward pass was recorded")
    g = np.asarray(upstream_grad, dtype=np.float64)
    expected = tape.pre_activations[-1].shape
    if g.shape != expected:
        raise DimensionError(f"Upstream gradient shape {g.shape} != output shape {expected}")

    grads = []
    for k in range(len(tape.params.layers) - 1, -1, -1):
        layer = tape.params.layers[k]
        z = tape.pre_activations[k]
        mask = tape.masks[k]
        if mask is not None:
            g = g * mask / (1.0 - tape.dropout_p)
        positive = z > 0
        grad_slope = np.sum(np.where(positive, 0.0, g * z), axis=0)
        g_z = np.where(positive, g, layer.slope * g)
        grad_weight = tape.inputs[k].T @ g_z
        grad_bias = g_z.sum(axis=0)
        grads.append((grad_weight, grad_bias, grad_slope))
        g = g_z @ layer.weight.T

    grads.reverse()
    arrays = [array for triple in grads for array in triple]
    return MlpParams.from_arrays(arrays), g


def adam_update_arrays(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    first: list[np.ndarray],
    second: list[np.ndarray],
    step: int,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """One bias-corrected Adam step on parallel lists of arrays; `step` is the new step count."""
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    new_params, new_first, new_second = [], [], []
    for p, g, m, v in zip(params, grads, first, second):
        if p.shape != g.shape or p.shape != m.shape or p.shape != v.shape:
            raise DimensionError(f"Adam shape mismatch: param {p.shape}, grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + eps))
        new_first.append(m)
        new_second.append(v)
    return new_params, new_first, new_second


def adam_step(
    params: MlpParams, grads: MlpParams, state: AdamState
) -> tuple[MlpParams, AdamState]:
    if not params.same_shape(grads):
        raise DimensionError("Gradient shapes do not match parameter shapes")
    if not params.same_shape(state.first_moment):
        raise DimensionError("Adam accumulators do not match parameter shapes")
    step = state.step + 1
    new_params, first, second = adam_update_arrays(
        params.arrays(),
        grads.arrays(),
        state.first_moment.arrays(),
        state.second_moment.arrays(),
        step=step,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )
    new_state = AdamState(
        first_moment=MlpParams.from_arrays(first),
        second_moment=MlpParams.from_arrays(second),
        step=step,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        learning_rate=state.learning_rate,
    )
    return MlpParams.from_arrays(new_params), new_state


def lr_at_epoch(schedule: LrSchedule, epoch: int) -> float:
    """
    Initial rate before the start epoch, then one decay per full interval elapsed
    since the start epoch, frozen from the final epoch on.
    """
    if epoch < 0:
        raise ValueError(f"Epoch must be non-negative, got {epoch}")
    if epoch < schedule.start_epoch:
        return schedule.initial
    elapsed = min(epoch, schedule.final_epoch) - schedule.start_epoch
    decays = elapsed // schedule.interval
    return schedule.initial * schedule.decay**decays


def decay_epochs(schedule: LrSchedule) -> list[int]:
    """Epochs at which the rate changes."""
    if schedule.decay == 1.0:
        return []
    first = schedule.start_epoch + schedule.interval
    return list(range(first, schedule.final_epoch + 1, schedule.interval))
