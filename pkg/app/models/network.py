from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..utils.errors import DimensionError

DEFAULT_HIDDEN = (512, 256)
DEFAULT_SLOPE = 0.25
GLOROT_UNIFORM = "glorot_uniform"


@dataclass
class DenseLayer:
    """Affine map followed by a PReLU with one learnable slope per output unit."""

    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    slope: np.ndarray  # (out,)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy(), self.slope.copy())

    def __repr__(self):
        return f"<DenseLayer(in={self.weight.shape[0]}, out={self.weight.shape[1]})>"


@dataclass
class MlpParams:
    layers: list[DenseLayer]
    init: str = GLOROT_UNIFORM  # scheme the weights were drawn with

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("A network needs at least one layer")
        for k, layer in enumerate(self.layers):
            rows, cols = layer.weight.shape
            if cols <= 0:
                raise DimensionError(f"Layer {k} has no output units")
            if layer.bias.shape != (cols,) or layer.slope.shape != (cols,):
                raise DimensionError(
                    f"Layer {k}: bias/slope length must equal output width {cols}"
                )
            if k > 0 and self.layers[k - 1].weight.shape[1] != rows:
                raise DimensionError(
                    f"Layer {k} input width {rows} does not chain with previous output "
                    f"{self.layers[k - 1].weight.shape[1]}"
                )

    @classmethod
    def initialize(
        cls,
        n_inputs: int,
        output_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    ) -> "MlpParams":
        """Glorot-uniform weights, zero biases, PReLU slopes at 0.25."""
        sizes = [n_inputs, *hidden, output_dim]
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            layers.append(
                DenseLayer(
                    weight=weight,
                    bias=np.zeros(fan_out),
                    slope=np.full(fan_out, DEFAULT_SLOPE),
                )
            )
        return cls(layers, init=GLOROT_UNIFORM)

    @property
    def n_inputs(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [layer.weight.shape for layer in self.layers]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in fixed order: weight, bias, slope per layer."""
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias, layer.slope])
        return out

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "MlpParams":
        if len(arrays) % 3 != 0:
            raise DimensionError("Parameter arrays must come in (weight, bias, slope) triples")
        layers = [
            DenseLayer(arrays[i], arrays[i + 1], arrays[i + 2])
            for i in range(0, len(arrays), 3)
        ]
        return cls(layers)

    def zeros_like(self) -> "MlpParams":
        return MlpParams.from_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self) -> "MlpParams":
        return MlpParams([layer.copy() for layer in self.layers], init=self.init)

    def same_shape(self, other: "MlpParams") -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape for a, b in zip(mine, theirs)
        )

    def __repr__(self):
        sizes = [self.n_inputs] + [layer.weight.shape[1] for layer in self.layers]
        return f"<MlpParams(sizes={sizes})>"


@dataclass
class ForwardTape:
    """Activations recorded by a forward pass, consumed by the backward pass."""

    params: MlpParams
    inputs: list[np.ndarray]  # input to each layer
    pre_activations: list[np.ndarray]  # affine output of each layer
    masks: list[Optional[np.ndarray]]  # dropout keep-mask after each layer, None when unused
    dropout_p: float
    shapes: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class AdamState:
    first_moment: MlpParams
    second_moment: MlpParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    learning_rate: float = 0.001

    @classmethod
    def fresh(cls, params: MlpParams, learning_rate: float = 0.001, **constants) -> "AdamState":
        return cls(
            first_moment=params.zeros_like(),
            second_moment=params.zeros_like(),
            learning_rate=learning_rate,
            **constants,
        )

    def __repr__(self):
        return f"<AdamState(step={self.step}, lr={self.learning_rate})>"


@dataclass(frozen=True)
class LrSchedule:
    """Exponential step decay: constant, then decay once per interval, then frozen."""

    initial: float = 0.001
    decay: float = 0.95
    interval: int = 50
    start_epoch: int = 500
    final_epoch: int = 800

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"Decay factor must lie in (0, 1], got {self.decay}")
        if self.interval < 1:
            raise ValueError(f"Decay interval must be positive, got {self.interval}")
        if self.start_epoch > self.final_epoch:
            raise ValueError(
                f"Decay start epoch {self.start_epoch} is after final epoch {self.final_epoch}"
            )
        if self.initial <= 0.0:
            raise ValueError(f"Initial learning rate must be positive, got {self.initial}")


@dataclass
class EmbeddingModel:
    params: MlpParams
    feature_names: list[str] = field(default_factory=list)
    dropout_p: float = 0.1

    @property
    def output_dim(self) -> int:
        return self.params.output_dim

    def __repr__(self):
        return (
            f"<EmbeddingModel(n={self.params.n_inputs}, d={self.output_dim}, "
            f"features={len(self.feature_names)})>"
        )
