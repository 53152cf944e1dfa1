"""Minimal fully-connected network core with reverse-mode gradients.

Networks are chains of linear layers. Every hidden layer is followed by RMS
normalization and a squareplus activation; the output layer is plain linear.
Each ``Mlp`` records the intermediates of its last forward pass, so a single
instance must not be shared mutably between threads. All arithmetic is
float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQUAREPLUS_B = 4.0
RMS_EPS = 1e-8


class ConfigurationError(ValueError):
    """Raised for inconsistent shapes, sizes, or option values."""


class StateError(RuntimeError):
    """Raised when an operation is called out of order (e.g. backward before forward)."""


def squareplus(x, b: float = SQUAREPLUS_B):
    """Smooth positive ramp (x + sqrt(x^2 + b)) / 2.

    Evaluated in a cancellation-free form on the negative tail, where the
    direct expression loses most of its significant digits.
    """
    if b <= 0:
        raise ConfigurationError(f"squareplus constant b must be positive, got {b}")
    x = np.asarray(x, dtype=np.float64)
    h = np.hypot(x, np.sqrt(b))  # sqrt(x^2 + b), overflow-safe
    # On the x < 0 branch h - x >= sqrt(b); the floor only guards the
    # discarded branch, where h - x underflows to 0 for huge x.
    return np.where(x >= 0, (x + h) / 2.0, b / (2.0 * np.maximum(h - x, 1e-300)))


def squareplus_sigmoid(x):
    """Derivative of squareplus at b=4: (1 + x / sqrt(x^2 + 4)) / 2.

    A heavy-tailed sigmoid: approaches 0 and 1 only polynomially (~1/x^2),
    which keeps useful resolution near the saturated ends.
    """
    x = np.asarray(x, dtype=np.float64)
    return (1.0 + x / np.hypot(x, 2.0)) / 2.0


def rms_norm(x, gain, eps_norm: float = RMS_EPS):
    """Scale ``x`` by gain / sqrt(mean(x^2) + eps_norm) along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return np.asarray(gain) * x / np.sqrt(ms + eps_norm)


@dataclass
class Layer:
    """Parameters of one linear layer plus its RMSNorm gain.

    The gain is inert on the output layer (no normalization there) but kept
    so every layer serializes identically.
    """

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    gain: np.ndarray  # (out,)


class MlpParams:
    """Weights, biases, and norm gains for one network.

    ``layer_sizes`` is ``[input, hidden..., output]``. Weights initialize
    uniform in +-sqrt(1/fan_in), biases to 0, gains to 1, from ``seed``.
    """

    def __init__(self, layer_sizes: list[int], seed: int):
        if len(layer_sizes) < 2 or any(n < 1 for n in layer_sizes):
            raise ConfigurationError(f"bad layer sizes {layer_sizes}")
        self.layer_sizes = list(int(n) for n in layer_sizes)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.layers: list[Layer] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = np.sqrt(1.0 / fan_in)
            self.layers.append(
                Layer(
                    weight=rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                    bias=np.zeros(fan_out),
                    gain=np.ones(fan_out),
                )
            )

    def named_arrays(self):
        """Yield (name, array) pairs; arrays are live references."""
        for i, layer in enumerate(self.layers):
            yield f"layer{i}/weight", layer.weight
            yield f"layer{i}/bias", layer.bias
            yield f"layer{i}/gain", layer.gain

    def copy_values_from(self, other: "MlpParams") -> None:
        if other.layer_sizes != self.layer_sizes:
            raise ConfigurationError("layer size mismatch in parameter copy")
        for dst, src in zip(self.layers, other.layers):
            dst.weight[...] = src.weight
            dst.bias[...] = src.bias
            dst.gain[...] = src.gain

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])


class GradBuffer:
    """Gradient accumulators shaped like an ``MlpParams``."""

    def __init__(self, params: MlpParams):
        self.layers = [
            Layer(np.zeros_like(l.weight), np.zeros_like(l.bias), np.zeros_like(l.gain))
            for l in params.layers
        ]

    def zero(self) -> None:
        for l in self.layers:
            l.weight.fill(0.0)
            l.bias.fill(0.0)
            l.gain.fill(0.0)

    def named_arrays(self):
        for i, layer in enumerate(self.layers):
            yield f"layer{i}/weight", layer.weight
            yield f"layer{i}/bias", layer.bias
            yield f"layer{i}/gain", layer.gain


class Mlp:
    """A feed-forward network with a recording forward pass.

    ``forward`` caches the per-layer intermediates; ``backward`` consumes
    them to accumulate parameter gradients (additively) into ``grads`` and
    returns the cotangent of the input.
    """

    def __init__(self, layer_sizes: list[int], seed: int):
        self.params = MlpParams(layer_sizes, seed)
        self.grads = GradBuffer(self.params)
        self._tape = None

    @property
    def layer_sizes(self) -> list[int]:
        return self.params.layer_sizes

    @property
    def input_dim(self) -> int:
        return self.params.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.params.layer_sizes[-1]

    def forward(self, x) -> np.ndarray:
        """Run the network on ``x`` of shape (batch, in) or (in,)."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigurationError(
                f"input shape {x.shape} incompatible with first layer size {self.input_dim}"
            )
        tape = []
        n_layers = len(self.params.layers)
        for i, layer in enumerate(self.params.layers):
            h = x @ layer.weight.T + layer.bias
            if i < n_layers - 1:
                ms = np.mean(np.square(h), axis=1, keepdims=True)
                r = 1.0 / np.sqrt(ms + RMS_EPS)
                xn = h * r
                n = layer.gain * xn
                sig = squareplus_sigmoid(n)
                out = squareplus(n)
                tape.append((x, h, r, xn, sig))
            else:
                out = h
                tape.append((x, None, None, None, None))
            x = out
        self._tape = tape
        self._squeeze = squeeze
        return x[0] if squeeze else x

    def backward(self, upstream, accumulate: bool = True) -> np.ndarray:
        """Backpropagate ``upstream`` (cotangent of the output) through the tape.

        Parameter gradients are added into ``grads`` unless ``accumulate`` is
        False (used when only the input cotangent is wanted). Returns the
        cotangent of the forward input, matching its original shape.
        """
        if self._tape is None:
            raise StateError("backward called before forward")
        g = np.asarray(upstream, dtype=np.float64)
        if g.ndim == 1 and self._squeeze:
            g = g[None, :]
        if g.shape != (self._tape[0][0].shape[0], self.output_dim):
            raise ConfigurationError(
                f"upstream shape {np.shape(upstream)} does not match output "
                f"({self._tape[0][0].shape[0]}, {self.output_dim})"
            )
        n_layers = len(self.params.layers)
        for i in range(n_layers - 1, -1, -1):
            layer = self.params.layers[i]
            x, h, r, xn, sig = self._tape[i]
            if i < n_layers - 1:
                dn = g * sig
                if accumulate:
                    self.grads.layers[i].gain += np.sum(dn * xn, axis=0)
                dxn = dn * layer.gain
                # xn = h * r with r = (mean(h^2) + eps)^(-1/2)
                width = h.shape[1]
                dot = np.sum(dxn * h, axis=1, keepdims=True)
                dh = dxn * r - h * (r**3 * dot / width)
            else:
                dh = g
            if accumulate:
                self.grads.layers[i].weight += dh.T @ x
                self.grads.layers[i].bias += np.sum(dh, axis=0)
            g = dh @ layer.weight
        return g[0] if self._squeeze else g

    def zero_grads(self) -> None:
        self.grads.zero()


@dataclass
class OptimizerState:
    """Adam moments and bookkeeping for one ``MlpParams``."""

    first_moment: GradBuffer
    second_moment: GradBuffer
    learning_rate: float = 3e-4
    decay_1: float = 0.9
    decay_2: float = 0.999
    epsilon_opt: float = 1e-8
    step_count: int = 0
    skipped_updates: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, learning_rate: float = 3e-4, **kw) -> "OptimizerState":
        return cls(GradBuffer(params), GradBuffer(params), learning_rate, **kw)

    def named_arrays(self):
        for name, a in self.first_moment.named_arrays():
            yield f"m/{name}", a
        for name, a in self.second_moment.named_arrays():
            yield f"v/{name}", a


def optimizer_step(state: OptimizerState, params: MlpParams, grads: GradBuffer) -> None:
    """One bias-corrected Adam update of ``params`` from ``grads``.

    A parameter tensor whose gradient contains non-finite entries is left
    untouched (moments included) and ``skipped_updates`` is incremented.
    """
    if state.learning_rate <= 0:
        raise ConfigurationError("learning rate must be positive")
    state.step_count += 1
    c1 = 1.0 - state.decay_1**state.step_count
    c2 = 1.0 - state.decay_2**state.step_count
    for p_layer, g_layer, m_layer, v_layer in zip(
        params.layers, grads.layers, state.first_moment.layers, state.second_moment.layers
    ):
        for attr in ("weight", "bias", "gain"):
            g = getattr(g_layer, attr)
            if not np.all(np.isfinite(g)):
                state.skipped_updates += 1
                continue
            m = getattr(m_layer, attr)
            v = getattr(v_layer, attr)
            p = getattr(p_layer, attr)
            m *= state.decay_1
            m += (1.0 - state.decay_1) * g
            v *= state.decay_2
            v += (1.0 - state.decay_2) * np.square(g)
            p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon_opt)
