"""Dense MLPs with hand-written backprop, Adam, and seeded RNG streams.

Parameters of one network live in a single flat float64 buffer; ``weights``
and ``biases`` are reshaped views into it. An *ensemble* of identically
shaped networks is the same thing with a leading member axis, ``flat`` of
shape ``(n_members, n_params)``, and every operation below broadcasts over
that axis. This keeps Adam and target copies to one array operation each.

Layout of ``flat`` for layer k (``out x in``): row-major weight matrix
followed by the bias vector, layers in order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import InvalidArchitectureError, PoisonedUpdateError, ShapeError

ACTIVATIONS = ("relu", "tanh", "linear")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Seeded PCG64 generator. Extra ints select an independent sub-stream."""
    if stream:
        return np.random.default_rng([int(seed), *map(int, stream)])
    return np.random.default_rng(int(seed))


@lru_cache(maxsize=None)
def _layout(layer_sizes: tuple[int, ...]) -> tuple[tuple[int, int, int, int], ...]:
    """(w_start, w_stop, b_stop, out) offsets per layer."""
    slots = []
    off = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w_stop = off + n_out * n_in
        b_stop = w_stop + n_out
        slots.append((off, w_stop, b_stop, n_out))
        off = b_stop
    return tuple(slots)


def n_params(layer_sizes: Sequence[int]) -> int:
    sizes = tuple(layer_sizes)
    return _layout(sizes)[-1][2] if len(sizes) > 1 else 0


def _check_sizes(layer_sizes) -> tuple[int, ...]:
    try:
        sizes = tuple(int(n) for n in layer_sizes)
    except (TypeError, ValueError) as exc:
        raise InvalidArchitectureError(f"bad layer sizes {layer_sizes!r}") from exc
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise InvalidArchitectureError(
            f"need at least two positive layer sizes, got {list(sizes)}"
        )
    return sizes


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Parameters of a dense MLP (or a stacked ensemble of them).

    ``activation`` applies to hidden layers, ``output_activation`` to the
    last layer.
    """

    layer_sizes: tuple[int, ...]
    flat: np.ndarray
    activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = _check_sizes(self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if self.activation not in ACTIVATIONS or self.output_activation not in ACTIVATIONS:
            raise InvalidArchitectureError(
                f"unknown activation {self.activation!r}/{self.output_activation!r}"
            )
        if self.flat.ndim not in (1, 2) or self.flat.shape[-1] != n_params(sizes):
            raise ShapeError(
                f"flat buffer of shape {self.flat.shape} does not fit {list(sizes)}"
            )

    @property
    def n_members(self) -> int | None:
        """Ensemble size, or None for a single network."""
        return self.flat.shape[0] if self.flat.ndim == 2 else None

    @property
    def weights(self) -> list[np.ndarray]:
        lead = self.flat.shape[:-1]
        return [
            self.flat[..., w0:w1].reshape(lead + (n_out, n_in))
            for (w0, w1, _, n_out), n_in in zip(_layout(self.layer_sizes), self.layer_sizes)
        ]

    @property
    def biases(self) -> list[np.ndarray]:
        return [self.flat[..., w1:b1] for (_, w1, b1, _) in _layout(self.layer_sizes)]

    def with_flat(self, flat: np.ndarray) -> MlpParams:
        return MlpParams(self.layer_sizes, flat, self.activation, self.output_activation)

    def copy(self) -> MlpParams:
        return self.with_flat(self.flat.copy())

    def member(self, i: int) -> MlpParams:
        """Single network ``i`` of an ensemble (a copy)."""
        if self.n_members is None:
            raise ShapeError("not an ensemble")
        return self.with_flat(self.flat[i].copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())


def stack_params(members: Sequence[MlpParams]) -> MlpParams:
    """Stack single networks of one architecture into an ensemble."""
    if not members:
        raise InvalidArchitectureError("empty ensemble")
    first = members[0]
    for m in members:
        if (m.layer_sizes, m.activation, m.output_activation) != (
            first.layer_sizes, first.activation, first.output_activation
        ) or m.n_members is not None:
            raise ShapeError("ensemble members must share one single-network architecture")
    return first.with_flat(np.stack([m.flat for m in members]))


def mlp_init(
    rng: np.random.Generator,
    layer_sizes: Sequence[int],
    activation: str = "relu",
    output_activation: str = "linear",
    n_members: int | None = None,
) -> MlpParams:
    """Fan-in uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.

    An ensemble draws its members one after another, so member i equals the
    i-th of ``n_members`` consecutive single-network draws from ``rng``.
    """
    sizes = _check_sizes(layer_sizes)
    if n_members is not None and n_members < 1:
        raise InvalidArchitectureError(f"n_members must be >= 1, got {n_members}")
    count = 1 if n_members is None else n_members
    flat = np.zeros((count, n_params(sizes)))
    for row in flat:
        for (w0, w1, _, n_out), n_in in zip(_layout(sizes), sizes):
            bound = 1.0 / np.sqrt(n_in)
            row[w0:w1] = rng.uniform(-bound, bound, size=n_out * n_in)
    if n_members is None:
        flat = flat[0]
    return MlpParams(sizes, flat, activation, output_activation)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, out: np.ndarray, delta: np.ndarray) -> np.ndarray:
    # derivative expressed through the layer output
    if name == "relu":
        return delta * (out > 0.0)
    if name == "tanh":
        return delta * (1.0 - out * out)
    return delta


@dataclass(frozen=True)
class Trace:
    """Activations kept by :func:`mlp_trace` for the backward pass."""

    layers: tuple[np.ndarray, ...]
    squeezed: bool


def mlp_trace(params: MlpParams, x) -> tuple[np.ndarray, Trace]:
    """Forward pass that also records activations for :func:`mlp_backward`."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim == 0 or h.shape[-1] != params.layer_sizes[0]:
        raise ShapeError(
            f"input of shape {h.shape} does not match input size {params.layer_sizes[0]}"
        )
    squeezed = h.ndim == 1
    if squeezed:
        h = h[None, :]
    layers = [h]
    n_layers = len(params.layer_sizes) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = np.matmul(h, w.swapaxes(-1, -2)) + b[..., None, :]
        h = _activate(params.output_activation if k == n_layers - 1 else params.activation, z)
        layers.append(h)
    out = h[..., 0, :] if squeezed else h
    return out, Trace(tuple(layers), squeezed)


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors.

    Ensembles return an extra leading member axis.
    """
    return mlp_trace(params, x)[0]


def mlp_backward(
    params: MlpParams, trace: Trace, upstream, param_grads: bool = True
) -> tuple[MlpParams | None, np.ndarray]:
    """Gradient of ``sum(upstream * output)`` w.r.t. parameters and input.

    Batched inputs sum their contributions. For an ensemble evaluated on a
    shared input, the returned input gradient keeps the member axis. With
    ``param_grads=False`` only the input gradient is computed and the
    first element of the result is None.
    """
    delta = np.asarray(upstream, dtype=np.float64)
    if trace.squeezed:
        delta = delta[..., None, :]
    expected = trace.layers[-1].shape
    if delta.shape != expected:
        raise ShapeError(f"upstream of shape {delta.shape} does not match output {expected}")
    g = params.with_flat(np.zeros_like(params.flat)) if param_grads else None
    if g is not None:
        g_weights, g_biases = g.weights, g.biases
    weights = params.weights
    n_layers = len(weights)
    for k in range(n_layers - 1, -1, -1):
        name = params.output_activation if k == n_layers - 1 else params.activation
        delta = _activation_grad(name, trace.layers[k + 1], delta)
        if g is not None:
            g_weights[k][...] = np.matmul(delta.swapaxes(-1, -2), trace.layers[k])
            g_biases[k][...] = delta.sum(axis=-2)
        delta = np.matmul(delta, weights[k])
    input_grad = delta[..., 0, :] if trace.squeezed else delta
    return g, input_grad


def mlp_grad(params: MlpParams, x, upstream) -> tuple[MlpParams, np.ndarray]:
    """Backprop of ``upstream . mlp_forward(params, x)``; see :func:`mlp_backward`."""
    _, trace = mlp_trace(params, x)
    return mlp_backward(params, trace, upstream)


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> AdamState:
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), 0)

    def copy(self) -> AdamState:
        return AdamState(self.first_moment.copy(), self.second_moment.copy(), self.step_count)


def adam_step(
    params: MlpParams, grads: MlpParams, state: AdamState, lr: float
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam descent step. Inputs are left untouched."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    g = grads.flat
    if g.shape != params.flat.shape or state.first_moment.shape != params.flat.shape:
        raise ShapeError(
            f"shape mismatch: params {params.flat.shape}, grads {g.shape}, "
            f"moments {state.first_moment.shape}"
        )
    if not np.isfinite(g).all():
        raise PoisonedUpdateError("non-finite gradient")
    t = state.step_count + 1
    m = ADAM_BETA1 * state.first_moment + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.second_moment + (1.0 - ADAM_BETA2) * (g * g)
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    flat = params.flat - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params.with_flat(flat), AdamState(m, v, t)
