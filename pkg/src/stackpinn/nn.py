"""Dense feed-forward networks with exact parameter and input derivatives.

Networks are plain lists of (weight, bias) tensors.  The activation is
applied to every layer except the last; a network tagged ``identity``
therefore computes a composition of affine maps.  Input derivatives are
propagated as truncated Taylor jets (forward mode, up to second order),
expressed in tape ops so that reverse mode through them stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Jet, Tensor, linear, sigmoid, sin, tanh, value_of


class DimensionError(ValueError):
    """Input width does not match a layer's fan-in; names the layer."""

    def __init__(self, layer: int, expected: int, got: int):
        super().__init__(f"layer {layer}: expected input width {expected}, got {got}")
        self.layer = layer


def _tanh_derivs(z, order):
    t = tanh(z)
    if order == 0:
        return t, None, None
    d1 = 1.0 - t * t
    if order == 1:
        return t, d1, None
    return t, d1, -2.0 * (t * d1)


def _sin_derivs(z, order):
    s = sin(z)
    if order == 0:
        return s, None, None
    from .autodiff import cos
    if order == 1:
        return s, cos(z), None
    return s, cos(z), -1.0 * s


def _swish_derivs(z, order):
    # swish(z) = z*sigmoid(z); derivatives written out analytically
    s = sigmoid(z)
    v = z * s
    if order == 0:
        return v, None, None
    one_minus = 1.0 - s
    d1 = s + v * one_minus
    if order == 1:
        return v, d1, None
    d2 = (s * one_minus) * (2.0 + z * (1.0 - 2.0 * s))
    return v, d1, d2


ACTIVATIONS = {
    "tanh": _tanh_derivs,
    "sin": _sin_derivs,
    "swish": _swish_derivs,
    "identity": None,
}


@dataclass
class NetworkParams:
    """Weights/biases of a dense net plus its activation tag.

    weights[k] has shape (layer_sizes[k+1], layer_sizes[k]); biases[k] has
    length layer_sizes[k+1].
    """

    layer_sizes: list
    weights: list = field(repr=False)
    biases: list = field(repr=False)
    activation: str
    seed: int | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if value_of(w).shape != want:
                raise ValueError(f"layer {k}: weight shape {value_of(w).shape} != {want}")
            if value_of(b).shape != (self.layer_sizes[k + 1],):
                raise ValueError(f"layer {k}: bias length mismatch")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def tensors(self) -> list:
        """Trainable leaves in a fixed order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self) -> int:
        return sum(value_of(t).size for t in self.tensors())


def init_params(layer_sizes, activation: str, seed) -> NetworkParams:
    """Glorot-uniform weights, zero biases; bit-reproducible for a fixed seed.

    `seed` may be an int or a numpy SeedSequence (for derived substreams).
    """
    if not layer_sizes:
        raise ValueError("empty layer list")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in))))
        biases.append(Tensor(np.zeros(fan_out)))
    seed_val = int(seed) if isinstance(seed, (int, np.integer)) else None
    return NetworkParams(list(layer_sizes), weights, biases, activation, seed_val)


def mlp_jet(params: NetworkParams, a: Jet, order: int = 0) -> Jet:
    """Propagate a (batch, in_dim) jet through the network."""
    n_layers = len(params.weights)
    act = ACTIVATIONS[params.activation]
    for k in range(n_layers):
        W, b = params.weights[k], params.biases[k]
        width = value_of(a.val).shape[-1]
        if width != params.layer_sizes[k]:
            raise DimensionError(k, params.layer_sizes[k], width)
        z = Jet(linear(a.val, W, b),
                None if a.d1 is None else linear(a.d1, W),
                None if a.d2 is None else linear(a.d2, W),
                a.order)
        if k < n_layers - 1 and act is not None:
            f0, f1, f2 = act(z.val, a.order)
            z = z.chain(f0, f1, f2)
        a = z
    return a


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def mlp_forward(params: NetworkParams, x):
    """Evaluate the network on a vector or a (batch, in_dim) array."""
    xb, squeeze = _as_batch(x)
    out = value_of(mlp_jet(params, Jet.constant(xb)).val)
    return out[0] if squeeze else out


def input_derivatives(params: NetworkParams, x, wrt: int, order: int):
    """Derivatives of every output with respect to input coordinate `wrt`.

    Returns (value, d1) for order 1 and (value, d1, d2) for order 2,
    propagated exactly via nested forward mode.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    xb, squeeze = _as_batch(x)
    if not 0 <= wrt < params.in_dim:
        raise IndexError(f"wrt index {wrt} out of range for input dim {params.in_dim}")
    seed = np.zeros_like(xb)
    seed[:, wrt] = 1.0
    jet = Jet(xb, seed, None, order)
    out = mlp_jet(params, jet, order)
    v, d1, d2 = out.values()
    if squeeze:
        v, d1, d2 = v[0], d1[0], d2[0]
    return (v, d1) if order == 1 else (v, d1, d2)


def grad_params(loss_fn, params: NetworkParams):
    """Exact reverse-mode gradient of a scalar loss over the network leaves.

    loss_fn receives the params and must return a scalar Tensor built from
    supported ops.  Gradients come back as ndarrays ordered like tensors().
    """
    leaves = params.tensors()
    saved = [t.requires_grad for t in leaves]
    for t in leaves:
        t.requires_grad = True
        t.grad = None
    try:
        loss = loss_fn(params)
        if not isinstance(loss, Tensor):
            raise TypeError("loss_fn must return a Tensor")
        if not np.all(np.isfinite(loss.data)):
            from .autodiff import NonFiniteError
            raise NonFiniteError(loss._op, "loss")
        loss.backward(check_finite=True)
        return [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]
    finally:
        for t, flag in zip(leaves, saved):
            t.requires_grad = flag
