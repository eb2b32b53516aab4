"""Fully connected softplus networks with hand-written backprop and Adam.

Rows of an input matrix are samples.  A layer computes ``x @ W.T + b`` with
``W`` of shape ``(fan_out, fan_in)``; hidden layers apply softplus and the
last layer is affine.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, ShapeError, StateError


def softplus(x):
    # max(x, 0) + log1p(exp(-|x|)) stays finite for large |x|.
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_grad(x):
    return expit(x)


@dataclass
class MLPParams:
    layer_sizes: list
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        n = len(self.layer_sizes) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ShapeError("need one weight matrix and bias vector per layer")
        for k in range(n):
            out_dim, in_dim = self.layer_sizes[k + 1], self.layer_sizes[k]
            if self.weights[k].shape != (out_dim, in_dim):
                raise ShapeError(f"weights[{k}] has shape {self.weights[k].shape}, expected {(out_dim, in_dim)}")
            if self.biases[k].shape != (out_dim,):
                raise ShapeError(f"biases[{k}] has shape {self.biases[k].shape}, expected {(out_dim,)}")

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def input_size(self):
        return self.layer_sizes[0]

    @property
    def output_size(self):
        return self.layer_sizes[-1]

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MLPParams(list(self.layer_sizes),
                         [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


def init_params(layer_sizes, seed):
    """Xavier-uniform weights and zero biases, reproducible for a given seed."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigError("layer_sizes needs at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise ConfigError(f"all layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(sizes, weights, biases)


@dataclass
class GradientTape:
    """Activations cached by :func:`forward` for a later :func:`backward`."""

    net: MLPParams = None
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)

    @property
    def recorded(self):
        return self.net is not None and len(self.inputs) == self.net.n_layers


@dataclass
class MLPGrads:
    weights: list
    biases: list
    inputs: np.ndarray

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def forward(net, x, tape=None):
    """Run ``x`` (batch x input_size) through the network.

    Returns ``(y, tape)``.  Pass an existing tape to reuse it; a fresh one is
    created otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_size:
        raise ShapeError(f"input of shape {x.shape} does not match network input size {net.input_size}")
    if tape is None:
        tape = GradientTape()
    tape.net = net
    tape.inputs = []
    tape.preacts = []
    h = x
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        tape.inputs.append(h)
        a = h @ w.T + b
        tape.preacts.append(a)
        h = a if k == last else softplus(a)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite activation in forward pass")
    return h, tape


def backward(tape, loss_grad):
    """Reverse-mode gradients of a scalar loss given ``dL/dy``.

    Also returns ``dL/dx`` so callers can chain networks (decoder into encoder).
    """
    if tape is None or not tape.recorded:
        raise StateError("backward called before forward")
    net = tape.net
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != tape.preacts[-1].shape:
        raise ShapeError(f"loss gradient shape {g.shape} != output shape {tape.preacts[-1].shape}")
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    last = net.n_layers - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * softplus_grad(tape.preacts[k])
        gw[k] = g.T @ tape.inputs[k]
        gb[k] = g.sum(axis=0)
        g = g @ net.weights[k]
    return MLPGrads(gw, gb, g)


@dataclass
class Autoencoder:
    encoder: MLPParams
    decoder: MLPParams

    def __post_init__(self):
        if self.encoder.output_size != self.decoder.input_size:
            raise ShapeError("encoder output size must equal decoder input size")
        if self.encoder.input_size != self.decoder.output_size:
            raise ShapeError("encoder input size must equal decoder output size")
        if self.latent_dim >= self.encoder.input_size:
            raise ConfigError("latent dimension must be smaller than the field dimension")

    @property
    def latent_dim(self):
        return self.encoder.output_size

    @property
    def field_dim(self):
        return self.encoder.input_size

    def encode(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.ndim == 1:
            return forward(self.encoder, u[None, :])[0][0]
        return forward(self.encoder, u)[0]

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            return forward(self.decoder, z[None, :])[0][0]
        return forward(self.decoder, z)[0]

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def copy(self):
        return Autoencoder(self.encoder.copy(), self.decoder.copy())


def make_autoencoder(field_dim, hidden, latent_dim, seed):
    """Symmetric autoencoder ``field_dim -> *hidden -> latent_dim -> ... -> field_dim``."""
    enc_sizes = [field_dim, *hidden, latent_dim]
    encoder = init_params(enc_sizes, seed)
    decoder = init_params(enc_sizes[::-1], seed + 1)
    return Autoencoder(encoder, decoder)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def extend(self, params):
        """Register extra parameters with fresh zero moments."""
        for p in params:
            self.first_moment.append(np.zeros_like(p))
            self.second_moment.append(np.zeros_like(p))


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Moments are created lazily on the first call.  Returns ``(params, state)``.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.first_moment:
        state.extend(params)
    if len(state.first_moment) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"parameter shape {p.shape} vs gradient shape {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params, state
