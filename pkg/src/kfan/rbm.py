"""Bernoulli restricted Boltzmann machines trained with contrastive divergence.

Weights are stored hidden x visible, so the energy reads
``E(v, h) = -h.W.v - b.v - c.h`` with ``b`` the visible bias and ``c`` the
hidden bias. Visible inputs may be reals in [0, 1]; they are treated as
Bernoulli means, which lets grey-level images feed the same machinery as
binary ones.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, DomainError, NumericError


@dataclass(frozen=True)
class Rbm:
    weights: np.ndarray  # (n_hidden, n_visible)
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.visible_bias, dtype=np.float64)
        c = np.asarray(self.hidden_bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionError(f"weights must be a non-empty matrix, got shape {w.shape}")
        if b.shape != (w.shape[1],) or c.shape != (w.shape[0],):
            raise DimensionError(
                f"bias shapes {b.shape}, {c.shape} do not match weights {w.shape}")
        for name, a in (("weights", w), ("visible_bias", b), ("hidden_bias", c)):
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite entry in {name}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "visible_bias", b)
        object.__setattr__(self, "hidden_bias", c)

    @property
    def n_visible(self):
        return self.weights.shape[1]

    @property
    def n_hidden(self):
        return self.weights.shape[0]

    @classmethod
    def init(cls, n_visible, n_hidden, stddev, rng):
        if n_visible < 1 or n_hidden < 1:
            raise DomainError(f"layer sizes must be positive, got {n_visible}x{n_hidden}")
        w = rng.normal(0.0, 1.0, size=(n_hidden, n_visible)) * stddev
        return cls(w, np.zeros(n_visible), np.zeros(n_hidden))


@dataclass(frozen=True)
class RbmGradient:
    d_weights: np.ndarray
    d_visible_bias: np.ndarray
    d_hidden_bias: np.ndarray

    def __add__(self, other):
        return RbmGradient(self.d_weights + other.d_weights,
                           self.d_visible_bias + other.d_visible_bias,
                           self.d_hidden_bias + other.d_hidden_bias)

    def scaled(self, factor):
        return RbmGradient(self.d_weights * factor,
                           self.d_visible_bias * factor,
                           self.d_hidden_bias * factor)


@dataclass(frozen=True)
class TrainConfig:
    """Settings for layer-wise CD training.

    ``learning_rate`` and ``cd_steps`` default to 0.1 and CD-1, the values the
    K-fan experiments use. ``momentum`` and ``weight_decay`` are off unless set.
    """

    learning_rate: float = 0.1
    cd_steps: int = 1
    epochs: int = 10
    batch_size: int = 20
    weight_init_stddev: float = 0.01
    rng_seed: int = 0
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be > 0")
        if self.cd_steps < 1:
            raise DomainError("cd_steps must be >= 1")
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if not self.weight_init_stddev >= 0:
            raise DomainError("weight_init_stddev must be >= 0")
        if not 0 <= self.momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise DomainError("weight_decay must be >= 0")


def sigmoid(x):
    """Logistic function, overflow-free for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _check_width(name, a, width):
    if a.shape[-1] != width:
        raise DimensionError(f"{name} has width {a.shape[-1]}, expected {width}")


def energy(rbm, v, h):
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape != (rbm.n_visible,) or h.shape != (rbm.n_hidden,):
        raise DimensionError(
            f"configuration shapes {v.shape}, {h.shape} do not match "
            f"({rbm.n_visible},), ({rbm.n_hidden},)")
    return float(-(h @ rbm.weights @ v) - rbm.visible_bias @ v - rbm.hidden_bias @ h)


def hidden_given_visible(rbm, v):
    """p(h_j = 1 | v) for a vector or a batch of row vectors."""
    v = np.asarray(v, dtype=np.float64)
    _check_width("visible input", v, rbm.n_visible)
    return sigmoid(v @ rbm.weights.T + rbm.hidden_bias)


def visible_given_hidden(rbm, h):
    """p(v_i = 1 | h) for a vector or a batch of row vectors."""
    h = np.asarray(h, dtype=np.float64)
    _check_width("hidden input", h, rbm.n_hidden)
    return sigmoid(h @ rbm.weights + rbm.visible_bias)


def sample_bernoulli(probs, rng):
    """Draw binary states; unit i is on iff its uniform draw is below probs[i]."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(~(probs >= 0.0) | ~(probs <= 1.0)):
        raise DomainError("probabilities must lie in [0, 1]")
    return (rng.random(probs.shape) < probs).astype(np.float64)


def cd_gradient(rbm, batch, k, rng, clamp_negative=False):
    """CD-k estimate of the mean log-likelihood gradient over ``batch``.

    The positive phase uses hidden probabilities. The negative chain samples
    h, computes visible probabilities, samples v and recomputes hidden
    probabilities, k times; the last sampled v and the last hidden
    probabilities give the model statistics.

    ``clamp_negative`` pins the chain to the data and exists for tests.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise DomainError("empty batch")
    if k < 1:
        raise DomainError("k must be >= 1")
    _check_width("batch", batch, rbm.n_visible)
    if np.any((batch < 0.0) | (batch > 1.0)):
        raise DomainError("batch entries must lie in [0, 1]")

    v0 = batch
    h_pos = hidden_given_visible(rbm, v0)
    if clamp_negative:
        v_neg, h_neg = v0, h_pos
    else:
        h_neg = h_pos
        for _ in range(k):
            h_sample = sample_bernoulli(h_neg, rng)
            v_neg = sample_bernoulli(visible_given_hidden(rbm, h_sample), rng)
            h_neg = hidden_given_visible(rbm, v_neg)

    n = v0.shape[0]
    return RbmGradient(
        (h_pos.T @ v0 - h_neg.T @ v_neg) / n,
        (v0 - v_neg).sum(axis=0) / n,
        (h_pos - h_neg).sum(axis=0) / n,
    )


def apply_update(rbm, grad, eta):
    """Gradient ascent step ``theta <- theta + eta * grad``."""
    if grad.d_weights.shape != rbm.weights.shape \
            or grad.d_visible_bias.shape != rbm.visible_bias.shape \
            or grad.d_hidden_bias.shape != rbm.hidden_bias.shape:
        raise DimensionError("gradient shapes do not match the Rbm")
    for a in (grad.d_weights, grad.d_visible_bias, grad.d_hidden_bias):
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite gradient entry")
    if not np.isfinite(eta):
        raise NumericError("non-finite learning rate")
    return Rbm(rbm.weights + eta * grad.d_weights,
               rbm.visible_bias + eta * grad.d_visible_bias,
               rbm.hidden_bias + eta * grad.d_hidden_bias)


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_rbm(rbm, data, config, rng, gradient=None):
    """Run ``config.epochs`` epochs of mini-batch ascent on ``data``.

    ``gradient(rbm, batch, rng)`` defaults to CD-k; pass
    :func:`kfan.oracle.exact_loglik_grad` wrapped in a lambda for exact
    training on tiny models.
    """
    if gradient is None:
        def gradient(r, b, g):
            return cd_gradient(r, b, config.cd_steps, g)

    data = np.asarray(data, dtype=np.float64)
    velocity = None
    for _ in range(config.epochs):
        for idx in _minibatches(data.shape[0], config.batch_size, rng):
            grad = gradient(rbm, data[idx], rng)
            if config.weight_decay:
                grad = replace(grad, d_weights=grad.d_weights - config.weight_decay * rbm.weights)
            if config.momentum:
                velocity = grad if velocity is None else velocity.scaled(config.momentum) + grad
                grad = velocity
            rbm = apply_update(rbm, grad, config.learning_rate)
    return rbm


def pretrain_stack(layer_sizes, data, config, rng, gradient=None):
    """Greedy layer-wise training of a stack of RBMs.

    ``layer_sizes`` lists the hidden widths; the first visible width comes
    from ``data``. Each layer after the first trains on the hidden
    probabilities of the layer below.
    """
    layer_sizes = list(layer_sizes)
    if not layer_sizes:
        raise DomainError("at least one hidden layer is required")
    if any(int(s) < 1 for s in layer_sizes):
        raise DomainError(f"layer sizes must be positive, got {layer_sizes}")
    data = np.asarray(data, dtype=np.float64)
    stack = []
    for size in layer_sizes:
        rbm = Rbm.init(data.shape[1], int(size), config.weight_init_stddev, rng)
        rbm = train_rbm(rbm, data, config, rng, gradient)
        stack.append(rbm)
        data = hidden_given_visible(rbm, data)
    return stack
