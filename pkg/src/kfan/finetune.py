"""Discriminative fine-tuning of a pretrained K-fan network.

At this stage the network is read as a multi-path feed-forward net. Input
branches are encoded bottom-up (affine map + sigmoid per layer), their top
projections are summed into the shared layer, and output branches are decoded
top-down through the transposed weights of the same branch with the
visible-side biases.

Two tasks are supported:

``restore_label``
    encode ``x``; decode ``y`` (restored image) and ``z`` (label). Loss is
    the Bernoulli cross-entropy on ``y`` plus ``lam`` times the one on ``z``.
``multiview``
    encode ``x`` and ``y``; decode ``z``. Loss is the cross-entropy on ``z``.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, DomainError
from .network import Branch, KFanNetwork
from .optim import LbfgsConfig, lbfgs_minimize
from .rbm import Rbm, sigmoid

TASKS = ("restore_label", "multiview")
_ROUTES = {
    "restore_label": (("x",), ("y", "z")),
    "multiview": (("x", "y"), ("z",)),
}


@dataclass(frozen=True)
class FineTuneConfig:
    lam: float = 1.0
    task: str = "restore_label"
    epsilon_clamp: float = 1e-7
    max_iterations: int = 200

    def __post_init__(self):
        if self.task not in TASKS:
            raise DomainError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.lam >= 0:
            raise DomainError("lam must be >= 0")
        if not 0 < self.epsilon_clamp < 0.5:
            raise DomainError("epsilon_clamp must lie in (0, 0.5)")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be positive")


# --- flat parameter vectors --------------------------------------------------

class Segment(NamedTuple):
    key: tuple
    shape: tuple
    offset: int

    @property
    def size(self):
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class Layout:
    specs: tuple
    shared_dim: int
    segments: tuple

    @property
    def size(self):
        last = self.segments[-1]
        return last.offset + last.size


@dataclass(frozen=True)
class FlatParams:
    values: np.ndarray
    layout: Layout

    def segment(self, key):
        for seg in self.layout.segments:
            if seg.key == key:
                return self.values[seg.offset:seg.offset + seg.size].reshape(seg.shape)
        raise KeyError(key)


def _arrays(net):
    """(key, array) pairs in the canonical parameter order."""
    for branch in net.branches:
        for l, rbm in enumerate(branch.layers):
            yield (branch.name, l, "weights"), rbm.weights
            yield (branch.name, l, "visible_bias"), rbm.visible_bias
            yield (branch.name, l, "hidden_bias"), rbm.hidden_bias
        yield (branch.name, "top", "weights"), branch.top_weights
        yield (branch.name, "top", "down_bias"), branch.top_down_bias
    yield ("shared", "bias"), net.top_bias


def layout_of(net):
    segments, offset = [], 0
    for key, a in _arrays(net):
        segments.append(Segment(key, a.shape, offset))
        offset += a.size
    return Layout(tuple(b.spec for b in net.branches), net.shared_dim, tuple(segments))


def flatten(net):
    return FlatParams(np.concatenate([a.ravel() for _, a in _arrays(net)]), layout_of(net))


def unflatten(flat, layout=None):
    if isinstance(flat, FlatParams):
        layout = layout or flat.layout
        flat = flat.values
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim != 1 or flat.shape[0] != layout.size:
        raise DomainError(f"flat vector has length {flat.size}, layout needs {layout.size}")

    segs = iter(layout.segments)

    def take():
        seg = next(segs)
        return flat[seg.offset:seg.offset + seg.size].reshape(seg.shape)

    branches = []
    for spec in layout.specs:
        layers = [Rbm(take(), take(), take()) for _ in spec.hidden_sizes]
        branches.append(Branch(spec, layers, take(), take()))
    return KFanNetwork(branches, take())


# --- forward paths -------------------------------------------------------------

def _encode(branch, v):
    acts = [v]
    for rbm in branch.layers:
        acts.append(sigmoid(acts[-1] @ rbm.weights.T + rbm.hidden_bias))
    return acts


def _decode(branch, h):
    """Top-down activations, ordered from the last hidden layer to the visible layer."""
    acts = [sigmoid(h @ branch.top_weights + branch.top_down_bias)]
    for rbm in reversed(branch.layers):
        acts.append(sigmoid(acts[-1] @ rbm.weights + rbm.visible_bias))
    return acts


def _check_input(branch, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != branch.spec.visible_dim:
        raise DimensionError(
            f"branch {branch.name}: input width {v.shape[-1]}, expected {branch.spec.visible_dim}")
    return v


def _shared(net, inputs):
    """Encode each named input and fuse into the shared layer."""
    encoded = {}
    pre = net.top_bias
    for name, v in inputs.items():
        branch = net.branch(name)
        encoded[name] = _encode(branch, _check_input(branch, v))
        pre = pre + encoded[name][-1] @ branch.top_weights.T
    return sigmoid(pre), encoded


def forward_shared_from_one(net, branch_id, v):
    """Shared-layer activation computed from a single branch's input."""
    h, _ = _shared(net, {branch_id: v})
    return h


def _require(net, names):
    missing = [n for n in names if n not in net.names]
    if missing:
        raise DomainError(f"network lacks branches {missing}")


def forward_restore(net, v_x):
    """Restored image and label probabilities predicted from the noisy input alone."""
    _require(net, ("x", "y", "z"))
    h, _ = _shared(net, {"x": v_x})
    return _decode(net.branch("y"), h)[-1], _decode(net.branch("z"), h)[-1]


def forward_multiview(net, v_x, v_y):
    """Class probabilities predicted from features and view vector together."""
    _require(net, ("x", "y", "z"))
    if v_x is None or v_y is None:
        raise DomainError("multiview prediction needs both x and y inputs")
    h, _ = _shared(net, {"x": v_x, "y": v_y})
    return _decode(net.branch("z"), h)[-1]


def classify(v_z):
    """Index of the largest component (lowest index on ties); row-wise for batches."""
    v_z = np.asarray(v_z)
    if v_z.shape[-1] == 0:
        raise DomainError("empty prediction vector")
    out = np.argmax(v_z, axis=-1)
    return int(out) if out.ndim == 0 else out


# --- losses ----------------------------------------------------------------------

def bernoulli_ce(pred, target, eps=1e-7):
    """Per-example summed cross-entropy with log arguments floored at ``eps``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    ce = -(target * np.log(np.maximum(pred, eps))
           + (1.0 - target) * np.log(np.maximum(1.0 - pred, eps)))
    return ce.sum(axis=-1)


def _mean(x):
    return float(np.mean(x))


def loss_joint(pred_y, pred_z, v_y, v_z, lam, eps=1e-7):
    """Restoration plus ``lam`` times labeling cross-entropy, averaged over the batch."""
    return _mean(bernoulli_ce(pred_y, v_y, eps) + lam * bernoulli_ce(pred_z, v_z, eps))


def loss_multiview(pred_z, v_z, eps=1e-7):
    return _mean(bernoulli_ce(pred_z, v_z, eps))


def _ce_delta(pred, target, eps):
    # d(ce)/d(pre-activation) for sigmoid outputs; floored logs contribute nothing
    return (-target * (1.0 - pred) * (pred > eps)
            + (1.0 - target) * pred * ((1.0 - pred) > eps))


# --- gradients ---------------------------------------------------------------------

def _batch_arrays(batch):
    if hasattr(batch, "x"):
        return batch.x, batch.y, batch.z
    if isinstance(batch, dict):
        return batch.get("x"), batch.get("y"), batch.get("z")
    x, y, z = batch
    return x, y, z


def loss_and_gradients(net, batch, cfg):
    """Objective value and its exact gradient (as :class:`FlatParams`) over ``batch``."""
    _require(net, ("x", "y", "z"))
    x, y, z = _batch_arrays(batch)
    data = {"x": x, "y": y, "z": z}
    in_names, out_names = _ROUTES[cfg.task]
    weights = {"y": 1.0, "z": cfg.lam} if cfg.task == "restore_label" else {"z": 1.0}
    for name in in_names + out_names:
        if data[name] is None:
            raise DomainError(f"task {cfg.task} needs branch {name} in the batch")
    inputs = {n: np.atleast_2d(np.asarray(data[n], dtype=np.float64)) for n in in_names}
    n = next(iter(inputs.values())).shape[0]
    if any(np.atleast_2d(data[k]).shape[0] != n for k in in_names + out_names):
        raise DomainError("batch arrays have different lengths")

    h, encoded = _shared(net, inputs)
    grads = {key: np.zeros_like(a) for key, a in _arrays(net)}
    loss = np.zeros(n)
    d_h = np.zeros_like(h)
    eps = cfg.epsilon_clamp

    for name in out_names:
        branch = net.branch(name)
        target = np.atleast_2d(np.asarray(data[name], dtype=np.float64))
        acts = _decode(branch, h)
        pred = acts[-1]
        if pred.shape != target.shape:
            raise DimensionError(f"branch {name}: target shape {target.shape}, "
                                 f"prediction shape {pred.shape}")
        w = weights[name]
        loss += w * bernoulli_ce(pred, target, eps)
        delta = w * _ce_delta(pred, target, eps) / n
        # acts[k] for k >= 1 is the output of layers[L - k] read top-down
        nl = len(branch.layers)
        for k in range(nl, 0, -1):
            l = nl - k
            rbm = branch.layers[l]
            upper = acts[k - 1]
            grads[(name, l, "weights")] += upper.T @ delta
            grads[(name, l, "visible_bias")] += delta.sum(axis=0)
            delta = (delta @ rbm.weights.T) * upper * (1.0 - upper)
        grads[(name, "top", "weights")] += h.T @ delta
        grads[(name, "top", "down_bias")] += delta.sum(axis=0)
        d_h += delta @ branch.top_weights.T

    delta_h = d_h * h * (1.0 - h)
    grads[("shared", "bias")] += delta_h.sum(axis=0)
    for name in in_names:
        branch = net.branch(name)
        acts = encoded[name]
        grads[(name, "top", "weights")] += delta_h.T @ acts[-1]
        delta = (delta_h @ branch.top_weights) * acts[-1] * (1.0 - acts[-1])
        for l in range(len(branch.layers) - 1, -1, -1):
            rbm = branch.layers[l]
            grads[(name, l, "weights")] += delta.T @ acts[l]
            grads[(name, l, "hidden_bias")] += delta.sum(axis=0)
            if l:
                delta = (delta @ rbm.weights) * acts[l] * (1.0 - acts[l])

    layout = layout_of(net)
    values = np.concatenate([grads[seg.key].ravel() for seg in layout.segments])
    return float(loss.mean()), FlatParams(values, layout)


def gradients(net, batch, cfg):
    return loss_and_gradients(net, batch, cfg)[1]


def objective(net, batch, cfg):
    """Loss value only, via the plain forward paths (independent of the backward pass)."""
    x, y, z = _batch_arrays(batch)
    eps = cfg.epsilon_clamp
    if cfg.task == "restore_label":
        pred_y, pred_z = forward_restore(net, x)
        return loss_joint(pred_y, pred_z, y, z, cfg.lam, eps)
    return loss_multiview(forward_multiview(net, x, y), z, eps)


class FineTuneResult(NamedTuple):
    net: KFanNetwork
    history: list
    status: str


def finetune(net, batch, cfg, lbfgs=None, callback=None):
    """Minimize the task objective over every parameter with L-BFGS.

    ``cfg.max_iterations`` overrides the iteration limit of ``lbfgs``.
    """
    base = lbfgs or LbfgsConfig()
    lbfgs = LbfgsConfig(base.memory, cfg.max_iterations, base.grad_tolerance,
                        base.wolfe_c1, base.wolfe_c2, base.max_line_search_steps)
    layout = layout_of(net)

    def fn(theta):
        loss, grad = loss_and_gradients(unflatten(theta, layout), batch, cfg)
        if callback is not None:
            callback(loss)
        return loss, grad.values

    result = lbfgs_minimize(fn, flatten(net).values, lbfgs)
    return FineTuneResult(unflatten(result.x, layout), result.history, result.status)
