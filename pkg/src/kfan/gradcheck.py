"""Finite-difference checks of the fine-tuning gradients.

The analytic route is the backward pass in :func:`loss_and_gradients`; the
reference route perturbs the flat parameter vector and re-evaluates the
forward-only :func:`objective`.
"""

from typing import NamedTuple

import numpy as np

from .finetune import FineTuneConfig, flatten, loss_and_gradients, objective, unflatten
from .network import BranchSpec, build_kfan
from .optim import finite_diff_grad
from .rbm import TrainConfig
from .rng import make_rng

REL_FLOOR = 1e-5  # central-difference round-off is ~1e-10 on O(10) losses


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(net, batch, cfg, h=1e-5):
    """Largest relative error between backprop and central differences."""
    flat = flatten(net)
    _, grad = loss_and_gradients(net, batch, cfg)
    numeric = finite_diff_grad(lambda t: objective(unflatten(t, flat.layout), batch, cfg),
                               flat.values, h)
    return float(np.max(relative_error(grad.values, numeric)))


class GradcheckResult(NamedTuple):
    max_error: float
    errors: list  # (net index, task, max relative error)
    passed: bool


def random_tiny_case(rng, max_dim=8, max_shared=6, max_layers=2, batch=4, stddev=0.5):
    """A random 3-fan net with x, y, z branches plus a matching random batch."""
    specs = []
    for name in "xyz":
        depth = int(rng.integers(1, max_layers + 1))
        hidden = tuple(int(s) for s in rng.integers(1, max_dim + 1, size=depth))
        specs.append(BranchSpec(name, int(rng.integers(1, max_dim + 1)), hidden))
    return _case(specs, int(rng.integers(1, max_shared + 1)), rng, batch, stddev)


def _case(specs, shared_dim, rng, batch, stddev):
    net = build_kfan(specs, shared_dim, TrainConfig(weight_init_stddev=stddev), rng)
    # non-zero biases so every parameter path is exercised
    net = unflatten(flatten(net).values + rng.normal(0, stddev, flatten(net).values.size),
                    flatten(net).layout)
    dims = {s.name: s.visible_dim for s in specs}
    x = rng.random((batch, dims["x"]))
    y = rng.random((batch, dims["y"]))
    z = np.zeros((batch, dims["z"]))
    z[np.arange(batch), rng.integers(0, dims["z"], size=batch)] = 1.0
    return net, {"x": x, "y": y, "z": z}


def gradcheck_suite(n_nets=20, seed=0, specs=None, shared_dim=None, tolerance=1e-4, lam=1.0):
    """Check both task objectives on ``n_nets`` random networks.

    With ``specs`` and ``shared_dim`` every net has that architecture;
    otherwise architectures are drawn at random (dims up to 8, shared up to 6).
    """
    rng = make_rng(seed, 0xC0DE)
    errors = []
    for i in range(n_nets):
        if specs is None:
            net, batch = random_tiny_case(rng)
        else:
            net, batch = _case(specs, shared_dim, rng, 4, 0.5)
        for task in ("restore_label", "multiview"):
            cfg = FineTuneConfig(lam=lam, task=task)
            errors.append((i, task, check_gradients(net, batch, cfg)))
    worst = max(e for _, _, e in errors)
    return GradcheckResult(worst, errors, worst < tolerance)
