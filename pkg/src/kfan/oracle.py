"""Exact brute-force quantities for tiny models.

Everything here enumerates binary configurations explicitly. Models are first
rewritten as a flat quadratic form ``-E(s) = s.J.s + beta.s`` over all units,
built straight from the parameter arrays, so the oracle shares no code path
with the conditionals, the mean-field solver or the joint energy it checks.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, OracleBudgetError
from .network import KFanNetwork, MeanFieldState
from .rbm import Rbm, RbmGradient

CHUNK = 1 << 15


@dataclass(frozen=True)
class OracleBudget:
    max_total_units: int = 20


@dataclass(frozen=True)
class _QuadForm:
    coupling: np.ndarray  # strictly one-sided: each edge appears once
    bias: np.ndarray
    visible: list  # per visible group, index array into the unit vector
    hidden: list  # per hidden layer, index array

    @property
    def size(self):
        return self.bias.shape[0]


def _quad_form(model):
    if isinstance(model, Rbm):
        nv, nh = model.n_visible, model.n_hidden
        n = nv + nh
        J = np.zeros((n, n))
        J[nv:, :nv] = model.weights
        beta = np.concatenate([model.visible_bias, model.hidden_bias])
        return _QuadForm(J, beta, [np.arange(nv)], [np.arange(nv, n)])
    if isinstance(model, KFanNetwork):
        offsets, beta, cursor = [], [], 0
        for branch in model.branches:
            idx = []
            for width in branch.spec.dims:
                idx.append(np.arange(cursor, cursor + width))
                cursor += width
            offsets.append(idx)
            beta.append(branch.layers[0].visible_bias)
            beta.extend(r.hidden_bias for r in branch.layers)
        shared = np.arange(cursor, cursor + model.shared_dim)
        cursor += model.shared_dim
        beta.append(model.top_bias)
        J = np.zeros((cursor, cursor))
        for branch, idx in zip(model.branches, offsets):
            for l, rbm in enumerate(branch.layers):
                J[np.ix_(idx[l + 1], idx[l])] = rbm.weights
            J[np.ix_(shared, idx[-1])] = branch.top_weights
        hidden = [i for idx in offsets for i in idx[1:]] + [shared]
        return _QuadForm(J, np.concatenate(beta), [idx[0] for idx in offsets], hidden)
    raise DomainError(f"unsupported model type {type(model).__name__}")


def _check_budget(n, budget):
    budget = budget or OracleBudget()
    if n > budget.max_total_units:
        raise OracleBudgetError(
            f"enumeration over {n} units exceeds the budget of {budget.max_total_units}")


def _configs(n):
    """Yield all 2**n binary configurations as (m, n) float blocks."""
    bits = np.arange(n)
    total = 1 << n
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(start + CHUNK, total))
        yield ((idx[:, None] >> bits) & 1).astype(np.float64)


def _neg_energy(q, s):
    return np.einsum("mi,ij,mj->m", s, q.coupling, s) + s @ q.bias


def exact_log_partition(model, budget=None):
    """ln Z by summing exp(-E) over every joint configuration (streaming log-sum-exp)."""
    q = _quad_form(model)
    _check_budget(q.size, budget)
    acc = -np.inf
    for s in _configs(q.size):
        acc = np.logaddexp(acc, logsumexp(_neg_energy(q, s)))
    return float(acc)


def _hidden_indices(q):
    return np.concatenate(q.hidden)


def _clamp_visibles(model, q, visibles):
    """Full-length unit vector with visibles filled in and hiddens zero."""
    if isinstance(model, Rbm):
        visibles = [visibles]
    elif isinstance(visibles, dict):
        visibles = [visibles[n] for n in model.names]
    base = np.zeros(q.size)
    for idx, v in zip(q.visible, visibles):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != idx.shape:
            raise DomainError(f"visible vector of shape {v.shape}, expected {idx.shape}")
        base[idx] = v
    return base


def _posterior_table(model, q, visibles, budget):
    """All hidden configurations given clamped visibles, with log-weights."""
    hid = _hidden_indices(q)
    _check_budget(hid.size, budget)
    base = _clamp_visibles(model, q, visibles)
    blocks, logw = [], []
    for h in _configs(hid.size):
        s = np.repeat(base[None, :], h.shape[0], axis=0)
        s[:, hid] = h
        blocks.append(s)
        logw.append(_neg_energy(q, s))
    return np.concatenate(blocks), np.concatenate(logw)


def exact_log_marginal(model, visibles, log_partition=None, budget=None):
    """ln p(v) = ln sum_h exp(-E(v, h)) - ln Z."""
    q = _quad_form(model)
    if log_partition is None:
        log_partition = exact_log_partition(model, budget)
    _, logw = _posterior_table(model, q, visibles, budget)
    return float(logsumexp(logw) - log_partition)


def exact_loglik_grad(rbm, data, budget=None):
    """Exact mean gradient of ln p(v) over ``data``: <.>_data - <.>_model."""
    q = _quad_form(rbm)
    _check_budget(q.size, budget)
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    nv = rbm.n_visible
    hid = _hidden_indices(q)

    pos_w = np.zeros_like(rbm.weights)
    pos_h = np.zeros(rbm.n_hidden)
    for v in data:
        s, logw = _posterior_table(rbm, q, v, budget)
        p = np.exp(logw - logsumexp(logw))
        eh = p @ s[:, hid]
        pos_w += np.outer(eh, v)
        pos_h += eh
    pos_w /= data.shape[0]
    pos_h /= data.shape[0]
    pos_v = data.mean(axis=0)

    log_z = exact_log_partition(rbm, budget)
    neg_w = np.zeros_like(rbm.weights)
    neg_v = np.zeros(nv)
    neg_h = np.zeros(rbm.n_hidden)
    for s in _configs(q.size):
        p = np.exp(_neg_energy(q, s) - log_z)
        sv, sh = s[:, :nv], s[:, nv:]
        neg_w += (sh * p[:, None]).T @ sv
        neg_v += p @ sv
        neg_h += p @ sh
    return RbmGradient(pos_w - neg_w, pos_v - neg_v, pos_h - neg_h)


def enumerate_posterior(model, visibles, budget=None):
    """Exact marginals p(h_i = 1 | v) for every hidden unit.

    Returns a vector for an Rbm and a :class:`MeanFieldState` for a network.
    """
    q = _quad_form(model)
    s, logw = _posterior_table(model, q, visibles, budget)
    p = np.exp(logw - logsumexp(logw))
    marg = [p @ s[:, idx] for idx in q.hidden]
    if isinstance(model, Rbm):
        return marg[0]
    layers, k = [], 0
    for branch in model.branches:
        n = len(branch.layers)
        layers.append(tuple(marg[k:k + n]))
        k += n
    return MeanFieldState(tuple(layers), marg[k])


def exact_joint_distribution(model, budget=None):
    """Every configuration with its exact probability (for normalization checks)."""
    q = _quad_form(model)
    _check_budget(q.size, budget)
    log_z = exact_log_partition(model, budget)
    for s in _configs(q.size):
        yield s, np.exp(_neg_energy(q, s) - log_z)
