import itertools
import math

import numpy as np
import pytest

from kfan.errors import OracleBudgetError
from kfan.network import BranchSpec, build_kfan, joint_energy, MeanFieldState
from kfan.oracle import (OracleBudget, enumerate_posterior, exact_joint_distribution,
                         exact_log_marginal, exact_log_partition, exact_loglik_grad)
from kfan.rbm import Rbm, TrainConfig, hidden_given_visible
from kfan.rng import make_rng

from conftest import random_net, random_rbm


def test_zero_rbm_partition_is_uniform():
    rbm = Rbm(np.zeros((2, 3)), np.zeros(3), np.zeros(2))
    assert exact_log_partition(rbm) == pytest.approx(5 * math.log(2), abs=1e-12)


def test_one_by_one_partition():
    # states (v, h): only (1, 1) carries weight e^w
    rbm = Rbm([[1.5]], [0.0], [0.0])
    assert exact_log_partition(rbm) == pytest.approx(2.012458578037319, abs=1e-12)


def test_partition_transposition_invariant():
    rbm = random_rbm(3, 3, 4)
    swapped = Rbm(rbm.weights.T, rbm.hidden_bias, rbm.visible_bias)
    assert exact_log_partition(rbm) == pytest.approx(exact_log_partition(swapped), abs=1e-12)


def test_exact_gradient_by_hand():
    rbm = Rbm(np.zeros((1, 2)), np.zeros(2), np.zeros(1))
    g = exact_loglik_grad(rbm, np.array([[1.0, 0.0]]))
    assert np.allclose(g.d_weights, [[0.5 - 0.25, 0.0 - 0.25]], atol=1e-14)
    assert np.allclose(g.d_visible_bias, [0.5, -0.5], atol=1e-14)
    assert np.allclose(g.d_hidden_bias, [0.0], atol=1e-14)


def test_exact_gradient_matches_finite_differences():
    rbm = random_rbm(5, 3, 2)
    data = np.array([[1, 0, 1], [0, 1, 1], [1, 1, 0]], dtype=float)

    def mean_ll(w, b, c):
        r = Rbm(w, b, c)
        lz = exact_log_partition(r)
        return np.mean([exact_log_marginal(r, v, lz) for v in data])

    g = exact_loglik_grad(rbm, data)
    h = 1e-5
    params = [rbm.weights, rbm.visible_bias, rbm.hidden_bias]
    analytic = [g.d_weights, g.d_visible_bias, g.d_hidden_bias]
    for k, (p, a) in enumerate(zip(params, analytic)):
        for idx in np.ndindex(p.shape):
            up = [q.copy() for q in params]
            dn = [q.copy() for q in params]
            up[k][idx] += h
            dn[k][idx] -= h
            fd = (mean_ll(*up) - mean_ll(*dn)) / (2 * h)
            assert a[idx] == pytest.approx(fd, abs=1e-8)


def test_saturated_model_has_near_zero_gradient():
    # hidden unit copies v0; huge biases pin the model onto the data distribution {[1,1]}
    rbm = Rbm([[0.0, 0.0]], [30.0, 30.0], [30.0])
    g = exact_loglik_grad(rbm, np.array([[1.0, 1.0]]))
    assert np.max(np.abs(g.d_weights)) < 1e-9


def test_distribution_normalizes():
    for model in (random_rbm(1, 3, 3), random_net(2)):
        total = sum(p.sum() for _, p in exact_joint_distribution(model))
        assert total == pytest.approx(1.0, abs=1e-12)


def test_budget_refusal():
    with pytest.raises(OracleBudgetError):
        exact_log_partition(Rbm(np.zeros((12, 12)), np.zeros(12), np.zeros(12)))
    with pytest.raises(OracleBudgetError):
        exact_log_partition(random_rbm(0, 3, 3), OracleBudget(5))


def test_posterior_zero_weights_is_sigmoid_of_bias():
    specs = [BranchSpec("x", 2, (2,)), BranchSpec("y", 2, (1,))]
    net = build_kfan(specs, 2, TrainConfig(weight_init_stddev=0.0), make_rng(0))
    post = enumerate_posterior(net, {"x": [1.0, 0.0], "y": [0.0, 1.0]})
    for m in post.all_arrays():
        assert np.allclose(m, 0.5, atol=1e-14)


def test_posterior_single_layer_matches_conditional():
    rbm = random_rbm(8, 3, 3)
    v = np.array([1.0, 0.0, 1.0])
    assert np.allclose(enumerate_posterior(rbm, v), hidden_given_visible(rbm, v), atol=1e-12)


def test_net_marginal_matches_joint_energy_route():
    net = random_net(4)
    vis = {"x": np.array([1.0, 0.0, 1.0]), "y": np.array([0.0, 1.0]), "z": np.array([1.0, 1.0])}
    lz = exact_log_partition(net)
    # independent route: sum exp(-joint_energy) over hidden states
    sizes = [[2, 2], [2], [2]]
    logs = []
    n_hidden = sum(map(sum, sizes)) + net.shared_dim
    for bits in itertools.product([0.0, 1.0], repeat=n_hidden):
        bits = np.array(bits)
        layers, k = [], 0
        for sz in sizes:
            hs = []
            for s in sz:
                hs.append(bits[k:k + s])
                k += s
            layers.append(tuple(hs))
        state = MeanFieldState(tuple(layers), bits[k:])
        logs.append(-joint_energy(net, vis, state))
    logs = np.array(logs)
    ref = logs.max() + np.log(np.exp(logs - logs.max()).sum()) - lz
    assert exact_log_marginal(net, vis, lz) == pytest.approx(ref, abs=1e-10)
