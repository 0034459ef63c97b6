import pytest
from hypothesis import HealthCheck, settings

from kfan.network import BranchSpec, build_kfan
from kfan.rbm import Rbm, TrainConfig
from kfan.rng import make_rng

settings.register_profile("kfan", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kfan")


def random_rbm(seed, n_visible, n_hidden, scale=1.0):
    rng = make_rng(seed, 7)
    return Rbm(rng.normal(0, scale, (n_hidden, n_visible)),
               rng.normal(0, scale, n_visible), rng.normal(0, scale, n_hidden))


def random_net(seed, specs=None, shared_dim=2, scale=1.0):
    """Tiny 3-fan net with every parameter (including biases) drawn from N(0, scale)."""
    from kfan.finetune import flatten, unflatten

    specs = specs or [BranchSpec("x", 3, (2, 2)), BranchSpec("y", 2, (2,)),
                      BranchSpec("z", 2, (2,))]
    rng = make_rng(seed, 11)
    net = build_kfan(specs, shared_dim, TrainConfig(weight_init_stddev=scale), rng)
    flat = flatten(net)
    return unflatten(rng.normal(0, scale, flat.values.size), flat.layout)


def random_visibles(net, rng, n=None, binary=True):
    shape = (lambda d: (d,)) if n is None else (lambda d: (n, d))
    out = {}
    for b in net.branches:
        v = rng.random(shape(b.spec.visible_dim))
        out[b.name] = (v < 0.5).astype(float) if binary else v
    return out


@pytest.fixture
def rng():
    return make_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
