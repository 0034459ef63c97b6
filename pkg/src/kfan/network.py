"""K-fan network: K branch stacks of RBMs joined by one shared hidden layer.

Bias conventions. In the joint energy the visible layer of a branch uses
``layers[0].visible_bias``, hidden layer ``l`` (1-based) uses
``layers[l-1].hidden_bias`` and the shared layer uses ``top_bias``. The
remaining biases (``layers[l].visible_bias`` for ``l >= 1`` and the branch's
``top_down_bias``) are decoder biases: they only enter the top-down
feed-forward maps used at fine-tuning time.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .rbm import Rbm, TrainConfig, pretrain_stack, sample_bernoulli, sigmoid

MU_CLAMP = 1e-7


@dataclass(frozen=True)
class BranchSpec:
    name: str
    visible_dim: int
    hidden_sizes: tuple

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(s) for s in self.hidden_sizes))
        if not self.name or not self.name.isidentifier():
            raise DomainError(f"branch name must be an identifier, got {self.name!r}")
        if self.visible_dim < 1:
            raise DomainError(f"branch {self.name}: visible_dim must be positive")
        if not self.hidden_sizes:
            raise DomainError(f"branch {self.name}: hidden_sizes must be non-empty")
        if any(s < 1 for s in self.hidden_sizes):
            raise DomainError(f"branch {self.name}: hidden sizes must be positive")

    @property
    def dims(self):
        return (self.visible_dim,) + self.hidden_sizes


@dataclass(frozen=True)
class Branch:
    spec: BranchSpec
    layers: tuple
    top_weights: np.ndarray  # (shared_dim, last hidden)
    top_down_bias: np.ndarray  # (last hidden,)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "top_weights", np.asarray(self.top_weights, dtype=np.float64))
        object.__setattr__(self, "top_down_bias", np.asarray(self.top_down_bias, dtype=np.float64))
        dims = self.spec.dims
        if len(self.layers) != len(dims) - 1:
            raise DimensionError(f"branch {self.spec.name}: expected {len(dims) - 1} layers")
        for l, rbm in enumerate(self.layers):
            if (rbm.n_visible, rbm.n_hidden) != (dims[l], dims[l + 1]):
                raise DimensionError(
                    f"branch {self.spec.name} layer {l}: shape {rbm.weights.shape} "
                    f"does not match dims {dims[l]}->{dims[l + 1]}")
        if self.top_weights.ndim != 2 or self.top_weights.shape[1] != dims[-1]:
            raise DimensionError(
                f"branch {self.spec.name}: top weights need {dims[-1]} columns, "
                f"got shape {self.top_weights.shape}")
        if self.top_down_bias.shape != (dims[-1],):
            raise DimensionError(f"branch {self.spec.name}: bad top_down_bias shape")

    @property
    def name(self):
        return self.spec.name


@dataclass(frozen=True)
class KFanNetwork:
    branches: tuple
    top_bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "top_bias", np.asarray(self.top_bias, dtype=np.float64))
        if len(self.branches) < 2:
            raise DomainError("a K-fan network needs at least two branches")
        names = [b.name for b in self.branches]
        if len(set(names)) != len(names):
            raise DomainError(f"duplicate branch names {names}")
        if self.top_bias.ndim != 1 or self.top_bias.shape[0] < 1:
            raise DimensionError("top_bias must be a non-empty vector")
        for b in self.branches:
            if b.top_weights.shape[0] != self.shared_dim:
                raise DimensionError(
                    f"branch {b.name}: top weights have {b.top_weights.shape[0]} rows, "
                    f"shared layer has {self.shared_dim}")

    @property
    def shared_dim(self):
        return self.top_bias.shape[0]

    @property
    def names(self):
        return tuple(b.name for b in self.branches)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise DomainError(f"unknown branch {name!r}; network has {self.names}") from None

    def branch(self, name):
        return self.branches[self.index(name)]


@dataclass(frozen=True)
class MeanFieldState:
    """Factorized posterior means: per branch one array per hidden layer, plus the shared layer.

    Arrays are vectors for a single example or (batch, width) matrices.
    """

    layers: tuple
    shared: np.ndarray

    def all_arrays(self):
        for branch in self.layers:
            yield from branch
        yield self.shared


@dataclass(frozen=True)
class JointTrainConfig(TrainConfig):
    mf_sweeps: int = 10
    mf_tolerance: float = 1e-4
    mf_damping: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.mf_sweeps < 1:
            raise DomainError("mf_sweeps must be >= 1")
        if not self.mf_tolerance > 0:
            raise DomainError("mf_tolerance must be > 0")
        if not 0 <= self.mf_damping < 1:
            raise DomainError("mf_damping must lie in [0, 1)")


def build_kfan(specs, shared_dim, init, rng):
    """Randomly initialized network: Gaussian(0, init.weight_init_stddev) weights, zero biases."""
    specs = list(specs)
    if len(specs) < 2:
        raise DomainError("a K-fan network needs at least two branches")
    if shared_dim < 1:
        raise DomainError("shared_dim must be positive")
    branches = []
    for spec in specs:
        dims = spec.dims
        layers = [Rbm.init(dims[l], dims[l + 1], init.weight_init_stddev, rng)
                  for l in range(len(dims) - 1)]
        top = rng.normal(0.0, 1.0, size=(shared_dim, dims[-1])) * init.weight_init_stddev
        branches.append(Branch(spec, layers, top, np.zeros(dims[-1])))
    return KFanNetwork(branches, np.zeros(shared_dim))


def _as_visible_list(net, visibles, batched=True):
    """Normalize a dict or sequence of per-branch inputs into a list aligned with branches."""
    if isinstance(visibles, dict):
        unknown = set(visibles) - set(net.names)
        if unknown:
            raise DomainError(f"unknown branches {sorted(unknown)}")
        missing = [n for n in net.names if visibles.get(n) is None]
        if missing:
            raise DomainError(f"missing input for branches {missing}")
        visibles = [visibles[n] for n in net.names]
    else:
        visibles = list(visibles)
        if len(visibles) != len(net.branches):
            raise DomainError(f"expected {len(net.branches)} branch inputs, got {len(visibles)}")
        if any(v is None for v in visibles):
            raise DomainError("missing branch input")
    out = []
    for b, v in zip(net.branches, visibles):
        v = np.asarray(v, dtype=np.float64)
        if batched:
            v = np.atleast_2d(v)
        if v.shape[-1] != b.spec.visible_dim:
            raise DimensionError(
                f"branch {b.name}: input width {v.shape[-1]}, expected {b.spec.visible_dim}")
        out.append(v)
    if batched and len({v.shape[0] for v in out}) != 1:
        raise DomainError(f"misaligned batch lengths {[v.shape[0] for v in out]}")
    return out


def joint_energy(net, visibles, hiddens):
    """Energy of one joint binary configuration of every unit in the network."""
    vs = _as_visible_list(net, visibles, batched=False)
    if len(hiddens.layers) != len(net.branches):
        raise DimensionError("hidden state does not match the branch count")
    h3 = np.asarray(hiddens.shared, dtype=np.float64)
    if h3.shape != (net.shared_dim,):
        raise DimensionError("shared state has the wrong shape")
    e = -float(net.top_bias @ h3)
    for branch, v, hs in zip(net.branches, vs, hiddens.layers):
        if v.ndim != 1:
            raise DimensionError("joint_energy takes single configurations")
        units = [v] + [np.asarray(h, dtype=np.float64) for h in hs]
        if [u.shape for u in units] != [(d,) for d in branch.spec.dims]:
            raise DimensionError(f"branch {branch.name}: hidden state has the wrong shape")
        e -= float(branch.layers[0].visible_bias @ v)
        for l, rbm in enumerate(branch.layers):
            e -= float(units[l + 1] @ rbm.weights @ units[l])
            e -= float(rbm.hidden_bias @ units[l + 1])
        e -= float(h3 @ branch.top_weights @ units[-1])
    return e


def _bottom_up(net, vs):
    layers = []
    for branch, v in zip(net.branches, vs):
        mus, below = [], v
        for rbm in branch.layers:
            below = sigmoid(below @ rbm.weights.T + rbm.hidden_bias)
            mus.append(below)
        layers.append(mus)
    shared = sigmoid(sum(mus[-1] @ b.top_weights.T for b, mus in zip(net.branches, layers))
                     + net.top_bias)
    return layers, shared


def mean_field_posterior(net, visibles, cfg=None, trace=None):
    """Fixed point of the fully factorized posterior given all branch inputs.

    Starts from a bottom-up pass, then repeats sweeps that update each
    branch's hidden layers bottom-up and finally the shared layer. Each layer
    update is exact coordinate ascent on the ELBO, so with zero damping the
    bound never decreases. If ``trace`` is a list, the state after each sweep
    is appended to it.
    """
    cfg = cfg or JointTrainConfig()
    vs = _as_visible_list(net, visibles)
    single = all(np.ndim(v) == 1 for v in (visibles.values() if isinstance(visibles, dict) else visibles))
    layers, shared = _bottom_up(net, vs)
    layers = [[np.clip(m, MU_CLAMP, 1 - MU_CLAMP) for m in mus] for mus in layers]
    shared = np.clip(shared, MU_CLAMP, 1 - MU_CLAMP)
    d = cfg.mf_damping

    def relax(old, new):
        new = (1.0 - d) * new + d * old if d else new
        return np.clip(new, MU_CLAMP, 1 - MU_CLAMP)

    for _ in range(cfg.mf_sweeps):
        delta = 0.0
        for branch, v, mus in zip(net.branches, vs, layers):
            n = len(mus)
            for l in range(n):
                below = v if l == 0 else mus[l - 1]
                act = below @ branch.layers[l].weights.T + branch.layers[l].hidden_bias
                if l + 1 < n:
                    act = act + mus[l + 1] @ branch.layers[l + 1].weights
                else:
                    act = act + shared @ branch.top_weights
                new = relax(mus[l], sigmoid(act))
                delta = max(delta, float(np.max(np.abs(new - mus[l]))))
                mus[l] = new
        act = net.top_bias + sum(mus[-1] @ b.top_weights.T for b, mus in zip(net.branches, layers))
        new = relax(shared, sigmoid(act))
        delta = max(delta, float(np.max(np.abs(new - shared))))
        shared = new
        if trace is not None:
            trace.append(_pack(layers, shared, single))
        if delta < cfg.mf_tolerance:
            break
    return _pack(layers, shared, single)


def _pack(layers, shared, single):
    if single:
        return MeanFieldState(tuple(tuple(m[0] for m in mus) for mus in layers), shared[0])
    return MeanFieldState(tuple(tuple(m.copy() for m in mus) for mus in layers), shared.copy())


def _entropy(mu):
    return -(mu * np.log(mu) + (1.0 - mu) * np.log1p(-mu))


def elbo(net, visibles, mu, log_partition):
    """Variational lower bound E_q[-E(v, h)] - ln Z + H(q) for factorized q.

    Returns a float for a single example and a vector for a batch.
    """
    single = mu.shared.ndim == 1
    vs = _as_visible_list(net, visibles)
    arrays = [np.atleast_2d(a) for a in mu.all_arrays()]
    if any(np.any((a <= 0.0) | (a >= 1.0)) for a in arrays):
        raise DomainError("mean-field parameters must lie strictly inside (0, 1)")
    shared = np.atleast_2d(mu.shared)
    neg_e = shared @ net.top_bias
    ent = _entropy(shared).sum(axis=1)
    for branch, v, mus in zip(net.branches, vs, mu.layers):
        units = [v] + [np.atleast_2d(m) for m in mus]
        neg_e = neg_e + v @ branch.layers[0].visible_bias
        for l, rbm in enumerate(branch.layers):
            neg_e = neg_e + np.einsum("bi,ij,bj->b", units[l + 1], rbm.weights, units[l])
            neg_e = neg_e + units[l + 1] @ rbm.hidden_bias
            ent = ent + _entropy(units[l + 1]).sum(axis=1)
        neg_e = neg_e + np.einsum("bi,ij,bj->b", shared, branch.top_weights, units[-1])
    out = neg_e - log_partition + ent
    return float(out[0]) if single else out


# --- joint contrastive-divergence training ---------------------------------

def _statistics(net, vs, layers, shared):
    """Mean sufficient statistics, laid out like the network's parameters."""
    n = vs[0].shape[0]
    stats = []
    for branch, v, hs in zip(net.branches, vs, layers):
        units = [v] + list(hs)
        pair = [units[l + 1].T @ units[l] / n for l in range(len(branch.layers))]
        means = [u.mean(axis=0) for u in units]
        top = shared.T @ units[-1] / n
        stats.append((pair, means, top))
    return stats, shared.mean(axis=0)


def _gibbs_negative(net, vs, mf, k, rng):
    """k block-Gibbs sweeps started from a sample of the mean-field state.

    Layers are split by the parity of their graph distance to the shared
    layer; each sweep resamples the odd layers given the even ones, then the
    even ones given the odd. The layers updated last are reported as
    probabilities, the rest as samples.
    """
    state = []
    for v, mus in zip(vs, mf.layers):
        state.append([v] + [sample_bernoulli(m, rng) for m in mus])
    shared = sample_bernoulli(mf.shared, rng)

    def layer_prob(bi, j):
        branch, units = net.branches[bi], state[bi]
        n = len(branch.layers)
        if j == 0:
            act = units[1] @ branch.layers[0].weights + branch.layers[0].visible_bias
        else:
            rbm = branch.layers[j - 1]
            act = units[j - 1] @ rbm.weights.T + rbm.hidden_bias
            act = act + (units[j + 1] @ branch.layers[j].weights if j < n
                         else shared @ branch.top_weights)
        return sigmoid(act)

    def shared_prob():
        return sigmoid(net.top_bias + sum(
            s[-1] @ b.top_weights.T for b, s in zip(net.branches, state)))

    slots = [(bi, j) for bi, b in enumerate(net.branches) for j in range(len(b.layers) + 1)]

    def distance(bi, j):
        return len(net.branches[bi].layers) + 1 - j

    for step in range(k):
        last = step == k - 1
        for parity in (1, 0):
            final = last and parity == 0
            # one parity class is conditionally independent given the other
            group = [s for s in slots if distance(*s) % 2 == parity]
            probs = {s: layer_prob(*s) for s in group}
            for (bi, j), p in probs.items():
                state[bi][j] = p if final else sample_bernoulli(p, rng)
            if parity == 0:
                p = shared_prob()
                shared = p if final else sample_bernoulli(p, rng)
    return [s[0] for s in state], [s[1:] for s in state], shared


def joint_cd_update(net, batch, cfg, rng, clamp_negative=False):
    """One CD step on the whole network for one aligned mini-batch.

    Data statistics come from the mean-field posterior; model statistics
    from ``cfg.cd_steps`` Gibbs sweeps started at that posterior. Decoder-only
    biases are left untouched.
    """
    vs = _as_visible_list(net, batch)
    mf = mean_field_posterior(net, vs, cfg)
    mf_layers = [list(np.atleast_2d(m) for m in mus) for mus in mf.layers]
    mf_shared = np.atleast_2d(mf.shared)
    pos, pos_shared = _statistics(net, vs, mf_layers, mf_shared)
    if clamp_negative:
        neg, neg_shared = pos, pos_shared
    else:
        nv, nh, ns = _gibbs_negative(net, vs, MeanFieldState(mf_layers, mf_shared),
                                     cfg.cd_steps, rng)
        neg, neg_shared = _statistics(net, nv, nh, ns)

    eta = cfg.learning_rate
    branches = []
    for branch, (pp, pm, pt), (np_, nm, nt) in zip(net.branches, pos, neg):
        layers = []
        for l, rbm in enumerate(branch.layers):
            vb = rbm.visible_bias + eta * (pm[0] - nm[0]) if l == 0 else rbm.visible_bias
            layers.append(Rbm(rbm.weights + eta * (pp[l] - np_[l]), vb,
                              rbm.hidden_bias + eta * (pm[l + 1] - nm[l + 1])))
        branches.append(Branch(branch.spec, layers,
                               branch.top_weights + eta * (pt - nt), branch.top_down_bias))
    return KFanNetwork(branches, net.top_bias + eta * (pos_shared - neg_shared))


def train_joint(net, data, cfg, rng):
    """``cfg.epochs`` epochs of shuffled mini-batch :func:`joint_cd_update`."""
    vs = _as_visible_list(net, data)
    n = vs[0].shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            net = joint_cd_update(net, [v[idx] for v in vs], cfg, rng)
    return net


def pretrain_kfan(specs, shared_dim, data, layer_cfg, joint_cfg, rng):
    """Greedy per-branch initialization followed by joint CD.

    Each branch trains a stack ending in ``shared_dim`` units on its own
    input. The top RBM of that stack supplies the branch's top weights and
    decoder bias; the shared bias starts at the mean of the K top hidden
    biases.
    """
    specs = list(specs)
    if len(specs) < 2:
        raise DomainError("a K-fan network needs at least two branches")
    if shared_dim < 1:
        raise DomainError("shared_dim must be positive")
    if isinstance(data, dict):
        data = [data[s.name] for s in specs]
    branches, top_biases = [], []
    for spec, v in zip(specs, data):
        stack = pretrain_stack(list(spec.hidden_sizes) + [shared_dim], v, layer_cfg, rng)
        top = stack[-1]
        branches.append(Branch(spec, stack[:-1], top.weights, top.visible_bias))
        top_biases.append(top.hidden_bias)
    net = KFanNetwork(branches, np.mean(top_biases, axis=0))
    return train_joint(net, data, joint_cfg, rng)


def networks_equal(a, b):
    """Bit-level equality of structure and every parameter."""
    if a.names != b.names or a.top_bias.tobytes() != b.top_bias.tobytes():
        return False
    for x, y in zip(a.branches, b.branches):
        if x.spec != y.spec:
            return False
        arrays_x = [x.top_weights, x.top_down_bias]
        arrays_y = [y.top_weights, y.top_down_bias]
        for rx, ry in zip(x.layers, y.layers):
            arrays_x += [rx.weights, rx.visible_bias, rx.hidden_bias]
            arrays_y += [ry.weights, ry.visible_bias, ry.hidden_bias]
        if any(p.shape != q.shape or p.tobytes() != q.tobytes()
               for p, q in zip(arrays_x, arrays_y)):
            return False
    return True
