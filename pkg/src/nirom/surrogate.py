"""Reduced-space neural surrogates.

Two architectures share one MLP core (input, two hidden layers of 32,
linear output):

``direct``
    maps ``(y_r(t_j), mu(t_j))`` to ``y_r(t_{j+1})`` in one shot.
``rknn``
    treats the core as the right-hand side ``g(y_r; mu)`` and advances
    with the classic four-stage Runge-Kutta stencil, all stages sharing
    the same weights and the same ``mu(t_j)``.
``direct_tau``
    the direct map with the step size as an extra input feature.

Everything is plain numpy with hand-written reverse-mode gradients. Batches
are row-major: one sample per row.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import RolloutError, ShapeError, TrainingDivergence, UsageError
from .pod import project

__all__ = [
    "MlpCore",
    "Normalizer",
    "SurrogateNet",
    "TrainingConfig",
    "TransitionData",
    "build_transitions",
    "build_tau_transitions",
    "fit_normalizer",
    "make_net",
    "forward_direct",
    "forward_rknn",
    "forward_direct_with_tau",
    "step",
    "loss_and_gradients",
    "train",
    "train_members",
    "rollout",
    "one_step_predictions",
    "MODES",
]

MODES = ("direct", "rknn", "direct_tau")
# standardised losses start near 1; growth by this factor counts as divergence
DIVERGENCE_FACTOR = 1e6
ACTIVATIONS = ("relu", "leaky_relu", "tanh")


class MlpCore:
    """Fully connected network with a linear output layer.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X``
    propagates as ``X @ W + b``.
    """

    def __init__(self, weights, biases, activation="relu", alpha=0.01):
        if activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {activation!r}")
        if len(weights) != len(biases) or not weights:
            raise ShapeError("need one bias per weight matrix")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError("inconsistent layer shapes")
        for w0, w1 in zip(self.weights[:-1], self.weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ShapeError("consecutive layers do not chain")
        self.activation = activation
        self.alpha = float(alpha)

    @classmethod
    def initialize(cls, layer_sizes, seed, activation="relu", alpha=0.01):
        """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        rng = np.random.Generator(np.random.Philox(seed))
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, activation, alpha)

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[-2],) + tuple(w.shape[-1] for w in self.weights)

    @property
    def n_in(self):
        return self.weights[0].shape[-2]

    @property
    def n_out(self):
        return self.weights[-1].shape[-1]

    def copy(self):
        return MlpCore([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       self.activation, self.alpha)

    def _act(self, z):
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        if self.activation == "leaky_relu":
            return np.where(z > 0, z, self.alpha * z)
        return np.tanh(z)

    def _act_grad(self, z, a):
        if self.activation == "relu":
            return (z > 0).astype(float)
        if self.activation == "leaky_relu":
            return np.where(z > 0, 1.0, self.alpha)
        return 1.0 - a * a

    def forward(self, x):
        """Return the output and the cache needed by :meth:`backward`."""
        cache = []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w
            z += b
            cache.append((a, z))
            a = z if i == last else self._act(z)
        return a, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout, grads=None):
        """Backpropagate ``dout``; accumulate into ``grads`` if given.

        Returns ``(grads, dx)`` where ``grads`` is a list of ``(dW, db)``.
        """
        if grads is None:
            grads = [(np.zeros_like(w), np.zeros_like(b))
                     for w, b in zip(self.weights, self.biases)]
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            a_in, z = cache[i]
            if i != len(self.weights) - 1:
                # the next layer's input is this layer's activation
                delta = delta * self._act_grad(z, cache[i + 1][0])
            dw, db = grads[i]
            dw += a_in.swapaxes(-1, -2) @ delta
            db += delta.sum(axis=-2).reshape(db.shape)
            delta = delta @ self.weights[i].swapaxes(-1, -2)
        return grads, delta

    def get_flat(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in
                               zip(self.weights, self.biases)])

    def set_flat(self, flat):
        pos = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = flat[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            b[...] = flat[pos:pos + b.size]
            pos += b.size
        if pos != flat.size:
            raise ShapeError("flat parameter vector has the wrong length")


class _StackedCore(MlpCore):
    """Several equally shaped cores trained side by side.

    Weights carry a leading member axis, ``(E, fan_in, fan_out)``, and
    biases are ``(E, 1, fan_out)``, so a batch of shape ``(E, B, n_in)``
    runs every member on its own rows through the same code as
    :class:`MlpCore`.
    """

    def __init__(self, cores):
        n_layers = len(cores[0].weights)
        self.weights = [np.stack([c.weights[i] for c in cores]) for i in range(n_layers)]
        self.biases = [np.stack([c.biases[i] for c in cores])[:, None, :]
                       for i in range(n_layers)]
        self.activation = cores[0].activation
        self.alpha = cores[0].alpha

    def member(self, e):
        return MlpCore([w[e] for w in self.weights], [b[e, 0] for b in self.biases],
                       self.activation, self.alpha)

    def copy(self):
        out = _StackedCore.__new__(_StackedCore)
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        out.activation, out.alpha = self.activation, self.alpha
        return out


def flatten_grads(grads):
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])


@dataclass
class Normalizer:
    """Per-feature affine standardisation.

    ``rhs_scale`` converts the core output of an RKNN into reduced-state
    units per second; ``tau_scale`` normalises the step-size feature.
    """

    state_mean: np.ndarray
    state_scale: np.ndarray
    param_mean: np.ndarray
    param_scale: np.ndarray
    rhs_scale: np.ndarray
    tau_scale: float = 1.0

    def __post_init__(self):
        for name in ("state_mean", "state_scale", "param_mean", "param_scale", "rhs_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("state_scale", "param_scale", "rhs_scale"):
            if np.any(getattr(self, name) == 0) or not np.all(np.isfinite(getattr(self, name))):
                raise ShapeError(f"{name} must be finite and nonzero")
        if not self.tau_scale > 0:
            raise ShapeError("tau_scale must be positive")

    def norm_state(self, y):
        return (y - self.state_mean) / self.state_scale

    def denorm_state(self, z):
        return z * self.state_scale + self.state_mean

    def norm_param(self, mu):
        return (mu - self.param_mean) / self.param_scale

    def denorm_param(self, z):
        return z * self.param_scale + self.param_mean

    @classmethod
    def identity(cls, n_r, n_mu):
        return cls(np.zeros(n_r), np.ones(n_r), np.zeros(n_mu), np.ones(n_mu), np.ones(n_r))


@dataclass
class TrainingConfig:
    epochs: int = 2000
    batch_size: int = 0
    learning_rate: float = 1e-3
    lr_final: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    weight_init: str = "uniform_fan_in"
    activation: str = "relu"
    leaky_alpha: float = 0.01
    hidden: int = 32
    loss: str = "mse_one_step"

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or self.hidden < 1:
            raise UsageError("epochs, learning_rate and hidden must be positive")
        if self.lr_final is not None and not 0 < self.lr_final <= self.learning_rate:
            raise UsageError("lr_final must lie in (0, learning_rate]")
        if self.batch_size < 0:
            raise UsageError("batch_size must be >= 0 (0 means full batch)")

    def to_dict(self):
        return asdict(self)


@dataclass
class SurrogateNet:
    core: MlpCore
    mode: str
    tau_train: float
    normalizer: Normalizer
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}")
        n_r = self.normalizer.state_mean.size
        n_mu = self.normalizer.param_mean.size
        expected = n_r + n_mu + (1 if self.mode == "direct_tau" else 0)
        if self.core.n_in != expected or self.core.n_out != n_r:
            raise ShapeError(
                f"{self.mode} core must map {expected} -> {n_r}, got "
                f"{self.core.n_in} -> {self.core.n_out}")
        if not self.tau_train > 0:
            raise ShapeError("tau_train must be positive")

    @property
    def n_r(self):
        return self.core.n_out

    @property
    def n_mu(self):
        return self.normalizer.param_mean.size

    def copy(self):
        return SurrogateNet(self.core.copy(), self.mode, self.tau_train,
                            copy.deepcopy(self.normalizer), dict(self.config))


@dataclass
class TransitionData:
    """One-step training pairs ``(y, mu, y_next)`` in reduced coordinates.

    ``tau`` holds the step of each pair; for the plain architectures all
    entries equal ``tau_train``.
    """

    y: np.ndarray
    mu: np.ndarray
    y_next: np.ndarray
    tau: np.ndarray
    tau_train: float

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        self.y_next = np.atleast_2d(np.asarray(self.y_next, dtype=float))
        self.tau = np.asarray(self.tau, dtype=float).reshape(-1)
        n = self.y.shape[0]
        if n == 0:
            raise ShapeError("empty transition set")
        if self.mu.shape[0] != n or self.y_next.shape != self.y.shape or self.tau.size != n:
            raise ShapeError("transition arrays disagree in length or width")

    def __len__(self):
        return self.y.shape[0]


def _reduced_trajectories(snapshots, basis):
    for traj, sig in zip(snapshots.trajectories, snapshots.signals):
        yr = project(basis, traj.states).T
        mus = np.array([sig.value(t) for t in traj.times])
        yield yr, mus


def build_transitions(snapshots, basis):
    """Neighbouring reduced states of every trajectory in a snapshot set."""
    ys, ms, yn = [], [], []
    for yr, mus in _reduced_trajectories(snapshots, basis):
        ys.append(yr[:-1])
        ms.append(mus[:-1])
        yn.append(yr[1:])
    y = np.vstack(ys)
    tau = snapshots.tau
    return TransitionData(y, np.vstack(ms), np.vstack(yn), np.full(len(y), tau), tau)


def build_tau_transitions(snapshots, basis, strides=(0, 1, 2)):
    """Pairs ``j -> j + s`` tagged with step ``s * tau`` for each stride ``s``."""
    ys, ms, yn, ts = [], [], [], []
    tau = snapshots.tau
    for yr, mus in _reduced_trajectories(snapshots, basis):
        kk = yr.shape[0] - 1
        for s in strides:
            if s > kk:
                continue
            stop = kk + 1 - s
            ys.append(yr[:stop])
            ms.append(mus[:stop])
            yn.append(yr[s:s + stop])
            ts.append(np.full(stop, s * tau))
    return TransitionData(np.vstack(ys), np.vstack(ms), np.vstack(yn), np.concatenate(ts), tau)


def _safe_std(x):
    s = x.std(axis=0)
    return np.where(s > 1e-12 * np.maximum(np.abs(x).max(axis=0), 1e-300), s, 1.0)


def fit_normalizer(data):
    """Standardisation statistics from a transition set."""
    states = np.vstack([data.y, data.y_next])
    moving = data.tau > 0
    if np.any(moving):
        rates = (data.y_next[moving] - data.y[moving]) / data.tau[moving, None]
        rhs_scale = _safe_std(rates) if len(rates) > 1 else np.ones(data.y.shape[1])
    else:
        rhs_scale = np.ones(data.y.shape[1])
    return Normalizer(
        state_mean=states.mean(axis=0),
        state_scale=_safe_std(states),
        param_mean=data.mu.mean(axis=0),
        param_scale=_safe_std(data.mu),
        rhs_scale=rhs_scale,
        tau_scale=float(data.tau_train),
    )


def make_net(mode, normalizer, tau_train, config=None):
    """Freshly initialised surrogate of the given mode."""
    config = config or TrainingConfig()
    n_r = normalizer.state_mean.size
    n_in = n_r + normalizer.param_mean.size + (1 if mode == "direct_tau" else 0)
    if config.hidden < n_in:
        raise UsageError(f"hidden width {config.hidden} must be at least the input width {n_in}")
    sizes = (n_in, config.hidden, config.hidden, n_r)
    core = MlpCore.initialize(sizes, config.seed, config.activation, config.leaky_alpha)
    return SurrogateNet(core, mode, float(tau_train), normalizer, config.to_dict())


def _batch(y, mu, n_r, n_mu):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    mu2 = np.atleast_2d(mu)
    if mu2.shape[0] == 1 and y2.shape[0] > 1:
        mu2 = np.repeat(mu2, y2.shape[0], axis=0)
    if y2.shape[1] != n_r or mu2.shape[1] != n_mu or mu2.shape[0] != y2.shape[0]:
        raise ShapeError(f"expected reduced states of width {n_r} and parameters of width {n_mu}")
    return y2, mu2, single


def _require(net, mode):
    if net.mode != mode:
        raise UsageError(f"network is in {net.mode!r} mode, not {mode!r}")


def forward_direct(net, y_r, mu):
    """One direct step ``denorm(core(norm(y_r), norm(mu)))``."""
    _require(net, "direct")
    y, m, single = _batch(y_r, mu, net.n_r, net.n_mu)
    nz = net.normalizer
    out = nz.denorm_state(net.core(np.hstack([nz.norm_state(y), nz.norm_param(m)])))
    return out[0] if single else out


def forward_direct_with_tau(net, y_r, mu, tau):
    """Direct step with the step size fed as an input feature."""
    _require(net, "direct_tau")
    y, m, single = _batch(y_r, mu, net.n_r, net.n_mu)
    nz = net.normalizer
    t = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1, 1), (y.shape[0], 1))
    x = np.hstack([nz.norm_state(y), nz.norm_param(m), t / nz.tau_scale])
    out = nz.denorm_state(net.core(x))
    return out[0] if single else out


def _rhs_eval(net, z, mu_n):
    """RHS approximation in physical reduced units, with its core cache."""
    nz = net.normalizer
    out, cache = net.core.forward(np.concatenate([nz.norm_state(z), mu_n], axis=-1))
    return nz.rhs_scale * out, cache


def _rknn_step(net, y, mu_n, tau, keep_cache=False):
    h1_g, c1 = _rhs_eval(net, y, mu_n)
    h1 = tau * h1_g
    h2_g, c2 = _rhs_eval(net, y + 0.5 * h1, mu_n)
    h2 = tau * h2_g
    h3_g, c3 = _rhs_eval(net, y + 0.5 * h2, mu_n)
    h3 = tau * h3_g
    h4_g, c4 = _rhs_eval(net, y + h3, mu_n)
    h4 = tau * h4_g
    out = y + (h1 + 2.0 * h2 + 2.0 * h3 + h4) / 6.0
    return (out, (c1, c2, c3, c4)) if keep_cache else out


def forward_rknn(net, y_r, mu, tau=None):
    """One RK4 step whose four stages all evaluate the shared core.

    ``tau`` defaults to the training step; any other positive value
    re-steps the learned right-hand side.
    """
    _require(net, "rknn")
    y, m, single = _batch(y_r, mu, net.n_r, net.n_mu)
    tau = net.tau_train if tau is None else float(tau)
    out = _rknn_step(net, y, net.normalizer.norm_param(m), tau)
    return out[0] if single else out


def step(net, y_r, mu, tau=None):
    """Advance by one step with whatever architecture ``net`` has.

    The plain direct map has no notion of step size and ignores ``tau``.
    """
    if net.mode == "direct":
        return forward_direct(net, y_r, mu)
    if net.mode == "rknn":
        return forward_rknn(net, y_r, mu, tau)
    return forward_direct_with_tau(net, y_r, mu, net.tau_train if tau is None else tau)


def _rknn_backward(net, caches, dout, tau):
    """Reverse pass through the four-stage stencil with shared weights."""
    nz = net.normalizer
    c1, c2, c3, c4 = caches
    n_r = net.n_r
    grads = None

    def through_core(cache, dh):
        nonlocal grads
        grads, dx = net.core.backward(cache, tau * nz.rhs_scale * dh, grads)
        return dx[..., :n_r] / nz.state_scale

    dh1 = dout / 6.0
    dh2 = dout / 3.0
    dh3 = dout / 3.0
    dh4 = dout / 6.0
    dz4 = through_core(c4, dh4)
    dh3 = dh3 + dz4
    dz3 = through_core(c3, dh3)
    dh2 = dh2 + 0.5 * dz3
    dz2 = through_core(c2, dh2)
    dh1 = dh1 + 0.5 * dz2
    through_core(c1, dh1)
    return grads


def loss_and_gradients(net, batch):
    """Mean squared one-step error in standardised state units and its gradient.

    ``batch`` is a :class:`TransitionData` or a ``(y, mu, y_next[, tau])``
    tuple of row-major arrays. Returns ``(loss, grads)`` with ``grads`` a
    list of ``(dW, db)`` per layer.
    """
    if not isinstance(batch, TransitionData):
        y, mu, yn = batch[:3]
        tau = batch[3] if len(batch) > 3 else np.full(np.atleast_2d(y).shape[0], net.tau_train)
        batch = TransitionData(y, mu, yn, tau, net.tau_train)
    loss, grads = _loss_grad(net, batch.y, batch.mu, batch.y_next, batch.tau)
    if not np.isfinite(loss):
        raise TrainingDivergence("non-finite loss", epoch=-1)
    return float(loss), grads


def _loss_grad(net, y, mu, y_next, tau):
    # works on (B, n) rows or (E, B, n) member stacks; the loss is per member
    nz = net.normalizer
    count = y.shape[-2] * y.shape[-1]
    mu_n = nz.norm_param(mu)
    if net.mode == "rknn":
        step_size = tau.flat[0]
        if not np.all(tau == step_size):
            raise UsageError("an RKNN batch must share one step size")
        pred, caches = _rknn_step(net, y, mu_n, step_size, keep_cache=True)
        res = (pred - y_next) / nz.state_scale
        dpred = (2.0 / count) * res / nz.state_scale
        grads = _rknn_backward(net, caches, dpred, step_size)
        return np.mean(res * res, axis=(-2, -1)), grads
    parts = [nz.norm_state(y), mu_n]
    if net.mode == "direct_tau":
        parts.append(tau[..., None] / nz.tau_scale)
    out, cache = net.core.forward(np.concatenate(parts, axis=-1))
    res = out - nz.norm_state(y_next)
    grads, _ = net.core.backward(cache, (2.0 / count) * res)
    return np.mean(res * res, axis=(-2, -1)), grads


def _batches(n, batch_size, rng):
    if batch_size == 0 or batch_size >= n:
        yield slice(None)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _learning_rate(config, t, total):
    # cosine annealing from learning_rate to lr_final when lr_final is set
    if config.lr_final is None:
        return config.learning_rate
    frac = t / max(total - 1, 1)
    lo, hi = config.lr_final, config.learning_rate
    return lo + 0.5 * (hi - lo) * (1.0 + np.cos(np.pi * frac))


def train(net, data, config=None):
    """Fit ``net`` to one-step pairs with Adam; returns ``(net, loss_history)``.

    The input network is not modified. The history has one entry per
    epoch: the mean loss over that epoch's batches before their updates.

    Raises
    ------
    TrainingDivergence
        On a non-finite or runaway loss (see :func:`train_members`);
        ``checkpoint`` holds the last finite network.
    """
    config = config or TrainingConfig()
    nets, histories = train_members([net], data, [config])
    return nets[0], histories[0]


def train_members(nets, data, configs):
    """Train several networks on the same data in one stacked pass.

    Members must share mode, shape and normaliser, and their configs may
    differ only in ``seed``. Each member keeps its own batch order and Adam
    state, so it ends up exactly where a solo :func:`train` run with that
    member's config would. Returns ``(nets, histories)``.

    Raises
    ------
    TrainingDivergence
        When any member produces a non-finite gradient or weight, or a loss
        that is non-finite or above ``DIVERGENCE_FACTOR`` times its first
        batch loss (floored at 1).
        ``checkpoint`` holds that member's last finite network.
    """
    if len(nets) != len(configs) or not nets:
        raise UsageError("need one config per network")
    base = {k: v for k, v in configs[0].to_dict().items() if k != "seed"}
    for c in configs[1:]:
        if {k: v for k, v in c.to_dict().items() if k != "seed"} != base:
            raise UsageError("member configs may differ only in seed")
    first = nets[0]
    for other in nets[1:]:
        if (other.mode != first.mode or other.core.layer_sizes != first.core.layer_sizes
                or other.core.activation != first.core.activation
                or other.tau_train != first.tau_train):
            raise UsageError("members must share mode, layer sizes, activation and tau")
    config = configs[0]
    if first.mode == "rknn" and not np.all(data.tau == data.tau[0]):
        raise UsageError("RKNN training needs a single step size")
    stack = SurrogateNet(_StackedCore([n.core for n in nets]), first.mode, first.tau_train,
                         copy.deepcopy(first.normalizer), base)
    rngs = [np.random.Generator(np.random.Philox(c.seed + 7919)) for c in configs]
    params = [p for wb in zip(stack.core.weights, stack.core.biases) for p in wb]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    n = len(data)
    if config.batch_size == 0 or config.batch_size >= n:
        per_epoch = 1
    else:
        per_epoch = -(-n // config.batch_size)
    total = config.epochs * per_epoch
    history = []
    last_good = stack.core.copy()
    t = 0

    def failure(message, epoch, member):
        checkpoint = SurrogateNet(last_good.member(member), first.mode, first.tau_train,
                                  copy.deepcopy(first.normalizer), configs[member].to_dict())
        return TrainingDivergence(f"{message} at epoch {epoch} (member {member})", epoch=epoch,
                                  checkpoint=checkpoint,
                                  history=[float(h[member]) for h in history])

    for epoch in range(config.epochs):
        losses = []
        for idx in zip(*(_batches(n, config.batch_size, rng) for rng in rngs)):
            if isinstance(idx[0], slice):
                y, mu, yn, tau = (np.broadcast_to(a, (len(nets),) + a.shape)
                                  for a in (data.y, data.mu, data.y_next, data.tau))
            else:
                rows = np.stack(idx)
                y, mu, yn, tau = data.y[rows], data.mu[rows], data.y_next[rows], data.tau[rows]
            loss, grads = _loss_grad(stack, y, mu, yn, tau)
            if t == 0:
                start_loss = np.maximum(loss, 1.0)
            bad = ~np.isfinite(loss) | (loss > DIVERGENCE_FACTOR * start_loss)
            if np.any(bad):
                raise failure("loss diverged", epoch, int(np.argmax(bad)))
            flat_grads = [g for dwdb in grads for g in dwdb]
            for g in flat_grads:
                finite = np.isfinite(g).reshape(len(nets), -1).all(axis=1)
                if not np.all(finite):
                    raise failure("non-finite gradient", epoch, int(np.argmin(finite)))
            lr = _learning_rate(config, t, total)
            t += 1
            c1 = 1.0 - b1 ** t
            c2 = 1.0 - b2 ** t
            for p, g, a, v in zip(params, flat_grads, m1, m2):
                a *= b1
                a += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p -= lr * (a / c1) / (np.sqrt(v / c2) + eps)
            losses.append(loss)
        history.append(np.mean(losses, axis=0))
        for p in params:
            finite = np.isfinite(p).reshape(len(nets), -1).all(axis=1)
            if not np.all(finite):
                raise failure("weights became non-finite", epoch, int(np.argmin(finite)))
        last_good = stack.core.copy()
    out = [SurrogateNet(stack.core.member(e), first.mode, first.tau_train,
                        copy.deepcopy(first.normalizer), configs[e].to_dict())
           for e in range(len(nets))]
    return out, [[float(h[e]) for h in history] for e in range(len(nets))]


def rollout(net, y_r0, signal, t_end, k, basis=None):
    """Closed-loop prediction of ``k`` steps from ``y_r0``.

    ``y_r0`` may be a full state when ``basis`` is given. The parameter
    vector fed at step ``j`` is ``signal.value(t_j)``. Returns an array of
    shape ``(N_r, k + 1)``.
    """
    y = np.asarray(y_r0, dtype=float)
    if basis is not None and y.shape[0] == basis.n_state:
        y = project(basis, y)
    if y.shape != (net.n_r,):
        raise ShapeError(f"initial reduced state must have {net.n_r} entries")
    tau = t_end / k
    times = np.linspace(0.0, t_end, k + 1)
    out = np.empty((net.n_r, k + 1))
    out[:, 0] = y
    for j in range(k):
        with np.errstate(over="ignore", invalid="ignore"):
            y = step(net, y, signal.value(times[j]), tau)
        if not np.all(np.isfinite(y)):
            raise RolloutError(f"rollout produced a non-finite state at step {j + 1}", step=j + 1)
        out[:, j + 1] = y
    return out


def one_step_predictions(net, y_r_ref, signal, times):
    """Teacher-forced predictions: column ``j+1`` comes from reference column ``j``."""
    y_r_ref = np.asarray(y_r_ref, dtype=float)
    tau = times[1] - times[0]
    mus = np.array([signal.value(t) for t in times[:-1]])
    pred = np.empty_like(y_r_ref)
    pred[:, 0] = y_r_ref[:, 0]
    pred[:, 1:] = step(net, y_r_ref[:, :-1].T, mus, tau).T
    return pred
