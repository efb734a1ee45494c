"""Constructed networks with known behaviour."""

import numpy as np

from nirom.surrogate import MlpCore, Normalizer, SurrogateNet


def rigged_linear_core(a, n_in, hidden=32, activation="relu"):
    """Core computing ``x @ a.T`` exactly, via ``relu(x) - relu(-x) = x``.

    ``a`` has shape ``(n_out, n_in)``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n_out = a.shape[0]
    w0 = np.zeros((n_in, hidden))
    w0[:, :n_in] = np.eye(n_in)
    w0[:, n_in:2 * n_in] = -np.eye(n_in)
    w1 = np.eye(hidden)
    w2 = np.zeros((hidden, n_out))
    w2[:n_in] = a.T
    w2[n_in:2 * n_in] = -a.T
    return MlpCore([w0, w1, w2], [np.zeros(hidden), np.zeros(hidden), np.zeros(n_out)],
                   activation)


def rigged_net(a_state, n_mu=1, mode="rknn", tau=0.1, a_param=None):
    """Net whose core maps ``(y, mu)`` to ``a_state @ y + a_param @ mu`` in raw units."""
    a_state = np.atleast_2d(np.asarray(a_state, dtype=float))
    n_r = a_state.shape[0]
    a_param = np.zeros((n_r, n_mu)) if a_param is None else np.atleast_2d(a_param)
    n_in = n_r + n_mu + (1 if mode == "direct_tau" else 0)
    full = np.zeros((n_r, n_in))
    full[:, :n_r] = a_state
    full[:, n_r:n_r + n_mu] = a_param
    core = rigged_linear_core(full, n_in)
    return SurrogateNet(core, mode, tau, Normalizer.identity(n_r, n_mu))


def zero_net(n_r, n_mu, mode="rknn", tau=0.1):
    n_in = n_r + n_mu + (1 if mode == "direct_tau" else 0)
    core = MlpCore([np.zeros((n_in, 32)), np.zeros((32, 32)), np.zeros((32, n_r))],
                   [np.zeros(32), np.zeros(32), np.zeros(n_r)])
    return SurrogateNet(core, mode, tau, Normalizer.identity(n_r, n_mu))
