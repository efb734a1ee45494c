"""Snapshot matrices and POD bases.

The basis is computed with the method of snapshots: a symmetric Gram
matrix (``Y^T Y`` when there are no more columns than rows, ``Y Y^T``
otherwise) is diagonalised with a cyclic Jacobi sweep, and the left
singular vectors are recovered from its eigenvectors. Singular values are
re-measured as ``||Y^T v_i||`` afterwards, which keeps the small ones
accurate to ``eps * sigma_1`` instead of ``sqrt(eps) * sigma_1``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DivisionGuardError, ShapeError

__all__ = [
    "SnapshotSet",
    "ReducedBasis",
    "assemble_snapshot_matrix",
    "jacobi_eigh",
    "compute_pod",
    "project",
    "lift",
    "reprojection_error",
    "relative_reprojection_error",
    "array_digest",
]


def array_digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Simulated trajectories with the signals that generated them."""

    trajectories: tuple
    signals: tuple
    sampling_kind: str = "SPS"

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        sigs = tuple(self.signals)
        if not trajs:
            raise ShapeError("a snapshot set needs at least one trajectory")
        if len(sigs) != len(trajs):
            raise ShapeError("one signal per trajectory")
        n, k1 = trajs[0].states.shape
        tau = trajs[0].tau
        for tr in trajs[1:]:
            if tr.states.shape != (n, k1):
                raise ShapeError(f"heterogeneous trajectory shape {tr.states.shape} vs {(n, k1)}")
            if not np.isclose(tr.tau, tau, rtol=1e-12, atol=0):
                raise ShapeError("trajectories use different step sizes")
        if self.sampling_kind not in ("SPS", "DPS"):
            raise ShapeError(f"unknown sampling kind {self.sampling_kind!r}")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "signals", sigs)

    @property
    def n_snapshots(self):
        return len(self.trajectories)

    @property
    def n_state(self):
        return self.trajectories[0].states.shape[0]

    @property
    def k(self):
        return self.trajectories[0].k

    @property
    def tau(self):
        return self.trajectories[0].tau

    def digest(self):
        h = hashlib.sha256(array_digest(*(t.states for t in self.trajectories)).encode())
        h.update(json.dumps([s.to_dict() for s in self.signals], sort_keys=True).encode())
        h.update(self.sampling_kind.encode())
        return h.hexdigest()


def assemble_snapshot_matrix(snapshots):
    """Stack all trajectories column-wise, time-major within each, into ``N x (N_s (k+1))``."""
    if isinstance(snapshots, SnapshotSet):
        trajs = snapshots.trajectories
    else:
        trajs = list(snapshots)
        if not trajs:
            raise ShapeError("no trajectories to assemble")
        n = trajs[0].states.shape[0]
        if any(t.states.shape[0] != n for t in trajs):
            raise ShapeError("trajectories have different state dimensions")
    return np.hstack([t.states for t in trajs])


def jacobi_eigh(a, tol=1e-12, max_sweeps=60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run until the off-diagonal Frobenius norm falls below
    ``tol * ||A||_F``. Returns unsorted eigenvalues and the matrix of
    eigenvectors (columns).
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError("jacobi_eigh needs a square matrix")
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if n == 1 or norm == 0.0:
        return np.diag(a).copy(), v
    target = tol * norm
    for _ in range(max_sweeps):
        if np.linalg.norm(a - np.diag(np.diag(a))) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-150 * max(abs(diff), norm):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = diff / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def _fix_signs(v):
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """Retained POD modes plus the full singular value spectrum.

    ``n_r`` may be smaller than ``requested_n_r`` when the data has lower
    numerical rank; ``rank_warning`` then says so.
    """

    basis: np.ndarray
    singular_values: np.ndarray
    n_r: int
    source_hash: str = ""
    requested_n_r: int = 0
    rank: int = 0
    rank_warning: str = ""
    mean: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_state(self):
        return self.basis.shape[0]

    def truncate(self, n_r):
        """Basis restricted to its leading ``n_r`` modes."""
        if not 1 <= n_r <= self.n_r:
            raise ShapeError(f"cannot truncate a {self.n_r}-mode basis to {n_r}")
        return ReducedBasis(self.basis[:, :n_r], self.singular_values, n_r, self.source_hash,
                            requested_n_r=n_r, rank=self.rank, mean=self.mean)


def compute_pod(y, n_r, center=False, source_hash=None):
    """POD basis of the snapshot matrix ``y`` with ``n_r`` modes.

    Parameters
    ----------
    y : ndarray, shape (N, m)
    n_r : int
        Requested dimension, ``1 <= n_r <= min(N, m)``. Clamped to the
        numerical rank if that is smaller.
    center : bool
        Subtract the column mean before decomposing. Off by default.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise ShapeError("snapshot matrix must be 2-D")
    n, m = y.shape
    if not 1 <= n_r <= min(n, m):
        raise ShapeError(f"n_r must lie in [1, {min(n, m)}], got {n_r}")
    if source_hash is None:
        source_hash = array_digest(y)
    mean = None
    if center:
        mean = y.mean(axis=1)
        y = y - mean[:, None]
    eps = np.finfo(float).eps
    if m <= n:
        lam, w = jacobi_eigh(y.T @ y)
        order = np.argsort(-lam, kind="stable")
        lam, w = lam[order], w[:, order]
        sigma = np.sqrt(np.clip(lam, 0.0, None))
        cutoff = np.sqrt(m * eps) * sigma[0] if sigma[0] > 0 else np.inf
        rank = int(np.sum(sigma > cutoff))
        v = y @ w[:, :rank] / sigma[:rank] if rank else np.zeros((n, 0))
        if rank:
            q, r = np.linalg.qr(v)
            v = q * np.sign(np.diag(r))
            sigma[:rank] = np.linalg.norm(y.T @ v, axis=0)
        # sqrt of a tiny Gram eigenvalue is only good to sqrt(eps) * sigma_1;
        # ||Y w|| measures the tail directly
        tail = np.linalg.norm(y @ w[:, rank:], axis=0)
        sigma[rank:] = np.sort(tail)[::-1]
    else:
        _, v = jacobi_eigh(y @ y.T)
        sigma = np.linalg.norm(y.T @ v, axis=0)
        order = np.argsort(-sigma, kind="stable")
        sigma, v = sigma[order], v[:, order]
        cutoff = max(n, m) * eps * sigma[0]
        rank = int(np.sum(sigma > cutoff)) if sigma[0] > 0 else 0
    if rank and not np.all(np.diff(sigma[:rank]) <= 0):
        order = np.argsort(-sigma[:rank], kind="stable")
        sigma[:rank] = sigma[:rank][order]
        v[:, :rank] = v[:, :rank][:, order]
    kept = min(n_r, rank)
    warning = ""
    if kept < n_r:
        warning = f"requested {n_r} modes but numerical rank is {rank}"
    if kept == 0:
        raise ShapeError("snapshot matrix is numerically zero")
    basis = _fix_signs(v[:, :kept].copy())
    return ReducedBasis(basis=basis, singular_values=sigma, n_r=kept, source_hash=source_hash,
                        requested_n_r=n_r, rank=rank, rank_warning=warning, mean=mean)


def _check_state(basis, y):
    y = np.asarray(y, dtype=float)
    if y.shape[0] != basis.n_state:
        raise ShapeError(f"state has {y.shape[0]} rows, basis expects {basis.n_state}")
    return y


def _offset(basis, y):
    if basis.mean is None:
        return 0.0
    return basis.mean if y.ndim == 1 else basis.mean[:, None]


def project(basis, y):
    """Reduced coordinates ``V^T (y - mean)`` of a state or matrix of states."""
    y = _check_state(basis, y)
    return basis.basis.T @ (y - _offset(basis, y))


def lift(basis, y_r):
    """Full state ``V y_r + mean`` from reduced coordinates."""
    y_r = np.asarray(y_r, dtype=float)
    if y_r.shape[0] != basis.n_r:
        raise ShapeError(f"reduced state has {y_r.shape[0]} rows, basis has {basis.n_r} modes")
    full = basis.basis @ y_r
    return full + _offset(basis, full)


def relative_reprojection_error(basis, y_ref):
    """``||Y - V V^T Y||_F / ||Y||_F`` without any count prefactor."""
    y_ref = _check_state(basis, np.atleast_2d(np.asarray(y_ref, dtype=float).T).T)
    denom = np.linalg.norm(y_ref)
    if denom == 0.0:
        raise DivisionGuardError("reference snapshot matrix is zero")
    return float(np.linalg.norm(y_ref - lift(basis, project(basis, y_ref))) / denom)


def reprojection_error(basis, y_ref, n_s=1, k=None):
    """Relative re-projection error scaled by ``1 / (n_s k)``.

    ``k`` defaults to the number of steps per trajectory, i.e. columns per
    snapshot minus one (at least 1).
    """
    y2 = np.atleast_2d(np.asarray(y_ref, dtype=float).T).T
    if k is None:
        k = max(y2.shape[1] // n_s - 1, 1)
    return relative_reprojection_error(basis, y2) / (n_s * k)
