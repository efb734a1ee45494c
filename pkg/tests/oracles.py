"""Independent reference implementations used only by the tests."""

import numpy as np


def one_sided_jacobi_svd(a, tol=1e-15, max_sweeps=100):
    """Hestenes one-sided Jacobi SVD: orthogonalise columns by plane rotations.

    Returns ``(u, s, vt)`` with singular values in descending order. Works
    on the wide or tall matrix directly, never forming a Gram matrix.
    """
    a = np.array(a, dtype=float)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    m, n = a.shape
    u = a.copy()
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = u[:, p] @ u[:, p]
                beta = u[:, q] @ u[:, q]
                gamma = u[:, p] @ u[:, q]
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                up, uq = u[:, p].copy(), u[:, q].copy()
                u[:, p] = c * up - s * uq
                u[:, q] = s * up + c * uq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    sigma = np.linalg.norm(u, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    u = u[:, order]
    v = v[:, order]
    nz = sigma > 0
    u[:, nz] = u[:, nz] / sigma[nz]
    if transposed:
        return v, sigma, u.T
    return u, sigma, v.T


def rk4_step(f, y, h):
    """Textbook classical Runge-Kutta step for ``y' = f(y)``."""
    k1 = f(y)
    k2 = f(y + h / 2 * k1)
    k3 = f(y + h / 2 * k2)
    k4 = f(y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def align_signs(reference, candidate):
    """Flip candidate columns to best match the reference columns."""
    signs = np.sign(np.sum(reference * candidate, axis=0))
    signs[signs == 0] = 1.0
    return candidate * signs
