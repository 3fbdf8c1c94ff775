"""Linear unmixing: subspace dimension, VCA endmembers, FCLS abundances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .image import ImageCube


@dataclass
class UnmixResult:
    endmembers: np.ndarray  # (bands, K)
    abundances: np.ndarray  # (K, pixels)

    @property
    def K(self) -> int:
        return self.endmembers.shape[1]


def estimate_k(X: ImageCube, energy_fraction: float = 0.999) -> int:
    """Smallest number of singular components holding ``energy_fraction`` of the signal energy.

    Energy is the uncentered second moment, so data spanned by K linearly
    independent endmembers gives K (a centered count would give K - 1).
    """
    if not 0.0 < energy_fraction <= 1.0:
        raise ValueError("energy_fraction must lie in (0, 1]")
    if X.pixels <= X.bands:
        raise ValueError("need more pixels than bands to estimate the subspace dimension")
    if np.allclose(X.data, X.data[:, :1], rtol=0, atol=0):
        raise ValueError("cube has zero spatial variance; subspace dimension undefined")
    s = np.linalg.svd(X.data, compute_uv=False)
    e = np.cumsum(s ** 2)
    return int(np.searchsorted(e / e[-1], energy_fraction - 1e-15) + 1)


def vca(X: ImageCube, K: int, seed: int = 0) -> np.ndarray:
    """Vertex component analysis, projective branch.

    Projects onto the leading K-dim singular subspace, rescales pixels onto
    the hyperplane ``u^T y = 1`` and repeatedly picks the pixel with the
    largest absolute projection on a random direction orthogonal to the
    endmembers already found. Returns the selected pixel spectra (bands x K).
    """
    Y = X.data
    if not 1 <= K <= min(X.bands, X.pixels):
        raise ValueError(f"K={K} outside [1, min(bands, pixels)]")
    Ud = np.linalg.svd(Y @ Y.T / X.pixels)[0][:, :K]
    x = Ud.T @ Y
    if K == 1:
        return Y[:, [int(np.argmax(np.abs(x[0])))]].copy()
    u = x.mean(axis=1)
    scale = u @ x
    valid = scale > 1e-12 * np.abs(scale).max()
    y = np.where(valid, x / np.where(valid, scale, 1.0), 0.0)

    rng = np.random.default_rng(seed)
    A = np.zeros((K, K))
    A[-1, 0] = 1.0
    picked = []
    for i in range(K):
        w = rng.standard_normal(K)
        f = w - A @ (np.linalg.pinv(A) @ w)
        f /= np.linalg.norm(f)
        idx = int(np.argmax(np.abs(f @ y)))
        A[:, i] = y[:, idx]
        picked.append(idx)
    return Y[:, picked].copy()


def _kkt_solve(G, H, mask):
    """Equality-constrained LS on support ``mask`` for every column of H."""
    idx = np.flatnonzero(mask)
    s = idx.size
    A = np.zeros((s + 1, s + 1))
    A[:s, :s] = G[np.ix_(idx, idx)]
    A[:s, s] = 1.0
    A[s, :s] = 1.0
    rhs = np.vstack([H[idx], np.ones((1, H.shape[1]))])
    sol = np.linalg.solve(A, rhs)
    z = np.zeros((G.shape[0], H.shape[1]))
    z[idx] = sol[:s]
    return z, sol[s]


def fcls(X: ImageCube, M: np.ndarray, tol: float = 1e-10, max_iter: Optional[int] = None) -> np.ndarray:
    """Fully constrained least squares abundances (K x pixels).

    Primal active-set method on ``a >= 0`` with the sum-to-one constraint
    kept exactly through the KKT system. Pixels sharing a support set are
    solved together.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != X.bands:
        raise ValueError(f"endmember matrix must be ({X.bands}, K), got {M.shape}")
    K = M.shape[1]
    G = M.T @ M
    if np.linalg.matrix_rank(M) < K:
        raise ValueError("endmember matrix is rank deficient")
    H = M.T @ X.data
    n = X.pixels
    scale = max(np.abs(G).max(), 1e-300)
    gtol = tol * scale

    a = np.full((K, n), 1.0 / K)
    passive = np.ones((K, n), dtype=bool)
    todo = np.ones(n, dtype=bool)
    max_iter = max_iter or 10 * K + 10
    for _ in range(max_iter):
        cols = np.flatnonzero(todo)
        if cols.size == 0:
            break
        codes = np.packbits(passive[:, cols], axis=0, bitorder="little")
        codes = np.ascontiguousarray(codes.T).view(np.dtype((np.void, codes.shape[0]))).ravel()
        _, group = np.unique(codes, return_inverse=True)
        for g in range(group.max() + 1):
            c = cols[group == g]
            mask = passive[:, c[0]]
            z, nu = _kkt_solve(G, H[:, c], mask)
            feasible = np.all(z[mask] >= -tol, axis=0)
            # feasible columns: accept, then test the multipliers of the zero set
            cf = c[feasible]
            if cf.size:
                zf = np.maximum(z[:, feasible], 0.0)
                a[:, cf] = zf
                grad = G @ zf - H[:, cf]
                omega = grad + nu[feasible][None, :]
                omega[mask] = np.inf
                j = np.argmin(omega, axis=0)
                worst = omega[j, np.arange(cf.size)]
                grow = worst < -gtol
                passive[j[grow], cf[grow]] = True
                todo[cf[~grow]] = False
            # infeasible columns: move towards z until a passive weight hits zero
            ci = c[~feasible]
            if ci.size:
                zi, ai = z[:, ~feasible], a[:, ci]
                shrink = mask[:, None] & (zi < -tol)
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(shrink, ai / (ai - zi), np.inf)
                alpha = np.clip(ratio.min(axis=0), 0.0, 1.0)
                ai = ai + alpha * (zi - ai)
                drop = mask[:, None] & (ai <= tol)
                ai[drop] = 0.0
                a[:, ci] = ai
                passive[:, ci] &= ~drop
    a = np.maximum(a, 0.0)
    return a / a.sum(axis=0, keepdims=True)


def reconstruct(M: np.ndarray, A: np.ndarray, rows: int, cols: int) -> ImageCube:
    return ImageCube(np.asarray(M) @ np.asarray(A), rows, cols)


def unmix(X: ImageCube, K: Optional[int] = None, seed: int = 0, energy_fraction: float = 0.999) -> UnmixResult:
    if K is None:
        K = estimate_k(X, energy_fraction)
    M = vca(X, K, seed)
    return UnmixResult(M, fcls(X, M))
