"""Dense linear algebra and elementary NN math.

Matrices are plain 2-D ``float64`` numpy arrays. The SVD is a one-sided
(Hestenes) Jacobi iteration; SPD solves go through a Cholesky factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericError, ShapeError

__all__ = [
    "SvdResult",
    "Rng",
    "as_matrix",
    "matmul",
    "svd",
    "solve_spd",
    "softmax_rows",
    "layer_norm",
    "l2_norm",
]

_MASK64 = (1 << 64) - 1

SVD_MAX_SWEEPS = 60
SVD_TOL = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ vt`` with ``sigma`` descending."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def _complete_orthonormal(cols: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Replace columns flagged in ``missing`` by unit vectors orthogonal to the rest."""
    m = cols.shape[0]
    out = cols.copy()
    have = [j for j in range(out.shape[1]) if not missing[j]]
    for j in np.flatnonzero(missing):
        basis = out[:, have]
        best, best_norm = None, -1.0
        for e in range(m):
            cand = np.zeros(m)
            cand[e] = 1.0
            # two passes of Gram-Schmidt for numerical orthogonality
            for _ in range(2):
                cand -= basis @ (basis.T @ cand)
            nrm = np.linalg.norm(cand)
            if nrm > best_norm:
                best, best_norm = cand, nrm
            if nrm > 0.5:
                break
        out[:, j] = best / best_norm
        have.append(j)
    return out


def _jacobi_tall(a: np.ndarray) -> SvdResult:
    m, n = a.shape
    g = a.copy()
    v = np.eye(n)
    # columns below this squared norm are numerically zero; rotating them is noise
    floor = (max(m, n) * np.finfo(np.float64).eps * np.linalg.norm(a)) ** 2
    for sweep in range(1, SVD_MAX_SWEEPS + 1):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                gi = g[:, i]
                gj = g[:, j]
                alpha = gi @ gi
                beta = gj @ gj
                gamma = gi @ gj
                if alpha <= floor or beta <= floor or abs(gamma) <= SVD_TOL * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * gi - s * gj
                g[:, j] = s * gi + c * gj
                g[:, i] = new_i
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            break
    else:
        raise NumericError(f"Jacobi SVD did not converge after {SVD_MAX_SWEEPS} sweeps")

    sigma = np.sqrt(np.einsum("ij,ij->j", g, g))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    g = g[:, order]
    v = v[:, order]
    tiny = sigma * sigma <= floor
    u = np.zeros((m, n))
    keep = ~tiny
    u[:, keep] = g[:, keep] / sigma[keep]
    if tiny.any():
        u = _complete_orthonormal(u, tiny)
    return SvdResult(u=u, sigma=sigma, vt=v.T.copy())


def svd(a) -> SvdResult:
    """Thin singular value decomposition by one-sided Jacobi rotations.

    Raises :class:`NumericError` if the off-diagonal mass does not vanish
    within ``SVD_MAX_SWEEPS`` sweeps.
    """
    a = as_matrix(a, "a")
    if not np.all(np.isfinite(a)):
        raise NumericError("svd input contains non-finite values")
    m, n = a.shape
    if m >= n:
        return _jacobi_tall(a)
    res = _jacobi_tall(a.T)
    return SvdResult(u=res.vt.T.copy(), sigma=res.sigma, vt=res.u.T.copy())


def solve_spd(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` via Cholesky."""
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_spd needs a square matrix, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}")
    scale = max(np.abs(a).max(initial=0.0), 1.0)
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * scale):
        raise NumericError("solve_spd: matrix is not symmetric")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"solve_spd: matrix is not positive definite ({exc})") from exc
    return scipy.linalg.cho_solve(factor, b)


def softmax_rows(a) -> np.ndarray:
    """Softmax over the last axis, stabilized by subtracting the row maximum."""
    a = np.asarray(a, dtype=np.float64)
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> np.ndarray:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise ShapeError("layer_norm: gamma/beta length must match the feature axis")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps) * gamma + beta


def l2_norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.sum(x * x)))


class Rng:
    """SplitMix64 generator with Box-Muller normals.

    The stream depends only on the seed, so outputs match across platforms
    and across reimplementations of the same algorithm.
    """

    GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def _block(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(self.GAMMA)
        z = steps + np.uint64(self.state)
        self.state = (self.state + n * self.GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self._block(1)[0])

    def u64(self, size) -> np.ndarray:
        n = int(np.prod(size))
        return self._block(n).reshape(size)

    def uniform(self, size=None) -> np.ndarray | float:
        """Doubles in ``[0, 1)`` built from the top 53 bits of each draw."""
        n = 1 if size is None else int(np.prod(size))
        vals = (self._block(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return float(vals[0]) if size is None else vals.reshape(size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        out = loc + scale * z.reshape(-1)[:n]
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, high: int, size=None) -> np.ndarray | int:
        """Integers in ``[0, high)``."""
        vals = np.floor(np.asarray(self.uniform(1 if size is None else size)) * high).astype(np.int64)
        return int(vals.reshape(-1)[0]) if size is None else vals
