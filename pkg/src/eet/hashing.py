"""Proxy hash-code learning by alternating closed-form updates.

Minimizes ``||Y - P V||_F^2 + alpha ||B - R V||_F^2`` over a class projection
``P`` (C x k), relaxed codes ``V`` (k x n), an orthogonal rotation ``R``
(k x k) and binary codes ``B`` in {-1, +1}^(k x n). Each update is the exact
minimizer of its block, so the objective never increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .linalg import Rng, solve_spd, svd

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CodeProblem:
    y: np.ndarray
    k: int
    alpha: float = 1.0
    max_iters: int = 50
    tol: float = 1e-7

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 2:
            raise ShapeError("label matrix must be C x n")
        if not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=0) == 1):
            raise ShapeError("every label column must be one-hot")
        if self.k < 1:
            raise ValueError("code length must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "y", y)

    @classmethod
    def from_labels(cls, labels, num_classes: int | None = None, **kwargs) -> "CodeProblem":
        return cls(y=one_hot(labels, num_classes), **kwargs)

    @property
    def n(self) -> int:
        return self.y.shape[1]


def one_hot(labels, num_classes: int | None = None) -> np.ndarray:
    """C x n label matrix with a single 1 per column."""
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    if len(labels) and (labels.min() < 0 or labels.max() >= c):
        raise ShapeError(f"labels must lie in [0, {c})")
    y = np.zeros((c, len(labels)))
    y[labels, np.arange(len(labels))] = 1.0
    return y


@dataclass
class CodeState:
    """Current iterate of the alternating solver.

    ``objective_trace`` holds the objective at initialization and after every
    full P-V-R-B iteration; ``step_trace`` holds ``(iteration, step, value)``
    after every individual block update.
    """

    p: np.ndarray
    v: np.ndarray
    r: np.ndarray
    b: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    step_trace: list[tuple[int, str, float]] = field(default_factory=list)

    def copy(self) -> "CodeState":
        return CodeState(
            self.p.copy(), self.v.copy(), self.r.copy(), self.b.copy(),
            list(self.objective_trace), list(self.step_trace),
        )


def sign(x) -> np.ndarray:
    """Elementwise sign with ``sign(0) = -1``."""
    return np.where(np.asarray(x) > 0, 1.0, -1.0)


def objective(state: CodeState, problem: CodeProblem) -> float:
    fit = problem.y - state.p @ state.v
    quant = state.b - state.r @ state.v
    return float(np.sum(fit * fit) + problem.alpha * np.sum(quant * quant))


def update_projection(state: CodeState, problem: CodeProblem) -> np.ndarray:
    """Least-squares ``P = Y V^T (V V^T)^-1``.

    Computed as ``Y V^+`` from a thin SVD of ``V``, which is the exact
    (minimum-norm) minimizer even when ``V V^T`` is singular, e.g. when all
    items of a class share one relaxed code.
    """
    dec = svd(state.v.T)
    cutoff = max(state.v.shape) * np.finfo(np.float64).eps * (dec.sigma[0] if len(dec.sigma) else 0.0)
    inv = np.zeros_like(dec.sigma)
    keep = dec.sigma > cutoff
    inv[keep] = 1.0 / dec.sigma[keep]
    # V^T = u diag(s) vt, so V^+ = u diag(1/s) vt
    return (problem.y @ dec.u) * inv @ dec.vt


def update_codes_relaxed(state: CodeState, problem: CodeProblem) -> np.ndarray:
    """``V = (P^T P + alpha R^T R)^-1 (P^T Y + alpha R^T B)``."""
    p, r, a = state.p, state.r, problem.alpha
    lhs = p.T @ p + a * (r.T @ r)
    lhs = 0.5 * (lhs + lhs.T)
    return solve_spd(lhs, p.T @ problem.y + a * (r.T @ state.b))


def update_rotation(state: CodeState) -> np.ndarray:
    """Orthogonal Procrustes: with ``B V^T = S Omega S~^T``, ``R = S S~^T``."""
    dec = svd(state.b @ state.v.T)
    return dec.u @ dec.vt


def update_binary(state: CodeState) -> np.ndarray:
    return sign(state.r @ state.v)


def class_symmetric_init(problem: CodeProblem, seed: int = 0) -> np.ndarray:
    """Relaxed codes where every item starts at a normal draw made for its class.

    A class whose draw has the same sign pattern as an earlier class is
    redrawn (while enough distinct patterns exist), so classes start apart.
    With no more classes than bits the sign patterns are also kept linearly
    independent; dependent patterns such as antipodal pairs would leave
    ``B`` rank deficient, and ``Y = P R^T B`` could then only be approached
    with unbounded ``V``.
    """
    rng = Rng(seed)
    n_classes = problem.y.shape[0]
    distinct = n_classes <= 2 ** min(problem.k, 62)
    independent = n_classes <= problem.k
    centres = np.empty((problem.k, n_classes))
    seen = set()

    def acceptable(draw, c):
        if not distinct:
            return True
        if tuple(draw > 0) in seen:
            return False
        if independent:
            signs = np.column_stack([sign(centres[:, :c]), sign(draw)])
            return np.linalg.matrix_rank(signs) == c + 1
        return True

    for c in range(n_classes):
        draw = rng.normal(problem.k)
        while not acceptable(draw, c):
            draw = rng.normal(problem.k)
        seen.add(tuple(draw > 0))
        centres[:, c] = draw
    return centres @ problem.y


def initial_state(
    problem: CodeProblem, seed: int = 0, init_v: np.ndarray | None = None, init: str = "class"
) -> CodeState:
    """Starting iterate: ``R = I``, ``B = sign(V)`` and ``P`` fitted to ``V``.

    ``init="class"`` draws one normal vector per class; ``init="normal"``
    draws an independent normal vector per item. An explicit ``init_v``
    overrides both.
    """
    if init_v is not None:
        v = np.array(init_v, dtype=np.float64)
        if v.shape != (problem.k, problem.n):
            raise ShapeError(f"initial V has shape {v.shape}, expected {(problem.k, problem.n)}")
    elif init == "class":
        v = class_symmetric_init(problem, seed)
    elif init == "normal":
        v = Rng(seed).normal((problem.k, problem.n))
    else:
        raise ValueError(f"unknown init {init!r}")
    state = CodeState(p=np.zeros((problem.y.shape[0], problem.k)), v=v, r=np.eye(problem.k), b=sign(v))
    state.p = update_projection(state, problem)
    return state


_STEPS = (
    ("P", "p", lambda s, pr: update_projection(s, pr)),
    ("V", "v", lambda s, pr: update_codes_relaxed(s, pr)),
    ("R", "r", lambda s, pr: update_rotation(s)),
    ("B", "b", lambda s, pr: update_binary(s)),
)


def iterate(state: CodeState, problem: CodeProblem, iteration: int) -> float:
    """One in-place P -> V -> R -> B sweep; returns the objective afterwards."""
    value = float("nan")
    for step, attr, update in _STEPS:
        setattr(state, attr, update(state, problem))
        value = objective(state, problem)
        state.step_trace.append((iteration, step, value))
    return value


def solve(
    problem: CodeProblem, seed: int = 0, init_v: np.ndarray | None = None, init: str = "class"
) -> CodeState:
    """Alternate the four block updates until the relative change drops below ``tol``."""
    state = initial_state(problem, seed, init_v, init)
    prev = objective(state, problem)
    state.objective_trace.append(prev)
    state.step_trace.append((0, "init", prev))
    for it in range(1, problem.max_iters + 1):
        cur = iterate(state, problem, it)
        state.objective_trace.append(cur)
        if abs(prev - cur) < problem.tol * (1.0 + cur):
            log.debug("converged after %d iterations (objective %.6g)", it, cur)
            break
        prev = cur
    return state


def hash_fit_loss(h_hat, b) -> float:
    """Mean squared error over every entry."""
    h_hat = np.asarray(h_hat, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if h_hat.shape != b.shape:
        raise ShapeError(f"shapes differ: {h_hat.shape} vs {b.shape}")
    return float(np.mean((h_hat - b) ** 2))
