"""Forward/backward optimality messages on the experience graph, and the
two-term potential loss (cross-entropy at rewarding nodes + edge smoothness).
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import numcore as nc
from .graph import ExperienceGraph

LABEL_FLOOR = 1e-3
# spreads below this fraction of the largest value are rounding noise
LABEL_FLAT_RTOL = 1e-9


class MessagePassingError(RuntimeError):
    """Fixed-point iteration ran out of iterations; ``values`` is the last iterate."""

    def __init__(self, which: str, residual: float, iterations: int, values: np.ndarray):
        super().__init__(f"{which} messages did not converge after {iterations} "
                         f"iterations (residual {residual:.3e})")
        self.residual = residual
        self.values = values


@dataclass
class OptimalityModel:
    """p(O=1 | s, a) = exp((r - reward_ceiling) / temperature)."""

    temperature: float = 1.0
    reward_ceiling: float = -np.inf

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def observe(self, reward: float) -> None:
        if reward > self.reward_ceiling:
            self.reward_ceiling = float(reward)

    def optimality_prob(self, r):
        r = np.asarray(r, dtype=np.float64)
        ceiling = self.reward_ceiling if np.isfinite(self.reward_ceiling) else np.max(r, initial=0.0)
        # rewards above the ceiling only happen if observe() was skipped
        ceiling = max(ceiling, float(np.max(r, initial=-np.inf)))
        out = np.exp((r - ceiling) / self.temperature)
        return float(out) if out.ndim == 0 else out


def optimality_prob(model: OptimalityModel, r):
    return model.optimality_prob(r)


@dataclass
class MessageTable:
    alpha: np.ndarray
    beta: np.ndarray
    label: np.ndarray


_TINY = 1e-300


def _default_iters(n: int) -> int:
    # 10 * n alone is too few for short chains at damping 0.5
    return max(10 * n, 500)


def _damped_solve(step, x0, which, max_iters, tol, damping):
    """Iterate x <- (1 - d) x + d step(x) until every entry moves less than
    ``tol`` relative to itself.

    Messages shrink geometrically along paths, so an absolute test would
    stop while the small entries are still wrong in every digit.
    """
    x = x0
    residual = np.inf
    for it in range(1, max_iters + 1):
        target = step(x)
        rel = np.abs(target - x) / np.maximum(np.abs(target), _TINY)
        residual = float(np.max(rel)) if x.size else 0.0
        if residual < tol:
            return target
        x = (1.0 - damping) * x + damping * target
    raise MessagePassingError(which, residual, max_iters, x)


def _mean_operator(lists, n):
    rows, cols, vals = [], [], []
    for i, nbrs in enumerate(lists):
        if nbrs:
            w = 1.0 / len(nbrs)
            for j in nbrs:
                rows.append(i)
                cols.append(j)
                vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def backward_messages(g: ExperienceGraph, model: OptimalityModel,
                      max_iters: Optional[int] = None, tol: float = 1e-10,
                      damping: float = 0.5) -> np.ndarray:
    """beta(i) = p(i) * mean_{j in succ(i)} beta(j); beta(i) = p(i) at leaves."""
    n = g.n_nodes
    if n == 0:
        raise ValueError("graph is empty")
    p = np.asarray(model.optimality_prob(g.reward_array()), dtype=np.float64).reshape(n)
    M = _mean_operator(g.successors, n)
    leaf = np.array([not s for s in g.successors], dtype=np.float64)

    def step(beta):
        return p * (M @ beta) + p * leaf

    return _damped_solve(step, p.copy(), "backward", max_iters or _default_iters(n),
                         tol, damping)


def forward_messages(g: ExperienceGraph, model: OptimalityModel,
                     max_iters: Optional[int] = None, tol: float = 1e-10,
                     damping: float = 0.5) -> np.ndarray:
    """alpha(i) = prior * mean over incoming of p(j) * alpha_hat(j).

    Episode starts and nodes without predecessors receive one extra incoming
    term of weight 1 (the start of a trajectory). The uniform prior 1/n
    multiplies the result once.
    """
    n = g.n_nodes
    if n == 0:
        raise ValueError("graph is empty")
    p = np.asarray(model.optimality_prob(g.reward_array()), dtype=np.float64).reshape(n)
    starts = g.episode_starts()
    has_start = np.array([(i in starts) or not g.predecessors[i] for i in range(n)],
                         dtype=np.float64)
    indeg = np.array([len(pr) for pr in g.predecessors], dtype=np.float64) + has_start
    rows, cols = [], []
    for i, preds in enumerate(g.predecessors):
        rows.extend([i] * len(preds))
        cols.extend(preds)
    P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    def step(a_hat):
        return (P @ (p * a_hat) + has_start) / indeg

    a_hat = _damped_solve(step, np.ones(n), "forward", max_iters or _default_iters(n),
                          tol, damping)
    return a_hat / n


def normalize_labels(x: np.ndarray, floor: float = LABEL_FLOOR) -> np.ndarray:
    """Min-max onto [floor, 1]; a (numerically) constant vector maps to all ones.

    On a single chain alpha * beta is the same product at every node, so the
    spread is pure rounding and stretching it would invent an ordering.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if x.size <= 1 or hi - lo <= LABEL_FLAT_RTOL * max(abs(hi), abs(lo)):
        return np.ones_like(x)
    return floor + (1.0 - floor) * (x - lo) / (hi - lo)


def message_labels(g: ExperienceGraph, model: OptimalityModel,
                   max_iters: Optional[int] = None, tol: float = 1e-10) -> MessageTable:
    """Normalised alpha * beta per node; ``tol`` bounds the label error.

    Min-max scaling divides message errors by the spread of alpha * beta,
    so the messages themselves are solved to a tighter tolerance.
    """
    msg_tol = max(tol * 1e-3, 1e-15)
    alpha = forward_messages(g, model, max_iters, msg_tol)
    beta = backward_messages(g, model, max_iters, msg_tol)
    return MessageTable(alpha, beta, normalize_labels(alpha * beta))


# losses -----------------------------------------------------------------------

def _wrap(phi):
    if isinstance(phi, nc.Tensor):
        return phi, False
    return nc.Tensor(np.asarray(phi, dtype=np.float64)), True


def base_loss(labels, phi_pred, rewarding_set: Sequence[int]):
    """Mean binary cross-entropy between labels and predictions on rewarding nodes."""
    phi, plain = _wrap(phi_pred)
    labels = np.asarray(labels, dtype=np.float64)
    idx = np.asarray(sorted(rewarding_set), dtype=np.int64)
    if np.any((phi.data <= 0.0) | (phi.data >= 1.0)):
        raise ValueError("phi predictions must lie strictly inside (0, 1)")
    if idx.size == 0:
        out = nc.Tensor(0.0)
    else:
        y = labels[idx]
        pb = nc.take(phi, idx)
        ll = nc.tsum(y * nc.log(pb)) + nc.tsum((1.0 - y) * nc.log(1.0 - pb))
        out = ll * (-1.0 / idx.size)
    return out.item() if plain else out


def base_loss_from_logits(labels, logits, rewarding_set: Sequence[int]):
    """Same cross-entropy as base_loss with phi = sigmoid(logits).

    Written with softplus so saturated predictions give a large finite loss
    instead of log(0).
    """
    z, plain = _wrap(logits)
    labels = np.asarray(labels, dtype=np.float64)
    idx = np.asarray(sorted(rewarding_set), dtype=np.int64)
    if idx.size == 0:
        out = nc.Tensor(0.0)
    else:
        y = labels[idx]
        zb = nc.take(z, idx)
        ll = nc.tsum(y * nc.softplus(-zb)) + nc.tsum((1.0 - y) * nc.softplus(zb))
        out = ll * (1.0 / idx.size)
    return out.item() if plain else out


def recursive_loss(phi_pred, adjacency):
    """sum_ij A[i, j] * (phi_i - phi_j)^2."""
    phi, plain = _wrap(phi_pred)
    A = np.asarray(adjacency, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != phi.size:
        raise ValueError(f"adjacency {A.shape} does not match {phi.size} predictions")
    I, J = np.nonzero(A)
    if I.size == 0:
        out = nc.Tensor(0.0)
    else:
        d = nc.take(phi, I) - nc.take(phi, J)
        out = nc.tsum(A[I, J] * nc.square(d))
    return out.item() if plain else out


def total_loss(base, rec, eta: float = 10.0):
    return base + eta * rec
