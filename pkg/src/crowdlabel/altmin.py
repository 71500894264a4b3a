"""Joint MAP inference of task truths and worker reliabilities.

Parameterize each task by q_i = P[true label is +1 | difficulty] and each
worker by p_j = P[answer is correct].  An answer A_ij = a has likelihood

    P[a | q, p] = (1 + a (2q-1)(2p-1)) / 2,

which is affine in q for fixed p and vice versa, so the log-posterior is
concave in each block.  We maximize it by block coordinate ascent: all p_j
jointly (they decouple given q), then all q_i, repeating until the posterior
stops improving.  Each 1-D maximization is a golden-section search over the
clamped interval — derivative-free and safe for the concave-per-coordinate
objective.  Labels are the signs of 2 q_hat - 1.

Beta priors on q and p are supported; the defaults are uniform Beta(1, 1),
which contribute nothing and keep each block's objective the bare data term.
Normalizing constants of the beta densities are dropped throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adaptive import LabelingResult
from .assign import ResponseGraph

__all__ = [
    "IsolatedNode",
    "PosteriorConfig",
    "AltMinResult",
    "g",
    "log_posterior",
    "alt_min",
]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_TOL = 1e-10
_GOLDEN_CAP = 200


class IsolatedNode(ValueError):
    """A task or worker without edges has no likelihood term to optimize."""


@dataclass(frozen=True)
class PosteriorConfig:
    """Beta hyperparameters, clamp, and stopping rule for alt_min."""

    q_shape: tuple = (1.0, 1.0)
    p_shape: tuple = (1.0, 1.0)
    clamp: float = 1e-6
    tol: float = 1e-8
    max_sweeps: int = 100

    def __post_init__(self):
        if min(self.q_shape) < 1 or min(self.p_shape) < 1:
            raise ValueError("beta shapes below 1 break per-block concavity")
        if not 0 < self.clamp < 0.5:
            raise ValueError("clamp must lie in (0, 1/2)")


@dataclass(frozen=True)
class AltMinResult:
    q: np.ndarray
    p: np.ndarray
    labels: np.ndarray
    trace: np.ndarray = field(repr=False)

    @property
    def sweeps(self):
        return len(self.trace) - 1

    def to_labeling_result(self, spent) -> LabelingResult:
        ones = np.ones(self.labels.size, dtype=int)
        return LabelingResult(labels=self.labels, exit_t=ones, exit_u=ones.copy(),
                              spent=int(spent), traces=[])


def g(answer, q, p):
    """Log-likelihood of one answer: log(qp + (1-q)(1-p)) for +1, mirrored for -1."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    agree = q * p + (1.0 - q) * (1.0 - p)
    out = np.log(np.where(np.asarray(answer) > 0, agree, 1.0 - agree))
    return float(out) if out.ndim == 0 else out


def _beta_term(x, shape):
    a, b = shape
    if a == 1.0 and b == 1.0:
        return 0.0
    return float(np.sum((a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)))


def log_posterior(graph: ResponseGraph, q, p, config: PosteriorConfig = PosteriorConfig()):
    """Sum of edge log-likelihoods plus beta log-densities (constants dropped)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    total = _beta_term(q, config.q_shape) + _beta_term(p, config.p_shape)
    if graph.n_edges:
        total += float(np.sum(g(graph.answers, q[graph.task_idx], p[graph.worker_idx])))
    return total


def _maximize_block(node_idx, n_nodes, slope, shape, lo0, hi0):
    """Golden-section maximization of each node's concave 1-D objective.

    Every edge contributes log(slope_e * x + (1 - slope_e) / 2) to its node's
    objective; slopes already fold in the answer and the other block's state.
    All coordinates share the bracket geometry, so one vectorized search
    handles the whole block.
    """
    intercept = 0.5 * (1.0 - slope)
    a, b = shape

    def value(x):
        per_edge = np.log(slope * x[node_idx] + intercept)
        out = np.bincount(node_idx, weights=per_edge, minlength=n_nodes)
        if a != 1.0 or b != 1.0:
            out = out + (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)
        return out

    lo = np.full(n_nodes, lo0)
    hi = np.full(n_nodes, hi0)
    for _ in range(_GOLDEN_CAP):
        span = hi - lo
        if span.max() < _GOLDEN_TOL:
            break
        x1 = hi - _INVPHI * span
        x2 = lo + _INVPHI * span
        keep_low = value(x1) >= value(x2)
        hi = np.where(keep_low, x2, hi)
        lo = np.where(keep_low, lo, x1)
    return 0.5 * (lo + hi)


def alt_min(graph: ResponseGraph, config: PosteriorConfig = PosteriorConfig(),
            rng=None) -> AltMinResult:
    """Block coordinate ascent on the log-posterior; returns estimates and labels.

    q starts at each task's fraction of +1 answers (clamped); p starts
    uninformative at 1/2 and is overwritten by the first worker block.
    """
    if rng is None:
        rng = np.random.default_rng()
    if (graph.task_degrees() == 0).any():
        bad = int(np.flatnonzero(graph.task_degrees() == 0)[0])
        raise IsolatedNode(f"task {bad} has no answers")
    if (graph.worker_degrees() == 0).any():
        bad = int(np.flatnonzero(graph.worker_degrees() == 0)[0])
        raise IsolatedNode(f"worker {bad} has no answers")

    eps = config.clamp
    positive = np.bincount(graph.task_idx, weights=(graph.answers > 0).astype(float),
                           minlength=graph.m)
    q = np.clip(positive / graph.task_degrees(), eps, 1.0 - eps)
    p = np.full(graph.n, 0.5)

    trace = [log_posterior(graph, q, p, config)]
    for _ in range(config.max_sweeps):
        p = _maximize_block(graph.worker_idx, graph.n,
                            graph.answers * (2.0 * q[graph.task_idx] - 1.0),
                            config.p_shape, eps, 1.0 - eps)
        q = _maximize_block(graph.task_idx, graph.m,
                            graph.answers * (2.0 * p[graph.worker_idx] - 1.0),
                            config.q_shape, eps, 1.0 - eps)
        trace.append(log_posterior(graph, q, p, config))
        if trace[-1] - trace[-2] < config.tol:
            break

    labels = np.sign(2.0 * q - 1.0)
    ties = labels == 0
    if ties.any():
        labels[ties] = rng.choice(np.array([-1.0, 1.0]), size=int(ties.sum()))
    return AltMinResult(q=q, p=p, labels=labels.astype(np.int8),
                        trace=np.asarray(trace))
