"""Weighted message passing on the assignment graph.

Edge messages are updated alternately,

    x_{i->j} = sum_{j' in W_i \\ j} A_{ij'} y_{j'->i}
    y_{j->i} = sum_{i' in T_j \\ i} A_{i'j} x_{i'->j}

and after k rounds the per-task score is x_i = sum_{j in W_i} A_ij y_{j->i}
using the y-messages of round k-1, so the final y-update is never computed.
Scores are linear in the initialization; the classifier downstream is
threshold-based, so no normalization is applied (an optional rescale mode
exists for stress sizes and changes the score scale).

Stacking the (x, y) edge messages into one vector of length 2|E| makes a
single update a multiplication by the non-backtracking operator of the graph
(see the spectral module); ``sweep`` applies that operator without building
the matrix.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .assign import SCHEMA_HEADER, ResponseGraph

__all__ = ["default_depth", "message_passing", "trajectory", "sweep", "decide", "save_scores"]


def default_depth(m):
    """Iteration count k = max(1, ceil(sqrt(ln m))) used by the adaptive scheme.

    The theory only pins k up to the (unspecified) base of the logarithm;
    natural log is used here and recorded as a knob rather than a constant.
    """
    if m < 1:
        raise ValueError("need at least one task")
    return max(1, math.ceil(math.sqrt(math.log(max(m, 2)))))


def _init_y(graph, init, rng):
    if isinstance(init, np.ndarray):
        if init.shape != (graph.n_edges,):
            raise ValueError(f"init vector must have one slot per edge ({graph.n_edges})")
        return init.astype(float).copy()
    if init == "gaussian":
        if rng is None:
            raise ValueError("gaussian init needs an rng")
        return rng.normal(1.0, 1.0, size=graph.n_edges)
    if init == "ones":
        return np.ones(graph.n_edges)
    raise ValueError(f"unknown init {init!r}")


def message_passing(graph: ResponseGraph, k_max, init="gaussian", rng=None,
                    rescale=False):
    """Per-task scores after k_max update rounds.

    ``init`` is "gaussian" (N(1,1), the default), "ones" (deterministic, for
    exact-equality tests), or an explicit per-edge vector.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ti, wi, a = graph.task_idx, graph.worker_idx, graph.answers
    y = _init_y(graph, init, rng)
    for it in range(k_max):
        ay = a * y
        x = np.bincount(ti, weights=ay, minlength=graph.m)[ti] - ay
        if it == k_max - 1:
            break  # the final y-update is unused by the score
        ax = a * x
        y = np.bincount(wi, weights=ax, minlength=graph.n)[wi] - ax
        if rescale:
            peak = np.abs(y).max()
            if peak > 0:
                y /= peak
    return np.bincount(ti, weights=a * y, minlength=graph.m)


def trajectory(graph: ResponseGraph, k_max, init="ones", rng=None):
    """Stacked (x, y) message vectors after each half-update.

    Entry 2j contains [x^{(j+1)}; 0] and entry 2j+1 contains [0; y^{(j+1)}]:
    exactly the iterates of the non-backtracking operator applied to the
    stacked start vector [0; y^{(0)}].
    """
    ti, wi, a = graph.task_idx, graph.worker_idx, graph.answers
    y = _init_y(graph, init, rng)
    zero = np.zeros(graph.n_edges)
    out = []
    for _ in range(k_max):
        ay = a * y
        x = np.bincount(ti, weights=ay, minlength=graph.m)[ti] - ay
        out.append(np.concatenate([x, zero]))
        ax = a * x
        y = np.bincount(wi, weights=ax, minlength=graph.n)[wi] - ax
        out.append(np.concatenate([zero, y]))
    return out


def sweep(graph: ResponseGraph, v):
    """One application of the non-backtracking operator to a stacked vector.

    The first |E| slots of ``v`` hold x-messages (task->worker), the rest hold
    y-messages (worker->task).  The new x-block is computed from the old
    y-block and vice versa — one simultaneous half-update of each side.
    """
    ti, wi, a = graph.task_idx, graph.worker_idx, graph.answers
    n_edges = graph.n_edges
    if v.shape != (2 * n_edges,):
        raise ValueError(f"expected a stacked vector of length {2 * n_edges}")
    vx, vy = v[:n_edges], v[n_edges:]
    ay = a * vy
    new_x = np.bincount(ti, weights=ay, minlength=graph.m)[ti] - ay
    ax = a * vx
    new_y = np.bincount(wi, weights=ax, minlength=graph.n)[wi] - ax
    return np.concatenate([new_x, new_y])


def decide(scores, threshold, rng):
    """Classify each task: +1 above threshold, -1 below -threshold, 0 to defer.

    At threshold 0 a score of exactly 0 is resolved by a fair coin so that
    every task still receives a label.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    scores = np.asarray(scores)
    out = np.zeros(scores.size, dtype=np.int8)
    out[scores > threshold] = 1
    out[scores < -threshold] = -1
    if threshold == 0:
        ties = scores == 0
        if ties.any():
            out[ties] = rng.choice(np.array([-1, 1], dtype=np.int8), size=ties.sum())
    return out


def save_scores(path, scores, decisions):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["task_id", "score", "decision"])
        for i, (s, d) in enumerate(zip(scores, decisions)):
            writer.writerow([i, f"{s:.12g}", int(d)])
