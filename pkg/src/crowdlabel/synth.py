"""Sampling of worker reliabilities and noisy worker answers.

Answers follow the two-sided noise model: a worker with reliability p answers
a task of quality q with +1 with probability q*p + (1-q)*(1-p).  Every call is
an independent draw, so a worker asked twice about the same task (a parallel
edge in the assignment multigraph) answers independently each time.
"""

from __future__ import annotations

import numpy as np

from .model import WorkerPrior

__all__ = ["sample_worker", "sample_workers", "prob_positive", "respond", "respond_many"]


def sample_workers(prior: WorkerPrior, n, rng):
    """Draw n i.i.d. reliabilities; models the arrival stream of fresh workers."""
    return rng.choice(np.asarray(prior.ps), size=n, p=np.asarray(prior.masses))


def sample_worker(prior: WorkerPrior, rng):
    return float(sample_workers(prior, 1, rng)[0])


def prob_positive(q, p):
    """P[answer = +1 | q, p]; invariant under (q, p) -> (1-q, 1-p)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    return q * p + (1 - q) * (1 - p)


def respond_many(q, p, rng):
    """Vector of ±1 answers for paired task qualities and worker reliabilities."""
    prob = prob_positive(q, p)
    draws = rng.random(prob.shape)
    return np.where(draws < prob, 1.0, -1.0)


def respond(q, p, rng):
    return float(respond_many(np.atleast_1d(q), np.atleast_1d(p), rng)[0])
