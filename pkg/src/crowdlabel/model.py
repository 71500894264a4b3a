"""Latent-variable model for binary crowdsourced labeling.

Tasks carry a quality q in [0,1] whose sign side determines the true label
t = sign(2q - 1); workers carry a reliability p in [0,1].  A worker's answer
to a task is +1 with probability q*p + (1-q)*(1-p), so the answer bias
factorizes: E[A | q, p] = (2q-1)(2p-1).

Two crowd-side moments and two task-side aggregates control every error
exponent in this toolkit:

    mu     = E[2p - 1]          crowd bias (assumed positive throughout)
    sigma2 = E[(2p - 1)^2]      crowd quality
    rho2   = E[(2q - 1)^2]      average task difficulty
    lam    = 1 / E[lam_i^-1]    collective difficulty, lam_i = (2q_i - 1)^2

The adaptive planner does not consume the task prior directly but a coarsened
copy whose difficulty support is dyadic (lam_max, lam_max/2, lam_max/4, ...).
Each difficulty is rounded up to the top of its bin, empty bins are dropped,
and the surviving per-bin masses delta_a drive the round schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NonPositiveMu",
    "DegenerateTask",
    "WorkerPrior",
    "CrowdStats",
    "TaskPrior",
    "TaskStats",
    "QuantizedPrior",
    "TaskPool",
    "crowd_stats",
    "task_stats",
    "quantize",
    "sample_tasks",
]

_MASS_TOL = 1e-12


class NonPositiveMu(ValueError):
    """The crowd bias E[2p-1] is not strictly positive."""


class DegenerateTask(ValueError):
    """A task quality of exactly 1/2 has difficulty zero and no defined label."""


def _check_masses(masses):
    masses = np.asarray(masses, dtype=float)
    if masses.size == 0:
        raise ValueError("prior needs at least one support point")
    if np.any(masses < 0):
        raise ValueError("prior masses must be nonnegative")
    if abs(masses.sum() - 1.0) > _MASS_TOL:
        raise ValueError(f"prior masses sum to {masses.sum()!r}, expected 1")
    return masses


@dataclass(frozen=True)
class WorkerPrior:
    """Finite discrete distribution over worker reliabilities p."""

    ps: tuple
    masses: tuple

    def __post_init__(self):
        ps = np.asarray(self.ps, dtype=float)
        masses = _check_masses(self.masses)
        if np.any((ps < 0) | (ps > 1)):
            raise ValueError("worker reliabilities must lie in [0, 1]")
        object.__setattr__(self, "ps", tuple(ps.tolist()))
        object.__setattr__(self, "masses", tuple(masses.tolist()))

    @classmethod
    def discrete(cls, pairs):
        ps, masses = zip(*pairs)
        return cls(ps=ps, masses=masses)

    @classmethod
    def spammer_hammer(cls, sigma2, a=1.0):
        """Mix of uninformative p=1/2 workers and hammers of strength ``a``.

        Hammers answer correctly with probability (1+a)/2 and occur with
        probability sigma2/a**2, which makes E[(2p-1)^2] = sigma2 exactly.
        """
        if not 0 < a <= 1:
            raise ValueError("hammer strength a must lie in (0, 1]")
        hammer_mass = sigma2 / a**2
        if not 0 < hammer_mass <= 1:
            raise ValueError(f"sigma2={sigma2} and a={a} give hammer mass {hammer_mass}")
        if hammer_mass == 1.0:
            return cls(ps=((1 + a) / 2,), masses=(1.0,))
        return cls(ps=((1 + a) / 2, 0.5), masses=(hammer_mass, 1 - hammer_mass))


@dataclass(frozen=True)
class CrowdStats:
    mu: float
    sigma2: float


def crowd_stats(prior: WorkerPrior) -> CrowdStats:
    """Exact mu = E[2p-1] and sigma2 = E[(2p-1)^2] of a worker prior."""
    ps = np.asarray(prior.ps)
    masses = np.asarray(prior.masses)
    bias = 2 * ps - 1
    mu = float(masses @ bias)
    if mu <= 0:
        raise NonPositiveMu(f"crowd bias mu={mu} must be positive")
    return CrowdStats(mu=mu, sigma2=float(masses @ bias**2))


@dataclass(frozen=True)
class TaskPrior:
    """Finite discrete distribution over task qualities q (all q != 1/2)."""

    qs: tuple
    masses: tuple

    def __post_init__(self):
        qs = np.asarray(self.qs, dtype=float)
        masses = _check_masses(self.masses)
        if np.any((qs < 0) | (qs > 1)):
            raise ValueError("task qualities must lie in [0, 1]")
        if np.any(qs == 0.5):
            raise DegenerateTask("q=1/2 tasks have zero difficulty; excluded by construction")
        object.__setattr__(self, "qs", tuple(qs.tolist()))
        object.__setattr__(self, "masses", tuple(masses.tolist()))

    @classmethod
    def discrete(cls, pairs):
        qs, masses = zip(*pairs)
        return cls(qs=qs, masses=masses)

    @classmethod
    def from_difficulties(cls, lams, masses):
        """Symmetric prior with difficulty lam_i: q = (1 ± sqrt(lam))/2, equal sides."""
        qs, out_masses = [], []
        for lam, mass in zip(lams, masses):
            root = math.sqrt(lam)
            qs.extend([(1 + root) / 2, (1 - root) / 2])
            out_masses.extend([mass / 2, mass / 2])
        return cls(qs=tuple(qs), masses=tuple(out_masses))


@dataclass(frozen=True)
class TaskStats:
    lam: float
    rho2: float
    lam_min: float
    lam_max: float


def task_stats(prior: TaskPrior) -> TaskStats:
    """Collective difficulty lam, average difficulty rho2, and the support range."""
    qs = np.asarray(prior.qs)
    masses = np.asarray(prior.masses)
    lam_i = (2 * qs - 1) ** 2
    return TaskStats(
        lam=float(1.0 / (masses @ (1.0 / lam_i))),
        rho2=float(masses @ lam_i),
        lam_min=float(lam_i.min()),
        lam_max=float(lam_i.max()),
    )


@dataclass(frozen=True)
class QuantizedPrior:
    """Dyadic-difficulty coarsening of a task prior.

    ``lams`` is strictly decreasing with consecutive ratios >= 2; ``deltas``
    are the positive bin masses.  ``c_delta`` and ``c1`` are the planner and
    union-bound constants derived from the mass and difficulty spreads.
    """

    lams: tuple
    deltas: tuple
    lam_hat: float = field(init=False)
    delta_min: float = field(init=False)
    delta_max: float = field(init=False)
    c_delta: float = field(init=False)
    c1: float = field(init=False)

    def __post_init__(self):
        lams = np.asarray(self.lams, dtype=float)
        deltas = _check_masses(self.deltas)
        if np.any(deltas <= 0):
            raise ValueError("quantized bins must all carry positive mass")
        if lams.size > 1 and np.any(lams[:-1] / lams[1:] < 2 - 1e-12):
            raise ValueError("quantized difficulties must decrease by factors >= 2")
        object.__setattr__(self, "lams", tuple(lams.tolist()))
        object.__setattr__(self, "deltas", tuple(deltas.tolist()))
        object.__setattr__(self, "lam_hat", float(1.0 / (deltas @ (1.0 / lams))))
        dmin, dmax = float(deltas.min()), float(deltas.max())
        object.__setattr__(self, "delta_min", dmin)
        object.__setattr__(self, "delta_max", dmax)
        spread = math.log2(2 * dmax / dmin)
        object.__setattr__(self, "c_delta", 1.0 / (4 + math.ceil(spread - 1e-12)))
        object.__setattr__(
            self, "c1", spread * math.log2(2 * lams.max() / lams.min())
        )

    @property
    def T(self):
        return len(self.lams)


def quantize(prior: TaskPrior) -> QuantizedPrior:
    """Round difficulties up to dyadic bin tops and drop empty bins.

    With lam_max the largest difficulty in the support, bin a covers
    (lam_max 2^-a, lam_max 2^-(a-1)] for a = 1 .. T_tilde with the last bin
    closed on both ends, T_tilde = 1 + ceil(log2(lam_max/lam_min)).
    """
    qs = np.asarray(prior.qs)
    masses = np.asarray(prior.masses)
    lam_i = (2 * qs - 1) ** 2
    lam_max, lam_min = lam_i.max(), lam_i.min()
    n_bins = 1 + math.ceil(math.log2(lam_max / lam_min) - 1e-12)
    # Right-closed bins: a difficulty exactly on a bin top belongs to that bin.
    idx = np.minimum(
        n_bins - 1, np.floor(np.log2(lam_max / lam_i) + 1e-12).astype(int)
    )
    deltas = np.bincount(idx, weights=masses, minlength=n_bins)
    keep = deltas > 0
    bin_tops = lam_max * 2.0 ** -np.arange(n_bins)
    return QuantizedPrior(lams=tuple(bin_tops[keep]), deltas=tuple(deltas[keep]))


@dataclass(frozen=True)
class TaskPool:
    """A concrete draw of m tasks: qualities, difficulties, and true labels."""

    q: np.ndarray
    lam: np.ndarray
    t: np.ndarray

    @property
    def m(self):
        return self.q.size

    @property
    def mean_difficulty(self):
        """Empirical average of lam_i; the oracle value for rho2 estimators."""
        return float(self.lam.mean())

    def subset(self, indices):
        return TaskPool(q=self.q[indices], lam=self.lam[indices], t=self.t[indices])


def sample_tasks(prior: TaskPrior, m, rng) -> TaskPool:
    """Draw m i.i.d. tasks from the prior."""
    if m < 1:
        raise ValueError("need at least one task")
    q = rng.choice(np.asarray(prior.qs), size=m, p=np.asarray(prior.masses))
    return TaskPool(q=q, lam=(2 * q - 1) ** 2, t=np.where(q > 0.5, 1, -1).astype(np.int8))
