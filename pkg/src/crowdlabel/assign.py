"""Task-worker assignment graphs and budget accounting.

Assignments are (ell, r)-regular random bipartite multigraphs built with the
configuration model: each task exposes ell stubs, workers expose r stubs, and
the two stub lists are matched uniformly at random.  Parallel edges are kept
as distinct edges (each with an independent answer); collapsing them would bias
the degree sequence the analysis assumes.

When m*ell is not divisible by r the last worker receives the remainder, so
no budget is silently discarded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import TaskPool, WorkerPrior
from .synth import respond_many, sample_workers

__all__ = [
    "InvalidDegrees",
    "BudgetExhausted",
    "GraphShape",
    "BudgetLedger",
    "ResponseGraph",
    "regular_random_graph",
    "collect",
    "save_graph",
    "load_graph",
]

SCHEMA_HEADER = "#schema=1"


class InvalidDegrees(ValueError):
    """Requested degrees cannot produce a bipartite assignment."""


class BudgetExhausted(RuntimeError):
    """A hard-capped ledger cannot afford the requested assignments."""


@dataclass(frozen=True)
class GraphShape:
    """Edge skeleton of an assignment: who answers what, no answers yet."""

    m: int
    n: int
    ell: int
    r: int
    task_idx: np.ndarray
    worker_idx: np.ndarray

    @property
    def n_edges(self):
        return self.task_idx.size


def regular_random_graph(m, ell, r, rng) -> GraphShape:
    """Uniform stub matching with n = ceil(m*ell / r) workers."""
    if m < 1 or ell < 1 or r < 1:
        raise InvalidDegrees(f"degrees must be positive, got m={m}, ell={ell}, r={r}")
    if r > m * ell:
        raise InvalidDegrees(f"worker degree r={r} exceeds the edge count {m * ell}")
    n_edges = m * ell
    n = -(-n_edges // r)
    task_idx = np.repeat(np.arange(m), ell)
    worker_idx = np.repeat(np.arange(n), r)[:n_edges]
    rng.shuffle(worker_idx)
    return GraphShape(m=m, n=n, ell=ell, r=r, task_idx=task_idx, worker_idx=worker_idx)


@dataclass
class BudgetLedger:
    """Counts collected answers against an allowance Γ.

    ``hard`` mode refuses to exceed the allowance; ``expected`` mode only
    records spending so it can be checked in expectation afterwards.
    """

    gamma: int
    mode: str = "hard"
    spent: int = 0

    def __post_init__(self):
        if self.mode not in ("hard", "expected"):
            raise ValueError(f"unknown ledger mode {self.mode!r}")

    @property
    def remaining(self):
        return self.gamma - self.spent

    def charge(self, count):
        if self.mode == "hard" and self.spent + count > self.gamma:
            raise BudgetExhausted(
                f"cannot spend {count} with {self.remaining} of {self.gamma} left"
            )
        self.spent += int(count)


@dataclass(frozen=True)
class ResponseGraph:
    """Collected answers on an assignment graph.

    ``ell`` and ``r`` are the nominal design degrees.  ``worker_p`` keeps the
    sampled reliabilities for simulation diagnostics; inference code never
    reads it.
    """

    m: int
    n: int
    ell: int
    r: int
    task_idx: np.ndarray
    worker_idx: np.ndarray
    answers: np.ndarray
    worker_p: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_edges(self):
        return self.task_idx.size

    def task_degrees(self):
        return np.bincount(self.task_idx, minlength=self.m)

    def worker_degrees(self):
        return np.bincount(self.worker_idx, minlength=self.n)


def collect(shape: GraphShape, tasks: TaskPool, prior: WorkerPrior, rng,
            ledger: BudgetLedger | None = None) -> ResponseGraph:
    """Sample fresh workers for the shape's worker nodes and one answer per edge."""
    if shape.m != tasks.m:
        raise ValueError(f"shape is for {shape.m} tasks, pool has {tasks.m}")
    if ledger is not None:
        ledger.charge(shape.n_edges)
    p = sample_workers(prior, shape.n, rng)
    answers = respond_many(tasks.q[shape.task_idx], p[shape.worker_idx], rng)
    return ResponseGraph(
        m=shape.m, n=shape.n, ell=shape.ell, r=shape.r,
        task_idx=shape.task_idx, worker_idx=shape.worker_idx,
        answers=answers, worker_p=p,
    )


def save_graph(graph: ResponseGraph, path):
    """Write edges as (task_id, worker_id, answer) CSV rows."""
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        fh.write(f"#m={graph.m},n={graph.n},ell={graph.ell},r={graph.r}\n")
        writer = csv.writer(fh)
        writer.writerow(["task_id", "worker_id", "answer"])
        for t, w, a in zip(graph.task_idx, graph.worker_idx, graph.answers):
            writer.writerow([int(t), int(w), int(a)])


def load_graph(path) -> ResponseGraph:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line and "," in line and line != SCHEMA_HEADER:
                    for part in line.lstrip("#").split(","):
                        key, _, val = part.partition("=")
                        meta[key] = int(val)
                continue
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    if header != ["task_id", "worker_id", "answer"]:
        raise ValueError(f"unexpected graph CSV header {header}")
    data = np.array([[int(t), int(w), int(a)] for t, w, a in reader])
    task_idx, worker_idx, answers = data[:, 0], data[:, 1], data[:, 2].astype(float)
    m = meta.get("m", int(task_idx.max()) + 1)
    n = meta.get("n", int(worker_idx.max()) + 1)
    ell = meta.get("ell", int(np.bincount(task_idx, minlength=m).max()))
    r = meta.get("r", int(np.bincount(worker_idx, minlength=n).max()))
    return ResponseGraph(m=m, n=n, ell=ell, r=r, task_idx=task_idx,
                         worker_idx=worker_idx, answers=answers)
