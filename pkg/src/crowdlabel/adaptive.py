"""Multi-round adaptive task assignment, plus the single-round baselines.

Rounds t = 1..T walk the quantized difficulty bins from easiest to hardest.
Round t runs s_t sub-rounds; each sub-round assigns a fresh (ell_t, r_t)-
regular graph on the still-unclassified tasks, scores them by message
passing, and permanently classifies every task whose |score| clears the
sub-round threshold

    X_{t,u} = sqrt(lam_t) * mu * ell_t * ((ell_t-1)(r_t-1) rho2_{t,u} sigma2)^(k-1),

i.e. the predicted score magnitude of a bin-t task.  The final sub-round uses
threshold 0 so everything left gets labeled.  rho2_{t,u} is either the oracle
average difficulty of the remaining pool or the graph estimate.

Per-round budgets follow ell_t = ceil(C_delta * lam_hat * (Γ/m) / lam_t).
Two scale choices for C_delta are provided besides the theory default:
``budget_exhausting_c_delta`` solves for projected spend = Γ under the
bin-t-exits-in-round-t model, and ``tuned_c_delta`` additionally floors the
first round comfortably above the spectral barrier, which matters at small
budgets.  The run itself enforces the cap: the last round is stretched to
spend what remains, and any round the ledger cannot afford is truncated and
becomes final.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from warnings import warn

import numpy as np

from .assign import SCHEMA_HEADER, BudgetLedger, ResponseGraph, collect, regular_random_graph
from .model import QuantizedPrior, TaskPool, WorkerPrior, crowd_stats
from .mp import decide, default_depth, message_passing
from .spectral import estimate_rho2

__all__ = [
    "InfeasibleBudget",
    "NoAnswers",
    "AdaptivePlan",
    "RoundTrace",
    "LabelingResult",
    "make_plan",
    "budget_exhausting_c_delta",
    "tuned_c_delta",
    "threshold",
    "run_adaptive",
    "run_nonadaptive",
    "majority_vote",
    "save_trace",
    "save_result",
]

TRACE_COLUMNS = [
    "t", "u", "m_remaining", "ell", "r", "k", "rho2", "threshold",
    "classified_pos", "classified_neg", "deferred", "budget_cum",
]


class InfeasibleBudget(ValueError):
    """The budget cannot give the hardest bin even one worker per task."""


class NoAnswers(ValueError):
    """A task without any answer cannot be voted on."""


@dataclass(frozen=True)
class AdaptivePlan:
    """Round schedule: per-round task degrees and sub-round counts.

    Worker degrees are not fixed ahead of time — each sub-round uses
    r_t = min(ell_t, remaining tasks) at issue time.
    """

    gamma: int
    m: int
    c_delta: float
    quantized: QuantizedPrior
    ell: tuple
    s: tuple

    @property
    def T(self):
        return len(self.ell)


def budget_exhausting_c_delta(quantized: QuantizedPrior) -> float:
    """Scale C_delta so the projected spend equals the budget.

    Assumes bin t exits in round t, so round t still serves all bins >= t:
    spend/Γ = C_delta * lam_hat * sum_t (residual mass_t / lam_t).
    """
    deltas = np.asarray(quantized.deltas)
    lams = np.asarray(quantized.lams)
    residual = np.cumsum(deltas[::-1])[::-1]
    return float(1.0 / (quantized.lam_hat * np.sum(residual / lams)))


def tuned_c_delta(quantized: QuantizedPrior, gamma, m, rho2, sigma2) -> float:
    """Budget-exhausting scale, floored so round 1 clears the spectral barrier.

    The floor puts (ell_1 - 1)^2 (rho2 sigma2)^2 at 4 or more: below that the
    first round's scores are too noisy to classify anything reliably and
    early exits poison the error rate.
    """
    exhausting = budget_exhausting_c_delta(quantized)
    ell_1_min = 1.0 + 2.0 / (rho2 * sigma2)
    floor = ell_1_min * quantized.lams[0] * m / (quantized.lam_hat * gamma)
    return max(exhausting, floor)


def make_plan(m, gamma, quantized: QuantizedPrior, c_delta=None) -> AdaptivePlan:
    """Round schedule for a budget; C_delta defaults to the theory constant."""
    if gamma < m:
        raise InfeasibleBudget(f"budget {gamma} is below one answer per task (m={m})")
    if c_delta is None:
        c_delta = quantized.c_delta
    lams = np.asarray(quantized.lams)
    deltas = np.asarray(quantized.deltas)
    raw = c_delta * quantized.lam_hat * gamma / (m * lams)
    if raw[-1] < 1:
        raise InfeasibleBudget(
            f"hardest bin would get {raw[-1]:.3g} < 1 workers per task; "
            f"needs gamma >= {m * lams[-1] / (c_delta * quantized.lam_hat):.0f}"
        )
    ell = np.maximum(2, np.ceil(raw - 1e-9).astype(int))
    s = [
        max(0, math.ceil(math.log2(2 * deltas[t] / deltas[t + 1]) - 1e-12))
        for t in range(len(lams) - 1)
    ] + [1]
    residual = np.cumsum(deltas[::-1])[::-1]
    projected = int(np.sum(ell * residual * m))
    if projected > gamma:
        warn(
            f"plan projects {projected} answers against budget {gamma}; "
            "the run will truncate at the cap",
            stacklevel=2,
        )
    return AdaptivePlan(
        gamma=int(gamma), m=int(m), c_delta=float(c_delta),
        quantized=quantized, ell=tuple(int(v) for v in ell), s=tuple(s),
    )


def threshold(t, T, ell, r, rho2, sigma2, mu, lam_t, k):
    """Classification threshold of sub-rounds in round t; 0 in the final round."""
    if t > T:
        raise ValueError(f"round {t} of {T}")
    if t == T:
        return 0.0
    return math.sqrt(lam_t) * mu * ell * ((ell - 1) * (r - 1) * rho2 * sigma2) ** (k - 1)


@dataclass(frozen=True)
class RoundTrace:
    t: int
    u: int
    m_remaining: int
    ell: int
    r: int
    k: int
    rho2: float
    threshold: float
    classified_pos: int
    classified_neg: int
    deferred: int
    budget_cum: int


@dataclass(frozen=True)
class LabelingResult:
    """Final ±1 labels, per-task exit rounds, spend, and the sub-round traces.

    Tasks labeled by the fallback sweep after an exhausted budget carry exit
    round (0, 0).
    """

    labels: np.ndarray
    exit_t: np.ndarray
    exit_u: np.ndarray
    spent: int
    traces: list = field(default_factory=list)

    @property
    def m(self):
        return self.labels.size

    def error_rate(self, truth):
        return float(np.mean(self.labels != truth))


def _pooled_graph(history, remaining):
    """Union of every response collected for the still-unclassified tasks.

    ``remaining`` is sorted, so global ids map to local ranks by bisection.
    Workers from different sub-rounds are distinct people and stay distinct.
    """
    m_local = remaining.size
    parts = []
    offset = 0
    for global_ids, graph in history:
        edge_gids = global_ids[graph.task_idx]
        keep = np.isin(edge_gids, remaining)
        if keep.any():
            parts.append((
                np.searchsorted(remaining, edge_gids[keep]),
                graph.worker_idx[keep] + offset,
                graph.answers[keep],
            ))
        offset += graph.n
    ti = np.concatenate([part[0] for part in parts])
    wi = np.concatenate([part[1] for part in parts])
    answers = np.concatenate([part[2] for part in parts])
    # compact worker ids so bincount stays small
    _, wi = np.unique(wi, return_inverse=True)
    n_local = int(wi.max()) + 1
    ell_eff = int(math.ceil(ti.size / m_local))
    return ResponseGraph(m=m_local, n=n_local, ell=ell_eff, r=ell_eff,
                         task_idx=ti, worker_idx=wi, answers=answers)


def _coin_labels(scores, rng):
    labels = np.sign(scores)
    ties = labels == 0
    if ties.any():
        labels[ties] = rng.choice(np.array([-1.0, 1.0]), size=int(ties.sum()))
    return labels.astype(np.int8)


def run_adaptive(tasks: TaskPool, worker_prior: WorkerPrior, plan: AdaptivePlan,
                 rho_mode="oracle", final_mode="all-responses",
                 ledger: BudgetLedger | None = None, rng=None,
                 _r_override=None) -> LabelingResult:
    """Execute a plan on a task pool.

    rho_mode "oracle" uses the remaining pool's true average difficulty for
    thresholds (the value the guarantees assume); "estimated" uses the graph
    estimator.  final_mode "all-responses" scores the final round on the
    union of everything collected for the remaining tasks (the experiment
    default); "fresh" uses only the final round's own graph.
    """
    if rho_mode not in ("oracle", "estimated"):
        raise ValueError(f"unknown rho_mode {rho_mode!r}")
    if final_mode not in ("all-responses", "fresh"):
        raise ValueError(f"unknown final_mode {final_mode!r}")
    if rng is None:
        rng = np.random.default_rng()
    if ledger is None:
        ledger = BudgetLedger(gamma=plan.gamma, mode="hard")
    stats = crowd_stats(worker_prior)

    m = tasks.m
    labels = np.zeros(m, dtype=np.int8)
    exit_t = np.zeros(m, dtype=int)
    exit_u = np.zeros(m, dtype=int)
    last_scores = np.zeros(m)
    remaining = np.arange(m)
    history = []
    traces = []
    done = False

    for t_idx in range(plan.T):
        t = t_idx + 1
        for u in range(1, plan.s[t_idx] + 1):
            if remaining.size == 0 or done:
                done = True
                break
            mm = remaining.size
            is_final = t == plan.T and u == plan.s[t_idx]
            ell = plan.ell[t_idx]
            if ledger.mode == "hard":
                if is_final:
                    # Stretch the last round to exhaust what the cap allows.
                    ell = max(ell, ledger.remaining // mm)
                if ledger.remaining < mm * ell:
                    ell = ledger.remaining // mm
                    is_final = True  # cannot honor the plan; finish now
                if ell < 1:
                    done = True
                    break
            r = min(ell if _r_override is None else _r_override, mm)
            k = default_depth(mm)
            shape = regular_random_graph(mm, ell, r, rng)
            graph = collect(shape, tasks.subset(remaining), worker_prior, rng, ledger)
            history.append((remaining.copy(), graph))

            score_graph = graph
            if is_final and final_mode == "all-responses" and len(history) > 1:
                score_graph = _pooled_graph(history, remaining)
            scores = message_passing(score_graph, k, init="gaussian", rng=rng)

            if rho_mode == "oracle":
                rho2 = float(tasks.lam[remaining].mean())
            else:
                rho2 = estimate_rho2(graph, stats.sigma2, rng=rng).clamped
            chi = threshold(
                t if not is_final else plan.T, plan.T, ell, r, rho2,
                stats.sigma2, stats.mu, plan.quantized.lams[t_idx], k,
            )
            decisions = decide(scores, chi, rng)
            classified = decisions != 0
            hit = remaining[classified]
            labels[hit] = decisions[classified]
            exit_t[hit] = t
            exit_u[hit] = u
            last_scores[remaining] = scores
            traces.append(RoundTrace(
                t=t, u=u, m_remaining=mm, ell=ell, r=r, k=k, rho2=rho2,
                threshold=chi, classified_pos=int((decisions == 1).sum()),
                classified_neg=int((decisions == -1).sum()),
                deferred=int(mm - classified.sum()), budget_cum=ledger.spent,
            ))
            remaining = remaining[~classified]
        if done:
            break

    if remaining.size:
        # Budget ran dry before a final round: fall back to the latest scores.
        labels[remaining] = _coin_labels(last_scores[remaining], rng)
    return LabelingResult(labels=labels, exit_t=exit_t, exit_u=exit_u,
                          spent=ledger.spent, traces=traces)


def run_nonadaptive(tasks: TaskPool, worker_prior: WorkerPrior, ell, r=None,
                    ledger: BudgetLedger | None = None, rng=None) -> LabelingResult:
    """Single-round baseline: one (ell, r)-regular graph, threshold 0."""
    if ell < 1:
        raise InfeasibleBudget("need ell >= 1")
    quantized = QuantizedPrior(lams=(1.0,), deltas=(1.0,))
    plan = AdaptivePlan(
        gamma=int(ell * tasks.m), m=tasks.m, c_delta=quantized.c_delta,
        quantized=quantized, ell=(int(ell),), s=(1,),
    )
    return run_adaptive(
        tasks, worker_prior, plan, rho_mode="oracle", final_mode="fresh",
        ledger=ledger, rng=rng, _r_override=r,
    )


def majority_vote(graph: ResponseGraph, rng) -> np.ndarray:
    """Per-task sign of the answer sum; ties resolved by fair coin."""
    degrees = graph.task_degrees()
    if (degrees == 0).any():
        missing = int(np.flatnonzero(degrees == 0)[0])
        raise NoAnswers(f"task {missing} has no answers")
    sums = np.bincount(graph.task_idx, weights=graph.answers, minlength=graph.m)
    return _coin_labels(sums, rng)


def save_trace(traces, path):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for tr in traces:
            writer.writerow([
                tr.t, tr.u, tr.m_remaining, tr.ell, tr.r, tr.k,
                f"{tr.rho2:.12g}", f"{tr.threshold:.12g}",
                tr.classified_pos, tr.classified_neg, tr.deferred, tr.budget_cum,
            ])


def save_result(result: LabelingResult, path):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        fh.write(f"#spent={result.spent}\n")
        writer = csv.writer(fh)
        writer.writerow(["task_id", "label", "exit_t", "exit_u"])
        for i in range(result.m):
            writer.writerow([i, int(result.labels[i]), int(result.exit_t[i]),
                             int(result.exit_u[i])])
