"""Budget-constrained crowdsourced binary labeling: simulation and inference.

Workers answer with reliability p, tasks have latent difficulty (2q-1)^2; the
toolkit simulates answer collection on regular random graphs, infers labels by
message passing, spectral methods, or joint MAP, schedules multi-round
adaptive assignment under a hard budget, and evaluates everything against the
matching closed-form guarantees.
"""

from .adaptive import (
    TRACE_COLUMNS,
    AdaptivePlan,
    InfeasibleBudget,
    LabelingResult,
    NoAnswers,
    RoundTrace,
    budget_exhausting_c_delta,
    majority_vote,
    make_plan,
    run_adaptive,
    run_nonadaptive,
    save_result,
    save_trace,
    threshold,
    tuned_c_delta,
)
from .altmin import AltMinResult, IsolatedNode, PosteriorConfig, alt_min, g, log_posterior
from .assign import (
    BudgetExhausted,
    BudgetLedger,
    GraphShape,
    InvalidDegrees,
    ResponseGraph,
    collect,
    load_graph,
    regular_random_graph,
    save_graph,
)
from .model import (
    CrowdStats,
    DegenerateTask,
    NonPositiveMu,
    QuantizedPrior,
    TaskPool,
    TaskPrior,
    TaskStats,
    WorkerPrior,
    crowd_stats,
    quantize,
    sample_tasks,
    task_stats,
)
from .mp import decide, default_depth, message_passing, save_scores, sweep, trajectory
from .spectral import (
    BarrierCheck,
    NoConvergence,
    NonBacktracking,
    Rho2Estimate,
    SpectrumReport,
    barrier_check,
    build_nonbacktracking,
    estimate_rho2,
    spectrum,
)
from .synth import respond, respond_many, sample_worker, sample_workers
from .theory import (
    ConditionsViolated,
    DensityEvolutionMoments,
    SingularGeometricRatio,
    adaptive_lower_bound,
    adaptive_upper_bound,
    density_evolution,
    mp_error_bound,
    nonadaptive_lower_bound,
    optimal_allocation,
    sigma_inf2,
    sigma_k2,
    sigma_k2_recursion,
    tree_failure_prob,
)

__version__ = "0.1.0"
