"""Experiment harness: seeded sweeps, bound curves, spectra, reliability runs.

Scenario configs are YAML (plain nested key-value text; grammar documented in
the README).  ``run`` executes budget x seed x algorithm sweeps and writes one
result row per cell; a failed cell is recorded and skipped, never aborting the
sweep.  Fixed seeds give identical result rows across runs — the runtime
column is the single wall-clock field and is excluded from that promise.

Bundled scenario files live in the package's ``configs/`` directory and can be
named directly, e.g. ``crowdlabel run fig1_left``.
"""

from __future__ import annotations

import csv
import importlib.resources
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np
import yaml

from . import theory
from .adaptive import make_plan, majority_vote, run_adaptive, run_nonadaptive, save_trace, tuned_c_delta
from .altmin import alt_min
from .assign import SCHEMA_HEADER, BudgetLedger, collect, load_graph, regular_random_graph
from .model import TaskPrior, WorkerPrior, crowd_stats, quantize, sample_tasks, task_stats
from .spectral import build_nonbacktracking, estimate_rho2, save_spectrum, spectrum as spectrum_of

RESULT_COLUMNS = ["scenario", "gamma_per_m", "seed", "algorithm", "error",
                  "spent", "runtime_s", "status"]
ALGORITHMS = ("adaptive", "nonadaptive", "majority", "altmin")
BOUND_NAMES = ("adaptive-upper", "adaptive-lower", "nonadaptive-lower")
_ALGO_STREAM = {name: i for i, name in enumerate(ALGORITHMS)}


class ConfigError(click.ClickException):
    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")


def _require(cfg, fields, kind, check, message):
    value = cfg
    for part in fields.split("."):
        if not isinstance(value, dict) or part not in value:
            raise ConfigError(fields, "missing")
        value = value[part]
    if not isinstance(value, kind) or not check(value):
        raise ConfigError(fields, message)
    return value


def _bundled_path(name):
    base = importlib.resources.files("crowdlabel") / "configs"
    candidate = base / (name if name.endswith(".yaml") else name + ".yaml")
    return candidate if candidate.is_file() else None


def load_scenario(path):
    """Parse a scenario file; bare names fall back to the bundled configs."""
    import os

    if not os.path.exists(path):
        bundled = _bundled_path(path)
        if bundled is None:
            raise click.ClickException(f"no such config file or bundled scenario: {path}")
        text = bundled.read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise click.ClickException(f"config parse error: {exc}")
    if not isinstance(cfg, dict):
        raise click.ClickException("config must be a mapping")
    _require(cfg, "scenario", str, lambda s: bool(s), "must be a nonempty string")
    _require(cfg, "m", int, lambda v: v >= 1, "must be a positive integer")
    build_worker_prior(cfg.get("worker_prior"))
    build_task_prior(cfg.get("task_prior"))
    if cfg.get("kind", "sweep") == "sweep":
        _require(cfg, "seeds", list, lambda s: len(s) > 0 and all(isinstance(x, int) for x in s),
                 "must be a nonempty list of integers")
        _require(cfg, "budgets", list, lambda s: len(s) > 0 and all(isinstance(x, int) and x >= 1 for x in s),
                 "must be a nonempty list of positive integers (queries per task)")
        algos = _require(cfg, "algorithms", list, lambda s: len(s) > 0, "must be a nonempty list")
        for algo in algos:
            if algo not in ALGORITHMS:
                raise ConfigError("algorithms", f"unknown algorithm {algo!r}; valid: {', '.join(ALGORITHMS)}")
    elif cfg.get("kind") == "spectrum":
        _require(cfg, "seed", int, lambda v: True, "must be an integer")
        cases = _require(cfg, "cases", list, lambda s: len(s) > 0, "must be a nonempty list")
        for case in cases:
            if not isinstance(case, dict) or "ell" not in case or "r" not in case:
                raise ConfigError("cases", "each case needs 'ell' and 'r'")
    else:
        raise ConfigError("kind", f"unknown kind {cfg.get('kind')!r}; valid: sweep, spectrum")
    return cfg


def build_worker_prior(spec):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("worker_prior", "must be a mapping with a 'kind'")
    try:
        if spec["kind"] == "spammer_hammer":
            return WorkerPrior.spammer_hammer(spec["sigma2"], spec.get("a", 1.0))
        if spec["kind"] == "discrete":
            masses = spec.get("masses") or [1.0 / len(spec["ps"])] * len(spec["ps"])
            return WorkerPrior.discrete(list(zip(spec["ps"], masses)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("worker_prior", str(exc))
    raise ConfigError("worker_prior.kind", f"unknown kind {spec['kind']!r}")


def build_task_prior(spec):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("task_prior", "must be a mapping with a 'kind'")
    try:
        if spec["kind"] == "difficulties":
            lams = spec["lams"]
            masses = spec.get("masses") or [1.0 / len(lams)] * len(lams)
            return TaskPrior.from_difficulties(lams, masses)
        if spec["kind"] == "discrete":
            masses = spec.get("masses") or [1.0 / len(spec["qs"])] * len(spec["qs"])
            return TaskPrior.discrete(list(zip(spec["qs"], masses)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("task_prior", str(exc))
    raise ConfigError("task_prior.kind", f"unknown kind {spec['kind']!r}")


def _resolve_c_delta(cfg, quantized, gamma, m, rho2, sigma2):
    choice = cfg.get("c_delta", "tuned")
    if choice == "theory":
        return None
    if choice == "tuned":
        return tuned_c_delta(quantized, gamma, m, rho2, sigma2)
    if isinstance(choice, (int, float)) and choice > 0:
        return float(choice)
    raise ConfigError("c_delta", f"expected 'tuned', 'theory', or a positive number, got {choice!r}")


def execute_row(cfg, algorithm, budget, seed):
    """One sweep cell; returns a result dict (never raises on simulation errors)."""
    worker_prior = build_worker_prior(cfg["worker_prior"])
    task_prior = build_task_prior(cfg["task_prior"])
    m = cfg["m"]
    gamma = budget * m
    started = time.perf_counter()
    try:
        pool_rng = np.random.default_rng(seed)
        tasks = sample_tasks(task_prior, m, pool_rng)
        rng = np.random.default_rng([seed, _ALGO_STREAM[algorithm], budget])
        ledger = BudgetLedger(gamma=gamma, mode=cfg.get("budget_mode", "hard"))
        traces = None
        if algorithm == "adaptive":
            stats = task_stats(task_prior)
            quantized = quantize(task_prior)
            sigma2 = yaml_sigma2(cfg)
            c_delta = _resolve_c_delta(cfg, quantized, gamma, m, stats.rho2, sigma2)
            plan = make_plan(m, gamma, quantized, c_delta)
            result = run_adaptive(
                tasks, worker_prior, plan,
                rho_mode=cfg.get("rho_mode", "oracle"),
                final_mode=cfg.get("final_mode", "all-responses"),
                ledger=ledger, rng=rng,
            )
            labels, spent, traces = result.labels, result.spent, result.traces
        elif algorithm == "nonadaptive":
            result = run_nonadaptive(tasks, worker_prior, ell=budget, ledger=ledger, rng=rng)
            labels, spent = result.labels, result.spent
        elif algorithm == "majority":
            shape = regular_random_graph(m, budget, budget, rng)
            graph = collect(shape, tasks, worker_prior, rng, ledger)
            labels, spent = majority_vote(graph, rng), ledger.spent
        else:
            shape = regular_random_graph(m, budget, budget, rng)
            graph = collect(shape, tasks, worker_prior, rng, ledger)
            labels, spent = alt_min(graph, rng=rng).labels, ledger.spent
        error = float(np.mean(labels != tasks.t))
        row = {"error": error, "spent": spent, "status": "ok", "traces": traces}
    except Exception as exc:  # per-row isolation: record and continue
        row = {"error": "", "spent": "", "status": "failed",
               "message": f"{type(exc).__name__}: {exc}", "traces": None}
    row.update(scenario=cfg["scenario"], gamma_per_m=budget, seed=seed,
               algorithm=algorithm, runtime_s=time.perf_counter() - started)
    return row


def yaml_sigma2(cfg):
    return crowd_stats(build_worker_prior(cfg["worker_prior"])).sigma2


def _write_results(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            error = row["error"]
            writer.writerow([
                row["scenario"], row["gamma_per_m"], row["seed"], row["algorithm"],
                f"{error:.10g}" if error != "" else "",
                row["spent"], f"{row['runtime_s']:.3f}", row["status"],
            ])


_PLOT_SCRIPT = """\
#!/usr/bin/env python
\"\"\"Plot error-rate curves from a result CSV (generated; edit freely).\"\"\"
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv_path!r}
curves = defaultdict(lambda: defaultdict(list))
with open(path) as fh:
    rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
for row in rows:
    if row["status"] != "ok":
        continue
    curves[row["algorithm"]][int(row["gamma_per_m"])].append(float(row["error"]))

for algorithm, points in sorted(curves.items()):
    xs = sorted(points)
    ys = [sum(points[x]) / len(points[x]) for x in xs]
    plt.semilogy(xs, ys, marker="o", label=algorithm)
plt.xlabel("queries per task")
plt.ylabel("probability of error")
plt.legend()
plt.tight_layout()
plt.savefig({png_path!r}, dpi=150)
print("wrote", {png_path!r})
"""


@click.group()
def main():
    """Budget-constrained crowdsourced labeling: simulate, infer, analyze."""


@main.command()
@click.argument("config")
@click.option("--out", "out_path", default=None, help="Result CSV path (default: from config).")
@click.option("--workers", default=1, show_default=True, help="Parallel row workers.")
@click.option("--plot-script", "plot_script", default=None,
              help="Also emit a matplotlib script consuming the result CSV.")
def run(config, out_path, workers, plot_script):
    """Execute a sweep or spectrum scenario CONFIG (path or bundled name)."""
    cfg = load_scenario(config)
    out_path = out_path or cfg.get("output") or (cfg["scenario"] + ".csv")

    if cfg.get("kind", "sweep") == "spectrum":
        _run_spectrum_scenario(cfg, out_path)
        return

    cells = [(cfg, algorithm, budget, seed)
             for budget in cfg["budgets"]
             for seed in cfg["seeds"]
             for algorithm in cfg["algorithms"]]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_execute_cell, cells))
    else:
        rows = [_execute_cell(cell) for cell in cells]

    failures = [row for row in rows if row["status"] != "ok"]
    for row in failures:
        click.echo(f"row failed ({row['algorithm']}, gamma/m={row['gamma_per_m']}, "
                   f"seed={row['seed']}): {row['message']}", err=True)
    _write_results(out_path, rows)
    click.echo(f"wrote {out_path} ({len(rows)} rows, {len(failures)} failed)")

    trace_prefix = cfg.get("trace_output")
    if trace_prefix:
        for row in rows:
            if row.get("traces"):
                save_trace(row["traces"],
                           f"{trace_prefix}_b{row['gamma_per_m']}_s{row['seed']}.csv")
    if plot_script:
        png = out_path.rsplit(".", 1)[0] + ".png"
        with open(plot_script, "w") as fh:
            fh.write(_PLOT_SCRIPT.format(csv_path=out_path, png_path=png))
        click.echo(f"wrote {plot_script}")
    if failures:
        sys.exit(1)


def _execute_cell(cell):
    return execute_row(*cell)


def _run_spectrum_scenario(cfg, out_prefix):
    worker_prior = build_worker_prior(cfg["worker_prior"])
    task_prior = build_task_prior(cfg["task_prior"])
    sigma2 = yaml_sigma2(cfg)
    rho2 = task_stats(task_prior).rho2
    prefix = out_prefix[:-4] if out_prefix.endswith(".csv") else out_prefix
    for case in cfg["cases"]:
        rng = np.random.default_rng([cfg["seed"], case["ell"], case["r"]])
        tasks = sample_tasks(task_prior, cfg["m"], rng)
        shape = regular_random_graph(cfg["m"], case["ell"], case["r"], rng)
        graph = collect(shape, tasks, worker_prior, rng)
        report = spectrum_of(build_nonbacktracking(graph), mode="full",
                             sigma2=sigma2, rho2=rho2)
        path = f"{prefix}_ell{case['ell']}.csv"
        save_spectrum(report, path)
        click.echo(f"wrote {path} (top |eig| {report.top_pair_magnitude:.3f}, "
                   f"predicted {report.predicted_top:.3f})")


@main.command()
@click.option("--out", "out_path", required=True)
@click.option("--bound", "bounds_", multiple=True,
              help=f"Bound name, repeatable. Valid: {', '.join(BOUND_NAMES)}.")
@click.option("--upper", is_flag=True, help="Shorthand for --bound adaptive-upper.")
@click.option("--lower", is_flag=True, help="Shorthand for --bound adaptive-lower.")
@click.option("--grid", default="60:360:60", show_default=True,
              help="Queries-per-task grid: 'start:stop:step' or comma list.")
@click.option("--sigma2", default=0.3, show_default=True)
@click.option("--lams", default="1,0.25,0.0625", show_default=True,
              help="Difficulty atoms of the task prior.")
@click.option("--masses", default=None, help="Atom masses (default uniform).")
@click.option("--lam-i", "lam_i", default=None, type=float,
              help="Task difficulty for nonadaptive-lower (default: min of --lams).")
def bounds(out_path, bounds_, upper, lower, grid, sigma2, lams, masses, lam_i):
    """Sample theoretical error bounds on a queries-per-task grid."""
    names = list(bounds_) + (["adaptive-upper"] if upper else []) + (["adaptive-lower"] if lower else [])
    if not names:
        raise click.ClickException("no bounds requested; pass --upper, --lower, or --bound")
    for name in names:
        if name not in BOUND_NAMES:
            raise click.ClickException(f"unknown bound {name!r}; valid names: {', '.join(BOUND_NAMES)}")

    lam_list = [float(v) for v in lams.split(",")]
    mass_list = ([float(v) for v in masses.split(",")] if masses
                 else [1.0 / len(lam_list)] * len(lam_list))
    prior = TaskPrior.from_difficulties(lam_list, mass_list)
    stats = task_stats(prior)
    quantized = quantize(prior)
    if lam_i is None:
        lam_i = min(lam_list)

    if ":" in grid:
        start, stop, step = (float(v) for v in grid.split(":"))
        points = list(np.arange(start, stop + step / 2, step))
    else:
        points = [float(v) for v in grid.split(",")]

    with open(out_path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["bound", "gamma_per_m", "value"])
        for name in names:
            for point in points:
                if name == "adaptive-upper":
                    value = theory.adaptive_upper_bound(point, 1, stats.lam, sigma2,
                                                        quantized.c_delta, quantized.c1)
                elif name == "adaptive-lower":
                    value = theory.adaptive_lower_bound(point, 1, stats.lam, sigma2)
                else:
                    value = theory.nonadaptive_lower_bound(point, sigma2, lam_i)
                writer.writerow([name, f"{point:.10g}", f"{value:.10g}"])
    click.echo(f"wrote {out_path} ({len(names) * len(points)} rows)")


@main.command()
@click.option("--m", default=300, show_default=True)
@click.option("--ell", default=15, show_default=True)
@click.option("--r", "r_", default=None, type=int, help="Worker degree (default: ell).")
@click.option("--sigma2", default=0.3, show_default=True)
@click.option("--qs", default="0.6,0.8,1.0", show_default=True,
              help="Task prior atoms (uniform masses).")
@click.option("--seed", default=0, show_default=True)
@click.option("--mode", default="full", type=click.Choice(["full", "power"]), show_default=True)
@click.option("--out", "out_path", required=True)
def spectrum(m, ell, r_, sigma2, qs, seed, mode, out_path):
    """Eigenvalues of the non-backtracking operator of one sampled instance."""
    r_ = r_ or ell
    q_list = [float(v) for v in qs.split(",")]
    task_prior = TaskPrior.discrete([(q, 1.0 / len(q_list)) for q in q_list])
    worker_prior = WorkerPrior.spammer_hammer(sigma2)
    rng = np.random.default_rng(seed)
    tasks = sample_tasks(task_prior, m, rng)
    graph = collect(regular_random_graph(m, ell, r_, rng), tasks, worker_prior, rng)
    report = spectrum_of(build_nonbacktracking(graph), mode=mode, sigma2=sigma2,
                         rho2=task_stats(task_prior).rho2, rng=rng)
    save_spectrum(report, out_path)
    click.echo(f"wrote {out_path} (top |eig| {report.top_pair_magnitude:.3f}, "
               f"predicted {report.predicted_top:.3f})")


@main.command("estimate-rho")
@click.argument("graph_csv", type=click.Path(exists=True))
@click.option("--sigma2", required=True, type=float)
@click.option("--seed", default=0, show_default=True)
def estimate_rho(graph_csv, sigma2, seed):
    """Estimate average task difficulty rho^2 from a saved response graph."""
    graph = load_graph(graph_csv)
    est = estimate_rho2(graph, sigma2, rng=np.random.default_rng(seed))
    click.echo(f"sigma1={est.sigma1:.6g} raw={est.raw:.6g} clamped={est.clamped:.6g}")


if __name__ == "__main__":
    main()
