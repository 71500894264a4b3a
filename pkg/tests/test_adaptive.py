"""Round scheduling, the adaptive labeling engine, and the voting baselines."""

import csv

import numpy as np
import pytest

from crowdlabel import (
    TRACE_COLUMNS,
    AdaptivePlan,
    InfeasibleBudget,
    NoAnswers,
    QuantizedPrior,
    BudgetLedger,
    ResponseGraph,
    TaskPrior,
    WorkerPrior,
    budget_exhausting_c_delta,
    majority_vote,
    make_plan,
    quantize,
    run_adaptive,
    run_nonadaptive,
    sample_tasks,
    save_result,
    save_trace,
    threshold,
    tuned_c_delta,
)

# three difficulty levels at equal mass: lam in {1, 1/4, 1/16}
THREE_LEVEL = TaskPrior.from_difficulties([1.0, 0.25, 0.0625], [1 / 3, 1 / 3, 1 / 3])
CROWD = WorkerPrior.spammer_hammer(0.3)

# harder mix used for the below-barrier checks: lam in {1, 0.36, 0.04}
HARD_MIX = TaskPrior.from_difficulties([1.0, 0.36, 0.04], [1 / 3, 1 / 3, 1 / 3])
WEAK_CROWD = WorkerPrior.spammer_hammer(0.2)


def three_level_quantized():
    return quantize(THREE_LEVEL)


class TestCDeltaCalibration:
    def test_budget_exhausting_three_levels(self):
        """Dyadic three-level prior: residual masses (1, 2/3, 1/3) against
        lams (1, 1/4, 1/16) give sum 9, and lam_hat = 1/7, so C = 7/9."""
        c = budget_exhausting_c_delta(three_level_quantized())
        np.testing.assert_allclose(c, 7.0 / 9.0, rtol=1e-12)

    def test_budget_exhausting_single_bin(self):
        """One bin at lam=1 spends exactly ell per task, so the scale is 1."""
        q = QuantizedPrior(lams=(1.0,), deltas=(1.0,))
        np.testing.assert_allclose(budget_exhausting_c_delta(q), 1.0, rtol=1e-12)

    def test_tuned_floor_engages_at_small_budget(self):
        """At gamma/m = 120 the barrier floor exceeds the exhausting scale."""
        q = three_level_quantized()
        rho2, sigma2 = 21.0 / 48.0, 0.3
        got = tuned_c_delta(q, 120 * 300, 300, rho2, sigma2)
        floor = (1 + 2 / (rho2 * sigma2)) * 1.0 * 300 / (q.lam_hat * 120 * 300)
        np.testing.assert_allclose(got, floor, rtol=1e-12)
        assert got > budget_exhausting_c_delta(q)

    def test_tuned_matches_exhausting_at_large_budget(self):
        """At gamma/m = 360 the exhausting scale already clears the floor."""
        q = three_level_quantized()
        got = tuned_c_delta(q, 360 * 300, 300, 21.0 / 48.0, 0.3)
        np.testing.assert_allclose(got, budget_exhausting_c_delta(q), rtol=1e-12)


class TestMakePlan:
    def test_single_bin_plan(self):
        """One bin: C_delta = 1/5, so gamma/m = 100 gives ell = 20, s = (1,)."""
        q = QuantizedPrior(lams=(1.0,), deltas=(1.0,))
        plan = make_plan(50, 50 * 100, q)
        assert plan.ell == (20,)
        assert plan.s == (1,)
        assert plan.T == 1

    def test_two_bin_plan(self):
        """Bins 0.8@0.64 and 0.2@0.04: lam_hat = 0.16, C_delta = 1/7; at
        gamma/m = 35 the raw degrees are 1.25 and 20, and the mass drop from
        0.8 to 0.2 takes ceil(log2(8)) = 3 sub-rounds."""
        q = QuantizedPrior(lams=(0.64, 0.04), deltas=(0.8, 0.2))
        np.testing.assert_allclose(q.lam_hat, 0.16, rtol=1e-12)
        np.testing.assert_allclose(q.c_delta, 1.0 / 7.0, rtol=1e-12)
        plan = make_plan(200, 200 * 35, q)
        assert plan.ell == (2, 20)
        assert plan.s == (3, 1)

    def test_three_level_exhausting_plan(self):
        """gamma/m = 180 at the exhausting scale lands on (20, 80, 320)."""
        q = three_level_quantized()
        plan = make_plan(600, 600 * 180, q, c_delta=7.0 / 9.0)
        assert plan.ell == (20, 80, 320)
        assert plan.s == (1, 1, 1)

    def test_degree_floor_of_two(self):
        """gamma/m = 9 at the exhausting scale gives raw degrees (1, 4, 16);
        the first is lifted to the minimum useful degree 2 (which also makes
        the plan over-committed, hence the warning)."""
        q = three_level_quantized()
        with pytest.warns(UserWarning, match="truncate"):
            plan = make_plan(300, 300 * 9, q, c_delta=7.0 / 9.0)
        assert plan.ell == (2, 4, 16)

    def test_budget_below_one_answer_per_task(self):
        q = three_level_quantized()
        with pytest.raises(InfeasibleBudget):
            make_plan(100, 99, q)

    def test_hardest_bin_starved(self):
        """At the theory scale C_delta = 1/5 and gamma = m, the hardest bin
        would get less than one worker per task."""
        q = three_level_quantized()
        with pytest.raises(InfeasibleBudget, match="hardest"):
            make_plan(100, 100, q)

    def test_overcommitted_plan_warns(self):
        """Ceiling the raw degrees can push the projected spend past gamma."""
        q = three_level_quantized()
        with pytest.warns(UserWarning, match="truncate"):
            make_plan(200, 200 * 60, q, c_delta=7.0 / 9.0)


class TestThreshold:
    def test_final_round_is_zero(self):
        """The last round classifies everything, so its threshold is 0."""
        assert threshold(3, 3, 16, 16, 0.5, 0.3, 0.3, 0.0625, 4) == 0.0
        assert threshold(1, 1, 20, 20, 0.4, 0.3, 0.3, 1.0, 3) == 0.0

    def test_depth_one_threshold(self):
        """At k=1 the score magnitude is sqrt(lam) * mu * ell."""
        got = threshold(1, 2, 10, 12, 0.5, 0.3, 0.25, 0.25, 1)
        np.testing.assert_allclose(got, 0.5 * 0.25 * 10, rtol=1e-12)

    def test_depth_two_threshold(self):
        """lam=0.64, mu=0.3, ell=r=16, rho2=0.5, sigma2=0.3, k=2:
        0.8 * 0.3 * 16 * (15 * 15 * 0.15) = 129.6."""
        got = threshold(1, 2, 16, 16, 0.5, 0.3, 0.3, 0.64, 2)
        np.testing.assert_allclose(got, 129.6, rtol=1e-12)

    def test_round_past_schedule_rejected(self):
        with pytest.raises(ValueError):
            threshold(4, 3, 16, 16, 0.5, 0.3, 0.3, 0.0625, 2)


class TestRunAdaptive:
    def full_run(self):
        plan = make_plan(600, 600 * 180, three_level_quantized(), c_delta=7.0 / 9.0)
        tasks = sample_tasks(THREE_LEVEL, 600, np.random.default_rng(2))
        result = run_adaptive(tasks, CROWD, plan, rng=np.random.default_rng(3))
        return plan, tasks, result

    def test_classifies_everything_within_budget(self):
        """A feasible plan labels every task with spend close to, and never
        above, the budget."""
        plan, tasks, result = self.full_run()
        assert np.all(np.abs(result.labels) == 1)
        assert np.all(result.exit_t >= 1)
        assert result.spent <= plan.gamma
        assert result.spent >= 0.95 * plan.gamma
        assert result.error_rate(tasks.t) <= 0.03

    def test_harder_tasks_exit_later(self):
        """Mean exit round increases as task difficulty lam decreases."""
        _, tasks, result = self.full_run()
        means = [
            result.exit_t[np.isclose(tasks.lam, lam)].mean()
            for lam in (1.0, 0.25, 0.0625)
        ]
        assert means[0] < means[1] < means[2]

    def test_trace_is_consistent(self):
        """Sub-round traces chain: classifications remove tasks permanently
        and the cumulative budget column ends at the final spend."""
        plan, tasks, result = self.full_run()
        traces = result.traces
        assert traces[0].m_remaining == 600
        for prev, cur in zip(traces, traces[1:]):
            classified = prev.classified_pos + prev.classified_neg
            assert prev.deferred == prev.m_remaining - classified
            assert cur.m_remaining == prev.deferred
        budgets = [tr.budget_cum for tr in traces]
        assert budgets == sorted(budgets)
        assert budgets[-1] == result.spent

    def test_hard_cap_never_exceeded(self):
        """With an over-committed plan, the hard ledger truncates the final
        round instead of overrunning."""
        with pytest.warns(UserWarning):
            plan = make_plan(200, 200 * 60, three_level_quantized(), c_delta=7.0 / 9.0)
        for seed in range(10):
            tasks = sample_tasks(THREE_LEVEL, 200, np.random.default_rng(100 + seed))
            result = run_adaptive(tasks, CROWD, plan, rng=np.random.default_rng(200 + seed))
            assert result.spent <= plan.gamma
            assert np.all(np.abs(result.labels) == 1)

    def test_expected_mode_spend_in_expectation(self):
        """Without the hard cap the engine runs the schedule as planned; the
        average spend stays at or below a small margin over gamma."""
        gamma = 150 * 60
        with pytest.warns(UserWarning):
            plan = make_plan(150, gamma, three_level_quantized(), c_delta=7.0 / 9.0)
        ratios = []
        for seed in range(20):
            tasks = sample_tasks(THREE_LEVEL, 150, np.random.default_rng(300 + seed))
            ledger = BudgetLedger(gamma=gamma, mode="expected")
            result = run_adaptive(
                tasks, CROWD, plan, ledger=ledger, rng=np.random.default_rng(400 + seed)
            )
            assert np.all(np.abs(result.labels) == 1)
            ratios.append(result.spent / gamma)
        assert np.mean(ratios) <= 1.05

    def test_estimated_rho_tracks_oracle(self):
        """Thresholds from the estimated average difficulty reproduce at
        least 95% of the oracle run's labels."""
        plan = make_plan(900, 900 * 180, three_level_quantized(), c_delta=7.0 / 9.0)
        tasks = sample_tasks(THREE_LEVEL, 900, np.random.default_rng(4))
        oracle = run_adaptive(
            tasks, CROWD, plan, rho_mode="oracle", rng=np.random.default_rng(5)
        )
        estimated = run_adaptive(
            tasks, CROWD, plan, rho_mode="estimated", rng=np.random.default_rng(5)
        )
        agreement = np.mean(oracle.labels == estimated.labels)
        assert agreement >= 0.95
        assert oracle.error_rate(tasks.t) <= 0.05
        assert estimated.error_rate(tasks.t) <= 0.05

    def test_unknown_modes_rejected(self):
        plan = make_plan(50, 50 * 100, QuantizedPrior(lams=(1.0,), deltas=(1.0,)))
        tasks = sample_tasks(THREE_LEVEL, 50, np.random.default_rng(0))
        with pytest.raises(ValueError, match="rho_mode"):
            run_adaptive(tasks, CROWD, plan, rho_mode="guess")
        with pytest.raises(ValueError, match="final_mode"):
            run_adaptive(tasks, CROWD, plan, final_mode="pooled")


class TestRunNonadaptive:
    def test_matches_single_bin_adaptive_plan(self):
        """The baseline is literally a one-bin plan pushed through the same
        engine, so with the same seed the outputs are bit-identical."""
        tasks = sample_tasks(THREE_LEVEL, 120, np.random.default_rng(6))
        base = run_nonadaptive(tasks, CROWD, 9, rng=np.random.default_rng(7))
        quantized = QuantizedPrior(lams=(1.0,), deltas=(1.0,))
        plan = AdaptivePlan(
            gamma=9 * 120, m=120, c_delta=quantized.c_delta,
            quantized=quantized, ell=(9,), s=(1,),
        )
        direct = run_adaptive(
            tasks, CROWD, plan, final_mode="fresh", rng=np.random.default_rng(7)
        )
        np.testing.assert_array_equal(base.labels, direct.labels)
        np.testing.assert_array_equal(base.exit_t, direct.exit_t)
        assert base.spent == direct.spent

    def test_single_round_exits(self):
        tasks = sample_tasks(THREE_LEVEL, 80, np.random.default_rng(8))
        result = run_nonadaptive(tasks, CROWD, 5, rng=np.random.default_rng(9))
        assert np.all(result.exit_t == 1)
        assert np.all(result.exit_u == 1)
        assert result.spent == 5 * 80

    def test_below_barrier_recovers_nothing(self):
        """ell=6 with a weak crowd sits below the spectral barrier; the
        error stays near chance."""
        tasks = sample_tasks(HARD_MIX, 300, np.random.default_rng(0))
        result = run_nonadaptive(tasks, WEAK_CROWD, 6, rng=np.random.default_rng(1))
        assert result.error_rate(tasks.t) >= 0.3

    def test_above_barrier_recovers_most(self):
        """ell=20 with the stronger crowd is comfortably above the barrier."""
        tasks = sample_tasks(THREE_LEVEL, 300, np.random.default_rng(10))
        result = run_nonadaptive(tasks, CROWD, 20, rng=np.random.default_rng(11))
        assert result.error_rate(tasks.t) <= 0.25

    def test_degree_must_be_positive(self):
        tasks = sample_tasks(THREE_LEVEL, 10, np.random.default_rng(0))
        with pytest.raises(InfeasibleBudget):
            run_nonadaptive(tasks, CROWD, 0)


class TestMajorityVote:
    def graph(self, m, n, edges):
        ti = np.array([e[0] for e in edges])
        wi = np.array([e[1] for e in edges])
        a = np.array([e[2] for e in edges], dtype=np.int8)
        return ResponseGraph(m=m, n=n, ell=len(edges) // m, r=1,
                             task_idx=ti, worker_idx=wi, answers=a)

    def test_plurality_wins(self):
        """Answers (+1, +1, -1) vote to +1; (-1, -1, +1) to -1."""
        graph = self.graph(2, 3, [
            (0, 0, 1), (0, 1, 1), (0, 2, -1),
            (1, 0, -1), (1, 1, -1), (1, 2, 1),
        ])
        labels = majority_vote(graph, np.random.default_rng(0))
        np.testing.assert_array_equal(labels, [1, -1])

    def test_tie_resolved_by_coin(self):
        graph = self.graph(1, 2, [(0, 0, 1), (0, 1, -1)])
        flips = [majority_vote(graph, np.random.default_rng(s))[0] for s in range(400)]
        frac = np.mean(np.array(flips) == 1)
        assert 0.4 <= frac <= 0.6

    def test_unanswered_task_rejected(self):
        graph = self.graph(2, 2, [(0, 0, 1), (0, 1, 1)])
        with pytest.raises(NoAnswers):
            majority_vote(graph, np.random.default_rng(0))


class TestSavedOutputs:
    def small_run(self):
        plan = make_plan(60, 60 * 100, QuantizedPrior(lams=(1.0,), deltas=(1.0,)))
        tasks = sample_tasks(THREE_LEVEL, 60, np.random.default_rng(12))
        return run_adaptive(tasks, CROWD, plan, rng=np.random.default_rng(13))

    def test_trace_file_layout(self, tmp_path):
        result = self.small_run()
        path = tmp_path / "trace.csv"
        save_trace(result.traces, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "#schema=1"
        assert lines[1].split(",") == TRACE_COLUMNS
        assert len(lines) == 2 + len(result.traces)

    def test_result_file_round_trips_labels(self, tmp_path):
        result = self.small_run()
        path = tmp_path / "labels.csv"
        save_result(result, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "#schema=1"
        assert lines[1] == f"#spent={result.spent}"
        rows = list(csv.reader(lines[2:]))
        assert rows[0] == ["task_id", "label", "exit_t", "exit_u"]
        got = np.array([int(r[1]) for r in rows[1:]])
        np.testing.assert_array_equal(got, result.labels)
