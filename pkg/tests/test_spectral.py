"""Non-backtracking operator, its spectrum, and the average-difficulty estimator."""

import numpy as np
import pytest

from crowdlabel.assign import ResponseGraph, collect, regular_random_graph
from crowdlabel.model import TaskPrior, WorkerPrior, sample_tasks, task_stats
from crowdlabel.mp import sweep
from crowdlabel.spectral import (
    NoConvergence,
    barrier_check,
    build_nonbacktracking,
    estimate_rho2,
    save_spectrum,
    spectrum,
)


def _collected(m, ell, r, seed, sigma2=0.3, qs=(0.6, 0.8, 1.0)):
    rng = np.random.default_rng(seed)
    prior = TaskPrior.discrete([(q, 1 / len(qs)) for q in qs])
    pool = sample_tasks(prior, m, rng)
    shape = regular_random_graph(m, ell, r, rng)
    return collect(shape, pool, WorkerPrior.spammer_hammer(sigma2), rng), pool


def _unanimous(m, ell, r):
    shape = regular_random_graph(m, ell, r, np.random.default_rng(0))
    return ResponseGraph(m=m, n=shape.n, ell=ell, r=r, task_idx=shape.task_idx,
                         worker_idx=shape.worker_idx,
                         answers=np.ones(shape.n_edges))


class TestBuildNonBacktracking:
    def test_smallest_instance_shape(self):
        """m=n=2, ell=r=2 gives an 8x8 operator with at most 2 entries per row."""
        graph, _ = _collected(2, 2, 2, seed=0)
        nb = build_nonbacktracking(graph)
        assert nb.dim == 8
        row_counts = np.diff(nb.matrix.indptr)
        assert row_counts.max() <= 2

    def test_entries_are_answers(self):
        """Every stored value equals the answer on the continuing edge."""
        graph, _ = _collected(6, 3, 3, seed=1)
        nb = build_nonbacktracking(graph)
        assert set(np.unique(nb.matrix.data)) <= {-1.0, 1.0}
        row_counts = np.diff(nb.matrix.indptr)
        assert row_counts.max() <= (graph.ell - 1) + (graph.r - 1)

    def test_apply_equals_message_sweep(self):
        """B acting on all-ones equals one interleaved message update."""
        graph, _ = _collected(9, 3, 3, seed=2)
        nb = build_nonbacktracking(graph)
        v = np.ones(2 * graph.n_edges)
        np.testing.assert_allclose(nb.matrix @ v, sweep(graph, v), atol=1e-12)


class TestSpectrum:
    def test_unanimous_top_eigenvalue_exact(self):
        """All-agree answers give top eigenvalue sqrt((ell-1)(r-1)) exactly."""
        graph = _unanimous(4, 4, 4)
        report = spectrum(build_nonbacktracking(graph), mode="full", sigma2=1.0,
                          rho2=1.0)
        np.testing.assert_allclose(report.top_pair_magnitude, 3.0, atol=1e-9)

    def test_companion_matches_dense_with_remainder_worker(self):
        """The quadratic-eigenvalue shortcut agrees with brute-force eigvals.

        The instance has parallel edges and a short remainder worker, the two
        cases where index bookkeeping can silently go wrong.
        """
        graph, _ = _collected(5, 4, 3, seed=3)
        nb = build_nonbacktracking(graph)
        fast = spectrum(nb, mode="full", sigma2=0.3).eigenvalues
        brute = np.linalg.eigvals(nb.matrix.toarray())
        np.testing.assert_allclose(
            np.sort_complex(np.round(fast, 8)), np.sort_complex(np.round(brute, 8)),
            atol=1e-6)

    def test_above_barrier_separation(self):
        """Above the barrier the top pair is real, split +/-, and clears the bulk."""
        graph, pool = _collected(100, 15, 15, seed=4)
        report = spectrum(build_nonbacktracking(graph), mode="full", sigma2=0.3,
                          rho2=float(pool.lam.mean()))
        eigs = report.eigenvalues
        order = np.argsort(-np.abs(eigs))
        top2 = eigs[order[:2]]
        assert np.all(np.abs(top2.imag) < 1e-8)
        assert top2.real.max() > 0 > top2.real.min()
        np.testing.assert_allclose(abs(top2[0]), abs(top2[1]), rtol=0.05)
        assert report.top_pair_magnitude > report.bulk_radius
        np.testing.assert_allclose(report.predicted_bulk, 196**0.25, rtol=1e-12)

    def test_power_mode_matches_full(self):
        graph, pool = _collected(60, 10, 10, seed=5)
        nb = build_nonbacktracking(graph)
        full = spectrum(nb, mode="full", sigma2=0.3)
        power = spectrum(nb, mode="power", sigma2=0.3, rng=np.random.default_rng(0))
        np.testing.assert_allclose(power.top_pair_magnitude,
                                   full.top_pair_magnitude, rtol=1e-5)
        assert power.eigenvalues is None

    def test_power_mode_iteration_cap(self):
        graph, _ = _collected(30, 5, 5, seed=6)
        nb = build_nonbacktracking(graph)
        with pytest.raises(NoConvergence):
            spectrum(nb, mode="power", sigma2=0.3, rng=np.random.default_rng(0),
                     max_iter=2)

    def test_csv_dump(self, tmp_path):
        graph, _ = _collected(10, 3, 3, seed=7)
        report = spectrum(build_nonbacktracking(graph), mode="full", sigma2=0.3)
        path = tmp_path / "spec.csv"
        save_spectrum(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "#schema=1"
        assert lines[2] == "re,im"
        assert len(lines) == 3 + 2 * graph.n_edges


class TestEstimateRho2:
    def test_rank_one_exact(self):
        """One worker, unanimous answers: sigma1 = sqrt(r), estimate exactly 1."""
        graph = _unanimous(5, 1, 5)
        est = estimate_rho2(graph, sigma2=1.0, rng=np.random.default_rng(0))
        np.testing.assert_allclose(est.sigma1, np.sqrt(5), rtol=1e-9)
        np.testing.assert_allclose(est.raw, 1.0, rtol=1e-9)

    def test_ds_limit(self):
        """Perfect workers on max-difficulty tasks estimate rho2 = 1 closely."""
        rng = np.random.default_rng(8)
        prior = TaskPrior.discrete([(1.0, 0.5), (0.0, 0.5)])
        pool = sample_tasks(prior, 100, rng)
        shape = regular_random_graph(100, 10, 10, rng)
        graph = collect(shape, pool, WorkerPrior.discrete([(1.0, 1.0)]), rng)
        est = estimate_rho2(graph, sigma2=1.0, rng=rng)
        assert abs(est.clamped - 1.0) <= 0.05

    def test_clamping(self):
        """Raw estimates above 1 are reported but clamped for downstream use."""
        graph = _unanimous(3, 2, 2)  # tiny unanimous instance inflates sigma1
        est = estimate_rho2(graph, sigma2=0.1, rng=np.random.default_rng(0))
        assert est.raw > 1.0
        assert est.clamped == 1.0

    def test_concentration_improves_with_size(self):
        """Spread over seeds must not grow when m doubles."""
        def spread(m, seeds):
            vals = []
            for seed in seeds:
                graph, pool = _collected(m, 15, 15, seed=seed)
                est = estimate_rho2(graph, sigma2=0.3,
                                    rng=np.random.default_rng(seed + 100))
                vals.append(est.raw)
            return np.std(vals)

        assert spread(2000, range(6)) <= spread(1000, range(6)) + 0.01


class TestBarrierCheck:
    def test_worked_margins(self):
        """(ell-1)(r-1)(rho2 sigma2)^2 brackets 1 between ell=11 and 12."""
        below = barrier_check(11, 11, 1.4 / 3, 0.2)
        above = barrier_check(12, 12, 1.4 / 3, 0.2)
        np.testing.assert_allclose(below.margin, 0.8711, atol=2e-4)
        np.testing.assert_allclose(above.margin, 1.0540, atol=2e-4)
        assert not below.above
        assert above.above

    def test_boundary_is_strict(self):
        check = barrier_check(2, 2, 1.0, 1.0)
        assert check.margin == 1.0
        assert not check.above

    def test_wide_margin(self):
        check = barrier_check(15, 15, 1.4 / 3, 0.3)
        np.testing.assert_allclose(check.margin, 3.8416, atol=1e-4)
        assert check.above
