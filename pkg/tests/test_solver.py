import dataclasses

import numpy as np
import pytest

from finom import dense, kernel1d, mesh, solver
from finom.errors import (
    ConfigError,
    DimensionMismatch,
    InvalidEpsilon,
    NonFiniteIterate,
    SizeCapExceeded,
    ZeroDenominator,
)
from finom.mesh import Measure, Mesh1D, Problem


def random_problem(n, m, seed):
    x = mesh.random_sorted_nodes(n, seed)
    y = mesh.random_sorted_nodes(m, seed + 1000)
    u = mesh.random_measure(n, seed + 2000)
    v = mesh.random_measure(m, seed + 3000)
    return x, y, u, v


def gaussian_measure(nodes, center, width2):
    w = np.exp(-(nodes - center) ** 2 / width2)
    return Measure(w / w.sum())


def dense_matrix(x, y, eps):
    return np.exp(-np.abs(np.subtract.outer(x.nodes, y.nodes)) / eps)


def rel_inf(a, b):
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def col_defect(plan, weights):
    return float(np.sum(np.abs(plan.sum(axis=0) - weights)))


def row_defect(plan, weights):
    return float(np.sum(np.abs(plan.sum(axis=1) - weights)))


def solve_both(x, y, u, v, cfg):
    fast = solver.sinkhorn_1d(x, y, u, v, cfg)
    ref = dense.dense_sinkhorn(Problem(source=x, target=y, u=u, v=v), cfg)
    return fast, ref


class TestConfig:
    def test_defaults(self):
        cfg = solver.SolverConfig(epsilon=0.5)
        assert cfg.itr_max == 1000
        assert cfg.tol == 1e-9
        assert cfg.stabilize is False
        assert cfg.absorb_threshold == 200.0
        assert cfg.check_every == 1
        assert cfg.plan_cap == 10**8

    @pytest.mark.parametrize("eps", [0.0, -1.0, np.nan, np.inf])
    def test_bad_epsilon(self, eps):
        with pytest.raises(InvalidEpsilon):
            solver.SolverConfig(epsilon=eps)

    def test_bad_itr_max(self):
        with pytest.raises(ConfigError):
            solver.SolverConfig(epsilon=1.0, itr_max=0)

    def test_bad_tol(self):
        with pytest.raises(ConfigError):
            solver.SolverConfig(epsilon=1.0, tol=-1e-9)
        with pytest.raises(ConfigError):
            solver.SolverConfig(epsilon=1.0, tol=np.nan)

    def test_zero_tol_is_benchmark_mode(self):
        # fixed-iteration runs disable the stopping rule entirely
        cfg = solver.SolverConfig(epsilon=1.0, tol=0.0)
        assert cfg.tol == 0.0

    def test_bad_absorb_threshold(self):
        with pytest.raises(ConfigError):
            solver.SolverConfig(epsilon=1.0, absorb_threshold=1.0)
        with pytest.raises(ConfigError):
            solver.SolverConfig(epsilon=1.0, absorb_threshold=np.inf)

    def test_bad_check_every(self):
        with pytest.raises(ConfigError):
            solver.SolverConfig(epsilon=1.0, check_every=0)

    def test_bad_plan_cap(self):
        with pytest.raises(ConfigError):
            solver.SolverConfig(epsilon=1.0, plan_cap=0)

    def test_frozen(self):
        cfg = solver.SolverConfig(epsilon=1.0)
        with pytest.raises(dataclasses.FrozenInstanceError):
            cfg.tol = 0.5


class TestDimensions:
    def test_weight_count_mismatch(self):
        x, y, u, v = random_problem(10, 12, 0)
        cfg = solver.SolverConfig(epsilon=0.1)
        with pytest.raises(DimensionMismatch):
            solver.sinkhorn_1d(x, y, mesh.random_measure(11, 4), v, cfg)
        with pytest.raises(DimensionMismatch):
            solver.sinkhorn_1d(x, y, u, mesh.random_measure(13, 4), cfg)


class TestSelfTransport:
    def test_feasible_and_converged(self):
        x = mesh.chebyshev_nodes(60)
        u = mesh.random_measure(60, seed=1)
        cfg = solver.SolverConfig(epsilon=0.05, itr_max=20000, tol=1e-10)
        sol = solver.sinkhorn_1d(x, x, u, u, cfg)
        assert sol.converged
        assert sol.marginal_error_history[-1][1] <= cfg.tol
        plan = solver.plan_dense(sol)
        assert np.all(plan >= 0)
        # the stopping rule bounds the column defect of the entering
        # iterate; the exit state sits within a small multiple of tol,
        # and its row marginal is exact up to rounding because the phi
        # update is the last half-sweep
        assert col_defect(plan, u.weights) <= 2 * cfg.tol
        assert row_defect(plan, u.weights) <= 1e-13


class TestConvergence:
    def test_converges_on_random_instance(self):
        x, y, u, v = random_problem(40, 55, 3)
        cfg = solver.SolverConfig(epsilon=0.05, itr_max=20000, tol=1e-11)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        assert sol.converged
        assert sol.iterations_run < cfg.itr_max
        its = [it for it, _ in sol.marginal_error_history]
        assert its == sorted(its) and len(set(its)) == len(its)
        assert sol.marginal_error_history[-1][1] <= cfg.tol
        assert np.all(sol.phi > 0) and np.all(np.isfinite(sol.phi))
        assert np.all(sol.psi > 0) and np.all(np.isfinite(sol.psi))

    def test_iteration_cap(self):
        x, y, u, v = random_problem(30, 30, 4)
        cfg = solver.SolverConfig(epsilon=0.01, itr_max=3, tol=1e-15)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        assert not sol.converged
        assert sol.iterations_run == 3
        assert [it for it, _ in sol.marginal_error_history] == [1, 2, 3]

    def test_check_every_cadence(self):
        x, y, u, v = random_problem(30, 30, 4)
        cfg = solver.SolverConfig(epsilon=0.01, itr_max=20, tol=0.0,
                                  check_every=7)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        # the final iteration is always recorded on top of the cadence
        assert [it for it, _ in sol.marginal_error_history] == [7, 14, 20]

    def test_final_error_recorded_off_cadence(self):
        x, y, u, v = random_problem(40, 55, 3)
        cfg = solver.SolverConfig(epsilon=0.05, itr_max=20000, tol=1e-11,
                                  check_every=10)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        assert sol.converged
        assert sol.marginal_error_history[-1][0] == sol.iterations_run
        assert sol.marginal_error_history[-1][1] <= cfg.tol
        for it, _ in sol.marginal_error_history[:-1]:
            assert it % 10 == 0


class TestMarginalError:
    def test_first_record_is_entry_iterate(self):
        # the error reported for iteration 1 belongs to the initial
        # vectors phi = psi = (1/n) ones, recomputed here densely
        x, y, u, v = random_problem(40, 55, 3)
        K = dense_matrix(x, y, 0.1)
        phi0 = np.full(40, 1.0 / 40)
        psi0 = np.full(55, 1.0 / 40)
        want = float(np.sum(np.abs(psi0 * (phi0 @ K) - v.weights)))
        cfg = solver.SolverConfig(epsilon=0.1, itr_max=3, tol=0.0)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        it, err = sol.marginal_error_history[0]
        assert it == 1
        assert abs(err - want) <= 1e-12

    def test_fixed_point_is_exactly_zero(self):
        x, y, u, v = random_problem(20, 25, 6)
        op = kernel1d.build_operator(x, y, 0.3)
        phi = np.linspace(0.5, 2.0, 20)
        t = op.apply_transpose(phi)
        psi = v.weights / t
        state = solver.SolverState(phi=phi, psi=psi)
        # target built as psi * t, so the defect cancels bitwise
        target = psi * t
        assert solver.marginal_error(state, op, target) == 0.0

    def test_zero_vectors_give_total_mass(self):
        x, y, _, _ = random_problem(64, 64, 7)
        op = kernel1d.build_operator(x, y, 0.3)
        state = solver.SolverState(phi=np.zeros(64), psi=np.zeros(64))
        v = Measure(np.full(64, 1.0 / 64))
        assert solver.marginal_error(state, op, v) == 1.0

    def test_mid_run_matches_dense(self):
        x, y, u, v = random_problem(50, 45, 8)
        cfg = solver.SolverConfig(epsilon=0.08, itr_max=7, tol=0.0)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        state = solver.SolverState(phi=sol.phi, psi=sol.psi)
        got = solver.marginal_error(state, sol.kernel, v)
        K = dense_matrix(x, y, 0.08)
        want = float(np.sum(np.abs(sol.psi * (sol.phi @ K) - v.weights)))
        assert abs(got - want) <= 1e-12 * max(want, 1.0)


class TestPlanDense:
    def test_zero_iteration_state_is_scaled_kernel(self):
        x, y, u, v = random_problem(18, 24, 9)
        op = kernel1d.build_operator(x, y, 0.2)
        cfg = solver.SolverConfig(epsilon=0.2)
        sol = solver.Solution(
            phi=np.full(18, 1.0 / 18), psi=np.full(24, 1.0 / 18),
            a=np.zeros(18), b=np.zeros(24), kernel=op,
            iterations_run=0, converged=False, marginal_error_history=[],
            wall_time=0.0, setup_time=0.0, cost=np.nan, config=cfg)
        plan = solver.plan_dense(sol)
        want = dense_matrix(x, y, 0.2) / (18 * 18)
        assert rel_inf(plan, want) <= 1e-14

    def test_plan_cap(self):
        x, y, u, v = random_problem(4, 4, 10)
        cfg = solver.SolverConfig(epsilon=0.2, itr_max=5, tol=0.0,
                                  plan_cap=15)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        with pytest.raises(SizeCapExceeded):
            solver.plan_dense(sol)

    def test_converged_plan_marginals(self):
        x, y, u, v = random_problem(40, 55, 3)
        cfg = solver.SolverConfig(epsilon=0.05, itr_max=20000, tol=1e-11)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        plan = solver.plan_dense(sol)
        assert np.all(plan >= 0)
        assert col_defect(plan, v.weights) <= 2 * cfg.tol
        assert row_defect(plan, u.weights) <= 1e-12


class TestDenseParity:
    """The fast matvec is exact, so fast and dense runs must agree
    iterate-for-iterate, not merely at convergence."""

    def test_fixed_iterations_chebyshev(self):
        x = mesh.chebyshev_nodes(120)
        y = mesh.chebyshev_nodes(120)
        u = mesh.random_measure(120, seed=11)
        v = mesh.random_measure(120, seed=12)
        cfg = solver.SolverConfig(epsilon=0.01, itr_max=400, tol=0.0)
        fast, ref = solve_both(x, y, u, v, cfg)
        assert fast.iterations_run == ref.iterations_run == 400
        assert rel_inf(fast.phi, ref.phi) <= 1e-12
        assert rel_inf(fast.psi, ref.psi) <= 1e-12
        fr = dense.frobenius_diff(solver.plan_dense(fast),
                                  solver.plan_dense(ref))
        assert fr <= 1e-12
        assert [it for it, _ in fast.marginal_error_history] == \
               [it for it, _ in ref.marginal_error_history]
        for (_, ea), (_, eb) in zip(fast.marginal_error_history,
                                    ref.marginal_error_history):
            assert abs(ea - eb) <= 1e-12

    def test_converged_random_nodes(self):
        x, y, u, v = random_problem(90, 110, 13)
        cfg = solver.SolverConfig(epsilon=0.05, itr_max=20000, tol=1e-11)
        fast, ref = solve_both(x, y, u, v, cfg)
        assert fast.converged and ref.converged
        assert fast.iterations_run == ref.iterations_run
        fr = dense.frobenius_diff(solver.plan_dense(fast),
                                  solver.plan_dense(ref))
        assert fr <= 1e-12
        assert abs(fast.cost - ref.cost) <= 1e-10 * max(abs(ref.cost), 1e-300)

    def test_stabilized_runs_stay_in_lockstep(self):
        # a low threshold forces repeated absorptions; both adapters
        # receive the same shift vectors, so parity must survive them
        x, y, u, v = random_problem(40, 55, 3)
        cfg = solver.SolverConfig(epsilon=0.05, itr_max=20000, tol=1e-11,
                                  stabilize=True, absorb_threshold=1.5)
        fast, ref = solve_both(x, y, u, v, cfg)
        assert fast.iterations_run == ref.iterations_run
        assert np.any(fast.a != 0)
        assert np.any(ref.a != 0)
        assert rel_inf(fast.a, ref.a) <= 1e-10
        assert rel_inf(fast.b, ref.b) <= 1e-10
        fr = dense.frobenius_diff(solver.plan_dense(fast),
                                  solver.plan_dense(ref))
        assert fr <= 1e-12


class TestStabilization:
    def test_matches_unstabilized_when_both_converge(self):
        x, y, u, v = random_problem(40, 55, 3)
        base = dict(epsilon=0.05, itr_max=20000, tol=1e-11)
        plain = solver.sinkhorn_1d(x, y, u, v, solver.SolverConfig(**base))
        stab = solver.sinkhorn_1d(x, y, u, v, solver.SolverConfig(
            stabilize=True, absorb_threshold=1.5, **base))
        assert np.any(stab.a != 0)
        fr = dense.frobenius_diff(solver.plan_dense(plain),
                                  solver.plan_dense(stab))
        assert fr <= 1e-10

    def test_matches_unstabilized_fixed_iterations(self):
        x, y, u, v = random_problem(40, 55, 3)
        base = dict(epsilon=0.05, itr_max=800, tol=0.0)
        plain = solver.sinkhorn_1d(x, y, u, v, solver.SolverConfig(**base))
        stab = solver.sinkhorn_1d(x, y, u, v, solver.SolverConfig(
            stabilize=True, absorb_threshold=1.5, **base))
        fr = dense.frobenius_diff(solver.plan_dense(plain),
                                  solver.plan_dense(stab))
        assert fr <= 1e-10

    def test_small_epsilon_rescue(self):
        # concentrated measures at eps = 0.001 blow the scalings past
        # e^200 within a few hundred sweeps; absorption must fire and
        # the run must stay finite with a tiny final defect
        x = mesh.random_sorted_nodes(300, seed=7)
        y = mesh.random_sorted_nodes(300, seed=8)
        u = gaussian_measure(x.nodes, 0.3, 0.001)
        v = gaussian_measure(y.nodes, 0.7, 0.001)
        cfg = solver.SolverConfig(epsilon=0.001, itr_max=2000, tol=0.0,
                                  stabilize=True)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        assert np.all(np.isfinite(sol.phi)) and np.all(np.isfinite(sol.psi))
        assert np.any(sol.a != 0)
        assert sol.marginal_error_history[-1][1] < 1e-6

    def test_zero_mass_entries_survive_absorption(self):
        # a dead stretch in u has no scaling information of its own;
        # the absorbed shifts there are interpolated, which keeps the
        # rebuilt ratio and edge arrays finite while the plan rows stay
        # exactly zero
        x = mesh.random_sorted_nodes(80, seed=21)
        y = mesh.random_sorted_nodes(90, seed=22)
        uw = np.abs(np.random.default_rng(5).normal(size=80))
        uw[30:45] = 0.0
        u = Measure(uw / uw.sum())
        v = mesh.random_measure(90, seed=23)
        cfg = solver.SolverConfig(epsilon=0.02, itr_max=4000, tol=1e-11,
                                  stabilize=True, absorb_threshold=1.2)
        fast, ref = solve_both(x, y, u, v, cfg)
        assert fast.converged and ref.converged
        assert fast.iterations_run == ref.iterations_run
        assert np.any(fast.a != 0)
        op = fast.kernel
        for rep in (op.lower, op.upper, op.t_lower, op.t_upper):
            assert np.all(np.isfinite(rep.ratios))
            assert np.all(np.isfinite(rep.edge_values))
        plan = solver.plan_dense(fast)
        assert np.all(plan[30:45] == 0.0)
        fr = dense.frobenius_diff(plan, solver.plan_dense(ref))
        assert fr <= 1e-12


class TestTruncationReadout:
    def test_absorption_keeps_materialization_faithful(self):
        # Wide, well-separated measures at eps = 0.001: the recurrence
        # matvec folds the scalings in before anything can underflow,
        # so both runs reach the same fixed point (gauge-equivalent
        # scaling vectors).  Materializing the plan is another matter:
        # without absorption the kernel is realized entrywise and every
        # entry with c/eps beyond ~745 flushes to zero, silently
        # dropping the plan mass riding on those entries.  With the
        # shifts absorbed the realized exponents stay representable.
        x = mesh.random_sorted_nodes(400, seed=11)
        y = mesh.random_sorted_nodes(400, seed=12)
        u = gaussian_measure(x.nodes, 0.25, 0.005)
        v = gaussian_measure(y.nodes, 0.75, 0.005)
        base = dict(epsilon=0.001, itr_max=4000, tol=0.0)
        plain = solver.sinkhorn_1d(x, y, u, v, solver.SolverConfig(**base))
        stab = solver.sinkhorn_1d(x, y, u, v, solver.SolverConfig(
            stabilize=True, **base))
        assert np.any(stab.a != 0)

        gauge = np.log(plain.phi) - (np.log(stab.phi) + stab.a / 0.001)
        assert gauge.max() - gauge.min() <= 1e-11

        plan_plain = solver.plan_dense(plain)
        plan_stab = solver.plan_dense(stab)
        assert col_defect(plan_stab, v.weights) <= 1e-13
        assert col_defect(plan_plain, v.weights) > 1e-5
        assert dense.frobenius_diff(plan_plain, plan_stab) > 1e-6


class TestTransportCost:
    def test_single_cell_plan_pays_the_distance(self):
        x, y = Mesh1D(np.array([0.2])), Mesh1D(np.array([0.9]))
        op = kernel1d.build_operator(x, y, 0.7)
        k = op.dense_realization()[0, 0]
        cfg = solver.SolverConfig(epsilon=0.7)
        sol = solver.Solution(
            phi=np.array([1.0 / k]), psi=np.array([1.0]),
            a=np.zeros(1), b=np.zeros(1), kernel=op,
            iterations_run=0, converged=False, marginal_error_history=[],
            wall_time=0.0, setup_time=0.0, cost=np.nan, config=cfg)
        assert abs(solver.transport_cost_fast(sol) - 0.7) <= 1e-12

    def test_point_mass_on_two_point_problem(self):
        x = Mesh1D(np.array([0.1, 0.4]))
        y = Mesh1D(np.array([0.25, 0.8]))
        op = kernel1d.build_operator(x, y, 0.5)
        k = op.dense_realization()
        cfg = solver.SolverConfig(epsilon=0.5)
        # factors zeroed outside cell (1, 0): the plan is a unit point
        # mass there and the objective reduces to |x_1 - y_0|
        sol = solver.Solution(
            phi=np.array([0.0, 1.0 / k[1, 0]]), psi=np.array([1.0, 0.0]),
            a=np.zeros(2), b=np.zeros(2), kernel=op,
            iterations_run=0, converged=False, marginal_error_history=[],
            wall_time=0.0, setup_time=0.0, cost=np.nan, config=cfg)
        want = abs(x.nodes[1] - y.nodes[0])
        assert abs(solver.transport_cost_fast(sol) - want) <= 1e-12

    @pytest.mark.parametrize("n,m,seed,eps", [
        (40, 55, 3, 0.05),
        (64, 64, 14, 0.1),
        (35, 70, 15, 0.02),
    ])
    def test_matches_dense_objective(self, n, m, seed, eps):
        x, y, u, v = random_problem(n, m, seed)
        cfg = solver.SolverConfig(epsilon=eps, itr_max=20000, tol=1e-10)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        plan = solver.plan_dense(sol)
        cost = np.abs(np.subtract.outer(x.nodes, y.nodes))
        want = dense.transport_cost_dense(plan, cost)
        assert abs(sol.cost - want) <= 1e-10 * max(abs(want), 1e-300)

    def test_matches_dense_objective_after_absorption(self):
        x, y, u, v = random_problem(40, 55, 3)
        cfg = solver.SolverConfig(epsilon=0.05, itr_max=20000, tol=1e-11,
                                  stabilize=True, absorb_threshold=1.5)
        sol = solver.sinkhorn_1d(x, y, u, v, cfg)
        assert np.any(sol.a != 0)
        plan = solver.plan_dense(sol)
        cost = np.abs(np.subtract.outer(x.nodes, y.nodes))
        want = dense.transport_cost_dense(plan, cost)
        assert abs(sol.cost - want) <= 1e-10 * max(abs(want), 1e-300)

    def test_self_transport_cost_shrinks_with_epsilon(self):
        x = mesh.chebyshev_nodes(50)
        u = mesh.random_measure(50, seed=9)
        costs = []
        for eps in (0.05, 0.01):
            # the eps = 0.01 leg needs ~27k sweeps to reach 1e-10
            cfg = solver.SolverConfig(epsilon=eps, itr_max=40000, tol=1e-10)
            sol = solver.sinkhorn_1d(x, x, u, u, cfg)
            assert sol.converged
            plan = solver.plan_dense(sol)
            cost = np.abs(np.subtract.outer(x.nodes, x.nodes))
            want = dense.transport_cost_dense(plan, cost)
            assert abs(sol.cost - want) <= 1e-10 * max(abs(want), 1e-300)
            costs.append(sol.cost)
        assert 0 < costs[1] < costs[0]


class TestSymmetry:
    def test_swapped_problem_costs_agree(self):
        x, y, u, v = random_problem(45, 60, 16)
        cfg = solver.SolverConfig(epsilon=0.05, itr_max=20000, tol=1e-11)
        fwd = solver.sinkhorn_1d(x, y, u, v, cfg)
        bwd = solver.sinkhorn_1d(y, x, v, u, cfg)
        assert fwd.converged and bwd.converged
        assert abs(fwd.cost - bwd.cost) <= 1e-10 * max(abs(fwd.cost), 1e-300)


class TestFailureDiagnostics:
    def test_zero_denominator_on_unreachable_target(self):
        # the second target node is 50 units away at eps = 0.01, so its
        # whole kernel column underflows to zero on the first sweep
        x = Mesh1D(np.array([0.0, 0.5]))
        y = Mesh1D(np.array([0.0, 50.0]))
        u = Measure(np.array([0.5, 0.5]))
        v = Measure(np.array([0.5, 0.5]))
        cfg = solver.SolverConfig(epsilon=0.01, itr_max=10, tol=0.0)
        with pytest.raises(ZeroDenominator) as info:
            solver.sinkhorn_1d(x, y, u, v, cfg)
        assert "stabilization" in str(info.value)

    def test_non_finite_iterate_on_denormal_kernel(self):
        # exp(-713) is denormal but nonzero; dividing unit mass by it
        # overflows the scaling update to inf
        x = Mesh1D(np.array([0.0]))
        y = Mesh1D(np.array([713.0]))
        one = Measure(np.array([1.0]))
        cfg = solver.SolverConfig(epsilon=1.0, itr_max=10, tol=0.0)
        with pytest.raises(NonFiniteIterate) as info:
            solver.sinkhorn_1d(x, y, one, one, cfg)
        assert "stabilization" in str(info.value)
