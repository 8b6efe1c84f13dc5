import math

import numpy as np
import pytest
from conftest import sample_two_user, system_from_two_user

from bacnoma import (
    BBConfig,
    Rectangle,
    SolveStatus,
    SystemInstance,
    bb_solve,
    is_feasible,
    oma_profile,
    profile_from_reflection,
    rect_bounds,
    sca_feasibility,
    solve_two_user,
    sra_feasibility,
    total_power,
)
from bacnoma.channel import ScenarioConfig, sample_instance

LOG2 = math.log(2.0)
FIX = SystemInstance(np.array([[4.0, 0.0], [1.0, 1.0]]), LOG2)


def random_instance(seed, m=3, rate=1.5):
    return sample_instance(ScenarioConfig(num_users=m, target_rate=rate), np.random.default_rng(seed))


class TestRectangles:
    def test_split_longest_edge(self):
        r = Rectangle(np.array([0.0, 0.0]), np.array([1.0, 4.0]))
        a, b = r.split()
        np.testing.assert_array_equal(a.hi, [1.0, 2.0])
        np.testing.assert_array_equal(b.lo, [0.0, 2.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            Rectangle(np.array([1.0]), np.array([0.0]))

    def test_bounds_feasible_box(self):
        inst = SystemInstance(np.array([[10.0]]), LOG2)
        rect = Rectangle(np.array([0.0]), np.array([1.0]))
        lo, up, out = rect_bounds(inst, rect, sra_feasibility, delta=99.0)
        assert (lo, up) == (0.0, 1.0)
        assert out.feasible

    def test_bounds_infeasible_box_collapse_to_sentinel(self):
        inst = SystemInstance(np.array([[10.0]]), 5.0)
        rect = Rectangle(np.array([0.0]), np.array([1.0]))  # needs ~14.7
        lo, up, out = rect_bounds(inst, rect, sra_feasibility, delta=99.0)
        assert (lo, up) == (99.0, 99.0)
        assert not out.feasible

    def test_bounds_degenerate_point(self):
        inst = SystemInstance(np.array([[10.0]]), LOG2)
        p = np.array([0.2])
        lo, up, _ = rect_bounds(inst, Rectangle(p, p), sra_feasibility, delta=99.0)
        assert lo == up == pytest.approx(0.2)


class TestSraFeasibility:
    def test_baseline_diag_accepted_with_zero_reflection(self):
        for seed in range(5):
            inst = random_instance((10, seed), m=4)
            out = sra_feasibility(inst, np.diag(oma_profile(inst).p))
            assert out.feasible
            np.testing.assert_array_equal(out.eta, 0.0)

    def test_zero_diag_rejected(self):
        inst = random_instance(11)
        out = sra_feasibility(inst, np.zeros(inst.num_users))
        assert not out.feasible

    def test_full_reflection_vertex(self):
        # at the closed-form full-reflection optimum the weak user needs eta = 1
        r = math.sqrt(2.0) - 1.0
        out = sra_feasibility(FIX, np.array([r, r]))
        assert out.feasible
        assert out.eta[1, 0] == pytest.approx(1.0, abs=1e-9)
        assert out.work > 0

    def test_witness_is_always_feasible(self):
        rng = np.random.default_rng(12)
        for seed in range(10):
            inst = random_instance((12, seed), m=4)
            diag = np.diag(oma_profile(inst).p) * rng.uniform(0.3, 1.5, inst.num_users)
            out = sra_feasibility(inst, diag)
            if out.feasible:
                prof = profile_from_reflection(diag, out.eta)
                assert is_feasible(inst, prof)


class TestScaFeasibility:
    def test_accepts_zero_reflection_vertices(self):
        inst = random_instance(13, m=3)
        diag = np.diag(oma_profile(inst).p)
        out = sca_feasibility(inst, diag)
        assert out.feasible and out.work == 0

    def test_zero_diag_rejected(self):
        inst = random_instance(14, m=3)
        assert not sca_feasibility(inst, np.zeros(3)).feasible

    def test_witness_verified_when_accepted(self):
        rng = np.random.default_rng(15)
        accepted = rejected = 0
        for seed in range(8):
            inst = random_instance((15, seed), m=3)
            diag = np.diag(oma_profile(inst).p) * rng.uniform(0.5, 1.2, 3)
            out = sca_feasibility(inst, diag)
            if out.feasible:
                accepted += 1
                assert is_feasible(inst, profile_from_reflection(diag, out.eta), rate_tol=1e-7)
            else:
                rejected += 1
        assert accepted > 0  # the batch must actually exercise the accept path


class TestBranchAndBound:
    def test_single_user_bisection(self):
        inst = SystemInstance(np.array([[2.0]]), 1.0)
        rep = bb_solve(inst, BBConfig(xi=1e-6))
        assert rep.status is SolveStatus.CONVERGED
        assert rep.objective == pytest.approx((math.e - 1.0) / 2.0, abs=1e-5)
        assert rep.iterations < 60

    def test_fixture_agreement(self):
        ref = 2.0 * (math.sqrt(2.0) - 1.0)
        rep = bb_solve(FIX, BBConfig(xi=1e-3 * 1.25))
        assert rep.status is SolveStatus.CONVERGED
        assert abs(rep.objective - ref) <= 1e-3 * 1.25 + 1e-6
        assert rep.lower_bound <= ref <= rep.upper_bound + 1e-12

    def test_zero_iterations_returns_initial_bounds(self):
        rep = bb_solve(FIX, BBConfig(n_max=0, seed_incumbent=False))
        assert rep.status is SolveStatus.ITER_LIMIT
        assert rep.iterations == 0
        assert rep.lower_bound == 0.0

    def test_bound_traces_monotone(self):
        rep = bb_solve(FIX)
        rows = rep.meta["bb_trace"]
        uppers = [r[1] for r in rows]
        lowers = [r[2] for r in rows]
        assert all(b <= a + 1e-12 for a, b in zip(uppers, uppers[1:]))
        assert all(b >= a - 1e-12 for a, b in zip(lowers, lowers[1:]))
        assert all(l <= u for u, l in zip(uppers, lowers))

    def test_pruning_safety(self):
        for seed in range(4):
            rng = np.random.default_rng((20, seed))
            two = sample_two_user(rng)
            inst = system_from_two_user(two)
            cfg = dict(xi=1e-4 * two.oma_total(), n_max=200, seed_incumbent=False)
            a = bb_solve(inst, BBConfig(prune=True, **cfg))
            b = bb_solve(inst, BBConfig(prune=False, **cfg))
            assert abs(a.objective - b.objective) <= 1e-12 * max(1.0, a.objective)

    def test_matches_closed_form_on_random_two_user(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            two = sample_two_user(rng)
            inst = system_from_two_user(two)
            ref = solve_two_user(two)
            xi = 1e-3 * two.oma_total()
            rep = bb_solve(inst, BBConfig(xi=xi))
            assert rep.status is SolveStatus.CONVERGED
            assert abs(rep.objective - ref.objective) <= xi + 1e-6
            assert rep.lower_bound <= ref.objective + 1e-9 * max(1.0, ref.objective)

    def test_incumbent_profile_feasible(self):
        for seed in range(4):
            inst = random_instance((22, seed), m=4, rate=2.0)
            rep = bb_solve(inst, BBConfig(n_max=150))
            assert is_feasible(inst, rep.profile, rate_tol=1e-7)
            assert total_power(rep.profile) == pytest.approx(rep.objective, rel=1e-12)

    def test_never_worse_than_baseline_or_heuristic(self):
        from bacnoma import sca_solve

        for seed in range(4):
            inst = random_instance((23, seed), m=3, rate=2.0)
            sca = sca_solve(inst)
            rep = bb_solve(inst, BBConfig(n_max=300), warm=sca.profile)
            assert rep.objective <= sca.objective + 1e-9
            assert rep.objective <= total_power(oma_profile(inst)) + 1e-9

    def test_oracle_work_bookkeeping(self):
        rep = bb_solve(FIX, BBConfig(n_max=50))
        assert rep.meta["oracle_calls"] == rep.iterations + 1
        assert rep.meta["oracle_work"] > 0

    def test_sra_cheaper_than_sca_oracle(self):
        """Both oracles on the same vertices: greedy water-filling spends far
        fewer work units (bisection steps) than the slack-SCA (Newton steps)."""
        inst = random_instance(24, m=4, rate=2.0)
        diag = np.diag(oma_profile(inst).p)
        sra_work = sca_work = 0
        for scale in (1.2, 0.9, 0.6, 0.3):
            sra_work += sra_feasibility(inst, scale * diag).work
            sca_work += sca_feasibility(inst, scale * diag).work
        assert 2 * sra_work <= sca_work

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BBConfig(xi=-1.0)
        with pytest.raises(ValueError):
            BBConfig(feas_mode="bogus")
        with pytest.raises(ValueError):
            BBConfig(initial_box_scale=0.5)

    def test_warm_start_must_be_feasible(self):
        from bacnoma import PowerProfile

        with pytest.raises(ValueError):
            bb_solve(FIX, warm=PowerProfile(np.zeros((2, 2))))
