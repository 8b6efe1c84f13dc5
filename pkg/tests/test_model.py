import math

import numpy as np
import pytest

from bacnoma import (
    PowerProfile,
    SolveReport,
    SolveStatus,
    SystemInstance,
    is_feasible,
    oma_profile,
    profile_from_reflection,
    rate_in_slot,
    to_reflection,
    total_power,
    total_rate,
)

LOG2 = math.log(2.0)


def test_rate_single_user_unit():
    inst = SystemInstance(np.array([[1.0]]), 1.0)
    prof = PowerProfile(np.array([[math.e - 1.0]]))
    assert rate_in_slot(inst, prof, 0, 0) == pytest.approx(1.0, abs=1e-15)


def test_rate_with_interference():
    inst = SystemInstance(np.array([[1.0, 0.0], [1.0, 1.0]]), LOG2)
    prof = PowerProfile(np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert rate_in_slot(inst, prof, 0, 0) == pytest.approx(math.log(1.5), abs=1e-15)
    # last user decodes free of interference
    assert rate_in_slot(inst, prof, 1, 0) == pytest.approx(math.log(2.0), abs=1e-15)


def test_rate_zero_power_is_zero():
    inst = SystemInstance(np.array([[2.0, 0.0], [3.0, 4.0]]), 1.0)
    prof = PowerProfile(np.zeros((2, 2)))
    for m in range(2):
        for i in range(m + 1):
            assert rate_in_slot(inst, prof, m, i) == 0.0


def test_rate_index_errors():
    inst = SystemInstance(np.array([[1.0]]), 1.0)
    prof = PowerProfile(np.array([[1.0]]))
    with pytest.raises(IndexError):
        rate_in_slot(inst, prof, 1, 0)
    with pytest.raises(IndexError):
        rate_in_slot(inst, prof, 0, 1)


def test_total_rate_pure_noma_point():
    # strong user gamma 8, weak 1, reflected path 4; both users hit log 2
    inst = SystemInstance(np.array([[8.0, 0.0], [4.0, 1.0]]), LOG2)
    prof = PowerProfile(np.array([[0.25, 0.0], [0.25, 0.0]]))
    assert total_rate(inst, prof, 1) == pytest.approx(LOG2, abs=1e-14)
    assert total_rate(inst, prof, 0) == pytest.approx(LOG2, abs=1e-14)
    assert total_rate(inst, PowerProfile(np.zeros((2, 2))), 1) == 0.0


def test_total_power_ignores_reflections():
    prof = PowerProfile(np.array([[1.0, 0.0, 0.0], [0.9, 2.0, 0.0], [0.5, 1.7, 3.0]]))
    assert total_power(prof) == pytest.approx(6.0)
    assert total_power(PowerProfile(np.zeros((3, 3)))) == 0.0


def test_oma_profile_values():
    inst = SystemInstance(np.diag([1.0, 1.0, 1.0]) + np.tril(np.ones((3, 3)), -1), LOG2)
    prof = oma_profile(inst)
    np.testing.assert_allclose(np.diag(prof.p), 1.0)
    assert total_power(prof) == pytest.approx(3.0)

    inst2 = SystemInstance(np.array([[8.0, 0.0], [1.0, 1.0]]), LOG2)
    assert total_power(oma_profile(inst2)) == pytest.approx(1.125)

    inst0 = SystemInstance(np.array([[8.0, 0.0], [1.0, 1.0]]), 0.0)
    assert total_power(oma_profile(inst0)) == 0.0


def test_oma_always_feasible():
    rng = np.random.default_rng(7)
    for _ in range(25):
        m = int(rng.integers(1, 6))
        gamma = np.tril(10.0 ** rng.uniform(-2, 3, size=(m, m)))
        inst = SystemInstance(gamma, float(rng.uniform(0.1, 5.0)))
        assert is_feasible(inst, oma_profile(inst), rate_tol=1e-9)


def test_zero_profile_infeasible():
    inst = SystemInstance(np.array([[1.0]]), 1.0)
    assert not is_feasible(inst, PowerProfile(np.zeros((1, 1))))


def test_hnoma_full_reflection_point_feasible():
    # closed-form full-reflection solution of the standard fixture
    inst = SystemInstance(np.array([[4.0, 0.0], [1.0, 1.0]]), LOG2)
    r = math.sqrt(2.0) - 1.0
    prof = PowerProfile(np.array([[r, 0.0], [r, r]]))
    assert is_feasible(inst, prof)


def test_cap_violation_detected():
    inst = SystemInstance(np.array([[4.0, 0.0], [1.0, 1.0]]), LOG2)
    p = np.array([[0.5, 0.0], [0.1, 1.0]])
    prof = PowerProfile(p)
    assert is_feasible(inst, prof)
    bad = prof.p.copy()
    bad.setflags(write=True)
    bad[1, 0] = 0.6  # exceeds the slot-0 carrier power
    with pytest.raises(ValueError):
        PowerProfile(bad)


def test_to_reflection():
    prof = PowerProfile(np.array([[0.25, 0.0], [0.25, 1.0]]))
    assert to_reflection(prof)[1, 0] == 1.0
    prof = PowerProfile(np.array([[2.0, 0.0], [0.5, 1.0]]))
    assert to_reflection(prof)[1, 0] == pytest.approx(0.25)
    prof = PowerProfile(np.array([[2.0, 0.0], [0.0, 1.0]]))
    assert to_reflection(prof)[1, 0] == 0.0


def test_to_reflection_inconsistent_carrier():
    p = np.zeros((2, 2))
    p[1, 0] = 0.5
    p[1, 1] = 1.0
    with pytest.raises(ValueError):
        to_reflection(PowerProfile(p))


def test_reflection_roundtrip():
    rng = np.random.default_rng(3)
    diag = rng.uniform(0.5, 2.0, 4)
    eta = np.tril(rng.uniform(0.0, 1.0, (4, 4)), -1)
    prof = profile_from_reflection(diag, eta)
    np.testing.assert_allclose(to_reflection(prof), eta, atol=1e-15)
    np.testing.assert_allclose(np.diag(prof.p), diag)


def test_rate_monotonicity():
    """Own reflected power raises the rate; later users' reflections lower it."""
    rng = np.random.default_rng(11)
    gamma = np.tril(10.0 ** rng.uniform(-1, 2, size=(3, 3)))
    inst = SystemInstance(gamma, 1.0)
    diag = rng.uniform(0.5, 2.0, 3)
    eta = np.tril(rng.uniform(0.1, 0.9, (3, 3)), -1)
    prof = profile_from_reflection(diag, eta)
    base = rate_in_slot(inst, prof, 1, 0)
    up = prof.p.copy()
    up.setflags(write=True)
    up[1, 0] *= 1.01
    assert rate_in_slot(inst, PowerProfile(up), 1, 0) > base
    down = prof.p.copy()
    down.setflags(write=True)
    down[2, 0] *= 1.01
    assert rate_in_slot(inst, PowerProfile(down), 1, 0) < base


def test_first_slot_rate_identity():
    """The slot-0 rate matches the explicit SIC expression for any user."""
    rng = np.random.default_rng(13)
    gamma = np.tril(10.0 ** rng.uniform(-1, 2, size=(4, 4)))
    inst = SystemInstance(gamma, 1.0)
    diag = rng.uniform(0.5, 2.0, 4)
    eta = np.tril(rng.uniform(0.1, 0.9, (4, 4)), -1)
    prof = profile_from_reflection(diag, eta)
    for m in range(4):
        intf = sum(gamma[j, 0] * prof.p[j, 0] for j in range(m + 1, 4))
        direct = math.log1p(gamma[m, 0] * prof.p[m, 0] / (intf + 1.0))
        assert rate_in_slot(inst, prof, m, 0) == pytest.approx(direct, rel=1e-15)


def test_instance_validation():
    with pytest.raises(ValueError):
        SystemInstance(np.array([[0.0]]), 1.0)
    with pytest.raises(ValueError):
        SystemInstance(np.array([[1.0, 0.0], [math.inf, 1.0]]), 1.0)
    with pytest.raises(ValueError):
        SystemInstance(np.array([[1.0]]), -0.5)
    with pytest.raises(ValueError):
        PowerProfile(np.array([[-1.0]]))


def test_instance_text_roundtrip():
    rng = np.random.default_rng(5)
    gamma = np.tril(10.0 ** rng.uniform(-2, 3, size=(3, 3)))
    inst = SystemInstance(gamma, 1.2345678901234567)
    back = SystemInstance.from_text(inst.to_text())
    assert back.target_rate == inst.target_rate
    np.testing.assert_array_equal(back.gamma, inst.gamma)
    assert back.to_text() == inst.to_text()


def test_profile_text_roundtrip():
    prof = PowerProfile(np.array([[0.1, 0.0], [0.05, 0.2]]))
    back = PowerProfile.from_text(prof.to_text())
    np.testing.assert_array_equal(back.p, prof.p)


def test_malformed_text_rejected():
    with pytest.raises(ValueError):
        SystemInstance.from_text("num_users 2\ntarget_rate 1.0\n")  # no matrix
    with pytest.raises(ValueError):
        SystemInstance.from_text("num_users 2\ntarget_rate 1.0\ngamma\n1.0\n")  # short


def test_report_bounds_default():
    prof = PowerProfile(np.array([[1.0]]))
    rep = SolveReport(1.0, prof, SolveStatus.OPTIMAL, 1, [1.0])
    assert rep.lower_bound == rep.upper_bound == rep.objective
    assert "optimal" in rep.summary()
