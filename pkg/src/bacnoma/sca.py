"""Successive convex approximation for the multi-user power minimisation.

The per-user rate constraints are differences of concave log terms: the
signal-plus-interference term minus the interference-only term.  Replacing
each interference term with its first-order Taylor expansion at the previous
iterate gives an affine overestimate, so each inner problem is a concave
program whose feasible set is contained in the true one.  Iterating from
the orthogonal baseline therefore descends through feasible profiles.
"""

from __future__ import annotations

import math

import numpy as np

from .kernel import ConcaveProgram, LogConstraint, NumericalFailure, barrier_solve, phase_one
from .model import (
    PowerProfile,
    SolveReport,
    SolveStatus,
    SystemInstance,
    is_feasible,
    oma_profile,
    total_power,
)

DEFAULT_REL_TOL = 1e-5
DEFAULT_MAX_ITER = 100
_START_SCALE = 1e-2  # relative push into the interior for warm starts
_START_FLOOR = 1e-6  # relative floor keeping variables off their bounds


def pack_index(num_users: int):
    """Flat index of the lower-triangular entry (m, i), row-major."""
    idx = {}
    k = 0
    for m in range(num_users):
        for i in range(m + 1):
            idx[(m, i)] = k
            k += 1
    return idx


def pack_profile(prof: PowerProfile) -> np.ndarray:
    m = prof.num_users
    return np.array([prof.p[r, i] for r in range(m) for i in range(r + 1)])


def unpack_profile(x: np.ndarray, num_users: int) -> PowerProfile:
    p = np.zeros((num_users, num_users))
    k = 0
    for m in range(num_users):
        for i in range(m + 1):
            p[m, i] = x[k]
            k += 1
    return PowerProfile(p)


def linearize_interference(inst: SystemInstance, p_prev: PowerProfile, m: int, i: int):
    """Affine overestimate of user m's slot-i interference term at p_prev.

    Returns (u, b) in the packed power space: the Taylor expansion of
    log(1 + h @ p) at the previous iterate, where h selects the reflected
    powers of users decoded after m in slot i.  Users m = M-1 see no
    interference and have nothing to linearise.
    """
    mm = inst.num_users
    if not (0 <= i <= m < mm - 1):
        raise IndexError(f"need 0 <= i <= m < {mm - 1}, got m={m}, i={i}")
    idx = pack_index(mm)
    h = np.zeros(mm * (mm + 1) // 2)
    for j in range(m + 1, mm):
        h[idx[(j, i)]] = inst.gamma[j, i]
    hp = float(h @ pack_profile(p_prev))
    u = h / (hp + 1.0)
    b = math.log1p(hp) - hp / (hp + 1.0)
    return u, b


def build_inner_program(inst: SystemInstance, p_prev: PowerProfile) -> ConcaveProgram:
    """The concave program of one SCA iteration, in packed power variables."""
    mm = inst.num_users
    idx = pack_index(mm)
    n = mm * (mm + 1) // 2
    c = np.zeros(n)
    for m in range(mm):
        c[idx[(m, m)]] = 1.0

    constraints = []
    for m in range(mm):
        weights = np.zeros((m + 1, n))
        for i in range(m + 1):
            for j in range(m, mm):
                weights[i, idx[(j, i)]] = inst.gamma[j, i]
        u = np.zeros(n)
        b = 0.0
        if m < mm - 1:
            for i in range(m + 1):
                ui, bi = linearize_interference(inst, p_prev, m, i)
                u += ui
                b += bi
        constraints.append(LogConstraint(weights, u, b, inst.target_rate))

    rows, rhs = [], []
    for m in range(mm):
        for i in range(m):
            row = np.zeros(n)
            row[idx[(m, i)]] = 1.0
            row[idx[(i, i)]] = -1.0
            rows.append(row)
            rhs.append(0.0)
    lin_a = np.array(rows) if rows else np.zeros((0, n))
    return ConcaveProgram(c=c, constraints=constraints, lin_A=lin_a, lin_d=np.array(rhs))


def _interior_start(inst: SystemInstance, prog: ConcaveProgram, p_prev: PowerProfile) -> np.ndarray:
    """Push a feasible iterate strictly inside the linearised feasible set.

    Scaling the whole profile up raises every true rate strictly; tiny
    relative clips then keep each variable off its box bounds.  Falls back
    to phase one if the heuristic ever fails.
    """
    p = p_prev.p.copy() * (1.0 + _START_SCALE)
    diag_scale = max(float(np.max(np.diag(p))), 1e-300)
    for m in range(inst.num_users):
        p[m, m] = max(p[m, m], _START_FLOOR * diag_scale)
    for m in range(inst.num_users):
        for i in range(m):
            p[m, i] = min(max(p[m, i], _START_FLOOR * p[i, i]), (1.0 - _START_FLOOR) * p[i, i])
    x0 = np.array([p[m, i] for m in range(inst.num_users) for i in range(m + 1)])
    if prog.strictly_feasible(x0):
        return x0
    x0 = phase_one(prog, x0)
    if x0 is None:
        raise NumericalFailure("could not find a strictly feasible start for the SCA subproblem")
    return x0


def sca_solve(
    inst: SystemInstance,
    init: PowerProfile | None = None,
    rel_tol: float = DEFAULT_REL_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SolveReport:
    """Iterated linearisation from the orthogonal baseline (or ``init``).

    Every iterate is feasible for the true problem because the linearised
    rates underestimate the true ones; the objective trace is non-increasing
    up to the inner solver tolerance.
    """
    if init is None:
        init = oma_profile(inst)
    if not is_feasible(inst, init):
        raise ValueError("initial profile is infeasible")
    if inst.num_users == 1:
        obj = total_power(init)
        return SolveReport(obj, init, SolveStatus.CONVERGED, 0, [obj], meta={"newton_steps": 0})

    barrier_tol = 1e-9 * max(1.0, total_power(oma_profile(inst)))
    p_prev = init
    trace = [total_power(p_prev)]
    newton_total = 0
    status = SolveStatus.ITER_LIMIT
    iterations = 0
    for _ in range(max_iter):
        prog = build_inner_program(inst, p_prev)
        res = barrier_solve(prog, _interior_start(inst, prog, p_prev), tol=barrier_tol)
        p_new = unpack_profile(res.x, inst.num_users)
        if not is_feasible(inst, p_new, rate_tol=1e-7):
            raise NumericalFailure("SCA iterate violates the true rate constraints")
        newton_total += res.newton_steps
        iterations += 1
        obj = total_power(p_new)
        trace.append(obj)
        p_prev = p_new
        if trace[-2] - obj < rel_tol * max(abs(trace[-2]), 1e-12):
            status = SolveStatus.CONVERGED
            break
    return SolveReport(
        objective=trace[-1],
        profile=p_prev,
        status=status,
        iterations=iterations,
        trace=trace,
        meta={"newton_steps": newton_total},
    )
