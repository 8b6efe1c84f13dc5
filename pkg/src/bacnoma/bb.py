"""Branch and bound over own-slot powers, with two feasibility oracles.

The objective depends only on the diagonal powers, and the feasible set in
that space is upward-closed (more carrier power never hurts once the
reflecting coefficients readjust).  Rectangles over the diagonal therefore
bound the optimum by their corner sums: the minimum vertex from below, the
maximum vertex from above whenever some choice of reflecting coefficients
supports it.  Boxes whose maximum vertex cannot support the rates contain
no feasible point at all and die immediately.

Feasibility of a vertex is itself a non-convex problem; two oracles are
provided.  ``sra_feasibility`` exploits the SIC structure: the last-decoded
user sees no interference, so coefficients are fixed one user at a time in
reverse decode order, each by a water-filling step that spends as little
total reflection as possible (leaving the least interference for the users
decoded earlier).  ``sca_feasibility`` relaxes the constraints with slack
variables and drives the total violation down by successive convex
approximation; it is far more expensive and may reject supportable
vertices, which is measured, not assumed away.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .kernel import ConcaveProgram, LogConstraint, LogSumProblem, barrier_solve, waterfill_min_sum
from .model import (
    PowerProfile,
    SolveReport,
    SolveStatus,
    SystemInstance,
    is_feasible,
    oma_profile,
    profile_from_reflection,
    total_power,
)

SRA_RATE_SLACK = 1e-12
SCA_FEAS_TOL = 1e-7
SCA_FEAS_MAX_ROUNDS = 30


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box of own-slot powers."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D arrays of equal length")
        if np.any(lo > hi) or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("need finite lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def split(self) -> tuple["Rectangle", "Rectangle"]:
        """Bisect along the longest edge."""
        axis = int(np.argmax(self.hi - self.lo))
        mid = 0.5 * (self.lo[axis] + self.hi[axis])
        hi1 = self.hi.copy()
        hi1[axis] = mid
        lo2 = self.lo.copy()
        lo2[axis] = mid
        return Rectangle(self.lo, hi1), Rectangle(lo2, self.hi)


@dataclass
class BBConfig:
    xi: float | None = None  # absolute gap tolerance; None -> 1e-3 * OMA total
    n_max: int = 1000
    delta: float | None = None  # infeasible sentinel; None -> OMA total + 1
    feas_mode: str = "sra"  # "sra" | "sca"
    initial_box_scale: float = 2.0
    prune: bool = True
    seed_incumbent: bool = True  # start U from a heuristic feasible profile

    def __post_init__(self):
        if self.xi is not None and self.xi <= 0:
            raise ValueError("xi must be positive")
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")
        if self.initial_box_scale < 1.0:
            raise ValueError("initial_box_scale must be >= 1")
        if self.feas_mode not in ("sra", "sca"):
            raise ValueError(f"unknown feas_mode {self.feas_mode!r}")


@dataclass
class FeasibilityOutcome:
    eta: np.ndarray | None  # reflecting coefficients, None when unsupportable
    work: int  # bisection iterations (SRA) or Newton steps (SCA)

    @property
    def feasible(self) -> bool:
        return self.eta is not None


def sra_feasibility(inst: SystemInstance, p_diag: np.ndarray) -> FeasibilityOutcome:
    """Successive per-user reflection assignment, last-decoded user first.

    User m's own-slot rate is fixed by the vertex; any residual must come
    from reflecting in earlier slots, where the interference from users
    decoded after m is already settled.  Minimising each user's total
    reflection is the unique greedy choice that leaves the least
    interference for the users still to be processed.  The first user never
    reflects, so it is only checked.
    """
    mm = inst.num_users
    p = np.asarray(p_diag, dtype=float)
    if p.shape != (mm,) or np.any(p < 0.0):
        raise ValueError("p_diag must be a non-negative vector of length num_users")
    rate = inst.target_rate
    eta = np.zeros((mm, mm))
    interference = np.zeros(mm)  # running sum of gamma_ji * eta_ji * p_i per slot
    work = 0
    for m in range(mm - 1, 0, -1):
        own = math.log1p(inst.gamma[m, m] * p[m] / (interference[m] + 1.0))
        residual = rate - own
        if residual <= 0.0:
            continue
        slots = [i for i in range(m) if p[i] > 0.0]
        coeffs = np.array([inst.gamma[m, i] * p[i] / (interference[i] + 1.0) for i in slots])
        result = waterfill_min_sum(LogSumProblem(coeffs, np.ones(len(slots)), residual))
        work += result.iterations
        if not result.feasible:
            return FeasibilityOutcome(None, work)
        for i, e in zip(slots, result.eta):
            eta[m, i] = e
            interference[i] += inst.gamma[m, i] * e * p[i]
    first = math.log1p(inst.gamma[0, 0] * p[0] / (interference[0] + 1.0))
    if first < rate - SRA_RATE_SLACK * max(1.0, rate):
        return FeasibilityOutcome(None, work)
    return FeasibilityOutcome(eta, work)


def _strict_index(num_users: int):
    idx = {}
    k = 0
    for m in range(1, num_users):
        for i in range(m):
            idx[(m, i)] = k
            k += 1
    return idx


def _true_violation(inst, p_diag, eta) -> float:
    prof = profile_from_reflection(p_diag, eta)
    worst = 0.0
    for m in range(inst.num_users):
        got = sum(
            math.log1p(
                inst.gamma[m, i]
                * prof.p[m, i]
                / (sum(inst.gamma[j, i] * prof.p[j, i] for j in range(m + 1, inst.num_users)) + 1.0)
            )
            for i in range(m + 1)
        )
        worst = max(worst, inst.target_rate - got)
    return worst


def sca_feasibility(
    inst: SystemInstance, p_diag: np.ndarray, max_rounds: int = SCA_FEAS_MAX_ROUNDS
) -> FeasibilityOutcome:
    """Slack-relaxed SCA on the reflecting coefficients at a fixed vertex.

    Minimises the total rate violation of the linearised constraints,
    re-linearising at each round's solution, until the true violation drops
    below tolerance or stalls.  A stall is declared infeasible even though
    the vertex might be supportable by a cleverer split; the oracle is
    conservative by construction.
    """
    mm = inst.num_users
    p = np.asarray(p_diag, dtype=float)
    rate = inst.target_rate
    if _true_violation(inst, p, np.zeros((mm, mm))) <= SCA_FEAS_TOL:
        return FeasibilityOutcome(np.zeros((mm, mm)), 0)
    idx = _strict_index(mm)
    k = len(idx)
    n = k + mm  # coefficients plus one slack per user
    eta_prev = np.zeros(k)
    work = 0
    best_viol = math.inf
    for _ in range(max_rounds):
        constraints = []
        for m in range(mm):
            weights = np.zeros((m + 1, n))
            u = np.zeros(n)
            u[k + m] = -1.0  # slack v_m relaxes user m's constraint
            rho = rate
            for i in range(m + 1):
                offset = 1.0 + (inst.gamma[m, m] * p[m] if i == m else 0.0)
                for j in range(max(m, i + 1), mm):
                    weights[i, idx[(j, i)]] = inst.gamma[j, i] * p[i] / offset
                rho -= math.log(offset)
                if m < mm - 1:
                    q = np.zeros(k)
                    for j in range(m + 1, mm):
                        q[idx[(j, i)]] = inst.gamma[j, i] * p[i]
                    qe = float(q @ eta_prev)
                    u[:k] += q / (qe + 1.0)
                    rho += math.log1p(qe) - qe / (qe + 1.0)
            constraints.append(LogConstraint(weights, u, 0.0, rho))
        lin_a = np.hstack([np.eye(k), np.zeros((k, mm))]) if k else np.zeros((0, n))
        prog = ConcaveProgram(
            c=np.concatenate([np.zeros(k), np.ones(mm)]),
            constraints=constraints,
            lin_A=lin_a,
            lin_d=np.ones(k),
        )
        x0 = np.empty(n)
        x0[:k] = np.clip(eta_prev, 1e-6, 1.0 - 1e-6)
        for m, con in enumerate(constraints):
            z = 1.0 + con.weights[:, :k] @ x0[:k]
            val = float(np.sum(np.log(z)) - con.u[:k] @ x0[:k] - con.rho)
            x0[k + m] = max(0.0, -val) + max(0.01, 0.1 * abs(val))
        res = barrier_solve(prog, x0, tol=1e-9 * max(1.0, rate))
        work += res.newton_steps
        eta_prev = np.clip(res.x[:k], 0.0, 1.0)
        eta = np.zeros((mm, mm))
        for (m, i), j in idx.items():
            eta[m, i] = eta_prev[j]
        viol = _true_violation(inst, p, eta)
        if viol <= SCA_FEAS_TOL:
            return FeasibilityOutcome(eta, work)
        if viol >= best_viol - 1e-9 * max(1.0, best_viol):
            break  # stalled above tolerance
        best_viol = viol
    return FeasibilityOutcome(None, work)


def rect_bounds(inst: SystemInstance, rect: Rectangle, feas, delta: float):
    """Corner bounds of a rectangle: (psi_l, psi_u, feasibility outcome).

    If the maximum vertex is supportable the box brackets the optimum by its
    corner sums; otherwise the whole box is unsupportable (the feasible set
    is upward-closed) and both bounds collapse to the sentinel.
    """
    out = feas(inst, rect.hi)
    if out.feasible:
        return float(np.sum(rect.lo)), float(np.sum(rect.hi)), out
    return delta, delta, out


_FEAS_FUNCS = {"sra": sra_feasibility, "sca": sca_feasibility}


def bb_solve(
    inst: SystemInstance, cfg: BBConfig | None = None, warm: PowerProfile | None = None
) -> SolveReport:
    """Branch and bound on the diagonal-power box (best-first, longest edge).

    The initial box spans a multiple of the orthogonal baseline powers per
    coordinate, lifted to the baseline's total where that is larger: no
    optimal own-slot power can exceed the total of a feasible point, so the
    optimum always lies inside.  (An incumbent-on-the-boundary retry
    heuristic is not sound here: near-flat box edges leave the incumbent in
    the interior even when the true optimum is outside the box.)

    The incumbent starts from a verified feasible profile (``warm``, or the
    SCA heuristic when seeding is on).  The vertex search alone cannot
    guarantee to dominate the heuristic because greedy vertex feasibility is
    sufficient but not necessary: a zero-slack vertex may be supportable
    only by the one split the greedy does not pick.
    """
    cfg = cfg or BBConfig()
    oma_diag = np.diag(oma_profile(inst).p).copy()
    oma_total = float(np.sum(oma_diag))
    xi = cfg.xi if cfg.xi is not None else 1e-3 * oma_total
    delta = cfg.delta if cfg.delta is not None else oma_total + 1.0
    if warm is None and cfg.seed_incumbent and inst.num_users > 1:
        from .sca import sca_solve  # heuristic layering, not a structural dependency

        try:
            warm = sca_solve(inst).profile
        except Exception:  # seeding is best-effort; the vertex search stands alone
            warm = None
    if warm is not None and not is_feasible(inst, warm):
        raise ValueError("warm-start profile is infeasible")
    hi = np.maximum(cfg.initial_box_scale * oma_diag, oma_total * (1.0 + 1e-9))
    report = _bb_run(inst, hi, xi, delta, _FEAS_FUNCS[cfg.feas_mode], cfg, warm)
    report.meta["xi"] = xi
    report.meta["feas_mode"] = cfg.feas_mode
    return report


def _bb_run(inst, hi, xi, delta, feas, cfg, warm: PowerProfile | None = None) -> SolveReport:
    calls = 0
    work = 0

    def bounded(rect):
        nonlocal calls, work
        psi_l, psi_u, out = rect_bounds(inst, rect, feas, delta)
        calls += 1
        work += out.work
        return psi_l, psi_u, out

    root = Rectangle(np.zeros_like(hi), hi)
    psi_l, psi_u, out = bounded(root)
    if not out.feasible:  # cannot happen for box scale >= 1; guard anyway
        prof = oma_profile(inst)
        return SolveReport(
            total_power(prof), prof, SolveStatus.INFEASIBLE, 0, [delta], delta, delta
        )
    upper, lower = psi_u, psi_l
    incumbent = (root.hi, out.eta)
    if warm is not None and total_power(warm) < upper:
        upper = total_power(warm)
        incumbent = warm
    seq = itertools.count()
    heap = [(psi_l, -root.volume, next(seq), root, out.eta)]
    trace = [upper]
    rows = [(0, upper, lower, 1)]
    n = 0
    while n < cfg.n_max and upper - lower > xi:
        while heap and cfg.prune and heap[0][0] > upper:
            heapq.heappop(heap)
        if not heap:
            lower = upper
            rows.append((n, upper, lower, 0))
            break
        node_l, _, _, rect, eta = heapq.heappop(heap)
        n += 1
        left, right = rect.split()
        l1, u1, out1 = bounded(left)
        # right child keeps the parent's maximum vertex: reuse its witness
        l2, u2, e2 = float(np.sum(right.lo)), float(np.sum(right.hi)), eta
        for rc, (pl, pu, et) in (
            (left, (l1, u1, out1.eta)),
            (right, (l2, u2, e2)),
        ):
            if et is not None and pu < upper:
                upper = pu
                incumbent = (rc.hi, et)
            if et is not None and (not cfg.prune or pl <= upper):
                heapq.heappush(heap, (pl, -rc.volume, next(seq), rc, et))
        while heap and cfg.prune and heap[0][0] > upper:
            heapq.heappop(heap)
        lower = min(heap[0][0] if heap else upper, upper)
        trace.append(upper)
        rows.append((n, upper, lower, len(heap)))
    status = SolveStatus.CONVERGED if upper - lower <= xi else SolveStatus.ITER_LIMIT
    if isinstance(incumbent, PowerProfile):
        profile = incumbent
    else:
        diag, eta = incumbent
        profile = profile_from_reflection(diag, eta)
    rate_tol = SCA_FEAS_TOL if cfg.feas_mode == "sca" else 1e-8
    if not is_feasible(inst, profile, rate_tol=rate_tol):
        raise RuntimeError("branch-and-bound incumbent failed feasibility verification")
    return SolveReport(
        objective=upper,
        profile=profile,
        status=status,
        iterations=n,
        trace=trace,
        upper_bound=upper,
        lower_bound=lower,
        meta={"bb_trace": rows, "oracle_calls": calls, "oracle_work": work},
    )
