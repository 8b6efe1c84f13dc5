"""Exact solver for the two-user BackCom H-NOMA power minimisation.

With two users the problem reduces to three scalars: the strong user's
transmit power p1, the weak user's own-slot power p2, and the weak user's
effective reflected power p0 <= p1 in the strong user's slot.  The problem
is convex, and its optimum must take one of six structural forms (which
constraints are active, which powers are zero).  Each form has closed-form
powers and Lagrange multipliers; the solver enumerates all of them,
verifies the full KKT system numerically and returns the unique certified
candidate.

A coarse-to-fine grid search over the power cube ships alongside as an
independent oracle for regression tests and fixture generation.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kernel import ConcaveProgram, LogConstraint, barrier_solve
from .model import PowerProfile, SolveReport, SolveStatus, SystemInstance

log = logging.getLogger(__name__)

CERT_TOL = 1e-7
MULTIPLIER_MISMATCH_TOL = 1e-5


class CandidateKind(enum.Enum):
    OMA = "oma"
    PNOMA_I = "pnoma1"  # full reflection, silent own slot (p0 = p1, p2 = 0)
    PNOMA_II = "pnoma2"  # partial reflection, silent own slot (p0 < p1, p2 = 0)
    HNOMA_I = "hnoma1"  # partial reflection, both slots used
    HNOMA_II = "hnoma2"  # full reflection, strong user's rate slack
    HNOMA_III = "hnoma3"  # full reflection, strong user's rate tight


KIND_LABELS = {
    CandidateKind.OMA: "OMA",
    CandidateKind.PNOMA_I: "P-NOMA I",
    CandidateKind.PNOMA_II: "P-NOMA II",
    CandidateKind.HNOMA_I: "H-NOMA I",
    CandidateKind.HNOMA_II: "H-NOMA II",
    CandidateKind.HNOMA_III: "H-NOMA III",
}

# Tie-break order when coinciding candidates certify at a region boundary.
KIND_ORDER = list(CandidateKind)


class CertificationConflict(RuntimeError):
    """Zero or several distinct candidates passed KKT certification."""


@dataclass(frozen=True)
class TwoUserInstance:
    """Two-user gains: gamma1/gamma2 direct links, gamma0 the reflected path.

    All noise-normalised.  User 1 is the strong user (gamma1 > gamma2
    expected; the solver does not reorder).
    """

    gamma0: float
    gamma1: float
    gamma2: float
    target_rate: float

    def __post_init__(self):
        for name in ("gamma0", "gamma1", "gamma2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        if not (math.isfinite(self.target_rate) and self.target_rate >= 0.0):
            raise ValueError("target_rate must be non-negative and finite")

    @property
    def eps(self) -> float:
        return math.expm1(self.target_rate)

    @classmethod
    def from_system(cls, inst: SystemInstance) -> "TwoUserInstance":
        if inst.num_users != 2:
            raise ValueError(f"two-user solver needs M=2, got M={inst.num_users}")
        g = inst.gamma
        return cls(gamma0=g[1, 0], gamma1=g[0, 0], gamma2=g[1, 1], target_rate=inst.target_rate)

    def oma_total(self) -> float:
        return self.eps / self.gamma1 + self.eps / self.gamma2


@dataclass
class TwoUserCandidate:
    """One structural solution form with its powers and multipliers."""

    kind: CandidateKind
    p0: float
    p1: float
    p2: float
    primal_feasible: bool
    lam: np.ndarray | None = None  # six multipliers, filled by certify_kkt
    lam_numeric: np.ndarray | None = None
    kkt_certified: bool | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.p1 + self.p2

    def as_record(self) -> dict:
        rec = {
            "kind": KIND_LABELS[self.kind],
            "p0": self.p0,
            "p1": self.p1,
            "p2": self.p2,
            "objective": self.objective,
            "primal_feasible": self.primal_feasible,
            "kkt_certified": self.kkt_certified,
        }
        if self.lam is not None:
            rec.update({f"lambda{i + 1}": float(v) for i, v in enumerate(self.lam)})
        rec.update(self.residuals)
        return rec


def constraint_values(inst: TwoUserInstance, p0: float, p1: float, p2: float) -> np.ndarray:
    """The six constraint values g_i <= 0: rate, carrier-rate cut, p0<=p1, -p."""
    eps = inst.eps
    g1 = inst.target_rate - math.log1p(inst.gamma0 * p0) - math.log1p(inst.gamma2 * p2)
    g2 = eps * inst.gamma0 * p0 + eps - inst.gamma1 * p1
    return np.array([g1, g2, p0 - p1, -p1, -p2, -p0])


def _constraint_scales(inst, p0, p1, p2) -> np.ndarray:
    """Cancellation-aware magnitudes of the constraint terms.

    Scales must be power-relative, not unit-floored: near-zero rates make
    every power tiny, and a unit floor would then wave through candidates
    that violate the coupling constraint by many times their own size.
    """
    eps = inst.eps
    base = abs(p0) + abs(p1) + abs(p2) + eps / inst.gamma1 + eps / inst.gamma2 + 1e-300
    return np.array(
        [
            inst.target_rate
            + abs(math.log1p(inst.gamma0 * p0))
            + abs(math.log1p(inst.gamma2 * p2))
            + 1e-300,
            eps * inst.gamma0 * p0 + eps + inst.gamma1 * abs(p1) + 1e-300,
            base,
            base,
            base,
            base,
        ]
    )


def enumerate_candidates(inst: TwoUserInstance, tol: float = CERT_TOL) -> list[TwoUserCandidate]:
    """All six structural solution forms, infeasible ones flagged, never dropped.

    Closed forms: with eps = e^R - 1 and eps1 = sqrt(eps e^R / (gamma2 gamma1)),

    * OMA:       p0 = 0,               p1 = eps/gamma1,          p2 = eps/gamma2
    * P-NOMA I:  p0 = p1 = eps/gamma0, p2 = 0
    * P-NOMA II: p0 = eps/gamma0,      p1 = eps(1+eps)/gamma1,   p2 = 0
    * H-NOMA I:  p0 = gamma1 eps1/(eps gamma0) - 1/gamma0, p1 = eps1, p2 = eps1 - 1/gamma2
    * H-NOMA II: p0 = p1 = sqrt(e^R/(gamma0 gamma2)) - 1/gamma0,
                 p2 = sqrt(e^R/(gamma0 gamma2)) - 1/gamma2
    * H-NOMA III: p0 = p1 = eps/(gamma1 - eps gamma0),
                 p2 = e^R (gamma1 - eps gamma0)/(gamma1 gamma2) - 1/gamma2
    """
    g0, g1_, g2_ = inst.gamma0, inst.gamma1, inst.gamma2
    eps = inst.eps
    erate = math.exp(inst.target_rate)

    forms: list[tuple[CandidateKind, tuple[float, float, float] | None]] = [
        (CandidateKind.OMA, (0.0, eps / g1_, eps / g2_)),
        (CandidateKind.PNOMA_I, (eps / g0, eps / g0, 0.0)),
        (CandidateKind.PNOMA_II, (eps / g0, eps * (1.0 + eps) / g1_, 0.0)),
    ]
    if eps > 0.0:
        eps1 = math.sqrt(eps * erate / (g2_ * g1_))
        forms.append((CandidateKind.HNOMA_I, (g1_ * eps1 / (eps * g0) - 1.0 / g0, eps1, eps1 - 1.0 / g2_)))
    else:
        forms.append((CandidateKind.HNOMA_I, None))
    root = math.sqrt(erate / (g0 * g2_))
    forms.append((CandidateKind.HNOMA_II, (root - 1.0 / g0, root - 1.0 / g0, root - 1.0 / g2_)))
    den = g1_ - eps * g0
    if den > 0.0:
        forms.append((CandidateKind.HNOMA_III, (eps / den, eps / den, erate * den / (g1_ * g2_) - 1.0 / g2_)))
    else:
        forms.append((CandidateKind.HNOMA_III, None))

    out = []
    for kind, powers in forms:
        if powers is None:  # singular closed form (degenerate denominator)
            out.append(TwoUserCandidate(kind, math.nan, math.nan, math.nan, False))
            continue
        p0, p1, p2 = powers
        g = constraint_values(inst, p0, p1, p2)
        s = _constraint_scales(inst, p0, p1, p2)
        out.append(TwoUserCandidate(kind, p0, p1, p2, primal_feasible=bool(np.all(g <= tol * s))))
    return out


def _analytic_multipliers(inst: TwoUserInstance, cand: TwoUserCandidate) -> np.ndarray:
    g0, g1_, g2_ = inst.gamma0, inst.gamma1, inst.gamma2
    eps = inst.eps
    erate = math.exp(inst.target_rate)
    k = cand.kind
    if k is CandidateKind.OMA:
        return np.array([(1.0 + eps) / g2_, 1.0 / g1_, 0.0, 0.0, 0.0, g0 * (eps / g1_ - (1.0 + eps) / g2_)])
    if k is CandidateKind.PNOMA_I:
        return np.array([(1.0 + eps) / g0, 0.0, 1.0, 0.0, 1.0 - (1.0 + eps) * g2_ / g0, 0.0])
    if k is CandidateKind.PNOMA_II:
        return np.array([eps * (1.0 + eps) / g1_, 1.0 / g1_, 0.0, 0.0, 1.0 - eps * (1.0 + eps) * g2_ / g1_, 0.0])
    if k is CandidateKind.HNOMA_I:
        return np.array([math.sqrt(eps * erate / (g1_ * g2_)), 1.0 / g1_, 0.0, 0.0, 0.0, 0.0])
    if k is CandidateKind.HNOMA_II:
        return np.array([math.sqrt(erate / (g0 * g2_)), 0.0, 1.0, 0.0, 0.0, 0.0])
    if k is CandidateKind.HNOMA_III:
        lam1 = erate * (g1_ - eps * g0) / (g1_ * g2_)
        lam2 = g0 * erate * (eps * g0 - g1_) / (g1_**2 * g2_) - 1.0 / (eps * g0 - g1_)
        return np.array([lam1, lam2, 1.0 - g1_ * lam2, 0.0, 0.0, 0.0])
    raise ValueError(f"unknown kind {k}")


# Which of the six constraints may carry a nonzero multiplier, per form.
_ACTIVE_SETS = {
    CandidateKind.OMA: (0, 1, 5),
    CandidateKind.PNOMA_I: (0, 2, 4),
    CandidateKind.PNOMA_II: (0, 1, 4),
    CandidateKind.HNOMA_I: (0, 1),
    CandidateKind.HNOMA_II: (0, 2),
    CandidateKind.HNOMA_III: (0, 1, 2),
}


def _stationarity(inst, p0, p1, p2, lam) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of the three stationarity equations and their term scales."""
    g0, g1_, g2_ = inst.gamma0, inst.gamma1, inst.gamma2
    eps = inst.eps
    a2 = g2_ / (1.0 + g2_ * p2)
    a0 = g0 / (1.0 + g0 * p0)
    r = np.array(
        [
            1.0 - g1_ * lam[1] - lam[2] - lam[3],
            1.0 - a2 * lam[0] - lam[4],
            -a0 * lam[0] + eps * lam[1] * g0 + lam[2] - lam[5],
        ]
    )
    s = np.array(
        [
            1.0 + g1_ * abs(lam[1]) + abs(lam[2]) + abs(lam[3]),
            1.0 + a2 * abs(lam[0]) + abs(lam[4]),
            1.0 + a0 * abs(lam[0]) + eps * abs(lam[1]) * g0 + abs(lam[2]) + abs(lam[5]),
        ]
    )
    return r, s


def _stationarity_matrix(inst, p0, p1, p2) -> tuple[np.ndarray, np.ndarray]:
    """Stationarity as const + C @ lam = 0, for solving multipliers numerically."""
    g0, g1_, g2_ = inst.gamma0, inst.gamma1, inst.gamma2
    a2 = g2_ / (1.0 + g2_ * p2)
    a0 = g0 / (1.0 + g0 * p0)
    const = np.array([1.0, 1.0, 0.0])
    coef = np.array(
        [
            [0.0, -g1_, -1.0, -1.0, 0.0, 0.0],
            [-a2, 0.0, 0.0, 0.0, -1.0, 0.0],
            [-a0, inst.eps * g0, 1.0, 0.0, 0.0, -1.0],
        ]
    )
    return const, coef


def certify_kkt(inst: TwoUserInstance, cand: TwoUserCandidate, tol: float = CERT_TOL) -> TwoUserCandidate:
    """Populate multipliers from the closed forms and verify the KKT system.

    Checks stationarity, dual feasibility, complementary slackness and
    primal feasibility at scaled tolerance ``tol``.  The analytic
    multipliers are cross-checked against a least-squares solve of the
    stationarity system on the candidate's active set; disagreements are
    logged, never trusted silently.
    """
    if not np.all(np.isfinite([cand.p0, cand.p1, cand.p2])):
        return replace(cand, kkt_certified=False, residuals={"singular": True})
    lam = _analytic_multipliers(inst, cand)
    p0, p1, p2 = cand.p0, cand.p1, cand.p2
    g = constraint_values(inst, p0, p1, p2)
    gs = _constraint_scales(inst, p0, p1, p2)
    r, rs = _stationarity(inst, p0, p1, p2, lam)
    fallback = max(1.0, abs(lam[0]))

    stat_ok = bool(np.all(np.abs(r) <= tol * rs * fallback))
    dual_ok = bool(np.all(lam >= -tol * fallback))
    comp = np.abs(lam * g)
    comp_ok = bool(np.all(comp <= tol * gs * np.maximum(1.0, np.abs(lam))))
    primal_ok = bool(np.all(g <= tol * gs)) and cand.primal_feasible

    const, coef = _stationarity_matrix(inst, p0, p1, p2)
    active = list(_ACTIVE_SETS[cand.kind])
    sol, *_ = np.linalg.lstsq(coef[:, active], -const, rcond=None)
    lam_num = np.zeros(6)
    lam_num[active] = sol
    mismatch = float(np.max(np.abs(lam_num - lam) / np.maximum(1.0, np.abs(lam))))
    if mismatch > MULTIPLIER_MISMATCH_TOL:
        log.warning(
            "analytic/numeric multiplier mismatch %.3g for %s at gamma=(%g, %g, %g), R=%g",
            mismatch, cand.kind.value, inst.gamma0, inst.gamma1, inst.gamma2, inst.target_rate,
        )

    residuals = {
        "stationarity": float(np.max(np.abs(r) / rs)),
        "dual_min": float(np.min(lam)),
        "comp_slack": float(np.max(comp / gs)),
        "primal_max": float(np.max(g / gs)),
        "multiplier_mismatch": mismatch,
    }
    return replace(
        cand,
        lam=lam,
        lam_numeric=lam_num,
        kkt_certified=stat_ok and dual_ok and comp_ok and primal_ok,
        residuals=residuals,
    )


def solve_two_user(inst: TwoUserInstance, tol: float = CERT_TOL) -> SolveReport:
    """Pick the KKT-certified candidate among the six closed forms.

    The problem is convex, so exactly one form certifies except on region
    boundaries where coinciding forms tie; ties are broken by objective and
    then by table order.  Raises :class:`CertificationConflict` when no
    candidate certifies or certified candidates disagree on the objective.
    """
    cands = [certify_kkt(inst, c, tol) for c in enumerate_candidates(inst, tol)]
    certified = [c for c in cands if c.kkt_certified]
    if not certified:
        raise CertificationConflict(
            f"no candidate certifies for {inst}; residuals: "
            + "; ".join(f"{c.kind.value}: {c.residuals}" for c in cands)
        )
    best = min(certified, key=lambda c: (c.objective, KIND_ORDER.index(c.kind)))
    tie_tol = 1e-6 * max(1.0, abs(best.objective))
    stragglers = [c for c in certified if c.objective > best.objective + tie_tol]
    if stragglers:
        raise CertificationConflict(
            f"{len(certified)} candidates certify with distinct objectives for {inst}: "
            + ", ".join(f"{c.kind.value}={c.objective:.12g}" for c in certified)
        )
    feas_objs = [c.objective for c in cands if c.primal_feasible]
    if best.objective > min(feas_objs) + tie_tol:
        raise CertificationConflict(
            f"certified candidate {best.kind.value} is not the feasible minimum for {inst}"
        )
    profile = PowerProfile(np.array([[best.p1, 0.0], [best.p0, best.p2]]))
    return SolveReport(
        objective=best.objective,
        profile=profile,
        status=SolveStatus.OPTIMAL,
        iterations=1,
        trace=[best.objective],
        meta={
            "kind": best.kind,
            "label": KIND_LABELS[best.kind],
            "oma_total": inst.oma_total(),
            "candidates": [c.as_record() for c in cands],
        },
    )


def classify_solution(report: SolveReport) -> str:
    """Table label of the certified optimum (the orthogonal form never wins)."""
    kind = report.meta["kind"]
    if kind is CandidateKind.OMA:
        raise ValueError("OMA certified as optimal; this contradicts the model")
    return KIND_LABELS[kind]


def solve_conventional_two_user(h1sq: float, h2sq: float, target_rate: float) -> SolveReport:
    """Contrast solver: both of the weak user's transmissions drain its battery.

    Minimises p1 + p0 + p2 where p0 is transmitted, not reflected, so it
    joins the objective and the reflected-power coupling disappears.  The
    SIC convention is the conventional hybrid-NOMA one: the interloper's
    shared-slot signal is decoded first (under the slot owner's
    interference) and the owner is decoded clean afterwards.  The owner's
    power then sits at its own rate floor, and the weak user's remaining
    split is a two-variable concave program solved by the log-barrier
    kernel.  The pure-NOMA point (own slot silent) is evaluated alongside
    for comparison.
    """
    if h1sq <= 0.0 or h2sq <= 0.0:
        raise ValueError("gains must be positive")
    eps = math.expm1(target_rate)
    oma_total = eps / h1sq + eps / h2sq
    if eps == 0.0:
        prof = PowerProfile(np.zeros((2, 2)))
        return SolveReport(0.0, prof, SolveStatus.OPTIMAL, 0, [0.0], meta={"p0": 0.0})

    # Raising p1 above its floor only costs the objective and degrades the
    # weak user's shared-slot rate, so p1 = eps/h1sq exactly.
    p1 = eps / h1sq
    shared_snr_slope = h2sq / (1.0 + eps)  # owner interference at the floor
    prog = ConcaveProgram(
        c=np.ones(2),  # variables x = (p0, p2)
        constraints=[
            LogConstraint(np.diag([shared_snr_slope, h2sq]), np.zeros(2), 0.0, target_rate)
        ],
        lin_A=np.zeros((0, 2)),
        lin_d=np.zeros(0),
    )
    start = np.array([eps * (1.0 + eps) / h2sq, eps / h2sq])
    res = barrier_solve(prog, start, tol=1e-7 * max(oma_total, 1e-9))
    p0, p2 = res.x
    profile = PowerProfile(np.array([[p1, 0.0], [min(p0, p1), p2]]))
    pure_noma = (p1, eps * (1.0 + eps) / h2sq, 0.0)
    return SolveReport(
        objective=p1 + res.objective,
        profile=profile,
        status=SolveStatus.OPTIMAL,
        iterations=res.newton_steps,
        trace=[p1 + obj for _, obj in res.trace],
        meta={
            "p1": p1,
            "p0": p0,
            "p2": p2,
            "oma_total": oma_total,
            "pure_noma_total": sum(pure_noma),
            "pure_noma_point": pure_noma,
        },
    )


@dataclass
class OracleResult:
    objective: float
    p0: float
    p1: float
    p2: float
    coarse_step: float
    fine_step: float


def grid_oracle_two_user(
    inst: TwoUserInstance, max_points: int = 10_000_000, refine: bool = True
) -> OracleResult:
    """Independent coarse-to-fine grid minimiser for the two-user problem.

    Only the reflected power p0 couples the constraints: for fixed p0 the
    objective is increasing in p1 and p2, the strong user's constraints give
    an exact floor for p1, and the weak user's rate constraint an exact
    floor for p2 (nothing couples p1 to p2).  The oracle therefore scans an
    exhaustive p0 grid, evaluating both floors exactly at every point, and
    keeps the best total.  The coarse grid is {0} plus geometrically spaced
    points on [0, 4*OMA-total] (optimal powers routinely sit decades below
    the OMA scale, so a uniform coarse step cannot resolve them); three
    cascaded linear rescans around the incumbent then sharpen the answer,
    which is safe because the scanned function is convex in p0.

    ``coarse_step`` reports the geometric ratio between adjacent coarse
    points, ``fine_step`` the spacing of the last refinement stage.
    """
    eps = inst.eps
    if eps == 0.0:
        return OracleResult(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    hi = 4.0 * inst.oma_total()
    lo = 1e-7 * hi
    n = max(801, min(20001, max_points // 1000))
    ratio = (hi / lo) ** (1.0 / (n - 2))

    def scan(p0s: np.ndarray):
        grown = np.expm1(np.maximum(inst.target_rate - np.log1p(inst.gamma0 * p0s), 0.0))
        floor2 = grown / inst.gamma2
        floor1 = np.maximum(eps * (1.0 + inst.gamma0 * p0s) / inst.gamma1, p0s)
        totals = floor1 + floor2
        k = int(np.argmin(totals))
        return float(totals[k]), float(p0s[k]), float(floor1[k]), float(floor2[k])

    best = scan(np.concatenate([[0.0], np.geomspace(lo, hi, n - 1)]))
    fine = 0.0
    if refine:
        gap = best[1] * (ratio - 1.0) if best[1] > 0.0 else lo
        for _ in range(3):
            w_lo = max(0.0, best[1] - 2.0 * gap)
            best = min(best, scan(np.linspace(w_lo, w_lo + 4.0 * gap, 401)))
            fine = 4.0 * gap / 400.0
            gap = 2.0 * fine
    return OracleResult(best[0], best[1], best[2], best[3], ratio, fine)
