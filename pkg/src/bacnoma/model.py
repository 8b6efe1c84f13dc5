"""Data model for BackCom-assisted hybrid-NOMA uplink power allocation.

Users 0..M-1 share a TDMA frame of M slots and are indexed by decreasing
direct-link strength (user 0 strongest).  User m owns slot m and may
additionally reach the base station in any earlier slot i < m by modulating
and reflecting the slot owner's carrier.  ``SystemInstance`` holds the
noise-normalised effective gain of every such link, ``PowerProfile`` the
effective powers on the same lower-triangular layout.  All rate evaluation
and feasibility checking lives here so that every solver shares one
definition of the problem.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_RATE_TOL = 1e-8


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    CONVERGED = "converged"
    ITER_LIMIT = "iter_limit"
    INFEASIBLE = "infeasible"


def _frozen_tril(arr, name: str) -> np.ndarray:
    a = np.array(arr, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    a = np.tril(a)  # entries above the diagonal are undefined; drop them
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemInstance:
    """Noise-normalised effective gains and the common target rate.

    ``gamma[m, i]`` (i <= m) is the effective gain of user m in slot i,
    already divided by the noise power: the direct gain on the diagonal and
    direct-times-inter-user gain below it.  ``target_rate`` is in nats per
    channel use.
    """

    gamma: np.ndarray
    target_rate: float

    def __post_init__(self):
        g = _frozen_tril(self.gamma, "gamma")
        lo = g[np.tril_indices(g.shape[0])]
        if not np.all(np.isfinite(lo)) or np.any(lo <= 0.0):
            raise ValueError("all lower-triangular gains must be positive and finite")
        if not (math.isfinite(self.target_rate) and self.target_rate >= 0.0):
            raise ValueError("target_rate must be a finite non-negative rate")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "target_rate", float(self.target_rate))

    @property
    def num_users(self) -> int:
        return self.gamma.shape[0]

    @property
    def eps(self) -> float:
        """SNR needed to hit the target rate on a clean channel, e^R - 1."""
        return math.expm1(self.target_rate)

    def to_text(self) -> str:
        lines = [f"num_users {self.num_users}", f"target_rate {self.target_rate!r}", "gamma"]
        for m in range(self.num_users):
            lines.append(" ".join(repr(float(v)) for v in self.gamma[m, : m + 1]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SystemInstance":
        kv, rows = _parse_kv_matrix(text, "gamma")
        m = int(kv["num_users"])
        return cls(_rows_to_tril(rows, m), float(kv["target_rate"]))


@dataclass(frozen=True)
class PowerProfile:
    """Effective powers on the lower-triangular layout of the gains.

    ``p[m, m]`` is user m's transmit power in its own slot, ``p[m, i]``
    (i < m) the effective reflected power in slot i.  Reflected power cannot
    exceed the carrier power: p[m, i] <= p[i, i].
    """

    p: np.ndarray

    def __post_init__(self):
        a = _frozen_tril(self.p, "p")
        scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
        if np.any(a < -1e-9 * scale):
            raise ValueError("powers must be non-negative")
        if np.any(a < 0.0):  # clip float fuzz from interior-point solvers
            a = np.maximum(a, 0.0)
            a.setflags(write=False)
        diag = np.diag(a)
        for m in range(a.shape[0]):
            for i in range(m):
                if a[m, i] > diag[i] * (1.0 + 1e-9) + 1e-12 * scale:
                    raise ValueError(
                        f"reflected power p[{m},{i}]={a[m, i]!r} exceeds carrier p[{i},{i}]={diag[i]!r}"
                    )
        object.__setattr__(self, "p", a)

    @property
    def num_users(self) -> int:
        return self.p.shape[0]

    def to_text(self) -> str:
        lines = [f"num_users {self.num_users}", "p"]
        for m in range(self.num_users):
            lines.append(" ".join(repr(float(v)) for v in self.p[m, : m + 1]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PowerProfile":
        kv, rows = _parse_kv_matrix(text, "p")
        m = int(kv["num_users"])
        return cls(_rows_to_tril(rows, m))


def _parse_kv_matrix(text: str, matrix_key: str):
    kv: dict[str, str] = {}
    rows: list[list[float]] = []
    in_matrix = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if in_matrix:
            rows.append([float(tok) for tok in line.split()])
        elif line == matrix_key:
            in_matrix = True
        else:
            key, _, val = line.partition(" ")
            if not val:
                raise ValueError(f"malformed line {line!r}")
            kv[key] = val.strip()
    if not in_matrix:
        raise ValueError(f"missing matrix block {matrix_key!r}")
    return kv, rows


def _rows_to_tril(rows: list[list[float]], m: int) -> np.ndarray:
    if len(rows) != m:
        raise ValueError(f"expected {m} matrix rows, got {len(rows)}")
    out = np.zeros((m, m))
    for r, row in enumerate(rows):
        if len(row) != r + 1:
            raise ValueError(f"row {r} must have {r + 1} entries, got {len(row)}")
        out[r, : r + 1] = row
    return out


@dataclass
class SolveReport:
    """Outcome of any solver run: objective, bounds and iteration trace."""

    objective: float
    profile: PowerProfile
    status: SolveStatus
    iterations: int
    trace: list[float]
    upper_bound: float | None = None
    lower_bound: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.upper_bound is None:
            self.upper_bound = self.objective
        if self.lower_bound is None:
            self.lower_bound = self.objective

    def summary(self) -> str:
        return (
            f"status={self.status.value} objective={self.objective:.10g} "
            f"bounds=[{self.lower_bound:.10g}, {self.upper_bound:.10g}] "
            f"iterations={self.iterations}"
        )


def rate_in_slot(inst: SystemInstance, prof: PowerProfile, m: int, i: int) -> float:
    """Achievable rate of user m in slot i (nats/channel use).

    SIC decodes the slot owner first and then users in index order, so user
    m sees only the reflections of users j > m as interference.
    """
    mm = inst.num_users
    if not (0 <= i <= m < mm):
        raise IndexError(f"need 0 <= i <= m < {mm}, got m={m}, i={i}")
    interference = 0.0
    for j in range(m + 1, mm):
        interference += inst.gamma[j, i] * prof.p[j, i]
    return math.log1p(inst.gamma[m, i] * prof.p[m, i] / (interference + 1.0))


def total_rate(inst: SystemInstance, prof: PowerProfile, m: int) -> float:
    """Rate user m accumulates over its own slot and all earlier slots."""
    return sum(rate_in_slot(inst, prof, m, i) for i in range(m + 1))


def total_power(prof: PowerProfile) -> float:
    """Total battery power: reflections ride on existing carriers for free."""
    return float(np.trace(prof.p))


def is_feasible(inst: SystemInstance, prof: PowerProfile, rate_tol: float = DEFAULT_RATE_TOL) -> bool:
    """True iff every user reaches the target rate and powers are valid."""
    p = prof.p
    scale = max(1.0, float(np.max(np.abs(p))) if p.size else 1.0)
    ptol = rate_tol * scale
    if np.any(p < -ptol):
        return False
    diag = np.diag(p)
    for m in range(inst.num_users):
        for i in range(m):
            if p[m, i] > diag[i] + ptol:
                return False
    return all(
        total_rate(inst, prof, m) >= inst.target_rate - rate_tol for m in range(inst.num_users)
    )


def to_reflection(prof: PowerProfile) -> np.ndarray:
    """Recover reflecting coefficients eta[m, i] = p[m, i] / p[i, i]."""
    m = prof.num_users
    eta = np.zeros((m, m))
    diag = np.diag(prof.p)
    for r in range(m):
        for i in range(r):
            if diag[i] > 0.0:
                eta[r, i] = min(prof.p[r, i] / diag[i], 1.0)
            elif prof.p[r, i] > 0.0:
                raise ValueError(f"p[{r},{i}] > 0 while carrier p[{i},{i}] = 0")
    return eta


def profile_from_reflection(p_diag, eta) -> PowerProfile:
    """Build a profile from own-slot powers and reflecting coefficients."""
    d = np.asarray(p_diag, dtype=float)
    m = d.shape[0]
    p = np.diag(d).astype(float)
    if eta is not None:
        e = np.asarray(eta, dtype=float)
        for r in range(m):
            for i in range(r):
                p[r, i] = e[r, i] * d[i]
    return PowerProfile(p)


def oma_profile(inst: SystemInstance) -> PowerProfile:
    """Orthogonal baseline: each user meets the rate alone in its own slot."""
    return PowerProfile(np.diag(inst.eps / np.diag(inst.gamma)))
