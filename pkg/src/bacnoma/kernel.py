"""Self-contained convex machinery shared by the multi-user solvers.

Two solvers live here.  ``waterfill_min_sum`` minimises a sum of reflecting
coefficients under a single log-sum rate constraint; the KKT conditions
collapse to a scalar water level found by bisection, so no general-purpose
solver is needed.  ``barrier_solve`` is a dense log-barrier interior-point
method for the small linear-objective programs with concave log-sum
constraints that arise from successive convex approximation; problem sizes
stay below a few dozen variables, so plain Newton steps with explicit
Hessians are the right tool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WATERFILL_FEAS_SLACK = 1e-12
WATERFILL_MAX_ITER = 200


class NumericalFailure(RuntimeError):
    """Newton line search stalled; carries the solver diagnostics."""


@dataclass(frozen=True)
class LogSumProblem:
    """min sum(eta) s.t. sum_i log(1 + a_i eta_i) >= rho, 0 <= eta_i <= c_i."""

    coeffs: np.ndarray
    caps: np.ndarray
    required_rate: float

    def __post_init__(self):
        a = np.asarray(self.coeffs, dtype=float)
        c = np.asarray(self.caps, dtype=float)
        if a.shape != c.shape or a.ndim != 1:
            raise ValueError("coeffs and caps must be 1-D arrays of equal length")
        if a.size and (not np.all(np.isfinite(a)) or np.any(a <= 0.0)):
            raise ValueError("coefficients must be positive and finite")
        if a.size and (np.any(c <= 0.0) or np.any(c > 1.0 + 1e-12)):
            raise ValueError("caps must lie in (0, 1]")
        if self.required_rate < 0.0:
            raise ValueError("required_rate must be non-negative")
        object.__setattr__(self, "coeffs", a)
        object.__setattr__(self, "caps", c)


@dataclass
class WaterfillResult:
    eta: np.ndarray | None
    rate: float
    iterations: int

    @property
    def feasible(self) -> bool:
        return self.eta is not None


def waterfill_min_sum(prob: LogSumProblem) -> WaterfillResult:
    """Water-filling minimiser of total reflection under a rate floor.

    The stationarity condition gives eta_i(mu) = clamp(mu - 1/a_i, 0, c_i)
    for a scalar water level mu; the achieved rate is monotone in mu, so a
    bisection on a guaranteed bracket locates the level where the rate
    constraint is tight (or every coefficient saturates its cap).
    """
    a = prob.coeffs.tolist()
    caps = prob.caps.tolist()
    rho = float(prob.required_rate)
    n = len(a)
    if rho <= 0.0 or n == 0:
        if rho > 0.0:
            return WaterfillResult(None, 0.0, 0)
        return WaterfillResult(np.zeros(n), 0.0, 0)

    inv_a = [1.0 / ai for ai in a]
    max_rate = sum(math.log1p(ai * ci) for ai, ci in zip(a, caps))
    if max_rate < rho - WATERFILL_FEAS_SLACK:
        return WaterfillResult(None, max_rate, 0)
    if max_rate <= rho:
        return WaterfillResult(np.array(caps), max_rate, 0)

    def rate_at(mu: float) -> float:
        total = 0.0
        for ai, inv, ci in zip(a, inv_a, caps):
            eta = mu - inv
            if eta <= 0.0:
                continue
            if eta > ci:
                eta = ci
            total += math.log1p(ai * eta)
        return total

    lo = 0.0
    hi = max(inv_a) + math.exp(rho) / min(a)  # rate(hi) > rho by construction
    iters = 0
    while iters < WATERFILL_MAX_ITER and (hi - lo) > 1e-13 * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        iters += 1
        if rate_at(mid) >= rho:
            hi = mid
        else:
            lo = mid
    eta = np.clip(hi - np.asarray(inv_a), 0.0, prob.caps)
    return WaterfillResult(eta, rate_at(hi), iters)


@dataclass(frozen=True)
class LogConstraint:
    """sum_k log(1 + weights[k]@x) - (u@x + b) >= rho, weights >= 0 on the domain."""

    weights: np.ndarray  # (k, n)
    u: np.ndarray  # (n,)
    b: float
    rho: float


@dataclass
class ConcaveProgram:
    """Linear objective over concave log-sum constraints plus linear cuts.

    Variables carry an implicit x_i >= 0 bound unless masked out via
    ``nonneg`` (used by the phase-one slack, which must roam free).  The log
    rows of all constraints are stacked once into shared matrices so the
    barrier evaluation is a handful of matrix products instead of a Python
    loop (these programs are evaluated hundreds of times per solve).
    """

    c: np.ndarray
    constraints: list[LogConstraint]
    lin_A: np.ndarray  # (m, n); Ax <= d
    lin_d: np.ndarray
    nonneg: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        if self.nonneg is None:
            self.nonneg = np.ones(n, dtype=bool)
        else:
            self.nonneg = np.asarray(self.nonneg, dtype=bool)
        self.lin_A = np.asarray(self.lin_A, dtype=float).reshape(-1, n)
        self.lin_d = np.asarray(self.lin_d, dtype=float)
        if self.constraints:
            self._w = np.vstack([con.weights for con in self.constraints])
            self._offsets = np.cumsum([0] + [con.weights.shape[0] for con in self.constraints])[:-1]
            self._row_con = np.repeat(
                np.arange(len(self.constraints)), [c.weights.shape[0] for c in self.constraints]
            )
            self._u = np.vstack([con.u for con in self.constraints])
            self._shift = np.array([con.b + con.rho for con in self.constraints])
        else:
            self._w = np.zeros((0, n))
            self._offsets = np.zeros(0, dtype=int)
            self._row_con = np.zeros(0, dtype=int)
            self._u = np.zeros((0, n))
            self._shift = np.zeros(0)

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    @property
    def num_ineq(self) -> int:
        return len(self.constraints) + self.lin_A.shape[0] + int(self.nonneg.sum())

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        """Slack of each log-sum constraint (>= 0 when satisfied)."""
        if not self.constraints:
            return np.zeros(0)
        z = 1.0 + self._w @ x
        out = np.add.reduceat(np.log(np.maximum(z, 1e-300)), self._offsets) - self._u @ x - self._shift
        if np.any(z <= 0.0):
            bad = np.zeros(len(self.constraints), dtype=bool)
            np.logical_or.at(bad, self._row_con, z <= 0.0)
            out[bad] = -np.inf
        return out

    def strictly_feasible(self, x: np.ndarray, margin: float = 0.0) -> bool:
        if np.any(x[self.nonneg] <= margin):
            return False
        if self.lin_A.shape[0] and np.any(self.lin_d - self.lin_A @ x <= margin):
            return False
        vals = self.constraint_values(x)
        return bool(np.all(vals > margin)) if vals.size else True


@dataclass
class BarrierResult:
    x: np.ndarray | None
    objective: float
    newton_steps: int
    status: str  # "optimal" | "infeasible"
    trace: list[tuple[float, float]] = field(default_factory=list)  # (t, objective)

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def barrier_terms(prog: ConcaveProgram, x: np.ndarray, t: float):
    """Value, gradient and Hessian of the centering objective t*c@x + barrier.

    Analytic derivatives of the log(1 + w@x) terms, evaluated through the
    stacked row matrices; exposed so tests can check them against central
    finite differences.
    """
    n = prog.num_vars
    val = t * float(prog.c @ x)
    grad = t * prog.c.copy()
    hess = np.zeros((n, n))
    if prog.constraints:
        z = 1.0 + prog._w @ x
        if np.any(z <= 0.0):
            return np.inf, grad, hess
        f = np.add.reduceat(np.log(z), prog._offsets) - prog._u @ x - prog._shift
        if np.any(f <= 0.0):
            return np.inf, grad, hess
        wz = prog._w / z[:, None]
        gf = np.zeros((len(prog.constraints), n))
        np.add.at(gf, prog._row_con, wz)
        gf -= prog._u
        gff = gf / f[:, None]
        val -= float(np.sum(np.log(f)))
        grad -= gff.sum(axis=0)
        # sum_j [ gf_j gf_j^T / f_j^2 + (sum_k w_k w_k^T / z_k^2) / f_j ]
        hess += gff.T @ gff
        hess += (wz.T * (1.0 / f[prog._row_con])) @ wz
    if prog.lin_A.shape[0]:
        s = prog.lin_d - prog.lin_A @ x
        if np.any(s <= 0.0):
            return np.inf, grad, hess
        val -= float(np.sum(np.log(s)))
        grad += prog.lin_A.T @ (1.0 / s)
        hess += (prog.lin_A.T * (1.0 / s**2)) @ prog.lin_A
    xi = x[prog.nonneg]
    if np.any(xi <= 0.0):
        return np.inf, grad, hess
    val -= float(np.sum(np.log(xi)))
    grad[prog.nonneg] -= 1.0 / xi
    hess[prog.nonneg, prog.nonneg] += 1.0 / xi**2
    return val, grad, hess


def _newton_center(prog, x, t, newton_tol, max_steps, early_exit=None):
    """Minimise the centering objective from a strictly feasible x."""
    steps = 0
    for _ in range(max_steps):
        val, grad, hess = barrier_terms(prog, x, t)
        # Eigenvalue-floored solve: near active constraints the Hessian spans
        # ~20 decades and a plain solve fills the small-eigenvalue subspace
        # with garbage directions no line search can use.
        w, vecs = np.linalg.eigh(hess)
        w = np.maximum(w, max(w[-1] * 1e-14, 1e-300))
        dx = vecs @ ((vecs.T @ -grad) / w)
        lam2 = float(-grad @ dx)
        if lam2 < 0.0:  # numerical indefiniteness; fall back to gradient step
            dx = -grad
            lam2 = float(grad @ grad)
        if lam2 / 2.0 <= newton_tol:
            break
        step = 1.0
        while step > 1e-16 and not prog.strictly_feasible(x + step * dx):
            step *= 0.5
        while step > 1e-16:
            new_val, _, _ = barrier_terms(prog, x + step * dx, t)
            if new_val <= val - 0.25 * step * lam2:
                break
            if step < 1e-10 and new_val < val:
                break  # Armijo is unattainable at the float noise floor
            step *= 0.5
        if step <= 1e-16:
            if lam2 / 2.0 > 1.0:  # genuinely far from centred, yet stuck
                raise NumericalFailure(
                    f"line search stalled at t={t:g}, decrement^2={lam2:g}, "
                    f"objective={float(prog.c @ x):g}"
                )
            break  # numerical floor reached near the central point
        x = x + step * dx
        steps += 1
        if early_exit is not None and early_exit(x):
            return x, steps, True
    return x, steps, False


def barrier_solve(
    prog: ConcaveProgram,
    x0: np.ndarray | None,
    tol: float = 1e-8,
    t0: float = 1.0,
    kappa: float = 10.0,
    newton_tol: float = 1e-9,
    max_newton: int = 50,
) -> BarrierResult:
    """Log-barrier interior-point minimisation of a ``ConcaveProgram``.

    ``x0`` must be strictly feasible; pass None to let phase one find a
    start.  On return the objective is within num_ineq/t_final <= tol of the
    optimum.  Raises :class:`NumericalFailure` if a Newton line search
    stalls.
    """
    if x0 is None:
        x0 = phase_one(prog)
        if x0 is None:
            return BarrierResult(None, math.inf, 0, "infeasible")
    x = np.asarray(x0, dtype=float).copy()
    if not prog.strictly_feasible(x):
        raise ValueError("x0 is not strictly feasible")
    m = prog.num_ineq
    t = t0
    steps = 0
    trace = []
    while True:
        x, used, _ = _newton_center(prog, x, t, newton_tol, max_newton)
        steps += used
        trace.append((t, float(prog.c @ x)))
        if m / t < tol:
            break
        t *= kappa
    return BarrierResult(x, float(prog.c @ x), steps, "optimal", trace)


def phase_one(
    prog: ConcaveProgram,
    x0: np.ndarray | None = None,
    tol: float = 1e-9,
    t0: float = 1.0,
    kappa: float = 10.0,
) -> np.ndarray | None:
    """Find a strictly feasible point, or None if the program is infeasible.

    Standard auxiliary-slack construction: minimise s with every constraint
    relaxed by s.  Stops early as soon as the slack goes negative, which
    certifies strict feasibility of the x part.
    """
    n = prog.num_vars
    cons = [
        LogConstraint(
            np.hstack([c.weights, np.zeros((c.weights.shape[0], 1))]),
            np.append(c.u, -1.0),
            c.b,
            c.rho,
        )
        for c in prog.constraints
    ]
    lin_a = (
        np.hstack([prog.lin_A, -np.ones((prog.lin_A.shape[0], 1))])
        if prog.lin_A.shape[0]
        else np.zeros((0, n + 1))
    )
    aux = ConcaveProgram(
        c=np.append(np.zeros(n), 1.0),
        constraints=cons,
        lin_A=lin_a,
        lin_d=prog.lin_d,
        nonneg=np.append(prog.nonneg, False),
    )
    x = np.ones(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x[prog.nonneg & (x <= 0.0)] = 1.0
    viol = -prog.constraint_values(x)
    if prog.lin_A.shape[0]:
        viol = np.append(viol, prog.lin_A @ x - prog.lin_d)
    s = max(1.0, float(np.max(viol)) * 1.5 + 1.0) if viol.size else 1.0
    z = np.append(x, s)

    def done(pt):
        return pt[-1] < -1e-9

    t = t0
    while True:
        z, _, early = _newton_center(aux, z, t, 1e-9, 50, early_exit=done)
        if early or done(z):
            return z[:n].copy()
        if (n + 2) / t < tol:
            break
        t *= kappa
    if z[-1] > tol:
        return None
    xf = z[:n].copy()
    return xf if prog.strictly_feasible(xf) else None
