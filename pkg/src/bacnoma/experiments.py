"""Monte Carlo comparison harness: sweeps, paired trials, CSV emission.

Each trial draws one random scenario instance and hands the same instance
to every requested solver, so per-trial differences are paired.  Trial
streams are derived from (master seed, sweep index, trial index); results
are reduced in trial order, which makes the output bytes independent of the
worker count.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .bb import BBConfig, bb_solve
from .channel import ScenarioConfig, sample_instance
from .model import SystemInstance, oma_profile, total_power
from .sca import sca_solve
from .twouser import TwoUserInstance, classify_solution, solve_conventional_two_user, solve_two_user

log = logging.getLogger(__name__)

SOLVER_NAMES = ("oma", "closed-form", "conventional", "sca", "bb-sra", "bb-sca")
TWO_USER_ONLY = {"closed-form", "conventional"}
SWEEP_VARS = ("target_rate", "num_users", "cluster_side", "cluster_center")
CLASS_LABELS = ("P-NOMA I", "P-NOMA II", "H-NOMA I", "H-NOMA II", "H-NOMA III")


class ConfigError(ValueError):
    """Invalid experiment or scenario configuration."""


@dataclass
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sweep_var: str = "target_rate"
    sweep_values: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    trials: int = 100
    solvers: tuple = ("oma", "closed-form")
    master_seed: int = 0
    mode: str = "power"  # power | classes | trace
    xi_rel: float = 1e-3
    n_max: int = 1000
    feas_mode: str = "sra"
    jobs: int = 1

    def __post_init__(self):
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigError(f"sweep_var must be one of {SWEEP_VARS}, got {self.sweep_var!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.sweep_values:
            raise ConfigError("sweep_values must be non-empty")
        unknown = set(self.solvers) - set(SOLVER_NAMES)
        if unknown:
            raise ConfigError(f"unknown solvers {sorted(unknown)}; choose from {SOLVER_NAMES}")
        if self.mode not in ("power", "classes", "trace"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "classes" and set(self.solvers) != {"closed-form"}:
            raise ConfigError("classes mode requires exactly the closed-form solver")
        needs_two = TWO_USER_ONLY & set(self.solvers)
        if needs_two:
            if self.sweep_var == "num_users":
                bad = [v for v in self.sweep_values if int(v) != 2]
            else:
                bad = [] if self.scenario.num_users == 2 else [self.scenario.num_users]
            if bad:
                raise ConfigError(f"solvers {sorted(needs_two)} require exactly 2 users")
        self.sweep_values = tuple(self.sweep_values)
        self.solvers = tuple(self.solvers)

    def scenario_at(self, value) -> ScenarioConfig:
        if self.sweep_var == "num_users":
            return replace(self.scenario, num_users=int(value))
        return replace(self.scenario, **{self.sweep_var: float(value)})

    def to_text(self) -> str:
        lines = [self.scenario.to_text().rstrip()]
        for f in fields(self):
            if f.name == "scenario":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = " ".join(str(x) for x in v)
            lines.append(f"{f.name} {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentSpec":
        scen_keys = {f.name for f in fields(ScenarioConfig)}
        scen_lines, kwargs = [], {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition(" ")
            if key in scen_keys:
                scen_lines.append(line)
            elif key == "sweep_values":
                kwargs[key] = tuple(float(tok) for tok in val.split())
            elif key == "solvers":
                kwargs[key] = tuple(val.split())
            elif key in ("trials", "master_seed", "n_max", "jobs"):
                kwargs[key] = int(val)
            elif key == "xi_rel":
                kwargs[key] = float(val)
            elif key in ("sweep_var", "mode", "feas_mode"):
                kwargs[key] = val.strip()
            else:
                raise ConfigError(f"unknown experiment key {key!r}")
        try:
            scenario = ScenarioConfig.from_text("\n".join(scen_lines))
            return cls(scenario=scenario, **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict]  # aggregated, one per (sweep value, solver) or class
    samples: dict  # (sweep_value, solver) -> list of per-trial metric dicts
    failures: dict  # (sweep_value, solver) -> count

    @property
    def any_failures(self) -> bool:
        return any(self.failures.values())


def solve_single(solver: str, inst: SystemInstance, spec: ExperimentSpec, warm=None) -> dict:
    """Run one solver on one instance; returns the per-trial metric record."""
    if solver == "oma":
        return {"power": total_power(oma_profile(inst)), "iterations": 0.0,
                "oracle_calls": 0.0, "oracle_work": 0.0}
    if solver == "closed-form":
        rep = solve_two_user(TwoUserInstance.from_system(inst))
        return {"power": rep.objective, "iterations": 1.0, "oracle_calls": 0.0,
                "oracle_work": 0.0, "label": classify_solution(rep)}
    if solver == "conventional":
        rep = solve_conventional_two_user(inst.gamma[0, 0], inst.gamma[1, 1], inst.target_rate)
        return {"power": rep.objective, "iterations": float(rep.iterations),
                "oracle_calls": 0.0, "oracle_work": float(rep.iterations)}
    if solver == "sca":
        rep = sca_solve(inst)
        return {"power": rep.objective, "iterations": float(rep.iterations),
                "oracle_calls": 0.0, "oracle_work": float(rep.meta["newton_steps"]),
                "trace": rep.trace, "profile": rep.profile}
    if solver in ("bb-sra", "bb-sca"):
        oma_total = total_power(oma_profile(inst))
        cfg = BBConfig(xi=spec.xi_rel * oma_total, n_max=spec.n_max, feas_mode=solver[3:])
        rep = bb_solve(inst, cfg, warm=warm)
        return {"power": rep.objective, "iterations": float(rep.iterations),
                "oracle_calls": float(rep.meta["oracle_calls"]),
                "oracle_work": float(rep.meta["oracle_work"]),
                "lower_bound": rep.lower_bound, "bb_trace": rep.meta["bb_trace"]}
    raise ConfigError(f"unknown solver {solver!r}")


def _run_trial(payload) -> tuple[int, list]:
    spec, sweep_idx, value, trial = payload
    rng = np.random.default_rng([spec.master_seed, sweep_idx, trial])
    inst = sample_instance(spec.scenario_at(value), rng)
    out = []
    warm = None  # the SCA profile seeds the BB incumbent instead of resolving it
    order = sorted(spec.solvers, key=lambda s: s.startswith("bb-"))
    recs = {}
    for solver in order:
        try:
            rec = solve_single(solver, inst, spec, warm=warm)
            if solver == "sca":
                warm = rec.pop("profile", None)
            recs[solver] = rec
        except Exception as exc:  # excluded from the means, counted, never hidden
            log.warning("solver %s failed on trial %d (%s=%s): %s",
                        solver, trial, spec.sweep_var, value, exc)
            recs[solver] = {"error": repr(exc)}
    for solver in spec.solvers:
        out.append((solver, recs[solver]))
    return trial, out


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    samples: dict = {(v, s): [] for v in spec.sweep_values for s in spec.solvers}
    failures: dict = {(v, s): 0 for v in spec.sweep_values for s in spec.solvers}
    for sweep_idx, value in enumerate(spec.sweep_values):
        payloads = [(spec, sweep_idx, value, t) for t in range(spec.trials)]
        if spec.jobs > 1:
            with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
                results = list(pool.map(_run_trial, payloads, chunksize=1))
        else:
            results = [_run_trial(p) for p in payloads]
        results.sort(key=lambda r: r[0])  # fixed reduction order
        for _, solver_outs in results:
            for solver, rec in solver_outs:
                if "error" in rec:
                    failures[(value, solver)] += 1
                else:
                    samples[(value, solver)].append(rec)
    rows = _aggregate(spec, samples, failures)
    return ExperimentResult(spec, rows, samples, failures)


def _aggregate(spec, samples, failures) -> list[dict]:
    rows = []
    if spec.mode == "classes":
        for value in spec.sweep_values:
            recs = samples[(value, "closed-form")]
            counts = {lab: 0 for lab in CLASS_LABELS}
            for rec in recs:
                counts[rec["label"]] += 1
            for lab in CLASS_LABELS:
                rows.append({
                    "sweep_var": spec.sweep_var, "sweep_value": value, "class": lab,
                    "count": counts[lab],
                    "frequency": counts[lab] / len(recs) if recs else math.nan,
                    "trials_ok": len(recs), "failures": failures[(value, "closed-form")],
                })
        return rows
    if spec.mode == "trace":
        for value in spec.sweep_values:
            for solver in spec.solvers:
                for trial, rec in enumerate(samples[(value, solver)]):
                    for row in _trace_rows(solver, rec):
                        rows.append({"sweep_var": spec.sweep_var, "sweep_value": value,
                                     "solver": solver, "trial": trial, **row})
        return rows
    for value in spec.sweep_values:
        for solver in spec.solvers:
            recs = samples[(value, solver)]
            powers = np.array([r["power"] for r in recs])
            n = len(powers)
            rows.append({
                "sweep_var": spec.sweep_var, "sweep_value": value, "solver": solver,
                "trials_ok": n, "failures": failures[(value, solver)],
                "mean_power": float(powers.mean()) if n else math.nan,
                "stderr_power": float(powers.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                "mean_iterations": float(np.mean([r["iterations"] for r in recs])) if n else math.nan,
                "mean_oracle_calls": float(np.mean([r["oracle_calls"] for r in recs])) if n else math.nan,
                "mean_oracle_work": float(np.mean([r["oracle_work"] for r in recs])) if n else math.nan,
            })
    return rows


def _trace_rows(solver, rec):
    if "bb_trace" in rec:
        for n, upper, lower, live in rec["bb_trace"]:
            yield {"iteration": n, "objective": upper, "upper": upper, "lower": lower, "live": live}
    elif "trace" in rec:
        for k, obj in enumerate(rec["trace"]):
            yield {"iteration": k, "objective": obj, "upper": obj, "lower": "", "live": ""}
    else:
        yield {"iteration": 0, "objective": rec["power"], "upper": rec["power"],
               "lower": "", "live": ""}


_COLUMNS = {
    "power": ("sweep_var", "sweep_value", "solver", "trials_ok", "failures", "mean_power",
              "stderr_power", "mean_iterations", "mean_oracle_calls", "mean_oracle_work"),
    "classes": ("sweep_var", "sweep_value", "class", "count", "frequency", "trials_ok", "failures"),
    "trace": ("sweep_var", "sweep_value", "solver", "trial", "iteration", "objective",
              "upper", "lower", "live"),
}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def result_to_csv(result: ExperimentResult) -> str:
    """Self-describing CSV: config echo and a content hash, then the rows."""
    cols = _COLUMNS[result.spec.mode]
    body_lines = [",".join(cols)]
    for row in result.rows:
        body_lines.append(",".join(_fmt(row.get(c, "")) for c in cols))
    body = "\n".join(body_lines) + "\n"
    digest = hashlib.sha1(body.encode()).hexdigest()
    header = ["# bacnoma experiment result"]
    for line in result.spec.to_text().rstrip().splitlines():
        header.append(f"# {line}")
    header.append(f"# content-sha1 {digest}")
    return "\n".join(header) + "\n" + body


def write_csv(result: ExperimentResult, path) -> None:
    with open(path, "w") as fh:
        fh.write(result_to_csv(result))


def fig_mode(name: str) -> list[tuple[str, ExperimentSpec]]:
    """Preset experiment panels reproducing the reference figure trends."""
    rates = (1.0, 2.0, 3.0, 4.0, 5.0)
    if name == "fig1":
        return [
            (f"fig1_ru{ru}", ExperimentSpec(
                scenario=ScenarioConfig(num_users=2, cluster_side=float(ru), noise_power=1e-8),
                sweep_var="target_rate", sweep_values=rates, trials=500,
                solvers=("oma", "closed-form")))
            for ru in (2, 5)
        ]
    if name == "fig2":
        return [
            (f"fig2_ru{ru}", ExperimentSpec(
                scenario=ScenarioConfig(num_users=2, cluster_side=float(ru), noise_power=1e-7),
                sweep_var="target_rate", sweep_values=rates, trials=500,
                solvers=("oma", "closed-form")))
            for ru in (2, 5)
        ]
    if name == "fig3":
        return [("fig3", ExperimentSpec(
            scenario=ScenarioConfig(num_users=2, cluster_side=2.0, cluster_center=15.0,
                                    noise_power=1e-8),
            sweep_var="target_rate", sweep_values=rates, trials=500,
            solvers=("closed-form",), mode="classes"))]
    if name == "fig4":
        return [
            (f"fig4_rc{rc}", ExperimentSpec(
                scenario=ScenarioConfig(num_users=5, cluster_side=5.0, cluster_center=float(rc),
                                        noise_power=1e-8, target_rate=4.0),
                sweep_var="num_users", sweep_values=(1, 2, 3, 4, 5), trials=100,
                solvers=("oma", "sca", "bb-sra")))
            for rc in (15, 20)
        ]
    if name == "fig5":
        return [("fig5", ExperimentSpec(
            scenario=ScenarioConfig(num_users=5, cluster_side=5.0, noise_power=1e-8),
            sweep_var="target_rate", sweep_values=rates, trials=100,
            solvers=("oma", "sca", "bb-sra")))]
    if name == "fig6":
        return [("fig6", ExperimentSpec(
            scenario=ScenarioConfig(num_users=5, cluster_side=5.0, cluster_center=20.0,
                                    noise_power=1e-8, target_rate=4.0),
            sweep_var="target_rate", sweep_values=(4.0,), trials=1,
            solvers=("sca", "bb-sra"), mode="trace"))]
    raise ConfigError(f"unknown figure preset {name!r}; choose fig1..fig6")
