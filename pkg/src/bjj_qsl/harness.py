"""Sweeps over transfer time, interaction, model tier and control strategy.

Transfer times are given in units of the linear speed limit T_QSL^L of the
tier (pi / 2J for two-mode and dimer, pi / 2J_lin of the untilted double
well for the GPE).  Interaction values are Lambda for two-mode and dimer and
Ng for the GPE.
"""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import __version__
from .control import (ControlPulse, FeedbackCCP, ccp_scheduled, constant_pulse, constrained_guess,
                      time_grid)
from .errors import BJJError
from .fitting import RabiFit, fit_rabi
from .gpe import (DoubleWellSpec, EffectiveParams, GpeField, Grid1D, calibrate, gpe_fidelity,
                  split_step_propagate, transfer_states, tunnel_splitting)
from .many_body import DimerParams, DimerState, dimer_ground_state, one_body_rdm, propagate_dimer, uhlmann_fidelity
from .optimize import DimerProblem, GpeProblem, OptimizerConfig, TwoModeProblem, crab_optimize
from .two_mode import TwoModeParams, TwoModeState, path_length, propagate_two_mode

TIERS = ("two-mode", "gpe", "dimer")
STRATEGIES = ("uncontrolled", "ccp-scheduled", "ccp-scheduled-cos2", "ccp-feedback", "crab", "crab-constrained")
AUTONOMOUS = ("uncontrolled", "ccp-feedback")
CRAB_STRATEGIES = ("crab", "crab-constrained")
CSV_HEADER = ["tier", "strategy", "interaction", "T_over_TqslL", "epsilon", "path_length",
              "depletion_max", "J_eff", "seed", "flag"]


@dataclass
class Numerics:
    J: float = 1.0
    dU: float = 0.0
    N: int = 100
    dimer_d_prep: float = -20.0
    a: float = 2.0
    x_max: float = 16.0
    n_points: int = 1024
    gpe_d_prep: float = -1.0
    dt_two_mode: float = 1e-3
    dt_dimer: float = 2e-3
    dt_gpe: float = 2e-3
    crab_guess: str = "ccp"       # or "zero"
    constraint_D0: float = 2.0    # units of J
    constraint_DT: float = -2.0
    d_max: float = 20.0           # units of J
    threshold: float = 0.01
    bisection_steps: int = 10
    fit_range: tuple = (0.2, 1.2)


@dataclass
class SweepSpec:
    tier: str
    strategies: list
    interactions: list
    T_values: list
    seeds: list = field(default_factory=lambda: [0])
    numerics: Numerics = field(default_factory=Numerics)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}; expected one of {TIERS}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
        if not (self.strategies and self.interactions and self.T_values and self.seeds):
            raise ValueError("strategies, interactions, T values and seeds must be non-empty")
        if any(not T > 0 for T in self.T_values):
            raise ValueError("T values must be positive")
        if any(x < 0 for x in self.interactions):
            raise ValueError("interaction values must be non-negative")


# --- model tiers ----------------------------------------------------------

@dataclass
class Segment:
    final: object
    epsilon: float
    path_length: float
    min_left: float
    depletion_max: Optional[float]
    detunings: ControlPulse
    series: Optional[dict] = None


class TwoModeTier:
    name = "two-mode"

    def __init__(self, Lam: float, num: Numerics):
        self.num = num
        self.params = TwoModeParams.from_lambda(Lam, num.J, num.dU)
        self.initial, self.target = TwoModeState.left(), TwoModeState.right()
        self.unit = num.J
        self.J_eff = num.J
        self.t_qsl = self.params.t_qsl
        self.dt = num.dt_two_mode

    def feedback(self):
        return FeedbackCCP.for_params(self.params)

    def scheduled(self, T, form):
        return ccp_scheduled(self.params, T, self.dt, form)

    def run(self, control, T, state0=None, series=False) -> Segment:
        tr = propagate_two_mode(state0 or self.initial, self.params, control, T=T, dt=self.dt)
        eps = tr.infidelity(self.target)
        out = None
        if series:
            out = {"t": tr.times, "z": tr.z, "epsilon": eps, "D": tr.detunings}
        return Segment(tr.final, float(eps[-1]), path_length(tr).path_length, float(np.min(0.5 * (1 + tr.z))),
                       None, ControlPulse(tr.times, tr.detunings, "custom"), out)

    def problem(self, T, guess):
        return TwoModeProblem(self.params, T, guess, self.dt, self.num.d_max * self.unit)


class DimerTier:
    name = "dimer"

    def __init__(self, Lam: float, num: Numerics):
        self.num = num
        self.params = DimerParams.from_lambda(num.N, Lam, num.J, num.dU)
        self.initial = _dimer_initial(self.params, num.dimer_d_prep)
        self.target = self.initial.mirrored()
        self.unit = num.J
        self.J_eff = num.J
        self.t_qsl = self.params.t_qsl
        self.dt = num.dt_dimer

    def feedback(self):
        return FeedbackCCP(gain=0.5 * self.params.U_eff, offset=self.params.dU)

    def scheduled(self, T, form):
        p = TwoModeParams(self.params.J, self.params.U_eff, self.params.dU)
        return ccp_scheduled(p, T, self.dt, form)

    def run(self, control, T, state0=None, series=False) -> Segment:
        n = int(math.ceil(T / self.dt - 1e-9))
        stride = max(1, n // 500) if series else 10 ** 9
        tr = propagate_dimer(state0 or self.initial, self.params, control, T=T, dt=self.dt, stride=stride)
        out = None
        if series:
            rho_T = one_body_rdm(self.target).matrix
            eps = [uhlmann_fidelity(rho_T, one_body_rdm(DimerState(a, tr.N)).matrix)[1] for a in tr.amplitudes]
            idx = np.searchsorted(tr.times, tr.snapshot_times - 1e-12)
            out = {"t": tr.snapshot_times, "z": tr.z[idx], "epsilon": np.array(eps), "D": tr.detunings[idx]}
        return Segment(tr.final, float(tr.rdm_infidelity(self.target)), tr.path_length,
                       float(np.min(0.5 * (1 + tr.z))), tr.depletion_max,
                       ControlPulse(tr.times, tr.detunings, "custom"), out)

    def problem(self, T, guess):
        return DimerProblem(self.params, T, guess, self.initial, self.target, self.dt, self.num.d_max * self.unit)


class GpeTier:
    name = "gpe"

    def __init__(self, Ng: float, num: Numerics, cal: Optional[EffectiveParams] = None):
        self.num = num
        self.spec = DoubleWellSpec(a=num.a, Ng=Ng)
        self.grid = Grid1D(-num.x_max, num.x_max, num.n_points)
        self._cal = cal
        self.initial, self.target = _gpe_states(num.a, Ng, num.x_max, num.n_points, num.gpe_d_prep)
        self.J_lin = cal.J_lin if cal is not None else _gpe_splitting(num.a, num.x_max, num.n_points)
        # GPE tilt is the full inter-well energy difference, 2x the two-mode detuning
        self.unit = 2.0 * self.J_lin
        self.t_qsl = math.pi / (2 * self.J_lin)
        self.dt = num.dt_gpe

    @property
    def cal(self) -> EffectiveParams:
        # calibrated lazily: uncontrolled runs never need it
        if self._cal is None:
            n = self.num
            self._cal = _gpe_calibration(n.a, self.spec.Ng, n.x_max, n.n_points, n.dt_gpe)
        return self._cal

    @property
    def J_eff(self) -> float:
        return self._cal.J_eff if self._cal is not None else self.J_lin

    def feedback(self):
        return FeedbackCCP(gain=self.cal.U_eff)

    def scheduled(self, T, form):
        t = time_grid(T, self.dt)
        J = self.cal.J_eff
        z = np.cos(2 * J * t) if form == "hamiltonian-cos" else np.cos(J * t) ** 2
        return ControlPulse(t, -self.cal.U_eff * z, "ccp-scheduled", {"form": form})

    def run(self, control, T, state0=None, series=False) -> Segment:
        n = int(math.ceil(T / self.dt - 1e-9))
        stride = max(1, n // 500) if series else 10 ** 9
        tr = split_step_propagate(state0 or self.initial, self.spec, control, T=T, dt=self.dt,
                                  stride=stride, track_path=True)
        out = None
        if series:
            eps = [gpe_fidelity(GpeField(self.grid, psi), self.target)[1] for psi in tr.snapshots]
            idx = np.searchsorted(tr.times, tr.snapshot_times - 1e-12)
            out = {"t": tr.snapshot_times, "z": tr.z[idx], "epsilon": np.array(eps), "D": tr.detunings[idx],
                   "trajectory": tr}
        return Segment(tr.final, gpe_fidelity(tr.final, self.target)[1], tr.path_length,
                       float(np.min(tr.n_left)), None, ControlPulse(tr.times, tr.detunings, "custom"), out)

    def problem(self, T, guess):
        return GpeProblem(self.spec, T, guess, self.initial, self.target, self.J_lin, self.dt,
                          self.num.d_max * self.unit)


@lru_cache(maxsize=16)
def _dimer_initial_cached(N, J, u, dU, d_prep):
    return dimer_ground_state(DimerParams(N, J, u, dU), d_prep * J)


def _dimer_initial(params: DimerParams, d_prep: float) -> DimerState:
    return _dimer_initial_cached(params.N, params.J, params.u, params.dU, d_prep)


@lru_cache(maxsize=16)
def _gpe_states(a, Ng, x_max, n_points, d_prep):
    return transfer_states(DoubleWellSpec(a=a, Ng=Ng), Grid1D(-x_max, x_max, n_points), D_prep=d_prep)


@lru_cache(maxsize=4)
def _gpe_splitting(a, x_max, n_points):
    return tunnel_splitting(DoubleWellSpec(a=a), Grid1D(-x_max, x_max, n_points))


@lru_cache(maxsize=16)
def _gpe_calibration(a, Ng, x_max, n_points, dt):
    return calibrate(DoubleWellSpec(a=a, Ng=Ng), Grid1D(-x_max, x_max, n_points), Ng, dt=dt)


def make_tier(tier: str, interaction: float, num: Numerics = None, calibration=None):
    num = num or Numerics()
    if tier == "two-mode":
        return TwoModeTier(interaction, num)
    if tier == "dimer":
        return DimerTier(interaction, num)
    if tier == "gpe":
        return GpeTier(interaction, num, calibration)
    raise ValueError(f"unknown tier {tier!r}; expected one of {TIERS}")


# --- cells ----------------------------------------------------------------

def _flag(seg: Segment, T_over: float, strategy: str) -> str:
    if strategy == "uncontrolled" and T_over >= 1.0 and seg.min_left > 0.5:
        return "trapped"
    return ""


def strategy_control(model, strategy: str, T: float):
    if strategy == "uncontrolled":
        return None
    if strategy == "ccp-feedback":
        return model.feedback()
    if strategy == "ccp-scheduled":
        return model.scheduled(T, "hamiltonian-cos")
    if strategy == "ccp-scheduled-cos2":
        return model.scheduled(T, "paper-cos2")
    raise ValueError(f"strategy {strategy!r} has no direct control")


def crab_guess(model, strategy: str, T: float) -> ControlPulse:
    num = model.num
    if strategy == "crab-constrained":
        return constrained_guess(num.constraint_D0 * model.unit, num.constraint_DT * model.unit, T, model.dt)
    if num.crab_guess == "zero":
        return constant_pulse(0.0, T, model.dt)
    if num.crab_guess != "ccp":
        raise ValueError(f"unknown CRAB guess {num.crab_guess!r}")
    seg = model.run(model.feedback(), T)
    d = seg.detunings
    return ControlPulse(d.times, d.values, "ccp-feedback")


def _row(model, strategy, interaction, T_over, seed, eps, S, dep, flag):
    return {"tier": model.name, "strategy": strategy, "interaction": float(interaction),
            "T_over_TqslL": float(T_over), "epsilon": float(eps), "path_length": float(S),
            "depletion_max": None if dep is None else float(dep), "J_eff": float(model.J_eff),
            "seed": int(seed), "flag": flag}


def run_cell(model, strategy: str, T_over: float, seed: int = 0, optimizer: OptimizerConfig = None,
             series: bool = False):
    """Simulate one (strategy, T) cell.  Returns (row, extra)."""
    T = T_over * model.t_qsl
    interaction = _interaction(model)
    if strategy in CRAB_STRATEGIES:
        cfg = replace(optimizer or OptimizerConfig(), seed=seed)
        guess = crab_guess(model, strategy, T)
        rep = crab_optimize(model.problem(T, guess), cfg)
        d = rep.diagnostics
        row = _row(model, strategy, interaction, T_over, seed, rep.best_cost, d["path_length"],
                   d.get("depletion_max"), rep.flag)
        return row, {"report": rep}
    seg = model.run(strategy_control(model, strategy, T), T, series=series)
    row = _row(model, strategy, interaction, T_over, seed, seg.epsilon, seg.path_length, seg.depletion_max,
               _flag(seg, T_over, strategy))
    return row, {"segment": seg}


def run_chain(model, strategy: str, T_overs, seed: int = 0) -> list:
    """Autonomous strategies: one trajectory, read out at each (sorted) T."""
    if strategy not in AUTONOMOUS:
        raise ValueError(f"strategy {strategy!r} depends on T and cannot be chained")
    control = strategy_control(model, strategy, 0.0)
    rows, state, t_prev = [], None, 0.0
    S, min_left, dep = 0.0, 1.0, None
    for T_over in sorted(T_overs):
        T = T_over * model.t_qsl
        seg = model.run(control, T - t_prev, state)
        state, t_prev = seg.final, T
        S += seg.path_length
        min_left = min(min_left, seg.min_left)
        if seg.depletion_max is not None:
            dep = seg.depletion_max if dep is None else max(dep, seg.depletion_max)
        acc = replace(seg, path_length=S, min_left=min_left, depletion_max=dep)
        rows.append(_row(model, strategy, _interaction(model), T_over, seed, seg.epsilon, S, dep,
                         _flag(acc, T_over, strategy)))
    return rows


def _interaction(model) -> float:
    if model.name == "gpe":
        return model.spec.Ng
    return model.params.Lam


# --- T_QSL and Rabi fits -----------------------------------------------------

@dataclass
class TqslEstimate:
    strategy: str
    interaction: float
    threshold: float
    raw: Optional[float]          # first grid T (units of T_QSL^L) with eps <= threshold
    refined: Optional[float]      # after bisection
    geodesic: Optional[float]     # refined * (pi/2) / arccos(sqrt(threshold))
    min_epsilon: float
    n_refinements: int = 0
    flag: str = ""


def extract_tqsl(result, tier: str, strategy: str, interaction: float, threshold: float = 0.01,
                 simulate: Optional[Callable[[float], float]] = None, max_steps: int = 10,
                 tol: float = 1e-7) -> TqslEstimate:
    """Smallest T with eps(T) <= threshold, refined by bisection using ``simulate(T_over) -> eps``."""
    rows = [r for r in (result.rows if hasattr(result, "rows") else result)
            if r["tier"] == tier and r["strategy"] == strategy and r["interaction"] == interaction
            and np.isfinite(r["epsilon"])]
    if not rows:
        raise ValueError(f"no rows for {tier}/{strategy}/{interaction}")
    pts = sorted({(r["T_over_TqslL"], r["epsilon"]) for r in rows})
    Ts = [p[0] for p in pts]
    eps = [p[1] for p in pts]
    min_eps = float(min(eps))
    hit = next((k for k, e in enumerate(eps) if e <= threshold), None)
    if hit is None:
        return TqslEstimate(strategy, interaction, threshold, None, None, None, min_eps, 0, "no-crossing")
    raw = Ts[hit]
    lo = Ts[hit - 1] if hit > 0 else 0.0
    hi = raw
    steps = 0
    if simulate is not None and hit > 0:
        while steps < max_steps and hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if simulate(mid) <= threshold:
                hi = mid
            else:
                lo = mid
            steps += 1
    geo = hi * (math.pi / 2) / math.acos(math.sqrt(threshold))
    return TqslEstimate(strategy, interaction, threshold, raw, hi, geo, min_eps, steps, "")


def rabi_fit_rows(rows, T_range=(0.2, 1.2), t_qsl: float = 1.0) -> Optional[RabiFit]:
    pts = sorted({(r["T_over_TqslL"], r["epsilon"]) for r in rows
                  if T_range[0] - 1e-12 <= r["T_over_TqslL"] <= T_range[1] + 1e-12 and np.isfinite(r["epsilon"])})
    if len(pts) < 5:
        return None
    T = np.array([p[0] for p in pts]) * t_qsl
    return fit_rabi([p[1] for p in pts], T)


# --- sweeps -----------------------------------------------------------------

@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list
    calibration: dict = field(default_factory=dict)
    tqsl: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    optimizations: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r["flag"].startswith("error"))

    def select(self, strategy=None, interaction=None) -> list:
        return [r for r in self.rows if (strategy is None or r["strategy"] == strategy)
                and (interaction is None or r["interaction"] == interaction)]

    def to_csv(self) -> str:
        return rows_to_csv(self.rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.12g" % v
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CSV_HEADER])
    return buf.getvalue()


def _row_key(r):
    return (r["tier"], r["strategy"], r["interaction"], r["T_over_TqslL"], r["seed"])


def _failed_rows(tier, strategy, interaction, T_overs, seed, exc) -> list:
    msg = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
    return [{"tier": tier, "strategy": strategy, "interaction": float(interaction), "T_over_TqslL": float(T),
             "epsilon": math.nan, "path_length": math.nan, "depletion_max": None, "J_eff": math.nan,
             "seed": int(seed), "flag": msg} for T in T_overs]


def _execute(task, spec: SweepSpec, calibration: dict):
    kind, strategy, interaction, T_overs, seed = task
    try:
        model = make_tier(spec.tier, interaction, spec.numerics, calibration.get(interaction))
        if kind == "chain":
            return run_chain(model, strategy, T_overs, seed), None
        row, extra = run_cell(model, strategy, T_overs[0], seed, spec.optimizer)
        rep = extra.get("report")
        opt = None
        if rep is not None:
            opt = {"strategy": strategy, "interaction": float(interaction), "T_over_TqslL": float(T_overs[0]),
                   "seed": seed, "guess_cost": rep.guess_cost, "best_cost": rep.best_cost,
                   "reduction": rep.reduction, "n_evals": rep.n_evals, "flag": rep.flag}
        return [row], opt
    except (BJJError, ValueError, ArithmeticError) as exc:
        return _failed_rows(spec.tier, strategy, interaction, T_overs, seed, exc), None


def _execute_tqsl(group, spec: SweepSpec, calibration: dict, rows: list):
    strategy, interaction = group
    num = spec.numerics
    try:
        model = make_tier(spec.tier, interaction, num, calibration.get(interaction))

        def simulate(T_over):
            return run_cell(model, strategy, T_over, spec.seeds[0])[0]["epsilon"]

        est = extract_tqsl(rows, spec.tier, strategy, interaction, num.threshold, simulate, num.bisection_steps)
    except (BJJError, ValueError, ArithmeticError) as exc:
        est = TqslEstimate(strategy, interaction, num.threshold, None, None, None, math.nan, 0,
                           f"error: {type(exc).__name__}: {exc}")
    return asdict(est)


def _map(fn, items, jobs: int, *args):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
            return list(pool.map(fn, items, *[[a] * len(items) for a in args]))
    return [fn(it, *args) for it in items]


def _calibrate_one(Ng, num: Numerics):
    return _gpe_calibration(num.a, Ng, num.x_max, num.n_points, num.dt_gpe)


def run_sweep(spec: SweepSpec, jobs: Optional[int] = None, tqsl: bool = True) -> SweepResult:
    """Run every (strategy, interaction, T, seed) cell of ``spec``.

    Per-cell failures become rows flagged ``error: ...``.  Rows are sorted by
    (tier, strategy, interaction, T, seed) whatever the completion order.
    """
    t0 = time.perf_counter()
    jobs = jobs or os.cpu_count() or 1
    interactions = sorted({float(x) for x in spec.interactions})
    T_overs = sorted({float(T) for T in spec.T_values})

    calibration = {}
    if spec.tier == "gpe":
        cals = _map(_calibrate_one, interactions, jobs, spec.numerics)
        calibration = dict(zip(interactions, cals))

    tasks = []
    for strategy in spec.strategies:
        for g in interactions:
            if strategy in CRAB_STRATEGIES:
                tasks += [("cell", strategy, g, [T], s) for T in T_overs for s in spec.seeds]
            elif strategy in AUTONOMOUS:
                tasks.append(("chain", strategy, g, T_overs, spec.seeds[0]))
            else:
                tasks += [("cell", strategy, g, [T], spec.seeds[0]) for T in T_overs]
    out = _map(_execute, tasks, jobs, spec, calibration)
    rows = sorted((r for rs, _ in out for r in rs), key=_row_key)
    opts = sorted((o for _, o in out if o is not None),
                  key=lambda o: (o["strategy"], o["interaction"], o["T_over_TqslL"], o["seed"]))

    result = SweepResult(spec, rows, {g: c.to_dict() for g, c in calibration.items()}, optimizations=opts)
    groups = [(s, g) for s in spec.strategies for g in interactions if s not in CRAB_STRATEGIES]
    if tqsl and groups:
        result.tqsl = _map(_execute_tqsl, groups, jobs, spec, calibration, rows)
    for s in spec.strategies:
        for g in interactions:
            model_tq = calibration[g].t_qsl_lin if g in calibration else math.pi / (2 * spec.numerics.J)
            fit = rabi_fit_rows(result.select(s, g), spec.numerics.fit_range, model_tq)
            if fit is not None:
                result.fits.append({"strategy": s, "interaction": g, "J_fit": fit.J, "r2": fit.r2,
                                    "poor_fit": fit.poor, "T_range": list(spec.numerics.fit_range)})
    result.runtime = time.perf_counter() - t0
    return result


def summary_document(result: SweepResult, config_hash: str = "", config: Optional[dict] = None) -> dict:
    spec = result.spec
    return {
        "version": __version__,
        "config_hash": config_hash,
        "config": config,
        "tier": spec.tier,
        "seeds": list(spec.seeds),
        "threshold": spec.numerics.threshold,
        "n_rows": len(result.rows),
        "n_failed": result.n_failed,
        "calibration": [dict(v) for _, v in sorted(result.calibration.items())],
        "tqsl": result.tqsl,
        "fits": result.fits,
        "optimizations": result.optimizations,
    }
