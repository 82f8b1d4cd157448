"""CRAB pulse optimization: Nelder-Mead over randomized Fourier coefficients."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .control import ControlPulse, CrabAnsatz
from .errors import BJJError
from .gpe import DoubleWellSpec, GpeField, Grid1D, gpe_fidelity, split_step_propagate
from .many_body import DimerParams, DimerState, propagate_dimer
from .two_mode import TwoModeParams, TwoModeState, path_length, propagate_two_mode

TIERS = ("two-mode", "gpe", "dimer")


class ObjectiveError(BJJError):
    """The cost function returned a non-finite value."""


class _BudgetExhausted(Exception):
    pass


class Objective:
    """Counts evaluations and remembers the best point seen."""

    def __init__(self, evaluator: Callable[[np.ndarray], float], max_evals: Optional[int] = None,
                 seed=None):
        self.evaluator = evaluator
        self.max_evals = max_evals
        self.seed = seed
        self.n_evals = 0
        self.best_cost = math.inf
        self.best_x = None
        self.trace = []  # best-so-far after each evaluation

    def __call__(self, x) -> float:
        if self.max_evals is not None and self.n_evals >= self.max_evals:
            raise _BudgetExhausted
        x = np.array(x, dtype=float)
        f = float(self.evaluator(x))
        self.n_evals += 1
        if not math.isfinite(f):
            raise ObjectiveError(f"objective returned {f} at evaluation {self.n_evals} (x = {x.tolist()})")
        if f < self.best_cost:
            self.best_cost, self.best_x = f, x.copy()
        self.trace.append(self.best_cost)
        return f


@dataclass
class OptimizerConfig:
    max_evals: int = 2000       # per restart
    n_restarts: int = 8
    simplex_scale: float = 0.5  # in units of the problem's control scale
    xtol: float = 1e-8
    target: float = 1e-6
    seed: int = 0
    n_modes: int = 5
    spread: float = 0.5
    penalty: float = 0.0        # weight of the quadratic clamp penalty

    def __post_init__(self):
        if self.max_evals < 0 or self.n_restarts < 1 or self.n_modes < 1:
            raise ValueError("max_evals must be >= 0; n_restarts and n_modes >= 1")
        if not (self.simplex_scale > 0 and self.xtol > 0):
            raise ValueError("simplex_scale and xtol must be positive")


@dataclass
class NelderMeadResult:
    x: np.ndarray
    cost: float
    trace: list
    n_evals: int
    reason: str


def nelder_mead(objective, x0, config: OptimizerConfig = None) -> NelderMeadResult:
    """Downhill simplex with coefficients (1, 2, 0.5, 0.5).

    Stops on budget, on simplex spread below ``xtol`` or on cost below ``target``.
    """
    config = config or OptimizerConfig()
    if not isinstance(objective, Objective):
        objective = Objective(objective)
    objective.max_evals = objective.n_evals + config.max_evals
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial point must be finite")
    n = x0.size
    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    reason = "max_evals"
    try:
        sim = np.vstack([x0] + [x0 + config.simplex_scale * e for e in np.eye(n)])
        fs = np.array([objective(p) for p in sim])
        while True:
            order = np.argsort(fs, kind="stable")
            sim, fs = sim[order], fs[order]
            if fs[0] < config.target:
                reason = "target"
                break
            if np.max(np.abs(sim[1:] - sim[0])) < config.xtol:
                reason = "xtol"
                break
            c = sim[:-1].mean(axis=0)
            xr = c + alpha * (c - sim[-1])
            fr = objective(xr)
            if fr < fs[0]:
                xe = c + gamma * (xr - c)
                fe = objective(xe)
                sim[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
                continue
            if fr < fs[-2]:
                sim[-1], fs[-1] = xr, fr
                continue
            if fr < fs[-1]:
                xc = c + rho * (xr - c)
                fc = objective(xc)
                if fc <= fr:
                    sim[-1], fs[-1] = xc, fc
                    continue
            else:
                xc = c + rho * (sim[-1] - c)
                fc = objective(xc)
                if fc < fs[-1]:
                    sim[-1], fs[-1] = xc, fc
                    continue
            for i in range(1, n + 1):
                sim[i] = sim[0] + sigma * (sim[i] - sim[0])
                fs[i] = objective(sim[i])
    except _BudgetExhausted:
        pass
    if objective.best_x is None:
        return NelderMeadResult(x0.copy(), math.nan, [], 0, "max_evals")
    return NelderMeadResult(objective.best_x.copy(), objective.best_cost, list(objective.trace),
                            objective.n_evals, reason)


# --- optimization problems, one per model tier ----------------------------

@dataclass
class TwoModeProblem:
    params: TwoModeParams
    T: float
    guess: ControlPulse
    dt: float = 1e-3
    d_max: float = 20.0
    tier: str = "two-mode"

    @property
    def scale(self) -> float:
        return self.params.J

    def simulate(self, pulse):
        return propagate_two_mode(TwoModeState.left(), self.params, pulse, T=self.T, dt=self.dt)

    def cost(self, pulse) -> float:
        return float(self.simulate(pulse).infidelity()[-1])

    def diagnostics(self, pulse) -> dict:
        tr = self.simulate(pulse)
        return {"epsilon": float(tr.infidelity()[-1]), "path_length": path_length(tr).path_length}

    def describe(self) -> dict:
        return {"J": self.params.J, "U_eff": self.params.U_eff, "dU": self.params.dU,
                "Lambda": self.params.Lam, "dt": self.dt}


@dataclass
class DimerProblem:
    params: DimerParams
    T: float
    guess: ControlPulse
    state0: DimerState
    target: DimerState
    dt: float = 2e-3
    d_max: float = 20.0
    tier: str = "dimer"

    @property
    def scale(self) -> float:
        return self.params.J

    def simulate(self, pulse):
        return propagate_dimer(self.state0, self.params, pulse, T=self.T, dt=self.dt, stride=10 ** 9)

    def cost(self, pulse) -> float:
        return float(self.simulate(pulse).rdm_infidelity(self.target))

    def diagnostics(self, pulse) -> dict:
        tr = self.simulate(pulse)
        return {"epsilon": float(tr.rdm_infidelity(self.target)), "path_length": tr.path_length,
                "depletion_max": tr.depletion_max}

    def describe(self) -> dict:
        p = self.params
        return {"N": p.N, "J": p.J, "u": p.u, "dU": p.dU, "Lambda": p.Lam, "dt": self.dt}


@dataclass
class GpeProblem:
    spec: DoubleWellSpec
    T: float
    guess: ControlPulse
    state0: GpeField
    target: GpeField
    J_lin: float
    dt: float = 2e-3
    d_max: float = 1.0
    tier: str = "gpe"

    @property
    def scale(self) -> float:
        # GPE tilt is the full well-energy difference, 2x the two-mode detuning
        return 2.0 * self.J_lin

    def simulate(self, pulse, track_path=False):
        return split_step_propagate(self.state0, self.spec, pulse, T=self.T, dt=self.dt,
                                    stride=10 ** 9, track_path=track_path)

    def cost(self, pulse) -> float:
        return gpe_fidelity(self.simulate(pulse).final, self.target)[1]

    def diagnostics(self, pulse) -> dict:
        tr = self.simulate(pulse, track_path=True)
        return {"epsilon": gpe_fidelity(tr.final, self.target)[1], "path_length": tr.path_length}

    def describe(self) -> dict:
        g = self.state0.grid
        return {"a": self.spec.a, "Ng": self.spec.Ng, "J_lin": self.J_lin, "dt": self.dt,
                "grid": [g.x_min, g.x_max, g.n_points]}


class _CrabCost:
    def __init__(self, problem, ansatz: CrabAnsatz, penalty: float):
        self.problem, self.ansatz, self.penalty = problem, ansatz, penalty

    def pulse(self, x) -> ControlPulse:
        return self.ansatz.evaluate(self.problem.scale * np.asarray(x))

    def __call__(self, x) -> float:
        cost = self.problem.cost(self.pulse(x))
        if self.penalty:
            raw = self.ansatz.guess.values + self.ansatz.correction(self.problem.scale * np.asarray(x))
            excess = np.clip(np.abs(raw) - self.ansatz.d_max, 0.0, None) / self.problem.scale
            cost += self.penalty * float(np.mean(excess ** 2))
        return cost


def draw_ansatz(problem, config: OptimizerConfig, restart: int) -> CrabAnsatz:
    rng = np.random.default_rng([config.seed, restart])
    return CrabAnsatz.draw(problem.guess, config.n_modes, seed=config.seed, spread=config.spread,
                           d_max=problem.d_max, rng=rng)


def _run_restart(problem, config: OptimizerConfig, restart: int) -> dict:
    ansatz = draw_ansatz(problem, config, restart)
    fn = _CrabCost(problem, ansatz, config.penalty)
    res = nelder_mead(Objective(fn, seed=config.seed), np.zeros(2 * config.n_modes), config)
    return {"restart": restart, "best_cost": res.cost, "x": res.x.tolist(),
            "frequencies": ansatz.frequencies.tolist(), "n_evals": res.n_evals,
            "trace": res.trace, "reason": res.reason}


@dataclass
class OptimizationReport:
    tier: str
    params: dict
    T: float
    seed: int
    best_cost: float
    coefficients: list
    frequencies: list
    n_evals: int
    restart_traces: list
    guess_cost: float
    improvement: float
    flag: str
    best_restart: int = -1
    diagnostics: dict = field(default_factory=dict)
    pulse: Optional[ControlPulse] = field(default=None, repr=False)

    @property
    def reduction(self) -> float:
        return self.guess_cost / self.best_cost if self.best_cost > 0 else math.inf

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("pulse")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def crab_optimize(problem, config: OptimizerConfig = None, jobs: int = 1) -> OptimizationReport:
    """Run ``n_restarts`` independent simplex searches, each on a fresh frequency draw.

    Every restart starts from zero coefficients (the guess).  Coefficients in
    the report are absolute Fourier amplitudes of the correction.
    """
    config = config or OptimizerConfig()
    if problem.tier not in TIERS:
        raise ValueError(f"unknown tier {problem.tier!r}")
    guess_cost = float(problem.cost(problem.guess))
    if not math.isfinite(guess_cost):
        raise ObjectiveError("guess pulse gives a non-finite cost")
    if config.max_evals == 0:
        runs = []
    elif jobs > 1 and config.n_restarts > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.n_restarts)) as pool:
            runs = list(pool.map(_run_restart, [problem] * config.n_restarts, [config] * config.n_restarts,
                                 range(config.n_restarts)))
    else:
        runs = [_run_restart(problem, config, r) for r in range(config.n_restarts)]

    best_cost, best_pulse, coeffs, freqs, best_r = guess_cost, problem.guess, [0.0] * (2 * config.n_modes), [], -1
    for run in runs:
        if run["best_cost"] < best_cost:
            best_cost, best_r = run["best_cost"], run["restart"]
            coeffs = (problem.scale * np.asarray(run["x"])).tolist()
            freqs = run["frequencies"]
    if best_r >= 0:
        ansatz = draw_ansatz(problem, config, best_r)
        best_pulse = ansatz.evaluate(np.asarray(coeffs))
        # report the plain infidelity of the pulse actually returned
        best_cost = float(problem.cost(best_pulse))
    improvement = max(0.0, guess_cost - best_cost)
    flag = "" if improvement > 0 else "no-improvement"
    diag = problem.diagnostics(best_pulse)
    traces = [{"restart": r["restart"], "n_evals": r["n_evals"], "reason": r["reason"],
               "best_cost": r["best_cost"], "trace": r["trace"]} for r in runs]
    return OptimizationReport(problem.tier, problem.describe(), float(problem.T), config.seed, best_cost,
                              coeffs, freqs, int(sum(r["n_evals"] for r in runs)), traces, guess_cost,
                              improvement, flag, best_r, diag, best_pulse)
