"""Control pulses for the tilt/detuning D(t).

Sign and scale conventions: in the two-mode and dimer models the detuning
enters as ``D * sigma_z`` (``D * (n_L - n_R)``), and the mean-field
nonlinearity contributes ``(U_eff / 2) * z * sigma_z``.  The compensating
control pulse therefore reads ``D = -dU - (U_eff / 2) * z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

PROVENANCES = ("constant", "ccp-scheduled", "ccp-feedback", "crab", "custom")
CCP_FORMS = ("hamiltonian-cos", "paper-cos2")


def time_grid(T: float, dt: float) -> np.ndarray:
    """Uniform grid on [0, T] whose spacing is the largest value <= dt dividing T."""
    if not (T > 0 and np.isfinite(T)):
        raise ValueError(f"duration must be positive and finite, got {T}")
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    return np.linspace(0.0, T, n + 1)


@dataclass(frozen=True)
class ControlPulse:
    """Real detuning samples on a uniform grid; linear interpolation in between."""

    times: np.ndarray
    values: np.ndarray
    provenance: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise ValueError("pulse needs matching 1D time/value arrays with >= 2 samples")
        if not np.all(np.isfinite(values)):
            raise ValueError("pulse values must be finite")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise ValueError("pulse times must be strictly increasing")
        if np.ptp(steps) > 1e-9 * max(1.0, times[-1]):
            raise ValueError("pulse times must be uniform")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def covers(self, T: float) -> bool:
        return self.times[0] <= 1e-12 and self.times[-1] >= T * (1 - 1e-12)

    def reversed(self) -> "ControlPulse":
        """Pulse played backwards in time, D'(t) = D(T - t)."""
        return ControlPulse(self.times, self.values[::-1].copy(), self.provenance, dict(self.meta))

    def scaled(self, factor: float) -> "ControlPulse":
        return ControlPulse(self.times, factor * self.values, self.provenance, dict(self.meta))

    def save(self, path) -> None:
        """Write the two-column ``t D`` text format."""
        header = f"provenance={self.provenance}\nt D"
        np.savetxt(path, np.column_stack([self.times, self.values]), fmt="%.17g", header=header)

    @classmethod
    def load(cls, path, provenance: Optional[str] = None) -> "ControlPulse":
        path = Path(path)
        prov = "custom"
        with path.open() as fh:
            first = fh.readline()
        if first.startswith("# provenance="):
            prov = first.split("=", 1)[1].strip()
        data = np.loadtxt(path, ndmin=2)
        return cls(data[:, 0], data[:, 1], provenance or prov)


@dataclass(frozen=True)
class FeedbackCCP:
    """In-loop compensating pulse ``D = -offset - gain * z`` using the realized imbalance."""

    gain: float
    offset: float = 0.0

    def __call__(self, z: float) -> float:
        return -self.offset - self.gain * z

    @classmethod
    def for_params(cls, params) -> "FeedbackCCP":
        return cls(gain=0.5 * params.U_eff, offset=params.dU)


def detuning(control, t: float, z: float) -> float:
    """Detuning from a pulse, a feedback controller, or ``None`` (D = 0)."""
    if control is None:
        return 0.0
    if isinstance(control, FeedbackCCP):
        return control(z)
    return float(control(t))


def constant_pulse(value: float, T: float, dt: float) -> ControlPulse:
    times = time_grid(T, dt)
    return ControlPulse(times, np.full_like(times, float(value)), "constant")


def ccp_scheduled(params, T: float, dt: float, form: str = "hamiltonian-cos") -> ControlPulse:
    """Open-loop compensating pulse assuming the state follows the linear Rabi geodesic.

    ``hamiltonian-cos`` schedules the imbalance as cos(2Jt) (what this package's
    Hamiltonian produces); ``paper-cos2`` uses cos^2(Jt).
    """
    times = time_grid(T, dt)
    if form == "hamiltonian-cos":
        z = np.cos(2 * params.J * times)
    elif form == "paper-cos2":
        z = np.cos(params.J * times) ** 2
    else:
        raise ValueError(f"unknown CCP form {form!r}; expected one of {CCP_FORMS}")
    values = -params.dU - 0.5 * params.U_eff * z
    return ControlPulse(times, values, "ccp-scheduled", {"form": form})


def ccp_feedback(current_z: float, params) -> float:
    """Compensating detuning for the instantaneous imbalance ``current_z``."""
    if abs(current_z) > 1 + 1e-6:
        raise ValueError(f"imbalance {current_z} outside [-1, 1]")
    return FeedbackCCP.for_params(params)(current_z)


def constrained_guess(D0: float, DT: float, T: float, dt: float = None) -> ControlPulse:
    """Linear ramp from D0 to DT, the CRAB starting point under boundary constraints."""
    times = time_grid(T, dt if dt is not None else T / 1000)
    values = D0 + (DT - D0) * times / T
    values[-1] = DT
    return ControlPulse(times, values, "custom", {"guess": "ramp"})


def sin2_envelope(times: np.ndarray, T: float) -> np.ndarray:
    env = np.sin(np.pi * times / T) ** 2
    env[0] = 0.0
    env[-1] = 0.0
    return env


@dataclass(frozen=True)
class CrabAnsatz:
    """Randomized truncated Fourier correction on top of a guess pulse."""

    guess: ControlPulse
    frequencies: np.ndarray
    d_max: float
    envelope: Callable[[np.ndarray, float], np.ndarray] = sin2_envelope
    seed: Optional[int] = None

    @classmethod
    def draw(cls, guess: ControlPulse, n_modes: int = 5, seed: int = 0, spread: float = 0.5,
             d_max: float = 20.0, rng: Optional[np.random.Generator] = None, **kw) -> "CrabAnsatz":
        if n_modes < 1:
            raise ValueError("need at least one CRAB mode")
        rng = rng if rng is not None else np.random.default_rng(seed)
        r = rng.uniform(-spread, spread, n_modes)
        k = np.arange(1, n_modes + 1)
        freqs = 2 * np.pi * k / guess.T * (1 + r)
        return cls(guess, freqs, float(d_max), seed=seed, **kw)

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)

    @property
    def T(self) -> float:
        return self.guess.T

    def clamp_free_bound(self) -> float:
        """Coefficient 2-norm below which the +-d_max clamp cannot activate."""
        head = self.d_max - np.max(np.abs(self.guess.values))
        return max(0.0, head) / np.sqrt(2 * self.n_modes)

    def correction(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (2 * self.n_modes,):
            raise ValueError(f"expected {2 * self.n_modes} coefficients, got {coeffs.shape}")
        t = self.guess.times
        A, B = coeffs[: self.n_modes], coeffs[self.n_modes:]
        phases = np.outer(t, self.frequencies)
        series = np.sin(phases) @ A + np.cos(phases) @ B
        return self.envelope(t, self.T) * series

    def evaluate(self, coeffs) -> ControlPulse:
        values = self.guess.values + self.correction(coeffs)
        values = np.clip(values, -self.d_max, self.d_max)
        meta = {"frequencies": self.frequencies.tolist(), "seed": self.seed}
        return ControlPulse(self.guess.times, values, "crab", meta)


def crab_evaluate(ansatz: CrabAnsatz, coeffs) -> ControlPulse:
    return ansatz.evaluate(coeffs)
