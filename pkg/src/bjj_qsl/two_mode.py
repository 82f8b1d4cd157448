"""Two-mode (nonlinear two-level) model of the Josephson junction.

State amplitudes are ordered (left, right).  With hbar = 1 the generator is

    H(t, z) = -J sigma_x + [D(t) + dU + (U_eff / 2) z] sigma_z,

where z = |c_L|^2 - |c_R|^2.  ``U_eff`` is the mean-field interaction energy
U*N, so Lambda = U_eff / (2J) has its usual self-trapping threshold at 2.
The identity part of the Hamiltonian only adds a global phase and is dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .control import ControlPulse, FeedbackCCP, detuning, time_grid
from .errors import IntegratorError, SingularityError

POLE_EPS = 1e-12


@dataclass(frozen=True)
class TwoModeParams:
    J: float = 1.0
    U_eff: float = 0.0
    dU: float = 0.0

    def __post_init__(self):
        if not self.J > 0:
            raise ValueError("tunnel coupling J must be positive")

    @classmethod
    def from_lambda(cls, Lam: float, J: float = 1.0, dU: float = 0.0) -> "TwoModeParams":
        return cls(J=J, U_eff=2.0 * J * Lam, dU=dU)

    @property
    def Lam(self) -> float:
        return self.U_eff / (2.0 * self.J)

    @property
    def t_qsl(self) -> float:
        """Linear speed limit pi / (2J)."""
        return math.pi / (2.0 * self.J)


@dataclass(frozen=True)
class TwoModeState:
    c_left: complex
    c_right: complex

    @classmethod
    def left(cls) -> "TwoModeState":
        return cls(1.0 + 0j, 0j)

    @classmethod
    def right(cls) -> "TwoModeState":
        return cls(0j, 1.0 + 0j)

    @classmethod
    def from_angles(cls, theta: float, phi: float) -> "TwoModeState":
        return cls(complex(math.cos(theta / 2)), math.sin(theta / 2) * complex(math.cos(phi), math.sin(phi)))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.c_left, self.c_right], dtype=complex)

    @property
    def norm(self) -> float:
        return math.sqrt(abs(self.c_left) ** 2 + abs(self.c_right) ** 2)

    @property
    def z(self) -> float:
        return abs(self.c_left) ** 2 - abs(self.c_right) ** 2


@dataclass
class TwoModeTrajectory:
    times: np.ndarray
    amplitudes: np.ndarray  # shape (n, 2)
    detunings: np.ndarray   # applied D at each grid time

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k) -> TwoModeState:
        cl, cr = self.amplitudes[k]
        return TwoModeState(complex(cl), complex(cr))

    @property
    def final(self) -> TwoModeState:
        return self[-1]

    @property
    def z(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p[:, 0] - p[:, 1]

    @property
    def norm_error(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.amplitudes, axis=1) - 1.0)))

    def angles(self):
        out = np.array([bloch_angles(self[k]) for k in range(len(self))])
        return out[:, 0], out[:, 1]

    def infidelity(self, target: Optional[TwoModeState] = None) -> np.ndarray:
        """1 - |<target|psi(t)>|^2 along the trajectory (default target: right mode)."""
        tgt = (target or TwoModeState.right()).vector
        return np.clip(1.0 - np.abs(self.amplitudes @ tgt.conj()) ** 2, 0.0, 1.0)


def propagate_two_mode(state0: TwoModeState, params: TwoModeParams, control=None,
                       T: float = None, dt: float = None, norm_tol: float = 1e-9) -> TwoModeTrajectory:
    """RK4 integration of the (possibly nonlinear) two-mode equations.

    ``control`` is a :class:`ControlPulse`, a :class:`FeedbackCCP` or ``None``.
    The step is shrunk if needed so that it divides ``T``.
    """
    if T is None:
        raise ValueError("duration T is required")
    if dt is None:
        dt = 1e-3 / params.J
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if isinstance(control, ControlPulse) and not control.covers(T):
        raise ValueError("pulse does not cover [0, T]")
    times = time_grid(T, dt)
    h = times[1] - times[0]
    n = len(times)
    amps = np.empty((n, 2), dtype=complex)
    J, dU, g = params.J, params.dU, 0.5 * params.U_eff
    feedback = isinstance(control, FeedbackCCP)
    if feedback:
        fb_off, fb_gain = control.offset, control.gain
        D0 = Dm = D1 = np.zeros(n)
    else:
        # pulse samples at step starts, midpoints and ends, looked up once
        D0 = np.array([detuning(control, t, 0.0) for t in times]) if control is None \
            else np.asarray(control(times), dtype=float)
        Dm = np.zeros(n) if control is None else np.asarray(control(times + 0.5 * h), dtype=float)
        D1 = np.roll(D0, -1)
    D0, Dm, D1 = D0.tolist(), Dm.tolist(), D1.tolist()
    mj = 1j * J

    def f(cl, cr, D):
        z = (cl.real * cl.real + cl.imag * cl.imag) - (cr.real * cr.real + cr.imag * cr.imag)
        if feedback:
            D = -fb_off - fb_gain * z
        d = -1j * (D + dU + g * z)
        return d * cl + mj * cr, mj * cl - d * cr

    cl, cr = complex(state0.c_left), complex(state0.c_right)
    out = [(cl, cr)]
    h2, h6 = 0.5 * h, h / 6
    for k in range(n - 1):
        a1, b1 = f(cl, cr, D0[k])
        a2, b2 = f(cl + h2 * a1, cr + h2 * b1, Dm[k])
        a3, b3 = f(cl + h2 * a2, cr + h2 * b2, Dm[k])
        a4, b4 = f(cl + h * a3, cr + h * b3, D1[k])
        cl = cl + h6 * (a1 + 2 * a2 + 2 * a3 + a4)
        cr = cr + h6 * (b1 + 2 * b2 + 2 * b3 + b4)
        out.append((cl, cr))
    amps[:] = out
    p = np.abs(amps) ** 2
    dets = np.array([detuning(control, t, zk) for t, zk in zip(times, p[:, 0] - p[:, 1])]) if feedback \
        else np.array(D0)
    if not np.all(np.isfinite(amps)):
        raise IntegratorError("non-finite amplitudes during two-mode propagation")
    traj = TwoModeTrajectory(times, amps, dets)
    drift = traj.norm_error
    if drift > norm_tol:
        raise IntegratorError(f"norm drift {drift:.3e} exceeds {norm_tol:.1e}; reduce dt")
    return traj


def bloch_angles(state: TwoModeState):
    """Polar angle theta in [0, pi] and relative phase phi in (-pi, pi]."""
    pl, pr = abs(state.c_left) ** 2, abs(state.c_right) ** 2
    n = pl + pr
    z = min(1.0, max(-1.0, (pl - pr) / n))
    theta = math.acos(z)
    if 2 * math.sqrt(pl * pr) / n < POLE_EPS:
        return theta, 0.0
    w = state.c_left.conjugate() * state.c_right
    phi = math.atan2(w.imag, w.real)
    if phi <= -math.pi:
        phi = math.pi
    return theta, phi


@dataclass
class BlochPath:
    times: np.ndarray
    thetas: np.ndarray
    phis: np.ndarray
    increments: np.ndarray
    path_length: float

    @property
    def speeds(self) -> np.ndarray:
        return self.increments / np.diff(self.times)


def fubini_study(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic distance s with |<a|b>|^2 = cos^2(s/2), for normalized a, b."""
    ov = np.vdot(a, b)
    perp = b - ov * a
    return 2.0 * math.atan2(float(np.linalg.norm(perp)), abs(ov))


def path_length(trajectory) -> BlochPath:
    """Accumulated Fubini-Study length S of a sampled trajectory."""
    amps = np.asarray(trajectory.amplitudes)
    if len(amps) < 2:
        raise ValueError("path length needs at least two samples")
    amps = amps / np.linalg.norm(amps, axis=1, keepdims=True)
    inc = np.array([fubini_study(amps[k], amps[k + 1]) for k in range(len(amps) - 1)])
    thetas, phis = trajectory.angles()
    return BlochPath(np.asarray(trajectory.times), thetas, phis, inc, float(inc.sum()))


def bloch_ode_check(params: TwoModeParams, control, theta0: float, phi0: float,
                    T: float, dt: float = None, pole_tol: float = 1e-8):
    """Independent RK4 integration of the angle equations.

        dtheta/dt = 2J sin(phi)
        dphi/dt   = 2 Delta + 2J cot(theta) cos(phi),  Delta = D + dU + (U_eff/2) cos(theta)

    Returns (times, thetas, phis).  Raises SingularityError near a pole.
    """
    if min(theta0, math.pi - theta0) < 1e-6:
        raise ValueError("initial theta must stay at least 1e-6 away from the poles")
    if dt is None:
        dt = 1e-3 / params.J
    times = time_grid(T, dt)
    h = times[1] - times[0]
    J = params.J

    def rhs(t, th, ph):
        s = math.sin(th)
        if abs(s) < pole_tol:
            raise SingularityError(f"trajectory reached a pole at t={t:.6g}")
        z = math.cos(th)
        delta = detuning(control, t, z) + params.dU + 0.5 * params.U_eff * z
        return 2 * J * math.sin(ph), 2 * delta + 2 * J * z / s * math.cos(ph)

    th = np.empty(len(times))
    ph = np.empty(len(times))
    th[0], ph[0] = theta0, phi0
    for k in range(len(times) - 1):
        t, x, y = times[k], th[k], ph[k]
        k1 = rhs(t, x, y)
        k2 = rhs(t + h / 2, x + h / 2 * k1[0], y + h / 2 * k1[1])
        k3 = rhs(t + h / 2, x + h / 2 * k2[0], y + h / 2 * k2[1])
        k4 = rhs(t + h, x + h * k3[0], y + h * k3[1])
        th[k + 1] = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        ph[k + 1] = y + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if min(th[k + 1], math.pi - th[k + 1]) < pole_tol or th[k + 1] > math.pi or th[k + 1] < 0:
            raise SingularityError(f"trajectory reached a pole at t={times[k + 1]:.6g}")
    return times, th, ph


def expectation_energy(state: TwoModeState, params: TwoModeParams, D: float) -> float:
    """<H> of the linear part -J sigma_x + (D + dU) sigma_z."""
    cl, cr = state.c_left, state.c_right
    sx = 2 * (cl.conjugate() * cr).real
    return -params.J * sx + (D + params.dU) * (abs(cl) ** 2 - abs(cr) ** 2)
