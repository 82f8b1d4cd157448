"""Exact N-boson dynamics of the two-site Bose-Hubbard dimer.

Fock basis index n = number of bosons in the left mode (0..N).

    H = -J (b_L^+ b_R + h.c.) + (u/2)[n_L(n_L-1) + n_R(n_R-1)] + (D + dU)(n_L - n_R)

The mean-field limit of this model is the two-mode model with U_eff = u (N - 1).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .control import ControlPulse, FeedbackCCP, detuning, time_grid
from .errors import IntegratorError


@dataclass(frozen=True)
class DimerParams:
    N: int
    J: float = 1.0
    u: float = 0.0
    dU: float = 0.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one boson")
        if not self.J > 0:
            raise ValueError("hopping J must be positive")

    @classmethod
    def from_lambda(cls, N: int, Lam: float, J: float = 1.0, dU: float = 0.0) -> "DimerParams":
        """Per-pair u chosen so that u (N - 1) / (2J) = Lam."""
        u = 2.0 * J * Lam / (N - 1) if N > 1 else 0.0
        return cls(N=N, J=J, u=u, dU=dU)

    @property
    def U_eff(self) -> float:
        return self.u * (self.N - 1)

    @property
    def Lam(self) -> float:
        return self.U_eff / (2.0 * self.J)

    @property
    def t_qsl(self) -> float:
        return np.pi / (2.0 * self.J)


@dataclass
class DimerState:
    amplitudes: np.ndarray
    N: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.N + 1,):
            raise ValueError(f"expected {self.N + 1} amplitudes")

    @classmethod
    def fock(cls, N: int, n_left: int) -> "DimerState":
        a = np.zeros(N + 1, dtype=complex)
        a[n_left] = 1.0
        return cls(a, N)

    @classmethod
    def coherent(cls, N: int, c_left: complex, c_right: complex) -> "DimerState":
        """All N bosons in the single-particle orbital c_L|L> + c_R|R>."""
        from scipy.special import gammaln

        n = np.arange(N + 1)
        logbin = 0.5 * (gammaln(N + 1) - gammaln(n + 1) - gammaln(N - n + 1))
        with np.errstate(divide="ignore"):
            a = np.exp(logbin) * np.power(complex(c_left), n) * np.power(complex(c_right), N - n)
        return cls(a, N)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def mirrored(self) -> "DimerState":
        return DimerState(self.amplitudes[::-1].copy(), self.N)

    @property
    def z(self) -> float:
        n = np.arange(self.N + 1)
        return float(np.dot(np.abs(self.amplitudes) ** 2, 2 * n - self.N) / self.N)


@dataclass
class TridiagonalHamiltonian:
    diag: np.ndarray
    off: np.ndarray

    def toarray(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.off * v[1:]
        out[1:] += self.off * v[:-1]
        return out

    def eigh(self, select=None):
        if len(self.diag) == 1:
            return self.diag.copy(), np.ones((1, 1))
        if select is None:
            return sla.eigh_tridiagonal(self.diag, self.off)
        return sla.eigh_tridiagonal(self.diag, self.off, select="i", select_range=select)

    def expectation(self, a: np.ndarray) -> float:
        return float(np.vdot(a, self.matvec(a)).real)


def _hop_elements(N: int) -> np.ndarray:
    n = np.arange(N)
    return np.sqrt((n + 1.0) * (N - n))


def build_dimer_hamiltonian(params: DimerParams, D: float = 0.0) -> TridiagonalHamiltonian:
    N = params.N
    n = np.arange(N + 1, dtype=float)
    inter = 0.5 * params.u * (n * (n - 1) + (N - n) * (N - n - 1))
    diag = inter + (D + params.dU) * (2 * n - N)
    return TridiagonalHamiltonian(diag, -params.J * _hop_elements(N))


def dimer_ground_state(params: DimerParams, D_prep: Optional[float] = None) -> DimerState:
    """Lowest eigenvector at bias D_prep (default -20 J, localizing bosons on the left)."""
    if D_prep is None:
        D_prep = -20.0 * params.J
    H = build_dimer_hamiltonian(params, D_prep)
    w, v = H.eigh(select=(0, 1))
    if w[1] - w[0] < 1e-12:
        raise ValueError(f"degenerate ground state (gap {w[1] - w[0]:.2e}) at D_prep={D_prep}")
    a = v[:, 0].astype(complex)
    k = np.argmax(np.abs(a))
    a *= np.exp(-1j * np.angle(a[k]))
    return DimerState(a, params.N)


@dataclass
class OneBodyRdm:
    matrix: np.ndarray
    eigenvalues: np.ndarray  # (lambda_max, lambda_min)

    @property
    def depletion(self) -> float:
        return float(self.eigenvalues[1])


def _rdm_matrix(a: np.ndarray, N: int) -> np.ndarray:
    n = np.arange(N + 1)
    p = np.abs(a) ** 2
    nl = float(np.dot(p, n))
    # <b_R^+ b_L> : moves a boson from left to right, matching |c><c| for N = 1
    c = complex(np.sum(_hop_elements(N) * a[:-1].conj() * a[1:]))
    return np.array([[nl, c], [c.conjugate(), N - nl]], dtype=complex) / N


def one_body_rdm(state: DimerState) -> OneBodyRdm:
    rho = _rdm_matrix(state.amplitudes, state.N)
    w = np.linalg.eigvalsh(rho)
    w = np.clip(w, 0.0, 1.0)
    return OneBodyRdm(rho, np.array([w[1], w[0]]))


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def _check_density(rho: np.ndarray, tol: float, name: str) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError(f"{name} is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError(f"{name} does not have unit trace")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] < -tol:
        raise ValueError(f"{name} is not positive semidefinite")
    return 0.5 * (rho + rho.conj().T)


def uhlmann_fidelity(rho_T, rho, tol: float = 1e-8):
    """Uhlmann fidelity F = Tr sqrt(sqrt(rho_T) rho sqrt(rho_T)) and infidelity 1 - F^2."""
    rho_T = _check_density(rho_T, tol, "rho_T")
    rho = _check_density(rho, tol, "rho")
    if rho_T.shape != rho.shape:
        raise ValueError(f"dimension mismatch {rho_T.shape} vs {rho.shape}")
    s = _psd_sqrt(rho_T)
    m = s @ rho @ s
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    F = float(min(1.0, np.sum(np.sqrt(np.clip(w, 0.0, None)))))
    return F, 1.0 - F * F


@dataclass
class DimerTrajectory:
    times: np.ndarray
    amplitudes: np.ndarray  # (n_snapshots, N+1), at ``snapshot_times``
    snapshot_times: np.ndarray
    z: np.ndarray           # imbalance at every grid time
    detunings: np.ndarray
    depletion: np.ndarray   # at every grid time
    N: int
    bloch: np.ndarray = None  # one-body Bloch vector (2Re c, -2Im c, z) at every grid time

    @property
    def path_length(self) -> float:
        """Arc length traced by the direction of the one-body Bloch vector."""
        r = self.bloch
        r = r / np.maximum(np.linalg.norm(r, axis=1, keepdims=True), 1e-300)
        cross = np.linalg.norm(np.cross(r[:-1], r[1:]), axis=1)
        dot = np.einsum("ij,ij->i", r[:-1], r[1:])
        return float(np.sum(np.arctan2(cross, dot)))

    @property
    def final(self) -> DimerState:
        return DimerState(self.amplitudes[-1], self.N)

    @property
    def norm_error(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.amplitudes, axis=1) - 1.0)))

    @property
    def depletion_max(self) -> float:
        return float(np.max(self.depletion))

    def rdm_infidelity(self, target: DimerState) -> float:
        """1 - F^2 between the normalized one-body density matrices of target and final state."""
        return uhlmann_fidelity(one_body_rdm(target).matrix, one_body_rdm(self.final).matrix)[1]

    def state_infidelity(self, target: DimerState) -> float:
        return 1.0 - abs(np.vdot(target.amplitudes, self.amplitudes[-1])) ** 2


def _is_static(control) -> bool:
    if control is None:
        return True
    if isinstance(control, ControlPulse):
        return bool(np.all(control.values == control.values[0]))
    return False


def propagate_dimer(state0: DimerState, params: DimerParams, control=None, T: float = None,
                    dt: float = None, stride: int = 1, norm_tol: float = 1e-10) -> DimerTrajectory:
    """Time evolution in the fixed-N Fock space.

    Static detuning: exact spectral propagation.  Otherwise a Strang splitting
    between the diagonal (interaction + bias) part and the hopping part, whose
    exponential is precomputed once; every factor is unitary.
    Feedback controllers read the imbalance at the start of each step.
    """
    if T is None:
        raise ValueError("duration T is required")
    if dt is None:
        dt = 1e-3 / params.J
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if isinstance(control, ControlPulse) and not control.covers(T):
        raise ValueError("pulse does not cover [0, T]")
    N = params.N
    times = time_grid(T, dt)
    h = times[1] - times[0]
    nsteps = len(times) - 1
    n = np.arange(N + 1, dtype=float)
    sz = 2 * n - N
    H0 = build_dimer_hamiltonian(params, 0.0)
    diag0 = H0.diag - H0.diag.mean()
    hop = _hop_elements(N)

    psi = np.array(state0.amplitudes, dtype=complex)
    z = np.empty(nsteps + 1)
    dets = np.empty(nsteps + 1)
    dep = np.empty(nsteps + 1)
    bloch = np.empty((nsteps + 1, 3))
    snaps, snap_t = [psi.copy()], [0.0]

    def observe(k, psi):
        p = psi.real ** 2 + psi.imag ** 2
        zk = np.dot(p, sz) / N
        c = np.dot(hop, psi[:-1].conj() * psi[1:]) / N
        z[k] = zk
        bloch[k] = 2 * c.real, -2 * c.imag, zk
        # smaller eigenvalue of the unit-trace 2x2 RDM
        # single particle: the RDM is the pure state itself
        dep[k] = 0.0 if N <= 1 else max(0.0, 0.5 * (1.0 - np.sqrt(zk * zk + 4.0 * abs(c) ** 2)))

    if _is_static(control):
        D = detuning(control, 0.0, 0.0)
        w, v = TridiagonalHamiltonian(diag0 + D * sz, -params.J * hop).eigh()
        coeff = v.T @ psi
        step = np.exp(-1j * w * h)
        for k in range(nsteps):
            observe(k, psi)
            dets[k] = D
            coeff = step * coeff
            psi = v @ coeff
            if (k + 1) % stride == 0 or k + 1 == nsteps:
                snaps.append(psi.copy())
                snap_t.append(times[k + 1])
    else:
        if N > 0:
            wh, vh = TridiagonalHamiltonian(np.zeros(N + 1), -params.J * hop).eigh()
            R = (vh * np.exp(-1j * wh * h)) @ vh.T
        for k in range(nsteps):
            observe(k, psi)
            t = times[k]
            D = detuning(control, t + 0.5 * h, z[k])
            dets[k] = D
            half = np.exp(-0.5j * h * (diag0 + D * sz))
            psi = half * (R @ (half * psi))
            if (k + 1) % stride == 0 or k + 1 == nsteps:
                snaps.append(psi.copy())
                snap_t.append(times[k + 1])
    observe(nsteps, psi)
    dets[-1] = detuning(control, times[-1], z[-1])
    amps = np.array(snaps)
    if not np.all(np.isfinite(amps)):
        raise IntegratorError("non-finite amplitudes during dimer propagation")
    traj = DimerTrajectory(times, amps, np.array(snap_t), z, dets, dep, N, bloch)
    drift = abs(np.linalg.norm(psi) - np.linalg.norm(state0.amplitudes))
    if drift > norm_tol:
        raise IntegratorError(f"norm drift {drift:.3e} exceeds {norm_tol:.1e}")
    return traj
