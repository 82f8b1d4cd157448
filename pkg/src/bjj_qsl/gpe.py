"""1D Gross-Pitaevskii double well (hbar = m = omega = 1).

    i d_t psi = [-1/2 d_x^2 + V(x, t) + Ng |psi|^2] psi,    int |psi|^2 dx = 1

with two glued harmonic traps V0(x) = (|x| - a)^2 / 2 and a tilt chosen so
that V(-a) - V(+a) = D.  The tilt D is therefore the full inter-well energy
difference, twice the sigma_z coefficient of the two-mode model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla

from .control import ControlPulse, FeedbackCCP, detuning, time_grid
from .errors import BoxTooSmallError, CalibrationError, ConvergenceError, IntegratorError
from .fitting import fit_rabi
from .two_mode import fubini_study

TILT_MODES = ("linear", "step")


@dataclass(frozen=True)
class Grid1D:
    x_min: float = -10.0
    x_max: float = 10.0
    n_points: int = 1024

    def __post_init__(self):
        n = self.n_points
        if n < 256 or n & (n - 1):
            raise ValueError("n_points must be a power of two >= 256")
        if abs(self.x_min + self.x_max) > 1e-12 or self.x_max <= 0:
            raise ValueError("grid must be symmetric about x = 0")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def x(self) -> np.ndarray:
        # periodic grid: x_min included, x_max identified with x_min; x = 0 is a node
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.n_points, self.dx)

    def mirror(self, psi: np.ndarray) -> np.ndarray:
        """psi(-x) on the same grid."""
        return np.roll(psi[::-1], 1)

    def refined(self) -> "Grid1D":
        return Grid1D(self.x_min, self.x_max, 2 * self.n_points)


@dataclass(frozen=True)
class DoubleWellSpec:
    a: float = 2.0
    Ng: float = 0.0
    tilt_mode: str = "linear"

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("well half-separation must be non-negative")
        if self.Ng < 0:
            raise ValueError("nonlinearity must be non-negative")
        if self.tilt_mode not in TILT_MODES:
            raise ValueError(f"tilt_mode must be one of {TILT_MODES}")


def potential(spec: DoubleWellSpec, D: float, x):
    """Double-well potential with tilt D.

    ``linear``: V0 - D x / (2a), so V(-a) - V(+a) = D exactly.
    ``step``: V0 - (D/2) tanh(8x / a), a smooth bias step used to prepare
    well-localized states without displacing the wells.
    """
    x = np.asarray(x, dtype=float)
    V = 0.5 * (np.abs(x) - spec.a) ** 2
    if D == 0:
        return V
    if spec.tilt_mode == "step":
        return V - 0.5 * D * np.tanh(x / _step_width(spec))
    if spec.a == 0:
        raise ValueError("linear tilt is undefined for a = 0")
    return V - D * x / (2 * spec.a)


def _step_width(spec: DoubleWellSpec) -> float:
    # smooth bias step: shifts the well bottoms against each other without displacing them
    return spec.a / 8 if spec.a > 0 else 0.25


def _tilt_profile(spec: DoubleWellSpec, x: np.ndarray) -> np.ndarray:
    """dV/dD, so V(D) = V0 + D * profile."""
    if spec.tilt_mode == "step":
        return -0.5 * np.tanh(x / _step_width(spec))
    return -x / (2 * spec.a) if spec.a > 0 else np.zeros_like(x)


@dataclass
class GpeField:
    grid: Grid1D
    psi: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.dx)

    def mirrored(self) -> "GpeField":
        return GpeField(self.grid, self.grid.mirror(self.psi))

    def variance(self) -> float:
        x = self.grid.x
        p = np.abs(self.psi) ** 2 * self.grid.dx
        m = np.sum(p * x)
        return float(np.sum(p * x * x) - m * m)

    def boundary_amplitude(self) -> float:
        return float(max(abs(self.psi[0]), abs(self.psi[-1])))

    def to_text(self, path) -> None:
        np.savetxt(path, np.column_stack([self.grid.x, self.psi.real, self.psi.imag]),
                   fmt="%.12e", header="x re_psi im_psi")


def _left_weights(grid: Grid1D) -> np.ndarray:
    x = grid.x
    w = (x < 0).astype(float)
    w[np.abs(x) < 0.5 * grid.dx] = 0.5
    return w


def well_populations(field: GpeField):
    """(n_left, n_right, z); the node at x = 0 counts half to each side."""
    p = np.abs(field.psi) ** 2
    w = _left_weights(field.grid)
    # correctly rounded sums: a mirrored field flips z exactly
    L, R = math.fsum(w * p), math.fsum((1.0 - w) * p)
    nl = L / (L + R)
    return nl, 1.0 - nl, (L - R) / (L + R)


def gpe_fidelity(field: GpeField, target: GpeField):
    if field.grid != target.grid:
        raise ValueError("fields live on different grids")
    F = float(abs(np.vdot(target.psi, field.psi)) * field.grid.dx)
    return F, 1.0 - F * F


def energy(field: GpeField, spec: DoubleWellSpec, D: float = 0.0, Ng: Optional[float] = None) -> float:
    """GP energy functional (kinetic + potential + Ng/2 |psi|^4)."""
    Ng = spec.Ng if Ng is None else Ng
    g = field.grid
    psi_k = sfft.fft(field.psi)
    kin = 0.5 * np.sum(g.k ** 2 * np.abs(psi_k) ** 2) * g.dx / g.n_points
    dens = np.abs(field.psi) ** 2
    pot = np.sum(potential(spec, D, g.x) * dens) * g.dx
    inter = 0.5 * Ng * np.sum(dens ** 2) * g.dx
    return float(kin + pot + inter)


def _normalize(psi: np.ndarray, dx: float) -> np.ndarray:
    return psi / math.sqrt(float(np.sum(psi.real ** 2 + psi.imag ** 2)) * dx)


def imaginary_time_ground_state(spec: DoubleWellSpec, D: float = 0.0, grid: Grid1D = None,
                                Ng: Optional[float] = None, dtau: float = 1e-3, tol: float = 1e-12,
                                max_iter: int = 2_000_000, check_every: int = 100) -> GpeField:
    """Normalized GP ground state by split-step imaginary-time relaxation.

    Starts from a unit-width Gaussian in the lower well (left on ties).
    Converged when the energy change per step drops below ``tol``.
    """
    grid = grid or Grid1D()
    Ng = spec.Ng if Ng is None else Ng
    x = grid.x
    V = potential(spec, D, x)
    centre = spec.a if D > 0 else -spec.a
    psi = _normalize(np.exp(-0.5 * (x - centre) ** 2).astype(complex), grid.dx)
    kin = np.exp(-0.5 * grid.k ** 2 * dtau)
    e_old = energy(GpeField(grid, psi), spec, D, Ng)
    delta = np.inf
    for it in range(1, max_iter + 1):
        half = np.exp(-0.5 * dtau * (V + Ng * np.abs(psi) ** 2))
        psi = half * psi
        psi = sfft.ifft(kin * sfft.fft(psi))
        psi = np.exp(-0.5 * dtau * (V + Ng * np.abs(psi) ** 2)) * psi
        psi = _normalize(psi, grid.dx)
        if it % check_every == 0:
            e_new = energy(GpeField(grid, psi), spec, D, Ng)
            delta = abs(e_new - e_old) / check_every
            e_old = e_new
            if delta < tol:
                psi = psi.real.astype(complex) if np.max(np.abs(psi.imag)) < 1e-14 else psi
                return GpeField(grid, _fix_phase(psi))
    raise ConvergenceError(f"imaginary-time relaxation did not converge in {max_iter} steps "
                           f"(last energy change per step {delta:.3e})", last_delta=delta)


def _fix_phase(psi: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(psi)))
    return psi * np.exp(-1j * np.angle(psi[k]))


@dataclass
class GpeTrajectory:
    grid: Grid1D
    times: np.ndarray            # every step
    z: np.ndarray                # imbalance at every grid time
    detunings: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray        # (n_snap, n_points)
    norm_error: float
    path_length: float = float("nan")

    @property
    def final(self) -> GpeField:
        return GpeField(self.grid, self.snapshots[-1])

    @property
    def n_left(self) -> np.ndarray:
        return 0.5 * (1.0 + self.z)

    def export_snapshots(self, directory, prefix: str = "snapshot") -> list:
        from pathlib import Path

        out = []
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for t, psi in zip(self.snapshot_times, self.snapshots):
            path = d / f"{prefix}_t{t:.6f}.txt"
            GpeField(self.grid, psi).to_text(path)
            out.append(path)
        return out


def split_step_propagate(field0: GpeField, spec: DoubleWellSpec, control=None, T: float = None,
                         dt: float = 1e-3, stride: int = 100, boundary_tol: float = 1e-4,
                         norm_tol: float = 1e-10, track_path: bool = False,
                         V_static: Optional[np.ndarray] = None) -> GpeTrajectory:
    """Strang split-step Fourier propagation in real time.

    Half step in V + Ng|psi|^2, full kinetic step, half step again.  Pulses are
    sampled at the step midpoint; a :class:`FeedbackCCP` reads the imbalance at
    the start of the step.  With ``track_path`` the Fubini-Study length of the
    path is accumulated step by step.  ``V_static`` replaces the untilted
    double well (e.g. zeros for free expansion).
    """
    if T is None:
        raise ValueError("duration T is required")
    if isinstance(control, ControlPulse) and not control.covers(T):
        raise ValueError("pulse does not cover [0, T]")
    grid = field0.grid
    times = time_grid(T, dt)
    h = times[1] - times[0]
    nsteps = len(times) - 1
    x = grid.x
    V0 = potential(spec, 0.0, x) if V_static is None else np.asarray(V_static, dtype=float)
    prof = _tilt_profile(spec, x)
    prof[0] = 0.0   # periodic wrap point is its own mirror image: keep the tilt odd
    wl = _left_weights(grid) * grid.dx
    kin = np.exp(-0.5j * grid.k ** 2 * h)
    Ng = spec.Ng
    psi = np.array(field0.psi, dtype=complex)
    norm0 = float(np.sum(np.abs(psi) ** 2) * grid.dx)

    z = np.empty(nsteps + 1)
    dets = np.empty(nsteps + 1)
    snaps, snap_t = [psi.copy()], [0.0]
    S = 0.0
    scale = math.sqrt(grid.dx / norm0)
    for k in range(nsteps):
        prev = psi
        dens = psi.real ** 2 + psi.imag ** 2
        nl = np.dot(wl, dens) / norm0
        z[k] = 2.0 * nl - 1.0
        D = detuning(control, times[k] + 0.5 * h, z[k])
        dets[k] = D
        Vt = V0 + D * prof
        psi = np.exp(-0.5j * h * (Vt + Ng * dens)) * psi
        psi = sfft.ifft(kin * sfft.fft(psi))
        psi = np.exp(-0.5j * h * (Vt + Ng * (psi.real ** 2 + psi.imag ** 2))) * psi
        if track_path:
            S += fubini_study(scale * prev, scale * psi)
        if (k + 1) % stride == 0 or k + 1 == nsteps:
            edge = max(abs(psi[0]), abs(psi[-1]))
            if edge > boundary_tol:
                raise BoxTooSmallError(f"boundary amplitude {edge:.2e} at t={times[k + 1]:.4g}; enlarge the box")
            snaps.append(psi.copy())
            snap_t.append(times[k + 1])
    dens = np.abs(psi) ** 2
    z[-1] = 2.0 * np.dot(wl, dens) / norm0 - 1.0
    dets[-1] = detuning(control, times[-1], z[-1])
    if not np.all(np.isfinite(psi)):
        raise IntegratorError("non-finite wavefunction during split-step propagation")
    snaps = np.array(snaps)
    norms = np.sum(np.abs(snaps) ** 2, axis=1) * grid.dx
    drift = float(np.max(np.abs(norms - norm0)))
    if drift > norm_tol:
        raise IntegratorError(f"norm drift {drift:.3e} exceeds {norm_tol:.1e}")
    return GpeTrajectory(grid, times, z, dets, np.array(snap_t), snaps, drift,
                         S if track_path else float("nan"))


def kinetic_matrix(grid: Grid1D) -> np.ndarray:
    """Dense Fourier-grid kinetic operator (real symmetric circulant)."""
    col = sfft.ifft(0.5 * grid.k ** 2).real
    return sla.circulant(col)


def lowest_levels(spec: DoubleWellSpec, grid: Grid1D, count: int = 2, D: float = 0.0):
    """Lowest single-particle eigenpairs of the linear Hamiltonian on the grid."""
    H = kinetic_matrix(grid) + np.diag(potential(spec, D, grid.x))
    w, v = sla.eigh(H, subset_by_index=(0, count - 1), driver="evr")
    return w, v / math.sqrt(grid.dx)


def left_mode(spec: DoubleWellSpec, grid: Grid1D) -> GpeField:
    """Linear two-mode left orbital (phi_0 + phi_1) / sqrt(2) for the untilted well."""
    _, v = lowest_levels(spec, grid, 2)
    v = v * np.sign(v[np.argmax(np.abs(v), axis=0), [0, 1]])
    phi = v[:, 0] + v[:, 1]
    if np.sum(phi[grid.x < 0] ** 2) < np.sum(phi[grid.x > 0] ** 2):
        phi = v[:, 0] - v[:, 1]
    return GpeField(grid, _normalize(phi.astype(complex), grid.dx))


# --- transfer problem and effective two-mode parameters -------------------

D_PREP = -1.0


def transfer_states(spec: DoubleWellSpec, grid: Grid1D = None, Ng: Optional[float] = None,
                    D_prep: float = D_PREP, **kw):
    """Initial (left) and target (mirrored) states for the transfer.

    The initial state is the ground state under a smooth bias step of height
    ``D_prep`` (negative: left well lower); the target is its mirror image.
    """
    grid = grid or Grid1D()
    prep_spec = replace(spec, tilt_mode="step")
    psi0 = imaginary_time_ground_state(prep_spec, D=D_prep, grid=grid, Ng=Ng, **kw)
    return psi0, psi0.mirrored()


def tunnel_splitting(spec: DoubleWellSpec, grid: Grid1D = None) -> float:
    """Linear tunnel coupling J = (E_1 - E_0) / 2 of the untilted double well."""
    w, _ = lowest_levels(spec, grid or Grid1D(), 2)
    return 0.5 * float(w[1] - w[0])


def golden_section(f, lo: float, hi: float, tol: float = 1e-4):
    """Minimize a unimodal scalar function on [lo, hi]; returns (x, f(x), n_evals)."""
    invphi = (math.sqrt(5) - 1) / 2
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    n = 2
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
        n += 1
    return (c, fc, n) if fc < fd else (d, fd, n)


@dataclass
class EffectiveParams:
    Ng: float
    J_eff: float
    U_eff: float        # feedback gain: GPE tilt D = -U_eff * z
    J_lin: float
    chi: float          # int |psi_0|^4 dx of the prepared state
    r2: float
    n_evals: int = 0

    @property
    def Lam(self) -> float:
        """Mean-field ratio U_eff / (2 J) against the linear tunnel coupling."""
        return self.U_eff / (2.0 * self.J_lin)

    @property
    def t_qsl_lin(self) -> float:
        return math.pi / (2.0 * self.J_lin)

    def to_dict(self) -> dict:
        return {"Ng": self.Ng, "J_eff": self.J_eff, "U_eff": self.U_eff, "J_lin": self.J_lin,
                "chi": self.chi, "Lambda": self.Lam, "r2": self.r2, "n_evals": self.n_evals}


def _fit_transfer(psi0, spec, gain, T, dt, n_samples=41):
    traj = split_step_propagate(psi0, spec, FeedbackCCP(gain=gain), T=T, dt=dt, stride=10 ** 9)
    idx = np.linspace(0, len(traj.times) - 1, n_samples).round().astype(int)
    return fit_rabi(traj.n_left[idx], traj.times[idx])


def calibrate(spec: DoubleWellSpec, grid: Grid1D = None, Ng: Optional[float] = None,
              dt: float = 1e-3, tol: float = 1e-4, min_r2: float = 0.99) -> EffectiveParams:
    """Effective two-mode parameters of the GPE double well.

    Ng = 0: J from the linear splitting, U_eff = 0.  Ng > 0: fit the left
    population of a feedback-CCP transfer to cos^2(J t), then golden-section
    the feedback gain on [0, 2 Ng chi] to minimize the infidelity at
    pi / (2 J), and refit J with the calibrated gain.
    """
    grid = grid or Grid1D()
    Ng = spec.Ng if Ng is None else Ng
    spec = replace(spec, Ng=Ng)
    J_lin = tunnel_splitting(spec, grid)
    if Ng == 0:
        return EffectiveParams(0.0, J_lin, 0.0, J_lin, 0.0, 1.0)
    psi0, target = transfer_states(spec, grid)
    chi = float(np.sum(np.abs(psi0.psi) ** 4) * grid.dx)
    g0 = Ng * chi
    T_lin = math.pi / (2 * J_lin)

    fit = _fit_transfer(psi0, spec, g0, 1.2 * T_lin, dt)
    if fit.r2 < min_r2:
        raise CalibrationError(f"Rabi fit failed at Ng={Ng} (R^2 = {fit.r2:.4f})", residual=1 - fit.r2)
    T_fit = math.pi / (2 * fit.J)

    def cost(gain):
        tr = split_step_propagate(psi0, spec, FeedbackCCP(gain=gain), T=T_fit, dt=dt, stride=10 ** 9)
        return gpe_fidelity(tr.final, target)[1]

    gain, _, n = golden_section(cost, 0.0, 2.0 * g0, tol)
    fit = _fit_transfer(psi0, spec, gain, 1.2 * T_lin, dt)
    if fit.r2 < min_r2:
        raise CalibrationError(f"Rabi refit failed at Ng={Ng} (R^2 = {fit.r2:.4f})", residual=1 - fit.r2)
    return EffectiveParams(Ng, fit.J, gain, J_lin, chi, fit.r2, n + 2)


def extract_effective_params(spec: DoubleWellSpec, grid: Grid1D = None, Ng: Optional[float] = None,
                             **kw):
    """(J_eff, U_eff_gpe); see :func:`calibrate`."""
    p = calibrate(spec, grid, Ng, **kw)
    return p.J_eff, p.U_eff
