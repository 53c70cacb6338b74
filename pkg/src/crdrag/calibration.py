"""Closed-loop CR gate calibration against the simulated device.

Every measurement goes through :func:`~crdrag.tomography.hamiltonian_tomography`
on a single (non-echoed) CR pulse.  The echoed and direct loops share the
phase and target-drive updates and differ in the target value for
``nu_IX + i nu_IY`` and in how the hold time is set.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .effective import EffectiveHamiltonian, gate_time_from_zx
from .schedule import DeviceContext, PulseSchedule, gate_unitary
from .tomography import hamiltonian_tomography

__all__ = [
    "PulseSchedule",
    "CalibrationState",
    "CalibrationError",
    "update_cr_phase",
    "update_target_drive",
    "iy_zero_crossing",
    "calibrate_iy_drag",
    "calibrate_iz",
    "install_iz",
    "run_echoed_calibration",
    "run_direct_calibration",
    "control_phase_sweep",
]

THRESHOLD = 0.015
MAX_ITER = 20
MIN_IY_SLOPE = 1e-4
PROBE_FRACTION = 0.05
MIN_PROBE = 0.01


class CalibrationError(RuntimeError):
    """Calibration failure; ``history`` holds the measured coefficients so far."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


def wrap_phase(x: float) -> float:
    """Map an angle to ``(-pi, pi]``."""
    y = float(np.mod(x + np.pi, 2 * np.pi) - np.pi)
    return np.pi if y == -np.pi else y


@dataclass
class CalibrationState:
    iteration: int
    schedule: PulseSchedule
    history: list[EffectiveHamiltonian] = field(default_factory=list)
    threshold: float = THRESHOLD
    converged: bool = False
    gate_kind: str = "echoed"
    control_phase: float = 0.0
    verification: EffectiveHamiltonian | None = None

    def small_terms_ok(self, nu: EffectiveHamiltonian | None = None) -> bool:
        nu = self.history[-1] if nu is None else nu
        return _small_ok(nu, self.threshold, self.gate_kind)

    def report(self) -> dict:
        def clean(nu):
            return {k: float(v) for k, v in asdict(nu).items()}

        return {
            "gate_kind": self.gate_kind,
            "converged": bool(self.converged),
            "iterations": self.iteration,
            "threshold_MHz": self.threshold,
            "trace": [clean(nu) for nu in self.history],
            "verification": None if self.verification is None else clean(self.verification),
            "schedule": self.schedule.to_dict(),
            "control_phase": self.control_phase,
        }

    def save_report(self, path) -> None:
        Path(path).write_text(json.dumps(self.report(), indent=2, sort_keys=True))


def _target_value(nu: EffectiveHamiltonian) -> complex:
    return complex(nu.ix, nu.iy)


def _ideal(nu: EffectiveHamiltonian, gate_kind: str) -> complex:
    # the direct gate idles the target for control |0>: omega^(0) = nu_ZX + nu_IX = 0
    return complex(-nu.zx, 0.0) if gate_kind == "direct" else 0j


def _small_ok(nu: EffectiveHamiltonian, thr: float, gate_kind: str) -> bool:
    off = _target_value(nu) - _ideal(nu, gate_kind)
    return abs(nu.zy) < thr and abs(off.real) < thr and abs(off.imag) < thr


# ---------------------------------------------------------------------------
# update rules


def update_cr_phase(nu: EffectiveHamiltonian, theta1: float) -> float:
    """Rotate the CR phase so the conditional axis lies along X."""
    if nu.zx == 0:
        raise CalibrationError("nu_ZX = 0: the CR phase is undefined")
    return wrap_phase(theta1 - np.arctan(nu.zy / nu.zx))


def update_target_drive(
    nu: EffectiveHamiltonian,
    nu_probe: EffectiveHamiltonian,
    omega_t: complex,
    omega_t_probe: complex,
    nu_ideal: complex = 0j,
) -> complex:
    """Secant step for the complex target amplitude.

    ``nu_IX + i nu_IY`` responds linearly to the complex target amplitude, so
    two measurements fix the amplitude that reaches ``nu_ideal``.
    """
    v, vp = _target_value(nu), _target_value(nu_probe)
    if v == vp:
        raise CalibrationError("probe response equals the reference response")
    return complex(omega_t + (nu_ideal - v) / (v - vp) * (omega_t - omega_t_probe))


def iy_zero_crossing(amplitudes: Sequence[float], zz: Sequence[float]) -> float:
    """Zero of the least-squares line through ``(amplitude, nu_ZZ)`` points."""
    a = np.asarray(amplitudes, float)
    z = np.asarray(zz, float)
    if len(a) < 2 or len(np.unique(a)) < 2:
        raise CalibrationError("need distinct IY-DRAG amplitudes")
    slope, icpt = np.polyfit(a, z, 1)
    if abs(slope) < MIN_IY_SLOPE:
        raise CalibrationError(f"nu_ZZ is insensitive to the IY-DRAG amplitude (slope {slope:.2e})")
    return float(-icpt / slope)


def calibrate_iy_drag(dev, schedule: PulseSchedule, amplitudes: Sequence[float], **tomo) -> float:
    """IY-DRAG coefficient (MHz ns) that cancels the measured ``nu_ZZ``."""
    if len(set(float(a) for a in amplitudes)) != len(amplitudes) or len(amplitudes) != 3:
        raise CalibrationError("calibrate_iy_drag takes 3 distinct amplitudes")
    ctx = _ctx(dev)
    zz = [hamiltonian_tomography(schedule.with_(c_iy=float(c)), ctx, **tomo).nu.zz for c in amplitudes]
    return iy_zero_crossing(amplitudes, zz)


def calibrate_iz(nu: EffectiveHamiltonian) -> float:
    """Measured ``nu_IZ`` (MHz); install it with :func:`install_iz`."""
    return float(nu.iz)


def install_iz(schedule: PulseSchedule, nu_iz: float) -> PulseSchedule:
    """Detune both drives so the target reference follows the measured IZ shift."""
    return schedule.with_(detuning=schedule.detuning - nu_iz)


def default_iy_amplitudes(nu: EffectiveHamiltonian, c0: float = 0.0) -> tuple[float, float, float]:
    """Three amplitudes around the estimate ``-nu_ZZ / nu_ZX`` (converted to MHz ns)."""
    from .units import to_angular

    est = c0 - (nu.zz / nu.zx) / to_angular(1.0)
    span = max(abs(est - c0), 1.0)
    return (c0, c0 + span, c0 + 2 * span) if est >= c0 else (c0, c0 - span, c0 - 2 * span)


# ---------------------------------------------------------------------------
# loops


def _ctx(dev) -> DeviceContext:
    return dev if isinstance(dev, DeviceContext) else DeviceContext(dev)


def _measure(ctx, sched, tomo) -> EffectiveHamiltonian:
    return hamiltonian_tomography(sched.with_(echoed=False, t_hold=0.0), ctx, **tomo).nu


def _probe_step(nu: EffectiveHamiltonian) -> float:
    # unit response of nu_IX to the target amplitude is the natural scale
    return max(PROBE_FRACTION * abs(nu.zx), MIN_PROBE)


def _drive_loop(ctx, sched, state: CalibrationState, max_iter: int, tomo) -> PulseSchedule:
    """Alternate CR-phase and target-drive updates until the small terms vanish."""
    kind = state.gate_kind
    while True:
        nu = _measure(ctx, sched, tomo)
        state.history.append(nu)
        state.iteration += 1
        if _small_ok(nu, state.threshold, kind):
            return sched
        if state.iteration >= max_iter:
            raise CalibrationError(f"no convergence in {max_iter} iterations", state.history)
        th1 = update_cr_phase(nu, sched.cr_phase)
        step = th1 - sched.cr_phase
        z = sched.target_complex * np.exp(1j * step)
        sched = sched.with_(cr_phase=th1, target_amp=abs(z), target_phase=wrap_phase(sched.target_phase + step))
        if step != 0:
            nu = _measure(ctx, sched, tomo)
        rot = np.exp(1j * sched.target_phase)
        zp = z + _probe_step(nu) * rot
        nu_p = _measure(ctx, _with_target(sched, zp), tomo)
        sched = _with_target(sched, update_target_drive(nu, nu_p, z, zp, _ideal(nu, kind)))


def _with_target(sched: PulseSchedule, z: complex) -> PulseSchedule:
    # keep the phase reference when the amplitude is real along it
    rel = z * np.exp(-1j * sched.target_phase)
    if abs(rel.imag) <= 1e-12 * max(1.0, abs(rel)):
        return sched.with_(target_amp=float(rel.real))
    return sched.with_(target_amp=float(abs(z)), target_phase=wrap_phase(float(np.angle(z))))


def _calibrate(dev, init: PulseSchedule, max_iter: int, gate_kind: str, threshold: float,
               iy_drag: bool, tomo: dict) -> tuple[DeviceContext, CalibrationState]:
    ctx = _ctx(dev)
    state = CalibrationState(0, init.with_(echoed=False, t_hold=0.0), threshold=threshold, gate_kind=gate_kind)
    sched = _drive_loop(ctx, state.schedule, state, max_iter, tomo)
    if iy_drag:
        amps = default_iy_amplitudes(state.history[-1], sched.c_iy)
        sched = sched.with_(c_iy=calibrate_iy_drag(ctx, sched, amps, **tomo))
    nu = _measure(ctx, sched, tomo)
    sched = install_iz(sched, calibrate_iz(nu))
    # the IY-DRAG and IZ steps move the small terms slightly; re-close the loop
    sched = _drive_loop(ctx, sched, state, max_iter, tomo)
    check = _measure(ctx, sched, tomo)
    state.verification = check
    state.schedule = sched
    state.converged = _small_ok(check, threshold, gate_kind)
    return ctx, state


def run_echoed_calibration(
    dev,
    init: PulseSchedule,
    max_iter: int = MAX_ITER,
    threshold: float = THRESHOLD,
    iy_drag: bool = True,
    **tomo,
) -> CalibrationState:
    """Echoed-gate calibration; the hold gives each segment one eighth of a ZX period."""
    ctx, state = _calibrate(dev, init, max_iter, "echoed", threshold, iy_drag, tomo)
    seg = gate_time_from_zx(state.verification.zx, "echoed_segment")
    state.schedule = state.schedule.with_(echoed=True, t_hold=max(seg - state.schedule.t_r, 0.0))
    return state


def run_direct_calibration(
    dev,
    init: PulseSchedule,
    max_iter: int = MAX_ITER,
    threshold: float = THRESHOLD,
    iy_drag: bool = True,
    n_reps: int = 4,
    phi_grid: Sequence[float] | None = None,
    **tomo,
) -> CalibrationState:
    """Direct-gate calibration: the target idles for control ``|0>`` and flips for ``|1>``."""
    ctx, state = _calibrate(dev, init, max_iter, "direct", threshold, iy_drag, tomo)
    full = gate_time_from_zx(state.verification.zx, "direct")
    state.schedule = state.schedule.with_(t_hold=max(full - state.schedule.t_r, 0.0))
    state.control_phase = control_phase_sweep(ctx, state.schedule, n_reps, phi_grid)
    return state


# ---------------------------------------------------------------------------
# control phase of the direct gate

H1 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def _rz_control(phi: np.ndarray) -> np.ndarray:
    d = np.stack([np.exp(-0.5j * phi)] * 2 + [np.exp(0.5j * phi)] * 2, axis=-1)
    return d[..., None, :] * np.eye(4)


def _h_control() -> np.ndarray:
    return np.kron(H1, np.eye(2))


def amplified_return(u4: np.ndarray, n_reps: int, phi: np.ndarray) -> np.ndarray:
    """Return probability of ``|00>`` after ``H (RZ(phi) U)^n_reps H`` on the control."""
    g = _rz_control(np.asarray(phi, float)) @ u4
    seq = np.linalg.matrix_power(g, n_reps)
    h = _h_control()
    return np.abs((h @ seq @ h)[..., 0, 0]) ** 2


def verified_return(u4: np.ndarray, phi) -> np.ndarray:
    """Return probability of ``|00>`` after ``H CNOT^dag RZ(phi) U H``."""
    g = _rz_control(np.asarray(phi, float)) @ u4
    h = _h_control()
    return np.abs((h @ CNOT.conj().T @ g @ h)[..., 0, 0]) ** 2


def phase_from_unitary(u4: np.ndarray, n_reps: int = 4, phi_grid: Sequence[float] | None = None) -> float:
    """Control-frame phase ``phi0`` that turns ``u4`` into a CNOT."""
    if n_reps % 2:
        raise ValueError("n_reps must be even")
    if phi_grid is None:
        phi_grid = np.linspace(-np.pi, np.pi, 721)[1:]
    phi = np.asarray(phi_grid, float)
    p = amplified_return(u4, n_reps, phi)
    peak = (p >= np.roll(p, 1)) & (p >= np.roll(p, -1)) & (p > 0.9)
    cand = phi[peak]
    if cand.size == 0:
        raise CalibrationError("no control phase returns the state with probability above 0.9")
    # refine each candidate with the verification circuit
    v = verified_return(u4, cand)
    best = int(np.argmax(v))
    if v[best] <= 0.9:
        raise CalibrationError("no candidate passes the verification circuit")
    return wrap_phase(float(cand[best]))


def control_phase_sweep(dev, schedule: PulseSchedule, n_reps: int = 4, phi_grid=None) -> float:
    """Stark phase correction ``phi0`` (rad) of a direct CR gate."""
    u4 = gate_unitary(_ctx(dev), schedule)
    return phase_from_unitary(u4, n_reps, phi_grid)
