"""CR gate schedules on the Duffing device and their simulated propagators.

A schedule is a flat-top CR drive on the control (optionally DRAG corrected),
a flat-top compensation drive on the target with an optional IY-DRAG
quadrature, and a constant detuning of both drives.  With the RWA frame the
hold segment is time-independent, so one pair of ramp propagations serves any
number of hold durations.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import (
    DeviceParams,
    DrivenHamiltonian,
    Frame,
    computational_indices,
    duffing_hamiltonian,
    expm_hermitian,
    label_index,
    propagate,
)
from .effective import DressedSpectrum, dressed_spectrum, hold_effective_hamiltonian, EffectiveHamiltonian
from .pulseshape import DragConfig, RampSpec, drag_chain, ramp_sin_m
from .units import to_angular

DT_DUFFING = 0.01


@dataclass(frozen=True)
class PulseSchedule:
    """Drive description of one CR pulse.

    ``variant`` selects the CR ramp: ``"flat"`` (plain ``sin^m``), ``"P"`` or
    ``"G"`` (recursive DRAG).  ``target_amp`` and ``target_phase`` set the
    complex hold amplitude of the target drive, whose quadrature carries
    ``c_iy`` (MHz ns) times the derivative of the unit target ramp.
    ``detuning`` (MHz) shifts both drives away from ``omega_d``.
    """

    omega_cr: float
    t_r: float = 10.0
    t_hold: float = 0.0
    m: int = 3
    variant: str = "G"
    drag_scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cr_phase: float = 0.0
    target_amp: float = 0.0
    target_phase: float = 0.0
    c_iy: float = 0.0
    detuning: float = 0.0
    echoed: bool = False
    drag_detunings: tuple[float, float] | None = None

    def __post_init__(self):
        if self.variant not in ("flat", "P", "G"):
            raise ValueError(f"unknown CR variant {self.variant!r}")
        if self.t_r <= 0 or self.t_hold < 0:
            raise ValueError("need t_r > 0 and t_hold >= 0")
        object.__setattr__(self, "drag_scales", tuple(float(s) for s in self.drag_scales))
        if self.drag_detunings is not None:
            object.__setattr__(self, "drag_detunings", tuple(float(d) for d in self.drag_detunings))
        for k in ("omega_cr", "t_r", "t_hold", "cr_phase", "target_amp", "target_phase", "c_iy", "detuning"):
            object.__setattr__(self, k, float(getattr(self, k)))

    @property
    def nu_iz_comp(self) -> float:
        """IZ shift (MHz) absorbed by the drive detuning."""
        return -self.detuning

    @property
    def target_complex(self) -> complex:
        return self.target_amp * np.exp(1j * self.target_phase)

    @property
    def duration(self) -> float:
        single = 2 * self.t_r + self.t_hold
        return 2 * single if self.echoed else single

    def with_(self, **kw) -> "PulseSchedule":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drag_scales"] = list(self.drag_scales)
        if self.drag_detunings is not None:
            d["drag_detunings"] = list(self.drag_detunings)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSchedule":
        d = dict(d)
        for k in ("drag_scales", "drag_detunings"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "PulseSchedule":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DeviceContext:
    """Static data of a device reused across simulations."""

    dev: DeviceParams

    @cached_property
    def ops(self):
        return duffing_hamiltonian(self.dev)

    @cached_property
    def spectrum(self) -> DressedSpectrum:
        return dressed_spectrum(self.ops.static, self.dev.levels)

    @cached_property
    def omega_d(self) -> float:
        return self.dev.drive_frequency

    def frame_energies(self, detuning: float = 0.0) -> np.ndarray:
        """Dressed energies (MHz) in the frame rotating at ``omega_d + detuning``."""
        n = np.real(np.einsum("ij,ik,kj->j", self.spectrum.vectors.conj(), self.ops.number, self.spectrum.vectors))
        return self.spectrum.energies - (self.omega_d + detuning) * np.round(n)

    def control_detunings(self, detuning: float = 0.0) -> tuple[float, float]:
        """``(d10, d21)`` of the dressed control ladder relative to the drive (MHz)."""
        e = self.spectrum.energy
        w = self.omega_d + detuning
        return e((1, 0, 0)) - e((0, 0, 0)) - w, e((2, 0, 0)) - e((1, 0, 0)) - w

    @cached_property
    def computational(self) -> np.ndarray:
        return self.spectrum.computational_vectors()

    @cached_property
    def echo_pulse(self) -> np.ndarray:
        """Ideal control pi pulse: swaps dressed |0,t,a> and |1,t,a>."""
        n = self.dev.levels
        v = self.spectrum.vectors
        perm = np.eye(n ** 3, dtype=complex)
        for t in range(n):
            for a in range(n):
                i0 = label_index(n, (0, t, a))
                i1 = label_index(n, (1, t, a))
                perm[[i0, i1]] = perm[[i1, i0]]
        return v @ perm @ v.conj().T


def cr_envelope(sched: PulseSchedule, ctx: DeviceContext):
    """Callable CR envelope (MHz) of a zero-hold pulse, including the phase."""
    spec = RampSpec(sched.omega_cr, sched.t_r, 0.0, sched.m)
    stages = []
    if sched.variant != "flat":
        d10, d21 = sched.drag_detunings or ctx.control_detunings(sched.detuning)
        stages = DragConfig(d10, d21, sched.variant, sched.drag_scales).stages()
    phase = np.exp(1j * sched.cr_phase)

    def env(t):
        return phase * drag_chain(np.clip(t, 0.0, spec.t_f), spec, stages)

    return env


def target_envelope(sched: PulseSchedule):
    """Callable target envelope (MHz) of a zero-hold pulse."""
    unit = RampSpec(1.0, sched.t_r, 0.0, sched.m)
    z = sched.target_complex
    rot = np.exp(1j * sched.target_phase)

    def env(t):
        j = ramp_sin_m(np.clip(t, 0.0, unit.t_f), unit)
        return z * j.value + 1j * rot * sched.c_iy * j.d1

    return env


def driven_hamiltonian(sched: PulseSchedule, ctx: DeviceContext, frame=Frame.ROTATING_RWA) -> DrivenHamiltonian:
    ops = ctx.ops
    drives = [(ops.control, cr_envelope(sched, ctx)), (ops.target, target_envelope(sched))]
    return DrivenHamiltonian(ops.static, drives, Frame(frame), ctx.omega_d + sched.detuning, ops.number)


def hold_hamiltonian(sched: PulseSchedule, ctx: DeviceContext) -> np.ndarray:
    h = driven_hamiltonian(sched, ctx)
    return h.constant([sched.omega_cr * np.exp(1j * sched.cr_phase), sched.target_complex])


def hold_hamiltonian_eff(sched: PulseSchedule, ctx: DeviceContext) -> EffectiveHamiltonian:
    """Six-term effective Hamiltonian of the hold segment (MHz)."""
    return hold_effective_hamiltonian(hold_hamiltonian(sched, ctx), ctx.spectrum)


@dataclass
class ScheduleRun:
    """Full-space propagators of a schedule for one or many hold durations."""

    unitaries: np.ndarray
    holds: np.ndarray
    durations: np.ndarray
    ctx: DeviceContext
    detuning: float

    def qubit_frame(self, k: int | None = None) -> np.ndarray:
        """Diagonal frame correction in the computational basis.

        The target reference follows the drive; the control follows its own
        dressed frequency in the simulation frame.
        """
        e = self.ctx.frame_energies(self.detuning)[computational_indices(self.ctx.dev.levels)]
        e_c = to_angular(e[2] - e[0])
        t = np.asarray(self.durations if k is None else self.durations[k], float)
        rot = np.exp(-1j * e_c * t)[..., None]
        return np.where(np.array([False, False, True, True]), rot, 1.0 + 0j)

    def computational_block(self) -> np.ndarray:
        """4x4 propagators in the qubit frame, shape ``(n_holds, 4, 4)``."""
        c = self.ctx.computational
        u4 = c.conj().T @ self.unitaries @ c
        f = self.qubit_frame()
        return np.conj(f)[..., :, None] * u4

    def evolve(self, psi0: np.ndarray) -> np.ndarray:
        return self.unitaries @ psi0


def _with_hold(env, t_r: float, hold: float):
    """Stretch a zero-hold envelope by inserting a constant hold."""

    def f(t):
        t = np.asarray(t, float)
        return env(np.where(t < t_r, t, np.where(t > t_r + hold, t - hold, t_r)))

    return f


def _segment(sched: PulseSchedule, ctx: DeviceContext, holds: np.ndarray, dt: float, frame: Frame) -> np.ndarray:
    h = driven_hamiltonian(sched, ctx, frame)
    if frame is Frame.ROTATING_RWA:
        up = propagate(h, (0.0, sched.t_r), dt).unitary
        down = propagate(h, (sched.t_r, 2 * sched.t_r), dt).unitary
        mid = expm_hermitian(hold_hamiltonian(sched, ctx), holds)
        return down @ mid @ up
    # without the RWA the hold is not stationary: propagate every duration in full
    out = []
    w = to_angular(ctx.omega_d + sched.detuning)
    n = np.diag(ctx.ops.number).real
    for hold in holds:
        hh = DrivenHamiltonian(h.static, [(low, _with_hold(env, sched.t_r, hold)) for low, env in h.drives],
                               frame, h.omega_frame, h.frame_number)
        t_f = 2 * sched.t_r + hold
        u = propagate(hh, (0.0, t_f), dt, frame).unitary
        if frame is Frame.LAB:
            # express in the frame rotating with the drive
            u = np.exp(1j * w * n * t_f)[:, None] * u
        out.append(u)
    return np.array(out)


def simulate_schedule(
    ctx: DeviceContext | DeviceParams,
    sched: PulseSchedule,
    holds: Sequence[float] | None = None,
    dt: float = DT_DUFFING,
    frame: Frame | str = Frame.ROTATING_RWA,
) -> ScheduleRun:
    """Propagate a schedule for each hold duration in ``holds``.

    The returned propagators are expressed in the frame rotating with the
    drive whatever frame was used to integrate.  Without the rotating-wave
    approximation ``dt`` must resolve the carrier.
    """
    if isinstance(ctx, DeviceParams):
        ctx = DeviceContext(ctx)
    frame = Frame(frame)
    holds = np.atleast_1d(np.asarray([sched.t_hold] if holds is None else holds, float))
    u = _segment(sched, ctx, holds, dt, frame)
    durations = 2 * sched.t_r + holds
    if sched.echoed:
        flipped = sched.with_(cr_phase=sched.cr_phase + np.pi, target_amp=-sched.target_amp, c_iy=-sched.c_iy)
        x = ctx.echo_pulse
        u = x @ _segment(flipped, ctx, holds, dt, frame) @ x @ u
        durations = 2 * durations
    return ScheduleRun(u, holds, durations, ctx, sched.detuning)


def hold_for_zx_area(sched: PulseSchedule, ctx: DeviceContext, area: float = 250.0,
                     n_amp: int = 9) -> tuple[float, float]:
    """Hold time (ns) that accumulates ``int nu_ZX dt = area`` (MHz ns) over one pulse.

    The ramps contribute through a cubic spline of the hold ``ZX`` rate as a
    function of drive amplitude, evaluated on the real part of the CR
    envelope.  Returns ``(nu_zx, hold)``; the default area is a quarter ZX
    cycle.
    """
    from scipy.interpolate import CubicSpline

    amps = np.linspace(0.0, 1.0, n_amp)
    zx = [0.0] + [
        hold_hamiltonian_eff(sched.with_(omega_cr=a * sched.omega_cr, target_amp=a * sched.target_amp), ctx).zx
        for a in amps[1:]
    ]
    spl = CubicSpline(amps * sched.omega_cr, zx)
    t = np.linspace(0.0, 2 * sched.t_r, 2001)
    re = np.real(cr_envelope(sched, ctx)(t) * np.exp(-1j * sched.cr_phase))
    ramp = float(np.trapezoid(spl(re), t))
    nu = float(zx[-1])
    if nu == 0:
        raise ValueError("nu_ZX = 0: the drive does not entangle")
    hold = (np.sign(nu) * area - ramp) / nu
    if hold < 0:
        raise ValueError("the ramps alone exceed the requested ZX area")
    return nu, float(hold)


def gate_unitary(ctx, sched: PulseSchedule, dt: float = DT_DUFFING, frame: Frame | str = Frame.ROTATING_RWA) -> np.ndarray:
    """4x4 computational-subspace propagator of a schedule in the qubit frame."""
    return simulate_schedule(ctx, sched, dt=dt, frame=frame).computational_block()[0]
