"""Base ramps and recursive multi-derivative DRAG transforms for CR pulses.

All amplitudes are linear frequencies in MHz and all times are in ns.  The
transforms themselves work in angular units (rad/ns); conversion happens at
the boundary of :func:`drag_chain`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from math import gamma, pi, sqrt
from pathlib import Path
from typing import Sequence

import numpy as np

from .jet import Jet, JetOrderError
from .units import to_angular, to_mhz

TWO_PHOTON_GUARD_MHZ = 5.0
PHASE_FLOOR = 1e-14


class PulseError(ValueError):
    """Invalid pulse specification or synthesis request."""


class TwoPhotonResonanceError(PulseError):
    pass


class InsufficientSmoothnessError(PulseError):
    pass


@dataclass(frozen=True)
class RampSpec:
    """Flat-top pulse with ``sin^m`` rise and conjugated, time-reversed fall."""

    omega_max: float
    t_r: float
    t_hold: float = 0.0
    m: int = 3

    def __post_init__(self):
        if not self.t_r > 0:
            raise PulseError("t_r must be positive")
        if self.t_hold < 0:
            raise PulseError("t_hold must be non-negative")
        if int(self.m) != self.m or self.m < 1:
            raise PulseError("m must be an integer >= 1")

    @property
    def t_f(self) -> float:
        return 2 * self.t_r + self.t_hold

    @property
    def norm(self) -> float:
        """Normalization so that the rise reaches ``omega_max`` at ``t_r``."""
        area = self.t_r / sqrt(pi) * gamma((self.m + 1) / 2) / gamma(self.m / 2 + 1)
        return 1.0 / area


class DragKind(str, Enum):
    PERTURBATIVE_1 = "perturbative_1"
    PERTURBATIVE_2 = "perturbative_2"
    GIVENS_1 = "givens_1"


@dataclass(frozen=True)
class DragStage:
    """One substitution in the recursive chain.

    ``delta`` is the detuning of the suppressed transition (MHz), ``kappa`` the
    linear coupling coefficient used by the Givens substitution and ``scale``
    the free coefficient multiplying the derivative term.
    """

    kind: DragKind
    delta: float
    kappa: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DragKind(self.kind))
        if self.delta == 0:
            raise PulseError("stage detuning must be non-zero")
        if not 0.0 <= self.scale <= 2.0:
            raise PulseError("stage scale must lie in [0, 2]")

    @property
    def photons(self) -> int:
        return 2 if self.kind is DragKind.PERTURBATIVE_2 else 1


@dataclass(frozen=True)
class SampledEnvelope:
    """Complex envelope samples ``samples[k]`` at ``t0 + k*dt``."""

    dt: float
    samples: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=complex))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))

    @property
    def duration(self) -> float:
        return self.dt * (len(self.samples) - 1)

    def __len__(self) -> int:
        return len(self.samples)

    def to_csv(self, path) -> None:
        write_envelope_csv(path, self)


# ---------------------------------------------------------------------------
# base ramp


def _sin_power_integral(x: np.ndarray, m: int) -> np.ndarray:
    """``int_0^x sin(u)^m du`` by the reduction formula."""
    s, c = np.sin(x), np.cos(x)
    acc = x if m % 2 == 0 else 1.0 - c
    for n in range(2 + m % 2, m + 1, 2):
        acc = -(s ** (n - 1)) * c / n + (n - 1) / n * acc
    return acc


def _rise_jet(t: np.ndarray, spec: RampSpec) -> np.ndarray:
    """Derivatives 0..3 of the rise segment (times clipped to ``[0, t_r]``)."""
    m = spec.m
    k = pi / spec.t_r
    x = k * np.clip(t, 0.0, spec.t_r)
    s, c = np.sin(x), np.cos(x)
    amp = spec.omega_max * spec.norm
    d0 = amp * _sin_power_integral(x, m) / k
    d1 = amp * s**m
    d2 = amp * m * k * s ** (m - 1) * c
    curv = (m - 1) * s ** (m - 2) * c**2 if m >= 2 else 0.0
    d3 = amp * m * k**2 * (curv - s**m)
    return np.stack(np.broadcast_arrays(d0, d1, d2, d3)).astype(float)


def ramp_sin_m(t, spec: RampSpec) -> Jet:
    """Value and first three derivatives of the flat-top ``sin^m`` ramp.

    The rise is ``omega_max * norm * int_0^t sin^m(pi t'/t_r) dt'``; the hold is
    constant and the fall mirrors the rise.

    Raises
    ------
    PulseError
        If any ``t`` lies outside ``[0, t_f]``.
    """
    t = np.asarray(t, dtype=float)
    tol = 1e-9 * spec.t_f
    if np.any(t < -tol) or np.any(t > spec.t_f + tol):
        raise PulseError(f"t outside [0, {spec.t_f}] ns")
    t = np.clip(t, 0.0, spec.t_f)
    rise = _rise_jet(t, spec)
    fall = _rise_jet(spec.t_f - t, spec)
    fall[1::2] *= -1
    d = np.where(t <= spec.t_r, rise, 0.0)
    hold = (t > spec.t_r) & (t < spec.t_r + spec.t_hold)
    d = np.where(hold, np.array([spec.omega_max, 0.0, 0.0, 0.0]).reshape((4,) + (1,) * t.ndim), d)
    d = np.where(t >= spec.t_r + spec.t_hold, fall, d)
    return Jet.from_derivatives(*d)


# ---------------------------------------------------------------------------
# substitutions


def enforce_branch_continuity(values) -> np.ndarray:
    """Square roots of an ordered sequence with a continuous branch.

    Each element is ± the principal root, the sign chosen to stay closest to
    the previous returned element.
    """
    p = np.sqrt(np.asarray(values, dtype=complex))
    if p.ndim == 0 or p.size < 2:
        return p
    overlap = (p[1:] * np.conj(p[:-1])).real
    flips = np.where(overlap < 0, -1.0, 1.0)
    sign = np.concatenate([[1.0], np.cumprod(flips)])
    return p * sign


def apply_perturbative_drag(x: Jet, stage: DragStage, ordered: bool = True) -> Jet:
    """``(x^n - i a d/dt(x^n) / delta)^(1/n)`` for ``n`` in {1, 2}.

    ``x`` holds angular amplitudes (rad/ns); ``stage.delta`` is in MHz.
    With ``ordered`` and 1-D samples the square-root branch follows
    :func:`enforce_branch_continuity`.
    """
    if stage.kind not in (DragKind.PERTURBATIVE_1, DragKind.PERTURBATIVE_2):
        raise PulseError(f"unsupported perturbative stage {stage.kind}")
    n = stage.photons
    if x.order < 1:
        raise JetOrderError(f"{stage.kind.value} needs a jet of order >= 1")
    delta = to_angular(stage.delta)
    lower = x.truncate(x.order - 1)
    if n == 1:
        return lower - 1j * stage.scale * x.diff() / delta
    x2 = x * x
    y = x2.truncate(x.order - 1) - 1j * stage.scale * x2.diff() / delta
    root = None
    if ordered and y.value.ndim == 1:
        root = enforce_branch_continuity(y.value)
    return y.sqrt(root)


def apply_givens_drag(x: Jet, stage: DragStage, amp_floor: float | None = None) -> Jet:
    """Exact two-level substitution for a single-photon coupling ``g = kappa * x``.

    Returns ``((delta + phidot)/delta) x + (i e^{i phi}/kappa) d/dt arctan(-|kappa x|/delta)``.
    Where ``|x|`` falls below ``amp_floor`` the phase is held at its nearest
    defined value and ``phidot`` is set to zero.
    """
    if stage.kind is not DragKind.GIVENS_1:
        raise PulseError(f"expected a givens_1 stage, got {stage.kind}")
    if stage.kappa == 0:
        raise PulseError("kappa must be non-zero")
    if x.order < 1:
        raise JetOrderError("givens_1 needs a jet of order >= 1")
    delta = to_angular(stage.delta) / stage.scale if stage.scale else np.inf
    kappa = stage.kappa
    xv = np.asarray(x.value)
    if amp_floor is None:
        amp_floor = PHASE_FLOOR * max(np.max(np.abs(xv)), 1e-300)
    defined = np.abs(xv) > amp_floor

    safe = Jet(np.where(defined, x.c, 1.0))
    r = safe.abs()
    u = safe / r
    phidot = (u.conj() * u.diff()).imag
    theta = (r * (-kappa / delta)).arctan()
    lower = x.truncate(x.order - 1)
    out = lower * (1.0 + phidot / delta) + (1j / kappa) * (u.truncate(x.order - 1) * theta.diff())

    # removable point: the output is taken as the input there
    return Jet(np.where(defined, out.c, lower.c))


def _apply_stage(x: Jet, stage: DragStage, ordered: bool) -> Jet:
    if stage.kind is DragKind.GIVENS_1:
        return apply_givens_drag(x, stage)
    return apply_perturbative_drag(x, stage, ordered=ordered)


# ---------------------------------------------------------------------------
# recursive chain


class Variant(str, Enum):
    PERTURBATIVE = "P"
    GIVENS = "G"


@dataclass(frozen=True)
class DragConfig:
    """Chain definition for the three-transition recursive DRAG pulse.

    ``scales`` holds the free coefficients ``(a01, a12, a02)``.  ``kappa10`` and
    ``kappa21`` are only used by the Givens variant; ``None`` selects the default
    bookkeeping from :func:`default_kappas`.
    """

    d10: float
    d21: float
    variant: Variant = Variant.GIVENS
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kappa10: float | None = None
    kappa21: float | None = None
    lambda12: float = sqrt(2.0)
    guard: float = TWO_PHOTON_GUARD_MHZ

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))

    @property
    def d20(self) -> float:
        return self.d10 + self.d21

    def stages(self) -> list[DragStage]:
        if abs(self.d20) < self.guard:
            raise TwoPhotonResonanceError(
                f"|d20| = {abs(self.d20):.3g} MHz is inside the two-photon guard ({self.guard} MHz)"
            )
        a01, a12, a02 = self.scales
        k10, k21 = default_kappas(self.d10, self.d21, self.lambda12)
        k10 = k10 if self.kappa10 is None else self.kappa10
        k21 = k21 if self.kappa21 is None else self.kappa21
        single = DragKind.GIVENS_1 if self.variant is Variant.GIVENS else DragKind.PERTURBATIVE_1
        return [
            DragStage(DragKind.PERTURBATIVE_2, self.d20, scale=a02),
            DragStage(single, self.d21, kappa=k21, scale=a12),
            DragStage(single, self.d10, kappa=k10, scale=a01),
        ]


def default_kappas(d10: float, d21: float, lambda12: float = sqrt(2.0)) -> tuple[float, float]:
    """Linear coupling coefficients of the 0-1 and 1-2 Givens stages.

    Each stage sees the bare matrix element of its own transition: ``1`` for
    0-1 and ``lambda12`` for 1-2.  The detunings are accepted for interface
    symmetry with other bookkeeping choices.
    """
    return 1.0, float(lambda12)


def drag_chain(t, spec: RampSpec, stages: Sequence[DragStage]) -> np.ndarray:
    """Evaluate the DRAG-corrected pulse (MHz) at times ``t`` in ``[0, t_f]``.

    The chain is applied to the rise only; the fall is the conjugated,
    time-reversed rise.  ``t`` should be sorted when a two-photon stage is used.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    need = sum(1 for _ in stages)
    if need > 3:
        raise PulseError("at most three stages are supported")
    if stages and spec.m < need:
        raise InsufficientSmoothnessError(f"{need} stages need m >= {need}, got m={spec.m}")
    tr = spec.t_r
    out = np.full(t.shape, spec.omega_max, dtype=complex)
    rise = t <= tr
    fall = t >= tr + spec.t_hold
    for mask, tau, mirror in ((rise, t, False), (fall, spec.t_f - t, True)):
        if not np.any(mask):
            continue
        tt = tau[mask]
        order = np.argsort(tt, kind="stable")
        vals = _rise_chain(tt[order], spec, stages)
        res = np.empty_like(vals)
        res[order] = vals
        out[mask] = np.conj(res) if mirror else res
    return out


def _rise_chain(tau: np.ndarray, spec: RampSpec, stages: Sequence[DragStage]) -> np.ndarray:
    base = _rise_jet(tau, spec)
    x = Jet.from_derivatives(*to_angular(base).astype(complex))
    for st in stages:
        x = _apply_stage(x, st, ordered=True)
    return to_mhz(x.value)


def recursive_drag(
    spec: RampSpec,
    d10: float,
    d21: float,
    variant: str | Variant = Variant.GIVENS,
    scales: Sequence[float] = (1.0, 1.0, 1.0),
    dt: float = 0.1,
    **config,
) -> SampledEnvelope:
    """Sampled recursive DRAG envelope on the grid ``0, dt, ..., t_f``."""
    if spec.m < 3:
        raise InsufficientSmoothnessError("the recursive chain needs m >= 3")
    cfg = DragConfig(d10, d21, Variant(variant), tuple(scales), **config)
    n = int(round(spec.t_f / dt))
    t = np.linspace(0.0, spec.t_f, n + 1)
    return SampledEnvelope(spec.t_f / n, drag_chain(t, spec, cfg.stages()))


def iy_drag_envelope(target_rise: RampSpec, c_iy: float, dt: float = 0.1) -> SampledEnvelope:
    """``c_iy`` times the time-derivative of the target drive envelope."""
    n = int(round(target_rise.t_f / dt))
    t = np.linspace(0.0, target_rise.t_f, n + 1)
    return SampledEnvelope(target_rise.t_f / n, c_iy * ramp_sin_m(t, target_rise).d1)


def apply_iz_detuning(env: SampledEnvelope, nu_iz: float) -> SampledEnvelope:
    """Multiply each sample by ``exp(-i 2 pi 1e-3 nu_iz t / 2)``."""
    phase = np.exp(-0.5j * to_angular(nu_iz) * env.times)
    return SampledEnvelope(env.dt, env.samples * phase, env.t0)


# ---------------------------------------------------------------------------
# CSV


def write_envelope_csv(path, env: SampledEnvelope) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ns", "re_MHz", "im_MHz"])
        for t, z in zip(env.times, env.samples):
            w.writerow(["%.12e" % t, "%.12e" % z.real, "%.12e" % z.imag])


def read_envelope_csv(path) -> SampledEnvelope:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    dt = (t[-1] - t[0]) / (len(t) - 1) if len(t) > 1 else 0.0
    return SampledEnvelope(dt, data[:, 1] + 1j * data[:, 2], float(t[0]))
