"""Sweep drivers: transition-error scans, error amplification, fidelity grids and robustness maps.

Every driver returns a list of row dictionaries in a deterministic coordinate
order.  Independent points run in a process pool when ``jobs > 1``; each task
is a pure function of its coordinates, so the output does not depend on the
number of workers.
"""
from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from math import sqrt
from typing import Callable, Sequence

import numpy as np
from scipy.signal import find_peaks

from .dynamics import (
    ControlModelParams,
    DrivenHamiltonian,
    Frame,
    control3_model,
    hold_propagator,
    label_index,
    propagate,
    transition_errors,
)
from .effective import methods_device, optimized_fidelity, pauli
from .pulseshape import (
    DragConfig,
    DragKind,
    DragStage,
    RampSpec,
    SampledEnvelope,
    TwoPhotonResonanceError,
    drag_chain,
)
from .schedule import DeviceContext, PulseSchedule, hold_for_zx_area, hold_hamiltonian_eff, simulate_schedule
from .units import to_angular

SCHEMES = ("flat_top_m1", "single_drag", "recursive_P", "recursive_G")
GRID_SCHEMES = ("flat_top", "corrected")
CHANNELS = {"d01": (0, 1), "d12": (1, 2), "d02": (0, 2)}
DT_CONTROL = 0.01
N_HOLDS = 64


class ConfigError(ValueError):
    """Invalid sweep or experiment configuration."""


def derive_seed(root: int, *coords) -> int:
    """Stable 32-bit seed from a root seed and task coordinates."""
    text = repr((int(root),) + tuple(coords)).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:4], "little")


def run_tasks(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Map ``fn`` over ``tasks`` preserving order, in a pool when ``jobs > 1``."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def write_rows(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    """CSV with a header; floats as ``%.12e``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([("%.12e" % r[c]) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])


# ---------------------------------------------------------------------------
# control-model pulses


@dataclass(frozen=True)
class ControlPulse:
    """CR envelope of a given scheme for the three-level control model.

    ``single_a`` and ``single_target`` define the single-derivative DRAG
    baseline ``Omega - i a dOmega/dt / Delta_target`` with ``single_target``
    one of ``"d10"``, ``"d21"``, ``"d20"``.
    """

    scheme: str
    omega_max: float
    t_r: float
    t_hold: float = 0.0
    m: int = 3
    single_a: float = 1.0
    single_target: str = "d10"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.scheme.startswith("recursive") and self.m < 3:
            raise ConfigError("recursive schemes need m >= 3")

    @property
    def spec(self) -> RampSpec:
        m = 1 if self.scheme == "flat_top_m1" else self.m
        return RampSpec(self.omega_max, self.t_r, self.t_hold, m)

    def stages(self, d10: float, d21: float, lambda12: float = sqrt(2.0)) -> list[DragStage]:
        if self.scheme == "flat_top_m1":
            return []
        if self.scheme == "single_drag":
            target = {"d10": d10, "d21": d21, "d20": d10 + d21}[self.single_target]
            return [DragStage(DragKind.PERTURBATIVE_1, target, scale=self.single_a)]
        return DragConfig(d10, d21, self.scheme[-1], lambda12=lambda12).stages()

    def envelope(self, d10: float, d21: float, lambda12: float = sqrt(2.0), scale: float = 1.0):
        spec, st = self.spec, self.stages(d10, d21, lambda12)

        def env(t):
            return scale * drag_chain(np.clip(t, 0.0, spec.t_f), spec, st)

        return env

    def sampled(self, d10: float, d21: float, lambda12: float = sqrt(2.0), dt: float = 0.1) -> SampledEnvelope:
        n = max(1, int(round(self.spec.t_f / dt)))
        t = np.linspace(0.0, self.spec.t_f, n + 1)
        return SampledEnvelope(self.spec.t_f / n, self.envelope(d10, d21, lambda12)(t))


def beat_period(d10: float, d21: float) -> float:
    """Period (ns) of the slowest beat among ``d10``, ``d21`` and ``d20``."""
    slow = min(abs(d10), abs(d21), abs(d10 + d21))
    return 1e3 / max(slow, 1e-6)


def hold_scan(pulse: ControlPulse, model: ControlModelParams, n_holds: int = N_HOLDS,
              dt: float = DT_CONTROL, scale: float = 1.0, design: tuple[float, float] | None = None) -> np.ndarray:
    """Control propagators for ``n_holds`` hold times over one slowest beat period.

    ``design`` overrides the detunings used to synthesize the pulse (for
    drift studies); ``scale`` multiplies the whole envelope.
    """
    d10, d21 = design or (model.d10, model.d21)
    zero = replace(pulse, t_hold=0.0)
    env = zero.envelope(d10, d21, model.lambda12, scale)
    h = control3_model(model, env)
    t_r = pulse.t_r
    up = propagate(h, (0.0, t_r), dt).unitary
    down = propagate(h, (t_r, 2 * t_r), dt).unitary
    taus = pulse.t_hold + np.linspace(0.0, beat_period(model.d10, model.d21), n_holds, endpoint=False)
    return down @ hold_propagator(h.constant([scale * pulse.omega_max]), taus) @ up


# ---------------------------------------------------------------------------
# transition-error scan


@dataclass(frozen=True)
class SweepConfig:
    """Grid definition shared by the sweep drivers."""

    schemes: tuple[str, ...] = ("flat_top_m1", "recursive_P", "recursive_G")
    detunings: tuple[float, ...] = tuple(np.linspace(40.0, 260.0, 23))
    omega_max: tuple[float, ...] = (30.0,)
    t_r: tuple[float, ...] = (10.0,)
    n_holds: int = N_HOLDS
    seed: int = 0
    anharmonicity: float = -300.0
    lambda12: float = sqrt(2.0)
    m: int = 3
    single_a: float = 1.0
    single_target: str = "d10"
    dt: float = DT_CONTROL

    def __post_init__(self):
        for k in ("schemes", "detunings", "omega_max", "t_r"):
            v = getattr(self, k)
            v = (v,) if isinstance(v, (str, int, float)) else tuple(v)
            if not v:
                raise ConfigError(f"{k} must be nonempty")
            object.__setattr__(self, k, v)
        if self.n_holds < 1:
            raise ConfigError("n_holds must be positive")


def _scan_task(args) -> list[dict]:
    cfg, scheme, d10, om, tr = args
    model = ControlModelParams(d10, d10 + cfg.anharmonicity, cfg.lambda12)
    row = dict(scheme=scheme, delta_MHz=float(d10), omega_max_MHz=float(om), t_r_ns=float(tr))
    try:
        pulse = ControlPulse(scheme, om, tr, 0.0, cfg.m, cfg.single_a, cfg.single_target)
        u = hold_scan(pulse, model, cfg.n_holds, cfg.dt)
    except TwoPhotonResonanceError:
        return [dict(row, p01=np.nan, p02=np.nan, p12=np.nan, total=np.nan)]
    p01, p02, p12 = transition_errors(u)
    total = p01 + p02 + p12
    k = int(np.argmax(total))
    return [dict(row, p01=float(p01[k]), p02=float(p02[k]), p12=float(p12[k]), total=float(total[k]))]


def transition_error_scan(cfg: SweepConfig, model: ControlModelParams | None = None, jobs: int = 1) -> list[dict]:
    """Worst total transition error over the hold scan for each scheme and detuning.

    ``model`` supplies ``lambda12`` (its detunings are replaced by the grid);
    the per-transition columns belong to the hold with the largest total.
    """
    if model is not None:
        cfg = replace(cfg, lambda12=model.lambda12)
    tasks = [(cfg, s, float(d), float(om), float(tr)) for om in cfg.omega_max for tr in cfg.t_r
             for s in cfg.schemes for d in cfg.detunings]
    return [r for rows in run_tasks(_scan_task, tasks, jobs) for r in rows]


SCAN_COLUMNS = ("scheme", "delta_MHz", "p01", "p02", "p12", "total")


# ---------------------------------------------------------------------------
# error amplification


@dataclass(frozen=True)
class AmplificationConfig:
    n_reps: int = 30
    phi_grid: tuple[float, ...] = tuple(np.linspace(0.0, 2 * np.pi, 360, endpoint=False))
    init_state: int | None = None
    channel: str = "d01"
    shots: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ConfigError(f"unknown channel {self.channel!r}")
        if self.n_reps < 1:
            raise ConfigError("n_reps must be >= 1")
        phi = np.asarray(self.phi_grid, float)
        if phi.size == 0 or phi.min() < 0 or phi.max() >= 2 * np.pi:
            raise ConfigError("phi_grid must lie in [0, 2 pi)")
        object.__setattr__(self, "phi_grid", tuple(float(x) for x in phi))

    @property
    def initial(self) -> int:
        return CHANNELS[self.channel][0] if self.init_state is None else int(self.init_state)


def pulse_unitary(pulse: ControlPulse, model: ControlModelParams, dt: float = DT_CONTROL) -> np.ndarray:
    env = pulse.envelope(model.d10, model.d21, model.lambda12)
    return propagate(control3_model(model, env), (0.0, pulse.spec.t_f), dt).unitary


def amplified_populations(u: np.ndarray, n_reps: int, phi, init: int) -> np.ndarray:
    """Populations after ``n_reps`` of (pulse, virtual phase ``phi``), shape ``(len(phi), 3)``.

    The virtual phase is a drive-phase shift, i.e. ``diag(1, e^{-i phi}, e^{-2 i phi})``
    after every pulse.
    """
    phi = np.atleast_1d(np.asarray(phi, float))
    d = np.exp(-1j * np.outer(phi, np.arange(u.shape[-1])))
    g = d[:, :, None] * u[None]
    gn = np.linalg.matrix_power(g, n_reps)
    return np.abs(gn[:, :, init]) ** 2


def amplification_experiment(cfg: AmplificationConfig, pulse: ControlPulse, model: ControlModelParams,
                             dt: float = DT_CONTROL) -> list[dict]:
    """Final control populations versus virtual phase."""
    u = pulse_unitary(pulse, model, dt)
    p = amplified_populations(u, cfg.n_reps, cfg.phi_grid, cfg.initial)
    if cfg.shots > 0:
        rng = np.random.default_rng(derive_seed(cfg.seed, "amplify", cfg.channel, cfg.n_reps))
        q = np.clip(p, 0, None)
        q = q / q.sum(axis=1, keepdims=True)
        p = np.array([rng.multinomial(cfg.shots, row) for row in q]) / cfg.shots
    return [dict(phi_rad=float(f), p0=float(a), p1=float(b), p2=float(c)) for f, (a, b, c) in zip(cfg.phi_grid, p)]


AMPLIFY_COLUMNS = ("phi_rad", "p0", "p1", "p2")


def pair_phase(pulse: ControlPulse, model: ControlModelParams, channel: str, n_samples: int = 20001) -> float:
    """Dynamical phase ``int (E_j - E_i) dt`` of a level pair (rad).

    ``E`` are the instantaneous eigenvalues of the driven control Hamiltonian,
    each followed continuously from its bare level.
    """
    i, j = CHANNELS[channel]
    env = pulse.envelope(model.d10, model.d21, model.lambda12)
    h = control3_model(model, env)
    t = np.linspace(0.0, pulse.spec.t_f, n_samples)
    e = np.linalg.eigvalsh(h(t))
    rank = np.argsort(np.argsort(np.diag(h.h0).real))
    return float(np.trapezoid(e[:, rank[j]] - e[:, rank[i]], t))


def predicted_resonances(pulse: ControlPulse, model: ControlModelParams, channel: str) -> np.ndarray:
    """Virtual phases in ``[0, 2 pi)`` where the pulse error of ``channel`` adds up coherently."""
    i, j = CHANNELS[channel]
    n = j - i
    th = pair_phase(pulse, model, channel)
    return np.sort(np.mod((-th + 2 * np.pi * np.arange(n)) / n, 2 * np.pi))


def find_dips(rows: Sequence[dict], channel: str, rel_prominence: float = 0.5, floor: float = 1e-3) -> np.ndarray:
    """Phases where the channel's transferred population peaks.

    The transferred population is that of the channel's upper level; peaks
    count when their prominence exceeds ``rel_prominence`` of the largest and
    ``floor`` in absolute terms.  The grid is treated as periodic.
    """
    i, j = CHANNELS[channel]
    phi = np.array([r["phi_rad"] for r in rows])
    y = np.array([r[f"p{j}"] for r in rows])
    n = len(y)
    ext = np.r_[y, y, y]
    peaks, props = find_peaks(ext, prominence=0.0)
    keep = (peaks >= n) & (peaks < 2 * n)
    peaks, prom = peaks[keep] - n, props["prominences"][keep]
    if prom.size == 0:
        return np.array([])
    sel = prom >= max(rel_prominence * prom.max(), floor)
    return np.sort(phi[peaks[sel]])


def dip_depth(rows: Sequence[dict], channel: str, phi: float) -> float:
    """Transferred population at the grid point closest to ``phi``."""
    j = CHANNELS[channel][1]
    grid = np.array([r["phi_rad"] for r in rows])
    d = np.abs(np.angle(np.exp(1j * (grid - phi))))
    return float(rows[int(np.argmin(d))][f"p{j}"])


# ---------------------------------------------------------------------------
# fidelity grid


def closed_form_corrections(sched: PulseSchedule, ctx: DeviceContext, n_iter: int = 2) -> PulseSchedule:
    """IY-DRAG amplitude and IZ detuning from the hold effective Hamiltonian.

    The IY-DRAG rotation turns ``ZZ`` into ``ZX`` and at the same time mixes
    ``IX`` into ``IZ``; the detuning therefore nulls ``IZ`` in the rotated
    frame, ``nu_IZ - nu_ZZ nu_IX / nu_ZX``.
    """
    h = hold_hamiltonian_eff(sched, ctx)
    sched = sched.with_(c_iy=-(h.zz / h.zx) / to_angular(1.0))
    for _ in range(n_iter):
        h = hold_hamiltonian_eff(sched, ctx)
        sched = sched.with_(detuning=sched.detuning - (h.iz - h.zz * h.ix / h.zx))
    return sched


def grid_schedule(ctx: DeviceContext, scheme: str, omega_max: float, t_r: float) -> PulseSchedule:
    if scheme == "flat_top":
        return PulseSchedule(omega_max, t_r, 0.0, 1, "flat")
    if scheme == "corrected":
        return closed_form_corrections(PulseSchedule(omega_max, t_r, 0.0, 3, "G"), ctx)
    raise ConfigError(f"unknown grid scheme {scheme!r}; choose from {GRID_SCHEMES}")


def zx_gate_infidelity(ctx: DeviceContext, sched: PulseSchedule, dt: float = 0.01,
                       frame: Frame | str = Frame.ROTATING_RWA) -> tuple[float, PulseSchedule]:
    """Optimized infidelity of a single-pulse ``ZX(pi/2)`` gate.

    The hold accumulates a quarter ZX cycle over the whole pulse.
    """
    nu, hold = hold_for_zx_area(sched, ctx)
    sched = sched.with_(t_hold=hold)
    u = simulate_schedule(ctx, sched, dt=dt, frame=frame).computational_block()[0]
    ideal = np.cos(np.pi / 4) * np.eye(4) - 1j * np.sign(nu) * np.sin(np.pi / 4) * pauli("ZX")
    return 1.0 - optimized_fidelity(u, ideal).optimized, sched


_CTX_CACHE: dict = {}


def _device_ctx(delta: float, device: dict) -> DeviceContext:
    key = (float(delta), tuple(sorted(device.items())))
    if key not in _CTX_CACHE:
        _CTX_CACHE[key] = DeviceContext(methods_device(delta, **device))
    return _CTX_CACHE[key]


def _grid_task(args) -> dict:
    delta, om, tr, scheme, device, dt, frame = args
    ctx = _device_ctx(delta, device)
    inf, sched = zx_gate_infidelity(ctx, grid_schedule(ctx, scheme, om, tr), dt, frame)
    return dict(delta_MHz=float(delta), omega_max_MHz=float(om), t_r_ns=float(tr), scheme=scheme,
                infidelity=float(inf), t_hold_ns=sched.t_hold)


def fidelity_grid(cfg: SweepConfig, device: dict | None = None, jobs: int = 1, dt: float = 0.01,
                  frame: Frame | str = Frame.ROTATING_RWA) -> list[dict]:
    """Single-pulse ZX gate infidelity over detuning, amplitude and ramp time.

    ``device`` holds keyword overrides for :func:`~crdrag.effective.methods_device`.
    Schemes are ``flat_top`` (plain ``sin`` ramps) and ``corrected``
    (recursive Givens DRAG with IY-DRAG and IZ detuning).
    """
    device = dict(device or {})
    schemes = [s for s in cfg.schemes if s in GRID_SCHEMES] or list(GRID_SCHEMES)
    tasks = [(float(d), float(om), float(tr), s, device, dt, Frame(frame).value)
             for d in cfg.detunings for om in cfg.omega_max for tr in cfg.t_r for s in schemes]
    return run_tasks(_grid_task, tasks, jobs)


GRID_COLUMNS = ("delta_MHz", "omega_max_MHz", "t_r_ns", "scheme", "infidelity")


# ---------------------------------------------------------------------------
# robustness


@dataclass(frozen=True)
class RobustnessConfig:
    """Nominal synthesis point and drift grids (fractional amplitude, MHz detuning)."""

    omega_max: float = 40.0
    delta: float = 110.0
    t_r: float = 10.0
    m: int = 3
    variant: str = "G"
    eps_omega: tuple[float, ...] = (-0.1, 0.0, 0.1)
    eps_delta: tuple[float, ...] = (-11.0, 0.0, 11.0)
    n_holds: int = N_HOLDS
    device: dict = field(default_factory=dict)
    dt: float = 0.01

    def __post_init__(self):
        for k in ("eps_omega", "eps_delta"):
            v = tuple(float(x) for x in np.atleast_1d(getattr(self, k)))
            if 0.0 not in v:
                raise ConfigError(f"{k} must contain the nominal point 0")
            object.__setattr__(self, k, v)


def control_transition_errors(ctx: DeviceContext, u: np.ndarray) -> np.ndarray:
    """``(p01, p02, p12)`` of the control Transmon with target and coupler in ``|0>``.

    Probabilities are summed over the final target and coupler states in the
    dressed basis; ``u`` may be a stack of propagators.
    """
    n = ctx.dev.levels
    v = ctx.spectrum.vectors
    ud = v.conj().T @ u @ v
    p = np.abs(ud) ** 2
    rows = {c: [label_index(n, (c, t, a)) for t in range(n) for a in range(n)] for c in range(3)}
    i0, i1 = label_index(n, (0, 0, 0)), label_index(n, (1, 0, 0))
    return np.stack([p[..., rows[1], i0].sum(-1), p[..., rows[2], i0].sum(-1), p[..., rows[2], i1].sum(-1)], -1)


def _robust_task(args) -> dict:
    cfg, eo, ed = args
    nominal = methods_device(cfg.delta, **cfg.device)
    ctx0 = _device_ctx(cfg.delta, cfg.device)
    design = ctx0.control_detunings()
    dev = replace(nominal, omega_c=nominal.omega_c + ed, omega_d=ctx0.omega_d)
    ctx = DeviceContext(dev)
    d10, d21 = ctx.control_detunings()
    taus = np.linspace(0.0, beat_period(d10, d21), cfg.n_holds, endpoint=False)
    u = _drifted_run(ctx, cfg, eo, design, taus)
    p = control_transition_errors(ctx, u)
    k = int(np.argmax(p.sum(-1)))
    return dict(eps_omega=float(eo), eps_delta_MHz=float(ed), p01=float(p[k, 0]), p02=float(p[k, 1]),
                p12=float(p[k, 2]), total=float(p[k].sum()))


def _drifted_run(ctx: DeviceContext, cfg: RobustnessConfig, eo: float, design, taus) -> np.ndarray:
    # the nominal pulse is scaled, not re-synthesized at the drifted amplitude
    spec = RampSpec(cfg.omega_max, cfg.t_r, 0.0, cfg.m)
    stages = DragConfig(design[0], design[1], cfg.variant).stages() if cfg.variant != "flat" else []

    def env(t):
        return (1 + eo) * drag_chain(np.clip(t, 0.0, spec.t_f), spec, stages)

    ops = ctx.ops
    h = DrivenHamiltonian(ops.static, [(ops.control, env)], Frame.ROTATING_RWA, ctx.omega_d, ops.number)
    up = propagate(h, (0.0, cfg.t_r), cfg.dt).unitary
    down = propagate(h, (cfg.t_r, 2 * cfg.t_r), cfg.dt).unitary
    return down @ hold_propagator(h.constant([cfg.omega_max * (1 + eo)]), taus) @ up


def robustness_map(cfg: RobustnessConfig, jobs: int = 1) -> list[dict]:
    """Total control transition error of the nominal pulse under amplitude and frequency drift.

    The pulse is synthesized once for the nominal device; the drift moves the
    control frequency by ``eps_delta`` and scales the envelope by
    ``1 + eps_omega``.
    """
    tasks = [(cfg, eo, ed) for eo in cfg.eps_omega for ed in cfg.eps_delta]
    return run_tasks(_robust_task, tasks, jobs)


ROBUST_COLUMNS = ("eps_omega", "eps_delta_MHz", "p01", "p02", "p12", "total")
