"""Simulated CR Hamiltonian tomography.

The target qubit starts in ``|0>`` while the control sits in ``|b>``.  For a
block-diagonal generator the target precesses about the axis
``omega^(b) = s_b nu_Z* + nu_I*`` with ``s_b = +1`` for ``b = 0`` and ``-1`` for
``b = 1``; fitting the Bloch trajectories for both control states and
combining them returns the six coefficients.

Sample times are effective rotation times: a sample at ``t`` is a complete
flat-top pulse with hold ``t - t_r``, whose two ramps together act like
``t_r`` of hold.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .dynamics import DeviceParams, expm_hermitian
from .effective import EffectiveHamiltonian, PAULI
from .schedule import DeviceContext, PulseSchedule, hold_hamiltonian_eff, simulate_schedule
from .units import to_angular

LEAKAGE_GUARD = 0.05
MAX_POINT_RESIDUAL = 0.1
N_POINTS = 40
N_PERIODS = 1.5
LOW_ROTATION = 0.02


class FitError(RuntimeError):
    """Raised when a staged fit does not converge; ``stages`` holds diagnostics."""

    def __init__(self, msg, stages=None):
        super().__init__(msg)
        self.stages = stages or []


class ModelViolationWarning(UserWarning):
    """The control state left its initial level beyond the tomography guard."""


@dataclass
class TomographyDataset:
    """Target Bloch components for control state ``b`` at effective times (ns)."""

    times: np.ndarray
    b: int
    ex: np.ndarray
    ey: np.ndarray
    ez: np.ndarray
    shots: int = 0
    warning: str | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.ex, self.ey, self.ez = (np.asarray(a, float) for a in (self.ex, self.ey, self.ez))
        if self.b not in (0, 1):
            raise ValueError("b must be 0 or 1")
        if not (len(self.times) == len(self.ex) == len(self.ey) == len(self.ez)):
            raise ValueError("times and expectations must have equal lengths")

    @property
    def sign(self) -> int:
        return 1 - 2 * self.b

    def stacked(self) -> np.ndarray:
        return np.stack([self.ex, self.ey, self.ez])

    def to_csv(self, path) -> None:
        write_datasets_csv(path, [self])


def write_datasets_csv(path, datasets: Sequence[TomographyDataset]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ns", "b", "ex", "ey", "ez", "shots"])
        for d in datasets:
            for row in zip(d.times, d.ex, d.ey, d.ez):
                w.writerow(["%.12e" % row[0], d.b, *("%.12e" % v for v in row[1:]), d.shots])


def read_datasets_csv(path) -> list[TomographyDataset]:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    out = []
    for b in (0, 1):
        sel = data[data[:, 1] == b]
        if len(sel):
            out.append(TomographyDataset(sel[:, 0], b, sel[:, 2], sel[:, 3], sel[:, 4], int(sel[0, 5])))
    return out


@dataclass(frozen=True)
class AxisRates:
    """Precession axis of the target (MHz) with fit diagnostics."""

    wx: float
    wy: float
    wz: float
    sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    residual: float = 0.0
    stage: int = 0
    stage_residuals: tuple[float, ...] = field(default=())

    @property
    def w(self) -> float:
        return float(np.sqrt(self.wx ** 2 + self.wy ** 2 + self.wz ** 2))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.wx, self.wy, self.wz])

    def report(self) -> dict:
        return {"wx": self.wx, "wy": self.wy, "wz": self.wz, "w": self.w, "residual": self.residual, "stage": self.stage}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.report(), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# closed-form model


def model_xyz(t, rates) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bloch components of a target starting in ``|0>`` under constant ``rates``.

    ``rates`` is an :class:`AxisRates` or a ``(wx, wy, wz)`` triple in MHz.
    """
    wx, wy, wz = (rates.wx, rates.wy, rates.wz) if isinstance(rates, AxisRates) else rates
    t = np.asarray(t, float)
    w2 = wx * wx + wy * wy + wz * wz
    if w2 == 0:
        return np.zeros_like(t), np.zeros_like(t), np.ones_like(t)
    w = np.sqrt(w2)
    c = np.cos(to_angular(w) * t)
    s = np.sin(to_angular(w) * t)
    ex = (wx * wz * (1 - c) + w * wy * s) / w2
    ey = (wy * wz * (1 - c) - w * wx * s) / w2
    ez = ((wx * wx + wy * wy) * c + wz * wz) / w2
    return ex, ey, ez


def combine_to_nu(rates0: AxisRates, rates1: AxisRates) -> EffectiveHamiltonian:
    """Split the two precession axes into control-conditional and plain parts."""
    a, b = rates0.vector, rates1.vector
    z = (a - b) / 2
    i = (a + b) / 2
    return EffectiveHamiltonian(*(float(x) for x in z), *(float(x) for x in i))


def axis_rates(nu: EffectiveHamiltonian, b: int) -> tuple[float, float, float]:
    s = 1 - 2 * b
    return (s * nu.zx + nu.ix, s * nu.zy + nu.iy, s * nu.zz + nu.iz)


# ---------------------------------------------------------------------------
# data generation


def _sample(ex, ey, ez, shots: int, rng: np.random.Generator):
    out = []
    for e in (ex, ey, ez):
        p1 = np.clip((1 - e) / 2, 0.0, 1.0)
        out.append(1 - 2 * rng.binomial(shots, p1) / shots)
    return out


def _bloch(psi4: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Target Bloch vector and control populations of 4-component states ``(..., 4)``."""
    a = psi4.reshape(psi4.shape[:-1] + (2, 2))
    rho = np.einsum("...ci,...cj->...ij", a, a.conj())
    comp = [np.real(np.einsum("...ij,ji->...", rho, PAULI[k])) for k in "XYZ"]
    pop_c = np.sum(np.abs(a) ** 2, axis=-1)
    return comp[0], comp[1], comp[2], pop_c


def _finish(times, b, ex, ey, ez, shots, seed, warn=None) -> TomographyDataset:
    if shots > 0:
        ex, ey, ez = _sample(ex, ey, ez, shots, np.random.default_rng(seed))
    if warn:
        warnings.warn(warn, ModelViolationWarning, stacklevel=3)
    return TomographyDataset(times, b, ex, ey, ez, shots, warn)


def synthetic_dataset(nu: EffectiveHamiltonian, times, b: int, shots: int = 0, seed: int = 0) -> TomographyDataset:
    """Dataset from exact evolution under the 4x4 generator of ``nu``."""
    times = np.asarray(times, float)
    h = to_angular(nu.matrix())
    u = expm_hermitian(h, times)
    psi = u[..., :, 2 * b]
    ex, ey, ez, _ = _bloch(psi)
    return _finish(times, b, ex, ey, ez, shots, seed)


def simulate_tomography(
    schedule: PulseSchedule,
    dev: DeviceParams | DeviceContext,
    times,
    b: int | Sequence[int] = (0, 1),
    shots: int = 0,
    seed: int = 0,
    dt: float | None = None,
):
    """Bloch trajectories of the target on the Duffing device.

    Returns one :class:`TomographyDataset`, or a list when ``b`` is a sequence.
    Each control state uses its own derived seed so the datasets are
    independent of the order in which they are requested.
    """
    ctx = dev if isinstance(dev, DeviceContext) else DeviceContext(dev)
    times = np.asarray(times, float)
    holds = times - schedule.t_r
    if np.any(holds < -1e-12):
        raise ValueError(f"tomography times must be at least t_r = {schedule.t_r} ns")
    kw = {} if dt is None else {"dt": dt}
    run = simulate_schedule(ctx, schedule.with_(echoed=False), np.maximum(holds, 0.0), **kw)
    u4 = run.computational_block()
    single = np.ndim(b) == 0
    out = []
    for bb in np.atleast_1d(b):
        bb = int(bb)
        ex, ey, ez, pop_c = _bloch(u4[:, :, 2 * bb])
        # population of the other control level plus everything outside the subspace
        stay = pop_c[:, bb]
        worst = float(np.max(1 - stay))
        warn = None
        if worst > LEAKAGE_GUARD:
            warn = f"control state {bb} lost {worst:.3f} of its population"
        out.append(_finish(times, bb, ex, ey, ez, shots, np.random.SeedSequence([seed, bb]).generate_state(1)[0], warn))
    return out[0] if single else out


def default_times(schedule: PulseSchedule, dev: DeviceParams | DeviceContext, n: int = N_POINTS,
                  periods: float = N_PERIODS) -> np.ndarray:
    """``n`` effective times over ``periods`` periods of the fastest precession.

    The rate estimate is a coarse pre-scan from the hold generator.
    """
    ctx = dev if isinstance(dev, DeviceContext) else DeviceContext(dev)
    nu = hold_hamiltonian_eff(schedule, ctx)
    w = max(np.linalg.norm(axis_rates(nu, b)) for b in (0, 1))
    span = periods * 1e3 / max(w, 1e-3)
    return schedule.t_r + np.linspace(0.0, span, n)


# ---------------------------------------------------------------------------
# staged fit


def _coarse_omega(t: np.ndarray, ez: np.ndarray) -> float:
    """Grid search of ``ez = c + a cos(w t)`` with linear ``(c, a)`` per trial ``w``."""
    span = t[-1] - t[0]
    dmin = np.min(np.diff(np.sort(t)))
    grid = np.linspace(0.25e3 / span, 0.5e3 / dmin, 4000)
    best, best_w = np.inf, grid[0]
    for w in grid:
        a = np.stack([np.ones_like(t), np.cos(to_angular(w) * t)], axis=1)
        coef, *_ = np.linalg.lstsq(a, ez, rcond=None)
        r = float(np.sum((a @ coef - ez) ** 2))
        if r < best:
            best, best_w = r, w
    return best_w


def _free_model(p, t, channels):
    """Relaxed model with independent amplitudes per channel."""
    w, c, a = p[:3]
    cw = np.cos(to_angular(w) * t)
    sw = np.sin(to_angular(w) * t)
    out = [c + a * cw]
    k = 3
    for _ in channels:
        px, qx = p[k : k + 2]
        out.insert(len(out) - 1, px * (1 - cw) + qx * sw)
        k += 2
    return np.concatenate(out)


def _linear_channel(t, w, e):
    cw = np.cos(to_angular(w) * t)
    sw = np.sin(to_angular(w) * t)
    a = np.stack([1 - cw, sw], axis=1)
    coef, *_ = np.linalg.lstsq(a, e, rcond=None)
    return coef


def fit_axis_rates(data: TomographyDataset) -> AxisRates:
    """Staged nonlinear least-squares fit of the closed-form precession.

    Stage 1 fits ``ez`` for the frequency and amplitude, stage 2 adds ``ex``,
    stage 3 adds ``ey``; these stages let every channel carry its own
    amplitudes.  The final refinement fits ``(wx, wy, wz)`` directly, so the
    normalization of the closed form is enforced.

    Raises
    ------
    FitError
        If the final residual per point exceeds ``MAX_POINT_RESIDUAL``.
    """
    t = data.times
    if len(t) < 8:
        raise FitError("need at least 8 time points")
    ex, ey, ez = data.ex, data.ey, data.ez
    diag = []
    if np.ptp(ez) < 1e-9 and np.ptp(ex) < 1e-9 and np.ptp(ey) < 1e-9:
        # no precession visible: only an axis along Z (or no drive) fits
        return AxisRates(0.0, 0.0, 0.0, residual=0.0, stage=4, stage_residuals=(0.0,))

    if np.max(1 - ez) < LOW_ROTATION:
        return _fit_low_rotation(t, ex, ey, ez, data.shots)

    # stage 1: ez only
    w0 = _coarse_omega(t, ez)
    coef, *_ = np.linalg.lstsq(np.stack([np.ones_like(t), np.cos(to_angular(w0) * t)], 1), ez, rcond=None)
    p1 = least_squares(lambda p: _free_model(p, t, []) - ez, [w0, coef[0], coef[1]], method="lm")
    diag.append(float(np.sum(p1.fun ** 2)))

    # stage 2: add ex, warm started with the linear solution at the stage-1 frequency
    x0 = np.r_[p1.x, _linear_channel(t, p1.x[0], ex)]
    obs2 = np.concatenate([ex, ez])
    p2 = least_squares(lambda p: _free_model(p, t, [0]) - obs2, x0, method="lm")
    diag.append(float(np.sum(p2.fun ** 2)))

    # stage 3: add ey
    x0 = np.r_[p2.x[:3], _linear_channel(t, p2.x[0], ey), p2.x[3:5]]
    obs3 = np.concatenate([ey, ex, ez])
    p3 = least_squares(lambda p: _free_model(p, t, [0, 1]) - obs3, x0, method="lm")
    diag.append(float(np.sum(p3.fun ** 2)))

    # map relaxed amplitudes to rates: qx = wy/w, qy = -wx/w, px = wx wz/w^2, py = wy wz/w^2
    w, _, _, py, qy, px, qx = p3.x
    w = abs(w)
    wx, wy = -qy * w, qx * w
    q2 = qx * qx + qy * qy
    wz_mag = np.sqrt(max(w * w * (1 - q2), 0.0))
    wz = (px * (-qy) + py * qx) * w / q2 if q2 > 1e-12 else wz_mag
    wz = np.sign(wz) * wz_mag if wz_mag > 0 else wz

    # final refinement with the normalization enforced
    obs = np.concatenate([ex, ey, ez])

    def resid(r):
        return np.concatenate(model_xyz(t, tuple(r))) - obs

    fin = least_squares(resid, [wx, wy, wz], method="lm", x_scale="jac")
    diag.append(float(np.sum(fin.fun ** 2)))
    per_point = float(np.sqrt(np.mean(fin.fun ** 2)))
    if not np.isfinite(per_point) or per_point > MAX_POINT_RESIDUAL:
        raise FitError(f"fit residual {per_point:.3g} per point exceeds {MAX_POINT_RESIDUAL}", diag)
    sigma = _sandwich_sigma(fin.jac, obs + fin.fun, data.shots)
    r = fin.x
    return AxisRates(float(r[0]), float(r[1]), float(r[2]), sigma, per_point, 4, tuple(diag))


def _fit_low_rotation(t, ex, ey, ez, shots) -> AxisRates:
    """Fit of a nearly static target.

    When the target barely leaves ``|0>`` a rotation about Z is invisible, so
    only the transverse rates are fitted and ``wz`` is reported as zero.
    """
    obs = np.concatenate([ex, ey, ez])
    a = to_angular(1.0) * t
    guess = [-np.dot(a, ey) / np.dot(a, a), np.dot(a, ex) / np.dot(a, a)] if np.any(a) else [0.0, 0.0]

    def resid(r):
        return np.concatenate(model_xyz(t, (r[0], r[1], 0.0))) - obs

    fin = least_squares(resid, guess, method="lm")
    per_point = float(np.sqrt(np.mean(fin.fun ** 2)))
    if per_point > MAX_POINT_RESIDUAL:
        raise FitError(f"low-rotation fit residual {per_point:.3g} per point", [per_point])
    sig = _sandwich_sigma(fin.jac, obs + fin.fun, shots)
    return AxisRates(float(fin.x[0]), float(fin.x[1]), 0.0, (sig[0], sig[1], 0.0), per_point, 0, (per_point ** 2 * len(obs),))


def _sandwich_sigma(jac: np.ndarray, model: np.ndarray, shots: int) -> tuple[float, ...]:
    """Standard errors from binomial noise propagated through the linearized fit."""
    if shots <= 0:
        return (0.0,) * jac.shape[1]
    var = np.clip(1 - model ** 2, 1e-12, None) / shots
    jtj_inv = np.linalg.pinv(jac.T @ jac)
    cov = jtj_inv @ (jac.T * var) @ jac @ jtj_inv
    return tuple(float(s) for s in np.sqrt(np.clip(np.diag(cov), 0, None)))


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class TomographyResult:
    nu: EffectiveHamiltonian
    rates: tuple[AxisRates, AxisRates]
    datasets: tuple[TomographyDataset, TomographyDataset]

    def report(self) -> dict:
        return {"nu": asdict(self.nu), "fits": [r.report() for r in self.rates]}


def hamiltonian_tomography(
    schedule: PulseSchedule,
    dev: DeviceParams | DeviceContext,
    times=None,
    shots: int = 0,
    seed: int = 0,
) -> TomographyResult:
    """Simulate both control states, fit each and combine into six coefficients."""
    ctx = dev if isinstance(dev, DeviceContext) else DeviceContext(dev)
    times = default_times(schedule, ctx) if times is None else np.asarray(times, float)
    d0, d1 = simulate_tomography(schedule, ctx, times, (0, 1), shots, seed)
    r0, r1 = fit_axis_rates(d0), fit_axis_rates(d1)
    return TomographyResult(combine_to_nu(r0, r1), (r0, r1), (d0, d1))
