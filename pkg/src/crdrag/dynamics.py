"""Hamiltonians for the control-Transmon and Duffing models and unitary propagation.

Hamiltonians are returned in angular units (rad/ns); every parameter is a
linear frequency in MHz.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product
from math import sqrt
from typing import Callable, Sequence

import numpy as np

from .units import to_angular

UNITARITY_TOL = 1e-9
_GAUSS = np.array([0.5 - sqrt(3) / 6, 0.5 + sqrt(3) / 6])
_CHUNK = 1024


class PropagationError(RuntimeError):
    pass


class Frame(str, Enum):
    ROTATING_RWA = "rotating_rwa"
    ROTATING_FULL = "rotating_full"
    LAB = "lab"

    @classmethod
    def _missing_(cls, value):
        # short names used on the command line
        return {"rwa": cls.ROTATING_RWA, "full": cls.ROTATING_FULL}.get(str(value).lower())


Envelope = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class ControlModelParams:
    """Three-level control Transmon in the frame of the drive."""

    d10: float
    d21: float
    lambda12: float = sqrt(2.0)

    def __post_init__(self):
        if self.lambda12 <= 0:
            raise ValueError("lambda12 must be positive")

    @property
    def d20(self) -> float:
        return self.d10 + self.d21


@dataclass(frozen=True)
class DeviceParams:
    """Two Transmons coupled through a harmonic coupler.

    Mode order is (control, target, coupler).  ``omega_d`` of ``None`` selects
    the dressed target frequency.
    """

    omega_c: float
    omega_t: float
    alpha_c: float
    alpha_t: float
    omega_a: float
    g1: float
    g2: float
    levels: int = 4
    omega_d: float | None = None

    def __post_init__(self):
        if self.levels < 3:
            raise ValueError("levels must be >= 3")
        if self.alpha_c >= 0 or self.alpha_t >= 0:
            raise ValueError("Transmon anharmonicities must be negative")
        if self.g1 < 0 or self.g2 < 0:
            raise ValueError("couplings must be non-negative")

    @property
    def drive_frequency(self) -> float:
        if self.omega_d is not None:
            return self.omega_d
        return target_frequency(self)

    def with_drive(self, omega_d: float | None) -> "DeviceParams":
        return replace(self, omega_d=omega_d)


# ---------------------------------------------------------------------------
# operators


def lowering(levels: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, levels)), 1).astype(complex)


def control3_lowering(lambda12: float) -> np.ndarray:
    low = np.zeros((3, 3), complex)
    low[0, 1] = 1.0
    low[1, 2] = lambda12
    return low


def control3_static(params: ControlModelParams) -> np.ndarray:
    return np.diag(to_angular(np.array([0.0, params.d10, params.d20]))).astype(complex)


def control3_hamiltonian(params: ControlModelParams, omega) -> np.ndarray:
    """``(Omega/2)(|1><0| + lambda |2><1|) + h.c.`` plus the level detunings.

    ``omega`` (MHz) may be an array; the result then has shape ``(*omega.shape, 3, 3)``.
    """
    w = to_angular(np.asarray(omega, dtype=complex))[..., None, None]
    low = control3_lowering(params.lambda12)
    return control3_static(params) + 0.5 * (w * low.conj().T + np.conj(w) * low)


@dataclass(frozen=True)
class DuffingOperators:
    """Static Hamiltonian (lab frame, angular) and mode operators."""

    static: np.ndarray
    modes: tuple[np.ndarray, np.ndarray, np.ndarray]
    number: np.ndarray
    labels: tuple[tuple[int, int, int], ...]

    @property
    def control(self) -> np.ndarray:
        return self.modes[0]

    @property
    def target(self) -> np.ndarray:
        return self.modes[1]

    @property
    def coupler(self) -> np.ndarray:
        return self.modes[2]

    def drive_quadratures(self, mode: int) -> tuple[np.ndarray, np.ndarray]:
        """``(b + b^dag, i(b^dag - b))`` for a driven mode."""
        b = self.modes[mode]
        bd = b.conj().T
        return b + bd, 1j * (bd - b)


def duffing_hamiltonian(dev: DeviceParams) -> DuffingOperators:
    """Static Duffing Hamiltonian with exchange couplings to a harmonic coupler."""
    n = dev.levels
    eye = np.eye(n)
    low = lowering(n)

    def embed(op, k):
        ops = [eye, eye, eye]
        ops[k] = op
        return np.kron(np.kron(ops[0], ops[1]), ops[2])

    b_c, b_t, a = (embed(low, k) for k in range(3))
    num = [m.conj().T @ m for m in (b_c, b_t, a)]
    h = dev.omega_a * num[2]
    for b, nn, w, al in ((b_c, num[0], dev.omega_c, dev.alpha_c), (b_t, num[1], dev.omega_t, dev.alpha_t)):
        bd = b.conj().T
        h = h + w * nn + 0.5 * al * (bd @ bd @ b @ b)
    ad = a.conj().T
    h = h + dev.g1 * (b_c @ ad + b_c.conj().T @ a) + dev.g2 * (b_t @ ad + b_t.conj().T @ a)
    labels = tuple(product(range(n), repeat=3))
    return DuffingOperators(to_angular(h), (b_c, b_t, a), num[0] + num[1] + num[2], labels)


# ---------------------------------------------------------------------------
# dressed states


def dressed_eigensystem(h: np.ndarray, labels: Sequence[tuple] | None = None):
    """Eigenpairs of a Hermitian matrix assigned to bare basis labels.

    Each eigenvector is assigned to the bare state with the largest overlap,
    processed in order of decreasing overlap so every label is used once; ties
    go to the lowest bare index.  Returns ``(energies, vectors, overlaps)``
    indexed by bare basis position, with eigenvector phases fixed so the
    bare-state component is real and positive.
    """
    evals, evecs = np.linalg.eigh(h)
    dim = len(evals)
    weight = np.abs(evecs) ** 2
    order = np.argsort(-weight, axis=None, kind="stable")
    assigned_bare = np.full(dim, -1)
    used_vec = np.zeros(dim, bool)
    for flat in order:
        bare, vec = divmod(int(flat), dim)
        if assigned_bare[bare] >= 0 or used_vec[vec]:
            continue
        assigned_bare[bare] = vec
        used_vec[vec] = True
        if used_vec.all():
            break
    vecs = evecs[:, assigned_bare]
    diag = vecs[np.arange(dim), np.arange(dim)]
    vecs = vecs * (np.abs(diag) / np.where(diag == 0, 1, diag))[None, :]
    return evals[assigned_bare], vecs, weight[np.arange(dim), assigned_bare]


def label_index(dev_or_levels, label: tuple[int, int, int]) -> int:
    n = dev_or_levels if isinstance(dev_or_levels, int) else dev_or_levels.levels
    c, t, a = label
    return (c * n + t) * n + a


def computational_indices(levels: int) -> list[int]:
    """Bare indices of |00>, |01>, |10>, |11> (control, target) with the coupler empty."""
    return [label_index(levels, (c, t, 0)) for c in (0, 1) for t in (0, 1)]


def target_frequency(dev: DeviceParams) -> float:
    """Dressed 0-1 frequency of the target with the control in its ground state (MHz)."""
    ops = duffing_hamiltonian(dev.with_drive(0.0))
    e, _, _ = dressed_eigensystem(ops.static)
    i00 = label_index(dev, (0, 0, 0))
    i01 = label_index(dev, (0, 1, 0))
    return float((e[i01] - e[i00]) / to_angular(1.0))


# ---------------------------------------------------------------------------
# time-dependent Hamiltonians


@dataclass
class DrivenHamiltonian:
    """``H(t) = static + sum_j drive_j(t)`` in a chosen frame.

    ``static`` is the frame-independent part in angular units (lab frame for
    the Duffing model).  ``frame_number`` generates the rotating frame at
    ``omega_frame`` MHz; ``drives`` pairs a lowering operator with an envelope
    ``f(t)`` in MHz.  In the rotating frame with RWA each drive contributes
    ``(f b^dag + f* b)/2``.
    """

    static: np.ndarray
    drives: list[tuple[np.ndarray, Envelope]] = field(default_factory=list)
    frame: Frame = Frame.ROTATING_RWA
    omega_frame: float = 0.0
    frame_number: np.ndarray | None = None

    def __post_init__(self):
        self.frame = Frame(self.frame)
        w = to_angular(self.omega_frame)
        if self.frame is Frame.LAB or self.frame_number is None or w == 0:
            self._h0 = np.asarray(self.static, complex)
        else:
            self._h0 = np.asarray(self.static, complex) - w * self.frame_number
        self._w = w

    @property
    def dim(self) -> int:
        return self.static.shape[0]

    @property
    def h0(self) -> np.ndarray:
        """Drive-free Hamiltonian in the working frame."""
        return self._h0

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        h = np.broadcast_to(self._h0, t.shape + self._h0.shape).copy()
        for low, env in self.drives:
            f = to_angular(np.asarray(env(t), complex))[:, None, None]
            up = low.conj().T
            if self.frame is Frame.LAB:
                c = np.real(f * np.exp(-1j * self._w * t)[:, None, None])
                h += c * (low + up)
                continue
            h += 0.5 * (f * up + np.conj(f) * low)
            if self.frame is Frame.ROTATING_FULL:
                ph = np.exp(-2j * self._w * t)[:, None, None]
                h += 0.5 * (f * ph * low + np.conj(f * ph) * up)
        return h

    def constant(self, omegas: Sequence[complex]) -> np.ndarray:
        """RWA Hamiltonian with constant drive amplitudes (MHz)."""
        h = self._h0.copy()
        for (low, _), om in zip(self.drives, omegas):
            w = to_angular(om)
            h = h + 0.5 * (w * low.conj().T + np.conj(w) * low)
        return h


def control3_model(params: ControlModelParams, envelope: Envelope) -> DrivenHamiltonian:
    return DrivenHamiltonian(control3_static(params), [(control3_lowering(params.lambda12), envelope)])


def rotating_frame(
    dev: DeviceParams,
    mode: Frame | str = Frame.ROTATING_RWA,
    control: Envelope | None = None,
    target: Envelope | None = None,
    frame_offset: float = 0.0,
) -> DrivenHamiltonian:
    """Duffing Hamiltonian driven at ``omega_d`` on control and/or target.

    ``frame_offset`` (MHz) moves both drives and the frame to
    ``omega_d + frame_offset``.
    """
    ops = duffing_hamiltonian(dev)
    drives = []
    if control is not None:
        drives.append((ops.control, control))
    if target is not None:
        drives.append((ops.target, target))
    return DrivenHamiltonian(ops.static, drives, Frame(mode), dev.drive_frequency + frame_offset, ops.number)


# ---------------------------------------------------------------------------
# propagation


@dataclass(frozen=True)
class Propagator:
    unitary: np.ndarray
    t_final: float
    steps: int
    frame: Frame = Frame.ROTATING_RWA

    def __matmul__(self, other: "Propagator") -> "Propagator":
        """Compose: ``self`` acts after ``other``."""
        return Propagator(self.unitary @ other.unitary, self.t_final + other.t_final, self.steps + other.steps, self.frame)


def unitarity_error(u: np.ndarray) -> float:
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[-1])))


def expm_hermitian(h: np.ndarray, tau=1.0) -> np.ndarray:
    """``exp(-i h tau)`` for (batched) Hermitian ``h``."""
    e, v = np.linalg.eigh(h)
    tau = np.asarray(tau, float)
    return (v * np.exp(-1j * e * tau[..., None])[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def _check(u: np.ndarray, steps: int) -> None:
    err = unitarity_error(u)
    if not err < UNITARITY_TOL:
        raise PropagationError(f"unitarity violated (|U^dag U - I| = {err:.2e}) after {steps} steps")


def propagate(h_of_t: Callable[[np.ndarray], np.ndarray], t_span: tuple[float, float], dt: float,
              frame: Frame = Frame.ROTATING_RWA) -> Propagator:
    """Fourth-order Magnus propagator of ``dU/dt = -i H(t) U`` on a uniform grid.

    ``h_of_t`` maps an array of times to a stack of Hermitian matrices.
    """
    t0, t1 = map(float, t_span)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-9))) if t1 > t0 else 0
    if n == 0:
        dim = h_of_t(np.array([t0])).shape[-1]
        return Propagator(np.eye(dim, dtype=complex), 0.0, 0, Frame(frame))
    h = (t1 - t0) / n
    u = None
    c = sqrt(3) / 12 * h * h
    for start in range(0, n, _CHUNK):
        k = np.arange(start, min(n, start + _CHUNK))
        ts = t0 + h * (k[:, None] + _GAUSS[None, :])
        hs = h_of_t(ts.ravel())
        d = hs.shape[-1]
        hs = hs.reshape(len(k), 2, d, d)
        h1, h2 = hs[:, 0], hs[:, 1]
        comm = h2 @ h1 - h1 @ h2
        kmat = 0.5 * h * (h1 + h2) - 1j * c * comm
        kmat = 0.5 * (kmat + np.swapaxes(kmat.conj(), -1, -2))
        steps = expm_hermitian(kmat)
        for s in steps:
            u = s if u is None else s @ u
    _check(u, n)
    return Propagator(u, t1 - t0, n, Frame(frame))


def hold_propagator(h: np.ndarray, tau) -> np.ndarray:
    """Exact propagator(s) of a constant Hamiltonian for duration(s) ``tau``."""
    return expm_hermitian(h, tau)


def transition_errors(u) -> tuple[float, float, float]:
    """``(p01, p02, p12)`` of a three-level propagator (or the control block of one)."""
    u = u.unitary if isinstance(u, Propagator) else np.asarray(u)
    p = np.abs(u[..., :3, :3]) ** 2
    return p[..., 1, 0], p[..., 2, 0], p[..., 2, 1]


def total_transition_error(u):
    p01, p02, p12 = transition_errors(u)
    return p01 + p02 + p12
