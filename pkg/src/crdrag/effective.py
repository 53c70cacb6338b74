"""Static and driven effective Hamiltonians, gate times and gate fidelities."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import logm, polar
from scipy.optimize import brentq, minimize

from .dynamics import (
    DeviceParams,
    computational_indices,
    dressed_eigensystem,
    duffing_hamiltonian,
    label_index,
)
from .units import to_mhz

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}
TERMS = ("zx", "zy", "zz", "ix", "iy", "iz")
HYBRIDIZATION_LIMIT = 0.5
BRANCH_MARGIN = 0.2


class HybridizationError(RuntimeError):
    pass


class LabelError(KeyError):
    pass


class BranchError(ValueError):
    pass


def pauli(name: str) -> np.ndarray:
    """Two-qubit Pauli product, control first (``"ZX"`` is Z on control, X on target)."""
    a, b = name.upper()
    return np.kron(PAULI[a], PAULI[b])


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """Coefficients of ``H = sum_P nu_P P / 2`` in MHz."""

    zx: float = 0.0
    zy: float = 0.0
    zz: float = 0.0
    ix: float = 0.0
    iy: float = 0.0
    iz: float = 0.0
    residual: float = 0.0
    zi: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    def matrix(self) -> np.ndarray:
        """4x4 generator in MHz (including ``zi``)."""
        h = 0.5 * self.zi * pauli("ZI")
        for k in TERMS:
            h = h + 0.5 * getattr(self, k) * pauli(k)
        return h


@dataclass(frozen=True)
class FidelityReport:
    raw: float
    optimized: float
    theta1: float
    theta2: float


# ---------------------------------------------------------------------------
# static properties


@dataclass(frozen=True)
class DressedSpectrum:
    """Dressed energies (MHz) and eigenvectors indexed by bare label."""

    energies: np.ndarray
    vectors: np.ndarray
    overlaps: np.ndarray
    levels: int

    def energy(self, label) -> float:
        label = tuple(label) + (0,) * (3 - len(label))
        if len(label) != 3 or any(not 0 <= q < self.levels for q in label):
            raise LabelError(label)
        return float(self.energies[label_index(self.levels, label)])

    def computational_vectors(self) -> np.ndarray:
        """Columns: dressed |00>, |01>, |10>, |11> (control, target)."""
        return self.vectors[:, computational_indices(self.levels)]


def dressed_spectrum(static_h: np.ndarray, levels: int) -> DressedSpectrum:
    """Diagonalize a static Duffing Hamiltonian (angular units) with max-overlap labels.

    Raises
    ------
    HybridizationError
        If a computational state keeps less than half its weight on its bare label.
    """
    h = np.asarray(static_h)
    if not np.allclose(h, h.conj().T, atol=1e-12 * max(1.0, np.abs(h).max())):
        raise ValueError("static Hamiltonian must be Hermitian")
    e, v, ov = dressed_eigensystem(h)
    comp = computational_indices(levels)
    if np.any(ov[comp] < HYBRIDIZATION_LIMIT):
        raise HybridizationError(f"computational overlaps {ov[comp]} below {HYBRIDIZATION_LIMIT}")
    return DressedSpectrum(to_mhz(e), v, ov, levels)


def device_spectrum(dev: DeviceParams) -> DressedSpectrum:
    return dressed_spectrum(duffing_hamiltonian(dev).static, dev.levels)


def static_zz(spec: DressedSpectrum) -> float:
    """``E11 - E10 - E01 + E00`` (MHz)."""
    e = spec.energy
    return e((1, 1)) - e((1, 0)) - e((0, 1)) + e((0, 0))


def exchange_coupling(dev: DeviceParams) -> float:
    """Effective qubit-qubit exchange ``J`` (MHz) from the single-excitation block.

    The two dressed states labelled |10> and |01> are mapped back onto their bare
    span with the closest unitary; ``J`` is the off-diagonal element of the
    resulting 2x2 Hamiltonian.
    """
    spec = device_spectrum(dev)
    idx = [label_index(dev.levels, (1, 0, 0)), label_index(dev.levels, (0, 1, 0))]
    block = spec.vectors[np.ix_(idx, idx)]
    s, _ = polar(block)
    h = s @ np.diag(spec.energies[idx]) @ s.conj().T
    return float(h[0, 1].real)


def methods_device(
    delta: float = 110.0,
    j_target: float = 3.0,
    omega_t: float = 5000.0,
    alpha: float = -300.0,
    g: float = 80.0,
    levels: int = 4,
    bracket: tuple[float, float] = (1000.0, 4000.0),
) -> DeviceParams:
    """Control ``delta`` MHz above the target, coupler above both, tuned to ``|J| = j_target``."""
    omega_c = omega_t + delta

    def dev_at(offset):
        return DeviceParams(omega_c, omega_t, alpha, alpha, omega_c + offset, g, g, levels)

    offset = brentq(lambda o: abs(exchange_coupling(dev_at(o))) - j_target, *bracket, xtol=1e-6)
    return dev_at(offset)


# ---------------------------------------------------------------------------
# driven effective Hamiltonians


def pauli_project(h4: np.ndarray) -> EffectiveHamiltonian:
    """Pauli decomposition of a 4x4 Hermitian generator given in MHz."""
    coef = {k: float(np.real(np.trace(h4 @ pauli(k))) / 2) for k in TERMS + ("zi",)}
    rest = h4 - np.trace(h4) / 4 * np.eye(4)
    for k, v in coef.items():
        rest = rest - 0.5 * v * pauli(k)
    return EffectiveHamiltonian(**coef, residual=float(np.linalg.norm(rest)))


def _unitarize(u: np.ndarray) -> tuple[np.ndarray, float]:
    w, _ = polar(u)
    leak = float(abs(4 - np.real(np.trace(u.conj().T @ u))))
    return w, leak


def pauli_coefficients(u_family: Sequence[np.ndarray], times: Sequence[float]) -> EffectiveHamiltonian:
    """Generator of the evolution between the first and last snapshot.

    ``u_family`` holds 4x4 propagators in the computational subspace at
    ``times`` (ns).  Leakage out of the subspace adds to ``residual``.

    Raises
    ------
    BranchError
        If an eigenphase of the step propagator is too close to the branch cut.
    """
    if len(u_family) < 2 or len(u_family) != len(times):
        raise ValueError("need at least two snapshots with matching times")
    dt = float(times[-1] - times[0])
    if dt <= 0:
        raise ValueError("times must increase")
    u1, leak1 = _unitarize(np.asarray(u_family[0]))
    u2, leak2 = _unitarize(np.asarray(u_family[-1]))
    step = u2 @ u1.conj().T
    phases = np.angle(np.linalg.eigvals(step))
    if np.any(np.abs(phases) > np.pi - BRANCH_MARGIN):
        raise BranchError("eigenphase near the branch cut; use snapshots closer in time")
    h = 1j * logm(step) / dt
    h = 0.5 * (h + h.conj().T)
    out = pauli_project(to_mhz(h))
    return EffectiveHamiltonian(**{**out.as_dict(), "residual": out.residual + leak1 + leak2})


def block_effective_hamiltonian(h: np.ndarray, basis: np.ndarray, groups=None) -> np.ndarray:
    """Effective generator of the eigenstates of ``h`` connected to ``basis``.

    ``basis`` holds orthonormal columns.  Each column is matched to the
    eigenvector of ``h`` with the largest overlap; within every group of
    columns (default: one group) the eigenvectors are mapped back with the
    closest unitary, so couplings between groups are eliminated.  Returns the
    generator in the ``basis`` coordinates (units of ``h``).
    """
    e, v = np.linalg.eigh(h)
    ov = np.abs(basis.conj().T @ v) ** 2
    pick: list[int] = []
    for row in ov:
        order = np.argsort(-row)
        pick.append(next(int(j) for j in order if j not in pick))
    groups = [list(range(basis.shape[1]))] if groups is None else groups
    out = np.zeros((basis.shape[1],) * 2, dtype=complex)
    for g in groups:
        cols = [pick[k] for k in g]
        s, _ = polar(basis[:, g].conj().T @ v[:, cols])
        out[np.ix_(g, g)] = s @ np.diag(e[cols]) @ s.conj().T
    return out


def hold_effective_hamiltonian(h_hold: np.ndarray, spec: DressedSpectrum) -> EffectiveHamiltonian:
    """Six-term effective Hamiltonian of a constant drive (angular ``h_hold``).

    The drive-induced mixing of the control states is eliminated, leaving a
    generator that is block diagonal in the control qubit.
    """
    h4 = block_effective_hamiltonian(h_hold, spec.computational_vectors(), groups=[[0, 1], [2, 3]])
    return pauli_project(to_mhz(h4))


# ---------------------------------------------------------------------------
# fidelity


def average_gate_fidelity(u_q: np.ndarray, u_i: np.ndarray) -> float:
    """``(Tr[U U^dag] + |Tr[U U_I^dag]|^2) / (d (d + 1))`` with ``d = 4``."""
    u_q = np.asarray(u_q)
    u_i = np.asarray(u_i)
    d = u_i.shape[-1]
    a = np.real(np.einsum("...ij,...ij->...", u_q, u_q.conj()))
    b = np.abs(np.einsum("...ij,...ij->...", u_q, u_i.conj())) ** 2
    return (a + b) / (d * (d + 1))


def _correction(theta1, theta2) -> np.ndarray:
    """``exp(+i (theta1 IX + theta2 ZI) / 2)``, broadcast over angle arrays."""
    t1 = np.asarray(theta1, float)[..., None, None]
    t2 = np.asarray(theta2, float)[..., None, None]
    rx = np.cos(t1 / 2) * I2 + 1j * np.sin(t1 / 2) * X
    rz = np.cos(t2 / 2) * I2 + 1j * np.sin(t2 / 2) * Z
    return np.einsum("...ab,...cd->...acbd", rz, rx).reshape(np.broadcast_shapes(t1.shape, t2.shape)[:-2] + (4, 4))


def corrected_unitary(u_q: np.ndarray, theta1: float, theta2: float) -> np.ndarray:
    return _correction(theta1, theta2) @ u_q


def optimized_fidelity(u_q: np.ndarray, u_i: np.ndarray, grid: int = 32, tol: float = 1e-6) -> FidelityReport:
    """Maximize the fidelity over commuting IX and ZI rotations applied after ``u_q``.

    A coarse ``grid x grid`` scan over ``[-pi, pi)^2`` seeds a Nelder-Mead
    refinement.
    """
    raw = float(average_gate_fidelity(u_q, u_i))
    th = np.linspace(-np.pi, np.pi, grid, endpoint=False)
    t1, t2 = np.meshgrid(th, th, indexing="ij")
    f = average_gate_fidelity(_correction(t1, t2) @ u_q, u_i)
    k = np.unravel_index(np.argmax(f), f.shape)
    x0 = np.array([t1[k], t2[k]])
    res = minimize(
        lambda x: -average_gate_fidelity(corrected_unitary(u_q, *x), u_i),
        x0,
        method="Nelder-Mead",
        options={"xatol": tol, "fatol": 1e-15, "maxiter": 2000},
    )
    if -res.fun >= f[k]:
        best, x = float(-res.fun), res.x
    else:
        best, x = float(f[k]), x0
    theta = ((np.asarray(x) + np.pi) % (2 * np.pi)) - np.pi
    return FidelityReport(raw, max(best, raw), float(theta[0]), float(theta[1]))


# ---------------------------------------------------------------------------
# gate time


def gate_time_from_zx(nu_zx: float, gate_kind: str = "echoed_segment", envelope=None) -> float:
    """Duration (ns) of a CR rotation with ``ZX`` rate ``nu_zx`` (MHz).

    ``echoed_segment`` returns one eighth of a ZX period.  ``direct`` returns the
    hold time such that the accumulated ZX angle is a quarter cycle, with the
    ramps of ``envelope`` (a :class:`~crdrag.pulseshape.RampSpec` or sampled
    pulse normalized to its hold amplitude) contributing in proportion to
    their real part.
    """
    if nu_zx == 0:
        raise ValueError("nu_zx = 0: the drive does not entangle")
    full = 1e3 / abs(nu_zx)
    if gate_kind == "echoed_segment":
        return full / 8
    if gate_kind != "direct":
        raise ValueError(f"unknown gate kind {gate_kind!r}")
    ramp_area = 0.0 if envelope is None else ramp_equivalent_time(envelope)
    hold = full / 4 - ramp_area
    if hold < 0:
        raise ValueError("ramps alone exceed the target rotation")
    return hold


def ramp_equivalent_time(envelope) -> float:
    """``int Re(Omega) dt / Omega_max`` of a zero-hold pulse (ns).

    For the plain ``sin^m`` ramps this is exactly ``t_r``.
    """
    from .pulseshape import RampSpec, SampledEnvelope

    if isinstance(envelope, RampSpec):
        return float(envelope.t_r)
    if isinstance(envelope, SampledEnvelope):
        peak = np.max(np.abs(envelope.samples))
        return float(np.trapezoid(envelope.samples.real, dx=envelope.dt) / peak)
    raise TypeError("envelope must be a RampSpec or SampledEnvelope")
