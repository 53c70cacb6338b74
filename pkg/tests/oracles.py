"""Independent reference computations used by the tests.

None of these call into the routines they check: derivatives come from finite
differences, propagators from an adaptive ODE solver, fidelities from the
Pauli-basis channel average.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

C = 2 * np.pi * 1e-3  # MHz -> rad/ns


# ---------------------------------------------------------------------------
# envelopes


def rise_m3(t, omega_max, t_r):
    """Closed-form ``sin^3`` rise, analytically continued beyond ``[0, t_r]``."""
    x = np.pi * np.asarray(t, float) / t_r
    return omega_max * (2 / 3 - np.cos(x) + np.cos(x) ** 3 / 3) / (4 / 3)


def rise_m1(t, omega_max, t_r):
    x = np.pi * np.asarray(t, float) / t_r
    return omega_max * (1 - np.cos(x)) / 2


def fd(f, t, h):
    """Sixth-order central difference of ``f`` at ``t``."""
    return (-f(t - 3 * h) + 9 * f(t - 2 * h) - 45 * f(t - h) + 45 * f(t + h) - 9 * f(t + 2 * h) + f(t + 3 * h)) / (60 * h)


def perturbative1(f, delta, scale=1.0, h=4e-3):
    return lambda t: f(t) - 1j * scale * fd(f, t, h) / (C * delta)


def perturbative2(f, delta, scale=1.0, h=4e-3):
    def g(t):
        sq = lambda s: f(s) ** 2
        y = sq(t) - 1j * scale * fd(sq, t, h) / (C * delta)
        r = np.sqrt(y.astype(complex))
        # branch that continues the input pulse
        return np.where((r * np.conj(f(t))).real < 0, -r, r)

    return g


def givens(f, delta, kappa, scale=1.0, h=4e-3):
    da = C * delta / scale

    def phase(t):
        x = f(t)
        return x / np.abs(x)

    def theta(t):
        return np.arctan(-kappa * C * np.abs(f(t)) / da)

    def g(t):
        x = C * f(t)
        u = phase(t)
        phidot = (np.conj(u) * fd(phase, t, h)).imag
        out = x * (1 + phidot / da) + (1j / kappa) * u * fd(theta, t, h)
        return out / C

    return g


def chain_oracle(rise, stages, h=4e-3):
    """Compose stage oracles on top of ``rise``; ``stages`` are ``DragStage`` objects."""
    f = lambda t: np.asarray(rise(t), complex)
    out = [f]
    for st in stages:
        kind = st.kind.value
        if kind == "perturbative_1":
            f = perturbative1(f, st.delta, st.scale, h)
        elif kind == "perturbative_2":
            f = perturbative2(f, st.delta, st.scale, h)
        else:
            f = givens(f, st.delta, st.kappa, st.scale, h)
        out.append(f)
    return out


# ---------------------------------------------------------------------------
# dynamics


def three_level_h(d10, d21, lambda12, omega):
    """Three-level Hamiltonian (rad/ns) with a complex drive amplitude in MHz."""
    low = np.diag([1.0, lambda12], 1).astype(complex)
    h = C * np.diag([0.0, d10, d10 + d21]).astype(complex)
    w = C * omega
    return h + 0.5 * (w * low.conj().T + np.conj(w) * low)


def ode_propagator(h_of_t, t0, t1, dim, rtol=1e-11, atol=1e-12):
    """Propagator from an adaptive Runge-Kutta solve of ``dU/dt = -i H U``."""

    def rhs(t, y):
        u = y.reshape(dim, dim)
        return (-1j * h_of_t(t) @ u).ravel()

    sol = solve_ivp(rhs, (t0, t1), np.eye(dim, dtype=complex).ravel(), method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1].reshape(dim, dim)


def rabi_excitation(omega, delta, t):
    """Two-level excitation probability for a constant drive (MHz, ns)."""
    w = np.hypot(omega, delta)
    return (omega / w) ** 2 * np.sin(np.pi * 1e-3 * w * t) ** 2


def dense_expm(h, tau=1.0):
    return expm(-1j * np.asarray(h) * tau)


# ---------------------------------------------------------------------------
# fidelity


def _paulis(n):
    single = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    ops = []
    for combo in itertools.product(single, repeat=n):
        m = np.array([[1.0]])
        for p in combo:
            m = np.kron(m, p)
        ops.append(m.astype(complex))
    return ops


def channel_fidelity(u, u_ideal):
    """Average gate fidelity of ``rho -> u rho u^dag`` versus ``u_ideal`` via the Pauli twirl formula.

    ``u`` may be a sub-unitary block (leakage), in which case the channel is
    trace decreasing.
    """
    d = u_ideal.shape[0]
    n = int(round(np.log2(d)))
    acc = 0.0
    for p in _paulis(n):
        acc += np.trace(u_ideal @ p.conj().T @ u_ideal.conj().T @ u @ p @ u.conj().T).real
    return (acc + d * d * np.trace(u @ u.conj().T).real / d) / (d * d * (d + 1))


def haar_unitary(d, rng):
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


# ---------------------------------------------------------------------------
# effective Hamiltonians


def pauli_terms(h4):
    """Coefficients of ``h = sum nu_P P / 2`` (same units as ``h``) by trace projection."""
    names = ["IX", "IY", "IZ", "ZX", "ZY", "ZZ", "ZI"]
    single = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]),
              "Z": np.diag([1, -1])}
    return {k.lower(): float(np.trace(h4 @ np.kron(single[k[0]], single[k[1]])).real / 2) for k in names}


def dressed_pair_phase(d10, d21, lambda12, envelope, t_f, i, j, n=40001):
    """``int (E_j - E_i) dt`` (rad) of the instantaneous three-level eigenvalues.

    Eigenvalues are followed by maximum overlap with the previous step.
    """
    t = np.linspace(0.0, t_f, n)
    vals = np.empty((n, 3))
    prev = np.eye(3)
    for k, tk in enumerate(t):
        e, v = np.linalg.eigh(three_level_h(d10, d21, lambda12, envelope(np.array([tk]))[0]))
        order = np.argmax(np.abs(prev.conj().T @ v) ** 2, axis=1)
        vals[k] = e[order]
        prev = v[:, order]
    return float(np.trapezoid(vals[:, j] - vals[:, i], t))
