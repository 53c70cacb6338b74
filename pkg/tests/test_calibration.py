import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from crdrag.calibration import (
    CNOT,
    CalibrationError,
    CalibrationState,
    _rz_control,
    calibrate_iz,
    default_iy_amplitudes,
    install_iz,
    iy_zero_crossing,
    phase_from_unitary,
    update_cr_phase,
    update_target_drive,
    wrap_phase,
)
from crdrag.effective import EffectiveHamiltonian, pauli
from crdrag.schedule import PulseSchedule


@given(st.floats(-50, 50))
def test_wrap_phase_range(x):
    w = wrap_phase(x)
    assert -np.pi < w <= np.pi + 1e-12
    assert np.isclose(np.exp(1j * w), np.exp(1j * x))


@given(st.floats(0.2, 3.0), st.floats(-1.2, 1.2), st.floats(-np.pi, np.pi))
def test_cr_phase_update_aligns_axis(r, err, theta):
    # a CR phase error err rotates the conditional axis by err in the XY plane
    nu = EffectiveHamiltonian(r * np.cos(err), r * np.sin(err))
    new = update_cr_phase(nu, theta)
    assert np.isclose(np.exp(1j * new), np.exp(1j * (theta - err)))


def test_cr_phase_needs_zx():
    with pytest.raises(CalibrationError):
        update_cr_phase(EffectiveHamiltonian(zy=0.3), 0.0)


@given(st.complex_numbers(max_magnitude=2.0), st.complex_numbers(min_magnitude=0.1, max_magnitude=3.0),
       st.complex_numbers(max_magnitude=1.0))
def test_secant_step_is_exact_for_linear_response(offset, gain, ideal):
    # nu_IX + i nu_IY = offset + gain * omega_t
    def nu(z):
        v = offset + gain * z
        return EffectiveHamiltonian(ix=v.real, iy=v.imag)

    z0, z1 = 0.3 + 0.1j, 0.35 + 0.1j
    z = update_target_drive(nu(z0), nu(z1), z0, z1, ideal)
    v = offset + gain * z
    assert abs(v - ideal) < 1e-9 * max(1.0, abs(ideal))


def test_secant_step_rejects_flat_response():
    nu = EffectiveHamiltonian(ix=0.1)
    with pytest.raises(CalibrationError):
        update_target_drive(nu, nu, 0.1, 0.2)


@pytest.mark.parametrize("slope,icpt", [(0.01, -0.03), (-0.004, 0.02), (0.2, 0.0)])
def test_iy_zero_crossing_of_line(slope, icpt):
    a = np.array([0.0, 1.5, 3.0])
    assert iy_zero_crossing(a, icpt + slope * a) == pytest.approx(-icpt / slope)


def test_iy_zero_crossing_guards():
    with pytest.raises(CalibrationError):
        iy_zero_crossing([1.0, 1.0, 1.0], [0.1, 0.2, 0.3])
    with pytest.raises(CalibrationError):
        iy_zero_crossing([0.0, 1.0, 2.0], [0.1, 0.1, 0.1])


def test_default_iy_amplitudes_bracket_estimate():
    nu = EffectiveHamiltonian(zx=1.5, zz=0.04)
    amps = default_iy_amplitudes(nu)
    est = -(0.04 / 1.5) / (2 * np.pi * 1e-3)
    assert amps[1] == pytest.approx(est) and amps[0] == 0.0
    assert len(set(amps)) == 3


def test_iz_install_shifts_detuning():
    s = PulseSchedule(30.0, detuning=0.01)
    nu = EffectiveHamiltonian(zx=1.0, iz=0.004)
    out = install_iz(s, calibrate_iz(nu))
    assert out.detuning == pytest.approx(0.006)


@pytest.mark.parametrize("phi0", [0.0, 0.4, -1.3, 2.9])
def test_control_phase_recovered_from_synthetic_gate(phi0):
    # a CNOT up to a control-frame phase and global phase: U = RZ_c(-phi0) CNOT
    u = _rz_control(np.array(-phi0)) @ CNOT * np.exp(0.7j)
    grid = np.linspace(-np.pi, np.pi, 1441)[1:]
    got = phase_from_unitary(u, 4, grid)
    assert abs(np.angle(np.exp(1j * (got - phi0)))) < 2 * (grid[1] - grid[0])


def test_control_phase_of_direct_cr_gate():
    # ideal direct gate: target idles for |0> and flips for |1>, i.e. exp(-i pi/4 (IX - ZX))
    u = expm(-1j * np.pi / 4 * (pauli("IX") - pauli("ZX")))
    got = phase_from_unitary(u)
    v = _rz_control(np.array(got)) @ u
    assert abs(np.trace(CNOT.conj().T @ v)) == pytest.approx(4.0, abs=1e-3)


def test_phase_sweep_rejects_non_cnot():
    with pytest.raises(CalibrationError):
        phase_from_unitary(np.kron(np.eye(2), expm(-1j * np.pi / 8 * np.array([[0, 1], [1, 0]]))))
    with pytest.raises(ValueError):
        phase_from_unitary(CNOT, n_reps=3)


def test_state_report(tmp_path):
    nu = EffectiveHamiltonian(1.0, 0.001)
    st_ = CalibrationState(3, PulseSchedule(30.0), [nu], converged=True, verification=nu)
    assert st_.small_terms_ok()
    st_.save_report(tmp_path / "r.json")
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["converged"] is True and rep["iterations"] == 3
    assert rep["verification"]["zy"] == pytest.approx(0.001)
