import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crdrag.dynamics import (
    ControlModelParams,
    DeviceParams,
    DrivenHamiltonian,
    Frame,
    PropagationError,
    computational_indices,
    control3_hamiltonian,
    control3_model,
    duffing_hamiltonian,
    expm_hermitian,
    hold_propagator,
    label_index,
    propagate,
    target_frequency,
    total_transition_error,
    transition_errors,
    unitarity_error,
)
from crdrag.effective import methods_device
from crdrag.pulseshape import DragConfig, RampSpec, drag_chain
from oracles import C, dense_expm, ode_propagator, rabi_excitation, three_level_h

SMALL_DEV = DeviceParams(5110.0, 5000.0, -300.0, -300.0, 7000.0, 80.0, 80.0, levels=3)


def random_hermitian(n, rng):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


@given(st.integers(0, 10_000), st.integers(2, 6), st.floats(0.0, 5.0))
def test_expm_hermitian_matches_dense_expm(seed, n, tau):
    h = random_hermitian(n, np.random.default_rng(seed))
    assert np.allclose(expm_hermitian(h, tau), dense_expm(h, tau), atol=1e-10)


def test_expm_batched_taus():
    h = random_hermitian(3, np.random.default_rng(3))
    taus = np.array([0.0, 0.3, 1.7])
    out = hold_propagator(h, taus)
    assert out.shape == (3, 3, 3)
    for u, t in zip(out, taus):
        assert np.allclose(u, dense_expm(h, t), atol=1e-12)


def test_control3_hamiltonian_matches_oracle():
    p = ControlModelParams(110.0, -190.0, 1.3)
    om = 17.0 * np.exp(0.4j)
    assert np.allclose(control3_hamiltonian(p, om), three_level_h(110.0, -190.0, 1.3, om))


@pytest.mark.parametrize("omega,delta,t", [(20.0, 0.0, 13.0), (30.0, 80.0, 40.0), (5.0, -150.0, 100.0)])
def test_constant_two_level_drive_matches_rabi(omega, delta, t):
    # a huge 1-2 detuning isolates the lowest two levels
    p = ControlModelParams(delta, 1e7, 1e-9)
    u = propagate(control3_model(p, lambda s: np.full(np.shape(s), omega, complex)), (0.0, t), 0.05).unitary
    assert abs(u[1, 0]) ** 2 == pytest.approx(rabi_excitation(omega, delta, t), abs=1e-10)


@pytest.mark.parametrize("variant", ["P", "G"])
def test_magnus_propagator_matches_adaptive_ode(variant):
    p = ControlModelParams(110.0, -190.0)
    spec = RampSpec(40.0, 10.0, 3.0, 3)
    stages = DragConfig(110.0, -190.0, variant).stages()

    def env(t):
        return drag_chain(np.clip(t, 0, spec.t_f), spec, stages)

    u = propagate(control3_model(p, env), (0.0, spec.t_f), 0.01).unitary
    ref = ode_propagator(lambda t: three_level_h(110.0, -190.0, np.sqrt(2), env(np.array([t]))[0]), 0.0, spec.t_f, 3)
    assert np.max(np.abs(u - ref)) < 1e-8
    assert unitarity_error(u) < 1e-9


def test_propagate_fourth_order_convergence():
    p = ControlModelParams(80.0, -220.0)
    spec = RampSpec(50.0, 8.0, 0.0, 3)

    def env(t):
        return drag_chain(np.clip(t, 0, spec.t_f), spec, [])

    h = control3_model(p, env)
    ref = propagate(h, (0, spec.t_f), 0.005).unitary
    e1 = np.linalg.norm(propagate(h, (0, spec.t_f), 0.2).unitary - ref)
    e2 = np.linalg.norm(propagate(h, (0, spec.t_f), 0.1).unitary - ref)
    assert e1 / e2 > 12


def test_propagate_flags_broken_numerics():
    bad = lambda t: np.full(np.shape(t) + (3, 3), np.nan, complex)
    with pytest.raises((PropagationError, np.linalg.LinAlgError)):
        propagate(bad, (0.0, 1.0), 0.1)


@pytest.mark.parametrize("span,dt", [((1.0, 0.0), 0.1), ((0.0, 1.0), 0.0)])
def test_propagate_argument_checks(span, dt):
    with pytest.raises(ValueError):
        propagate(lambda t: np.zeros(np.shape(t) + (2, 2)), span, dt)


def test_zero_length_propagation_is_identity():
    out = propagate(lambda t: np.zeros(np.shape(t) + (2, 2), complex), (1.0, 1.0), 0.1)
    assert np.allclose(out.unitary, np.eye(2)) and out.steps == 0


def test_transition_error_components():
    u = np.zeros((3, 3), complex)
    u[:, 0] = [np.sqrt(0.5), np.sqrt(0.3), np.sqrt(0.2)]
    u[:, 1] = [0, np.sqrt(0.9), np.sqrt(0.1)]
    p01, p02, p12 = transition_errors(u)
    assert (p01, p02, p12) == pytest.approx((0.3, 0.2, 0.1))
    assert total_transition_error(u) == pytest.approx(0.6)


def test_duffing_hamiltonian_structure():
    ops = duffing_hamiltonian(SMALL_DEV)
    n = SMALL_DEV.levels
    assert ops.static.shape == (n**3, n**3)
    assert np.allclose(ops.static, ops.static.conj().T)
    # excitation number is conserved by the exchange couplings
    assert np.allclose(ops.static @ ops.number, ops.number @ ops.static)
    i = label_index(SMALL_DEV, (2, 0, 0))
    assert ops.static[i, i].real / C == pytest.approx(2 * 5110.0 - 300.0)
    assert computational_indices(3) == [0, 3, 9, 12]


def test_target_frequency_is_dressed_and_close_to_bare():
    w = target_frequency(SMALL_DEV)
    assert abs(w - 5000.0) < 10.0 and w != 5000.0


@pytest.mark.parametrize("kw", [dict(levels=2), dict(alpha_c=10.0), dict(g1=-1.0)])
def test_device_validation(kw):
    base = dict(omega_c=5110.0, omega_t=5000.0, alpha_c=-300.0, alpha_t=-300.0, omega_a=7000.0, g1=80.0, g2=80.0)
    with pytest.raises(ValueError):
        DeviceParams(**{**base, **kw})


@pytest.mark.parametrize("alias,frame", [("rwa", Frame.ROTATING_RWA), ("full", Frame.ROTATING_FULL), ("lab", Frame.LAB)])
def test_frame_aliases(alias, frame):
    assert Frame(alias) is frame


def test_frames_agree_for_weak_slow_drive():
    dev = methods_device(110.0, levels=3)
    ops = duffing_hamiltonian(dev)
    w = dev.drive_frequency
    spec = RampSpec(10.0, 10.0, 0.0, 3)
    env = lambda t: drag_chain(np.clip(t, 0, spec.t_f), spec, [])
    out = {}
    for fr in Frame:
        h = DrivenHamiltonian(ops.static, [(ops.control, env)], fr, w, ops.number)
        u = propagate(h, (0.0, spec.t_f), 0.0005 if fr is Frame.LAB else 0.002).unitary
        if fr is Frame.LAB:
            # move the lab-frame result into the rotating frame
            u = np.diag(np.exp(1j * C * w * np.diag(ops.number).real * spec.t_f)) @ u
        out[fr] = np.abs(u[:, 0]) ** 2
    assert np.allclose(out[Frame.ROTATING_FULL], out[Frame.LAB], atol=1e-6)
    # counter-rotating terms are a small correction at this drive strength
    assert np.allclose(out[Frame.ROTATING_RWA], out[Frame.ROTATING_FULL], atol=1e-4)
