import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from crdrag.effective import EffectiveHamiltonian, methods_device
from crdrag.schedule import DeviceContext, PulseSchedule, hold_hamiltonian_eff
from crdrag.tomography import (
    N_PERIODS,
    N_POINTS,
    AxisRates,
    FitError,
    TomographyDataset,
    axis_rates,
    combine_to_nu,
    fit_axis_rates,
    hamiltonian_tomography,
    model_xyz,
    read_datasets_csv,
    synthetic_dataset,
    write_datasets_csv,
)
from oracles import C

TERMS = ("zx", "zy", "zz", "ix", "iy", "iz")


def sample_times(nu):
    w = max(np.linalg.norm(axis_rates(nu, b)) for b in (0, 1))
    return np.linspace(0.0, N_PERIODS * 1e3 / w, N_POINTS)


nu_strategy = st.builds(
    lambda zx, sgn, rest: EffectiveHamiltonian(sgn * zx, *rest),
    st.floats(0.5, 3.0), st.sampled_from([-1.0, 1.0]), st.lists(st.floats(-0.3, 0.3), min_size=5, max_size=5),
)


@given(st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)), st.floats(0, 500))
def test_closed_form_matches_bloch_rotation(w, t):
    if np.linalg.norm(w) < 1e-3:
        return
    h = 0.5 * C * (w[0] * np.array([[0, 1], [1, 0]]) + w[1] * np.array([[0, -1j], [1j, 0]]) + w[2] * np.diag([1, -1]))
    psi = expm(-1j * h * t)[:, 0]
    ref = [2 * (psi[0].conj() * psi[1]).real, 2 * (psi[0].conj() * psi[1]).imag, abs(psi[0]) ** 2 - abs(psi[1]) ** 2]
    assert np.allclose(model_xyz(t, w), ref, atol=1e-10)


@given(nu_strategy)
def test_noiseless_round_trip(nu):
    t = sample_times(nu)
    rates = [fit_axis_rates(synthetic_dataset(nu, t, b)) for b in (0, 1)]
    out = combine_to_nu(*rates)
    scale = max(r.w for r in rates)
    for k in TERMS:
        assert abs(getattr(out, k) - getattr(nu, k)) <= 0.01 * scale


def test_shot_noise_sigma_is_calibrated():
    nu = EffectiveHamiltonian(1.3, 0.1, -0.05, 0.2, -0.15, 0.08)
    t = sample_times(nu)
    z = []
    for seed in range(40):
        r = fit_axis_rates(synthetic_dataset(nu, t, 0, shots=1024, seed=seed))
        z.append((r.vector - np.array(axis_rates(nu, 0))) / np.array(r.sigma))
    z = np.array(z)
    # standardized errors should have unit spread
    assert 0.6 < np.std(z) < 1.5
    assert np.mean(np.abs(z) < 3) > 0.95


def test_shot_sampling_is_seeded():
    nu = EffectiveHamiltonian(1.0)
    t = sample_times(nu)
    a = synthetic_dataset(nu, t, 1, shots=100, seed=5)
    b = synthetic_dataset(nu, t, 1, shots=100, seed=5)
    assert np.array_equal(a.ex, b.ex) and np.array_equal(a.ez, b.ez)


def test_low_rotation_branch_recovers_transverse_rates():
    # control |0>: the target axis is nearly cancelled, as for a direct gate
    nu = EffectiveHamiltonian(zx=1.5, ix=-1.5, zz=0.01, iz=0.005, iy=0.004)
    t = np.linspace(0, 500.0, 40)
    r = fit_axis_rates(synthetic_dataset(nu, t, 0))
    assert r.stage == 0 and r.wz == 0.0
    assert r.wx == pytest.approx(0.0, abs=1e-3) and r.wy == pytest.approx(0.004, abs=1e-3)


def test_static_target_gives_zero_rates():
    t = np.linspace(0, 100, 20)
    d = TomographyDataset(t, 0, np.zeros(20), np.zeros(20), np.ones(20), 0)
    assert fit_axis_rates(d).vector.tolist() == [0.0, 0.0, 0.0]


def test_garbage_data_raises_fit_error():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 100, 30)
    d = TomographyDataset(t, 0, rng.uniform(-1, 1, 30), rng.uniform(-1, 1, 30), rng.uniform(-1, 1, 30), 0)
    with pytest.raises(FitError):
        fit_axis_rates(d)


def test_too_few_points():
    t = np.linspace(0, 10, 5)
    with pytest.raises(FitError):
        fit_axis_rates(TomographyDataset(t, 0, t * 0, t * 0, t * 0 + 1, 0))


def test_dataset_csv_round_trip(tmp_path):
    nu = EffectiveHamiltonian(1.0, 0.1, 0.0, 0.3)
    t = sample_times(nu)
    ds = [synthetic_dataset(nu, t, b, shots=512, seed=b) for b in (0, 1)]
    write_datasets_csv(tmp_path / "d.csv", ds)
    back = read_datasets_csv(tmp_path / "d.csv")
    assert len(back) == 2
    for a, b in zip(ds, back):
        assert a.b == b.b and a.shots == b.shots
        assert np.allclose(a.times, b.times) and np.allclose(a.ey, b.ey)


def test_axis_rates_report(tmp_path):
    r = AxisRates(1.0, 2.0, 2.0)
    assert r.w == pytest.approx(3.0)
    r.to_json(tmp_path / "r.json")
    assert '"w": 3.0' in (tmp_path / "r.json").read_text()


def test_device_tomography_matches_hold_generator():
    ctx = DeviceContext(methods_device(110.0))
    s = PulseSchedule(40.0, 10.0, 0.0, 3, "G")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = hamiltonian_tomography(s, ctx)
    ref = hold_hamiltonian_eff(s, ctx)
    assert res.nu.zx == pytest.approx(ref.zx, rel=0.01)
    assert res.nu.ix == pytest.approx(ref.ix, rel=0.02)
    assert abs(res.nu.zy - ref.zy) < 0.01
