import numpy as np
import pytest

from otfspn.dd_analysis import (DdPhaseOperator, dd_coefficients, dd_transform,
                                k_phi, k_phi_diag, k_phi_fro_closed_form,
                                measured_sinr, sinr_ofdm, sinr_otfs)
from otfspn.grid import Frame, GridConfig, otfs_demodulate, otfs_modulate
from otfspn.oscillator import PhaseNoiseModel, PhasePath, expected_rotation, sample_paths

TS = 1.0 / 7.68e6


def _dense_reference(psi, M, N):
    F = np.fft.fft(np.eye(N)) / np.sqrt(N)
    A = np.kron(F, np.eye(M))
    return A @ np.diag(psi) @ A.conj().T


def test_constant_phase_gives_cpe_only():
    cfg = GridConfig(M=8, N=8, n_cp=0)
    theta0 = 0.7
    op = dd_coefficients(PhasePath(np.full(64, theta0)), cfg)
    np.testing.assert_allclose(op.phi[:, 0], np.exp(1j * theta0), atol=1e-12)
    assert np.abs(op.phi[:, 1:]).max() < 1e-12
    x = np.arange(64) + 0.0j
    np.testing.assert_allclose(op.apply(x), np.exp(1j * theta0) * x, atol=1e-10)


def test_operator_matches_dense_triple_product():
    rng = np.random.default_rng(0)
    cfg = GridConfig(M=8, N=8, n_cp=0)
    theta = rng.standard_normal(64).cumsum() * 0.1
    op = dd_coefficients(PhasePath(theta), cfg)
    dense = _dense_reference(np.exp(1j * theta), 8, 8)
    assert np.abs(op.as_dense() - dense).max() < 1e-10
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    assert np.abs(op.apply(x) - dense @ x).max() < 1e-10


def test_operator_equals_mod_demod_pipeline():
    rng = np.random.default_rng(1)
    for M, N in [(8, 8), (16, 16)]:
        cfg = GridConfig(M=M, N=N, n_cp=0)
        theta = rng.standard_normal(M * N).cumsum() * 0.05
        path = PhasePath(theta)
        op = dd_coefficients(path, cfg)
        x = rng.standard_normal(M * N) + 1j * rng.standard_normal(M * N)
        s = otfs_modulate(Frame.from_vec(x, cfg), cfg, with_cp=False)
        y = otfs_demodulate(path.psi * s, cfg).vec
        assert np.abs(op.apply(x) - y).max() < 1e-10


def test_parseval_per_delay_bin():
    rng = np.random.default_rng(2)
    cfg = GridConfig(M=8, N=8, n_cp=0)
    op = dd_coefficients(PhasePath(rng.standard_normal(64).cumsum()), cfg)
    np.testing.assert_allclose((np.abs(op.phi) ** 2).sum(axis=1), 1.0, atol=1e-9)


def test_idi_row_decomposition():
    # y_n[m] = phi_0[m] x_n[m] + sum_i phi_i[m] x_{(n-i) mod N}[m], exactly
    rng = np.random.default_rng(3)
    cfg = GridConfig(M=8, N=8, n_cp=0)
    theta = rng.standard_normal(64).cumsum() * 0.2
    path = PhasePath(theta)
    op = dd_coefficients(path, cfg)
    X = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    s = otfs_modulate(Frame(X), cfg, with_cp=False)
    Y = otfs_demodulate(path.psi * s, cfg).dd
    for m in range(8):
        for n in range(8):
            val = sum(op.phi[m, i] * X[m, (n - i) % 8] for i in range(8))
            assert abs(val - Y[m, n]) < 1e-12


def test_short_path_rejected():
    cfg = GridConfig(M=8, N=8, n_cp=0)
    with pytest.raises(ValueError):
        dd_coefficients(PhasePath(np.zeros(63)), cfg)


def test_k_phi_no_phase_noise():
    cfg = GridConfig(M=16, N=8, n_cp=0)
    K = k_phi(PhaseNoiseModel("FRO", 0.0, TS), cfg).K
    expect = np.zeros((8, 8))
    expect[0, 0] = 1.0
    np.testing.assert_allclose(K, expect, atol=1e-12)


def test_k_phi_structure():
    cfg = GridConfig(M=128, N=32, n_cp=0)
    for kind in ("FRO", "CPLL", "DPLL"):
        model = PhaseNoiseModel(kind, 2e3, TS, 1e6)
        K = k_phi(model, cfg).K
        assert np.abs(K - K.conj().T).max() < 1e-12
        w = np.linalg.eigvalsh(K)
        assert w.min() > -1e-10
        assert np.trace(K).real == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(K.diagonal().real, k_phi_diag(model, cfg),
                                   atol=1e-12)


def test_k_phi_diag_monte_carlo():
    # empirical E|phi_p|^2 over 1e5 paths, FRO beta=100 Hz, 128x32 grid
    cfg = GridConfig(M=128, N=32, n_cp=0)
    model = PhaseNoiseModel("FRO", 100.0, TS)
    rng = np.random.default_rng(5)
    acc = np.zeros(32)
    trials = 100_000
    chunk = 4000
    for start in range(0, trials, chunk):
        theta = sample_paths(model, chunk, cfg.frame_len, rng)
        grid = np.exp(1j * theta).reshape(chunk, 32, 128).transpose(0, 2, 1)
        acc += (np.abs(np.fft.fft(grid, axis=2) / 32) ** 2).mean(axis=1).sum(axis=0)
    emp = acc / trials
    diag = k_phi_diag(model, cfg)
    np.testing.assert_allclose(emp, diag, rtol=0.02)


def test_closed_form_limits():
    cfg = GridConfig(M=128, N=32, n_cp=0)
    zero = PhaseNoiseModel("FRO", 0.0, TS)
    assert k_phi_fro_closed_form(zero, cfg, 0) == 1.0
    assert k_phi_fro_closed_form(zero, cfg, 5) == 0.0
    # alpha -> 0: energy spread uniformly, K[p,p] -> 1/N
    hot = PhaseNoiseModel("FRO", 1e6, TS)
    for p in (0, 1, 17):
        assert k_phi_fro_closed_form(hot, cfg, p) == pytest.approx(1 / 32, rel=1e-6)


def test_closed_form_vs_double_sum():
    cfg = GridConfig(M=128, N=32, n_cp=0)
    model = PhaseNoiseModel("FRO", 100.0, TS)
    alpha = np.exp(-2 * np.pi * 100.0 * TS * 128)
    k, l = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    for p in (0, 1, 7, 31):
        brute = np.real(np.sum(alpha ** np.abs(k - l)
                               * np.exp(-2j * np.pi * p * (k - l) / 32))) / 32**2
        assert k_phi_fro_closed_form(model, cfg, p) == pytest.approx(brute, rel=1e-10)
    with pytest.raises(ValueError):
        k_phi_fro_closed_form(PhaseNoiseModel("CPLL", 100.0, TS, 1e6), cfg, 0)


def test_sinr_no_phase_noise_is_snr():
    cfg = GridConfig(M=128, N=32, n_cp=0)
    model = PhaseNoiseModel("FRO", 0.0, TS)
    assert sinr_otfs(model, cfg, 0.01).sinr_db == pytest.approx(20.0, abs=1e-9)
    assert sinr_ofdm(model, cfg, 0.01).sinr_db == pytest.approx(20.0, abs=1e-9)


def test_sinr_report_consistency():
    cfg = GridConfig(M=64, N=16, n_cp=0)
    model = PhaseNoiseModel("FRO", 500.0, TS)
    rep = sinr_otfs(model, cfg, 0.01)
    assert rep.signal_power + rep.idi_power <= 1 + 1e-9
    assert 0 <= rep.idi_power < 1
    assert 0 < rep.signal_power <= 1
    assert rep.sinr == pytest.approx(rep.signal_power / (rep.idi_power + 0.01))


def test_full_grid_degradation_signatures():
    # beta 0 -> 100 Hz on the reference grid: OTFS loses > 10 dB, OFDM ~ 1 dB
    cfg = GridConfig(M=128, N=32, n_cp=0)
    noisy = PhaseNoiseModel("FRO", 100.0, TS)
    d_otfs = 20.0 - sinr_otfs(noisy, cfg, 0.01).sinr_db
    d_ofdm = 20.0 - sinr_ofdm(noisy, cfg, 0.01).sinr_db
    assert d_otfs > 10.0
    assert 0.5 < d_ofdm < 1.5


def test_ofdm_never_below_otfs():
    cfg = GridConfig(M=64, N=16, n_cp=0)
    for beta in (10.0, 100.0, 1e3, 1e4):
        model = PhaseNoiseModel("FRO", beta, TS)
        assert (sinr_ofdm(model, cfg, 0.01).sinr
                >= sinr_otfs(model, cfg, 0.01).sinr)


def test_measured_sinr_matches_analytic():
    # Monte Carlo split per the operator rows, within 0.3 dB at 1e4 trials
    cfg = GridConfig(M=32, N=16, n_cp=0)
    model = PhaseNoiseModel("FRO", 2e3, TS)
    ana = sinr_otfs(model, cfg, 0.01)
    meas = measured_sinr(model, cfg, 0.01, 10_000, 9, "otfs")
    assert abs(meas.sinr_db - ana.sinr_db) < 0.3


def test_dd_transform_unitary():
    rng = np.random.default_rng(11)
    cfg = GridConfig(M=4, N=4, n_cp=0)
    A = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    F = np.fft.fft(np.eye(4)) / 2.0
    T = np.kron(F, np.eye(4))
    np.testing.assert_allclose(dd_transform(A, cfg), T @ A @ T.conj().T,
                               atol=1e-12)


def test_dense_guard():
    op = DdPhaseOperator(np.ones((128, 64), dtype=complex))
    with pytest.raises(ValueError):
        op.as_dense()
