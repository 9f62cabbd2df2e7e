import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcisac.core import FrameConfig
from mcisac.waveform import (McpcConfig, SampleStream, ambiguity_function, autocorrelation, build_symbol_grid,
                             check_power_grid, mainlobe_width, mcpc_envelope, occupied_bandwidth,
                             ofdm_demodulate, ofdm_modulate, ofdm_pulse, papr, uniform_power_grid)


@pytest.fixture
def frame():
    return FrameConfig.with_cp_fraction(64, 6, 120e3, 28e9)


def test_qpsk_constant_modulus_and_determinism(frame):
    X = build_symbol_grid(frame, "qpsk", seed=3)
    assert np.allclose(np.abs(X), 1)
    assert np.array_equal(X, build_symbol_grid(frame, "qpsk", seed=3))


def test_16qam_unit_energy():
    f = FrameConfig.with_cp_fraction(1024, 16, 120e3, 28e9)
    X = build_symbol_grid(f, "16qam", seed=1)
    assert np.mean(np.abs(X) ** 2) == pytest.approx(1, abs=1e-2)
    assert len(np.unique(np.round(X, 9))) == 16


def test_unknown_constellation(frame):
    with pytest.raises(ValueError):
        build_symbol_grid(frame, "8psk")


def test_power_grid_budget(frame):
    P = uniform_power_grid(frame)
    check_power_grid(P, frame)
    with pytest.raises(ValueError):
        check_power_grid(P * 1.01, frame)
    with pytest.raises(ValueError):
        check_power_grid(P[:-1], frame)


def test_single_tone_at_dc():
    f = FrameConfig.with_cp_fraction(1, 3, 1e3, 1e9, total_power=3.0)
    s = ofdm_modulate(np.ones((1, 3)), uniform_power_grid(f), f, oversample=8)
    assert np.allclose(s.samples, 1.0)


def test_cp_is_cyclic_copy(frame):
    X = build_symbol_grid(frame, "qpsk", seed=0)
    s = ofdm_modulate(X, uniform_power_grid(frame), frame, oversample=2)
    n_cp = int(round(frame.cp_duration * s.fs))
    n_body = 2 * frame.n_subcarriers
    sym0 = s.samples[: n_cp + n_body]
    assert np.allclose(sym0[:n_cp], sym0[-n_cp:])


def test_loopback_recovers_grid(frame):
    X = build_symbol_grid(frame, "16qam", seed=2)
    P = uniform_power_grid(frame) * np.random.default_rng(0).uniform(0.5, 1.5, frame.shape)
    for os_ in (1, 4):
        grid = ofdm_demodulate(ofdm_modulate(X, P, frame, os_), frame)
        assert np.linalg.norm(grid - np.sqrt(P) * X) <= 1e-9 * np.linalg.norm(np.sqrt(P) * X)


def test_loopback_matches_direct_sampling(frame):
    # sample the defining sum at t = m Tsym + Tcp + l T / N
    X = build_symbol_grid(frame, "qpsk", seed=4)
    P = uniform_power_grid(frame)
    n = frame.n_subcarriers
    s = ofdm_modulate(X, P, frame)
    n_cp = int(round(frame.cp_duration * s.fs))
    ell = np.arange(n)
    for m in (0, 3):
        t = ell / (n * frame.subcarrier_spacing)
        direct = np.exp(2j * np.pi * np.outer(t, ell * frame.subcarrier_spacing)) @ (np.sqrt(P[:, m]) * X[:, m])
        start = m * (n + n_cp) + n_cp
        assert np.allclose(s.samples[start:start + n], direct / np.sqrt(n))


def test_mean_power(frame):
    X = build_symbol_grid(frame, "qpsk", seed=5)
    s = ofdm_modulate(X, uniform_power_grid(frame), frame, oversample=4)
    # unitary synthesis: mean sample power is Ptot / (N M)
    expected = frame.total_power / (frame.n_subcarriers * frame.n_symbols)
    assert np.mean(np.abs(s.samples) ** 2) == pytest.approx(expected, rel=0.05)


def test_modulate_dimension_mismatch(frame):
    with pytest.raises(ValueError):
        ofdm_modulate(np.ones((3, 3)), np.ones((3, 3)), frame)


def test_papr_examples():
    assert papr(SampleStream(np.exp(1j * np.linspace(0, 7, 100)), 1.0)) == pytest.approx(1)
    n = 8
    pulse = ofdm_pulse(np.ones(n), 1e-6, 64e6)
    assert papr(pulse) == pytest.approx(n, rel=1e-9)
    assert papr(SampleStream(pulse.samples * (3 - 2j), 1.0)) == pytest.approx(papr(pulse))
    with pytest.raises(ValueError):
        papr(SampleStream(np.array([], dtype=complex), 1.0))


def test_papr_ofdm_exceeds_single_carrier():
    for seed in range(5):
        f = FrameConfig.with_cp_fraction(256, 1, 120e3, 28e9)
        X = build_symbol_grid(f, "qpsk", seed=seed)
        ofdm = ofdm_modulate(X, uniform_power_grid(f), f, oversample=4, cyclic_prefix=False)
        sc = SampleStream(X[:, 0], 1.0)
        assert papr(ofdm) > papr(sc)


def test_mcpc_l1_is_ofdm_pulse():
    w = np.exp(1j * np.arange(6))
    cfg = McpcConfig(np.ones((6, 1)), w, 1e-6)
    fs = 16 * cfg.bandwidth
    a = mcpc_envelope(cfg, fs).samples
    b = ofdm_pulse(w, cfg.pulse_duration, fs).samples
    assert np.array_equal(a, b)


def test_mcpc_single_carrier_follows_code():
    code = np.exp(1j * np.array([0.0, 1.0, 2.5, -1.0]))
    cfg = McpcConfig(code[None, :], [1.0], 1e-6)
    s = mcpc_envelope(cfg, 8e6)
    chips = s.samples.reshape(4, -1)
    assert np.allclose(chips, code[:, None])


def test_mcpc_undersampled():
    cfg = McpcConfig.from_family("p4", 8, 8, 1e-6)
    with pytest.raises(ValueError):
        mcpc_envelope(cfg, cfg.bandwidth)
    with pytest.raises(ValueError):
        McpcConfig.from_family("barker", 4, 4, 1e-6)


@pytest.mark.parametrize("family", ["p4", "zadoff-chu"])
def test_mcpc_widths(family):
    cfg = McpcConfig.from_family(family, 16, 16, 1e-6)
    s = mcpc_envelope(cfg, 8 * cfg.bandwidth)
    lags, ac = autocorrelation(s)
    sel = np.abs(lags) < 4 * cfg.chip_duration / cfg.n_carriers
    assert mainlobe_width(lags[sel], ac[sel]) == pytest.approx(cfg.chip_duration / cfg.n_carriers, rel=0.2)
    nu = np.linspace(-3, 3, 241) / cfg.pulse_duration
    af = ambiguity_function(s, [0.0], nu)[0]
    assert mainlobe_width(nu, af) == pytest.approx(1 / cfg.pulse_duration, rel=0.2)
    assert occupied_bandwidth(s) <= 1.2 * cfg.bandwidth


def _af_brute(s, k, nu, fs):
    n = len(s)
    acc = 0j
    for t in range(n):
        if 0 <= t - k < n:
            acc += s[t] * np.conj(s[t - k]) * np.exp(2j * np.pi * nu * t / fs)
    return abs(acc) / np.sum(np.abs(s) ** 2)


def test_ambiguity_function_oracle_and_symmetry():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    st_ = SampleStream(s, 1.0)
    rev = SampleStream(np.conj(s[::-1]), 1.0)
    delays = np.arange(-5, 6)
    dopp = np.linspace(-0.2, 0.2, 7)
    af = ambiguity_function(st_, delays, dopp)
    af_rev = ambiguity_function(rev, delays, -dopp)
    af_neg = ambiguity_function(st_, -delays, -dopp)
    assert af[5, 3] == pytest.approx(1.0)
    for i, k in enumerate(delays):
        for j, nu in enumerate(dopp):
            assert af[i, j] == pytest.approx(_af_brute(s, k, nu, 1.0), rel=1e-10, abs=1e-12)
    # time reversal + conjugation flips the Doppler axis; (tau, nu) -> (-tau, -nu) is a self-symmetry
    assert np.allclose(af, af_rev, atol=1e-12)
    assert np.allclose(af, af_neg, atol=1e-12)
    with pytest.raises(ValueError):
        ambiguity_function(st_, [40.0], [0.0])


def test_sample_stream_csv(tmp_path):
    s = SampleStream(np.array([1 + 2j, -0.5j]), 4.0)
    s.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t_s,re,im"
    assert np.allclose(np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1), [[0, 1, 2], [0.25, 0, -0.5]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_roundtrip_property(seed, oversample):
    f = FrameConfig.with_cp_fraction(16, 3, 60e3, 28e9)
    X = build_symbol_grid(f, "unit-modulus-random", seed=seed)
    P = uniform_power_grid(f)
    grid = ofdm_demodulate(ofdm_modulate(X, P, f, oversample), f)
    assert np.allclose(grid, np.sqrt(P) * X, atol=1e-10)


@given(st.floats(0.1, 100))
def test_papr_scale_invariance(scale):
    s = ofdm_pulse(np.exp(1j * np.arange(5) ** 2), 1e-6, 40e6)
    assert papr(SampleStream(s.samples * scale, s.fs)) == pytest.approx(papr(s), rel=1e-9)
