import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from mcisac.channel import Scenario, simulate_radar_frame
from mcisac.core import ArrayConfig, FrameConfig, SyncOffsets, Target, cfo_phase_diagonal
from mcisac.experiments import detection_trials
from mcisac.radar_rx import (estimate_angles, estimate_cfo_clock, glrt_detect, glrt_statistic, glrt_threshold,
                             iterative_target_extraction, marcum_q1, matched_grid, range_doppler_map,
                             theoretical_pd)
from mcisac.scenario import load_config
from mcisac.waveform import build_symbol_grid, uniform_power_grid


def _frame(f, targets, noise=1.0, n_rx=1, seed=0, **kw):
    arr = ArrayConfig.half_wavelength(f.wavelength, n_rx=n_rx)
    X, P = build_symbol_grid(f, seed=seed), uniform_power_grid(f)
    return simulate_radar_frame(Scenario(f, arr, targets, noise_radar=noise, **kw), X, P, seed=seed + 1), X, P


def _on_grid(f, k, q, gain=1.0):
    return Target(k / f.bandwidth, q / (f.n_symbols * f.symbol_duration), gain=gain)


def test_rd_map_matches_brute_force(toy_frame):
    f = toy_frame
    tgt = Target(0.7 / f.bandwidth, 3100.0, gain=0.8 + 0.3j)
    fr, X, P = _frame(f, [tgt], noise=0.0)
    G = matched_grid(fr.data[0], X, P)
    n, m = f.shape
    for pad_n, pad_m in ((1, 1), (2, 4)):
        rd = range_doppler_map(fr, X, P, f, pad_n, pad_m)
        npad, mpad = n * pad_n, m * pad_m
        ref = np.zeros((npad, mpad), dtype=complex)
        for k in range(npad):
            for qi in range(mpad):
                q = qi - mpad // 2
                for a in range(n):
                    for b in range(m):
                        ref[k, qi] += G[a, b] * np.exp(2j * np.pi * a * k / npad) * np.exp(-2j * np.pi * b * q / mpad)
        ref /= np.sqrt(n)
        assert np.linalg.norm(rd.values[0] - ref) <= 1e-9 * np.linalg.norm(ref)


def test_on_grid_peak_and_normalisation(toy_frame):
    f = toy_frame
    alpha = 2.0 - 1.0j
    fr, X, P = _frame(f, [_on_grid(f, 1, 1, alpha)], noise=0.0)
    rd = range_doppler_map(fr, X, P, f, 1, 1)
    k, q = rd.peak()
    assert (k, q) == (1, 1 + f.n_symbols // 2)
    assert rd.ranges[k] == pytest.approx(f.delay_to_range(1 / f.bandwidth))
    assert abs(rd.values[0, k, q]) == pytest.approx(abs(alpha) * P.sum() / np.sqrt(f.n_subcarriers))
    assert np.all(rd.magnitude <= rd.magnitude[k, q] + 1e-12)


def test_axes_and_bins(toy_frame):
    f = toy_frame
    rd = range_doppler_map(np.zeros(f.shape), np.ones(f.shape), uniform_power_grid(f), f, 4, 2)
    assert not np.any(rd.values)
    assert np.all(np.diff(rd.ranges) > 0) and np.all(np.diff(rd.velocities) > 0)
    assert rd.range_bin == pytest.approx(3e8 / (2 * 4 * f.n_subcarriers * f.subcarrier_spacing))
    assert rd.velocity_bin == pytest.approx(f.wavelength / (2 * 2 * f.n_symbols * f.symbol_duration))
    with pytest.raises(ValueError):
        range_doppler_map(np.zeros(f.shape), np.ones(f.shape), uniform_power_grid(f), f,
                          tx_beams=np.array([[1, 1j, 1, 1]]))


def test_processing_gain():
    f = FrameConfig.with_cp_fraction(64, 8, 120e3, 28e9)
    alpha = 0.1
    fr, X, P = _frame(f, [_on_grid(f, 2, 1, alpha)], noise=0.0)
    rd = range_doppler_map(fr, X, P, f, 1, 1)
    k, q = rd.peak()
    sig = abs(rd.values[0, k, q]) ** 2
    noise = [abs(range_doppler_map(_frame(f, [], noise=1.0, seed=s)[0], X, P, f, 1, 1).values[0, k, q]) ** 2
             for s in range(100)]
    gain_db = 10 * np.log10(sig / np.mean(noise)) - 10 * np.log10(alpha ** 2 * P.mean())
    assert gain_db == pytest.approx(10 * np.log10(f.n_subcarriers * f.n_symbols), abs=0.5)


def test_glrt_threshold_values():
    assert glrt_threshold(0.05, 1) == pytest.approx(-np.log(0.05))
    thr = glrt_threshold(0.05, 512, 4)
    assert special.gammaincc(4, thr) == pytest.approx(1 - 0.95 ** (1 / 512))
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            glrt_threshold(bad, 10)


def test_glrt_false_alarm_calibration():
    cfg = load_config("scenarios/detection_roc.yaml")
    trials, pfa = 2000, 0.05
    fa = detection_trials(cfg, 3, 0.0, trials, pfa, noise_only=True).mean()
    assert abs(fa - pfa) <= 3 * np.sqrt(pfa * (1 - pfa) / trials)


def test_glrt_pd_matches_marcum():
    cfg = load_config("scenarios/detection_roc.yaml")
    hits = detection_trials(cfg, 4, 10.0, 2000, 1e-2)
    assert hits.mean() == pytest.approx(theoretical_pd(10.0, 1e-2), abs=0.03)


def test_glrt_detect_strong_target_and_report():
    f = FrameConfig.with_cp_fraction(64, 8, 120e3, 28e9)
    fr, X, P = _frame(f, [_on_grid(f, 3, 2, 1e3)])
    rd = range_doppler_map(fr, X, P, f)
    rep = glrt_detect(rd, 1.0, 1e-3)
    assert len(rep) >= 1
    assert all(d.statistic >= rep.threshold for d in rep)
    assert rep.detections[0].range == pytest.approx(f.delay_to_range(3 / f.bandwidth))
    with pytest.raises(ValueError):
        glrt_detect(rd, 1.0, 1.5)


def test_extraction_two_targets_bin_exact():
    f = FrameConfig.with_cp_fraction(128, 16, 120e3, 28e9)
    tg = [_on_grid(f, 3, 2, 5.0), _on_grid(f, 7, -5, 5.0 * np.exp(1j))]
    fr, X, P = _frame(f, tg, noise=1.0)
    rep = iterative_target_extraction(fr, X, P, f, k_max=4, sigma2=1.0)
    assert len(rep) == 2
    est = sorted((round(d.delay * f.bandwidth), round(d.doppler * f.n_symbols * f.symbol_duration)) for d in rep)
    assert est == [(3, 2), (7, -5)]


def test_extraction_empty_frame():
    f = FrameConfig.with_cp_fraction(64, 8, 120e3, 28e9)
    fr, X, P = _frame(f, [], seed=5)
    assert len(iterative_target_extraction(fr, X, P, f, sigma2=1.0)) == 0
    with pytest.raises(ValueError):
        iterative_target_extraction(fr, X, P, f, k_max=0)


def test_extraction_strong_and_weak_no_ici():
    f = FrameConfig.with_cp_fraction(1024, 16, 60e3, 28e9)
    tg = [Target.monostatic(r, 0, f, gain=np.sqrt(10 ** (s / 10))) for r, s in [(30, 30), (120, -10), (160, -10)]]
    fr, X, P = _frame(f, tg)
    rep = iterative_target_extraction(fr, X, P, f, k_max=6, sigma2=1.0)
    bin_m = 3e8 / (2 * f.bandwidth)
    for r in (30, 120, 160):
        assert np.min(np.abs(rep.ranges - r)) <= bin_m


def test_angles():
    f = FrameConfig.with_cp_fraction(64, 8, 120e3, 28e9)
    arr = ArrayConfig.half_wavelength(f.wavelength, n_rx=8)
    fr, X, P = _frame(f, [Target.monostatic(10, 0, f, gain=10)], n_rx=8)
    rep = estimate_angles(fr, iterative_target_extraction(fr, X, P, f, 1), X, P, f, arr)
    assert abs(rep.detections[0].angle) < np.arcsin(1 / (8 * 16 * 0.5)) / 2 + 1e-3
    with pytest.raises(ValueError):
        estimate_angles(fr.data[:1], rep, X, P, f, arr)


def test_angle_accuracy_monte_carlo():
    f = FrameConfig.with_cp_fraction(32, 4, 120e3, 28e9)
    arr = ArrayConfig.half_wavelength(f.wavelength, n_rx=16)
    phi = np.deg2rad(20)
    gain = np.sqrt(10 ** (20 / 10) / (f.n_subcarriers * f.n_symbols))  # 20 dB integrated per antenna
    errs = []
    for s in range(100):
        fr, X, P = _frame(f, [Target.monostatic(10, 0, f, phi, gain)], n_rx=16, seed=s)
        rep = iterative_target_extraction(fr, X, P, f, 1, sigma2=1.0, pfa=0.5)
        errs.append(abs(estimate_angles(fr, rep, X, P, f, arr).detections[0].angle - phi))
    assert np.rad2deg(np.median(errs)) <= 0.5


def test_two_antenna_phase_difference():
    f = FrameConfig.with_cp_fraction(16, 4, 120e3, 28e9)
    fr, X, P = _frame(f, [Target.monostatic(5, 0, f, np.pi / 6, 1.0)], noise=0.0, n_rx=2)
    G = matched_grid(fr.data, X, P)
    v = G.sum(axis=(1, 2))
    assert np.angle(v[1] / v[0]) == pytest.approx(2 * np.pi * 0.5 * np.sin(np.pi / 6))


def test_marcum_examples():
    assert theoretical_pd(0.0, 1e-3) == pytest.approx(1e-3, rel=1e-9)
    assert theoretical_pd(1e4, 1e-6) == pytest.approx(1.0, abs=1e-12)
    a, b = np.sqrt(2 * 10.0), np.sqrt(-2 * np.log(1e-2))
    quad = integrate.quad(lambda x: x * np.exp(-(x - a) ** 2 / 2) * special.i0e(a * x), b, np.inf,
                          epsabs=1e-14, epsrel=1e-12)[0]
    assert marcum_q1(a, b) == pytest.approx(quad, abs=1e-8)
    with pytest.raises(ValueError):
        theoretical_pd(-1.0, 0.1)
    with pytest.raises(ValueError):
        theoretical_pd(1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 60), st.floats(0.01, 60))
def test_marcum_matches_ncx2(a, b):
    assert marcum_q1(a, b) == pytest.approx(stats.ncx2.sf(b * b, 2, a * a), abs=1e-9)


@settings(max_examples=40)
@given(st.floats(0, 100), st.floats(1e-6, 0.5), st.floats(1.01, 3))
def test_pd_monotone(gamma, pfa, k):
    assert theoretical_pd(gamma * k + 0.01, pfa) >= theoretical_pd(gamma, pfa) - 1e-12
    assert theoretical_pd(gamma, min(pfa * k, 0.9)) >= theoretical_pd(gamma, pfa) - 1e-12


def _bistatic(f, cfo, noise=0.0):
    sync = SyncOffsets(cfo=cfo, clock_offset=0.3 / f.bandwidth)
    tg = [Target(2.2 / f.bandwidth, 1500.0, gain=3.0)]
    return _frame(f, tg, noise=noise, mode="bistatic", sync=sync), sync


def test_cfo_estimation():
    f = FrameConfig.with_cp_fraction(64, 8, 120e3, 28e9)
    (fr, X, P), sync = _bistatic(f, 0.1 * f.subcarrier_spacing)
    est = estimate_cfo_clock(fr, X, P, f, pilot_symbols=[0, 3, 5])
    assert abs(est.cfo - sync.cfo) <= 1e-6 * f.subcarrier_spacing
    assert est.delay == pytest.approx(2.5 / f.bandwidth, abs=1e-3 / f.bandwidth)
    (fr, X, P), _ = _bistatic(f, 0.0, noise=1e-4)
    assert abs(estimate_cfo_clock(fr, X, P, f, [0, 1]).cfo) <= 1e-3 * f.subcarrier_spacing
    with pytest.raises(ValueError):
        estimate_cfo_clock(fr, X, P, f, [])


def test_cfo_compensated_peak_matches_monostatic():
    f = FrameConfig.with_cp_fraction(64, 8, 120e3, 28e9)
    (fr, X, P), sync = _bistatic(f, 0.2 * f.subcarrier_spacing)
    est = estimate_cfo_clock(fr, X, P, f, [0, 4])
    comp = fr.data * cfo_phase_diagonal(-est.cfo, f.n_subcarriers, f.elementary_duration)[None, :, None]
    shifted = Target(2.2 / f.bandwidth + sync.clock_offset, 1500.0 + sync.cfo, gain=3.0)
    mono, _, _ = _frame(f, [shifted], noise=0.0)
    peak = lambda d: range_doppler_map(d, X, P, f).magnitude.max()
    assert peak(comp) == pytest.approx(peak(mono), rel=0.01)


@settings(max_examples=15, deadline=None)
@given(st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3), st.integers(0, 1000))
def test_peak_invariant_to_scaling(scale, seed):
    f = FrameConfig.with_cp_fraction(16, 4, 120e3, 28e9)
    fr, X, P = _frame(f, [Target.monostatic(3, 40, f, gain=3)], seed=seed)
    a = range_doppler_map(fr, X, P, f)
    b = range_doppler_map(fr.data * scale, X, P, f)
    assert a.peak() == b.peak()
    # joint scaling of noise power and frame power leaves the statistic unchanged
    assert np.allclose(glrt_statistic(a, 1.0), glrt_statistic(b, abs(scale) ** 2))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_peak_within_one_padded_bin(frac, seed):
    f = FrameConfig.with_cp_fraction(64, 4, 120e3, 28e9)
    tau = frac * f.cp_duration
    fr, X, P = _frame(f, [Target(tau, 0.0, gain=50)], seed=seed)
    rd = range_doppler_map(fr, X, P, f)
    k, _ = rd.peak()
    assert abs(rd.ranges[k] - f.delay_to_range(tau)) <= rd.range_bin
