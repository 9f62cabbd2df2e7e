"""Impairment-aware processing: ICI and PN mitigation, ambiguity resolution, SI nulling."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .channel import RadarFrame, radar_echo
from .core import SPEED_OF_LIGHT, FrameConfig, Target, array_steering, cfo_phase_diagonal
from .phase_noise import PnModel, analytic_pn_covariance, pn_lag_covariance
from .radar_rx import (_frame_data, estimate_disturbance, extract_targets, range_doppler_map)


@dataclass
class BeamformerSet:
    """Hybrid TX precoders and RX combiners.

    ``F_BB`` and ``W_BB`` hold one baseband matrix per (subcarrier, symbol)
    on their leading two axes, or a single matrix shared by all.
    """

    F_RF: np.ndarray
    F_BB: np.ndarray
    W_RF: np.ndarray
    W_BB: np.ndarray
    constraint_mode: str = "digital"

    def __post_init__(self):
        if self.constraint_mode not in ("digital", "unit_modulus_analog"):
            raise ValueError(f"unknown constraint_mode {self.constraint_mode!r}")
        if self.F_RF.shape[1] != self.F_BB.shape[-2]:
            raise ValueError("F_RF columns must match F_BB rows")
        if self.W_RF.shape[1] != self.W_BB.shape[-2]:
            raise ValueError("W_RF columns must match W_BB rows")
        if self.constraint_mode == "unit_modulus_analog":
            for name in ("F_RF", "W_RF"):
                if not np.allclose(np.abs(getattr(self, name)), 1.0, atol=1e-9):
                    raise ValueError(f"{name} entries must have unit modulus")


def ici_joint_estimate(frame, X, P, config: FrameConfig, doppler_grid, k_max=5, sigma2=None, pfa=1e-3,
                       residual_threshold=1e-6, pad_n=4, pad_m=4):
    """OMP-style joint ICI/target estimation.

    Each iteration de-rotates the residual by ``D(-nu)`` for every candidate
    on ``doppler_grid``, keeps the strongest range-Doppler cell over all
    candidates, refines delay and Doppler under the exact ICI echo model,
    re-fits all gains and subtracts. A grid containing only zero is the
    plain :func:`~mcisac.radar_rx.iterative_target_extraction`.
    """
    grid = np.atleast_1d(np.asarray(doppler_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("doppler_grid is empty")
    ici = bool(np.any(grid != 0))
    report, _ = extract_targets(_frame_data(frame), X, P, config, k_max, residual_threshold, sigma2,
                                pfa, pad_n, pad_m, ici=ici, doppler_grid=grid if ici else None)
    return report


def ici_doppler_grid(config: FrameConfig, v_max, max_phase_step=0.25):
    """Candidate fast-time Dopplers covering ``|v| <= v_max``.

    The spacing keeps the residual fast-time phase excursion below
    ``max_phase_step`` rad.
    """
    step = max_phase_step / (2 * np.pi * config.elementary_duration)
    nu_max = float(config.velocity_to_doppler(v_max))
    n = int(np.ceil(nu_max / step))
    return np.arange(-n, n + 1) * step


def _dominant_echo(data, X, P, config, sigma2):
    rep, _ = extract_targets(data, X, P, config, 1, 0.0, sigma2, 0.5, 4, 4)
    if not rep.detections:
        raise ValueError("no dominant target found")
    det = rep.detections[0]
    return det.delay, det.doppler


def _fit_gain(y, s, phase):
    """LS gain of ``y ~ a * s * exp(j phase)``."""
    basis = s * np.exp(1j * phase)
    den = np.vdot(basis, basis).real
    return np.vdot(basis, y) / den if den > 0 else 0.0


def _pn_prior_solver(model, tau, config, reg):
    """Return ``f(zeta, noise_var) -> C (C + diag(noise_var) + reg I)^{-1} zeta`` on ``(N, M)`` arrays."""
    n, m = config.shape
    lag = pn_lag_covariance(model, tau, config)
    cross = np.delete(lag, m - 1, axis=1)
    if cross.size == 0 or np.max(np.abs(cross)) <= 1e-12 * max(np.abs(lag).max(), 1e-300):
        block = linalg.toeplitz(lag[n - 1:, m - 1])

        def solve(zeta, noise_var):
            out = np.empty_like(zeta)
            for j in range(m):
                A = block + np.diag(noise_var[:, j] + reg)
                out[:, j] = block @ linalg.solve(A, zeta[:, j], assume_a="pos")
            return out
        return solve
    C = analytic_pn_covariance(model, tau, config, small_angle=True, check_psd=False)

    def solve(zeta, noise_var):
        z = zeta.T.ravel()
        A = C + np.diag(noise_var.T.ravel() + reg)
        return (C @ linalg.solve(A, z, assume_a="pos")).reshape(m, n).T
    return solve


def pn_compensate(frame, X, P, config: FrameConfig, pn_model: PnModel, n_iters=3, sigma2=None,
                  reg=1e-9):
    """Estimate and remove the self-referenced PN of the dominant target.

    Alternates a MAP estimate of the phase sequence under the small-angle
    model (Gaussian prior from the analytic PN covariance at the current delay
    estimate, Tikhonov term ``reg``) with delay/Doppler/gain re-estimation on
    the compensated frame.

    Returns
    -------
    compensated : ndarray
        ``frame * exp(-j phase)`` for every antenna, same shape as the input data.
    phase : ndarray
        ``N x M`` phase estimate (rad).
    """
    data = _frame_data(frame)
    y = data[0]
    n, m = config.shape
    phase = np.zeros((n, m))
    if pn_model.bw3db == 0:
        return data.copy(), phase
    s2 = estimate_disturbance(range_doppler_map(y, X, P, config)) if sigma2 is None else sigma2
    tau, nu = _dominant_echo(data, X, P, config, s2)
    for _ in range(n_iters):
        s = radar_echo(Target(tau, nu), X, P, config)
        alpha = _fit_gain(y, s, phase)
        z = y * np.conj(alpha * s)
        zeta = np.angle(z * np.exp(-1j * phase)) + phase
        power = np.abs(alpha * s) ** 2
        noise_var = s2 / (2 * np.maximum(power, 1e-300))
        solve = _pn_prior_solver(pn_model, tau, config, reg)
        phase = solve(zeta, np.minimum(noise_var, 1e6))
        comp = data * np.exp(-1j * phase)[None]
        tau, nu = _dominant_echo(comp, X, P, config, s2)
        if sigma2 is None:
            resid = comp[0] - _fit_gain(comp[0], radar_echo(Target(tau, nu), X, P, config), 0.0) * \
                radar_echo(Target(tau, nu), X, P, config)
            s2 = float(np.mean(np.abs(resid) ** 2))
    return data * np.exp(-1j * phase)[None], phase


@dataclass
class Disambiguation:
    """Outcome of an ambiguity resolution: chosen value, interval index and per-candidate scores."""

    value: float
    index: int
    candidates: np.ndarray
    scores: np.ndarray


def _candidate_indices(span):
    if np.isscalar(span):
        span = int(span)
        if span < 0:
            raise ValueError("ambiguity span must be >= 0")
        return np.arange(-span, span + 1)
    idx = np.asarray(span, dtype=int)
    if idx.size == 0:
        raise ValueError("empty candidate set")
    return idx


def ici_velocity_disambiguate(frame, X, P, config: FrameConfig, coarse_v, ambiguity_span=2,
                              coarse_range=None, pad_n=4, pad_m=4):
    """Resolve slow-time Doppler ambiguity from the fast-time ICI phase ramp.

    Candidates are ``coarse_v + q * v_amb`` with ``v_amb = lambda / (2 Tsym)``.
    Each candidate de-rotates the frame by ``D(-nu_q)``; the one whose map peak
    is highest wins. With ``coarse_range`` the peak is taken within one range
    bin of it, so targets can be resolved one at a time.

    Parameters
    ----------
    ambiguity_span : int or sequence of int
        ``Q`` for ``q = -Q..Q`` or an explicit list of indices.
    """
    qs = _candidate_indices(ambiguity_span)
    data = _frame_data(frame)
    v_amb = config.wavelength / (2 * config.symbol_duration)
    cands = coarse_v + qs * v_amb
    scores = np.empty(len(qs))
    for i, v in enumerate(cands):
        nu = float(config.velocity_to_doppler(v))
        comp = data * cfo_phase_diagonal(-nu, config.n_subcarriers, config.elementary_duration)[:, None]
        rd = range_doppler_map(comp, X, P, config, pad_n, pad_m)
        power = rd.power
        if coarse_range is not None:
            k0 = int(round(coarse_range / rd.range_bin))
            rows = np.arange(k0 - pad_n, k0 + pad_n + 1) % power.shape[0]
            power = power[rows]
        scores[i] = power.max()
    best = int(np.argmax(scores))
    return Disambiguation(float(cands[best]), int(qs[best]), cands, scores)


def extract_pn_phase(frame, X, P, config: FrameConfig, delay, doppler, sigma2, min_snr_sigma=3.0):
    """Phase samples of the dominant echo and the mask of usable cells.

    A cell is usable when the echo magnitude, estimated from the received
    energy, exceeds ``min_snr_sigma`` noise standard deviations.
    """
    y = _frame_data(frame)[0]
    s = radar_echo(Target(delay, doppler), X, P, config)
    alpha = _fit_gain(y, s, 0.0)
    z = y * np.conj(alpha * s)
    # PN decorrelates the coherent fit, so the mask uses the echo energy
    es = np.sum(np.abs(s) ** 2)
    amp = np.sqrt(max(np.sum(np.abs(y) ** 2) / es - sigma2 * y.size / es, 0.0)) if es > 0 else 0.0
    mask = amp * np.abs(s) > min_snr_sigma * np.sqrt(sigma2)
    return np.where(mask, np.angle(z), 0.0), mask


def empirical_lag_covariance(phase, mask):
    """Masked sample covariance per (fast, slow) index lag, shape ``(2N-1, 2M-1)``.

    Computed by zero-padded 2-D FFT correlation; lags without any valid pair are NaN.
    """
    n, m = phase.shape
    x = np.where(mask, phase, 0.0)
    w = mask.astype(float)
    shape = (2 * n, 2 * m)
    sums = np.fft.ifft2(np.abs(np.fft.fft2(x, shape)) ** 2).real
    counts = np.fft.ifft2(np.abs(np.fft.fft2(w, shape)) ** 2).real
    sums = np.fft.fftshift(sums)[1:, 1:]
    counts = np.rint(np.fft.fftshift(counts)[1:, 1:])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / counts, np.nan)


def covariance_match_cost(empirical, analytic):
    """Frobenius distance over valid lags, normalised by the empirical norm."""
    valid = np.isfinite(empirical)
    num = np.linalg.norm((empirical - analytic)[valid])
    den = np.linalg.norm(empirical[valid])
    return float(num / den) if den > 0 else float(num)


def pn_range_disambiguate(frame, X, P, config: FrameConfig, pn_model: PnModel, coarse_r,
                          ambiguity_span=3, sigma2=None, coarse_doppler=0.0, min_snr_sigma=3.0,
                          min_valid_fraction=0.5):
    """Resolve range ambiguity by matching the PN lag covariance.

    Candidates are ``coarse_r + q * r_amb`` with ``r_amb = c / (2 df)``. The
    PN phase of the dominant echo is extracted, its empirical lag covariance
    is compared with the analytic one at every candidate delay and the
    candidate with the smallest normalised Frobenius distance wins.

    Parameters
    ----------
    ambiguity_span : int or sequence of int
        ``Q`` for ``q = 0..Q`` or explicit indices.

    Raises
    ------
    ValueError
        For bistatic frames or when too few cells are strong enough to read
        the phase.
    """
    if isinstance(frame, RadarFrame) and frame.mode != "monostatic":
        raise ValueError("PN range disambiguation needs a shared-oscillator (monostatic) frame")
    if np.isscalar(ambiguity_span):
        if ambiguity_span < 0:
            raise ValueError("ambiguity span must be >= 0")
        qs = np.arange(int(ambiguity_span) + 1)
    else:
        qs = _candidate_indices(ambiguity_span)
    data = _frame_data(frame)
    if sigma2 is None:
        sigma2 = estimate_disturbance(range_doppler_map(data, X, P, config))
    r_amb = SPEED_OF_LIGHT / (2 * config.subcarrier_spacing)
    tau0 = float(config.range_to_delay(coarse_r))
    phase, mask = extract_pn_phase(data, X, P, config, tau0, coarse_doppler, sigma2, min_snr_sigma)
    if mask.mean() < min_valid_fraction:
        raise ValueError(f"SNR too low for PN phase extraction: only {mask.mean():.1%} of cells usable")
    emp = empirical_lag_covariance(phase, mask)
    cands = coarse_r + qs * r_amb
    costs = np.array([covariance_match_cost(emp, pn_lag_covariance(pn_model, float(config.range_to_delay(r)),
                                                                   config)) for r in cands])
    best = int(np.argmin(costs))
    return Disambiguation(float(cands[best]), int(qs[best]), cands, costs)


def design_si_nulling(H_SI, F_RF, F_BB, Lr, constraint_mode="digital", n_iters=500, tol=1e-10):
    """RX analog combiner ``W_RF`` (Nr x Lr) with ``W_RF^H H_SI F_RF F_BB = 0``.

    ``digital``: orthonormal basis of the left null space from the SVD.
    ``unit_modulus_analog``: alternating projection between the null space
    and unit-modulus matrices; exact nulling may be impossible, so the relative
    residual is only required to be below 1e-3 (a warning is issued otherwise).

    Raises
    ------
    ValueError
        When the left null space has fewer than ``Lr`` dimensions.
    """
    H = np.asarray(H_SI) @ np.asarray(F_RF) @ np.asarray(F_BB)
    nr = H.shape[0]
    U, s, _ = np.linalg.svd(H, full_matrices=True)
    rank = int(np.sum(s > tol * max(s.max(initial=0.0), 1e-300))) if s.size else 0
    if nr - rank < Lr:
        raise ValueError(f"SI nulling infeasible: Nr={nr}, rank(H_SI F)={rank}, Lr={Lr} "
                         f"(need Nr - rank >= Lr)")
    null = U[:, rank:]
    W = null[:, :Lr]
    if constraint_mode == "digital":
        return W
    if constraint_mode != "unit_modulus_analog":
        raise ValueError(f"unknown constraint_mode {constraint_mode!r}")
    proj = null @ null.conj().T
    Wu = np.exp(1j * np.angle(W + (np.abs(W) < 1e-12)))
    for _ in range(n_iters):
        Wu = np.exp(1j * np.angle(proj @ Wu))
        if si_residual(Wu, H_SI, F_RF, F_BB) < 1e-12:
            break
    res = si_residual(Wu, H_SI, F_RF, F_BB)
    if res > 1e-3:
        warnings.warn(f"unit-modulus SI nulling residual {res:.2e} exceeds 1e-3")
    return Wu


def si_residual(W_RF, H_SI, F_RF, F_BB):
    """``||W^H H F_RF F_BB||_F / (||W||_2 ||H F_RF F_BB||_F)`` (0 when there is no SI)."""
    H = np.asarray(H_SI) @ np.asarray(F_RF) @ np.asarray(F_BB)
    ref = np.linalg.norm(H)
    if ref == 0:
        return 0.0
    return float(np.linalg.norm(W_RF.conj().T @ H) / (ref * np.linalg.norm(W_RF, 2)))


def transmit_target_gain(F_RF, F_BB, theta, arrays):
    """Per-stream TX gain ``|a_t(theta)^H [F_RF F_BB]_{:, s}|^2`` toward ``theta``."""
    a = array_steering(theta, arrays.n_tx, arrays.element_spacing, arrays.wavelength)
    return np.abs(a.conj() @ (np.asarray(F_RF) @ np.asarray(F_BB))) ** 2
