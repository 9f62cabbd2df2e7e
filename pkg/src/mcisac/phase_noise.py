"""Oscillator phase noise: sample paths, self-referenced PN matrices and their covariance.

Two oscillator models are provided.

free-running
    Wiener phase, ``phi(t+h) - phi(t) ~ N(0, 4*pi*beta*h)`` where ``beta`` is
    the 3 dB linewidth. A Wiener phase gives a Lorentzian spectrum whose
    half-power full width is ``beta`` exactly when the diffusion rate is
    ``4*pi*beta`` rad^2/s.

pll
    The same VCO diffusion tracked by a first-order loop of bandwidth
    ``B_L``: ``d phi = -w_L phi dt + sqrt(4*pi*beta) dW`` with
    ``w_L = 2*pi*B_L``. Stationary (Ornstein-Uhlenbeck), variance
    ``beta / B_L`` and autocovariance ``(beta/B_L) * exp(-w_L |lag|)``,
    i.e. a Lorentzian PSD with its corner at the loop bandwidth.

A monostatic receiver shares the TX oscillator, so a target at delay ``tau``
sees the phase difference ``xi(t) = phi(t) - phi(t - tau)``. Its covariance
is ``2K(d) - K(d + tau) - K(d - tau)`` for lag ``d``, where ``K`` is the phase
autocovariance (``-2*pi*beta*|d|`` plays that role for the Wiener case and
gives ``4*pi*beta*max(0, tau - |d|)``).
"""

from dataclasses import dataclass

import numpy as np

from .core import FrameConfig, rng_from


@dataclass(frozen=True)
class PnModel:
    """Oscillator phase-noise model.

    Attributes
    ----------
    kind : {"free_running", "pll"}
    bw3db : float
        3 dB linewidth of the free-running VCO (Hz).
    loop_bw : float, optional
        PLL loop bandwidth (Hz), required for ``kind="pll"``.
    """

    kind: str
    bw3db: float
    loop_bw: float = 0.0

    def __post_init__(self):
        if self.kind not in ("free_running", "pll"):
            raise ValueError(f"unknown phase-noise kind {self.kind!r}")
        if self.bw3db < 0:
            raise ValueError("bw3db must be >= 0")
        if self.kind == "pll" and self.loop_bw <= 0:
            raise ValueError("pll model needs loop_bw > 0")

    @classmethod
    def free_running(cls, bw3db):
        return cls("free_running", float(bw3db))

    @classmethod
    def pll(cls, loop_bw, bw3db):
        return cls("pll", float(bw3db), float(loop_bw))

    @property
    def diffusion(self):
        """Wiener diffusion rate of the VCO phase, rad^2/s."""
        return 4.0 * np.pi * self.bw3db

    @property
    def loop_rate(self):
        return 2.0 * np.pi * self.loop_bw

    @property
    def stationary_variance(self):
        if self.kind != "pll":
            return np.inf
        return self.diffusion / (2.0 * self.loop_rate)

    def autocovariance(self, lag):
        """Phase autocovariance (stationary part) at ``lag`` seconds.

        For the Wiener model this is the generalised covariance
        ``-diffusion*|lag|/2``; only its second differences are meaningful.
        """
        lag = np.abs(np.asarray(lag, dtype=float))
        if self.kind == "pll":
            return self.stationary_variance * np.exp(-self.loop_rate * lag)
        return -0.5 * self.diffusion * lag

    def psd(self, freq):
        """Two-sided phase PSD in rad^2/Hz (PLL model only)."""
        if self.kind != "pll":
            raise ValueError("the Wiener phase has no stationary PSD")
        w = 2.0 * np.pi * np.asarray(freq, dtype=float)
        return self.diffusion / (w ** 2 + self.loop_rate ** 2)


def sample_phase_at(model: PnModel, times, seed=None):
    """Draw one phase path evaluated at arbitrary (unsorted) instants.

    Increments between consecutive sorted instants are generated from the
    exact transition law, so off-grid instants need no interpolation.
    """
    rng = rng_from(seed)
    times = np.asarray(times, dtype=float)
    flat = times.ravel()
    order = np.argsort(flat, kind="stable")
    ts = flat[order]
    steps = np.diff(ts)
    z = rng.standard_normal(len(ts))
    phase = np.empty(len(ts))
    if model.kind == "free_running":
        phase[0] = 0.0
        phase[1:] = np.cumsum(np.sqrt(model.diffusion * steps) * z[1:])
    else:
        var = model.stationary_variance
        decay = np.exp(-model.loop_rate * steps)
        innov = np.sqrt(var * (1.0 - decay ** 2)) * z[1:]
        phase[0] = np.sqrt(var) * z[0]
        for i in range(1, len(ts)):
            phase[i] = decay[i - 1] * phase[i - 1] + innov[i - 1]
    out = np.empty_like(phase)
    out[order] = phase
    return out.reshape(times.shape)


def sample_pn_path(model: PnModel, n_samples, fs, seed=None):
    """Phase-noise path (rad) on a uniform grid of ``n_samples`` at rate ``fs``.

    The free-running path starts at 0; the PLL path starts in steady state.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return sample_phase_at(model, np.arange(n_samples) / fs, seed)


def self_referenced_phases(model: PnModel, delays, config: FrameConfig, seed=None):
    """Phase differences ``phi(t) - phi(t - tau_k)`` on the fast/slow-time grid.

    All delays share one oscillator path. Returns shape ``(K, N, M)``.
    """
    delays = np.atleast_1d(np.asarray(delays, dtype=float))
    if np.any(delays < 0):
        raise ValueError("delays must be >= 0")
    t = config.sample_times()
    instants = np.concatenate([t[None], t[None] - delays[:, None, None]], axis=0)
    phase = sample_phase_at(model, instants, seed)
    return phase[0][None] - phase[1:]


def self_referenced_pn(model: PnModel, tau, config: FrameConfig, seed=None):
    """Multiplicative PN matrix ``W(tau)`` (N x M, unit modulus)."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return np.exp(1j * self_referenced_phases(model, [tau], config, seed)[0])


def phase_difference_covariance(model: PnModel, tau, lags):
    """Covariance of ``xi(t) = phi(t) - phi(t - tau)`` at the given time lags."""
    lags = np.asarray(lags, dtype=float)
    if model.kind == "free_running":
        return model.diffusion * np.maximum(0.0, tau - np.abs(lags))
    k = model.autocovariance
    return 2.0 * k(lags) - k(lags + tau) - k(lags - tau)


def lag_times(config: FrameConfig):
    """Time lag of every (fast, slow) index offset, shape ``(2N-1, 2M-1)``.

    Row ``i`` is fast-time offset ``i - (N-1)``, column ``j`` slow-time
    offset ``j - (M-1)``.
    """
    n, m = config.shape
    dl = np.arange(-(n - 1), n) * (config.elementary_duration / n)
    dm = np.arange(-(m - 1), m) * config.symbol_duration
    return dl[:, None] + dm[None, :]


def pn_lag_covariance(model: PnModel, tau, config: FrameConfig):
    """Self-referenced PN covariance per index lag, shape ``(2N-1, 2M-1)``."""
    return phase_difference_covariance(model, tau, lag_times(config))


def analytic_pn_covariance(model: PnModel, tau, config: FrameConfig, small_angle=True,
                           check_psd=True):
    """Full ``NM x NM`` covariance of the self-referenced phase samples.

    Samples are vectorised fast-time first (index ``l + N*m``), which makes the
    matrix Toeplitz-block-Toeplitz.

    Raises
    ------
    ValueError
        For the free-running model without ``small_angle`` (only the phase
        covariance is available in closed form), or when the assembled matrix
        is not positive semidefinite.
    """
    if model.kind == "free_running" and not small_angle:
        raise ValueError("free-running covariance is defined for the phase process only; "
                         "pass small_angle=True")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    n, m = config.shape
    lag_cov = pn_lag_covariance(model, tau, config)
    ell = np.arange(n)
    sym = np.arange(m)
    dl = (ell[:, None, None, None] - ell[None, None, :, None]) + (n - 1)
    dm = (sym[None, :, None, None] - sym[None, None, None, :]) + (m - 1)
    # index [l, m, l', m'] -> reshape with l fastest
    cov = lag_cov[dl, dm]
    cov = cov.transpose(1, 0, 3, 2).reshape(n * m, n * m)
    if check_psd and tau > 0:
        w = np.linalg.eigvalsh(cov)
        if w[0] < -1e-9 * max(w[-1], 1e-300):
            raise ValueError(f"assembled PN covariance is not PSD (min eigenvalue {w[0]:.3e})")
    return cov
