"""Baseline radar receive chain on the fast-time/slow-time grid.

Map normalisation: with ``G = (F_N Y) * sqrt(P) * conj(X)`` the complex map is

    V[k, q] = (1/sqrt(N)) sum_{n,m} w_n w_m G[n,m] exp(+2j pi n k / Npad) exp(-2j pi m q / Mpad)

so an on-grid target of gain ``alpha`` peaks at ``|alpha| * sum(P|X|^2) / sqrt(N)``
(unit window), and white noise of variance ``s2`` has per-cell variance
``s2 * noise_scale`` with ``noise_scale = sum(|w_n w_m|^2 P |X|^2) / N``.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, ndimage, optimize, special

from .channel import RadarFrame, radar_echo
from .core import SPEED_OF_LIGHT, FrameConfig, Target, cfo_phase_diagonal


@dataclass
class RangeDopplerMap:
    """Zero-padded range-Doppler map of one or more RX antennas.

    Attributes
    ----------
    values : ndarray, shape (Nr, N*pad_n, M*pad_m)
        Complex map per antenna, Doppler axis fftshifted.
    ranges, velocities : ndarray
        Bin centres in m and m/s (strictly increasing).
    noise_scale : float
        Per-cell noise variance divided by the input noise variance.
    """

    values: np.ndarray
    ranges: np.ndarray
    velocities: np.ndarray
    pad_n: int
    pad_m: int
    noise_scale: float
    config: FrameConfig
    window: str = None

    @property
    def n_antennas(self):
        return self.values.shape[0]

    @property
    def power(self):
        """Noncoherent sum of ``|V|^2`` over antennas."""
        return np.sum(np.abs(self.values) ** 2, axis=0)

    @property
    def magnitude(self):
        return np.sqrt(self.power)

    @property
    def range_bin(self):
        return SPEED_OF_LIGHT / (2 * self.values.shape[1] * self.config.subcarrier_spacing)

    @property
    def velocity_bin(self):
        return self.config.wavelength / (2 * self.values.shape[2] * self.config.symbol_duration)

    def peak(self):
        """``(range_idx, doppler_idx)`` of the largest cell (lowest linear index on ties)."""
        return np.unravel_index(int(np.argmax(self.power)), self.power.shape)

    def delay_of(self, k):
        return k / (self.values.shape[1] * self.config.subcarrier_spacing)

    def doppler_of(self, q):
        mpad = self.values.shape[2]
        return (q - mpad // 2) / (mpad * self.config.symbol_duration)

    def range_profile(self, doppler_idx=None, db=True):
        """Range cut at a Doppler bin (default: the peak's)."""
        if doppler_idx is None:
            doppler_idx = self.peak()[1]
        cut = self.magnitude[:, doppler_idx]
        return 20 * np.log10(np.maximum(cut, 1e-300)) if db else cut

    def to_csv(self, path):
        """Header: velocities (m/s); first column ranges (m); body dB re map peak."""
        mag = self.magnitude
        ref = mag.max() if mag.max() > 0 else 1.0
        body = 20 * np.log10(np.maximum(mag / ref, 1e-15))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["range_m\\velocity_mps"] + [f"{v:.6g}" for v in self.velocities])
            for r, row in zip(self.ranges, body):
                w.writerow([f"{r:.6g}"] + [f"{x:.4f}" for x in row])


@dataclass
class Detection:
    range: float
    velocity: float
    amplitude: complex
    statistic: float
    delay: float
    doppler: float
    angle: float = float("nan")


@dataclass
class DetectionReport:
    detections: list = field(default_factory=list)
    threshold: float = float("nan")
    pfa_design: float = float("nan")
    sigma2: float = float("nan")

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    @property
    def ranges(self):
        return np.array([d.range for d in self.detections])

    @property
    def velocities(self):
        return np.array([d.velocity for d in self.detections])


def _frame_data(frame):
    if isinstance(frame, RadarFrame):
        return frame.data
    data = np.asarray(frame)
    return data[None] if data.ndim == 2 else data


def _window(kind, n):
    if kind is None:
        return np.ones(n)
    if kind == "hann":
        # periodic-free symmetric Hann normalised to unit mean so peaks stay comparable
        w = np.hanning(n + 2)[1:-1]
        return w / w.mean()
    raise ValueError(f"unknown window {kind!r}")


def matched_grid(Y, X, P):
    """``(F_N Y) * sqrt(P) * conj(X)`` for one antenna (or stacked antennas)."""
    return np.fft.fft(Y, axis=-2) / np.sqrt(Y.shape[-2]) * np.sqrt(P) * np.conj(X)


def range_doppler_map(frame, X, P, config: FrameConfig, pad_n=4, pad_m=4, window=None,
                      tx_beams=None, antennas=None):
    """2-D FFT range-Doppler map.

    Parameters
    ----------
    frame : RadarFrame or ndarray
        ``N x M`` or ``(Nr, N, M)`` observation.
    pad_n, pad_m : int
        Zero-padding factors on the range and Doppler axes.
    window : {None, "hann"}
        Taper applied on both axes before the transforms.
    tx_beams : ndarray, optional
        TX beam matrix; beams that change over symbols are rejected.
    antennas : sequence of int, optional
        Subset of RX antennas to keep (default all).
    """
    if tx_beams is not None:
        tx_beams = np.asarray(tx_beams)
        if not np.allclose(tx_beams, tx_beams[:, :1]):
            raise ValueError("range-Doppler processing needs a constant TX beam across symbols")
    if pad_n < 1 or pad_m < 1:
        raise ValueError("pad factors must be >= 1")
    data = _frame_data(frame)
    if antennas is not None:
        data = data[list(antennas)]
    n, m = config.shape
    if data.shape[1:] != (n, m):
        raise ValueError(f"frame shape {data.shape[1:]} does not match config {config.shape}")
    P = np.asarray(P, dtype=float)
    G = matched_grid(data, X, P)
    wn, wm = _window(window, n), _window(window, m)
    G = G * wn[:, None] * wm[None, :]
    npad, mpad = n * pad_n, m * pad_m
    V = np.fft.ifft(G, n=npad, axis=1) * (npad / np.sqrt(n))
    V = np.fft.fftshift(np.fft.fft(V, n=mpad, axis=2), axes=2)
    noise_scale = float(np.sum((wn[:, None] * wm[None, :]) ** 2 * P * np.abs(X) ** 2) / n)
    ranges = np.arange(npad) * SPEED_OF_LIGHT / (2 * npad * config.subcarrier_spacing)
    velocities = (np.arange(mpad) - mpad // 2) * config.wavelength / (2 * mpad * config.symbol_duration)
    return RangeDopplerMap(V, ranges, velocities, pad_n, pad_m, noise_scale, config, window)


def matched_response(G, config: FrameConfig, delay, doppler):
    """Continuous-parameter matched filter ``(1/sqrt(N)) sum G e^{j2pi n df tau} e^{-j2pi m Tsym nu}``."""
    n, m = G.shape[-2:]
    a = np.exp(2j * np.pi * np.arange(n) * config.subcarrier_spacing * delay)
    c = np.exp(-2j * np.pi * np.arange(m) * config.symbol_duration * doppler)
    return (a @ G @ c) / np.sqrt(n)


def _bins(config):
    n, m = config.shape
    return 1.0 / (n * config.subcarrier_spacing), 1.0 / (m * config.symbol_duration)


def _nelder_mead(cost, step=0.2):
    f0 = cost(np.zeros(2))
    res = optimize.minimize(cost, np.zeros(2), method="Nelder-Mead",
                            options={"xatol": 1e-7, "fatol": 1e-13 * max(abs(f0), 1e-300),
                                     "initial_simplex": [[0, 0], [step, 0], [0, step]]})
    return res.x if res.fun <= f0 else np.zeros(2)


def refine_peak(G, config: FrameConfig, delay0, doppler0):
    """Maximise ``|matched_response|^2`` (summed over a leading antenna axis) near a coarse estimate."""
    d_bin, v_bin = _bins(config)
    G2 = G if G.ndim == 3 else G[None]

    def cost(x):
        tau, nu = delay0 + x[0] * d_bin, doppler0 + x[1] * v_bin
        return -sum(abs(matched_response(g, config, tau, nu)) ** 2 for g in G2)

    x = _nelder_mead(cost)
    return delay0 + x[0] * d_bin, doppler0 + x[1] * v_bin


def refine_peak_ici(residual, X, P, config: FrameConfig, delay0, doppler0):
    """As :func:`refine_peak`, but the candidate echo carries its own fast-time rotation ``D(nu)``."""
    d_bin, v_bin = _bins(config)
    n = config.n_subcarriers
    data = residual if residual.ndim == 3 else residual[None]

    def cost(x):
        tau, nu = delay0 + x[0] * d_bin, doppler0 + x[1] * v_bin
        G = matched_grid(data * cfo_phase_diagonal(-nu, n, config.elementary_duration)[:, None], X, P)
        return -sum(abs(matched_response(g, config, tau, nu)) ** 2 for g in G)

    x = _nelder_mead(cost)
    return delay0 + x[0] * d_bin, doppler0 + x[1] * v_bin


def glrt_threshold(pfa, n_cells, n_antennas=1):
    """Threshold on ``sum_i |V_i|^2 / (s2 * noise_scale)`` for a max-over-cells false-alarm rate.

    Under noise only each independent cell statistic is Gamma(n_antennas, 1);
    the per-cell rate is ``1 - (1 - pfa)**(1/n_cells)``.
    """
    if not 0 < pfa < 1:
        raise ValueError(f"pfa must be in (0, 1), got {pfa}")
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    pfa_cell = -np.expm1(np.log1p(-pfa) / n_cells)
    return float(special.gammainccinv(n_antennas, pfa_cell))


def glrt_statistic(rd_map: RangeDopplerMap, sigma2):
    """Normalised detection statistic on every map cell."""
    return rd_map.power / (sigma2 * rd_map.noise_scale)


def estimate_disturbance(rd_map: RangeDopplerMap):
    """Plug-in disturbance power from the median critical cell.

    Robust to a few targets, but sidelobe and ICI floors inflate it on purpose:
    they mask weak targets just like noise does.
    """
    med = np.median(rd_map.power[::rd_map.pad_n, ::rd_map.pad_m])
    return float(med / (special.gammaincinv(rd_map.n_antennas, 0.5) * rd_map.noise_scale))


def glrt_detect(rd_map: RangeDopplerMap, sigma2, pfa, n_antennas=None, per_cell=False):
    """Threshold detection with 3x3 peak grouping.

    The decision uses the critically sampled cells (every ``pad``-th bin), which
    are the ``N*M`` independent noise cells the threshold is designed for; each
    detection is then placed at the strongest padded cell within half a bin.

    Parameters
    ----------
    sigma2 : float or None
        Noise variance; ``None`` estimates it from the map.
    per_cell : bool
        Design the threshold for a single cell instead of the whole map.
    """
    if not 0 < pfa < 1:
        raise ValueError(f"pfa must be in (0, 1), got {pfa}")
    n_antennas = rd_map.n_antennas if n_antennas is None else n_antennas
    if sigma2 is None:
        sigma2 = estimate_disturbance(rd_map)
    n, m = rd_map.config.shape
    thr = glrt_threshold(pfa, 1 if per_cell else n * m, n_antennas)
    report = DetectionReport([], thr, pfa, sigma2)
    if rd_map.noise_scale == 0 or sigma2 <= 0:
        return report
    stat = glrt_statistic(rd_map, sigma2)
    crit = stat[::rd_map.pad_n, ::rd_map.pad_m]
    local_max = ndimage.maximum_filter(crit, size=3, mode="wrap")
    kept = []
    for i, j in np.argwhere((crit >= thr) & (crit == local_max)):
        # plateau ties: the lowest linear index owns the neighbourhood
        if not any(abs(i - a) <= 1 and abs(j - b) <= 1 for a, b in kept):
            kept.append((i, j))
    pn, pm = rd_map.pad_n, rd_map.pad_m
    npad, mpad = stat.shape
    for i, j in kept:
        rows = (i * pn + np.arange(-(pn // 2), pn // 2 + 1)) % npad
        cols = (j * pm + np.arange(-(pm // 2), pm // 2 + 1)) % mpad
        sub = stat[np.ix_(rows, cols)]
        a, b = np.unravel_index(int(np.argmax(sub)), sub.shape)
        k, q = rows[a], cols[b]
        report.detections.append(Detection(
            range=float(rd_map.ranges[k]), velocity=float(rd_map.velocities[q]),
            amplitude=complex(rd_map.values[0, k, q]), statistic=float(crit[i, j]),
            delay=float(rd_map.delay_of(k)), doppler=float(rd_map.doppler_of(q))))
    report.detections.sort(key=lambda d: -d.statistic)
    return report


def echo_basis(targets, X, P, config: FrameConfig, ici=False):
    """Unit-gain time-domain echoes of ``(delay, doppler)`` pairs as columns, ``(N*M, K)``."""
    cols = [radar_echo(Target(max(tau, 0.0), nu), X, P, config, ici=ici).ravel() for tau, nu in targets]
    return np.stack(cols, axis=1) if cols else np.zeros((X.size, 0), dtype=complex)


def _strongest(residual, X, P, config, pad_n, pad_m, doppler_grid):
    """Best ``(map, k, q, rotation)`` over the fast-time compensation grid."""
    n = config.n_subcarriers
    best = None
    for rot in (doppler_grid if doppler_grid is not None else [0.0]):
        comp = residual if rot == 0 else residual * cfo_phase_diagonal(
            -rot, n, config.elementary_duration)[:, None]
        rd = range_doppler_map(comp, X, P, config, pad_n, pad_m)
        k, q = rd.peak()
        if best is None or rd.power[k, q] > best[0].power[best[1], best[2]]:
            best = (rd, k, q, rot)
    return best


def _refine(residual, X, P, config, tau, nu, ici):
    if ici:
        return refine_peak_ici(residual, X, P, config, tau, nu)
    return refine_peak(matched_grid(residual, X, P), config, tau, nu)


def extract_targets(data, X, P, config, k_max, residual_threshold, sigma2, pfa, pad_n, pad_m,
                    ici=False, doppler_grid=None, relax_passes=2):
    """Greedy detect / refine / joint re-fit / subtract loop.

    After each new target all positions are re-refined cyclically against the
    residual with the other echoes removed, then all gains are re-fitted by
    least squares. Returns the report and the final residual.
    """
    n, m = config.shape
    data = data if data.ndim == 3 else data[None]
    y = data.reshape(data.shape[0], -1).T  # (NM, Nr)
    energy0 = float(np.sum(np.abs(y) ** 2))
    thr = glrt_threshold(pfa, n * m, data.shape[0])
    found, stats = [], []
    gains = np.zeros((0, data.shape[0]), dtype=complex)
    residual = data
    s2_report = sigma2
    for _ in range(k_max):
        if energy0 == 0:
            break
        rd, k, q, rot = _strongest(residual, X, P, config, pad_n, pad_m, doppler_grid)
        s2 = sigma2 if sigma2 is not None else estimate_disturbance(rd)
        s2_report = s2 if s2_report is None else s2_report
        stat = rd.power[k, q] / (s2 * rd.noise_scale) if s2 > 0 else np.inf
        if stat < thr:
            break
        nu0 = rd.doppler_of(q)
        if ici:
            # the fast-time rotation carries the unaliased Doppler
            nu0 += np.round((rot - nu0) * config.symbol_duration) / config.symbol_duration
        found.append(_refine(residual, X, P, config, rd.delay_of(k), nu0, ici))
        stats.append(stat)
        A = echo_basis(found, X, P, config, ici=ici)
        gains = np.linalg.lstsq(A, y, rcond=None)[0]
        for _ in range(relax_passes if len(found) > 1 else 0):
            for j in range(len(found)):
                own = y - A @ gains + A[:, j:j + 1] @ gains[j:j + 1]
                found[j] = _refine(own.T.reshape(data.shape), X, P, config, *found[j], ici)
                A[:, j] = echo_basis([found[j]], X, P, config, ici=ici)[:, 0]
                gains = np.linalg.lstsq(A, y, rcond=None)[0]
        residual = (y - A @ gains).T.reshape(data.shape)
        if np.sum(np.abs(residual) ** 2) <= residual_threshold * energy0:
            break
    dets = [Detection(float(config.delay_to_range(tau)), float(config.doppler_to_velocity(nu)),
                      complex(g[0]), float(s), float(tau), float(nu))
            for (tau, nu), g, s in zip(found, gains, stats)]
    dets.sort(key=lambda d: -abs(d.amplitude))
    s2_report = float("nan") if s2_report is None else float(s2_report)
    return DetectionReport(dets, thr, pfa, s2_report), residual


def iterative_target_extraction(frame, X, P, config: FrameConfig, k_max=5, residual_threshold=1e-6,
                                sigma2=None, pfa=1e-3, pad_n=4, pad_m=4):
    """Successive detect-and-subtract multi-target extraction.

    Each iteration takes the strongest RD-map cell, refines its delay and
    Doppler off the grid, re-fits all gains jointly by least squares and
    subtracts the reconstruction. Stops after ``k_max`` targets, when the
    residual energy ratio drops below ``residual_threshold`` or when the
    strongest residual cell fails the GLRT (``sigma2=None`` estimates the
    disturbance from the residual map).
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    report, _ = extract_targets(_frame_data(frame), X, P, config, k_max, residual_threshold, sigma2,
                                pfa, pad_n, pad_m)
    return report


def estimate_angles(frame, detections, X, P, config: FrameConfig, arrays, pad=16):
    """Attach AoA estimates from the per-antenna matched-filter outputs.

    Per detection the ``Nr`` complex values at its delay/Doppler are
    transformed with a zero-padded spatial DFT; the peak is interpolated
    quadratically and mapped to ``asin(u * lambda / d)``.
    """
    data = _frame_data(frame)
    nr = data.shape[0]
    if nr < 2:
        raise ValueError("angle estimation needs at least two RX antennas")
    dets = detections.detections if isinstance(detections, DetectionReport) else list(detections)
    G = matched_grid(data, X, P)
    npad = nr * pad
    out = []
    for det in dets:
        v = np.array([matched_response(g, config, det.delay, det.doppler) for g in G])
        spec = np.abs(np.fft.fft(v, n=npad)) ** 2
        i = int(np.argmax(spec))
        ym, y0, yp = spec[(i - 1) % npad], spec[i], spec[(i + 1) % npad]
        den = ym - 2 * y0 + yp
        delta = 0.5 * (ym - yp) / den if den != 0 else 0.0
        u = (i + delta) / npad
        u = (u + 0.5) % 1.0 - 0.5
        s = np.clip(u * arrays.wavelength / arrays.element_spacing, -1.0, 1.0)
        out.append(replace(det, angle=float(np.arcsin(s))))
    if isinstance(detections, DetectionReport):
        return replace(detections, detections=out)
    return out


def marcum_q1(a, b, tol=1e-10):
    """First-order Marcum Q-function ``Q1(a, b)``.

    Bessel series with exponentially scaled terms:
    ``a < b``: ``exp(-(a-b)^2/2) sum_{k>=0} (a/b)^k ive(k, ab)``;
    ``a >= b``: ``1 - exp(-(a-b)^2/2) sum_{k>=1} (b/a)^k ive(k, ab)``.
    Falls back to adaptive quadrature when the series would need too many terms.
    """
    a = float(a)
    b = float(b)
    if a < 0 or b < 0:
        raise ValueError("Marcum Q arguments must be >= 0")
    if b == 0:
        return 1.0
    if a == 0:
        return float(np.exp(-b * b / 2))
    x = a * b
    n_terms = int(x + 12 * np.sqrt(x) + 60)
    if n_terms > 200_000:
        return _marcum_q1_quad(a, b)
    k = np.arange(n_terms + 1)
    pref = np.exp(-0.5 * (a - b) ** 2)
    if a < b:
        terms = np.exp(k * (np.log(a) - np.log(b))) * special.ive(k, x)
        val = pref * terms.sum()
    else:
        terms = np.exp(k[1:] * (np.log(b) - np.log(a))) * special.ive(k[1:], x)
        val = 1.0 - pref * terms.sum()
    if terms[-1] * pref > tol:
        return _marcum_q1_quad(a, b)
    return float(min(max(val, 0.0), 1.0))


def _marcum_q1_quad(a, b):
    f = lambda t: t * np.exp(-0.5 * (t - a) ** 2) * special.i0e(a * t)
    hi = max(a, b) + 40.0
    val, _ = integrate.quad(f, b, hi, limit=400, epsabs=1e-13)
    return float(min(max(val, 0.0), 1.0))


def theoretical_pd(gamma, pfa):
    """Detection probability ``Q1(sqrt(2 gamma), sqrt(-2 ln pfa))`` for linear SNR ``gamma``."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if not 0 < pfa < 1:
        raise ValueError(f"pfa must be in (0, 1), got {pfa}")
    return marcum_q1(np.sqrt(2.0 * gamma), np.sqrt(-2.0 * np.log(pfa)))


@dataclass
class CfoEstimate:
    cfo: float
    delay: float
    note: str = "delay includes the unobservable clock offset"


def estimate_cfo_clock(frame, X, P, config: FrameConfig, pilot_symbols, max_cfo=None, n_iters=6):
    """Estimate the CFO of a bistatic frame from fully known pilot symbols.

    Alternates (a) delay estimation on the de-rotated pilots and (b) a
    weighted least-squares fit of the fast-time phase ramp of
    ``y * conj(reference)``. The returned delay is ``tau + clock_offset``.
    """
    data = _frame_data(frame)[0]
    pilots = np.atleast_1d(np.asarray(pilot_symbols))
    if pilots.dtype == bool:
        pilots = np.flatnonzero(pilots)
    if pilots.size == 0:
        raise ValueError("pilot set is empty")
    n, m = config.shape
    if n < 2:
        raise ValueError("need at least two fast-time samples per pilot")
    T = config.elementary_duration
    Yp, Xp, Pp = data[:, pilots], X[:, pilots], np.asarray(P, dtype=float)[:, pilots]
    ell = np.arange(n)
    cfo = 0.0
    tau = 0.0
    max_cfo = 0.5 * config.subcarrier_spacing if max_cfo is None else max_cfo
    for _ in range(n_iters):
        derot = Yp * cfo_phase_diagonal(-cfo, n, T)[:, None]
        G = matched_grid(derot, Xp, Pp)
        prof = np.sum(np.abs(np.fft.ifft(G, n=4 * n, axis=0)) ** 2, axis=1)
        k = int(np.argmax(prof))
        tau = _refine_delay(G, config, k / (4 * n * config.subcarrier_spacing))
        ref = np.fft.ifft(np.sqrt(Pp) * Xp * np.exp(-2j * np.pi * ell * config.subcarrier_spacing * tau)[:, None],
                          axis=0) * np.sqrt(n)
        z = Yp * np.conj(ref)
        # remove per-symbol common phase, then fit the ramp
        zc = z * np.exp(-1j * np.angle(np.sum(z * np.exp(-2j * np.pi * T * ell * cfo / n)[:, None], axis=0)))[None]
        w = np.abs(ref) ** 2
        lag = np.sum(zc[1:] * np.conj(zc[:-1]))
        coarse = np.angle(lag) * n / (2 * np.pi * T)
        phase = np.angle(zc * np.exp(-2j * np.pi * T * ell * coarse / n)[:, None])
        tt = 2 * np.pi * T * ell / n
        tt_c = tt - np.sum(w * tt[:, None]) / np.sum(w)
        slope = np.sum(w * tt_c[:, None] * phase) / np.sum(w * tt_c[:, None] ** 2)
        cfo = float(np.clip(coarse + slope, -max_cfo, max_cfo))
    return CfoEstimate(cfo, float(tau))


def _refine_delay(G, config, delay0):
    """Delay-only refinement allowing an arbitrary phase per pilot symbol."""
    d_bin = 1.0 / (G.shape[0] * config.subcarrier_spacing)

    def cost(x):
        a = np.exp(2j * np.pi * np.arange(G.shape[0]) * config.subcarrier_spacing * (delay0 + x * d_bin))
        return -np.sum(np.abs(a @ G) ** 2)

    res = optimize.minimize_scalar(cost, bounds=(-1, 1), method="bounded", options={"xatol": 1e-10})
    return delay0 + res.x * d_bin
