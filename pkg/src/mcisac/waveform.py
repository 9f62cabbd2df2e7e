"""Symbol grids, OFDM / MCPC sample streams and their PAPR and ambiguity analyses."""

from dataclasses import dataclass

import numpy as np

from .core import FrameConfig, rng_from

CONSTELLATIONS = ("qpsk", "16qam", "unit-modulus-random")


@dataclass(frozen=True)
class SampleStream:
    """Complex baseband samples taken at rate ``fs`` starting at t = 0."""

    samples: np.ndarray
    fs: float

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.fs

    @property
    def times(self):
        return np.arange(len(self.samples)) / self.fs

    def to_csv(self, path):
        """Write ``t_s,re,im`` rows, one per sample."""
        data = np.column_stack([self.times, self.samples.real, self.samples.imag])
        np.savetxt(path, data, delimiter=",", header="t_s,re,im", comments="", fmt="%.17g")


def build_symbol_grid(config: FrameConfig, constellation="qpsk", seed=None):
    """Draw an ``N x M`` grid of unit-average-energy data symbols.

    Parameters
    ----------
    config : FrameConfig
        Provides the grid shape.
    constellation : {"qpsk", "16qam", "unit-modulus-random"}
        Symbol alphabet. QAM alphabets are scaled to unit average energy.
    seed : int, SeedSequence or Generator, optional
        Same seed, same grid.
    """
    rng = rng_from(seed)
    shape = config.shape
    name = constellation.lower()
    if name == "qpsk":
        bits = rng.integers(0, 2, size=(2,) + shape)
        return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / np.sqrt(2)
    if name == "16qam":
        levels = np.array([-3.0, -1.0, 1.0, 3.0])
        i = levels[rng.integers(0, 4, size=shape)]
        q = levels[rng.integers(0, 4, size=shape)]
        return (i + 1j * q) / np.sqrt(10.0)
    if name == "unit-modulus-random":
        return np.exp(2j * np.pi * rng.random(shape))
    raise ValueError(f"unknown constellation {constellation!r}; expected one of {CONSTELLATIONS}")


def uniform_power_grid(config: FrameConfig):
    """Power map spreading ``total_power`` evenly over all ``N*M`` cells."""
    n, m = config.shape
    return np.full((n, m), config.total_power / (n * m))


def check_power_grid(P, config: FrameConfig, rtol=1e-9):
    """Validate shape, sign and budget of a power map."""
    P = np.asarray(P, dtype=float)
    if P.shape != config.shape:
        raise ValueError(f"power grid shape {P.shape} does not match frame {config.shape}")
    if np.any(P < 0):
        raise ValueError("power grid has negative entries")
    if abs(P.sum() - config.total_power) > rtol * config.total_power:
        raise ValueError(f"power grid sums to {P.sum():.12g}, budget is {config.total_power:.12g}")
    return P


def _check_grids(X, P, config):
    X = np.asarray(X)
    P = np.asarray(P, dtype=float)
    if X.shape != config.shape or P.shape != config.shape:
        raise ValueError(f"grid shapes {X.shape}/{P.shape} do not match frame {config.shape}")
    return X, P


def ofdm_modulate(X, P, config: FrameConfig, oversample=1, cyclic_prefix=True):
    """Synthesize the CP-OFDM baseband stream of a whole frame.

    Each symbol is ``(1/sqrt(N)) * sum_n sqrt(P[n,m]) X[n,m] exp(2j*pi*n*df*t)``
    sampled at ``oversample * N * df`` over one elementary duration, preceded
    by a cyclic copy of its last ``round(Tcp * fs)`` samples.
    """
    X, P = _check_grids(X, P, config)
    oversample = int(oversample)
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    n, m = config.shape
    fs = oversample * config.bandwidth
    n_fft = n * oversample
    spec = np.zeros((n_fft, m), dtype=complex)
    spec[:n] = np.sqrt(P) * X
    body = np.fft.ifft(spec, axis=0) * (n_fft / np.sqrt(n))
    n_cp = int(round(config.cp_duration * fs)) if cyclic_prefix else 0
    if n_cp > n_fft:
        raise ValueError("cyclic prefix longer than the symbol body")
    blocks = np.concatenate([body[n_fft - n_cp:], body], axis=0) if n_cp else body
    return SampleStream(blocks.T.reshape(-1), fs)


def ofdm_demodulate(stream: SampleStream, config: FrameConfig, cyclic_prefix=True):
    """Strip the CP, decimate to ``N`` samples per symbol and apply the unitary DFT.

    Returns the ``N x M`` grid ``sqrt(P) * X`` of a noiseless loopback.
    """
    n, m = config.shape
    oversample = int(round(stream.fs / config.bandwidth))
    n_fft = n * oversample
    n_cp = int(round(config.cp_duration * stream.fs)) if cyclic_prefix else 0
    per_symbol = n_fft + n_cp
    if len(stream) != per_symbol * m:
        raise ValueError("stream length does not match the frame configuration")
    blocks = stream.samples.reshape(m, per_symbol).T[n_cp::oversample]
    return np.fft.fft(blocks, axis=0) / np.sqrt(n)


@dataclass(frozen=True)
class McpcConfig:
    """Multicarrier phase-coded pulse: ``N`` carriers, codes of length ``L``.

    ``codes`` is ``N x L`` unit-modulus, ``weights`` has length ``N``.
    """

    codes: np.ndarray
    weights: np.ndarray
    chip_duration: float

    def __post_init__(self):
        codes = np.atleast_2d(np.asarray(self.codes, dtype=complex))
        weights = np.asarray(self.weights, dtype=complex)
        if weights.shape != (codes.shape[0],):
            raise ValueError("need one weight per carrier")
        if not np.allclose(np.abs(codes), 1.0, atol=1e-12):
            raise ValueError("code elements must be unit modulus")
        if self.chip_duration <= 0:
            raise ValueError("chip_duration must be > 0")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_family(cls, family, n_carriers, code_length, chip_duration, weights=None):
        """Carrier ``n`` uses the base code cyclically shifted by ``n`` chips."""
        families = {"p4": p4_code, "zadoff-chu": zadoff_chu_code}
        if family.lower() not in families:
            raise ValueError(f"unknown code family {family!r}; expected one of {sorted(families)}")
        base = families[family.lower()](code_length)
        codes = np.stack([np.roll(base, -n) for n in range(n_carriers)])
        if weights is None:
            weights = np.ones(n_carriers)
        return cls(codes, weights, chip_duration)

    @property
    def n_carriers(self):
        return self.codes.shape[0]

    @property
    def code_length(self):
        return self.codes.shape[1]

    @property
    def pulse_duration(self):
        return self.code_length * self.chip_duration

    @property
    def carrier_spacing(self):
        return 1.0 / self.chip_duration

    @property
    def bandwidth(self):
        return self.n_carriers / self.chip_duration


def p4_code(length):
    """P4 polyphase code, ``phi_l = pi*l^2/L - pi*l``."""
    ell = np.arange(length)
    return np.exp(1j * (np.pi * ell ** 2 / length - np.pi * ell))


def zadoff_chu_code(length, root=1):
    ell = np.arange(length)
    return np.exp(-1j * np.pi * root * ell * (ell + length % 2) / length)


def _multitone(weights, spacing, t):
    # tones centred on DC: offsets (n - (N-1)/2) * spacing
    offsets = np.arange(len(weights)) - (len(weights) - 1) / 2.0
    return np.exp(2j * np.pi * np.outer(t, offsets * spacing)) @ weights


def _pulse_times(duration, fs):
    return np.arange(int(round(duration * fs))) / fs


def ofdm_pulse(weights, duration, fs):
    """Single CP-less OFDM pulse with centred tones spaced ``1/duration``."""
    t = _pulse_times(duration, fs)
    return SampleStream(_multitone(np.asarray(weights, dtype=complex), 1.0 / duration, t), fs)


def mcpc_envelope(cfg: McpcConfig, fs, cp_duration=0.0):
    """Complex envelope of an ``N x L`` MCPC pulse on ``[0, L*Tc)``.

    Chip ``l`` occupies ``[l*Tc, (l+1)*Tc)`` and carries ``sum_n w_n c[n,l]
    exp(2j*pi*(n - (N-1)/2)*t/Tc)``. With ``cp_duration > 0`` a cyclic copy
    of the tail is prepended.
    """
    if fs < 2 * cfg.bandwidth:
        raise ValueError(f"fs={fs:g} undersamples the {cfg.bandwidth:g} Hz MCPC bandwidth")
    t = _pulse_times(cfg.pulse_duration, fs)
    chip = np.minimum((t / cfg.chip_duration + 1e-9).astype(int), cfg.code_length - 1)
    out = np.empty(len(t), dtype=complex)
    for ell in range(cfg.code_length):
        sel = chip == ell
        out[sel] = _multitone(cfg.weights * cfg.codes[:, ell], cfg.carrier_spacing, t[sel])
    n_cp = int(round(cp_duration * fs))
    if n_cp:
        out = np.concatenate([out[len(out) - n_cp:], out])
    return SampleStream(out, fs)


def papr(stream):
    """Peak-to-average power ratio (linear)."""
    s = stream.samples if isinstance(stream, SampleStream) else np.asarray(stream)
    if s.size == 0:
        raise ValueError("empty stream")
    power = np.abs(s) ** 2
    mean = power.mean()
    if mean == 0:
        raise ValueError("all-zero stream")
    return float(power.max() / mean)


def ambiguity_function(stream: SampleStream, delay_grid, doppler_grid):
    """Normalised ambiguity magnitude ``|sum_t s(t) s*(t-tau) exp(2j*pi*nu*t)|``.

    Delays are rounded to whole samples. Returns an array of shape
    ``(len(delay_grid), len(doppler_grid))`` with ``AF(0, 0) = 1``.
    """
    s = stream.samples
    delay_grid = np.atleast_1d(np.asarray(delay_grid, dtype=float))
    doppler_grid = np.atleast_1d(np.asarray(doppler_grid, dtype=float))
    if delay_grid.size == 0 or doppler_grid.size == 0:
        raise ValueError("delay and Doppler grids must be nonempty")
    lags = np.round(delay_grid * stream.fs).astype(int)
    if np.any(np.abs(lags) >= len(s)):
        raise ValueError("delay beyond stream support")
    t = stream.times
    energy = np.vdot(s, s).real
    out = np.empty((lags.size, doppler_grid.size))
    for i, k in enumerate(lags):
        prod = np.zeros(len(s), dtype=complex)
        if k >= 0:
            prod[k:] = s[k:] * np.conj(s[:len(s) - k])
        else:
            prod[:k] = s[:k] * np.conj(s[-k:])
        out[i] = np.abs(np.exp(2j * np.pi * np.outer(doppler_grid, t)) @ prod) / energy
    return out


def autocorrelation(stream: SampleStream):
    """Normalised aperiodic autocorrelation magnitude at lags ``-(L-1)..L-1``.

    Returns ``(lags_s, values)``.
    """
    s = stream.samples
    r = np.correlate(s, s, mode="full")
    lags = np.arange(-(len(s) - 1), len(s)) / stream.fs
    return lags, np.abs(r) / np.abs(r[len(s) - 1])


def mainlobe_width(axis, values, level_db=-3.0):
    """Width of the lobe around the global maximum at ``level_db`` below peak.

    Crossings are linearly interpolated on the magnitude.
    """
    values = np.asarray(values, dtype=float)
    k = int(np.argmax(values))
    level = values[k] * 10.0 ** (level_db / 20.0)

    def crossing(step):
        i = k
        while 0 <= i + step < len(values) and values[i + step] >= level:
            i += step
        j = i + step
        if not 0 <= j < len(values):
            raise ValueError("mainlobe extends past the evaluated axis")
        frac = (values[i] - level) / (values[i] - values[j])
        return axis[i] + frac * (axis[j] - axis[i])

    return float(crossing(1) - crossing(-1))


def occupied_bandwidth(stream: SampleStream, fraction=0.99, nfft=None):
    """Smallest centred band holding ``fraction`` of the stream energy (Hz)."""
    nfft = nfft or 8 * len(stream)
    spec = np.fft.fftshift(np.abs(np.fft.fft(stream.samples, nfft)) ** 2)
    freqs = np.fft.fftshift(np.fft.fftfreq(nfft, 1.0 / stream.fs))
    total = spec.sum()
    order = np.argsort(np.abs(freqs), kind="stable")
    cum = np.cumsum(spec[order])
    idx = int(np.searchsorted(cum, fraction * total))
    return float(2.0 * np.abs(freqs[order[min(idx, len(order) - 1)]]))
