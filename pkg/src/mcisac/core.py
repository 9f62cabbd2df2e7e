"""Shared domain types and steering/phase primitives.

Conventions used throughout the package:

* Angles are measured from array broadside; element ``i`` of a steering
  vector carries the phase ``2*pi*p_i*sin(angle)/wavelength``.
* Time-domain frames are ``N x M`` arrays indexed ``[fast_time, slow_time]``
  (sample within an OFDM symbol, symbol index).
* The unitary DFT matrix has entries ``exp(-2j*pi*n*l/N)/sqrt(N)``.
* Everything is complex128 / float64.
"""

from dataclasses import dataclass

import numpy as np

# Propagation speed. 3e8 rather than the exact value: the mobility and
# ambiguity figures quoted for the reproduced scenarios are computed with it.
SPEED_OF_LIGHT = 3e8


@dataclass(frozen=True)
class FrameConfig:
    """OFDM numerology of one frame.

    Attributes
    ----------
    n_subcarriers : int
        Number of subcarriers ``N``.
    n_symbols : int
        Number of OFDM symbols ``M``.
    subcarrier_spacing : float
        Subcarrier spacing in Hz.
    cp_duration : float
        Cyclic prefix duration in s.
    carrier_freq : float
        Carrier frequency in Hz.
    total_power : float
        Sum of all per-cell powers ``P[n, m]`` in W.
    """

    n_subcarriers: int
    n_symbols: int
    subcarrier_spacing: float
    cp_duration: float
    carrier_freq: float
    total_power: float = 1.0

    def __post_init__(self):
        if int(self.n_subcarriers) < 1 or int(self.n_symbols) < 1:
            raise ValueError("n_subcarriers and n_symbols must be >= 1")
        if self.subcarrier_spacing <= 0 or self.carrier_freq <= 0 or self.total_power <= 0:
            raise ValueError("subcarrier_spacing, carrier_freq and total_power must be > 0")
        if self.cp_duration < 0:
            raise ValueError("cp_duration must be >= 0")

    @classmethod
    def with_cp_fraction(cls, n_subcarriers, n_symbols, subcarrier_spacing, carrier_freq,
                         cp_fraction=0.07, total_power=None):
        """Build a config whose CP lasts ``cp_fraction / subcarrier_spacing``.

        ``total_power`` defaults to ``N*M`` so that every cell carries unit power.
        """
        if total_power is None:
            total_power = float(n_subcarriers * n_symbols)
        return cls(n_subcarriers, n_symbols, subcarrier_spacing,
                   cp_fraction / subcarrier_spacing, carrier_freq, total_power)

    @property
    def elementary_duration(self):
        """``T = 1/subcarrier_spacing``."""
        return 1.0 / self.subcarrier_spacing

    @property
    def symbol_duration(self):
        """``Tsym = Tcp + T``."""
        return self.cp_duration + self.elementary_duration

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def bandwidth(self):
        """Occupied bandwidth ``N * subcarrier_spacing``."""
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def sample_rate(self):
        return self.bandwidth

    @property
    def shape(self):
        return (self.n_subcarriers, self.n_symbols)

    def sample_times(self):
        """Fast/slow-time sampling instants ``m*Tsym + Tcp + l*T/N``, shape ``(N, M)``."""
        n, m = self.shape
        ell = np.arange(n)[:, None] * (self.elementary_duration / n)
        sym = np.arange(m)[None, :] * self.symbol_duration
        return sym + self.cp_duration + ell

    def range_to_delay(self, r):
        return 2.0 * np.asarray(r, dtype=float) / SPEED_OF_LIGHT

    def delay_to_range(self, tau):
        return SPEED_OF_LIGHT * np.asarray(tau, dtype=float) / 2.0

    def velocity_to_doppler(self, v):
        return 2.0 * np.asarray(v, dtype=float) / self.wavelength

    def doppler_to_velocity(self, nu):
        return self.wavelength * np.asarray(nu, dtype=float) / 2.0


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear arrays at the ISAC TX, radar RX and communication RX."""

    n_tx: int = 1
    n_rx: int = 1
    n_comm: int = 1
    element_spacing: float = 0.0
    wavelength: float = 1.0

    def __post_init__(self):
        if min(self.n_tx, self.n_rx, self.n_comm) < 1:
            raise ValueError("array sizes must be >= 1")
        if self.element_spacing <= 0:
            raise ValueError("element_spacing must be > 0")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be > 0")

    @classmethod
    def half_wavelength(cls, wavelength, n_tx=1, n_rx=1, n_comm=1):
        return cls(n_tx, n_rx, n_comm, wavelength / 2.0, wavelength)

    @property
    def aperture(self):
        """Effective RX aperture ``d*sqrt(Nr^2 - 1)``."""
        return self.element_spacing * np.sqrt(self.n_rx ** 2 - 1.0)


@dataclass(frozen=True)
class Target:
    """Point scatterer (or communication path).

    ``delay`` in s, ``doppler`` in Hz, ``aod``/``aoa`` in rad, ``gain`` complex.
    """

    delay: float
    doppler: float = 0.0
    aod: float = 0.0
    aoa: float = 0.0
    gain: complex = 1.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be >= 0")

    @classmethod
    def monostatic(cls, range_m, velocity, config, angle=0.0, gain=1.0):
        """Target from range/radial velocity, with AoD = AoA = ``angle``."""
        return cls(float(config.range_to_delay(range_m)),
                   float(config.velocity_to_doppler(velocity)),
                   angle, angle, complex(gain))


@dataclass(frozen=True)
class SyncOffsets:
    """TX/RX synchronisation errors; all zero for a shared oscillator."""

    cfo: float = 0.0
    clock_offset: float = 0.0
    comm_cfo: float = 0.0

    @property
    def is_zero(self):
        return self.cfo == 0.0 and self.clock_offset == 0.0 and self.comm_cfo == 0.0


def freq_steering(tau, n_subcarriers, subcarrier_spacing):
    """Frequency-domain steering vector ``exp(-2j*pi*n*df*tau)``, n = 0..N-1."""
    n = np.arange(n_subcarriers)
    return np.exp(-2j * np.pi * n * subcarrier_spacing * tau)


def time_steering(nu, n_symbols, symbol_duration):
    """Slow-time steering vector ``exp(2j*pi*m*Tsym*nu)``, m = 0..M-1."""
    m = np.arange(n_symbols)
    return np.exp(2j * np.pi * m * symbol_duration * nu)


def array_steering(angle, n_elem, spacing, wavelength, positions=None):
    """ULA steering vector, optionally with perturbed element positions (m)."""
    if positions is None:
        positions = np.arange(n_elem) * spacing
    else:
        positions = np.asarray(positions, dtype=float)
        if positions.shape != (n_elem,):
            raise ValueError(f"expected {n_elem} element positions, got {positions.shape}")
    return np.exp(2j * np.pi * positions * np.sin(angle) / wavelength)


def cfo_phase_diagonal(nu, n_subcarriers, elementary_duration):
    """Diagonal of the fast-time rotation ``D(nu)``: ``exp(2j*pi*T*l*nu/N)``."""
    ell = np.arange(n_subcarriers)
    return np.exp(2j * np.pi * elementary_duration * ell * nu / n_subcarriers)


def cfo_phase_matrix(nu, n_subcarriers, elementary_duration):
    """CFO/Doppler induced fast-time phase rotation matrix ``D(nu)`` (N x N)."""
    return np.diag(cfo_phase_diagonal(nu, n_subcarriers, elementary_duration))


def dft_matrix(n):
    """Unitary DFT matrix, ``[F]_{l,n} = exp(-2j*pi*n*l/N)/sqrt(N)``."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def to_time_domain(freq_grid):
    """Apply ``F_N^H`` along the subcarrier axis (axis 0)."""
    n = freq_grid.shape[0]
    return np.fft.ifft(freq_grid, axis=0) * np.sqrt(n)


def to_freq_domain(time_grid):
    """Apply ``F_N`` along the fast-time axis (axis 0)."""
    n = time_grid.shape[0]
    return np.fft.fft(time_grid, axis=0) / np.sqrt(n)


def max_phase_excursion(velocity, carrier_freq, subcarrier_spacing, c=SPEED_OF_LIGHT):
    """Largest fast-time phase excursion of ``D(nu)`` for a monostatic target.

    ``2*pi*T*nu = 4*pi*v*fc/(c*df)``.
    """
    return 4.0 * np.pi * velocity * carrier_freq / (c * subcarrier_spacing)


def db2lin(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(x)


def rng_from(seed):
    """Accept an int, SeedSequence or Generator and return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_rngs(seed, n):
    """``n`` independent generators derived from an int, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed.spawn(n)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seed.spawn(n)]
