"""Radar and communication observations on the fast-time/slow-time grid.

All radar observations follow

    Y_i = D(df) F_N^H ( sqrt(P) * X * sum_k a_k^i b(tau_k) c(nu_k)^T * (1 a_t(theta_k)^T F) ) + Z_i

with optional per-target ICI (``D(nu_k)`` per term) and multiplicative
self-referenced phase noise. Time-domain synthesis is only used for the PA
model, which acts on sample streams.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import (ArrayConfig, FrameConfig, SyncOffsets, Target, array_steering,
                   cfo_phase_diagonal, freq_steering, rng_from, spawn_rngs, time_steering,
                   to_time_domain)
from .phase_noise import PnModel, self_referenced_phases
from .waveform import SampleStream

IMPAIRMENTS = ("none", "ici_exact", "phase_noise", "both")


class CpViolation(ValueError):
    """Target delays exceed what the cyclic prefix absorbs."""


@dataclass(frozen=True)
class Scenario:
    """Everything needed to synthesise radar and communication frames.

    ``tx_beams`` (Nt x M) and ``rx_comm_beams`` (Nc x M) default to all-ones
    columns, which for single-antenna ends is the identity.
    """

    frame: FrameConfig
    arrays: ArrayConfig
    targets: tuple = ()
    comm_paths: tuple = ()
    mode: str = "monostatic"
    sync: SyncOffsets = field(default_factory=SyncOffsets)
    noise_radar: float = 1.0
    noise_comm: float = 1.0
    tx_beams: np.ndarray = None
    rx_comm_beams: np.ndarray = None

    def __post_init__(self):
        if self.mode not in ("monostatic", "bistatic"):
            raise ValueError(f"mode must be 'monostatic' or 'bistatic', got {self.mode!r}")
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "comm_paths", tuple(self.comm_paths))
        m = self.frame.n_symbols
        if self.tx_beams is None:
            object.__setattr__(self, "tx_beams", np.ones((self.arrays.n_tx, m), dtype=complex))
        if self.rx_comm_beams is None:
            object.__setattr__(self, "rx_comm_beams", np.ones((self.arrays.n_comm, m), dtype=complex))
        if self.tx_beams.shape != (self.arrays.n_tx, m):
            raise ValueError(f"tx_beams must be {self.arrays.n_tx}x{m}")
        if self.rx_comm_beams.shape != (self.arrays.n_comm, m):
            raise ValueError(f"rx_comm_beams must be {self.arrays.n_comm}x{m}")
        if self.mode == "monostatic":
            if not self.sync.is_zero:
                raise ValueError("monostatic mode shares one oscillator: sync offsets must be zero")
            for k, t in enumerate(self.targets):
                if t.aod != t.aoa:
                    raise ValueError(f"targets[{k}]: monostatic mode requires aod == aoa")
        if self.noise_radar < 0 or self.noise_comm < 0:
            raise ValueError("noise powers must be >= 0")

    def replace(self, **changes):
        import dataclasses
        return dataclasses.replace(self, **changes)

    def check_cp(self):
        """Raise :class:`CpViolation` if the CP cannot absorb the echoes."""
        if not self.targets:
            return
        taus = np.array([t.delay for t in self.targets])
        if self.mode == "monostatic":
            spread, what = taus.max(), "round-trip delay"
        else:
            spread, what = taus.max() - taus.min(), "delay spread"
        if spread > self.frame.cp_duration * (1 + 1e-12):
            raise CpViolation(f"{what} {spread:.4g} s exceeds cp_duration {self.frame.cp_duration:.4g} s")


@dataclass
class RadarFrame:
    """Per-RX-antenna ``N x M`` observations, shape ``(Nr, N, M)``."""

    data: np.ndarray
    impairments: tuple = ()
    mode: str = "monostatic"

    @property
    def n_antennas(self):
        return self.data.shape[0]

    def antenna(self, i=0):
        return self.data[i]


def _beam_row(target, scenario):
    a_t = array_steering(target.aod, scenario.arrays.n_tx, scenario.arrays.element_spacing,
                         scenario.arrays.wavelength)
    return a_t @ scenario.tx_beams


def _check_grids(X, P, frame):
    X = np.asarray(X)
    P = np.asarray(P, dtype=float)
    if X.shape != frame.shape or P.shape != frame.shape:
        raise ValueError(f"grid shapes {X.shape}/{P.shape} do not match frame {frame.shape}")
    if np.any(P < 0):
        raise ValueError("negative powers")
    return X, P


def radar_echo(target: Target, X, P, frame: FrameConfig, beam_row=None, ici=False,
               sync: SyncOffsets = None):
    """Noiseless unit-gain echo of one target, ``N x M``, before RX steering.

    With ``ici=True`` the fast-time rotation ``D(nu + cfo)`` is applied to the
    term; otherwise only the CFO rotation ``D(cfo)`` is.
    """
    sync = sync or SyncOffsets()
    n, m = frame.shape
    tau = target.delay + sync.clock_offset
    nu = target.doppler + sync.cfo
    chan = np.outer(freq_steering(tau, n, frame.subcarrier_spacing),
                    time_steering(nu, m, frame.symbol_duration))
    if beam_row is not None:
        chan = chan * beam_row[None, :]
    y = to_time_domain(np.sqrt(P) * X * chan)
    rot = nu if ici else sync.cfo
    if rot != 0.0:
        y = y * cfo_phase_diagonal(rot, n, frame.elementary_duration)[:, None]
    return y


def simulate_radar_frame(scenario: Scenario, X, P, impairments="none", pn_model: PnModel = None,
                         seed=None, check_cp=True, noise=True):
    """Synthesise the radar observation at every RX antenna.

    Parameters
    ----------
    impairments : {"none", "ici_exact", "phase_noise", "both"}
        ``ici_exact`` applies the per-target ``D(nu_k)``; ``phase_noise``
        multiplies each term by its self-referenced PN matrix ``W(tau_k)``
        drawn from one shared oscillator path.
    pn_model : PnModel
        Required for the phase-noise variants.
    seed
        Drives the PN path and the noise (independent child streams).
    check_cp : bool
        Enforce the CP constraint on target delays.
    noise : bool
        Add circular Gaussian noise of variance ``scenario.noise_radar``.
    """
    if impairments not in IMPAIRMENTS:
        raise ValueError(f"impairments must be one of {IMPAIRMENTS}")
    frame = scenario.frame
    X, P = _check_grids(X, P, frame)
    if check_cp:
        scenario.check_cp()
    use_ici = impairments in ("ici_exact", "both")
    use_pn = impairments in ("phase_noise", "both")
    if use_pn and pn_model is None:
        raise ValueError("phase-noise impairment needs a pn_model")
    if use_pn and scenario.mode != "monostatic":
        raise ValueError("self-referenced phase noise is modelled for monostatic sensing only")
    pn_rng, noise_rng = spawn_rngs(seed, 2)
    arrays = scenario.arrays
    n_rx = arrays.n_rx
    out = np.zeros((n_rx,) + frame.shape, dtype=complex)
    if scenario.targets:
        xi = None
        if use_pn:
            xi = self_referenced_phases(pn_model, [t.delay for t in scenario.targets], frame,
                                        pn_rng)
        for k, tgt in enumerate(scenario.targets):
            term = radar_echo(tgt, X, P, frame, _beam_row(tgt, scenario), use_ici, scenario.sync)
            if use_pn:
                term = term * np.exp(1j * xi[k])
            a_r = array_steering(tgt.aoa, n_rx, arrays.element_spacing, arrays.wavelength)
            out += (tgt.gain * a_r)[:, None, None] * term[None]
    if noise and scenario.noise_radar > 0:
        rng = noise_rng
        out += np.sqrt(scenario.noise_radar / 2) * (rng.standard_normal(out.shape)
                                                    + 1j * rng.standard_normal(out.shape))
    applied = () if impairments == "none" else (impairments,)
    return RadarFrame(out, applied, scenario.mode)


def comm_channel_matrix(scenario: Scenario, quasi_static=False):
    """Frequency/time-domain communication channel ``H_c`` (N x M)."""
    frame = scenario.frame
    arrays = scenario.arrays
    n, m = frame.shape
    h = np.zeros((n, m), dtype=complex)
    for path in scenario.comm_paths:
        nu = 0.0 if quasi_static else path.doppler
        a_t = array_steering(path.aod, arrays.n_tx, arrays.element_spacing, arrays.wavelength)
        a_c = array_steering(path.aoa, arrays.n_comm, arrays.element_spacing, arrays.wavelength)
        row = (a_t @ scenario.tx_beams) * (a_c @ scenario.rx_comm_beams)
        h += path.gain * np.outer(freq_steering(path.delay, n, frame.subcarrier_spacing),
                                  time_steering(nu, m, frame.symbol_duration) * row)
    return h


def simulate_comm_frame(scenario: Scenario, X, P, seed=None, quasi_static=False, noise=True):
    """Communication RX observation after synchronisation and CP removal (N x M)."""
    frame = scenario.frame
    X, P = _check_grids(X, P, frame)
    h = comm_channel_matrix(scenario, quasi_static)
    y = to_time_domain(np.sqrt(P) * X * h)
    if scenario.sync.comm_cfo != 0.0:
        y = y * cfo_phase_diagonal(scenario.sync.comm_cfo, frame.n_subcarriers,
                                   frame.elementary_duration)[:, None]
    if noise and scenario.noise_comm > 0:
        rng = rng_from(seed)
        y = y + np.sqrt(scenario.noise_comm / 2) * (rng.standard_normal(y.shape)
                                                    + 1j * rng.standard_normal(y.shape))
    return y


@dataclass(frozen=True)
class SiChannel:
    """Frequency-flat TX-to-RX leakage ``H_SI`` (Nr x Nt), constant over symbols."""

    matrix: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    @property
    def coupling_gain_db(self):
        norm = np.linalg.norm(self.matrix)
        return -np.inf if norm == 0 else 20 * np.log10(norm)


def build_si_channel(arrays: ArrayConfig, coupling_gain_db=-40.0, seed=None, aod=0.0, aoa=0.0):
    """Line-of-sight self-interference channel ``g * a_r(aoa) a_t(aod)^T``.

    ``coupling_gain_db`` sets the Frobenius norm (relative to a unit path
    gain); the common phase is drawn from ``seed``. Defaults (boresight,
    -40 dB) are placeholders, not measured values.
    """
    if np.isneginf(coupling_gain_db):
        return SiChannel(np.zeros((arrays.n_rx, arrays.n_tx), dtype=complex))
    rng = rng_from(seed)
    a_r = array_steering(aoa, arrays.n_rx, arrays.element_spacing, arrays.wavelength)
    a_t = array_steering(aod, arrays.n_tx, arrays.element_spacing, arrays.wavelength)
    h = np.outer(a_r, a_t)
    h *= 10 ** (coupling_gain_db / 20) / np.linalg.norm(h) * np.exp(2j * np.pi * rng.random())
    return SiChannel(h)


def _coupling_matrix(n, rho):
    idx = np.arange(n)
    c = rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    return c.astype(complex)


def build_impaired_mimo_channel(arrays: ArrayConfig, paths, frame: FrameConfig, n=0, m=0,
                                coupling=0.0, cal_gain_std=0.0, cal_phase_std=0.0,
                                spacing_jitter=0.0, seed=None):
    """Radar MIMO channel at subcarrier ``n``, symbol ``m`` with array impairments.

    Returns ``C_R G_R A_R Delta A_T^H G_T^H C_T^H`` where ``C`` are mutual
    coupling matrices with entries ``coupling**|i-j|``, ``G`` diagonal
    calibration errors ``(1 + N(0, gain_std)) * exp(j N(0, phase_std))`` and
    ``A`` steering matrices at element positions ``i*d + N(0, jitter)``.
    """
    for name, v in (("cal_gain_std", cal_gain_std), ("cal_phase_std", cal_phase_std),
                    ("spacing_jitter", spacing_jitter)):
        if v < 0:
            raise ValueError(f"{name} must be >= 0")
    rng = rng_from(seed)
    d, lam = arrays.element_spacing, arrays.wavelength

    def impaired_side(n_elem):
        pos = np.arange(n_elem) * d + spacing_jitter * rng.standard_normal(n_elem)
        gam = (1 + cal_gain_std * rng.standard_normal(n_elem)) * np.exp(
            1j * cal_phase_std * rng.standard_normal(n_elem))
        return pos, np.diag(gam), _coupling_matrix(n_elem, coupling)

    pos_r, g_r, c_r = impaired_side(arrays.n_rx)
    pos_t, g_t, c_t = impaired_side(arrays.n_tx)
    a_r = np.stack([array_steering(p.aoa, arrays.n_rx, d, lam, pos_r) for p in paths], axis=1)
    a_t = np.stack([array_steering(p.aod, arrays.n_tx, d, lam, pos_t) for p in paths], axis=1)
    delta = np.diag([p.gain * np.exp(-2j * np.pi * n * frame.subcarrier_spacing * p.delay)
                     * np.exp(2j * np.pi * m * frame.symbol_duration * p.doppler) for p in paths])
    return c_r @ g_r @ a_r @ delta @ a_t.conj().T @ g_t.conj().T @ c_t.conj().T


def clean_mimo_channel(arrays: ArrayConfig, paths, frame: FrameConfig, n=0, m=0):
    """``A_R Delta A_T^H`` without impairments."""
    return build_impaired_mimo_channel(arrays, paths, frame, n, m)


@dataclass(frozen=True)
class MemoryPolynomial:
    """Memory-polynomial PA model.

    ``coeffs[i, j]`` multiplies ``x(n-j) |x(n-j)|^(p_i - 1)`` with
    ``p_i = 2*i + 1`` (odd orders only).
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if c.size == 0:
            raise ValueError("need at least one coefficient")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0]]))

    @property
    def orders(self):
        return 2 * np.arange(self.coeffs.shape[0]) + 1

    @property
    def memory(self):
        return self.coeffs.shape[1] - 1


def apply_pa(stream, model: MemoryPolynomial):
    """Pass samples through the memory polynomial (zero history)."""
    x = stream.samples if isinstance(stream, SampleStream) else np.asarray(stream, dtype=complex)
    y = np.zeros(len(x), dtype=complex)
    env = np.abs(x)
    for i, p in enumerate(model.orders):
        basis = x * env ** (p - 1) if p > 1 else x
        for j in range(model.coeffs.shape[1]):
            a = model.coeffs[i, j]
            if a == 0:
                continue
            if j == 0:
                y += a * basis if a != 1 else basis
            else:
                y[j:] += a * basis[:-j] if a != 1 else basis[:-j]
    if isinstance(stream, SampleStream):
        return SampleStream(y, stream.fs)
    return y
