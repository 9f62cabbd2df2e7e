"""Closed-form sensing and communication KPIs. Rates and MI values are in bits (log base 2)."""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import SPEED_OF_LIGHT, ArrayConfig, FrameConfig
from .radar_rx import theoretical_pd


@dataclass
class KpiReport:
    crb_range: float = 0.0
    crb_velocity: float = 0.0
    crb_angle: float = 0.0
    res_range: float = 0.0
    res_velocity: float = 0.0
    res_angle: float = 0.0
    pd: float = 0.0
    rate: float = 0.0
    mi_sensing: float = 0.0
    mi_comm: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be >= 0")

    def to_json(self, path=None):
        d = {k: (None if not np.isfinite(v) else float(v)) for k, v in asdict(self).items()}
        text = json.dumps(d, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def apertures(config: FrameConfig, arrays: ArrayConfig = None):
    """Effective bandwidth, duration and array size ``(B, Ttot, D)``."""
    n, m = config.shape
    B = config.subcarrier_spacing * np.sqrt(n ** 2 - 1.0)
    T_tot = config.symbol_duration * np.sqrt(m ** 2 - 1.0)
    D = arrays.aperture if arrays is not None else 0.0
    return B, T_tot, D


def crb_bounds(gamma, config: FrameConfig, arrays: ArrayConfig = None, angle=0.0):
    """Single-target CRBs on range (m^2), velocity ((m/s)^2) and angle (rad^2).

    Valid for unit-amplitude symbols with uniform power; ``gamma`` is the
    integrated linear SNR. A degenerate aperture (N, M or Nr equal to 1) gives
    an infinite bound.

    Raises
    ------
    ValueError
        If ``gamma <= 0`` or the angle is at endfire.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    cos2 = np.cos(angle) ** 2
    if cos2 < 1e-30:
        raise ValueError("angle bound is singular at endfire (cos(angle) = 0)")
    c = SPEED_OF_LIGHT
    B, T_tot, D = apertures(config, arrays)
    lam = config.wavelength

    def safe(num, den):
        return np.inf if den == 0 else num / den

    crb_r = safe(3 * c ** 2, 8 * gamma * np.pi ** 2 * B ** 2)
    crb_v = safe(3 * c ** 2, 8 * gamma * np.pi ** 2 * config.carrier_freq ** 2 * T_tot ** 2)
    crb_a = safe(3 * lam ** 2, 2 * gamma * np.pi ** 2 * D ** 2 * cos2)
    return float(crb_r), float(crb_v), float(crb_a)


def resolutions(config: FrameConfig, arrays: ArrayConfig = None):
    """Range (m), velocity (m/s) and angle (rad) resolution."""
    B, T_tot, D = apertures(config, arrays)
    lam = config.wavelength
    res_a = np.inf if D == 0 else 0.89 * lam / D
    res_v = np.inf if T_tot == 0 else lam / (2 * T_tot)
    return float(SPEED_OF_LIGHT / (2 * B)) if B > 0 else np.inf, float(res_v), float(res_a)


def achievable_rate(H, P, sigma2):
    """``sum log2(1 + P |H|^2 / sigma2)`` over all cells."""
    H = np.asarray(H)
    P = np.asarray(P, dtype=float)
    if H.shape != P.shape:
        raise ValueError(f"shape mismatch {H.shape} vs {P.shape}")
    if np.any(P < 0):
        raise ValueError("negative power entries")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    return float(np.sum(np.log2(1.0 + P * np.abs(H) ** 2 / sigma2)))


def mi_reward(assignment, powers, sinr_gains):
    """Sensing and communication MI rewards ``(M_s, M_u)``.

    Parameters
    ----------
    assignment : sequence of {"s", "u"}
        Receiver served by each subcarrier.
    powers : array_like
        Per-subcarrier power.
    sinr_gains : array_like, shape (2, N) or mapping
        Rows (or keys ``"s"``/``"u"``) give ``q_{i,n}``.
    """
    w = np.asarray(assignment)
    p = np.asarray(powers, dtype=float)
    if isinstance(sinr_gains, dict):
        q_s, q_u = np.asarray(sinr_gains["s"], float), np.asarray(sinr_gains["u"], float)
    else:
        q_s, q_u = np.asarray(sinr_gains, dtype=float)
    if not (len(w) == len(p) == len(q_s) == len(q_u)):
        raise ValueError("assignment, powers and gains must have equal length")
    bad = ~np.isin(w, ["s", "u"])
    if np.any(bad):
        raise ValueError("assignment entries must be 's' or 'u'")
    m_s = np.sum(np.where(w == "s", np.log2(1.0 + q_s * p), 0.0))
    m_u = np.sum(np.where(w == "u", np.log2(1.0 + q_u * p), 0.0))
    return float(m_s), float(m_u)


def kpi_report(gamma, config: FrameConfig, arrays: ArrayConfig = None, angle=0.0, pfa=1e-3,
               rate=0.0, mi=(0.0, 0.0)):
    """Bundle bounds, resolutions and Pd for one operating point."""
    crb = crb_bounds(gamma, config, arrays, angle)
    res = resolutions(config, arrays)
    return KpiReport(*crb, *res, pd=theoretical_pd(gamma, pfa), rate=rate,
                     mi_sensing=mi[0], mi_comm=mi[1])
