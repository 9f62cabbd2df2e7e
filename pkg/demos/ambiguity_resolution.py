"""
Turning impairments into information
====================================

Two ambiguity problems and the impairments that break them.

*Velocity.* Slow-time processing aliases velocities beyond
``lambda/(2 Tsym)``. The fast-time ICI ramp samples the Doppler N times
faster, so trying each alias and keeping the one whose de-rotation gives
the sharpest peak picks the true velocity.

*Range.* Beyond ``c/(2 df)`` the range wraps. The self-referenced PN
covariance depends on the true delay, so matching the measured covariance
against the model for every alias picks the true range interval.
"""

from pathlib import Path

import numpy as np

from mcisac.channel import simulate_radar_frame
from mcisac.core import SPEED_OF_LIGHT
from mcisac.enhance import ici_velocity_disambiguate, pn_range_disambiguate
from mcisac.radar_rx import range_doppler_map
from mcisac.scenario import build_setup, load_config

root = Path(__file__).resolve().parents[1] / "scenarios"
rng = np.random.default_rng(2)

#############################################################################
# Velocity: a target at 1.7 unambiguous spans.

cfg = load_config(root / "ici_exploit.yaml")
f = build_setup(cfg, rng).frame
v_amb = f.wavelength / (2 * f.symbol_duration)
v_true = 1.7 * v_amb
setup = build_setup(cfg, rng, targets=[{**cfg["targets"][0], "velocity": v_true}])
frame = simulate_radar_frame(setup.scenario, setup.X, setup.P, "ici_exact", seed=rng)
rd = range_doppler_map(frame, setup.X, setup.P, f)
coarse = rd.velocities[rd.peak()[1]]
res = ici_velocity_disambiguate(frame, setup.X, setup.P, f, coarse, 3)
print(f"v_amb {v_amb:.1f} m/s, true {v_true:.1f}, slow-time estimate {coarse:.1f}, resolved {res.value:.1f}")
for v, s in zip(res.candidates, res.scores / res.scores.max()):
    print(f"  {v:8.1f} m/s  {10 * np.log10(s):6.2f} dB")

#############################################################################
# Range: a target one ambiguity interval out.

cfg = load_config(root / "pn_exploit.yaml")
t0 = cfg["targets"][0]
f = build_setup(cfg, rng).frame
r_amb = SPEED_OF_LIGHT / (2 * f.subcarrier_spacing)
setup = build_setup(cfg, rng, targets=[{**t0, "range": t0["range"] + r_amb}])
frame = simulate_radar_frame(setup.scenario, setup.X, setup.P, "phase_noise", setup.pn_model, seed=rng,
                             check_cp=False)
res = pn_range_disambiguate(frame, setup.X, setup.P, f, setup.pn_model, t0["range"], 3, sigma2=1.0)
print(f"\nr_amb {r_amb:.0f} m, true {t0['range'] + r_amb:.0f} m, resolved {res.value:.0f} m")
for r, c in zip(res.candidates, res.scores):
    print(f"  {r:8.0f} m  cost {c:.4f}")
