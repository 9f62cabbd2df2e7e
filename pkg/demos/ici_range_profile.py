"""
Range profiles under inter-carrier interference
===============================================

A strong reflector at 30 m and two weak ones at 120 and 160 m, all moving
at the same radial speed. At rest the weak targets stand clear of the floor;
at 80 m/s the fast-time Doppler ramp leaks energy across subcarriers and the
floor around the strong target rises by tens of dB.
"""

from pathlib import Path

import numpy as np

from mcisac.channel import simulate_radar_frame
from mcisac.core import max_phase_excursion
from mcisac.enhance import ici_doppler_grid, ici_joint_estimate
from mcisac.radar_rx import iterative_target_extraction, range_doppler_map
from mcisac.scenario import build_setup, load_config

cfg = load_config(Path(__file__).resolve().parents[1] / "scenarios" / "ici_impact.yaml")
rng = np.random.default_rng(0)

#############################################################################
# How strong is the ICI? The maximum phase excursion over one symbol tells.

print("max phase excursion at 80 m/s: %.3f rad" % max_phase_excursion(80, 28e9, 60e3))

#############################################################################
# Simulate the frame at 0 and 80 m/s and look at the range cut through the
# strongest Doppler bin.

for v in (0.0, 80.0):
    setup = build_setup(cfg, rng, targets=[{**t, "velocity": v} for t in cfg["targets"]])
    f, pr = setup.frame, setup.processing
    frame = simulate_radar_frame(setup.scenario, setup.X, setup.P, "ici_exact", seed=rng)
    rd = range_doppler_map(frame, setup.X, setup.P, f, pr["pad_n"], pr["pad_m"], pr["window"])
    k, q = rd.peak()
    col = 20 * np.log10(rd.magnitude[:, q] / rd.magnitude[k, q])
    print(f"\nv = {v:g} m/s: floor {np.median(col[::rd.pad_n]):.1f} dB below the peak")
    for r in (120, 160):
        i = int(round(r / rd.range_bin))
        print(f"  {r} m: {col[i - 4:i + 5].max():6.1f} dB")

    # plain extraction estimates the disturbance from the map itself
    base = iterative_target_extraction(frame, setup.X, setup.P, f, pr["k_max"], pfa=pr["pfa"])
    print("  plain extraction   :", np.round(np.sort(base.ranges), 1))

    # the joint search also tries fast-time Doppler rotations
    joint = ici_joint_estimate(frame, setup.X, setup.P, f, ici_doppler_grid(f, 100), pr["k_max"], pfa=pr["pfa"])
    print("  ICI-aware extraction:", np.round(np.sort(joint.ranges), 1))
