"""Named batch experiments behind ``mcisac run``.

Each experiment takes a validated scenario config, a seed, an output directory
and a thread count, writes plot-ready CSV files and returns a JSON-able
summary. Trials draw from ``SeedSequence(seed).spawn(trials)``, so results do
not depend on the thread count.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import alloc, kpi
from .channel import simulate_radar_frame
from .core import SPEED_OF_LIGHT, Target
from .enhance import (ici_doppler_grid, ici_joint_estimate, ici_velocity_disambiguate, pn_compensate,
                      pn_range_disambiguate)
from .radar_rx import (glrt_statistic, glrt_threshold, iterative_target_extraction, range_doppler_map,
                       refine_peak, matched_grid, theoretical_pd)
from .scenario import ScenarioError, build_setup
from .waveform import McpcConfig, ambiguity_function, autocorrelation, mainlobe_width, mcpc_envelope, papr

EXPERIMENTS = {}


def experiment(name):
    def register(fn):
        EXPERIMENTS[name] = fn
        return fn
    return register


def trial_rngs(seed, n):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def parallel_map(fn, items, threads=1):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return Path(path).name


def _opts(cfg, **defaults):
    opts = dict(defaults)
    extra = cfg.get("experiment", {})
    unknown = set(extra) - set(defaults)
    if unknown:
        raise ScenarioError(f"experiment: unknown option(s) {sorted(unknown)}; "
                            f"allowed {sorted(defaults)}")
    opts.update(extra)
    return opts


def _simulate(setup, rng, **kw):
    args = dict(impairments=setup.impairments, pn_model=setup.pn_model, check_cp=setup.check_cp)
    args.update(kw)
    return simulate_radar_frame(setup.scenario, setup.X, setup.P, seed=rng, **args)


def _db(x, ref):
    return 20 * np.log10(np.maximum(x, 1e-300) / ref)


def _write_kpi(out, setup):
    scen = setup.scenario
    f = scen.frame
    if scen.targets and scen.noise_radar > 0:
        t = max(scen.targets, key=lambda t: abs(t.gain))
        gamma = abs(t.gain) ** 2 * setup.P.sum() / scen.noise_radar
        angle = t.aoa
    else:
        gamma, angle = 1.0, 0.0
    rep = kpi.kpi_report(gamma, f, scen.arrays, angle, setup.processing["pfa"])
    rep.to_json(Path(out) / "kpi.json")
    return "kpi.json"


def _profile_rows(rd, ref, q=None):
    q = rd.peak()[1] if q is None else q
    return [(r, m) for r, m in zip(rd.ranges, _db(rd.magnitude[:, q], ref))]


def _floor_db(rd, ref):
    q = rd.peak()[1]
    return float(10 * np.log10(np.median(rd.power[::rd.pad_n, q])) - 20 * np.log10(ref))


@experiment("range-profile")
def range_profile(cfg, seed, out, threads=1):
    """Single frame: RD map, range cut at the strongest Doppler bin, detections."""
    _opts(cfg)
    rng = trial_rngs(seed, 1)[0]
    setup = build_setup(cfg, rng)
    f, pr = setup.frame, setup.processing
    frame = _simulate(setup, rng)
    rd = range_doppler_map(frame, setup.X, setup.P, f, pr["pad_n"], pr["pad_m"], pr["window"])
    rd.to_csv(Path(out) / "rd_map.csv")
    ref = rd.magnitude.max() or 1.0
    files = ["rd_map.csv", write_csv(Path(out) / "range_profile.csv", ["range_m", "magnitude_db"],
                                     _profile_rows(rd, ref))]
    rep = iterative_target_extraction(frame, setup.X, setup.P, f, pr["k_max"],
                                      sigma2=setup.scenario.noise_radar or None, pfa=pr["pfa"])
    rows = [(d.range, d.velocity, 20 * np.log10(max(abs(d.amplitude), 1e-300)), d.statistic) for d in rep]
    files.append(write_csv(Path(out) / "detections.csv",
                           ["range_m", "velocity_mps", "amplitude_db", "statistic"], rows))
    files.append(_write_kpi(out, setup))
    return files, {"detected_ranges_m": [round(d.range, 4) for d in rep], "threshold": rep.threshold}


def _with_velocity(cfg, v):
    return [{**t, "velocity": v} for t in cfg.get("targets", [])]


@experiment("ici-impact")
def ici_impact(cfg, seed, out, threads=1):
    """Range profiles with and without ICI, plus baseline vs ICI-aware extraction."""
    opts = _opts(cfg, velocities=[0.0, 80.0], trials=1, v_max=None)
    files, summary = [], {}
    for v in opts["velocities"]:
        rngs = trial_rngs(seed, opts["trials"])

        def trial(rng):
            setup = build_setup(cfg, rng, targets=_with_velocity(cfg, v))
            f, pr = setup.frame, setup.processing
            frame = _simulate(setup, rng, impairments="ici_exact")
            rd = range_doppler_map(frame, setup.X, setup.P, f, pr["pad_n"], pr["pad_m"], pr["window"])
            base = iterative_target_extraction(frame, setup.X, setup.P, f, pr["k_max"], sigma2=None,
                                               pfa=pr["pfa"])
            grid = ici_doppler_grid(f, opts["v_max"] or max(abs(v) * 1.25, 1.0))
            joint = ici_joint_estimate(frame, setup.X, setup.P, f, grid, pr["k_max"], sigma2=None,
                                       pfa=pr["pfa"])
            return rd, base, joint, setup

        results = parallel_map(trial, rngs, threads)
        rd, _, _, setup = results[0]
        ref = rd.magnitude.max()
        name = f"range_profile_v{v:g}.csv"
        files.append(write_csv(Path(out) / name, ["range_m", "magnitude_db"], _profile_rows(rd, ref)))
        summary[f"v={v:g}"] = {
            "floor_db_re_peak": [_floor_db(r[0], r[0].magnitude.max()) for r in results],
            "baseline_ranges_m": [sorted(round(d.range, 3) for d in r[1]) for r in results],
            "ici_joint_ranges_m": [sorted(round(d.range, 3) for d in r[2]) for r in results],
        }
    files.append(_write_kpi(out, setup))
    return files, summary


@experiment("pn-impact")
def pn_impact(cfg, seed, out, threads=1):
    """Range profiles without PN, with PN and after PN compensation."""
    opts = _opts(cfg, n_iters=3)
    rng = trial_rngs(seed, 1)[0]
    setup = build_setup(cfg, rng)
    if setup.pn_model is None:
        raise ScenarioError("phase_noise: required for pn-impact")
    f, pr = setup.frame, setup.processing
    noise_seed = int(rng.integers(2 ** 63))
    clean = _simulate(setup, noise_seed, impairments="none")
    noisy = _simulate(setup, noise_seed, impairments="phase_noise")
    comp, _ = pn_compensate(noisy, setup.X, setup.P, f, setup.pn_model, opts["n_iters"],
                            sigma2=setup.scenario.noise_radar)
    maps = [range_doppler_map(y, setup.X, setup.P, f, pr["pad_n"], pr["pad_m"], pr["window"])
            for y in (clean, noisy, comp)]
    ref = maps[0].magnitude.max()
    q = maps[0].peak()[1]
    cols = [_db(m.magnitude[:, q], ref) for m in maps]
    rows = zip(maps[0].ranges, *cols)
    files = [write_csv(Path(out) / "pn_profiles.csv",
                       ["range_m", "no_pn_db", "pn_db", "compensated_db"], rows),
             _write_kpi(out, setup)]
    summary = {k: _floor_db(m, ref) for k, m in zip(("floor_no_pn_db", "floor_pn_db", "floor_compensated_db"),
                                                     maps)}
    return files, summary


@experiment("ici-exploit")
def ici_exploit(cfg, seed, out, threads=1):
    """Doppler ambiguity resolution from the fast-time ICI ramp over many trials."""
    opts = _opts(cfg, trials=100, velocity_factor=1.7, ambiguity_span=3)
    rngs = trial_rngs(seed, opts["trials"])

    def trial(rng):
        setup = build_setup(cfg, rng)
        f, pr = setup.frame, setup.processing
        v_amb = f.wavelength / (2 * f.symbol_duration)
        v_true = opts["velocity_factor"] * v_amb
        setup = build_setup(cfg, rng, targets=_with_velocity(cfg, v_true)[:1])
        frame = _simulate(setup, rng, impairments="ici_exact")
        rd = range_doppler_map(frame, setup.X, setup.P, f, pr["pad_n"], pr["pad_m"])
        coarse = float(rd.velocities[rd.peak()[1]])
        res = ici_velocity_disambiguate(frame, setup.X, setup.P, f, coarse, opts["ambiguity_span"])
        q_true = int(np.round((v_true - coarse) / v_amb))
        return coarse, res, v_true, q_true, v_amb

    results = parallel_map(trial, rngs, threads)
    rows = [(i, c, r.value, vt, r.index, qt, abs(r.value - vt) < va / 2)
            for i, (c, r, vt, qt, va) in enumerate(results)]
    files = [write_csv(Path(out) / "ici_exploit_trials.csv",
                       ["trial", "coarse_velocity_mps", "estimated_velocity_mps", "true_velocity_mps",
                        "chosen_index", "true_index", "correct"], rows)]
    r0 = results[0][1]
    files.append(write_csv(Path(out) / "ici_exploit_scores.csv", ["candidate_velocity_mps", "score_db"],
                           zip(r0.candidates, 10 * np.log10(r0.scores / r0.scores.max()))))
    setup = build_setup(cfg, trial_rngs(seed, 1)[0])
    files.append(_write_kpi(out, setup))
    return files, {"success_rate": float(np.mean([r[-1] for r in rows])), "trials": len(rows)}


@experiment("pn-exploit")
def pn_exploit(cfg, seed, out, threads=1):
    """Range ambiguity resolution by PN covariance matching over many trials.

    Strong PN smears the echo along Doppler, so the phase fit uses the
    scenario's nominal target velocity rather than the map peak.
    """
    opts = _opts(cfg, trials=100, interval=1, ambiguity_span=3)
    rngs = trial_rngs(seed, opts["trials"])
    if not cfg.get("targets"):
        raise ScenarioError("targets: pn-exploit needs one target")

    def trial(rng):
        setup0 = build_setup(cfg, rng)
        f, pr = setup0.frame, setup0.processing
        r_amb = SPEED_OF_LIGHT / (2 * f.subcarrier_spacing)
        t0 = cfg["targets"][0]
        r_true = t0["range"] + opts["interval"] * r_amb
        setup = build_setup(cfg, rng, targets=[{**t0, "range": r_true}])
        if setup.pn_model is None:
            raise ScenarioError("phase_noise: required for pn-exploit")
        frame = _simulate(setup, rng, impairments="phase_noise", check_cp=False)
        rep = iterative_target_extraction(frame, setup.X, setup.P, f, 1,
                                          sigma2=setup.scenario.noise_radar or None, pfa=pr["pfa"])
        if not rep.detections:
            return None
        det = rep.detections[0]
        res = pn_range_disambiguate(frame, setup.X, setup.P, f, setup.pn_model, det.range,
                                    opts["ambiguity_span"], sigma2=setup.scenario.noise_radar or None,
                                    coarse_doppler=setup.scenario.targets[0].doppler)
        return det.range, res, r_true, r_amb

    results = parallel_map(trial, rngs, threads)
    rows = []
    for i, r in enumerate(results):
        if r is None:
            rows.append((i, np.nan, np.nan, np.nan, -1, opts["interval"], False))
            continue
        coarse, res, r_true, r_amb = r
        rows.append((i, coarse, res.value, r_true, res.index, opts["interval"],
                     abs(res.value - r_true) < r_amb / 2))
    files = [write_csv(Path(out) / "pn_exploit_trials.csv",
                       ["trial", "coarse_range_m", "estimated_range_m", "true_range_m", "chosen_index",
                        "true_index", "correct"], rows)]
    first = next((r for r in results if r is not None), None)
    if first is not None:
        files.append(write_csv(Path(out) / "pn_exploit_costs.csv", ["candidate_range_m", "cost"],
                               zip(first[1].candidates, first[1].scores)))
    files.append(_write_kpi(out, build_setup(cfg, trial_rngs(seed, 1)[0])))
    return files, {"success_rate": float(np.mean([r[-1] for r in rows])), "trials": len(rows)}


def detection_trials(cfg, seed, snr_db, trials, pfa, threads=1, noise_only=False):
    """Per-cell detection outcomes at an on-grid target, or max-over-map false alarms.

    ``snr_db`` is the integrated SNR ``|alpha|^2 sum(P) / s2``.
    """
    rngs = trial_rngs(seed, trials)

    def trial(rng):
        setup = build_setup(cfg, rng, targets=[])
        f = setup.frame
        s2 = setup.scenario.noise_radar
        if noise_only:
            frame = _simulate(setup, rng, impairments="none")
            rd = range_doppler_map(frame, setup.X, setup.P, f, 1, 1)
            stat = glrt_statistic(rd, s2)
            return stat.max() >= glrt_threshold(pfa, f.n_subcarriers * f.n_symbols, 1)
        amp = np.sqrt(10 ** (snr_db / 10) * s2 / setup.P.sum())
        k0, q0 = max(1, int(f.cp_duration * f.bandwidth) // 2), 0
        tgt = Target(k0 / f.bandwidth, 0.0, gain=amp * np.exp(2j * np.pi * rng.random()))
        frame = simulate_radar_frame(setup.scenario.replace(targets=(tgt,)), setup.X, setup.P, seed=rng)
        rd = range_doppler_map(frame, setup.X, setup.P, f, 1, 1)
        q = q0 + f.n_symbols // 2
        return glrt_statistic(rd, s2)[k0, q] >= glrt_threshold(pfa, 1, 1)

    return np.array(parallel_map(trial, rngs, threads))


@experiment("detection-roc")
def detection_roc(cfg, seed, out, threads=1):
    """Empirical vs Marcum-Q detection probability and the frame false-alarm rate."""
    opts = _opts(cfg, snr_db=[0.0, 5.0, 10.0, 13.0, 16.0], trials=2000, pfa=1e-2, fa_trials=2000,
                 fa_pfa=0.05)
    seeds = np.random.SeedSequence(seed).spawn(len(opts["snr_db"]) + 1)
    rows = []
    for s, snr in zip(seeds, opts["snr_db"]):
        hits = detection_trials(cfg, s, snr, opts["trials"], opts["pfa"], threads)
        rows.append((snr, hits.mean(), theoretical_pd(10 ** (snr / 10), opts["pfa"]), opts["pfa"]))
    fa = detection_trials(cfg, seeds[-1], 0.0, opts["fa_trials"], opts["fa_pfa"], threads, noise_only=True)
    files = [write_csv(Path(out) / "roc.csv", ["snr_db", "pd_empirical", "pd_theory", "pfa"], rows)]
    files.append(_write_kpi(out, build_setup(cfg, trial_rngs(seed, 1)[0])))
    return files, {"false_alarm_rate": float(fa.mean()), "fa_design": opts["fa_pfa"]}


def ml_range_errors(cfg, seed, snr_db, trials, threads=1):
    """Range errors of the padded-peak + continuous refinement ML estimator."""
    rngs = trial_rngs(seed, trials)

    def trial(rng):
        setup = build_setup(cfg, rng, targets=[])
        f = setup.frame
        s2 = setup.scenario.noise_radar
        amp = np.sqrt(10 ** (snr_db / 10) * s2 / setup.P.sum())
        r_true = (0.2 + 0.5 * rng.random()) * SPEED_OF_LIGHT / (2 * f.subcarrier_spacing)
        r_true = min(r_true, 0.95 * float(f.delay_to_range(f.cp_duration))) if setup.check_cp else r_true
        tgt = Target(float(f.range_to_delay(r_true)), 0.0, gain=amp * np.exp(2j * np.pi * rng.random()))
        frame = simulate_radar_frame(setup.scenario.replace(targets=(tgt,)), setup.X, setup.P, seed=rng,
                                     check_cp=False)
        rd = range_doppler_map(frame, setup.X, setup.P, f, 8, 4)
        k, q = rd.peak()
        tau, _ = refine_peak(matched_grid(frame.data[0], setup.X, setup.P), f, rd.delay_of(k), rd.doppler_of(q))
        return float(f.delay_to_range(tau)) - r_true

    return np.array(parallel_map(trial, rngs, threads))


@experiment("crb-sweep")
def crb_sweep(cfg, seed, out, threads=1):
    """ML range RMSE against the range CRB over an SNR grid."""
    opts = _opts(cfg, snr_db=[0.0, 10.0, 20.0, 30.0], trials=200)
    setup = build_setup(cfg, trial_rngs(seed, 1)[0])
    f, arrays = setup.frame, setup.scenario.arrays
    rows = []
    for s, snr in zip(np.random.SeedSequence(seed).spawn(len(opts["snr_db"])), opts["snr_db"]):
        err = ml_range_errors(cfg, s, snr, opts["trials"], threads)
        crb_r, crb_v, crb_a = kpi.crb_bounds(10 ** (snr / 10), f, arrays)
        rows.append((snr, crb_r, np.sqrt(crb_r), np.sqrt(np.mean(err ** 2)), crb_v, crb_a))
    files = [write_csv(Path(out) / "crb_sweep.csv",
                       ["snr_db", "crb_range_m2", "sqrt_crb_range_m", "rmse_range_m", "crb_velocity_m2ps2",
                        "crb_angle_rad2"], rows),
             _write_kpi(out, setup)]
    return files, {"rmse_over_sqrt_crb": [r[3] / r[2] for r in rows]}


@experiment("alloc-frontier")
def alloc_frontier(cfg, seed, out, threads=1):
    """Sensing/communication MI frontier and the rate vs RMS-bandwidth trade-off."""
    opts = _opts(cfg, n_subcarriers=16, total_power=16.0, mean_gain_u=1.0, mean_gain_s=1.0,
                 rate_floor=10.0, weights=[0.0, 0.25, 0.5, 0.75, 1.0],
                 crb_weights=[0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0], interference=None,
                 interference_cap=None)
    rng = trial_rngs(seed, 1)[0]
    n = opts["n_subcarriers"]
    g_u = opts["mean_gain_u"] * rng.exponential(size=n)
    g_s = opts["mean_gain_s"] * rng.exponential(size=n)
    prob = alloc.AllocationProblem(g_u, g_s, opts["total_power"], opts["rate_floor"],
                                   opts["interference"], opts["interference_cap"])
    res = alloc.greedy_mi_allocation(prob)
    res.to_json(Path(out) / "allocation.json")
    front = parallel_map(lambda w: alloc.scalarized_pareto(prob, [w]), opts["weights"], threads)
    points = alloc._non_dominated([p for pts in front for p in pts])
    files = ["allocation.json",
             write_csv(Path(out) / "frontier.csv", ["m_s_bits", "m_u_bits"], points)]
    df = build_setup(cfg, rng).frame.subcarrier_spacing
    rows = []
    for w in opts["crb_weights"]:
        p = alloc.crb_aware_allocation(n, opts["total_power"], w, g_u)
        rows.append((w, alloc.rate_bits(g_u, p), alloc.rms_bandwidth(p, df)))
    files.append(write_csv(Path(out) / "crb_frontier.csv", ["weight", "rate_bits", "rms_bandwidth_hz"], rows))
    files.append(_write_kpi(out, build_setup(cfg, rng)))
    if not res.feasible:
        raise ValueError(f"rate floor {opts['rate_floor']} bits is infeasible for this budget")
    return files, {"greedy_m_s_bits": res.m_s, "greedy_m_u_bits": res.m_u, "feasible": res.feasible}


@experiment("mcpc-analysis")
def mcpc_analysis(cfg, seed, out, threads=1):
    """MCPC envelope, PAPR and ambiguity-function cuts."""
    opts = _opts(cfg, family="p4", n_carriers=16, code_length=16, chip_duration=1e-6, oversample=8)
    mc = McpcConfig.from_family(opts["family"], opts["n_carriers"], opts["code_length"], opts["chip_duration"])
    fs = opts["oversample"] * mc.bandwidth
    stream = mcpc_envelope(mc, fs)
    stream.to_csv(Path(out) / "envelope.csv")
    lags, ac = autocorrelation(stream)
    span = 4 * mc.chip_duration / mc.n_carriers
    sel = np.abs(lags) <= span
    dopp = np.linspace(-4 / mc.pulse_duration, 4 / mc.pulse_duration, 161)
    af_nu = ambiguity_function(stream, [0.0], dopp)[0]
    files = ["envelope.csv",
             write_csv(Path(out) / "af_delay_cut.csv", ["delay_s", "magnitude_db"],
                       zip(lags[sel], _db(ac[sel], 1.0))),
             write_csv(Path(out) / "af_doppler_cut.csv", ["doppler_hz", "magnitude_db"],
                       zip(dopp, _db(af_nu, 1.0)))]
    files.append(_write_kpi(out, build_setup(cfg, trial_rngs(seed, 1)[0])))
    return files, {"papr": papr(stream),
                   "delay_mainlobe_s": mainlobe_width(lags[sel], ac[sel]),
                   "chip_over_n_s": mc.chip_duration / mc.n_carriers,
                   "doppler_mainlobe_hz": mainlobe_width(dopp, af_nu),
                   "inverse_duration_hz": 1 / mc.pulse_duration}
