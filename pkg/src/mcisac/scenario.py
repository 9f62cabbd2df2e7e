"""Scenario files: YAML/JSON loading, schema validation and object construction.

Every physical quantity is in SI units (Hz, s, m, m/s, rad, W). A scenario
must carry an integer ``seed``; the CLI ``--seed`` overrides it. Experiment
manifests written by the CLI embed the full scenario under ``scenario`` and
load back unchanged.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .channel import IMPAIRMENTS, Scenario
from .core import ArrayConfig, FrameConfig, SyncOffsets, Target
from .phase_noise import PnModel
from .waveform import build_symbol_grid, uniform_power_grid

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_COUNT = {"type": "integer", "minimum": 1}

_PATH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["range", "snr_db"],
    "properties": {
        "range": _NONNEG, "velocity": _NUM, "snr_db": _NUM, "phase": _NUM,
        "angle": _NUM, "aod": _NUM, "aoa": _NUM,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "frame"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "frame": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_subcarriers", "n_symbols", "subcarrier_spacing", "carrier_freq"],
            "properties": {
                "n_subcarriers": _COUNT, "n_symbols": _COUNT,
                "subcarrier_spacing": _POS, "carrier_freq": _POS,
                "cp_fraction": _NONNEG, "cp_duration": _NONNEG, "total_power": _POS,
            },
        },
        "arrays": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_tx": _COUNT, "n_rx": _COUNT, "n_comm": _COUNT, "element_spacing": _POS},
        },
        "mode": {"enum": ["monostatic", "bistatic"]},
        "sync": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"cfo": _NUM, "clock_offset": _NUM, "comm_cfo": _NUM},
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"radar": _NONNEG, "comm": _NONNEG},
        },
        "constellation": {"enum": ["qpsk", "16qam", "unit-modulus-random"]},
        "targets": {"type": "array", "items": _PATH_SCHEMA},
        "comm_paths": {"type": "array", "items": _PATH_SCHEMA},
        "impairments": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": list(IMPAIRMENTS)}, "check_cp": {"type": "boolean"}},
        },
        "phase_noise": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "bw3db"],
            "properties": {"kind": {"enum": ["free_running", "pll"]}, "bw3db": _NONNEG, "loop_bw": _POS},
        },
        "processing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pad_n": _COUNT, "pad_m": _COUNT, "window": {"enum": ["none", "hann"]},
                "pfa": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "k_max": _COUNT,
            },
        },
        "experiment": {"type": "object"},
    },
}


class ScenarioError(ValueError):
    """Schema or consistency violation, message prefixed with the field path."""


def _path(err):
    parts = [str(p) if not isinstance(p, int) else f"[{p}]" for p in err.absolute_path]
    text = ".".join(parts).replace(".[", "[")
    return text or "<root>"


def validate(cfg):
    """Raise :class:`ScenarioError` listing every schema violation with its field path."""
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise ScenarioError("; ".join(f"{_path(e)}: {e.message}" for e in errors))
    frame = cfg["frame"]
    if "cp_fraction" in frame and "cp_duration" in frame:
        raise ScenarioError("frame: give cp_fraction or cp_duration, not both")
    if cfg.get("impairments", {}).get("kind", "none") in ("phase_noise", "both") and "phase_noise" not in cfg:
        raise ScenarioError("phase_noise: required when impairments.kind uses phase noise")
    pn = cfg.get("phase_noise")
    if pn and pn["kind"] == "pll" and "loop_bw" not in pn:
        raise ScenarioError("phase_noise.loop_bw: required for kind 'pll'")
    return cfg


def load_config(path):
    """Read a YAML or JSON scenario (or CLI manifest) and validate it."""
    path = Path(path)
    text = path.read_text()
    try:
        cfg = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ScenarioError(f"{path}: cannot parse: {exc}") from exc
    if isinstance(cfg, dict) and "scenario" in cfg and "experiment" in cfg and isinstance(cfg["scenario"], dict):
        cfg = cfg["scenario"]
    if not isinstance(cfg, dict):
        raise ScenarioError("<root>: scenario must be a mapping")
    return validate(cfg)


def frame_config(cfg):
    f = cfg["frame"]
    n, m = f["n_subcarriers"], f["n_symbols"]
    if "cp_duration" in f:
        return FrameConfig(n, m, f["subcarrier_spacing"], f["cp_duration"], f["carrier_freq"],
                           f.get("total_power", float(n * m)))
    return FrameConfig.with_cp_fraction(n, m, f["subcarrier_spacing"], f["carrier_freq"],
                                        f.get("cp_fraction", 0.07), f.get("total_power"))


def array_config(cfg, frame):
    a = cfg.get("arrays", {})
    lam = frame.wavelength
    return ArrayConfig(a.get("n_tx", 1), a.get("n_rx", 1), a.get("n_comm", 1),
                       a.get("element_spacing", lam / 2), lam)


def pn_model(cfg):
    pn = cfg.get("phase_noise")
    if not pn:
        return None
    return PnModel(pn["kind"], float(pn["bw3db"]), float(pn.get("loop_bw", 0.0)))


def _paths(entries, frame, noise, rng):
    out = []
    for t in entries:
        amp = np.sqrt(10 ** (t["snr_db"] / 10) * noise)
        phase = t["phase"] if "phase" in t else 2 * np.pi * rng.random()
        aod = t.get("aod", t.get("angle", 0.0))
        aoa = t.get("aoa", t.get("angle", 0.0))
        out.append(Target(float(frame.range_to_delay(t["range"])),
                          float(frame.velocity_to_doppler(t.get("velocity", 0.0))),
                          aod, aoa, complex(amp * np.exp(1j * phase))))
    return out


@dataclass
class Setup:
    """Everything one simulated frame needs."""

    scenario: Scenario
    X: np.ndarray
    P: np.ndarray
    pn_model: PnModel
    impairments: str
    check_cp: bool
    processing: dict

    @property
    def frame(self):
        return self.scenario.frame


def build_setup(cfg, rng, **overrides):
    """Instantiate the scenario for one trial.

    Target phases (when not fixed) and the data symbols are drawn from ``rng``.
    ``overrides`` replace top-level config entries (e.g. ``targets``).
    """
    cfg = {**cfg, **overrides}
    frame = frame_config(cfg)
    arrays = array_config(cfg, frame)
    noise = cfg.get("noise", {})
    s2r, s2c = noise.get("radar", 1.0), noise.get("comm", 1.0)
    targets = _paths(cfg.get("targets", []), frame, s2r if s2r > 0 else 1.0, rng)
    comm = _paths(cfg.get("comm_paths", []), frame, s2c if s2c > 0 else 1.0, rng)
    sync = SyncOffsets(**cfg.get("sync", {}))
    scen = Scenario(frame, arrays, targets, comm, cfg.get("mode", "monostatic"), sync, s2r, s2c)
    X = build_symbol_grid(frame, cfg.get("constellation", "qpsk"), seed=rng)
    P = uniform_power_grid(frame)
    imp = cfg.get("impairments", {})
    proc = {"pad_n": 4, "pad_m": 4, "window": "hann", "pfa": 1e-3, "k_max": 5}
    proc.update(cfg.get("processing", {}))
    if proc["window"] == "none":
        proc["window"] = None
    return Setup(scen, X, P, pn_model(cfg), imp.get("kind", "none"), imp.get("check_cp", True), proc)
