"""Command line front end: ``mcisac run <experiment> --scenario FILE --seed N --out DIR``."""

import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .experiments import EXPERIMENTS
from .scenario import ScenarioError, load_config


def _versions():
    return {"mcisac": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else None
    return x


def build_parser():
    parser = argparse.ArgumentParser(prog="mcisac", description="Multicarrier ISAC batch experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one named experiment")
    run.add_argument("experiment", choices=sorted(EXPERIMENTS))
    run.add_argument("--scenario", required=True, help="YAML/JSON scenario or a previous manifest.json")
    run.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides the scenario)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty directory")
    return parser


def run(experiment, scenario_path, seed, out, threads=1, overwrite=False):
    """Run one experiment and write its artifacts plus ``manifest.json``; return the manifest."""
    cfg = load_config(scenario_path)
    seed = cfg["seed"] if seed is None else seed
    if not 0 <= seed < 2 ** 64:
        raise ScenarioError(f"seed: {seed} is not an unsigned 64-bit integer")
    if threads < 1:
        raise ScenarioError("threads: must be >= 1")
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise FileExistsError(f"{out} is not empty; pass --overwrite to replace its contents")
    out.mkdir(parents=True, exist_ok=True)
    cfg = {**cfg, "seed": seed}
    files, summary = EXPERIMENTS[experiment](cfg, seed, out, threads)
    manifest = {"experiment": experiment, "scenario_path": str(scenario_path), "seed": seed,
                "scenario": cfg, "versions": _versions(), "outputs": sorted(files),
                "summary": _jsonable(summary)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        manifest = run(args.experiment, args.scenario, args.seed, args.out, args.threads, args.overwrite)
    except (ScenarioError, ValueError, FileExistsError, FileNotFoundError) as exc:
        print(f"mcisac: error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.experiment}: wrote {len(manifest['outputs'])} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
