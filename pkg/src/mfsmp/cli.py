"""mfsmp command line: run a scenario from a config, or validate a config."""
from __future__ import annotations

import argparse
import os
import subprocess
import sys

from . import __version__
from . import noise
from .config import SCENARIOS, SECTIONS, default_config, load_file, resolve, validate_dict
from .errors import ConfigError, InvalidInput, NumericalFailure
from .particles import TimeGrid
from .suites import chaos_suite, dv_suite, gateaux_suite, lq_suite
from .virus import (
    RunArtifacts,
    VirusParams,
    run_constant_effort,
    run_feedback,
    run_game,
    run_uncontrolled,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

# config sections each scenario reads; the others are left out of its manifest
SECTIONS_USED = {
    "uncontrolled": ("params",), "constant-effort": ("params",), "feedback": ("params",),
    "game": ("params", "solver"), "chaos-study": ("chaos",), "gateaux-check": ("gateaux",),
    "dv-check": ("dv",), "lq-validate": ("lq", "solver"),
}


def version_string() -> str:
    """Package version plus `git describe` of the source tree when available."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def _suite_artifacts(scenario, cfg, extra, tables):
    man = {"scenario": scenario, "seed": cfg["seed"], **extra}
    art = RunArtifacts(man)
    for name, res in tables.items():
        art.add(name, res.header, res.rows)
    return art


def execute(cfg: dict) -> RunArtifacts:
    """Run a resolved config and return its artifacts (not yet written)."""
    sc, seed = cfg["scenario"], cfg["seed"]
    sol = cfg["solver"]
    if sc in ("uncontrolled", "constant-effort", "feedback", "game"):
        params = VirusParams(**dict(cfg["params"], horizon=cfg["horizon"]))
        grid = TimeGrid(cfg["horizon"], cfg["dt"])
        n = cfg["n"]
        if sc == "uncontrolled":
            run = run_uncontrolled(params, n, grid, seed, on_blowup=cfg["on_blowup"])
        elif sc == "constant-effort":
            run = run_constant_effort(params, cfg["mean_field"], n, grid, seed,
                                      on_blowup=cfg["on_blowup"])
        elif sc == "feedback":
            run = run_feedback(params, n, grid, seed, on_blowup=cfg["on_blowup"])
        else:
            run = run_game(params, n, grid, seed, **sol)
        run.artifacts.manifest["on_blowup"] = cfg["on_blowup"]
        return run.artifacts
    if sc == "chaos-study":
        ch = cfg["chaos"]
        errors, slopes = chaos_suite(seed, ch["n_list"], ch["reps"], ch["alphas"], ch["mu"],
                                     ch["sigma"], cfg["dt"], cfg["horizon"], ch["tabulate"])
        extra = {"chaos": ch, "dt": cfg["dt"], "horizon": cfg["horizon"], **slopes.summary}
        return _suite_artifacts(sc, cfg, extra, {"chaos.csv": errors, "chaos_slopes.csv": slopes})
    if sc == "gateaux-check":
        res = gateaux_suite(seed, **cfg["gateaux"])
        return _suite_artifacts(sc, cfg, res.summary, {"gateaux.csv": res})
    if sc == "dv-check":
        res = dv_suite(seed, **cfg["dv"])
        return _suite_artifacts(sc, cfg, res.summary, {"dv.csv": res})
    if sc == "lq-validate":
        lq = cfg["lq"]
        res = lq_suite(seed, cfg["n"], cfg["dt"], cfg["horizon"], **lq, **sol)
        extra = {"lq": lq, "solver": sol, "n": cfg["n"], "dt": cfg["dt"],
                 "horizon": cfg["horizon"], **res.summary}
        return _suite_artifacts(sc, cfg, extra, {"lq_gains.csv": res})
    raise ConfigError(f"unknown scenario {sc!r}")


def _overrides(args) -> dict:
    out = {}
    for key in ("scenario", "seed", "n", "dt", "out"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if getattr(args, "n_list", None):
        try:
            out["chaos"] = {"n_list": [int(v) for v in args.n_list.split(",")]}
        except ValueError as exc:
            raise ConfigError(f"--n-list must be comma-separated integers: {exc}") from exc
    return out


def _merge(raw, over):
    merged = dict(raw)
    for k, v in over.items():
        if isinstance(v, dict):
            merged[k] = dict(merged.get(k) or {}, **v)
        else:
            merged[k] = v
    return merged


def cmd_run(args) -> int:
    try:
        if args.config:
            raw = load_file(args.config)
        else:
            if not args.scenario:
                raise ConfigError("give --scenario or --config")
            raw = default_config(args.scenario)
        raw = _merge(raw, _overrides(args))
        diags = validate_dict(raw)
        if diags:
            for d in diags:
                print(f"config error: {d}", file=sys.stderr)
            return EXIT_CONFIG
        cfg = resolve(raw)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            noise.set_workers(args.threads)
        art = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInput as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    art.manifest["version"] = version_string()
    # the output location does not affect results, so it stays out of the manifest
    used = SECTIONS_USED[cfg["scenario"]]
    art.manifest["config"] = {k: v for k, v in cfg.items()
                              if k != "out" and (k not in SECTIONS or k in used)}
    out = cfg["out"] or os.path.join("runs", cfg["scenario"])
    try:
        art.write(out)
    except OSError as exc:
        print(f"cannot write artifacts to {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(out)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        raw = load_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    diags = validate_dict(raw)
    for d in diags:
        print(d)
    return EXIT_CONFIG if diags else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfsmp")
    ap.add_argument("--version", action="version", version=f"mfsmp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--scenario", choices=SCENARIOS)
    run.add_argument("--config")
    run.add_argument("--seed", type=int)
    run.add_argument("--n", type=int)
    run.add_argument("--dt", type=float)
    run.add_argument("--out")
    run.add_argument("--threads", type=int)
    run.add_argument("--n-list", dest="n_list", help="comma-separated sizes for chaos-study")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
