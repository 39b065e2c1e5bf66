"""Batch experiment runner.

    hyplab run --config cfg.json [--seed N] [--out prefix] [--threads K]
    hyplab calibrate --map '{"family": "doubling"}'
    hyplab list-maps

Configs are single JSON documents; every run writes its data files plus
a manifest echoing the fully resolved config, so any run can be
reproduced byte-for-byte from its manifest.  Exit codes: 0 success,
2 config error, 3 engine error.
"""

import argparse
import copy
import csv
import json
import secrets
import sys
import time

import numpy as np

from . import __version__
from ._streams import ENV_THREADS, TAG_X0, substream
from .calibrate import calibrate
from .errors import ConfigError, HyplabError
from .hyptimes import (HyperbolicParams, _first_hyp_batch, tail_table,
                       trace_orbit)
from .maps import list_families, map_from_config
from .measures import physical_measure, stability_curve, stationary_measure
from .noise import choose_constants, preservation_experiment
from .stats import (correlation_estimate, fit_decay, ld_estimate,
                    log_deriv_observable, write_decay_csv)

EXPERIMENTS = ("orbit", "hyptimes", "adapted", "tails", "stationary",
               "stability", "ld", "corr")

MC_DEFAULTS = {"N": 100000, "samples": 1000, "bins": 512,
               "burn_in": 1000, "trials": 50}
NOISE_DEFAULTS = {"epsilon": None, "depth": 6, "horizon": 256}
NS_DEFAULTS = {"tails": [4, 8, 16, 32], "hyptimes": [1, 2, 4, 8, 16, 32],
               "ld": [32, 64, 128, 256, 512, 1024],
               "corr": [8, 16, 32, 64, 128, 256]}


def resolve_config(raw):
    """Fill defaults; reject unknown experiments; deep-copy the input."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = copy.deepcopy(raw)
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    if "map" not in cfg:
        raise ConfigError("config needs a 'map' record")
    mc = dict(MC_DEFAULTS)
    mc.update(cfg.get("mc") or {})
    cfg["mc"] = mc
    noise = dict(NOISE_DEFAULTS)
    noise.update(cfg.get("noise") or {})
    cfg["noise"] = noise
    cfg.setdefault("hyp", None)
    cfg.setdefault("ns", NS_DEFAULTS.get(exp, [4, 8, 16, 32]))
    cfg.setdefault("eps_dev", 0.05)
    cfg.setdefault("tail", {"c": None, "gamma": None})
    cfg.setdefault("out", "run")
    if cfg.get("seed") is None:
        cfg["seed"] = secrets.randbits(63)
    cfg["seed"] = int(cfg["seed"])
    return cfg


def _resolve_engine(cfg, m):
    """(params, pert, gamma) from config overrides or auto-calibration."""
    noise = cfg["noise"]
    if cfg["hyp"]:
        hyp = cfg["hyp"]
        try:
            params = HyperbolicParams(
                sigma=float(hyp["sigma"]), delta=float(hyp["delta"]),
                beta=float(hyp.get("beta", 1.0)), B=float(hyp.get("B", 2.0)))
        except KeyError as e:
            raise ConfigError(f"hyp override needs key {e}") from e
        gamma = params.b * np.log(1.0 / params.sigma) / 4.0
        pert = choose_constants(m, params, gamma, depth=int(noise["depth"]),
                                horizon=int(noise["horizon"]))
    else:
        cal = calibrate(m, seed=cfg["seed"], depth=int(noise["depth"]),
                        horizon=int(noise["horizon"]))
        params, pert, gamma = cal.params, cal.pert, cal.gamma
    return params, pert, gamma


def _write_orbit_csv(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "x", "log_inv_deriv", "log_trunc_dist"])
        for j, x in enumerate(trace.points):
            if j < trace.N:
                w.writerow([j, repr(float(x)),
                            repr(float(trace.log_inv_deriv[j])),
                            repr(float(trace.log_trunc_dist[j]))])
            else:
                w.writerow([j, repr(float(x)), "", ""])


def run_experiment(cfg, threads=None):
    """Execute one resolved config; returns (manifest dict, output paths)."""
    t0 = time.monotonic()
    m = map_from_config(cfg["map"])
    exp = cfg["experiment"]
    seed = cfg["seed"]
    out = cfg["out"]
    mc = cfg["mc"]
    outputs = []
    censoring = {}

    if exp == "orbit":
        x0 = cfg.get("x0")
        if x0 is None:
            x0 = float(substream(seed, TAG_X0).uniform(m.domain.lower, m.domain.upper))
        delta = cfg["hyp"]["delta"] if cfg["hyp"] else 0.5
        trace = trace_orbit(m, float(x0), int(mc["N"]), float(delta))
        path = f"{out}.orbit.csv"
        _write_orbit_csv(path, trace)
        outputs.append(path)
        censoring["hit_critical"] = int(trace.hit_critical)

    elif exp == "hyptimes":
        params, _, _ = _resolve_engine(cfg, m)
        x0s = substream(seed, TAG_X0).uniform(
            m.domain.lower, m.domain.upper, size=int(mc["samples"]))
        horizon = int(cfg["noise"]["horizon"])
        h = _first_hyp_batch(m, x0s, params, horizon)
        censored = int((h < 0).sum())
        h_eff = np.where(h > 0, h, horizon + 1)
        path = f"{out}.hyptimes.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "gamma_mass", "h_tail_mass", "samples", "censored"])
            for n in cfg["ns"]:
                w.writerow([int(n), "", repr(float((h_eff > n).mean())),
                            int(mc["samples"]), censored])
        outputs.append(path)
        censoring["h_censored"] = censored

    elif exp == "tails":
        params, _, gamma = _resolve_engine(cfg, m)
        c = cfg["tail"].get("c") or 3.0 * float(np.log(1.0 / params.sigma))
        g = cfg["tail"].get("gamma") or gamma
        table = tail_table(m, params, c, g, cfg["ns"], int(mc["samples"]),
                           seed, horizon=int(cfg["noise"]["horizon"]),
                           threads=threads)
        path = f"{out}.tails.csv"
        table.to_csv(path)
        outputs.append(path)
        censoring["h_censored"] = table.censored_h

    elif exp == "adapted":
        params, pert, _ = _resolve_engine(cfg, m)
        eps = cfg["noise"]["epsilon"]
        report = preservation_experiment(
            m, params, pert, int(mc["samples"]), int(mc["trials"]), seed,
            epsilon=float(eps) if eps is not None else None)
        path = f"{out}.preservation.json"
        with open(path, "w") as fh:
            fh.write(report.to_json() + "\n")
        outputs.append(path)
        censoring["usable_points"] = report.samples

    elif exp == "stationary":
        params, pert, _ = _resolve_engine(cfg, m)
        eps = cfg["noise"]["epsilon"]
        eps = float(eps) if eps is not None else pert.epsilon / 2.0
        mu = stationary_measure(m, pert, eps, int(mc["N"]), int(mc["samples"]),
                                int(mc["bins"]), int(mc["burn_in"]), seed,
                                threads=threads)
        path = f"{out}.stationary.csv"
        mu.to_csv(path)
        outputs.append(path)
        censoring["dropped_orbits"] = mu.dropped

    elif exp == "stability":
        params, pert, _ = _resolve_engine(cfg, m)
        eps_grid = cfg.get("epsilons")
        if eps_grid is None:
            eps_grid = [pert.epsilon / 2 ** k for k in range(1, 5)]
        curve = stability_curve(m, pert, eps_grid, int(mc["N"]),
                                int(mc["samples"]), int(mc["bins"]), seed,
                                burn_in=int(mc["burn_in"]), threads=threads)
        path = f"{out}.stability.csv"
        curve.to_csv(path)
        outputs.append(path)

    elif exp == "ld":
        phi = log_deriv_observable(m)
        values, errs = [], []
        for n in cfg["ns"]:
            v = ld_estimate(m, phi, float(cfg["eps_dev"]), int(n),
                            int(mc["samples"]), cfg.get("measure_mode", "physical"),
                            seed, threads=threads)
            values.append(v)
            errs.append(np.sqrt(max(v, 1e-12) * (1 - min(v, 1.0)) / mc["samples"]))
        fit = None
        if all(v > 0 for v in values):
            try:
                fit = fit_decay(cfg["ns"], values)
            except HyplabError:
                fit = None
        path = f"{out}.ld.csv"
        write_decay_csv(path, cfg["ns"], values, errs, fit)
        outputs.append(path)

    elif exp == "corr":
        period = m.domain.length

        def wave(xs):
            return np.cos(2.0 * np.pi * (np.asarray(xs) - m.domain.lower) / period)

        values, errs = [], []
        for n in cfg["ns"]:
            r = correlation_estimate(m, wave, wave, int(n), int(mc["samples"]),
                                     seed, threads=threads)
            values.append(r.value)
            errs.append(r.stderr)
        fit = None
        if all(v > 0 for v in values):
            try:
                fit = fit_decay(cfg["ns"], values)
            except HyplabError:
                fit = None
        path = f"{out}.corr.csv"
        write_decay_csv(path, cfg["ns"], values, errs, fit)
        outputs.append(path)

    manifest = {
        "config": cfg,
        "engine_version": __version__,
        "wall_time_s": round(time.monotonic() - t0, 3),
        "censoring": censoring,
        "outputs": outputs,
    }
    mpath = f"{out}.manifest.json"
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest, outputs


def _error_record(kind, message):
    return json.dumps({"error": kind, "message": message}, sort_keys=True)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hyplab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default ${ENV_THREADS} or 1)")

    p_cal = sub.add_parser("calibrate", help="calibrate constants for a map")
    p_cal.add_argument("--map", required=True, help="map config JSON")
    p_cal.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-maps", help="list built-in map families")

    args = parser.parse_args(argv)

    if args.command == "list-maps":
        for name in list_families():
            print(name)
        return 0

    if args.command == "calibrate":
        try:
            m = map_from_config(json.loads(args.map))
            result = calibrate(m, seed=args.seed)
        except (ConfigError, json.JSONDecodeError) as e:
            print(_error_record("config", str(e)), file=sys.stderr)
            return 2
        except HyplabError as e:
            print(_error_record("engine", str(e)), file=sys.stderr)
            return 3
        print(json.dumps(result.summary(), sort_keys=True, indent=2))
        return 0

    # run
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        print(_error_record("config", str(e)), file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    try:
        cfg = resolve_config(raw)
    except ConfigError as e:
        print(_error_record("config", str(e)), file=sys.stderr)
        return 2
    try:
        manifest, outputs = run_experiment(cfg, threads=args.threads)
    except ConfigError as e:
        print(_error_record("config", str(e)), file=sys.stderr)
        return 2
    except HyplabError as e:
        record = _error_record("engine", str(e))
        print(record, file=sys.stderr)
        try:
            with open(f"{cfg['out']}.error.json", "w") as fh:
                fh.write(record + "\n")
        except OSError:
            pass
        return 3
    print(json.dumps({"manifest": f"{cfg['out']}.manifest.json",
                      "outputs": outputs}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
