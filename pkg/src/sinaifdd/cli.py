"""Command-line front end: ``sinaifdd <command> CONFIG [--seed S] [--samples N] [--out DIR]``.

The config is YAML with the sections ``table``, ``validator``,
``experiment`` (parameters of the chosen experiment), ``seeds`` and
``workers``. Data products go to ``--out``; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .exceptions import BilliardError, ConfigError, InfiniteHorizonDetected
from .experiments import EXPERIMENTS
from .geometry import BilliardTable, orbits, validate_table
from .measure import MuSampler

log = logging.getLogger("sinaifdd")

TOP_KEYS = ("table", "validator", "experiment", "seeds", "workers")
VALIDATOR_KEYS = ("p_max", "n_rays", "seed")
CURVE_COLUMNS = ("gap", "estimate", "std_error", "n", "grazing_resamples")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass
class ExperimentConfig:
    table: list
    validator: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    workers: int | None = None

    @classmethod
    def from_dict(cls, raw, command=None):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        for key in raw:
            if key not in TOP_KEYS:
                raise ConfigError("unknown key", key)
        table = raw.get("table")
        if not isinstance(table, dict) or "scatterers" not in table:
            raise ConfigError("missing scatterer list", "table.scatterers")
        for key in table:
            if key != "scatterers":
                raise ConfigError("unknown key", f"table.{key}")
        scatterers = table["scatterers"]
        if not isinstance(scatterers, list) or not scatterers:
            raise ConfigError("need a non-empty list", "table.scatterers")
        for i, item in enumerate(scatterers):
            if not isinstance(item, dict):
                raise ConfigError("expected a mapping", f"table.scatterers[{i}]")
            for k in ("cx", "cy", "radius"):
                if k not in item:
                    raise ConfigError("missing key", f"table.scatterers[{i}].{k}")
            for k in item:
                if k not in ("cx", "cy", "radius"):
                    raise ConfigError("unknown key", f"table.scatterers[{i}].{k}")
        validator = dict(raw.get("validator") or {})
        for k in validator:
            if k not in VALIDATOR_KEYS:
                raise ConfigError("unknown key", f"validator.{k}")
        experiment = dict(raw.get("experiment") or {})
        if command in EXPERIMENTS:
            allowed = EXPERIMENTS[command]().get_params()
            for k in experiment:
                if k not in allowed or k in ("seed", "workers"):
                    raise ConfigError("unknown key", f"experiment.{k}")
        seeds = raw.get("seeds", [0])
        if isinstance(seeds, int):
            seeds = [seeds]
        if not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("need a list of integers", "seeds")
        return cls([dict(s) for s in scatterers], validator, experiment, list(seeds),
                   raw.get("workers"))

    def to_dict(self):
        out = {"table": {"scatterers": self.table}, "validator": self.validator,
               "experiment": self.experiment, "seeds": self.seeds}
        if self.workers is not None:
            out["workers"] = self.workers
        return out

    def digest(self):
        """SHA-256 of the canonical JSON form; the worker count is excluded."""
        d = self.to_dict()
        d.pop("workers", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_config(path, command=None):
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse YAML: {exc}") from exc
    return ExperimentConfig.from_dict(raw, command)


def build_table(cfg):
    table = BilliardTable.from_spec(cfg.table)
    v = cfg.validator
    report, table = validate_table(table, v.get("p_max", 5), v.get("n_rays", 100_000),
                                   v.get("seed", 0))
    log.info("horizon: %s, tau_max=%s, worst corridor %s", report.verdict,
             report.tau_max, report.worst_corridor)
    return report, table


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def curve_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in CURVE_COLUMNS])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def dump_json(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def run_experiment(command, cfg, out, samples=None, workers=None):
    """Run ``command`` for each configured seed; returns the exit status."""
    _, table = build_table(cfg)
    out = Path(out)
    passed = True
    for seed in cfg.seeds:
        params = dict(cfg.experiment)
        if samples is not None:
            params["n_samples"] = int(samples)
        est = EXPERIMENTS[command](**params, seed=seed, workers=workers)
        log.info("%s seed=%d: %s", command, seed, params)
        est.fit(table)
        target = out if len(cfg.seeds) == 1 else out / f"seed_{seed}"
        target.mkdir(parents=True, exist_ok=True)
        for name, rows in est.curves().items():
            (target / f"{name}.csv").write_text(curve_csv(rows))
            resamples = sum(r["grazing_resamples"] for r in rows)
            log.info("curve %s: %d points, %d grazing resamples", name, len(rows), resamples)
        summary = est.summary()
        summary["params"].pop("workers", None)
        (target / "summary.json").write_text(dump_json(summary))
        for name, ok in summary["checks"].items():
            log.info("check %-45s %s", name, "PASS" if ok else "FAIL")
        passed &= summary["passed"]
    manifest = {"command": command, "config": cfg.to_dict(), "config_sha256": cfg.digest(),
                "seeds": cfg.seeds, "samples_override": samples, "version": __version__}
    manifest["config"].pop("workers", None)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(dump_json(manifest))
    return EXIT_OK if passed else EXIT_FAILED


def run_validate(cfg, out=None):
    try:
        report, _ = build_table(cfg)
    except InfiniteHorizonDetected as exc:
        print(f"InfiniteHorizonDetected: {exc}", file=sys.stderr)
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "horizon.json").write_text(dump_json(exc.report.as_record()))
        return EXIT_FAILED
    text = dump_json(report.as_record())
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "horizon.json").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def run_sample(cfg, out, samples=None, steps=10):
    """Write raw trajectories as CSV rows ``(start, step, scatterer, r, phi, flight)``."""
    _, table = build_table(cfg)
    n = int(samples or 10)
    sampler = MuSampler(table, cfg.seeds[0], stream=("sample",))
    m, r, phi = sampler.sample_arrays(n)
    o = orbits(table, m, r, phi, n_steps=steps)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("start", "step", "scatterer", "r", "phi", "flight", "status"))
    for i in range(n):
        for s in range(steps + 1):
            w.writerow((i, s, int(o.m[i, s]), repr(float(o.r[i, s])),
                        repr(float(o.phi[i, s])), repr(float(o.flight[i, s])),
                        int(o.status[i])))
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "trajectories.csv").write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="sinaifdd", description=__doc__.splitlines()[0])
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("validate", "sample", *EXPERIMENTS):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="YAML configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed list")
        sp.add_argument("--samples", type=int, help="override the sample count")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int,
                        help="worker threads (default: SINAIFDD_WORKERS or 1)")
        if name == "sample":
            sp.add_argument("--steps", type=int, default=10)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg.seeds = [args.seed]
        workers = args.workers if args.workers is not None else cfg.workers
        if args.command == "validate":
            return run_validate(cfg, args.out)
        if args.command == "sample":
            return run_sample(cfg, args.out, args.samples, args.steps)
        if not args.out:
            raise ConfigError("experiments need an output directory", "--out")
        return run_experiment(args.command, cfg, args.out, args.samples, workers)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfiniteHorizonDetected as exc:
        print(f"InfiniteHorizonDetected: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BilliardError, ValueError, KeyError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
