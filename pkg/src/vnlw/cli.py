"""Command line entry point: ``vnlw <experiment> --config <path> [--seed S] [--out DIR] [--threads K]``.

Exit codes: 0 all verdicts pass, 2 some verdict fails, 3 resource ceiling
reached, 1 malformed configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys

import yaml

from .harness import EXPERIMENT_DEFAULTS, ConfigError, ExperimentConfig, run

log = logging.getLogger("vnlw")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vnlw", description="Run a viscous nonlinear wave experiment.")
    ap.add_argument("experiment", choices=sorted(EXPERIMENT_DEFAULTS))
    ap.add_argument("--config", required=True, help="YAML configuration file")
    ap.add_argument("--seed", type=int, default=None, help="override random.seed")
    ap.add_argument("--out", default=None, help="output directory (default: output.dir from the config)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for Monte Carlo loops")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        if raw.get("experiment") != args.experiment:
            raise ConfigError(f"config is for {raw.get('experiment')!r}, not {args.experiment!r}")
        if args.seed is not None:
            raw["random"] = dict(raw.get("random") or {}, seed=args.seed)
        if args.threads is not None:
            raw["threads"] = args.threads
        cfg = ExperimentConfig.from_dict(raw)
    except (OSError, ConfigError, yaml.YAMLError) as exc:
        print(f"vnlw: configuration error: {exc}", file=sys.stderr)
        return 1
    out = args.out or cfg.output.dir
    try:
        report = run(cfg, out)
    except ConfigError as exc:
        print(f"vnlw: configuration error: {exc}", file=sys.stderr)
        return 1
    for name, v in sorted(report.result.verdicts.items()):
        print(f"{'PASS' if v['pass'] else 'FAIL'} {name}: value={v['value']} bound={v['bound']}")
    for note in report.result.notes:
        print(f"note: {note}")
    print(f"report: {out}/report.json (exit {report.exit_code})")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
