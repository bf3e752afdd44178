"""Run one or more experiment configs and print a verdict summary.

Usage: python3 scripts/run_experiment.py configs/kernel.yaml [configs/oscillator.yaml ...] [--out-root out]
"""

import argparse
import json
import sys
import time
from pathlib import Path

from vnlw.harness import ExperimentConfig, run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--out-root", default=None, help="write each report under OUT_ROOT/<experiment>")
    args = ap.parse_args(argv)
    worst = 0
    for path in args.configs:
        cfg = ExperimentConfig.load(path)
        out = Path(args.out_root) / cfg.experiment if args.out_root else Path(cfg.output.dir)
        t0 = time.perf_counter()
        report = run(cfg, out)
        print(f"== {cfg.experiment} (exit {report.exit_code}, {time.perf_counter() - t0:.1f} s) -> {out}")
        for name, v in sorted(report.result.verdicts.items()):
            print(f"  {'PASS' if v['pass'] else 'FAIL'} {name}: value={json.dumps(v['value'])} bound={json.dumps(v['bound'])}")
        for note in report.result.notes:
            print(f"  note: {note}")
        sys.stdout.flush()
        worst = max(worst, report.exit_code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
