"""Optimize every bundled scenario and certify the result.

    python3 scripts/run_scenarios.py [--out-dir runs]
"""

import argparse
import json
from pathlib import Path

from impulsive_mfc.cli import main
from impulsive_mfc.config import SCENARIOS


def run(out_dir: Path) -> None:
    print(f"{'scenario':26s} {'cost':>14s} {'residual':>10s} {'iters':>5s} {'jumps':>5s}  pmp")
    for name in SCENARIOS:
        out = out_dir / name
        main(["optimize", name, "--out-dir", str(out)])
        main(["check-pmp", name, "--out-dir", str(out)])
        cert = json.loads((out / "certificate.json").read_text())
        jumps = json.loads((out / "impulsive.json").read_text())["jumps"]
        passed = json.loads((out / "pmp_report.json").read_text())["passed"]
        print(f"{name:26s} {cert['cost']:14.10f} {cert['residual']:10.2e} {cert['iterations']:5d} {len(jumps):5d}  "
              f"{'pass' if passed else 'FAIL'}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="runs", type=Path)
    run(parser.parse_args().out_dir)
