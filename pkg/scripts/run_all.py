#!/usr/bin/env python3
"""Run every config in configs/ through the CLI into out/<config name>/.

Exit status is non-zero if any run has a failing asserted check.
"""

import argparse
import sys
from pathlib import Path

from wzwlab import cli

ROOT = Path(__file__).resolve().parent.parent


def command_for(name):
    return name.split("_")[0]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--configs", default=str(ROOT / "configs"))
    p.add_argument("--out", default=str(ROOT / "out"))
    args = p.parse_args(argv)
    worst = 0
    for cfg in sorted(Path(args.configs).glob("*.json")):
        cmd = command_for(cfg.stem)
        code = cli.main([cmd, "--config", str(cfg), "--out", str(Path(args.out) / cfg.stem)])
        print(f"  -> {cfg.name}: exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
