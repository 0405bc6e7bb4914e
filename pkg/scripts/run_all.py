"""Run every config in configs/ and write one CSV per config.

    python scripts/run_all.py --out results --workers 4
"""

import argparse
import sys
import time
from pathlib import Path

from randstop import cli

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--configs", type=Path, default=ROOT / "configs")
    parser.add_argument("--out", type=Path, default=ROOT / "results")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    status = 0
    for path in sorted(args.configs.glob("*.toml")):
        start = time.perf_counter()
        code = cli.main(["run", str(path), "--out", str(args.out / f"{path.stem}.csv"),
                         "--workers", str(args.workers)])
        print(f"{path.stem:28s} exit={code} {time.perf_counter() - start:7.1f}s")
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
