"""Run the three shipped experiments back to back with their config seeds.

Usage:
    python scripts/run_all.py [--configs-dir configs]

Roughly an hour and a half on one CPU core; see each config's [trainer]
section for the per-experiment step budgets.
"""

import argparse
import subprocess
import sys
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--configs-dir", default="configs")
    args = parser.parse_args()

    configs = sorted(Path(args.configs_dir).glob("exp*.cfg"))
    if not configs:
        print(f"no exp*.cfg files under {args.configs_dir}", file=sys.stderr)
        return 2
    for cfg in configs:
        print(f"=== {cfg} ===", flush=True)
        code = subprocess.call(
            [sys.executable, Path(__file__).with_name("run_exp.py"), str(cfg)])
        if code != 0:
            print(f"{cfg} failed with exit code {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
