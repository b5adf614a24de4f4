"""Run every collapse / anti-collapse check and print one line each.

    python3 scripts/verify_all.py [--out reports/]
"""

import argparse
import sys
from pathlib import Path

from classcollapse.claims import CLAIMS, verify_claim
from classcollapse.trainer import dumps_json


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", help="directory for per-claim JSON reports")
    args = ap.parse_args()
    failed = 0
    for claim in CLAIMS:
        report = verify_claim(claim)
        failed += not report["passed"]
        print(f"{claim:7s} {'PASS' if report['passed'] else 'FAIL'}  {verify_claim.last_seconds:6.1f}s")
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / f"{claim}.json").write_text(dumps_json(report))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
