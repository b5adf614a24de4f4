"""EPS vs random positives on 2 classes x 3 modes, free-table embedding, 5 seeds."""

import argparse
import sys

from classcollapse.experiments import synthetic_direction
from classcollapse.trainer import dumps_json


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out")
    args = ap.parse_args()
    r = synthetic_direction(range(args.seeds))
    for row in r["rows"]:
        print(f"seed {row['seed']}: mode NMI+ EPS {row['eps_mode_nmi_plus']:.3f} "
              f"random {row['random_mode_nmi_plus']:.3f}; recall@1 EPS {row['eps_recall@1']:.3f} "
              f"random {row['random_recall@1']:.3f}")
    print(f"median gap {r['mode_nmi_plus_gap']:.3f}, recall drop {r['recall_drop']:.3f}: "
          f"{'PASS' if r['passed'] else 'FAIL'}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(dumps_json(r))
    return 0 if r["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
