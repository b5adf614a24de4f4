"""EPS vs random positives on MNIST even/odd with the 784-256-64-2 MLP.

Official files:  python3 scripts/mnist_direction.py --mnist-dir data/mnist
5k proxy:        python3 scripts/mnist_direction.py --idx data/mnist5k/images-idx3-ubyte data/mnist5k/labels-idx1-ubyte
"""

import argparse
import sys

from classcollapse.experiments import load_idx_pair_even_odd, load_mnist_even_odd, mnist_dir, mnist_direction
from classcollapse.trainer import dumps_json


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist-dir")
    ap.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"))
    ap.add_argument("--n-train", type=int, default=10000)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--out")
    args = ap.parse_args()
    if args.idx:
        ds = load_idx_pair_even_odd(*args.idx)
    else:
        d = args.mnist_dir or mnist_dir()
        if d is None:
            print("official MNIST files not found; pass --mnist-dir or set MNIST_DIR", file=sys.stderr)
            return 2
        ds = load_mnist_even_odd(d, args.n_train)
    r = mnist_direction(ds, seeds=(0, 1, 2), epochs=args.epochs)
    for row in r["rows"]:
        print(f"seed {row['seed']}: held-out digit R@1 EPS {row['eps_test_digit_recall@1']:.3f} "
              f"random {row['random_test_digit_recall@1']:.3f}")
    print(f"EPS wins {r['eps_wins']}/3: {'PASS' if r['passed'] else 'FAIL'}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(dumps_json(r))
    return 0 if r["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
