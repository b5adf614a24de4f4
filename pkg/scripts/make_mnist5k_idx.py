"""Write the 5k MNIST subset shipped with mlxtend as an IDX pair.

    python3 scripts/make_mnist5k_idx.py data/mnist5k
"""

import gzip
import importlib.util
import sys
from pathlib import Path

import numpy as np

from classcollapse.data import write_idx


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist5k")
    spec = importlib.util.find_spec("mlxtend")
    if spec is None:
        print("mlxtend is not installed (pip install mlxtend)", file=sys.stderr)
        return 2
    src = Path(spec.origin).parent / "data" / "data" / "mnist_5k.csv.gz"
    with gzip.open(src, "rt") as fh:
        arr = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(arr[:, :784].reshape(-1, 28, 28), arr[:, 784],
              out / "images-idx3-ubyte", out / "labels-idx1-ubyte")
    print(f"wrote {arr.shape[0]} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
