"""Reproduction protocols: synthetic multimodal data and MNIST even/odd."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

import numpy as np

from . import encoder as enc
from .data import Dataset, gen_multimodal, parse_idx, relabel_even_odd
from .losses import LossConfig
from .mining import MinerConfig
from .trainer import TrainConfig, train_stochastic

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


# -- synthetic ---------------------------------------------------------------

SYNTHETIC = dict(classes=2, modes_per_class=3, samples_per_mode=50, feature_dim=2,
                 mode_separation=10.0, noise_sigma=1.0)


def synthetic_config(positive: str, seed: int) -> TrainConfig:
    return TrainConfig(
        mode="stochastic", optimizer="adam", learning_rate=0.01, epochs=100,
        seed=seed, eval_every=100, nmi_multiplier=3,
        loss=LossConfig("triplet", alpha=0.2),
        miner=MinerConfig(positive, "random", classes_per_batch=2, samples_per_class=32),
    )


def synthetic_run(positive: str, seed: int, init_scale: float = 0.05,
                  config: Optional[TrainConfig] = None):
    """Free-table training on 2 classes x 3 modes; the table starts at the scaled features.

    ``nmi_multiplier=3`` makes NMI+ cluster into as many groups as there are modes.
    """
    ds = gen_multimodal(seed=seed, **SYNTHETIC)
    cfg = config or synthetic_config(positive, seed)
    params = enc.init_params("free_table", (ds.n, ds.features.shape[1]), seed)
    params.table[:] = init_scale * ds.features
    params, _, report = train_stochastic(ds, params, cfg)
    return ds, params, report


def synthetic_direction(seeds=range(5)) -> dict:
    rows = []
    for s in seeds:
        row = {"seed": int(s)}
        for tag, pos in (("eps", "easy_positive"), ("random", "random")):
            _, _, rep = synthetic_run(pos, int(s))
            row[f"{tag}_mode_nmi_plus"] = rep.final_train["mode_nmi_plus"]
            row[f"{tag}_recall@1"] = rep.final_train["recall@1"]
        rows.append(row)
    med = {k: float(np.median([r[k] for r in rows])) for k in rows[0] if k != "seed"}
    gap = med["eps_mode_nmi_plus"] - med["random_mode_nmi_plus"]
    drop = med["random_recall@1"] - med["eps_recall@1"]
    return {
        "rows": rows,
        "median": med,
        "mode_nmi_plus_gap": gap,
        "recall_drop": drop,
        "passed": bool(gap >= 0.1 and drop <= 0.02),
    }


# -- MNIST -------------------------------------------------------------------

def _find(directory: Path, stem: str) -> Optional[Path]:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (directory / name).exists():
            return directory / name
    return None


def mnist_dir() -> Optional[Path]:
    """Directory holding the four official IDX files, from $MNIST_DIR or ./data/mnist."""
    for cand in (os.environ.get("MNIST_DIR"), "data/mnist"):
        if cand and all(_find(Path(cand), f) for pair in MNIST_FILES.values() for f in pair):
            return Path(cand)
    return None


def load_mnist_even_odd(directory, n_train: int = 10000,
                        train_digits=range(6), test_digits=range(6, 10)) -> Dataset:
    """First ``n_train`` official train images for the train digits; official
    test-split images of the held-out digits for evaluation."""
    d = Path(directory)
    train = parse_idx(*(_find(d, f) for f in MNIST_FILES["train"]))
    test = parse_idx(*(_find(d, f) for f in MNIST_FILES["test"]))
    train = train.subset(np.arange(min(n_train, train.n)))
    return relabel_even_odd(train, test, train_digits, test_digits)


def load_idx_pair_even_odd(images, labels, train_digits=range(6),
                           test_digits=range(6, 10)) -> Dataset:
    """Single IDX pair split by digit (used for small MNIST subsets)."""
    return relabel_even_odd(parse_idx(images, labels), None, train_digits, test_digits)


def mnist_config(positive: str, seed: int, epochs: int = 15) -> TrainConfig:
    return TrainConfig(
        mode="stochastic", optimizer="adam", learning_rate=1e-3, epochs=epochs,
        seed=seed, eval_every=epochs, nmi_multiplier=10, eval_ks=(1, 2, 4, 8),
        loss=LossConfig("triplet", alpha=0.2),
        miner=MinerConfig(positive, "random", classes_per_batch=2, samples_per_class=32),
    )


MLP_DIMS = (784, 256, 64, 2)


def mnist_run(ds: Dataset, positive: str, seed: int, config: Optional[TrainConfig] = None):
    cfg = config or mnist_config(positive, seed)
    params = enc.init_params("mlp", MLP_DIMS, seed)
    params, _, report = train_stochastic(ds, params, cfg)
    return params, report


def mnist_direction(ds: Dataset, seeds=(0, 1, 2), epochs: int = 15) -> dict:
    """EPS vs random positives, paired by seed; scored by digit recall@1 on held-out digits."""
    rows = []
    for s in seeds:
        row = {"seed": int(s)}
        for tag, pos in (("eps", "easy_positive"), ("random", "random")):
            _, rep = mnist_run(ds, pos, int(s), mnist_config(pos, int(s), epochs))
            row[f"{tag}_test_digit_recall@1"] = rep.final_test["mode_recall@1"]
            row[f"{tag}_train_recall@1"] = rep.final_train["recall@1"]
        row["eps_wins"] = row["eps_test_digit_recall@1"] > row["random_test_digit_recall@1"]
        rows.append(row)
    wins = sum(r["eps_wins"] for r in rows)
    return {"rows": rows, "eps_wins": wins, "passed": bool(wins >= 2)}
