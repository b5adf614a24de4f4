"""Exact descent on expected objectives and stochastic mini-batch training."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import encoder as enc
from .losses import LossConfig, batch_loss
from .metrics import evaluate, recall_at_k
from .mining import MinerConfig, build_pk_batch, expand_tuples
from .noisy import ExpectedObjectiveSpec, NoisyLabelModel, fixed_weights, objective_and_grad

MODES = ("exact_expected", "stochastic")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    mode: str = "stochastic"
    optimizer: str = "adam"
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 2000           # exact mode
    epochs: int = 10            # stochastic mode
    batches_per_epoch: int = 0  # 0: train size // (P*K), at least 1
    restarts: int = 8
    init_scale: float = 0.3
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    miner: MinerConfig = field(default_factory=MinerConfig)
    eval_every: int = 1
    eval_ks: tuple = (1, 2, 4, 8)
    nmi_multiplier: int = 10
    learn_beta: bool = True

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.miner, dict):
            self.miner = MinerConfig(**self.miner)
        self.eval_ks = tuple(int(k) for k in self.eval_ks)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.steps < 0 or self.epochs < 0 or self.restarts < 1:
            raise ValueError("steps/epochs must be >= 0 and restarts >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_ks"] = list(self.eval_ks)
        return d


@dataclass
class OptimState:
    kind: str
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def proposed_step(arrays, grads, state: OptimState, config: TrainConfig) -> list:
    """Return the parameter increments for one step and advance ``state``."""
    if len(arrays) != len(grads):
        raise ValueError("parameter/gradient count mismatch")
    for i, (a, g) in enumerate(zip(arrays, grads)):
        if a.shape != np.shape(g):
            raise ValueError(f"gradient {i} has shape {np.shape(g)}, parameter {a.shape}")
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0].tolist()
            raise FloatingPointError(f"non-finite gradient in array {i} at {bad}; step rejected")
    lr = config.learning_rate
    if state.kind == "sgd":
        return [-lr * np.asarray(g) for g in grads]
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    out = []
    for m, v, g in zip(state.m, state.v, grads):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        mhat = m / (1 - b1 ** state.t)
        vhat = v / (1 - b2 ** state.t)
        out.append(-lr * mhat / (np.sqrt(vhat) + config.adam_eps))
    return out


def update_params(arrays, grads, state: OptimState, config: TrainConfig,
                  nonneg=()) -> None:
    """In-place optimiser step; arrays listed by index in ``nonneg`` are clamped >= 0."""
    steps = proposed_step(arrays, grads, state, config)
    for i, (a, s) in enumerate(zip(arrays, steps)):
        a += s
        if i in nonneg:
            np.maximum(a, 0.0, out=a)


# -- exact mode --------------------------------------------------------------

@dataclass
class ExactResult:
    emb: np.ndarray
    beta: np.ndarray
    trajectory: list
    restart_values: list
    best_restart: int


def _descend(x, beta, model, spec, config, learn_beta):
    piecewise = spec.objective.startswith("eps")
    weights = None if piecewise else fixed_weights(model, spec)
    state = OptimState(config.optimizer)
    spec_now = ExpectedObjectiveSpec(spec.objective, spec.alpha, beta)
    value, gx, gb = objective_and_grad(x, model, spec_now, weights)
    traj = [value]
    for _ in range(config.steps):
        arrays = [x, beta] if learn_beta else [x]
        grads = [gx, gb] if learn_beta else [gx]
        deltas = proposed_step(arrays, grads, state, config)
        accepted = False
        scale = 1.0
        for _ in range(21):
            xn = x + scale * deltas[0]
            bn = np.maximum(beta + scale * deltas[1], 0.0) if learn_beta else beta
            spec_now = ExpectedObjectiveSpec(spec.objective, spec.alpha, bn)
            vn, gxn, gbn = objective_and_grad(xn, model, spec_now, weights)
            if vn <= value or piecewise:
                accepted = True
                break
            scale *= 0.5
        if accepted:
            x, beta, value, gx, gb = xn, bn, vn, gxn, gbn
        traj.append(value)
    return x, beta, traj


def train_exact(emb_init, model: NoisyLabelModel, spec: ExpectedObjectiveSpec,
                config: TrainConfig, m: int = 2, learn_beta: bool = False) -> ExactResult:
    """Gradient descent on the expected objective from several starts.

    Restart 0 starts from ``emb_init`` when given; the others (and restart 0
    otherwise) start from ``init_scale`` Gaussian noise drawn from the
    ``(seed, restart)`` substream. Steps that raise a plain objective are
    retried at half size up to 20 times and dropped if none helps. The EPS
    objectives are piecewise, so their steps are always taken.
    """
    n = model.n
    if emb_init is not None:
        emb_init = np.array(emb_init, dtype=np.float64)
        if emb_init.shape[0] != n:
            raise ValueError("emb_init size does not match the model")
        m = emb_init.shape[1]
    beta0 = spec.beta_vector(n)
    best = None
    values = []
    for r in range(config.restarts):
        if r == 0 and emb_init is not None:
            x0 = emb_init.copy()
        else:
            x0 = config.init_scale * np.random.default_rng([config.seed, r]).standard_normal((n, m))
        x, beta, traj = _descend(x0, beta0.copy(), model, spec, config, learn_beta)
        values.append(traj[-1])
        if best is None or traj[-1] < best[2][-1]:
            best = (x, beta, traj, r)
    x, beta, traj, r = best
    return ExactResult(x, beta, traj, values, r)


# -- stochastic mode ---------------------------------------------------------

@dataclass
class TrainReport:
    config: dict
    history: list
    final_train: dict
    final_test: dict

    def to_json(self) -> str:
        return dumps_json(asdict(self))

    def to_csv(self) -> str:
        cols = sorted({k for row in self.history for k in row})
        cols.remove("epoch")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch"] + cols)
        for row in self.history:
            w.writerow([row["epoch"]] + [_fmt(row.get(c, "")) for c in cols])
        return buf.getvalue()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    """Stable JSON: sorted keys, non-finite floats as null."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _inputs(dataset, params, idx):
    return idx if params.variant == "free_table" else dataset.features[idx]


def embed(dataset, params, idx, normalize=False):
    out, _ = enc.forward(params, _inputs(dataset, params, idx))
    if normalize:
        out = out / np.maximum(np.linalg.norm(out, axis=1, keepdims=True), 1e-12)
    return out


def _eval_split(dataset, params, idx, config, normalize):
    if idx.size < 3 or np.unique(dataset.class_labels[idx]).size < 2:
        return {}
    x = embed(dataset, params, idx, normalize)
    modes = None if dataset.mode_labels is None else dataset.mode_labels[idx]
    rep = evaluate(x, dataset.class_labels[idx], ks=config.eval_ks,
                   multiplier=config.nmi_multiplier, seed=config.seed, mode_labels=modes)
    out = {f"recall@{k}": v for k, v in rep.recall.items()}
    out.update(nmi=rep.nmi, nmi_plus=rep.nmi_plus, collapse_score=rep.collapse_score)
    if modes is not None:
        out["mode_nmi_plus"] = rep.mode_nmi_plus
        ks = [k for k in config.eval_ks if k < idx.size]
        out.update({f"mode_recall@{k}": v for k, v in recall_at_k(x, modes, ks).items()})
    return out


def train_stochastic(dataset, params: enc.EncoderParams, config: TrainConfig,
                     beta: Optional[np.ndarray] = None):
    """Mini-batch training on the dataset's train split; evaluates both splits.

    ``beta`` (margin loss) holds one boundary per dataset sample and is
    learned alongside the encoder when ``config.learn_beta`` is set.
    Returns ``(params, beta, report)``.
    """
    train_idx = dataset.indices("train")
    test_idx = dataset.indices("test")
    labels = dataset.class_labels
    lc, mc = config.loss, config.miner
    P, K = mc.classes_per_batch, mc.samples_per_class
    if beta is None:
        beta = np.full(labels.size, lc.beta_init)
    learn_beta = config.learn_beta and lc.variant == "margin"
    nb = config.batches_per_epoch or max(1, train_idx.size // (P * K))
    normalize = lc.variant == "multi_similarity"
    state = OptimState(config.optimizer)

    def record(epoch, loss):
        row = {"epoch": epoch, "loss": loss}
        row.update({f"train_{k}": v for k, v in _eval_split(dataset, params, train_idx, config, normalize).items()})
        row.update({f"test_{k}": v for k, v in _eval_split(dataset, params, test_idx, config, normalize).items()})
        return row

    history = [record(0, float("nan"))]
    for epoch in range(1, config.epochs + 1):
        losses = []
        for b in range(nb):
            seed = [config.seed, epoch, b]
            local = build_pk_batch(labels[train_idx], P, K, seed)
            members = train_idx[local]
            x, cache = enc.forward(params, _inputs(dataset, params, members))
            tuples = expand_tuples(x, members, labels[members], mc, lc.variant, seed, lc.alpha)
            if tuples.size == 0:
                continue
            lg = batch_loss(x, tuples, lc, beta[members] if lc.variant == "margin" else None)
            grads = enc.backward(params, cache, lg.grad)
            arrays = params.arrays()
            nonneg = ()
            if learn_beta:
                gb = np.zeros_like(beta)
                np.add.at(gb, members, lg.beta_grad)
                arrays = arrays + [beta]
                grads = grads + [gb]
                nonneg = (len(arrays) - 1,)
            update_params(arrays, grads, state, config, nonneg)
            params.bump()
            losses.append(lg.loss)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            history.append(record(epoch, float(np.mean(losses)) if losses else float("nan")))
    final = history[-1]
    report = TrainReport(
        config=config.to_dict(),
        history=history,
        final_train={k[6:]: v for k, v in final.items() if k.startswith("train_")},
        final_test={k[5:]: v for k, v in final.items() if k.startswith("test_")},
    )
    return params, beta, report
