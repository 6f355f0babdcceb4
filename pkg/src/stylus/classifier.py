"""Regularised multinomial logistic regression and hyperparameter search."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .rng import derive_rng

C_RANGE = (0.001, 1000.0)
CLASS_WEIGHTS = ("none", "balanced")
PENALTIES = ("none", "L2")

GRAD_TOL = 1e-5
MAX_ITER = 5000


@dataclass(frozen=True)
class LRConfig:
    C: float = 1.0
    class_weight: str = "none"
    penalty: str = "L2"

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.class_weight not in CLASS_WEIGHTS:
            raise ValueError(f"unknown class_weight {self.class_weight!r}")
        if self.penalty not in PENALTIES:
            raise ValueError(f"unknown penalty {self.penalty!r}")


@dataclass
class LRModel:
    W: np.ndarray            # class x feature
    b: np.ndarray            # class
    class_labels: tuple
    config: LRConfig
    n_iter: int = 0
    converged: bool = False


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sample_weights(y_idx: np.ndarray, n_classes: int,
                   class_weight: str) -> np.ndarray:
    n = len(y_idx)
    if class_weight == "none":
        return np.ones(n)
    counts = np.bincount(y_idx, minlength=n_classes).astype(float)
    return n / (n_classes * counts[y_idx])


def loss_and_grad(W, b, X, Y, weights, l2: float):
    """Mean weighted cross-entropy plus l2 * 0.5 * ||W||^2.

    Returns (loss, grad_W, grad_b). ``l2`` is 1/C, or 0 for no penalty;
    the bias is never regularised.
    """
    n = X.shape[0]
    P = _softmax(X @ W.T + b)
    logp = np.log(np.clip(P, 1e-300, None))
    ce = -(weights * (Y * logp).sum(axis=1)).sum() / n
    loss = ce + 0.5 * l2 * float((W * W).sum())
    R = (P - Y) * weights[:, None] / n   # n x classes
    grad_W = R.T @ X + l2 * W
    grad_b = R.sum(axis=0)
    return loss, grad_W, grad_b


def fit(X, y, config: LRConfig = LRConfig(),
        max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> LRModel:
    """Deterministic full-batch gradient descent with backtracking.

    Starts from zero weights and runs until the gradient infinity-norm
    drops below ``tol`` or ``max_iter`` iterations elapse.
    """
    X = np.asarray(X, dtype=float)
    labels = tuple(sorted(set(y)))
    if len(labels) < 2:
        raise ValueError("need at least two classes")
    if X.shape[0] != len(y):
        raise ValueError("row count of X must match len(y)")
    label_idx = {lab: i for i, lab in enumerate(labels)}
    y_idx = np.array([label_idx[v] for v in y])
    n, d = X.shape
    k = len(labels)
    Y = np.zeros((n, k))
    Y[np.arange(n), y_idx] = 1.0
    weights = sample_weights(y_idx, k, config.class_weight)
    l2 = 1.0 / config.C if config.penalty == "L2" else 0.0

    W = np.zeros((k, d))
    b = np.zeros(k)
    step = 1.0
    loss, gW, gb = loss_and_grad(W, b, X, Y, weights, l2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = max(np.abs(gW).max(), np.abs(gb).max())
        if gnorm <= tol:
            converged = True
            break
        gsq = float((gW * gW).sum() + (gb * gb).sum())
        step = min(step * 2.0, 1e6)
        while True:
            W_new = W - step * gW
            b_new = b - step * gb
            loss_new, gW_new, gb_new = loss_and_grad(
                W_new, b_new, X, Y, weights, l2)
            if loss_new <= loss - 1e-4 * step * gsq or step < 1e-16:
                break
            step *= 0.5
        W, b, loss, gW, gb = W_new, b_new, loss_new, gW_new, gb_new
    else:
        it = max_iter
    return LRModel(W=W, b=b, class_labels=labels, config=config,
                   n_iter=it, converged=converged)


def predict_proba(model: LRModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.W.shape[1]:
        raise ValueError(
            f"feature width {X.shape[1]} does not match model "
            f"width {model.W.shape[1]}")
    return _softmax(X @ model.W.T + model.b)


def top_k_accuracy(probs, y, class_labels, k: int = 1) -> float:
    """Fraction of rows whose true label is among the k most probable.

    Probability ties are broken by lower class index.
    """
    probs = np.asarray(probs)
    if k > probs.shape[1]:
        raise ValueError("k exceeds the number of classes")
    label_idx = {lab: i for i, lab in enumerate(class_labels)}
    y_idx = np.array([label_idx[v] for v in y])
    # stable sort on -prob keeps the lower class index first among ties
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    hits = (order == y_idx[:, None]).any(axis=1)
    return float(hits.mean())


@dataclass(frozen=True)
class SearchSpace:
    c_range: tuple = C_RANGE
    class_weights: tuple = CLASS_WEIGHTS
    penalties: tuple = PENALTIES
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def sample_config(space: SearchSpace, trial: int) -> LRConfig:
    rng = derive_rng(space.seed, "search", trial)
    lo, hi = np.log10(space.c_range[0]), np.log10(space.c_range[1])
    c = float(10.0 ** rng.uniform(lo, hi))
    cw = str(rng.choice(space.class_weights))
    pen = str(rng.choice(space.penalties))
    return LRConfig(C=c, class_weight=cw, penalty=pen)


def random_search(space: SearchSpace, X_train, y_train, X_val, y_val):
    """Sample configs, fit on train, score top-1 on validation.

    Returns (best_config, best_accuracy, trial log). The winning config is
    not refit on train + validation. Ties go to the earliest trial.
    """
    trials = []
    best = None
    for i in range(space.iterations):
        config = sample_config(space, i)
        model = fit(X_train, y_train, config)
        acc = top_k_accuracy(predict_proba(model, X_val), y_val,
                             model.class_labels, k=1)
        trials.append((i, config, acc))
        if best is None or acc > best[2]:
            best = (i, config, acc)
    return best[1], best[2], trials


def aggregate_track_probs(clip_probs, parent_ids):
    """Average clip probabilities per parent recording.

    Returns (sorted unique parent ids, row-stochastic matrix).
    """
    clip_probs = np.asarray(clip_probs, dtype=float)
    parents = sorted(set(parent_ids))
    parent_ids = list(parent_ids)
    out = np.zeros((len(parents), clip_probs.shape[1]))
    for i, pid in enumerate(parents):
        rows = [j for j, p in enumerate(parent_ids) if p == pid]
        out[i] = clip_probs[rows].mean(axis=0)
    return parents, out


def write_model(path, model: LRModel, vocabulary_hash: str = "") -> None:
    payload = {
        "class_labels": list(model.class_labels),
        "config": {"C": model.config.C,
                   "class_weight": model.config.class_weight,
                   "penalty": model.config.penalty},
        "b": model.b.tolist(),
        "W": model.W.ravel(order="C").tolist(),
        "n_features": model.W.shape[1],
        "vocabulary_hash": vocabulary_hash,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def read_model(path) -> LRModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    labels = tuple(payload["class_labels"])
    d = payload["n_features"]
    W = np.array(payload["W"], dtype=float).reshape(len(labels), d)
    return LRModel(W=W, b=np.array(payload["b"], dtype=float),
                   class_labels=labels,
                   config=LRConfig(**payload["config"]))


def write_trial_log(path, trials) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trial", "C", "class_weight", "penalty", "val_top1"])
        for i, config, acc in trials:
            writer.writerow([i, repr(config.C), config.class_weight,
                             config.penalty, repr(acc)])
