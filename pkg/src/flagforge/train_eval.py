"""Training loop, dataset splitting, macro metrics and run-directory output."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import nn_core as nn
from .errors import ConfigMismatch, EmptyDataset, LabelOutOfRange
from .flag import DEFAULT_COVERAGE, Flag
from .model import (
    DEFAULT_CLASSES,
    Model,
    ModelConfig,
    flag_token_ids,
    forward_logits,
    init_params,
    make_batch,
    param_shapes,
)
from .nn_core import AdamState, Tensor
from .tokenizer import DEFAULT_VOCAB_SIZE, BpeVocab, train_bpe

log = logging.getLogger(__name__)

# Hyperparameter search ranges; values outside only trigger a warning.
SEARCH_RANGES = {
    "lr": (1e-5, 1e-3),
    "weight_decay": (1e-5, 1e-3),
    "batch_size": (32, 64),
    "dropout_gnn": (0.3, 0.5),
    "dropout_clf": (0.3, 0.5),
    "coverage": (1, 5),
}
CHECKPOINT_POLICIES = ("best_val_macro_f1", "last")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 64
    max_epochs: int = 500
    seed: int = 42
    coverage: int = DEFAULT_COVERAGE
    classes: Tuple[str, ...] = DEFAULT_CLASSES
    dropout_gnn: float = 0.5
    dropout_clf: float = 0.3
    checkpoint_policy: str = "best_val_macro_f1"
    class_weighting: bool = False
    patience: Optional[int] = None
    vocab_size: int = DEFAULT_VOCAB_SIZE
    split_ratios: Tuple[float, float, float] = (0.5, 0.25, 0.25)
    split_seed: int = 42
    track_eval_loss: bool = False
    # architecture (defaults are the full-size network)
    embed_dim: int = 512
    sage_dims: Tuple[int, ...] = (1024, 1024, 1024)
    gat_dims: Tuple[int, ...] = (1024, 1024, 1024)
    gat_heads: Tuple[int, ...] = (4, 1, 1)
    clf_dims: Tuple[int, ...] = (1024, 1024)
    leaky_slope: float = 0.2

    def __post_init__(self):
        for name in ("classes", "split_ratios", "sage_dims", "gat_dims", "gat_heads", "clf_dims"):
            setattr(self, name, tuple(getattr(self, name)))

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def validate(self) -> List[str]:
        """Raise ValueError on invalid settings; return warnings for out-of-range ones."""
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.coverage < 1:
            raise ValueError("coverage must be >= 1")
        if self.class_count < 2 or len(set(self.classes)) != self.class_count:
            raise ValueError("need at least two distinct class names")
        if not all(0.0 <= p < 1.0 for p in (self.dropout_gnn, self.dropout_clf)):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.checkpoint_policy not in CHECKPOINT_POLICIES:
            raise ValueError(f"checkpoint_policy must be one of {CHECKPOINT_POLICIES}")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split_ratios must be three numbers summing to 1")
        warnings = []
        for key, (lo, hi) in SEARCH_RANGES.items():
            val = getattr(self, key)
            if not lo <= val <= hi:
                warnings.append(f"{key}={val} outside explored range [{lo}, {hi}]")
        return warnings

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            num_classes=self.class_count,
            embed_dim=self.embed_dim,
            sage_dims=self.sage_dims,
            gat_dims=self.gat_dims,
            gat_heads=self.gat_heads,
            clf_dims=self.clf_dims,
            dropout_gnn=self.dropout_gnn,
            dropout_clf=self.dropout_clf,
            leaky_slope=self.leaky_slope,
        )

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


# ------------------------------------------------------------------ metrics


@dataclass
class Metrics:
    per_class: List[Tuple[float, float, float, int]]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: List[List[int]]

    def to_json(self) -> dict:
        return {
            "per_class": [list(r) for r in self.per_class],
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
        }


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    """Per-class P/R/F1 (0 on zero denominators) and their unweighted means."""
    confusion = np.asarray(confusion, dtype=np.int64)
    per_class = []
    for c in range(confusion.shape[0]):
        tp = int(confusion[c, c])
        fp = int(confusion[:, c].sum()) - tp
        fn = int(confusion[c, :].sum()) - tp
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        f1 = _ratio(2 * p * r, p + r)
        per_class.append((p, r, f1, tp + fn))
    k = len(per_class)
    return Metrics(
        per_class=per_class,
        macro_precision=sum(x[0] for x in per_class) / k,
        macro_recall=sum(x[1] for x in per_class) / k,
        macro_f1=sum(x[2] for x in per_class) / k,
        confusion=confusion.tolist(),
    )


def compute_metrics(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> Metrics:
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return metrics_from_confusion(confusion)


# ------------------------------------------------------------------ splitting


def split_dataset(
    flags: Sequence[Flag], ratios: Sequence[float] = (0.5, 0.25, 0.25), seed: int = 42
) -> Tuple[List[Flag], List[Flag], List[Flag]]:
    """Contract-grouped split: every FLAG of one source file lands in one part."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three numbers summing to 1")
    contracts = sorted({f.source_path for f in flags})
    order = np.random.default_rng(seed).permutation(len(contracts))
    n = len(contracts)
    # largest-remainder allocation of contract counts
    raw = [r * n for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    rest = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in rest[: n - sum(counts)]:
        counts[i] += 1
    part_of = {}
    pos = 0
    for part, cnt in enumerate(counts):
        for j in order[pos : pos + cnt]:
            part_of[contracts[j]] = part
        pos += cnt
    out: Tuple[List[Flag], List[Flag], List[Flag]] = ([], [], [])
    for f in flags:
        out[part_of[f.source_path]].append(f)
    return out


# ------------------------------------------------------------------ training


def label_indices(flags: Sequence[Flag], classes: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    out = []
    for f in flags:
        if f.label not in index:
            raise LabelOutOfRange(
                f"{f.source_path}:{f.function_name} has label {f.label!r}, not in {list(classes)}"
            )
        out.append(index[f.label])
    return np.asarray(out, dtype=np.int64)


@dataclass
class TrainResult:
    model: Model
    history: List[dict]
    best_epoch: int
    adam: AdamState
    train_config: TrainConfig


class _Encoded:
    """FLAGs with their token ids cached once."""

    def __init__(self, flags: Sequence[Flag], vocab: BpeVocab, classes: Sequence[str]):
        self.flags = list(flags)
        self.tokens = [flag_token_ids(f, vocab) for f in self.flags]
        self.labels = label_indices(self.flags, classes) if self.flags else np.zeros(0, dtype=np.int64)

    def __len__(self):
        return len(self.flags)

    def batch(self, idx, vocab_size):
        return make_batch(
            [self.flags[i] for i in idx], vocab_size, [self.tokens[i] for i in idx], self.labels[idx]
        )


def _predict(params, mcfg: ModelConfig, data: _Encoded, batch_size: int) -> Tuple[np.ndarray, float]:
    preds = []
    loss_sum = 0.0
    for i in range(0, len(data), batch_size):
        idx = np.arange(i, min(i + batch_size, len(data)))
        b = data.batch(idx, mcfg.vocab_size)
        logits = forward_logits(b, params, mcfg, train=False)
        loss_sum += float(nn.cross_entropy(logits, b.labels).data) * len(idx)
        preds.append(np.argmax(logits.data, axis=1))
    if not preds:
        return np.zeros(0, dtype=np.int64), 0.0
    return np.concatenate(preds), loss_sum / len(data)


def train(
    train_flags: Sequence[Flag],
    val_flags: Sequence[Flag],
    cfg: TrainConfig,
    vocab: Optional[BpeVocab] = None,
) -> TrainResult:
    """Mini-batch Adam training with best-validation-macro-F1 selection.

    The tokenizer is fit on the training FLAGs when ``vocab`` is not given.
    """
    if not train_flags:
        raise EmptyDataset("training set is empty")
    cfg.validate()
    if vocab is None:
        vocab = train_bpe((t for f in train_flags for t in f.texts), cfg.vocab_size)
    mcfg = cfg.model_config(vocab.vocab_size)
    tr = _Encoded(train_flags, vocab, cfg.classes)
    va = _Encoded(val_flags, vocab, cfg.classes)

    params = init_params(mcfg, cfg.seed)
    adam = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    class_weights = None
    if cfg.class_weighting:
        counts = np.bincount(tr.labels, minlength=cfg.class_count).astype(float)
        class_weights = np.where(counts > 0, len(tr) / (cfg.class_count * np.maximum(counts, 1)), 0.0)

    use_val = cfg.checkpoint_policy == "best_val_macro_f1" and len(va) > 0
    best = {k: p.data.copy() for k, p in params.items()}
    best_f1 = -1.0
    best_epoch = 0
    stale = 0
    history: List[dict] = []
    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(len(tr))
        loss_sum = 0.0
        for start in range(0, len(tr), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            b = tr.batch(idx, mcfg.vocab_size)
            for p in params.values():
                p.grad = None
            logits = forward_logits(b, params, mcfg, train=True, rng=dropout_rng)
            loss = nn.cross_entropy(logits, b.labels, class_weights)
            nn.backward(loss)
            nn.adam_step(
                {k: p.data for k, p in params.items()},
                {k: p.grad for k, p in params.items() if p.grad is not None},
                adam,
            )
            loss_sum += float(loss.data) * len(idx)
        entry = {"epoch": epoch, "loss": loss_sum / len(tr)}
        if use_val:
            preds, _ = _predict(params, mcfg, va, cfg.batch_size)
            entry["val_macro_f1"] = compute_metrics(va.labels, preds, cfg.class_count).macro_f1
        else:
            entry["val_macro_f1"] = None
        if cfg.track_eval_loss:
            entry["eval_loss"] = _predict(params, mcfg, tr, cfg.batch_size)[1]
        history.append(entry)
        log.info("epoch %d loss %.6f val_macro_f1 %s", epoch, entry["loss"], entry["val_macro_f1"])

        if use_val:
            if entry["val_macro_f1"] > best_f1:
                best_f1, best_epoch, stale = entry["val_macro_f1"], epoch, 0
                best = {k: p.data.copy() for k, p in params.items()}
            else:
                stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
        else:
            best_epoch = epoch

    if use_val:
        for k, p in params.items():
            p.data = best[k]
    model = Model(mcfg, params, vocab, cfg.classes)
    return TrainResult(model, history, best_epoch, adam, cfg)


def evaluate(model: Model, flags: Sequence[Flag], batch_size: int = 64) -> Metrics:
    data = _Encoded(flags, model.vocab, model.classes)
    preds, _ = _predict(model.params, model.cfg, data, batch_size)
    return compute_metrics(data.labels, preds, model.cfg.num_classes)


# ------------------------------------------------------------------ checkpoints


def save_model(path, model: Model, adam: Optional[AdamState] = None, extra: Optional[dict] = None) -> None:
    header = {
        "config": model.cfg.to_json(),
        "config_hash": model.cfg.digest(),
        "classes": model.classes,
        "vocab": model.vocab.to_json(),
    }
    if adam is not None:
        header["adam"] = {
            "step": adam.step,
            "lr": adam.lr,
            "betas": list(adam.betas),
            "eps": adam.eps,
            "weight_decay": adam.weight_decay,
        }
    if extra:
        header.update(extra)
    nn.save_checkpoint(path, {k: p.data for k, p in model.params.items()}, header)


def load_model(path, expected_config_hash: Optional[str] = None) -> Model:
    arrays, header = nn.load_checkpoint(path)
    cfg = ModelConfig.from_json(header["config"])
    if cfg.digest() != header.get("config_hash"):
        raise ConfigMismatch(f"{path}: stored config hash does not match its config")
    if expected_config_hash is not None and expected_config_hash != cfg.digest():
        raise ConfigMismatch(f"{path}: config hash {cfg.digest()[:12]} != expected {expected_config_hash[:12]}")
    vocab = BpeVocab.from_json(header["vocab"])
    if vocab.vocab_size != cfg.vocab_size:
        raise ConfigMismatch(f"{path}: vocab has {vocab.vocab_size} tokens, config expects {cfg.vocab_size}")
    shapes = param_shapes(cfg)
    if set(shapes) != set(arrays) or any(tuple(arrays[k].shape) != s for k, s in shapes.items()):
        raise ConfigMismatch(f"{path}: parameter tensors do not match the config")
    params = {k: Tensor(arrays[k], requires_grad=True, name=k) for k in shapes}
    return Model(cfg, params, vocab, header["classes"])


# ------------------------------------------------------------------ run dirs


def dataset_hash(flags: Sequence[Flag]) -> str:
    h = hashlib.sha256()
    for f in flags:
        h.update(f.dumps().encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(flags: Sequence[Flag], cfg: TrainConfig, out_dir) -> dict:
    """Split, train, evaluate and write one run directory; returns metrics.json content."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    labeled = [f for f in flags if f.label is not None]
    if not labeled:
        raise EmptyDataset("no labeled FLAGs in dataset")
    train_set, val_set, test_set = split_dataset(labeled, cfg.split_ratios, cfg.split_seed)
    result = train(train_set, val_set, cfg)
    model = result.model

    _dump(out / "config.json", cfg.to_json())
    model.vocab.save(out / "vocab.json")
    save_model(out / "checkpoints" / "best.bin", model, result.adam, {"seed": cfg.seed, "coverage": labeled[0].coverage})
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for entry in result.history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    metrics = {
        "seed": cfg.seed,
        "config_hash": model.cfg.digest(),
        "dataset_hash": dataset_hash(labeled),
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "split_sizes": {"train": len(train_set), "val": len(val_set), "test": len(test_set)},
    }
    for name, part in (("train", train_set), ("val", val_set), ("test", test_set)):
        metrics[name] = evaluate(model, part).to_json() if part else None
    _dump(out / "metrics.json", metrics)
    _dump(out / "seeds.json", {"seed": cfg.seed, "split_seed": cfg.split_seed})
    return metrics
