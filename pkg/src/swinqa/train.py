"""Optimization and evaluation: AdamW with decoupled weight decay, linear
warmup/decay scheduling, gradient accumulation, exact tie-aware AUC, the
training loop, and a binary checkpoint format with byte-exact round trips.

Every random stream in the loop is keyed by (seed, purpose, epoch, batch),
so runs are bit-reproducible and a resumed run continues exactly where a
straight-through run would be.
"""

from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .augment import AugConfig, prepare_batch
from .swin import (
    SwinConfig,
    count_params,
    forward,
    init_params,
    param_layout,
    preset,
    stochastic_depth_rates,
)
from .tensor import ShapeError, Tensor, backward, cross_entropy_soft, no_grad, softmax

# stochastic_depth_rates is re-exported here: the drop-path schedule is part
# of the training recipe even though the forward pass consumes it directly
stochastic_depth_rates = stochastic_depth_rates

MODE_DEFAULTS = {
    "finetune": {"base_lr": 6e-5, "epochs": 60, "warmup_epochs": 5},
    "scratch": {"base_lr": 5e-4, "epochs": 300, "warmup_epochs": 5},
}

# (batch_size, grad_accum_steps) presets keyed by attention window:
# window 8 pairs with the high-resolution task, window 7 with the 224 one
BATCH_PRESETS = {8: (16, 8), 7: (64, 2)}

HISTORY_COLUMNS = ("epoch", "train_loss", "val_acc", "val_auc", "lr")

MAGIC = b"SWQK"
FORMAT_VERSION = 1


class TrainAbort(RuntimeError):
    """Raised when the loop hits a non-finite loss; the message carries the
    epoch, optimizer step, and learning rate at the failure point."""


@dataclass
class TrainConfig:
    mode: str = "scratch"
    model: str = "micro"
    img_size: int | None = None
    window: int | None = None
    num_classes: int = 2
    base_lr: float | None = None        # None -> mode default
    weight_decay: float = 1e-8
    epochs: int | None = None           # None -> mode default
    warmup_epochs: int | None = None    # None -> mode default
    batch_size: int | None = None       # None -> window preset
    grad_accum_steps: int | None = None
    stop_epoch: int | None = None       # pause point; lr schedule still spans epochs
    drop_path_max: float | None = None  # None -> model preset value
    augment: bool = True
    seed: int = 0
    aug: AugConfig = field(default_factory=AugConfig)
    eval_batch_size: int = 64
    checkpoint_in: str | None = None
    checkpoint_out: str | None = None

    def __post_init__(self):
        if self.mode not in MODE_DEFAULTS:
            raise ValueError(f"mode must be one of {sorted(MODE_DEFAULTS)}, "
                             f"got {self.mode!r}")
        defaults = MODE_DEFAULTS[self.mode]
        if self.base_lr is None:
            self.base_lr = defaults["base_lr"]
        if self.epochs is None:
            self.epochs = defaults["epochs"]
        if self.warmup_epochs is None:
            self.warmup_epochs = defaults["warmup_epochs"]
        scfg = self.swin_config()  # validates model/img_size/window combination
        if self.batch_size is None or self.grad_accum_steps is None:
            b, a = BATCH_PRESETS.get(scfg.window, (16, 2))
            if self.batch_size is None:
                self.batch_size = b
            if self.grad_accum_steps is None:
                self.grad_accum_steps = a
        if self.base_lr < 0 or self.weight_decay < 0:
            raise ValueError("base_lr and weight_decay must be >= 0")
        if self.epochs < 1 or not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(
                f"need epochs >= 1 and 0 <= warmup < epochs, got "
                f"{self.warmup_epochs}/{self.epochs}")
        if self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ValueError("batch_size and grad_accum_steps must be >= 1")
        if self.stop_epoch is not None and not 1 <= self.stop_epoch <= self.epochs:
            raise ValueError("stop_epoch must be in [1, epochs]")
        if self.eval_batch_size < 1:
            raise ValueError("eval_batch_size must be >= 1")

    def swin_config(self) -> SwinConfig:
        cfg = preset(self.model, img_size=self.img_size, window=self.window,
                     num_classes=self.num_classes)
        if self.drop_path_max is not None:
            cfg = replace(cfg, drop_path_max=self.drop_path_max)
        return cfg


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimState:
    m: dict  # name -> first-moment array
    v: dict  # name -> second-moment array
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optim_state(params: dict) -> OptimState:
    return OptimState(m={k: np.zeros_like(p.data) for k, p in params.items()},
                      v={k: np.zeros_like(p.data) for k, p in params.items()})


def adamw_step(params: dict, grads: dict, state: OptimState, lr: float,
               wd: float) -> None:
    """One Adam update with decoupled weight decay, in place:
    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                             f"parameter has {p.data.shape}")
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        step = (m / bc1) / (np.sqrt(v / bc2) + state.eps) + wd * p.data
        p.data -= lr * step


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Piecewise-linear schedule: 0 -> base_lr over warmup_steps, then
    base_lr -> 0 over the remainder; equals base_lr exactly at
    step == warmup_steps."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(f"warmup_steps {warmup_steps} outside [0, {total_steps})")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


# ------------------------------------------------------------------ metrics


def auc_roc(scores, labels):
    """Probability that a random positive outscores a random negative, ties
    at 1/2 — computed in exact rational arithmetic over tie groups. Returns
    None when only one class is present."""
    scores = list(scores)
    labels = [int(y) for y in labels]
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores vs {len(labels)} labels")
    if any(y not in (0, 1) for y in labels):
        raise ValueError("labels must be 0 or 1")
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    wins = Fraction(0)
    neg_below = 0
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and scores[order[j]] == scores[order[i]]:
            j += 1
        group_pos = sum(labels[k] for k in order[i:j])
        group_neg = (j - i) - group_pos
        wins += group_pos * neg_below + Fraction(group_pos * group_neg, 2)
        neg_below += group_neg
        i = j
    return float(wins / (n_pos * n_neg))


def predictive_entropy(probs) -> float:
    """-sum(p ln p) in nats with 0 ln 0 = 0; input must sum to 1 within 1e-6."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"expected a 1-d distribution, got shape {p.shape}")
    if p.min() < -1e-12 or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"not a distribution: sum {p.sum()}, min {p.min()}")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class EvalReport:
    accuracy: float      # percent, 0.5 threshold on the positive-class score
    auc: float | None
    mean_loss: float
    samples: list        # per-sample dicts: score, label, entropy
    confusion: dict      # tp / fp / tn / fn counts


def evaluate(cfg: SwinConfig, params: dict, records, aug_cfg: AugConfig | None = None,
             batch_size: int = 64) -> EvalReport:
    """Eval-mode forward over records: positive score = softmax(logits)[1],
    accuracy at a 0.5 threshold, exact AUC, per-sample entropy."""
    records = list(records)
    if not records:
        raise ValueError("cannot evaluate an empty dataset")
    aug_cfg = aug_cfg if aug_cfg is not None else AugConfig()
    scores, labels, entropies = [], [], []
    loss_sum = 0.0
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        images = [r.image for r in chunk]
        ys = [r.label for r in chunk]
        x, soft = prepare_batch(images, ys, aug_cfg, "eval", cfg.img_size)
        with no_grad():
            logits = forward(x, cfg, params)
            loss = cross_entropy_soft(logits, Tensor(soft))
            probs = softmax(logits).data
        loss_sum += float(loss.data) * len(chunk)
        for k in range(len(chunk)):
            scores.append(float(probs[k, 1]))
            labels.append(int(ys[k]))
            entropies.append(predictive_entropy(probs[k]))
    preds = [1 if s > 0.5 else 0 for s in scores]
    tp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 1)
    fp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 0)
    tn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 0)
    fn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 1)
    samples = [{"score": s, "label": y, "entropy": e}
               for s, y, e in zip(scores, labels, entropies)]
    return EvalReport(accuracy=100.0 * (tp + tn) / len(records),
                      auc=auc_roc(scores, labels),
                      mean_loss=loss_sum / len(records),
                      samples=samples,
                      confusion={"tp": tp, "fp": fp, "tn": tn, "fn": fn})


# -------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: SwinConfig
    params: dict                    # name -> Tensor
    optim: OptimState | None = None
    epoch: int = 0                  # epochs completed
    rng_state: dict | None = None
    history: list = field(default_factory=list)
    best_params: dict | None = None  # name -> float32 array snapshot
    best_epoch: int | None = None


def _config_dict(cfg: SwinConfig) -> dict:
    return {"img_size": cfg.img_size, "embed_dim": cfg.embed_dim,
            "depths": list(cfg.depths), "heads": list(cfg.heads),
            "window": cfg.window, "drop_path_max": cfg.drop_path_max,
            "mlp_ratio": cfg.mlp_ratio, "num_classes": cfg.num_classes,
            "patch_size": cfg.patch_size, "in_channels": cfg.in_channels}


def _config_from_dict(d: dict) -> SwinConfig:
    return SwinConfig(img_size=d["img_size"], embed_dim=d["embed_dim"],
                      depths=tuple(d["depths"]), heads=tuple(d["heads"]),
                      window=d["window"], drop_path_max=d["drop_path_max"],
                      mlp_ratio=d["mlp_ratio"], num_classes=d["num_classes"],
                      patch_size=d["patch_size"], in_channels=d["in_channels"])


def _directory_entries(ckpt: Checkpoint) -> list:
    """Canonical (name, array) order: model parameters in layout order, then
    optimizer moments, then the best-model snapshot."""
    layout = param_layout(ckpt.config)
    entries = []
    for name, shape in layout:
        if name not in ckpt.params:
            raise ValueError(f"checkpoint is missing parameter {name}")
        arr = ckpt.params[name].data
        if arr.shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
        entries.append((name, arr))
    if ckpt.optim is not None:
        for name, _ in layout:
            entries.append((f"optim.m.{name}", ckpt.optim.m[name]))
        for name, _ in layout:
            entries.append((f"optim.v.{name}", ckpt.optim.v[name]))
    if ckpt.best_params is not None:
        for name, _ in layout:
            entries.append((f"best.{name}", ckpt.best_params[name]))
    return entries


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """Layout: b"SWQK", format version (u32 LE), header length (u32 LE),
    UTF-8 JSON header, then raw little-endian float32 arrays at the offsets
    recorded in the header's tensor directory."""
    entries = _directory_entries(ckpt)
    directory = {}
    blobs = []
    offset = 0
    for name, arr in entries:
        raw = np.ascontiguousarray(arr).astype("<f4").tobytes()
        directory[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION,
              "config": _config_dict(ckpt.config),
              "epoch": ckpt.epoch,
              "best_epoch": ckpt.best_epoch,
              "rng_state": ckpt.rng_state,
              "history": ckpt.history,
              "optim": None if ckpt.optim is None else
                  {"t": ckpt.optim.t, "beta1": ckpt.optim.beta1,
                   "beta2": ckpt.optim.beta2, "eps": ckpt.optim.eps},
              "tensors": directory}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version = struct.unpack("<I", f.read(4))[0]
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        header = json.loads(f.read(struct.unpack("<I", f.read(4))[0]).decode())
        data = f.read()
    cfg = _config_from_dict(header["config"])
    tensors = {}
    for name, entry in header["tensors"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = data[entry["offset"]:entry["offset"] + 4 * count]
        if len(raw) != 4 * count:
            raise ValueError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    layout = param_layout(cfg)
    params = {}
    total = 0
    for name, shape in layout:
        if name not in tensors:
            raise ValueError(f"{path}: missing tensor {name}")
        if tensors[name].shape != shape:
            raise ValueError(f"{path}: {name} has shape {tensors[name].shape}, "
                             f"expected {shape}")
        params[name] = Tensor(tensors[name], requires_grad=True)
        total += tensors[name].size
    if total != count_params(cfg):
        raise ValueError(f"{path}: {total} parameters on file, config implies "
                         f"{count_params(cfg)}")
    optim = None
    if header["optim"] is not None:
        o = header["optim"]
        optim = OptimState(m={n: tensors[f"optim.m.{n}"] for n, _ in layout},
                           v={n: tensors[f"optim.v.{n}"] for n, _ in layout},
                           t=o["t"], beta1=o["beta1"], beta2=o["beta2"],
                           eps=o["eps"])
    best = None
    if header["best_epoch"] is not None:
        best = {n: tensors[f"best.{n}"] for n, _ in layout}
    return Checkpoint(config=cfg, params=params, optim=optim,
                      epoch=header["epoch"], rng_state=header["rng_state"],
                      history=header["history"], best_params=best,
                      best_epoch=header["best_epoch"])


def write_history_csv(path: str, history) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow(["" if row[c] is None else row[c]
                             for c in HISTORY_COLUMNS])


# ------------------------------------------------------------ training loop


def _rng_for(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def train(cfg: TrainConfig, train_records, val_records, log=None) -> Checkpoint:
    """Run the configured recipe; returns (and optionally writes) the final
    checkpoint, whose best.* snapshot holds the weights of the epoch with
    the highest (val AUC, val accuracy)."""
    scfg = cfg.swin_config()
    train_records = list(train_records)
    val_records = list(val_records)
    if not train_records or not val_records:
        raise ValueError("train and val splits must be nonempty")

    if cfg.checkpoint_in:
        ckpt = load_checkpoint(cfg.checkpoint_in)
        if ckpt.config != scfg:
            raise ValueError("checkpoint config does not match the train config")
        params = ckpt.params
        optim = ckpt.optim if ckpt.optim is not None else init_optim_state(params)
        start_epoch = ckpt.epoch
        history = list(ckpt.history)
        best_epoch = ckpt.best_epoch
        best_params = ckpt.best_params
        best_key = None
        if best_epoch is not None:
            row = next(r for r in history if r["epoch"] == best_epoch)
            best_key = (row["val_auc"] if row["val_auc"] is not None else -1.0,
                        row["val_acc"])
    else:
        params = init_params(scfg, _rng_for(cfg.seed, 0))
        optim = init_optim_state(params)
        start_epoch = 0
        history = []
        best_epoch, best_params, best_key = None, None, None

    names = [n for n, _ in param_layout(scfg)]
    n = len(train_records)
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    steps_per_epoch = math.ceil(batches_per_epoch / cfg.grad_accum_steps)
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = steps_per_epoch * cfg.warmup_epochs
    end_epoch = cfg.epochs if cfg.stop_epoch is None else cfg.stop_epoch

    for epoch in range(start_epoch, end_epoch):
        order = _rng_for(cfg.seed, 1, epoch).permutation(n)
        acc_grads = {nm: np.zeros_like(params[nm].data) for nm in names}
        acc_count = 0
        step_in_epoch = 0
        loss_sum = 0.0
        last_lr = 0.0
        for b in range(batches_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            images = [train_records[i].image for i in idx]
            ys = [train_records[i].label for i in idx]
            if cfg.augment:
                x, soft = prepare_batch(images, ys, cfg.aug, "train", scfg.img_size,
                                        rng=_rng_for(cfg.seed, 2, epoch, b),
                                        num_classes=scfg.num_classes)
            else:
                x, soft = prepare_batch(images, ys, cfg.aug, "eval", scfg.img_size,
                                        num_classes=scfg.num_classes)
            logits = forward(x, scfg, params, training=True,
                             rng=_rng_for(cfg.seed, 3, epoch, b))
            loss = cross_entropy_soft(logits, Tensor(soft))
            loss_val = float(loss.data)
            step = epoch * steps_per_epoch + step_in_epoch
            lr = lr_at(step, total_steps, warmup_steps, cfg.base_lr)
            if not math.isfinite(loss_val):
                raise TrainAbort(f"non-finite loss {loss_val} at epoch {epoch + 1}, "
                                 f"step {step}, lr {lr:.6g}")
            backward(loss)
            for nm in names:
                acc_grads[nm] += params[nm].grad
                params[nm].grad = None
            acc_count += 1
            loss_sum += loss_val * len(idx)
            if acc_count == cfg.grad_accum_steps or b == batches_per_epoch - 1:
                for nm in names:
                    acc_grads[nm] /= acc_count
                adamw_step(params, acc_grads, optim, lr, cfg.weight_decay)
                acc_grads = {nm: np.zeros_like(params[nm].data) for nm in names}
                acc_count = 0
                step_in_epoch += 1
                last_lr = lr
        report = evaluate(scfg, params, val_records, cfg.aug,
                          batch_size=cfg.eval_batch_size)
        row = {"epoch": epoch + 1, "train_loss": loss_sum / n,
               "val_acc": report.accuracy, "val_auc": report.auc, "lr": last_lr}
        history.append(row)
        key = (report.auc if report.auc is not None else -1.0, report.accuracy)
        if best_key is None or key > best_key:
            best_key = key
            best_epoch = epoch + 1
            best_params = {nm: params[nm].data.astype("<f4", copy=True)
                           for nm in names}
        if log is not None:
            auc_s = "n/a" if report.auc is None else f"{report.auc:.4f}"
            log(f"epoch {epoch + 1}/{cfg.epochs}  loss {row['train_loss']:.4f}  "
                f"val_acc {report.accuracy:.2f}%  val_auc {auc_s}  lr {last_lr:.3g}")

    ckpt = Checkpoint(config=scfg, params=params, optim=optim, epoch=end_epoch,
                      rng_state={"scheme": "keyed-streams", "seed": cfg.seed,
                                 "next_epoch": end_epoch},
                      history=history, best_params=best_params,
                      best_epoch=best_epoch)
    if cfg.checkpoint_out:
        save_checkpoint(cfg.checkpoint_out, ckpt)
    return ckpt


# ---------------------------------------------------------------- benchmark


@dataclass
class ThroughputReport:
    images_per_sec: float
    median_s: float
    iqr_s: float
    batch_size: int
    n_warmup: int
    n_timed: int


def throughput(cfg: SwinConfig, batch_size: int, n_warmup: int = 3,
               n_timed: int = 10, params: dict | None = None) -> ThroughputReport:
    """Median wall-clock time of eval-mode forward passes, warmup excluded.
    Numbers are hardware-local; nothing compares them across machines."""
    if n_timed < 10:
        raise ValueError("n_timed must be >= 10")
    if batch_size < 1 or n_warmup < 0:
        raise ValueError("batch_size must be >= 1 and n_warmup >= 0")
    if params is None:
        params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).random((batch_size, cfg.img_size, cfg.img_size, 3))
    times = []
    with no_grad():
        for i in range(n_warmup + n_timed):
            t0 = time.perf_counter()
            forward(x, cfg, params)
            dt = time.perf_counter() - t0
            if i >= n_warmup:
                times.append(dt)
    med = float(np.median(times))
    q1, q3 = np.percentile(times, [25, 75])
    return ThroughputReport(images_per_sec=batch_size / med, median_s=med,
                            iqr_s=float(q3 - q1), batch_size=batch_size,
                            n_warmup=n_warmup, n_timed=n_timed)
