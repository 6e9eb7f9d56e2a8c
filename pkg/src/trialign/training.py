"""Projection-head training: epochs, batching, validation, early stopping,
checkpointing, and deterministic reruns.

One optimizer step processes one effective batch (optionally split into
micro-batches whose gradients are averaged; InfoNCE over micro-batches is an
approximation of the full-batch loss and is only used when asked for).
Validation loss is computed over the full validation split as a single
contrastive batch in eval mode. Training with a fixed seed in a fixed
environment is bit-reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError, TrainError
from .heads import PARAM_NAMES, ProjectionHead, backward, forward, init_head
from .losses import (LossBreakdown, LossVariant, l2_normalize_backward,
                     l2_normalize_rows, total_loss, vl_ts_loss)
from .optim import (Schedule, accumulate, adamw_step, clip_global_norm,
                    init_optim_state, lr_at)
from .store import (EmbeddingSet, TENSOR_TAG, TripletManifest,
                    container_bytes, container_from_bytes, join_triplets,
                    load_manifest)

CHECKPOINT_META = "meta.json"


@dataclass
class RunConfig:
    """Full training/evaluation configuration; serialized to config.json."""

    run_name: str = "run"
    loss_variant: str = "trimodal"
    tau: float = 0.2
    base_lr: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 50
    batch_size: int = 256
    grad_accum_steps: int = 1
    warmup_frac: float = 0.02
    clip_norm: float = 1.0
    patience: int = 5
    d_out: int = 1024
    dropout_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    manifest: str | None = None
    out_dir: str | None = None
    encoders: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        LossVariant.parse(self.loss_variant)
        positive = {"tau": self.tau, "base_lr": self.base_lr, "clip_norm": self.clip_norm}
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be > 0, got {value}")
        at_least_one = {"epochs": self.epochs, "batch_size": self.batch_size,
                        "grad_accum_steps": self.grad_accum_steps,
                        "patience": self.patience, "d_out": self.d_out}
        for name, value in at_least_one.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError(f"warmup_frac must be in [0, 1], got {self.warmup_frac}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size % self.grad_accum_steps != 0:
            raise ConfigError(
                f"batch_size {self.batch_size} not divisible by grad_accum_steps "
                f"{self.grad_accum_steps}"
            )
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return RunConfig(**doc).validate()


@dataclass
class EpochRecord:
    epoch: int
    train: LossBreakdown
    val: LossBreakdown
    lr_last: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = "completed"
    lr_trace: list[float] = field(default_factory=list)
    total_steps: int = 0


class EarlyStopper:
    """Strict-improvement early stopping on validation loss."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.epoch = 0
        self.streak = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; returns True on improvement."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.streak = 0
            return True
        self.streak += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.streak >= self.patience


def run_early_stopping(val_losses, patience: int) -> tuple[int, int]:
    """Apply the stopping rule to a full loss sequence.

    Returns (epochs_run, best_epoch), both 1-based.
    """
    stopper = EarlyStopper(patience)
    for loss in val_losses:
        stopper.update(loss)
        if stopper.should_stop:
            break
    return stopper.epoch, stopper.best_epoch


def _compute_loss(z: dict[str, np.ndarray], variant: LossVariant,
                  tau: float) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    if variant.kind == "vl_ts":
        return vl_ts_loss(z["ts"], z["vl"], z["img"], z["txt"], tau)
    return total_loss(z.get("ts"), z.get("img"), z.get("txt"), tau=tau, variant=variant)


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    from .losses import PairLoss
    out = LossBreakdown(tau=parts[0].tau)
    for pair in parts[0].pairs:
        out.pairs[pair] = PairLoss(
            forward=float(np.mean([p.pairs[pair].forward for p in parts])),
            reverse=float(np.mean([p.pairs[pair].reverse for p in parts])),
        )
    out.total = float(np.mean([p.total for p in parts]))
    return out


def _eval_loss(heads: dict[str, ProjectionHead], sets: dict[str, EmbeddingSet],
               variant: LossVariant, tau: float) -> LossBreakdown:
    z = {}
    for mod, head in heads.items():
        raw, _ = forward(head, sets[mod].data, mode="eval")
        z[mod], _ = l2_normalize_rows(raw.astype(np.float64))
    breakdown, _ = _compute_loss(z, variant, tau)
    return breakdown


def train(config: RunConfig, data) -> tuple[dict[str, ProjectionHead], TrainLog]:
    """Train one projection head per modality; returns best-epoch heads + log."""
    config.validate()
    manifest = data if isinstance(data, TripletManifest) else load_manifest(data)
    variant = LossVariant.parse(config.loss_variant)
    modalities = variant.modalities()

    train_sets = join_triplets(manifest, "train", modalities)
    val_sets = join_triplets(manifest, "val", modalities)

    n_train = next(iter(train_sets.values())).n
    batch = config.batch_size
    if batch > n_train:
        raise ConfigError(f"batch_size {batch} exceeds training set size {n_train}")
    micro = batch // config.grad_accum_steps
    steps_per_epoch = n_train // batch
    total_steps = config.epochs * steps_per_epoch
    schedule = Schedule(config.base_lr, total_steps,
                        warmup_steps=round(config.warmup_frac * total_steps))

    seeds = np.random.SeedSequence(config.seed).spawn(len(modalities) + 2)
    heads = {
        mod: init_head(train_sets[mod].dim, config.d_out, config.dropout_rate, seed=seeds[i])
        for i, mod in enumerate(modalities)
    }
    rng_shuffle = np.random.default_rng(seeds[-2])
    rng_dropout = np.random.default_rng(seeds[-1])

    params = {f"{mod}/{name}": arr
              for mod, head in heads.items()
              for name, arr in head.parameters().items()}
    decay_keys = [k for k in params if k.endswith("/W1") or k.endswith("/W2")]
    opt_state = init_optim_state(params, beta1=config.beta1, beta2=config.beta2,
                                 eps=config.adam_eps, weight_decay=config.weight_decay,
                                 decay_keys=decay_keys)

    log = TrainLog(total_steps=total_steps)
    stopper = EarlyStopper(config.patience)
    best_heads = {mod: head.copy() for mod, head in heads.items()}
    global_step = 0

    for epoch in range(1, config.epochs + 1):
        perm = rng_shuffle.permutation(n_train)
        batch_breakdowns = []
        lr = 0.0
        for step_in_epoch in range(steps_per_epoch):
            idx = perm[step_in_epoch * batch:(step_in_epoch + 1) * batch]
            micro_grads = []
            micro_parts = []
            for m_i in range(config.grad_accum_steps):
                midx = idx[m_i * micro:(m_i + 1) * micro]
                z, caches, norms = {}, {}, {}
                for mod in modalities:
                    raw, caches[mod] = forward(heads[mod], train_sets[mod].data[midx],
                                               mode="train", rng=rng_dropout)
                    z[mod], norms[mod] = l2_normalize_rows(raw.astype(np.float64))
                breakdown, z_grads = _compute_loss(z, variant, config.tau)
                if not np.isfinite(breakdown.total):
                    raise TrainError(
                        f"non-finite loss at epoch {epoch}, step {global_step}"
                    )
                grads = {}
                for mod, d_z in z_grads.items():
                    d_raw = l2_normalize_backward(z[mod], norms[mod], d_z)
                    head_grads, _ = backward(heads[mod], caches[mod],
                                             d_raw.astype(heads[mod].W1.dtype))
                    for name, g in head_grads.as_dict().items():
                        grads[f"{mod}/{name}"] = g
                micro_grads.append(grads)
                micro_parts.append(breakdown)
            step_grads = accumulate(micro_grads) if config.grad_accum_steps > 1 else micro_grads[0]
            step_grads, _ = clip_global_norm(step_grads, config.clip_norm)
            lr = lr_at(schedule, global_step)
            params, opt_state = adamw_step(params, step_grads, opt_state, lr)
            for mod in modalities:
                heads[mod].load_parameters(
                    {name: params[f"{mod}/{name}"] for name in PARAM_NAMES})
            log.lr_trace.append(lr)
            global_step += 1
            batch_breakdowns.append(_mean_breakdown(micro_parts))

        train_breakdown = _mean_breakdown(batch_breakdowns)
        val_breakdown = _eval_loss(heads, val_sets, variant, config.tau)
        if not np.isfinite(val_breakdown.total):
            raise TrainError(f"non-finite validation loss at epoch {epoch}")
        if stopper.update(val_breakdown.total):
            best_heads = {mod: head.copy() for mod, head in heads.items()}
        log.epochs.append(EpochRecord(epoch, train_breakdown, val_breakdown, lr))
        if stopper.should_stop:
            log.stop_reason = "early_stopping"
            break

    log.best_epoch = stopper.best_epoch
    return best_heads, log


def evaluate_checkpoint(heads: dict[str, ProjectionHead], data, split: str,
                        modalities=None) -> dict[str, EmbeddingSet]:
    """Eval-mode projection + row normalization for every sample of a split."""
    manifest = data if isinstance(data, TripletManifest) else load_manifest(data)
    mods = tuple(modalities) if modalities is not None else tuple(heads)
    sets = join_triplets(manifest, split, mods)
    out = {}
    for mod in mods:
        raw, _ = forward(heads[mod], sets[mod].data, mode="eval")
        z, _ = l2_normalize_rows(raw.astype(np.float64))
        out[mod] = EmbeddingSet(mod, z.astype(np.float32), list(sets[mod].ids))
    return out


def save_checkpoint(path, heads: dict[str, ProjectionHead], meta: dict | None = None) -> None:
    """Zip of TRIEMB01 containers (one per parameter tensor) plus meta.json."""
    meta = dict(meta or {})
    meta["heads"] = {
        mod: {"d_in": head.d_in, "m": head.m, "d_out": head.d_out,
              "dropout_rate": head.dropout_rate}
        for mod, head in heads.items()
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(CHECKPOINT_META, json.dumps(meta, indent=2, sort_keys=True) + "\n")
        for mod in sorted(heads):
            for name, arr in heads[mod].parameters().items():
                matrix = arr if arr.ndim == 2 else arr[None, :]
                ids = [str(i) for i in range(matrix.shape[0])]
                zf.writestr(f"{mod}/{name}.emb", container_bytes(TENSOR_TAG, matrix, ids))


def load_checkpoint(path) -> tuple[dict[str, ProjectionHead], dict]:
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError) as exc:
        raise FormatError(f"{path}: not a checkpoint archive ({exc})") from exc
    with zf:
        try:
            meta = json.loads(zf.read(CHECKPOINT_META))
        except KeyError as exc:
            raise FormatError(f"{path}: missing {CHECKPOINT_META}") from exc
        heads = {}
        for mod, dims in meta["heads"].items():
            tensors = {}
            for name in PARAM_NAMES:
                member = f"{mod}/{name}.emb"
                try:
                    tag, data, _ = container_from_bytes(zf.read(member), source=member)
                except KeyError as exc:
                    raise FormatError(f"{path}: missing tensor {member}") from exc
                if tag != TENSOR_TAG:
                    raise FormatError(f"{path}: {member} is not a tensor container")
                tensors[name] = data if name in ("W1", "W2") else data[0]
            heads[mod] = ProjectionHead(
                W1=tensors["W1"], b1=tensors["b1"], ln_gain=tensors["ln_gain"],
                ln_bias=tensors["ln_bias"], W2=tensors["W2"], b2=tensors["b2"],
                dropout_rate=dims["dropout_rate"], d_in=dims["d_in"], m=dims["m"],
                d_out=dims["d_out"],
            )
            if heads[mod].W1.shape != (dims["m"], dims["d_in"]) or \
               heads[mod].W2.shape != (dims["d_out"], dims["m"]):
                raise FormatError(f"{path}: tensor shapes disagree with meta for {mod!r}")
    return heads, meta


def _loss_columns(variant: LossVariant) -> list[str]:
    return [f"loss_{pair.replace('-', '_')}" for pair in variant.pairs]


def write_log_csv(log: TrainLog, variant: LossVariant, path) -> None:
    """Per-epoch train/val rows; floats use repr so reruns compare byte-equal."""
    columns = ["epoch", "split", "loss_total", *_loss_columns(variant), "lr"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in log.epochs:
            for split, breakdown in (("train", rec.train), ("val", rec.val)):
                row = [rec.epoch, split, repr(breakdown.total)]
                row += [repr(breakdown.pairs[p].symmetric) for p in variant.pairs]
                row.append(repr(rec.lr_last) if split == "train" else "")
                writer.writerow(row)
