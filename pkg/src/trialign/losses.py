"""Bidirectional InfoNCE pair losses and the combined multimodal objectives.

For unit-row batches zx, zy the forward loss over the similarity matrix
S = zx @ zy.T is

    L_{x->y} = -(1/N) sum_i log softmax_j(S_ij / tau)[i]

with in-batch negatives only; the symmetric pair loss averages both
directions, and the trimodal total is the equally weighted sum of the three
pair losses. Gradients are exact derivatives through S; the row-normalization
Jacobian used upstream by the trainer lives here as well.

All reductions run in float64 regardless of the input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ShapeError

PAIR_NAMES = ("ts-img", "ts-txt", "img-txt")


@dataclass(frozen=True)
class PairLoss:
    forward: float
    reverse: float

    @property
    def symmetric(self) -> float:
        return 0.5 * (self.forward + self.reverse)


@dataclass
class LossBreakdown:
    """Per-pair forward/reverse losses plus the equally weighted total."""

    pairs: dict[str, PairLoss] = field(default_factory=dict)
    total: float = 0.0
    tau: float = 0.0


@dataclass(frozen=True)
class LossVariant:
    """Which pair terms the objective sums: trimodal, a bimodal subset, or vl_ts."""

    kind: str
    pairs: tuple[str, ...] = PAIR_NAMES

    @staticmethod
    def trimodal() -> "LossVariant":
        return LossVariant("trimodal", PAIR_NAMES)

    @staticmethod
    def bimodal(pairs) -> "LossVariant":
        chosen = tuple(pairs)
        if not chosen:
            raise ConfigError("bimodal variant requires a non-empty pair set")
        for pair in chosen:
            if pair not in PAIR_NAMES:
                raise ConfigError(f"unknown modality pair {pair!r}")
        return LossVariant("bimodal", chosen)

    @staticmethod
    def vl_ts() -> "LossVariant":
        return LossVariant("vl_ts", ("ts-vl", "img-txt"))

    @staticmethod
    def parse(text: str) -> "LossVariant":
        """Parse config strings: 'trimodal', 'vl_ts', 'bimodal:ts-img[,ts-txt...]'."""
        if text == "trimodal":
            return LossVariant.trimodal()
        if text == "vl_ts":
            return LossVariant.vl_ts()
        if text.startswith("bimodal:"):
            return LossVariant.bimodal(p for p in text[len("bimodal:"):].split(",") if p)
        raise ConfigError(f"unknown loss variant {text!r}")

    def to_string(self) -> str:
        if self.kind == "bimodal":
            return "bimodal:" + ",".join(self.pairs)
        return self.kind

    def modalities(self) -> tuple[str, ...]:
        if self.kind == "vl_ts":
            return ("ts", "img", "txt", "vl")
        seen: list[str] = []
        for pair in self.pairs:
            for mod in pair.split("-"):
                if mod not in seen:
                    seen.append(mod)
        return tuple(seen)


def _check_pair(zx: np.ndarray, zy: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    if tau <= 0.0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    zx = np.asarray(zx, dtype=np.float64)
    zy = np.asarray(zy, dtype=np.float64)
    if zx.ndim != 2 or zy.ndim != 2:
        raise ShapeError("embedding batches must be 2-D")
    if zx.shape != zy.shape:
        raise ShapeError(f"paired batches must share shape: {zx.shape} vs {zy.shape}")
    if zx.shape[0] < 1:
        raise ShapeError("empty batch")
    return zx, zy


def infonce_directional(zx, zy, tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Forward InfoNCE x->y; returns (loss, dL/dzx, dL/dzy)."""
    zx, zy = _check_pair(zx, zy, tau)
    n = zx.shape[0]
    logits = (zx @ zy.T) / tau
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-(np.log(probs[np.arange(n), np.arange(n)])).mean())
    d_s = probs.copy()
    d_s[np.arange(n), np.arange(n)] -= 1.0
    d_s /= n * tau
    return loss, d_s @ zy, d_s.T @ zx


def infonce_symmetric(zx, zy, tau: float) -> tuple[PairLoss, np.ndarray, np.ndarray]:
    """Average of forward and reverse InfoNCE; gradients averaged likewise."""
    loss_f, dzx_f, dzy_f = infonce_directional(zx, zy, tau)
    loss_r, dzy_r, dzx_r = infonce_directional(zy, zx, tau)
    return PairLoss(loss_f, loss_r), 0.5 * (dzx_f + dzx_r), 0.5 * (dzy_f + dzy_r)


def total_loss(z_ts=None, z_img=None, z_txt=None, *, tau: float,
               variant: LossVariant) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Sum of symmetric pair losses for the variant's pair set, equal weights.

    Returns the breakdown plus per-modality gradients (accumulated across
    the pair terms each modality appears in).
    """
    if variant.kind == "vl_ts":
        raise ConfigError("vl_ts objective is computed by vl_ts_loss")
    batches = {"ts": z_ts, "img": z_img, "txt": z_txt}
    for pair in variant.pairs:
        for mod in pair.split("-"):
            if batches[mod] is None:
                raise ConfigError(f"variant needs modality {mod!r} but its batch is absent")
    breakdown = LossBreakdown(tau=tau)
    grads: dict[str, np.ndarray] = {}
    total = 0.0
    for pair in variant.pairs:
        mx, my = pair.split("-")
        pair_loss, dzx, dzy = infonce_symmetric(batches[mx], batches[my], tau)
        breakdown.pairs[pair] = pair_loss
        total += pair_loss.symmetric
        for mod, grad in ((mx, dzx), (my, dzy)):
            grads[mod] = grads.get(mod, 0.0) + grad
    breakdown.total = total
    return breakdown, grads


def vl_ts_loss(z_ts, z_vl, z_v, z_t, tau: float) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Hierarchical objective: sym(ts, vl) plus the vision/text auxiliary term."""
    breakdown = LossBreakdown(tau=tau)
    main, d_ts, d_vl = infonce_symmetric(z_ts, z_vl, tau)
    aux, d_v, d_t = infonce_symmetric(z_v, z_t, tau)
    breakdown.pairs["ts-vl"] = main
    breakdown.pairs["img-txt"] = aux
    breakdown.total = main.symmetric + aux.symmetric
    grads = {"ts": d_ts, "vl": d_vl, "img": d_v, "txt": d_t}
    return breakdown, grads


def l2_normalize_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize onto the unit sphere; returns (z, row norms)."""
    v = np.asarray(v)
    norms = np.sqrt(np.einsum("ij,ij->i", v, v))
    return v / norms[:, None], norms


def l2_normalize_backward(z: np.ndarray, norms: np.ndarray, d_z: np.ndarray) -> np.ndarray:
    """Jacobian of z = v/||v||: d_v = (d_z - z * <z, d_z>) / ||v||."""
    inner = np.einsum("ij,ij->i", z, d_z)[:, None]
    return (d_z - z * inner) / norms[:, None]
