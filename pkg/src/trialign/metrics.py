"""Cross-modal alignment metrics.

Cosine statistics, mean angular deviation, bidirectional retrieval, Kabsch
Procrustes disparity, RBF-CKA, mutual kNN overlap, and the metric-vs-retrieval
correlation helper. Cosine statistics, MAD, and retrieval expect unit-norm
rows and run on the full paired sets; the geometric metrics (Procrustes, CKA,
mutual kNN) run on a shared deterministic subsample.

Directionality convention: X is the first-named modality of a pair, so
`procrustes_disparity(X, Y)` rotates X onto Y and normalizes by the centered
Y energy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .exceptions import ConfigError, DataError, DegenerateError
from .store import SubsampleSpec, subsample_indices
from .validation import check_matrix, check_paired

RETRIEVAL_KS = (1, 5, 10)
KNN_K = 5

DIRECTIONS = ("forward", "reverse", "macro")


def cosine_stats(x, y) -> tuple[float, float, float]:
    """Matched mean, mismatched mean, and per-row margin of S = X @ Y.T."""
    x = check_matrix(x, "X")
    y = check_matrix(y, "Y")
    check_paired(x, y)
    n = x.shape[0]
    if n < 2:
        raise ConfigError("cosine stats need N >= 2 (mismatched mean undefined)")
    s = x @ y.T
    diag = np.diag(s)
    matched = float(diag.mean(dtype=np.float64))
    off_sum = s.sum(dtype=np.float64) - diag.sum(dtype=np.float64)
    mismatched = float(off_sum / (n * (n - 1)))
    row_off_mean = (s.sum(axis=1, dtype=np.float64) - diag) / (n - 1)
    margin = float((diag - row_off_mean).mean(dtype=np.float64))
    return matched, mismatched, margin


def mad(x, y) -> float:
    """Mean angular deviation of matched pairs, in degrees."""
    x = check_matrix(x, "X")
    y = check_matrix(y, "Y")
    check_paired(x, y)
    cos = np.clip(np.einsum("ij,ij->i", x, y), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)).mean(dtype=np.float64))


def _ranks_of_matches(queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Rank of the index-matched candidate per query row.

    Candidates are ordered by cosine similarity descending; ties broken by
    ascending candidate index, so rank(i) counts strictly-better candidates
    plus equal-scored candidates with a smaller index, plus one.
    """
    qn = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    cn = candidates / np.linalg.norm(candidates, axis=1, keepdims=True)
    scores = qn @ cn.T
    n = scores.shape[0]
    matched = scores[np.arange(n), np.arange(n)][:, None]
    better = (scores > matched).sum(axis=1)
    idx = np.arange(n)
    tied_before = ((scores == matched) & (idx[None, :] < idx[:, None])).sum(axis=1)
    return better + tied_before + 1


def retrieval(x, y, ks=RETRIEVAL_KS) -> dict:
    """Bidirectional R@k and MRR; matched sample for query i is candidate i.

    Returns {"recall": {direction: {k: value}}, "mrr": {direction: value}}
    with directions forward (X->Y), reverse (Y->X), and their macro average.
    """
    x = check_matrix(x, "X")
    y = check_matrix(y, "Y")
    check_paired(x, y)
    ks = tuple(int(k) for k in ks)
    if x.shape[0] < max(ks):
        raise ConfigError(f"retrieval needs N >= max(ks) = {max(ks)}, got N = {x.shape[0]}")
    out = {"recall": {}, "mrr": {}}
    fwd = _ranks_of_matches(x, y)
    rev = _ranks_of_matches(y, x)
    for name, ranks in (("forward", fwd), ("reverse", rev)):
        out["recall"][name] = {k: float((ranks <= k).mean(dtype=np.float64)) for k in ks}
        out["mrr"][name] = float((1.0 / ranks).mean(dtype=np.float64))
    out["recall"]["macro"] = {
        k: 0.5 * (out["recall"]["forward"][k] + out["recall"]["reverse"][k]) for k in ks
    }
    out["mrr"]["macro"] = 0.5 * (out["mrr"]["forward"] + out["mrr"]["reverse"])
    return out


def procrustes_disparity(x, y) -> float:
    """Normalized residual after the optimal proper rotation of centered X onto Y.

    Kabsch solution: SVD of Xc.T @ Yc with the reflection corrected by flipping
    the last right-singular column when det(U @ Vt) < 0. Returns
    ||Xc R - Yc||_F^2 / ||Yc||_F^2.
    """
    x = check_matrix(x, "X", dtype=np.float64)
    y = check_matrix(y, "Y", dtype=np.float64)
    check_paired(x, y)
    if x.shape[1] != y.shape[1]:
        raise ConfigError("Procrustes requires equal dimensionality")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    denom = float((yc * yc).sum())
    if denom == 0.0:
        raise DataError("centered Y has zero norm; disparity undefined")
    u, _, vt = np.linalg.svd(xc.T @ yc)
    if np.linalg.det(u @ vt) < 0.0:
        vt = vt.copy()
        vt[-1, :] *= -1.0
    rotation = u @ vt
    resid = xc @ rotation - yc
    return float((resid * resid).sum() / denom)


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def rbf_gamma(x: np.ndarray, y: np.ndarray) -> float:
    """Median-heuristic bandwidth: gamma = 1 / (2 * median^2) over the pooled
    off-diagonal pairwise distances of both sets."""
    pooled = []
    for arr in (x, y):
        d2 = _pairwise_sq_dists(arr)
        n = d2.shape[0]
        off = d2[~np.eye(n, dtype=bool)]
        pooled.append(np.sqrt(off))
    med = float(np.median(np.concatenate(pooled)))
    if med == 0.0:
        raise DataError("median pairwise distance is zero; RBF bandwidth undefined")
    return 1.0 / (2.0 * med * med)


def cka_rbf(x, y) -> float:
    """RBF-kernel centered kernel alignment in [0, 1]."""
    x = check_matrix(x, "X", dtype=np.float64)
    y = check_matrix(y, "Y", dtype=np.float64)
    check_paired(x, y)
    n = x.shape[0]
    if n < 3:
        raise ConfigError("CKA needs N >= 3")
    gamma = rbf_gamma(x, y)
    k = np.exp(-gamma * _pairwise_sq_dists(x))
    l = np.exp(-gamma * _pairwise_sq_dists(y))
    h = np.eye(n) - np.full((n, n), 1.0 / n)
    kc = h @ k @ h
    lc = h @ l @ h
    denom = np.linalg.norm(kc) * np.linalg.norm(lc)
    if denom == 0.0:
        raise DataError("centered kernel has zero norm")
    return float((kc * lc).sum() / denom)


def _knn_sets(x: np.ndarray, k: int) -> np.ndarray:
    """(n, k) neighbor indices by cosine distance, self excluded, ties by index."""
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    sim = xn @ xn.T
    n = sim.shape[0]
    np.fill_diagonal(sim, -np.inf)
    # argsort on (-sim) is stable for kind="stable", giving ascending-index ties
    order = np.argsort(-sim, axis=1, kind="stable")
    return order[:, :k]


def mutual_knn(x, y, k: int = KNN_K) -> float:
    """Mean fraction of shared k-nearest-neighbor indices across the two spaces."""
    x = check_matrix(x, "X")
    y = check_matrix(y, "Y")
    check_paired(x, y)
    n = x.shape[0]
    if n <= k:
        raise ConfigError(f"mutual kNN needs N > k, got N = {n}, k = {k}")
    nx = _knn_sets(np.asarray(x, dtype=np.float64), k)
    ny = _knn_sets(np.asarray(y, dtype=np.float64), k)
    overlap = 0
    for i in range(n):
        overlap += len(set(nx[i]).intersection(ny[i]))
    return overlap / (n * k)


def correlations(records) -> tuple[float, float]:
    """Pearson r and Spearman rho over (metric, retrieval) pairs."""
    records = list(records)
    if len(records) < 3:
        raise ConfigError("correlations need at least 3 records")
    a = np.asarray([r[0] for r in records], dtype=np.float64)
    b = np.asarray([r[1] for r in records], dtype=np.float64)
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateError("constant series; correlation undefined")
    pearson = float(stats.pearsonr(a, b).statistic)
    spearman = float(stats.spearmanr(a, b).statistic)
    return pearson, spearman


@dataclass
class PairMetrics:
    """Every per-pair evaluation quantity, one record per modality pair."""

    pair: str
    matched_mean: float
    mismatched_mean: float
    margin: float
    recall: dict[str, dict[int, float]]
    mrr: dict[str, float]
    procrustes_disparity: float
    cka: float
    mutual_knn: float
    mad_degrees: float
    n_full: int
    n_subsample: int
    knn_k: int = KNN_K

    def validate(self) -> "PairMetrics":
        for name in ("matched_mean", "mismatched_mean", "margin"):
            v = getattr(self, name)
            if not -1.0 - 1e-9 <= v <= 1.0 + 1e-9:
                raise DataError(f"{name} out of [-1, 1]: {v}")
        for direction in DIRECTIONS:
            for k, v in self.recall[direction].items():
                if not -1e-12 <= v <= 1.0 + 1e-12:
                    raise DataError(f"recall@{k} {direction} out of [0, 1]: {v}")
            if not -1e-12 <= self.mrr[direction] <= 1.0 + 1e-12:
                raise DataError(f"mrr {direction} out of [0, 1]")
        if not -1e-9 <= self.cka <= 1.0 + 1e-9:
            raise DataError(f"cka out of [0, 1]: {self.cka}")
        if not -1e-12 <= self.mutual_knn <= 1.0 + 1e-12:
            raise DataError(f"mutual_knn out of [0, 1]: {self.mutual_knn}")
        if self.procrustes_disparity < 0.0:
            raise DataError("disparity must be >= 0")
        if not 0.0 <= self.mad_degrees <= 180.0:
            raise DataError(f"MAD out of [0, 180]: {self.mad_degrees}")
        return self

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "matched_mean": self.matched_mean,
            "mismatched_mean": self.mismatched_mean,
            "margin": self.margin,
            "recall": {d: {str(k): v for k, v in ks.items()} for d, ks in self.recall.items()},
            "mrr": dict(self.mrr),
            "procrustes_disparity": self.procrustes_disparity,
            "cka": self.cka,
            "mutual_knn": self.mutual_knn,
            "knn_k": self.knn_k,
            "mad_degrees": self.mad_degrees,
            "n_full": self.n_full,
            "n_subsample": self.n_subsample,
        }

    def to_flat_dict(self) -> dict:
        """One CSV row: recall/mrr flattened to r{k}_{fwd|rev|macro} columns."""
        flat = {
            "pair": self.pair,
            "matched_mean": self.matched_mean,
            "mismatched_mean": self.mismatched_mean,
            "margin": self.margin,
        }
        short = {"forward": "fwd", "reverse": "rev", "macro": "macro"}
        for direction in DIRECTIONS:
            for k in sorted(self.recall[direction]):
                flat[f"r{k}_{short[direction]}"] = self.recall[direction][k]
        for direction in DIRECTIONS:
            flat[f"mrr_{short[direction]}"] = self.mrr[direction]
        flat.update({
            "procrustes_disparity": self.procrustes_disparity,
            "cka": self.cka,
            "mutual_knn": self.mutual_knn,
            "mad_degrees": self.mad_degrees,
            "n_full": self.n_full,
            "n_subsample": self.n_subsample,
        })
        return flat


def evaluate_pair(x, y, pair: str = "x-y",
                  subsample: SubsampleSpec = SubsampleSpec()) -> PairMetrics:
    """Full metric record for one paired, unit-normalized embedding pair.

    Cosine statistics, MAD, and retrieval run on the full sets; Procrustes,
    CKA, and mutual kNN on the shared subsample so rows stay paired.
    """
    x = check_matrix(x, "X")
    y = check_matrix(y, "Y")
    check_paired(x, y)
    n = x.shape[0]
    idx = subsample_indices(n, subsample)
    xs = np.asarray(x, dtype=np.float64)[idx]
    ys = np.asarray(y, dtype=np.float64)[idx]
    matched, mismatched, margin = cosine_stats(x, y)
    ret = retrieval(x, y)
    return PairMetrics(
        pair=pair,
        matched_mean=matched,
        mismatched_mean=mismatched,
        margin=margin,
        recall=ret["recall"],
        mrr=ret["mrr"],
        procrustes_disparity=procrustes_disparity(xs, ys),
        cka=cka_rbf(xs, ys),
        mutual_knn=mutual_knn(xs, ys),
        mad_degrees=mad(x, y),
        n_full=n,
        n_subsample=len(idx),
    ).validate()


@dataclass
class AlignmentReport:
    """Pair records plus evaluation context; serialized as JSON and flat CSV."""

    pairs: dict[str, PairMetrics]
    split: str
    context: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "context": self.context,
            "pairs": {name: pm.to_dict() for name, pm in self.pairs.items()},
        }


def write_report(report: AlignmentReport, json_path, csv_path=None) -> None:
    Path(json_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if csv_path is not None:
        rows = [pm.to_flat_dict() for pm in report.pairs.values()]
        extras = {"split": report.split, **{k: v for k, v in report.context.items()
                                            if isinstance(v, (str, int, float))}}
        write_metrics_csv(rows, csv_path, extras)


def write_metrics_csv(rows: list[dict], path, extras: dict | None = None) -> None:
    """Flat CSV, one row per pair record; floats written with repr precision."""
    if not rows:
        raise ConfigError("no rows to write")
    extras = extras or {}
    fieldnames = list(extras) + list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            merged = {**extras, **row}
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in merged.items()})
