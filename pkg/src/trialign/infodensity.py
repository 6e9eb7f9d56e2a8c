"""Caption information density from per-token surprisals.

A caption's information density is the total surprisal of its tokens in nats
(equivalently token_count times the mean per-token surprisal). Surprisal
production is external to this module; the on-disk contract is newline-
delimited JSON, one object per caption:

    {"id": "...", "surprisals": [0.31, 2.7, ...]}

with an optional "variant" key used for grouping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError


@dataclass(frozen=True)
class SurprisalRecord:
    id: str
    surprisals: tuple[float, ...]
    variant: str | None = None

    @property
    def token_count(self) -> int:
        return len(self.surprisals)


@dataclass(frozen=True)
class IDRecord:
    id: str
    id_value: float
    mean_per_token: float
    token_count: int
    variant: str | None = None


@dataclass(frozen=True)
class DatasetID:
    mean_id: float
    mean_tokens: float
    mean_per_token: float
    n: int


def compute_id(record: SurprisalRecord) -> IDRecord:
    """Sum the per-token surprisals; exact, no reweighting."""
    if record.token_count < 1:
        raise DataError(f"caption {record.id!r} has no surprisals")
    arr = np.asarray(record.surprisals, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"caption {record.id!r} has non-finite surprisal")
    if np.any(arr < 0.0):
        raise DataError(f"caption {record.id!r} has negative surprisal")
    total = float(math.fsum(record.surprisals))
    return IDRecord(record.id, total, total / record.token_count,
                    record.token_count, record.variant)


def dataset_id(records) -> DatasetID:
    """Arithmetic means of ID, token count, and per-token surprisal."""
    ids = [compute_id(r) if isinstance(r, SurprisalRecord) else r for r in records]
    if not ids:
        raise DataError("dataset_id needs at least one record")
    return DatasetID(
        mean_id=float(np.mean([r.id_value for r in ids])),
        mean_tokens=float(np.mean([r.token_count for r in ids])),
        mean_per_token=float(np.mean([r.mean_per_token for r in ids])),
        n=len(ids),
    )


def rank_variants(variant_ids: dict[str, float]) -> list[str]:
    """Variant names sorted by mean ID descending; ties keep input order."""
    return [name for name, _ in
            sorted(variant_ids.items(), key=lambda item: -item[1])]


def read_surprisals(path) -> list[SurprisalRecord]:
    """Parse the NDJSON surprisal file; errors carry the 1-based line number."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: not valid JSON ({exc.msg})") from exc
            if not isinstance(doc, dict) or "id" not in doc or "surprisals" not in doc:
                raise DataError(f"{path}: line {lineno}: need 'id' and 'surprisals' keys")
            if not isinstance(doc["surprisals"], list):
                raise DataError(f"{path}: line {lineno}: 'surprisals' must be a list")
            sample_id = str(doc["id"])
            if sample_id in seen:
                raise DataError(f"{path}: line {lineno}: duplicate id {sample_id!r}")
            seen.add(sample_id)
            try:
                values = tuple(float(v) for v in doc["surprisals"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: non-numeric surprisal") from exc
            variant = doc.get("variant")
            records.append(SurprisalRecord(sample_id, values,
                                           str(variant) if variant is not None else None))
    if not records:
        raise DataError(f"{path}: no surprisal records")
    return records


def write_surprisals(records, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            doc = {"id": rec.id, "surprisals": list(rec.surprisals)}
            if rec.variant is not None:
                doc["variant"] = rec.variant
            fh.write(json.dumps(doc) + "\n")
