"""On-disk embedding containers, manifests, joins, and subsampling.

Container layout (all integers little-endian):

    magic   8 bytes  b"TRIEMB01"
    version u32      1
    tag     u8       modality tag: ts=0, img=1, txt=2 (255 = generic tensor)
    n       u64      rows
    dim     u64      columns
    payload n*dim float32, row-major
    idlen   u64      byte length of the id block
    ids     UTF-8, newline-separated, exactly n non-empty unique strings

Vectors ride in the same container as 1xd matrices (used by checkpoints).
Manifests are JSON: {"modalities": {"ts": {"train": p, "val": p, "test": p},
...}, "join": "id"|"position"}; relative paths resolve against the manifest's
directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError, FormatError, JoinError

MAGIC = b"TRIEMB01"
FORMAT_VERSION = 1

MODALITY_TAGS = {"ts": 0, "img": 1, "txt": 2, "vl": 3}
TAG_MODALITIES = {v: k for k, v in MODALITY_TAGS.items()}
TENSOR_TAG = 255

SPLITS = ("train", "val", "test")

_HEADER = struct.Struct("<IBQQ")  # version, tag, n, dim


@dataclass
class EmbeddingSet:
    """One modality's embeddings: an (n, dim) float32 matrix plus row ids."""

    modality: str
    data: np.ndarray
    ids: list[str]

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def validate(self) -> "EmbeddingSet":
        """Check the type invariants; raises DataError on violation."""
        if self.modality not in MODALITY_TAGS:
            raise DataError(f"unknown modality tag {self.modality!r}")
        if self.data.ndim != 2:
            raise DataError(f"data must be 2-D, got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            raise DataError(f"data must be float32, got {self.data.dtype}")
        if not np.all(np.isfinite(self.data)):
            raise DataError(f"{self.modality} embeddings contain non-finite values")
        if len(self.ids) != self.n:
            raise DataError(f"{len(self.ids)} ids for {self.n} rows")
        if any(not i for i in self.ids):
            raise DataError("empty id string")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("ids are not unique")
        return self

    def take(self, indices) -> "EmbeddingSet":
        """Row subset (copy), preserving id pairing."""
        idx = np.asarray(indices)
        return EmbeddingSet(self.modality, self.data[idx].copy(), [self.ids[i] for i in idx])


def container_bytes(tag: int, data: np.ndarray, ids: list[str]) -> bytes:
    """Serialize one float32 matrix to the TRIEMB01 container layout."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"container payload must be 2-D, got shape {arr.shape}")
    id_block = "\n".join(ids).encode("utf-8")
    return b"".join([
        MAGIC,
        _HEADER.pack(FORMAT_VERSION, tag, arr.shape[0], arr.shape[1]),
        arr.tobytes(order="C"),
        struct.pack("<Q", len(id_block)),
        id_block,
    ])


def container_from_bytes(buf: bytes, source: str = "<bytes>") -> tuple[int, np.ndarray, list[str]]:
    """Parse a TRIEMB01 container; returns (tag, float32 matrix, ids)."""
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:len(MAGIC)]!r}")
    offset = len(MAGIC)
    header = buf[offset:offset + _HEADER.size]
    if len(header) != _HEADER.size:
        raise FormatError(f"{source}: truncated header")
    version, tag, n, dim = _HEADER.unpack(header)
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    offset += _HEADER.size
    payload = buf[offset:offset + 4 * n * dim]
    if len(payload) != 4 * n * dim:
        raise FormatError(
            f"{source}: truncated payload, expected {4 * n * dim} bytes got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, dim).copy()
    offset += 4 * n * dim
    raw_len = buf[offset:offset + 8]
    if len(raw_len) != 8:
        raise FormatError(f"{source}: missing id block length")
    (id_len,) = struct.unpack("<Q", raw_len)
    offset += 8
    id_block = buf[offset:offset + id_len]
    if len(id_block) != id_len:
        raise FormatError(f"{source}: truncated id block")
    ids = id_block.decode("utf-8").split("\n") if id_block else []
    return tag, data, ids


def write_container(path, tag: int, data: np.ndarray, ids: list[str]) -> None:
    with open(path, "wb") as fh:
        fh.write(container_bytes(tag, data, ids))


def read_container(path) -> tuple[int, np.ndarray, list[str]]:
    with open(path, "rb") as fh:
        return container_from_bytes(fh.read(), source=str(path))


def save_embeddings(embeddings: EmbeddingSet, path) -> None:
    embeddings.validate()
    write_container(path, MODALITY_TAGS[embeddings.modality], embeddings.data, embeddings.ids)


def load_embeddings(path) -> EmbeddingSet:
    """Load and validate one modality's embeddings from disk."""
    tag, data, ids = read_container(path)
    if tag not in TAG_MODALITIES:
        raise FormatError(f"{path}: tag {tag} is not a modality tag")
    return EmbeddingSet(TAG_MODALITIES[tag], data, ids).validate()


def normalize(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Return a copy with every row scaled to unit Euclidean norm."""
    embeddings.validate()
    norms = np.linalg.norm(embeddings.data.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DataError(f"zero row cannot be normalized: id {embeddings.ids[zero[0]]!r}")
    data = (embeddings.data.astype(np.float64) / norms[:, None]).astype(np.float32)
    return EmbeddingSet(embeddings.modality, data, list(embeddings.ids))


@dataclass
class SubsampleSpec:
    """Deterministic uniform subsample used for the geometric metrics."""

    max_n: int = 2000
    seed: int = 42


def subsample_indices(n: int, spec: SubsampleSpec = SubsampleSpec()) -> np.ndarray:
    """Pick min(n, max_n) distinct row indices, deterministic in (n, max_n, seed).

    Below the threshold this is the identity ordering; above it, a uniform
    draw without replacement, returned sorted ascending.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if n <= spec.max_n:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    idx = rng.choice(n, size=spec.max_n, replace=False)
    idx.sort()
    return idx.astype(np.int64)


@dataclass
class TripletManifest:
    """Per-modality file paths for the three splits, plus the join mode."""

    modalities: dict[str, dict[str, Path]]
    join: str = "id"
    path: Path | None = field(default=None, compare=False)

    def validate(self) -> "TripletManifest":
        if self.join not in ("id", "position"):
            raise ConfigError(f"join must be 'id' or 'position', got {self.join!r}")
        for mod, splits in self.modalities.items():
            if mod not in MODALITY_TAGS:
                raise ConfigError(f"unknown modality {mod!r} in manifest")
            for split in splits:
                if split not in SPLITS:
                    raise ConfigError(f"unknown split {split!r} for modality {mod!r}")
        return self

    def split_paths(self, split: str, modalities=None) -> dict[str, Path]:
        mods = list(modalities) if modalities is not None else list(self.modalities)
        out = {}
        for mod in mods:
            if mod not in self.modalities or split not in self.modalities[mod]:
                raise JoinError(f"manifest has no {mod!r} file for split {split!r}")
            out[mod] = self.modalities[mod][split]
        return out


def load_manifest(path) -> TripletManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "modalities" not in doc:
        raise FormatError(f"{path}: manifest must be an object with a 'modalities' key")
    root = path.parent
    modalities = {
        mod: {split: (root / p if not Path(p).is_absolute() else Path(p)) for split, p in splits.items()}
        for mod, splits in doc["modalities"].items()
    }
    return TripletManifest(modalities, doc.get("join", "id"), path=path).validate()


def save_manifest(manifest: TripletManifest, path) -> None:
    path = Path(path)
    root = path.parent
    doc = {
        "modalities": {
            mod: {
                split: (str(p.relative_to(root)) if p.is_relative_to(root) else str(p))
                for split, p in splits.items()
            }
            for mod, splits in manifest.modalities.items()
        },
        "join": manifest.join,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def join_sets(sets: dict[str, EmbeddingSet], join: str = "id") -> dict[str, EmbeddingSet]:
    """Align loaded modality sets row-for-row.

    In id mode, every set is reordered to follow the first set's id order
    (modalities keep their dict order, so with a standard manifest the ts
    file defines the row order). In position mode the counts must already
    agree and rows are taken as-is.
    """
    if not sets:
        raise JoinError("no modalities to join")
    canonical = [m for m in MODALITY_TAGS if m in sets]
    mods = canonical + [m for m in sets if m not in canonical]
    if join == "position":
        counts = {m: sets[m].n for m in mods}
        if len(set(counts.values())) != 1:
            raise JoinError(f"position join requires equal counts, got {counts}")
        return {m: sets[m] for m in mods}
    if join != "id":
        raise ConfigError(f"unknown join mode {join!r}")
    reference = sets[mods[0]]
    ref_ids = list(reference.ids)
    out = {mods[0]: reference}
    for mod in mods[1:]:
        current = sets[mod]
        pos = {}
        for i, sample_id in enumerate(current.ids):
            if sample_id in pos:
                raise JoinError(f"duplicate id {sample_id!r} in modality {mod!r}")
            pos[sample_id] = i
        missing = [i for i in ref_ids if i not in pos]
        extra = [i for i in pos if i not in set(ref_ids)]
        if missing or extra:
            raise JoinError(
                f"modality {mod!r} does not cover the reference ids: "
                f"missing {missing[:5]}{'...' if len(missing) > 5 else ''}, "
                f"unmatched {extra[:5]}{'...' if len(extra) > 5 else ''}"
            )
        order = np.array([pos[i] for i in ref_ids], dtype=np.int64)
        out[mod] = current.take(order)
    return out


def join_triplets(manifest: TripletManifest, split: str, modalities=None) -> dict[str, EmbeddingSet]:
    """Load one split's files and return index-aligned EmbeddingSets."""
    manifest.validate()
    paths = manifest.split_paths(split, modalities)
    sets = {mod: load_embeddings(p) for mod, p in paths.items()}
    return join_sets(sets, manifest.join)
