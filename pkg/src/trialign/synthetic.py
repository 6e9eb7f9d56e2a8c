"""Synthetic trimodal embedding datasets from a shared latent process.

Each sample draws a latent vector; every modality sees an orthonormal random
projection of its first round(rho * latent_dim) coordinates plus isotropic
noise, with optional appended nuisance coordinates. The informative fraction
rho models how much of the latent a modality's encoding retains, noise models
encoder stochasticity, and `independent=True` severs the coupling entirely
(each modality draws its own latent) to produce chance-level baselines.

Generation is byte-deterministic in the spec: identical specs give identical
files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .store import (EmbeddingSet, SPLITS, TripletManifest, save_embeddings,
                    save_manifest)

MODALITY_ORDER = ("ts", "img", "txt")


@dataclass(frozen=True)
class ModalityView:
    """How one modality renders the latent process."""

    dim: int
    informative_fraction: float = 1.0
    noise_scale: float = 0.0
    nuisance_dim: int = 0


@dataclass
class SynthSpec:
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    latent_dim: int = 8
    views: dict[str, ModalityView] = field(default_factory=dict)
    seed: int = 0
    independent: bool = False

    def __post_init__(self):
        if not self.views:
            self.views = {m: ModalityView(dim=64) for m in MODALITY_ORDER}

    def informative_dims(self) -> dict[str, int]:
        return {m: round(v.informative_fraction * self.latent_dim)
                for m, v in self.views.items()}

    def validate(self) -> "SynthSpec":
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        for split, n in (("train", self.n_train), ("val", self.n_val), ("test", self.n_test)):
            if n < 1:
                raise ConfigError(f"n_{split} must be >= 1")
        for mod, view in self.views.items():
            if mod not in MODALITY_ORDER:
                raise ConfigError(f"unknown modality {mod!r}")
            if not 0.0 < view.informative_fraction <= 1.0:
                raise ConfigError(
                    f"{mod}: informative_fraction must be in (0, 1], got "
                    f"{view.informative_fraction}"
                )
            k = round(view.informative_fraction * self.latent_dim)
            if k < 1:
                raise ConfigError(
                    f"{mod}: informative_fraction {view.informative_fraction} keeps "
                    f"no latent coordinates at latent_dim {self.latent_dim}"
                )
            if view.noise_scale < 0.0:
                raise ConfigError(f"{mod}: noise_scale must be >= 0")
            if view.nuisance_dim < 0 or view.dim - view.nuisance_dim < k:
                raise ConfigError(
                    f"{mod}: dim {view.dim} minus nuisance {view.nuisance_dim} must "
                    f"leave room for {k} informative coordinates"
                )
        missing = [m for m in MODALITY_ORDER if m not in self.views]
        if missing:
            raise ConfigError(f"views missing for modalities {missing}")
        return self


def _mixing_matrices(spec: SynthSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Orthonormal-column mixing matrix per modality (QR of a Gaussian draw)."""
    k = spec.informative_dims()
    mats = {}
    for mod in MODALITY_ORDER:
        view = spec.views[mod]
        d_signal = view.dim - view.nuisance_dim
        gauss = rng.standard_normal((d_signal, k[mod]))
        q, _ = np.linalg.qr(gauss)
        mats[mod] = q
    return mats


def _split_counts(spec: SynthSpec) -> dict[str, int]:
    return {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}


def generate(spec: SynthSpec, out_dir) -> TripletManifest:
    """Write one embedding file per (modality, split) plus manifest.json."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(spec.seed).spawn(1 + len(SPLITS))
    mixing = _mixing_matrices(spec, np.random.default_rng(children[0]))
    k = spec.informative_dims()
    paths: dict[str, dict[str, Path]] = {m: {} for m in MODALITY_ORDER}
    for child, (split, n) in zip(children[1:], _split_counts(spec).items()):
        rng = np.random.default_rng(child)
        latent = rng.standard_normal((n, spec.latent_dim))
        ids = [f"{split}-{i:06d}" for i in range(n)]
        for mod in MODALITY_ORDER:
            view = spec.views[mod]
            z = rng.standard_normal((n, spec.latent_dim)) if spec.independent else latent
            signal = z[:, :k[mod]] @ mixing[mod].T
            if view.noise_scale > 0.0:
                signal = signal + view.noise_scale * rng.standard_normal(signal.shape)
            if view.nuisance_dim > 0:
                nuisance = rng.standard_normal((n, view.nuisance_dim))
                signal = np.concatenate([signal, nuisance], axis=1)
            path = out_dir / f"{mod}_{split}.emb"
            save_embeddings(EmbeddingSet(mod, signal.astype(np.float32), ids), path)
            paths[mod][split] = path
    manifest = TripletManifest(paths, join="id")
    save_manifest(manifest, out_dir / "manifest.json")
    manifest.path = out_dir / "manifest.json"
    return manifest


def chance_floor(n: int, k: int = 5) -> dict[str, float]:
    """Expected metric levels for fully independent views."""
    if n <= k:
        raise ConfigError(f"chance floor needs n > k, got n = {n}, k = {k}")
    return {
        "r_at_1": 1.0 / n,
        "mutual_knn": k / (n - 1.0),
        "mad_degrees": 90.0,
        "cosine": 0.0,
    }
