"""Synthetic multimodal data with known correspondences.

All modalities observe the same latent sample set through their own linear
map plus Gaussian noise. Modalities after the first are row-shuffled, and the
shuffles are kept as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from crossmap.errors import ValidationError

FAMILIES = ("two-moons", "swiss-roll")


@dataclass(frozen=True)
class ModalitySpec:
    dim: int
    seed: int = 0
    noise: float = 0.0
    map: str = "orthonormal"


@dataclass(frozen=True)
class SyntheticSpec:
    family: str = "two-moons"
    n: int = 200
    modalities: tuple = (ModalitySpec(20, 1), ModalitySpec(35, 2))
    permutation_seed: int = 0
    latent_seed: int = 0
    latent_noise: float = 0.0
    classes: int = 2
    labeled_fraction: float = 1.0
    label_seed: int = 0
    n_test: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.n < 10:
            raise ValidationError(f"n must be >= 10, got {self.n}")
        if len(self.modalities) < 1:
            raise ValidationError("need at least one modality")
        if not 0.0 <= self.labeled_fraction <= 1.0:
            raise ValidationError("labeled_fraction must lie in [0, 1]")
        if self.family == "two-moons" and self.classes != 2:
            raise ValidationError("two-moons has exactly 2 classes")
        mods = tuple(m if isinstance(m, ModalitySpec) else ModalitySpec(**m) for m in self.modalities)
        object.__setattr__(self, "modalities", mods)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown synthetic spec keys: {sorted(unknown)}")
        if "modalities" in d:
            d["modalities"] = tuple(ModalitySpec(**m) for m in d["modalities"])
        return cls(**d)


def two_moons(n, rng, noise=0.0):
    """Latent two-moons points and 1-based moon ids, ``n // 2`` on the outer moon."""
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0.0, np.pi, n_out)
    t_in = rng.uniform(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    Z = np.vstack([outer, inner])
    if noise > 0:
        Z = Z + noise * rng.standard_normal(Z.shape)
    y = np.concatenate([np.ones(n_out, dtype=int), np.full(n_in, 2, dtype=int)])
    return Z, y


def swiss_roll(n, rng, classes=4, noise=0.0):
    """Latent swiss roll; labels are quantile bins of the roll angle."""
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(size=n))
    height = 21.0 * rng.uniform(size=n)
    Z = np.column_stack([t * np.cos(t), height, t * np.sin(t)])
    if noise > 0:
        Z = Z + noise * rng.standard_normal(Z.shape)
    edges = np.quantile(t, np.linspace(0, 1, classes + 1)[1:-1])
    y = np.searchsorted(edges, t, side="right") + 1
    return Z, y


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    features: list
    labels: list
    truth: list
    permutations: list
    test_features: list = field(default_factory=list)
    test_labels: list = field(default_factory=list)

    def ground_truth(self, j=1):
        """``gt[r]`` is the row of modality ``j`` holding latent sample ``r``
        (modality 0 is never shuffled)."""
        return self.permutations[j]


def _latent(spec, n, rng):
    if spec.family == "two-moons":
        return two_moons(n, rng, spec.latent_noise)
    return swiss_roll(n, rng, spec.classes, spec.latent_noise)


def _linear_map(mod, latent_dim):
    if mod.map == "identity":
        if mod.dim != latent_dim:
            raise ValidationError(f"identity map needs dim == latent dim ({latent_dim})")
        return np.eye(latent_dim)
    rng = np.random.default_rng(mod.seed)
    if mod.map == "gaussian":
        return rng.standard_normal((latent_dim, mod.dim))
    if mod.map != "orthonormal":
        raise ValidationError(f"unknown map kind {mod.map!r}")
    if mod.dim < latent_dim:
        raise ValidationError(f"orthonormal map needs dim >= latent dim ({latent_dim})")
    # orthonormal rows: an isometric embedding of the latent space
    Q, R = np.linalg.qr(rng.standard_normal((mod.dim, latent_dim)))
    return (Q * np.sign(np.diag(R))).T


def _observe(Z, M, noise, rng):
    F = Z @ M
    if noise > 0:
        F = F + noise * F.std(axis=0, keepdims=True).mean() * rng.standard_normal(F.shape)
    return F


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Draw a dataset; identical specs give bit-identical arrays.

    ``noise`` is relative: the Gaussian noise standard deviation is ``noise``
    times the mean per-column standard deviation of the clean projection.
    Labels for unlabeled samples are 0.
    """
    rng = np.random.default_rng(spec.latent_seed)
    Z, y = _latent(spec, spec.n, rng)
    Zt, yt = _latent(spec, spec.n_test, rng) if spec.n_test > 0 else (None, None)
    perm_rng = np.random.default_rng(spec.permutation_seed)
    label_rng = np.random.default_rng(spec.label_seed)
    n_lab = int(round(spec.labeled_fraction * spec.n))

    feats, labels, truth, perms, tfeats, tlabels = [], [], [], [], [], []
    for m, mod in enumerate(spec.modalities):
        M = _linear_map(mod, Z.shape[1])
        noise_rng = np.random.default_rng([mod.seed, 7919])
        F = _observe(Z, M, mod.noise, noise_rng)
        if m == 0 or not spec.shuffle:
            order = np.arange(spec.n)
        else:
            order = perm_rng.permutation(spec.n)
        # row t of this modality shows latent sample order[t]
        gt = np.argsort(order)
        F, yy = F[order], y[order]
        lab = yy.copy()
        hidden = np.ones(spec.n, dtype=bool)
        hidden[label_rng.permutation(spec.n)[:n_lab]] = False
        lab[hidden] = 0
        feats.append(F)
        truth.append(yy)
        labels.append(lab)
        perms.append(gt)
        if Zt is not None:
            tfeats.append(_observe(Zt, M, mod.noise, noise_rng))
            tlabels.append(yt.copy())
    return SyntheticDataset(spec, feats, labels, truth, perms, tfeats, tlabels)
