"""Dataset plumbing: synthetic hypersphere clusters, flat-file ingestion,
identity-disjoint splits, and verification-pair sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contracts import require
from .numerics import RngStream, l2_normalize_rows


class DataFormatError(Exception):
    """A data file exists but could not be parsed."""


@dataclass(frozen=True)
class LabeledDataset:
    """Feature vectors paired with dense integer identity labels.

    Labels must cover 0..K-1 with every identity present at least once.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        require(features.ndim == 2 and features.shape[0] >= 1,
                "features must be a non-empty 2-d array")
        require(labels.shape == (features.shape[0],),
                "labels must align with feature rows")
        require(bool(np.isfinite(features).all()), "features must be finite")
        present = np.unique(labels)
        require(bool(np.array_equal(present, np.arange(present.size))),
                "labels must be dense 0..K-1 with every identity present")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def identity_count(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class PairSet:
    """Verification pairs: two index arrays plus a same-identity flag."""

    first: np.ndarray
    second: np.ndarray
    same: np.ndarray

    def __post_init__(self):
        first = np.asarray(self.first, dtype=np.int64)
        second = np.asarray(self.second, dtype=np.int64)
        same = np.asarray(self.same, dtype=np.bool_)
        require(first.ndim == 1 and first.shape == second.shape == same.shape,
                "pair arrays must be 1-d and equally long")
        require(bool(same.any()) and bool((~same).any()),
                "need at least one same pair and one different pair")
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", second)
        object.__setattr__(self, "same", same)

    @property
    def pair_count(self) -> int:
        return self.first.shape[0]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a hypersphere-cluster dataset."""

    classes: int
    dim: int
    samples_per_class: int
    noise_sigma: float
    seed: int

    def __post_init__(self):
        require(self.classes >= 2, "classes must be >= 2")
        require(self.dim >= 1, "dim must be >= 1")
        require(self.samples_per_class >= 1, "samples_per_class must be >= 1")
        require(self.noise_sigma > 0, "noise_sigma must be > 0")


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Unit-sphere class centers plus Gaussian noise, re-normalized.

    Deterministic per seed: centers and noise come from fixed-label streams.
    """
    stream = RngStream(spec.seed, "synthetic")
    centers = l2_normalize_rows(
        stream.child("centers").generator().standard_normal((spec.classes, spec.dim)))
    noise = stream.child("noise").generator().standard_normal(
        (spec.classes * spec.samples_per_class, spec.dim))
    raw = np.repeat(centers, spec.samples_per_class, axis=0) + spec.noise_sigma * noise
    labels = np.repeat(np.arange(spec.classes, dtype=np.int64), spec.samples_per_class)
    return LabeledDataset(l2_normalize_rows(raw), labels)


def load_flat_file(path) -> LabeledDataset:
    """Load a CSV of float feature columns followed by an integer label column.

    Labels are re-indexed densely in order of first appearance.
    """
    rows = []
    raw_labels = []
    width = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise DataFormatError(
                        f"{path}: line {lineno}: need at least one feature column and a label")
            elif len(parts) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} columns, got {len(parts)}")
            try:
                rows.append([float(cell) for cell in parts[:-1]])
                raw_labels.append(int(parts[-1]))
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: file contains no samples")
    remap: dict = {}
    dense = [remap.setdefault(label, len(remap)) for label in raw_labels]
    return LabeledDataset(np.array(rows, dtype=np.float64), np.array(dense, dtype=np.int64))


def save_flat_file(path, dataset: LabeledDataset) -> None:
    """Write the CSV format load_flat_file reads, floats at full precision."""
    lines = []
    for row, label in zip(dataset.features, dataset.labels):
        cells = [format(value, ".17g") for value in row]
        cells.append(str(int(label)))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _dense_subset(dataset: LabeledDataset, indices: np.ndarray) -> LabeledDataset:
    # Relabel keeps the ascending order of the original identity ids.
    labels = dataset.labels[indices]
    kept = np.unique(labels)
    return LabeledDataset(dataset.features[indices], np.searchsorted(kept, labels))


def split_open_set(dataset: LabeledDataset, train_frac: float, seed: int):
    """Partition identities (never samples) into train and eval sets.

    Both sides get at least two identities; all samples of an identity land
    on the same side. Deterministic per seed.
    """
    require(0.0 < train_frac < 1.0, "train_frac must lie in (0, 1)")
    total = dataset.identity_count
    n_train = int(total * train_frac)
    n_eval = total - n_train
    require(n_train >= 2 and n_eval >= 2,
            f"split {n_train}/{n_eval} of {total} identities leaves a side below 2")
    order = RngStream(seed, "split").generator().permutation(total)
    train_ids = np.zeros(total, dtype=bool)
    train_ids[order[:n_train]] = True
    mask = train_ids[dataset.labels]
    train = _dense_subset(dataset, np.flatnonzero(mask))
    held_out = _dense_subset(dataset, np.flatnonzero(~mask))
    return train, held_out


def split_closed_set(dataset: LabeledDataset, train_frac: float, seed: int):
    """Partition samples within every identity; both sides keep all identities.

    Companion to split_open_set for closed-set (classification) scoring, where
    the evaluation set must share the training identity space.
    """
    require(0.0 < train_frac < 1.0, "train_frac must lie in (0, 1)")
    gen = RngStream(seed, "closed-split").generator()
    train_parts = []
    eval_parts = []
    for identity in range(dataset.identity_count):
        members = np.flatnonzero(dataset.labels == identity)
        n_train = int(members.size * train_frac)
        require(n_train >= 1 and members.size - n_train >= 1,
                f"identity {identity} has {members.size} samples, too few to split")
        order = gen.permutation(members.size)
        train_parts.append(members[order[:n_train]])
        eval_parts.append(members[order[n_train:]])
    train_idx = np.sort(np.concatenate(train_parts))
    eval_idx = np.sort(np.concatenate(eval_parts))
    return (LabeledDataset(dataset.features[train_idx], dataset.labels[train_idx]),
            LabeledDataset(dataset.features[eval_idx], dataset.labels[eval_idx]))


def make_pairs(dataset: LabeledDataset, n_pairs: int, seed: int) -> PairSet:
    """Sample n_pairs/2 same-identity and n_pairs/2 different-identity pairs.

    Pairs are drawn without replacement from the full enumeration of index
    pairs, so a request larger than either pool is refused.
    """
    require(n_pairs >= 2 and n_pairs % 2 == 0, "n_pairs must be even and >= 2")
    half = n_pairs // 2
    n = dataset.sample_count
    require(n >= 2, "need at least two samples to form pairs")
    left, right = np.triu_indices(n, k=1)
    same_mask = dataset.labels[left] == dataset.labels[right]
    pools = {"same": np.flatnonzero(same_mask), "diff": np.flatnonzero(~same_mask)}
    stream = RngStream(seed, "pairs")
    chosen = {}
    for name, pool in pools.items():
        require(pool.size >= half,
                f"requested {half} {name} pairs but only {pool.size} exist")
        order = stream.child(name).generator().permutation(pool.size)
        chosen[name] = pool[order[:half]]
    picks = np.concatenate([chosen["same"], chosen["diff"]])
    flags = np.zeros(n_pairs, dtype=bool)
    flags[:half] = True
    return PairSet(left[picks], right[picks], flags)
