"""Evaluation protocols over unit embeddings: K-fold thresholded pair
verification with ROC points, rank-1 identification with CMC points,
TPR at fixed FAR, and the scalar reward used by the search loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .contracts import require
from .datasets import LabeledDataset, PairSet
from .embed_model import ClassifierHead, EmbeddingModel, embed, forward


class FarUnresolvableError(Exception):
    """Too few different-identity pairs to resolve the requested FAR."""


@dataclass(frozen=True)
class GalleryProbeSplit:
    """Index split for identification: one gallery entry per identity."""

    gallery_indices: np.ndarray
    gallery_labels: np.ndarray
    probe_indices: np.ndarray
    probe_labels: np.ndarray

    def __post_init__(self):
        gallery_labels = np.asarray(self.gallery_labels, dtype=np.int64)
        probe_labels = np.asarray(self.probe_labels, dtype=np.int64)
        require(np.unique(gallery_labels).size == gallery_labels.size,
                "gallery labels must be unique")
        require(bool(np.isin(probe_labels, gallery_labels).all()),
                "every probe label must appear in the gallery")


@dataclass(frozen=True)
class VerificationReport:
    accuracy: float
    fold_thresholds: tuple
    fold_accuracies: tuple
    roc_points: tuple

    def __post_init__(self):
        require(0.0 <= self.accuracy <= 1.0, "accuracy must lie in [0, 1]")


def embed_all(model: EmbeddingModel, head: ClassifierHead, dataset: LabeledDataset) -> np.ndarray:
    """L2-normalized embeddings for every sample."""
    require(head.class_weights.shape[1] == model.layer_dims[-1],
            "head width does not match the embedding dim")
    require(dataset.feature_dim == model.layer_dims[0],
            "dataset feature dim does not match the model input dim")
    return embed(model, dataset.features)


def pair_similarities(embeddings: np.ndarray, pairs: PairSet) -> np.ndarray:
    """Cosine similarity of each pair (embeddings are unit rows)."""
    require(int(max(pairs.first.max(), pairs.second.max())) < embeddings.shape[0],
            "pair indices exceed the embedding count")
    return np.einsum("ij,ij->i", embeddings[pairs.first], embeddings[pairs.second])


def _best_threshold(sims: np.ndarray, same: np.ndarray):
    """Threshold maximizing accuracy of `sim > t`, scanned over midpoints of
    adjacent sorted similarities plus sentinels beyond both ends.

    Ties keep the lowest threshold, making the scan deterministic.
    """
    order = np.argsort(sims, kind="stable")
    s = sims[order]
    flags = same[order]
    n = s.size
    # Cut i predicts "different" below position i and "same" at or above it.
    diff_before = np.concatenate(([0], np.cumsum(~flags)))
    same_after = int(flags.sum()) - np.concatenate(([0], np.cumsum(flags)))
    correct = diff_before + same_after
    valid = np.ones(n + 1, dtype=bool)
    valid[1:n] = s[1:] != s[:-1]
    best = int(np.argmax(np.where(valid, correct, -1)))
    if best == 0:
        threshold = s[0] - 1.0
    elif best == n:
        threshold = s[-1] + 1.0
    else:
        threshold = 0.5 * (s[best - 1] + s[best])
    return threshold, correct[best] / n


def _roc_points(sims: np.ndarray, same: np.ndarray) -> tuple:
    """(FAR, TPR) steps swept from the highest threshold down."""
    order = np.argsort(-sims, kind="stable")
    flags = same[order]
    positives = int(flags.sum())
    negatives = flags.size - positives
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    sorted_sims = sims[order]
    keep = np.ones(flags.size, dtype=bool)
    keep[:-1] = sorted_sims[:-1] != sorted_sims[1:]
    points = [(0.0, 0.0)]
    points.extend((fp[i] / negatives, tp[i] / positives) for i in np.flatnonzero(keep))
    return tuple(points)


def verification_accuracy(embeddings: np.ndarray, pairs: PairSet,
                          folds: int = 10) -> VerificationReport:
    """Round-robin K-fold pair verification.

    Each fold is scored with the threshold that maximizes accuracy on the
    remaining folds; the report carries the mean held-out accuracy along with
    ROC points computed over all pairs.
    """
    require(folds >= 2, "folds must be >= 2")
    require(pairs.pair_count >= folds, "need at least one pair per fold")
    sims = pair_similarities(embeddings, pairs)
    same = pairs.same
    fold_of = np.arange(pairs.pair_count) % folds
    thresholds = []
    accuracies = []
    for fold in range(folds):
        held_out = fold_of == fold
        threshold, _ = _best_threshold(sims[~held_out], same[~held_out])
        predictions = sims[held_out] > threshold
        thresholds.append(float(threshold))
        accuracies.append(float(np.mean(predictions == same[held_out])))
    return VerificationReport(accuracy=float(np.mean(accuracies)),
                              fold_thresholds=tuple(thresholds),
                              fold_accuracies=tuple(accuracies),
                              roc_points=_roc_points(sims, same))


def make_gallery_probe(dataset: LabeledDataset) -> GalleryProbeSplit:
    """First sample of each identity becomes the gallery; the rest probe."""
    _, first_of = np.unique(dataset.labels, return_index=True)
    gallery = np.sort(first_of)
    probe_mask = np.ones(dataset.sample_count, dtype=bool)
    probe_mask[gallery] = False
    probes = np.flatnonzero(probe_mask)
    require(probes.size >= 1, "no identity has a second sample to probe with")
    return GalleryProbeSplit(gallery_indices=gallery,
                             gallery_labels=dataset.labels[gallery],
                             probe_indices=probes,
                             probe_labels=dataset.labels[probes])


def rank1_identification(gallery_embeddings: np.ndarray, gallery_labels: np.ndarray,
                         probe_embeddings: np.ndarray, probe_labels: np.ndarray):
    """Rank-1 accuracy plus the full CMC curve.

    Gallery entries are ranked by cosine similarity per probe; similarity ties
    keep gallery order, so results are deterministic.
    """
    gallery_labels = np.asarray(gallery_labels, dtype=np.int64)
    probe_labels = np.asarray(probe_labels, dtype=np.int64)
    sims = probe_embeddings @ gallery_embeddings.T
    ranked = gallery_labels[np.argsort(-sims, axis=1, kind="stable")]
    hits = ranked == probe_labels[:, None]
    require(bool(hits.any(axis=1).all()), "every probe label must appear in the gallery")
    first_hit = np.argmax(hits, axis=1)
    counts = np.bincount(first_hit, minlength=gallery_labels.size)
    cmc = np.cumsum(counts) / probe_labels.size
    return float(cmc[0]), tuple(float(v) for v in cmc)


def tpr_at_far(similarities: np.ndarray, same_flags: np.ndarray, far: float) -> float:
    """True-positive rate at the smallest threshold whose false-acceptance
    fraction stays at or below `far`."""
    require(0.0 < far <= 1.0, "far must lie in (0, 1]")
    similarities = np.asarray(similarities, dtype=np.float64)
    same_flags = np.asarray(same_flags, dtype=np.bool_)
    negatives = np.sort(similarities[~same_flags])[::-1]
    positives = similarities[same_flags]
    require(positives.size >= 1, "need at least one same pair")
    needed = math.ceil(1.0 / far)
    if negatives.size < needed:
        raise FarUnresolvableError(
            f"far={far:g} needs at least {needed} different pairs, got {negatives.size}")
    allowed = int(math.floor(far * negatives.size))
    threshold = -np.inf if allowed >= negatives.size else negatives[allowed]
    return float(np.mean(positives > threshold))


def classification_accuracy(model: EmbeddingModel, head: ClassifierHead,
                            dataset: LabeledDataset) -> float:
    """Closed-set accuracy: argmax cosine against the head's identities."""
    require(dataset.identity_count <= head.class_weights.shape[0],
            "dataset identities exceed the head's class count")
    cosines, _ = forward(model, head, dataset.features)
    return float(np.mean(np.argmax(cosines, axis=1) == dataset.labels))


def reward(model: EmbeddingModel, head: ClassifierHead, val_set: LabeledDataset,
           val_pairs: PairSet, kind: str = "verification") -> float:
    """Scalar validation score driving the search."""
    if kind == "verification":
        return verification_accuracy(embed_all(model, head, val_set), val_pairs).accuracy
    if kind == "classification":
        return classification_accuracy(model, head, val_set)
    require(False, f"unknown reward kind {kind!r}")
