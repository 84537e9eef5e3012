"""Synthetic data, Dirichlet label-skew partitioning and server-side splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fedsel.nn import LabeledDataset, UnlabeledDataset


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    alpha: float
    seed: int

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be >= 1, got {self.num_clients}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class DataBundle:
    client_sets: list[LabeledDataset]
    server_unlabeled: UnlabeledDataset
    server_test: LabeledDataset


def make_synthetic(
    num_classes: int,
    input_dim: int,
    samples_per_class: int,
    class_separation: float,
    seed: int,
) -> LabeledDataset:
    """Balanced Gaussian blobs with unit covariance.

    Class centers are random unit directions scaled by ``class_separation``.
    Samples are ordered by class.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    if samples_per_class < 1:
        raise ValueError(f"samples_per_class must be >= 1, got {samples_per_class}")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(num_classes, input_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = class_separation * dirs
    x = np.concatenate(
        [c + rng.normal(size=(samples_per_class, input_dim)) for c in centers]
    )
    y = np.repeat(np.arange(num_classes), samples_per_class)
    return LabeledDataset(x, y)


def _subset(data: LabeledDataset, idx: np.ndarray) -> LabeledDataset:
    return LabeledDataset(data.features[idx], data.labels[idx])


def split_server(
    data: LabeledDataset, n_unlabeled: int, n_test: int, seed: int
) -> tuple[UnlabeledDataset, LabeledDataset, LabeledDataset]:
    """Shuffle, then carve off (unlabeled probe, labeled test, remainder for clients)."""
    if n_unlabeled < 0 or n_test < 0:
        raise ValueError("split sizes must be non-negative")
    if n_unlabeled + n_test > len(data):
        raise ValueError(
            f"cannot take {n_unlabeled} + {n_test} samples from a dataset of {len(data)}"
        )
    perm = np.random.default_rng(seed).permutation(len(data))
    u = perm[:n_unlabeled]
    t = perm[n_unlabeled : n_unlabeled + n_test]
    rest = perm[n_unlabeled + n_test :]
    return (
        UnlabeledDataset(data.features[u]),
        _subset(data, t),
        _subset(data, rest),
    )


def largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer counts summing exactly to ``total``, closest to ``total * proportions``.

    Leftover units go to the largest fractional parts, ties to the lowest index.
    """
    raw = total * np.asarray(proportions, dtype=np.float64)
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(data: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    """Split ``data`` across clients with per-class Dirichlet(alpha) proportions.

    Every client ends up with at least one sample as long as the pool has
    ``num_clients`` samples: empty clients take one sample from the currently
    largest client.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    k = spec.num_clients
    rng = np.random.default_rng(spec.seed)
    owned: list[list[int]] = [[] for _ in range(k)]
    for cls in np.unique(data.labels):
        members = np.flatnonzero(data.labels == cls)
        members = members[rng.permutation(len(members))]
        g = rng.gamma(spec.alpha, 1.0, size=k)
        total = g.sum()
        # alpha this small can underflow every draw; fall back to one random owner
        p = g / total if total > 0 else np.eye(k)[rng.integers(k)]
        counts = largest_remainder(len(members), p)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for c in range(k):
            owned[c].extend(members[bounds[c] : bounds[c + 1]].tolist())

    for c in range(k):
        if not owned[c]:
            donor = max(range(k), key=lambda j: (len(owned[j]), -j))
            if len(owned[donor]) < 2:
                break
            owned[c].append(owned[donor].pop())

    return [_subset(data, np.sort(np.asarray(ix, dtype=np.int64))) for ix in owned]


def label_entropy(data: LabeledDataset, num_classes: int) -> float:
    """Shannon entropy (nats) of a dataset's empirical label distribution."""
    counts = np.bincount(data.labels, minlength=num_classes).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def build_bundle(
    data: LabeledDataset,
    num_clients: int,
    alpha: float,
    n_unlabeled: int,
    n_test: int,
    seed: int,
) -> DataBundle:
    unlabeled, test, pool = split_server(data, n_unlabeled, n_test, seed)
    clients = dirichlet_partition(pool, PartitionSpec(num_clients, alpha, seed + 1))
    return DataBundle(clients, unlabeled, test)


def load_csv(path: str | Path) -> LabeledDataset:
    """Read ``f0,...,fD,label`` rows. Non-finite feature values are rejected."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[-1] != "label":
            raise ValueError(f"{path}: header must be f0,...,fD,label")
        if header[:-1] != [f"f{i}" for i in range(len(header) - 1)]:
            raise ValueError(f"{path}: feature columns must be named f0, f1, ...")
        width = len(header)
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(rec)}")
            try:
                feats = [float(v) for v in rec[:-1]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in feats):
                raise ValueError(f"{path}:{lineno}: non-finite feature value")
            lab = rec[-1].strip()
            if not lab.isdigit():
                raise ValueError(f"{path}:{lineno}: label must be a non-negative integer, got {lab!r}")
            rows.append(feats)
            labels.append(int(lab))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return LabeledDataset(np.asarray(rows, dtype=np.float64), np.asarray(labels))
