"""Datasets, synthetic generators and index-level split plans.

Plans never copy samples. They hold sorted tuples of integer indices into a
:class:`Dataset`, so the same underlying samples are shared by every protocol
that runs on them.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from postselect_lab.seeding import rng_for

GENERATORS = ("gaussian-clusters", "pure-noise-labels", "labeled-grid")

# gaussian-clusters geometry: unit-variance blobs with adjacent centres this far apart
CLUSTER_SEPARATION = 10.0

NESTED_RETRY_BUDGET = 16

Index = tuple[int, ...]


@dataclass(frozen=True)
class LabeledSample:
    features: tuple[float, ...]
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered, immutable collection of labelled feature vectors."""

    features: np.ndarray
    labels: np.ndarray
    num_labels: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if features.ndim != 2 or features.shape[1] < 1:
            raise ValueError("features must be a 2-d array with at least one column")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must have one entry per sample")
        if self.num_labels < 2:
            raise ValueError("num_labels must be at least 2")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_labels):
            raise ValueError(f"labels must lie in 0..{self.num_labels - 1}")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(tuple(map(float, x)), int(y)) for x, y in zip(self.features, self.labels)]

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self.samples)

    def manifest(self) -> dict:
        return {
            "d": len(self),
            "dim": self.dim,
            "num_labels": self.num_labels,
            "provenance": self.provenance,
        }

    def csv_text(self) -> str:
        """One row per sample, features then label, under a header row."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(self.dim)] + ["label"])
        for x, y in zip(self.features, self.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
        return buf.getvalue()

    def to_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.csv_text())

    def save(self, csv_path: str | Path, manifest_path: str | Path) -> None:
        self.to_csv(csv_path)
        Path(manifest_path).write_text(json.dumps(self.manifest(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, csv_path: str | Path, manifest_path: str | Path) -> "Dataset":
        manifest = json.loads(Path(manifest_path).read_text())
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        dim = len(header) - 1
        if dim != manifest["dim"]:
            raise ValueError(f"CSV has {dim} feature columns, manifest declares {manifest['dim']}")
        features = np.array([[float(v) for v in r[:dim]] for r in rows], dtype=np.float64).reshape(-1, dim)
        labels = np.array([int(r[dim]) for r in rows], dtype=np.int64)
        return cls(features, labels, manifest["num_labels"], manifest.get("provenance", {}))


def generate_synthetic(kind: str, d: int, dim: int, num_labels: int, seed: int) -> Dataset:
    """Build a deterministic synthetic dataset.

    ``gaussian-clusters`` places one unit-variance blob per class with centres
    well apart, so nearest-neighbour rules are close to perfect.
    ``pure-noise-labels`` draws labels uniformly and independently of the
    features; no learner can beat chance on held-out points.
    ``labeled-grid`` puts samples on distinct integer lattice points labelled by
    coordinate sum modulo ``num_labels``.
    """
    if kind not in GENERATORS:
        raise ValueError(f"invalid generator kind {kind!r}; expected one of {GENERATORS}")
    if num_labels < 2:
        raise ValueError("num_labels must be at least 2")
    if d < num_labels:
        raise ValueError(f"d < num_labels ({d} < {num_labels})")
    if dim < 1:
        raise ValueError("dim must be positive")
    rng = rng_for(seed, "generate", kind)

    if kind == "gaussian-clusters":
        labels = rng.permutation(np.arange(d) % num_labels)
        centres = _cluster_centres(dim, num_labels)
        features = centres[labels] + rng.standard_normal((d, dim))
    elif kind == "pure-noise-labels":
        features = rng.standard_normal((d, dim))
        labels = rng.integers(0, num_labels, size=d)
    else:
        side = math.ceil(d ** (1.0 / dim))
        while side**dim < d:
            side += 1
        flat = rng.permutation(side**dim)[:d]
        coords = np.stack(np.unravel_index(flat, (side,) * dim), axis=1)
        features = coords.astype(np.float64)
        labels = coords.sum(axis=1) % num_labels

    provenance = {"generator": kind, "d": d, "dim": dim, "num_labels": num_labels, "seed": seed}
    return Dataset(features, labels, num_labels, provenance)


def _cluster_centres(dim: int, num_labels: int) -> np.ndarray:
    centres = np.zeros((num_labels, dim))
    if dim == 1:
        centres[:, 0] = CLUSTER_SEPARATION * np.arange(num_labels)
        return centres
    # regular polygon in the first two coordinates, adjacent vertices CLUSTER_SEPARATION apart
    radius = CLUSTER_SEPARATION / (2.0 * math.sin(math.pi / num_labels))
    angles = 2.0 * math.pi * np.arange(num_labels) / num_labels
    centres[:, 0] = radius * np.cos(angles)
    centres[:, 1] = radius * np.sin(angles)
    return centres


def _sorted(indices: Sequence[int] | np.ndarray) -> Index:
    return tuple(sorted(int(i) for i in indices))


@dataclass(frozen=True)
class SplitPlan:
    fit_idx: Index
    val_idx: Index
    test_idx: Index

    def __post_init__(self) -> None:
        fit, val, test = set(self.fit_idx), set(self.val_idx), set(self.test_idx)
        if not fit:
            raise ValueError("empty fit set")
        if not val:
            raise ValueError("empty validation set")
        if fit & val or fit & test or val & test:
            raise ValueError("fit, validation and test sets must be pairwise disjoint")

    @property
    def trainer_possession(self) -> bool:
        """True when no test set is withheld from the trainer."""
        return not self.test_idx

    def to_dict(self) -> dict:
        return {
            "fit_idx": list(self.fit_idx),
            "val_idx": list(self.val_idx),
            "test_idx": list(self.test_idx),
            "trainer_possession": self.trainer_possession,
        }


def make_split(dataset: Dataset | int, fractions: Sequence[float], seed: int) -> SplitPlan:
    """Partition a dataset into disjoint fit / validation / test index sets.

    Validation and test sizes are the rounded proportions; whatever is left
    over goes to the fit set.
    """
    d = dataset if isinstance(dataset, int) else len(dataset)
    if len(fractions) != 3:
        raise ValueError("fractions must be (fit, val, test)")
    f_fit, f_val, f_test = (float(f) for f in fractions)
    if f_fit <= 0:
        raise ValueError("empty fit set")
    if f_val <= 0:
        raise ValueError("empty validation set")
    if f_test < 0:
        raise ValueError("test fraction must be non-negative")
    if abs(f_fit + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n_val = int(round(f_val * d))
    n_test = int(round(f_test * d))
    n_fit = d - n_val - n_test
    if n_fit <= 0:
        raise ValueError("empty fit set")
    if n_val <= 0:
        raise ValueError("empty validation set")
    perm = rng_for(seed, "split").permutation(d)
    return SplitPlan(
        fit_idx=_sorted(perm[:n_fit]),
        val_idx=_sorted(perm[n_fit : n_fit + n_val]),
        test_idx=_sorted(perm[n_fit + n_val :]),
    )


def _check_partition(parts: Sequence[Index], d: int, what: str) -> None:
    flat = [i for p in parts for i in p]
    if len(flat) != d or set(flat) != set(range(d)):
        raise ValueError(f"{what} must be mutually exclusive and exhaustive over 0..{d - 1}")


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Index, ...]
    source_size: int

    def __post_init__(self) -> None:
        if len(self.folds) < 2:
            raise ValueError("a fold plan needs at least 2 folds")
        if any(not f for f in self.folds):
            raise ValueError("folds must be non-empty")
        _check_partition(self.folds, self.source_size, "folds")
        sizes = [len(f) for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise ValueError("fold sizes must differ by at most 1")

    @property
    def n(self) -> int:
        return len(self.folds)

    @property
    def is_loocv(self) -> bool:
        return self.n == self.source_size

    def validation_units(self) -> list[Index]:
        return list(self.folds)

    def to_dict(self) -> dict:
        return {"folds": [list(f) for f in self.folds], "source_size": self.source_size}

    @classmethod
    def from_dict(cls, payload: dict) -> "FoldPlan":
        return cls(tuple(tuple(f) for f in payload["folds"]), payload["source_size"])


def make_folds(d: int, n: int, seed: int) -> FoldPlan:
    """Shuffle ``0..d-1`` and cut it into ``n`` folds of nearly equal size.

    Earlier folds take the remainder, so ``d=10, n=3`` gives sizes 4, 3, 3.
    ``n == d`` is leave-one-out.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if n > d:
        raise ValueError(f"n > d ({n} > {d})")
    perm = rng_for(seed, "folds", n).permutation(d)
    return FoldPlan(tuple(_sorted(part) for part in np.array_split(perm, n)), d)


@dataclass(frozen=True)
class NestedFoldPlan:
    """An input partition and an output partition whose intersections form an n x k grid."""

    input_folds: tuple[Index, ...]
    output_folds: tuple[Index, ...]
    source_size: int

    def __post_init__(self) -> None:
        if len(self.input_folds) < 2 or len(self.output_folds) < 2:
            raise ValueError("n and k must both be at least 2")
        _check_partition(self.input_folds, self.source_size, "input folds")
        _check_partition(self.output_folds, self.source_size, "output folds")
        for i, j, cell in self.iter_cells():
            if not cell:
                raise ValueError(f"empty validation cell ({i}, {j})")
            if len(cell) == self.source_size:
                raise ValueError(f"cell ({i}, {j}) leaves an empty fit set")

    @property
    def n(self) -> int:
        return len(self.input_folds)

    @property
    def k(self) -> int:
        return len(self.output_folds)

    def cell(self, i: int, j: int) -> Index:
        out = set(self.output_folds[j])
        return tuple(x for x in self.input_folds[i] if x in out)

    @property
    def cells(self) -> tuple[tuple[Index, ...], ...]:
        return tuple(tuple(self.cell(i, j) for j in range(self.k)) for i in range(self.n))

    def iter_cells(self) -> Iterator[tuple[int, int, Index]]:
        for i in range(self.n):
            for j in range(self.k):
                yield i, j, self.cell(i, j)

    def fit_cell(self, i: int, j: int) -> Index:
        held = set(self.cell(i, j))
        return tuple(x for x in range(self.source_size) if x not in held)

    def validation_units(self) -> list[Index]:
        return [cell for _, _, cell in self.iter_cells()]

    def to_dict(self) -> dict:
        return {
            "input_folds": [list(f) for f in self.input_folds],
            "output_folds": [list(f) for f in self.output_folds],
            "cells": [[list(c) for c in row] for row in self.cells],
            "source_size": self.source_size,
        }


def make_nested_folds(d: int, n: int, k: int, seed: int) -> NestedFoldPlan:
    """Build an ``n x k`` input/output fold grid over ``0..d-1``.

    The input partition comes from one shuffle. Each input fold is then
    reshuffled on its own stream and dealt round-robin into the ``k`` output
    folds, with the dealing offset carried across input folds. Every cell
    therefore holds ``floor`` or ``ceil`` of ``d / (n k)`` samples and the
    output folds stay balanced.
    """
    if n < 2 or k < 2:
        raise ValueError("n and k must both be at least 2")
    if n * k > d:
        raise ValueError(f"n*k > d ({n}*{k} > {d}); cannot guarantee non-empty cells")
    last_error: ValueError | None = None
    for attempt in range(NESTED_RETRY_BUDGET):
        in_perm = rng_for(seed, "nested-input", n, k, attempt).permutation(d)
        input_folds = [np.asarray(p) for p in np.array_split(in_perm, n)]
        buckets: list[list[int]] = [[] for _ in range(k)]
        offset = 0
        for i, fold in enumerate(input_folds):
            dealt = rng_for(seed, "nested-output", n, k, attempt, i).permutation(fold)
            for pos, idx in enumerate(dealt):
                buckets[(offset + pos) % k].append(int(idx))
            offset += len(dealt)
        try:
            return NestedFoldPlan(
                tuple(_sorted(f) for f in input_folds),
                tuple(_sorted(b) for b in buckets),
                d,
            )
        except ValueError as exc:
            last_error = exc
    raise ValueError(f"could not deal non-empty nested cells within {NESTED_RETRY_BUDGET} attempts: {last_error}")
