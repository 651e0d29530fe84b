"""Sample pools, the label oracle, labeled/unlabeled bookkeeping and loaders."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numcore import DTYPE, ContractError, RngStream

FER_PIXELS = 2304
FER_CLASSES = 7
FER_HEADER = ["emotion", "pixels", "Usage"]
FER_USAGES = ("Training", "PublicTest", "PrivateTest")


class BudgetError(RuntimeError):
    """Raised when an annotation request would exceed the labeling budget."""


class PartitionError(RuntimeError):
    """Raised when an index is moved illegally between labeled and unlabeled."""


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class SamplePool:
    """Feature matrix of the unlabeled pool, one row per sample.

    Holds no labels; those live behind :class:`LabelOracle`.
    """

    features: np.ndarray
    num_classes: int
    dataset_id: str = "pool"
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=DTYPE)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ContractError(f"features must be a non-empty 2-D matrix, got {feats.shape}")
        if self.num_classes < 2:
            raise ContractError("num_classes must be at least 2")
        if not np.all(np.isfinite(feats)):
            raise ContractError("features must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]


class LabelOracle:
    """Ground-truth labels that can only be read through :func:`annotate`."""

    __slots__ = ("__labels", "_query_count", "num_classes")

    def __init__(self, labels, num_classes: int):
        labels = np.asarray(labels, dtype=np.int64).copy()
        if labels.ndim != 1:
            raise ContractError("labels must be one-dimensional")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ContractError(f"labels must lie in [0, {num_classes})")
        labels.setflags(write=False)
        self.__labels = labels
        self._query_count = 0
        self.num_classes = num_classes

    @property
    def query_count(self) -> int:
        return self._query_count

    def __len__(self) -> int:
        return self.__labels.size

    def _reveal(self, indices: np.ndarray) -> np.ndarray:
        # only annotate() calls this; it owns the budget check
        self._query_count += int(indices.size)
        return self.__labels[indices].copy()

    def __repr__(self) -> str:
        return f"LabelOracle(n={len(self)}, queries={self._query_count})"


@dataclass
class IndexPartition:
    """Disjoint, exhaustive split of ``0..N-1`` into labeled and unlabeled."""

    size: int
    labeled: list[int] = field(default_factory=list)

    def __post_init__(self):
        self._is_labeled = np.zeros(self.size, dtype=bool)
        for i in self.labeled:
            self._is_labeled[i] = True

    @property
    def unlabeled(self) -> np.ndarray:
        return np.flatnonzero(~self._is_labeled)

    @property
    def labeled_array(self) -> np.ndarray:
        return np.asarray(self.labeled, dtype=np.int64)

    def is_labeled(self, index: int) -> bool:
        return bool(self._is_labeled[index])

    def _move(self, indices) -> None:
        for i in indices:
            self._is_labeled[i] = True
            self.labeled.append(int(i))


@dataclass
class BudgetLedger:
    """Labeling budget ``n``, initial set ``s`` and cycle count ``c``."""

    total_budget: int
    initial_size: int
    cycles: int
    pool_size: int
    spent: int = 0

    def __post_init__(self):
        if not 0 <= self.initial_size <= self.total_budget <= self.pool_size:
            raise ContractError(
                "budget requires s <= n <= N, got "
                f"s={self.initial_size}, n={self.total_budget}, N={self.pool_size}"
            )
        if self.cycles < 2:
            raise ContractError(f"cycles must be >= 2, got {self.cycles}")

    @classmethod
    def from_fractions(
        cls, pool_size: int, budget_fraction: float, initial_fraction: float, cycles: int
    ) -> "BudgetLedger":
        n = int(round(budget_fraction * pool_size))
        s = max(1, int(round(initial_fraction * pool_size)))
        return cls(total_budget=n, initial_size=s, cycles=cycles, pool_size=pool_size)

    @property
    def remaining(self) -> int:
        return self.total_budget - self.spent

    @property
    def per_cycle_quota(self) -> int:
        return (self.total_budget - self.initial_size) // (self.cycles - 1)


def cycle_quota(ledger: BudgetLedger, cycle_index: int) -> int:
    """Number of samples annotated in cycle ``cycle_index`` (1-based).

    Cycle 1 is the random initial set. The remaining ``n - s`` samples are
    spread evenly over cycles ``2..c`` and the integer-division remainder goes
    to the last cycle, so the quotas always add up to ``n``.
    """
    c = ledger.cycles
    if not 1 <= cycle_index <= c:
        raise ContractError(f"cycle_index must be in [1, {c}], got {cycle_index}")
    if cycle_index == 1:
        return ledger.initial_size
    rest = ledger.total_budget - ledger.initial_size
    base = rest // (c - 1)
    if cycle_index == c:
        return rest - base * (c - 2)
    return base


def initial_random_sample(
    partition: IndexPartition, ledger: BudgetLedger, oracle: LabelOracle, rng: RngStream
) -> np.ndarray:
    """Label ``s`` uniformly chosen samples; returns their labels in selection order."""
    if partition.labeled or ledger.spent:
        raise PartitionError("initial sample already drawn")
    chosen = rng.choice(partition.size, size=ledger.initial_size, replace=False)
    return annotate(partition, ledger, oracle, chosen)


def annotate(
    partition: IndexPartition, ledger: BudgetLedger, oracle: LabelOracle, indices
) -> np.ndarray:
    """Query the oracle for ``indices`` and move them into the labeled set.

    All checks run before any state changes, so a rejected request leaves the
    partition, ledger and oracle untouched.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        return np.empty(0, dtype=np.int64)
    if np.unique(idx).size != idx.size:
        raise PartitionError("duplicate indices in annotation request")
    for i in idx:
        if i < 0 or i >= partition.size:
            raise PartitionError(f"index {i} outside pool of size {partition.size}")
        if partition.is_labeled(i):
            raise PartitionError(f"index {i} is already labeled")
    if ledger.spent + idx.size > ledger.total_budget:
        raise BudgetError(
            f"request for {idx.size} labels exceeds remaining budget {ledger.remaining}"
        )
    labels = oracle._reveal(idx)
    partition._move(idx)
    ledger.spent += int(idx.size)
    return labels


# ---------------------------------------------------------------------------
# Synthetic pools
# ---------------------------------------------------------------------------


def mixture_means(num_classes: int, dims: int, rng: RngStream) -> np.ndarray:
    """Class means drawn uniformly on the unit sphere."""
    means = rng.normal(size=(num_classes, dims))
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def class_counts(per_class: int, imbalance) -> np.ndarray:
    ratios = np.asarray(imbalance, dtype=DTYPE)
    if np.any(ratios <= 0):
        raise ContractError(f"imbalance ratios must be positive, got {list(ratios)}")
    return np.array([int(round(per_class * r)) for r in ratios], dtype=np.int64)


def sample_mixture(means: np.ndarray, counts, spread: float, rng: RngStream):
    """Draw ``counts[k]`` isotropic Gaussian samples around each mean, shuffled."""
    if spread <= 0:
        raise ContractError("spread must be positive")
    labels = np.repeat(np.arange(len(means)), counts)
    x = means[labels] + spread * rng.normal(size=(labels.size, means.shape[1]))
    order = rng.permutation(labels.size)
    return x[order], labels[order]


def minmax_scale(x: np.ndarray, lo=None, hi=None):
    """Per-channel min-max scaling to [0, 1]; returns (scaled, lo, hi)."""
    lo = x.min(axis=0) if lo is None else lo
    hi = x.max(axis=0) if hi is None else hi
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((x - lo) / span, 0.0, 1.0), lo, hi


def synth_gaussian_mixture(
    num_classes: int,
    dims: int,
    per_class: int,
    spread: float,
    imbalance,
    rng: RngStream,
) -> tuple[SamplePool, LabelOracle]:
    """Gaussian-mixture pool with min-max scaled features."""
    if num_classes < 2 or per_class < 1:
        raise ContractError("need num_classes >= 2 and per_class >= 1")
    if len(imbalance) != num_classes:
        raise ContractError("imbalance must have one ratio per class")
    counts = class_counts(per_class, imbalance)
    means = mixture_means(num_classes, dims, rng.child(0))
    x, y = sample_mixture(means, counts, spread, rng.child(1))
    x, _, _ = minmax_scale(x)
    pool = SamplePool(x, num_classes, dataset_id=f"gmm-k{num_classes}-d{dims}")
    return pool, LabelOracle(y, num_classes)


# ---------------------------------------------------------------------------
# FER2013 CSV
# ---------------------------------------------------------------------------


def _parse_fer_rows(path: Path, expected_pixels: int):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if [h.strip() for h in header] != FER_HEADER:
            raise DatasetFormatError(f"{path}: line 1: expected header emotion,pixels,Usage")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise DatasetFormatError(f"{path}: line {line}: expected 3 fields, got {len(row)}")
            emotion, pixels, usage = row
            try:
                label = int(emotion)
                values = np.array(pixels.split(), dtype=np.int64)
            except ValueError:
                raise DatasetFormatError(f"{path}: line {line}: non-integer field") from None
            if values.size != expected_pixels:
                raise DatasetFormatError(
                    f"{path}: line {line}: expected {expected_pixels} pixels, found {values.size}"
                )
            if values.size and (values.min() < 0 or values.max() > 255):
                raise DatasetFormatError(f"{path}: line {line}: pixel outside [0, 255]")
            if not 0 <= label < FER_CLASSES:
                raise DatasetFormatError(f"{path}: line {line}: emotion {label} outside 0..6")
            yield label, values, usage.strip()


def load_fer2013_csv(
    path, usage: str = "Training", expected_pixels: int = FER_PIXELS
) -> tuple[SamplePool, LabelOracle]:
    """Load rows of one ``Usage`` split; pixels are scaled by 1/255."""
    if usage not in FER_USAGES:
        raise ContractError(f"usage must be one of {FER_USAGES}, got {usage!r}")
    path = Path(path)
    rows, labels = [], []
    for label, values, row_usage in _parse_fer_rows(path, expected_pixels):
        if row_usage == usage:
            rows.append(values)
            labels.append(label)
    if not rows:
        raise DatasetFormatError(f"{path}: no rows with Usage == {usage!r}")
    features = np.stack(rows).astype(DTYPE) / 255.0
    side = int(round(np.sqrt(expected_pixels)))
    shape = (side, side) if side * side == expected_pixels else None
    pool = SamplePool(features, FER_CLASSES, dataset_id=f"fer2013-{usage}", image_shape=shape)
    return pool, LabelOracle(labels, FER_CLASSES)


def write_fer_csv(path, features: np.ndarray, labels, usage: str = "Training") -> None:
    """Write rows in the FER2013 layout; features in [0, 1] become 0..255 integers."""
    pixels = np.rint(np.clip(features, 0.0, 1.0) * 255.0).astype(np.int64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FER_HEADER)
        for label, row in zip(labels, pixels):
            writer.writerow([int(label), " ".join(map(str, row)), usage])
