"""Group-structured datasets, synthetic redundancy injection and group-level splits."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

SPLITS = ("train", "validation", "test")
BASE, DUPLICATE = "base", "duplicate"


class DatasetError(ValueError):
    """Raised for malformed datasets or files."""


@dataclass(frozen=True)
class SampleRecord:
    sample_id: int
    features: np.ndarray
    label: int
    group_id: int
    origin: str
    parent_id: int | None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of samples.

    ``features`` is ``(N, D)`` for the vector pathway or ``(N, H, W)`` for
    the grid pathway. ``parent_id`` is -1 for base samples.
    """

    sample_id: np.ndarray
    group_id: np.ndarray
    label: np.ndarray
    is_duplicate: np.ndarray
    parent_id: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        n = len(self.sample_id)
        cols = dict(
            sample_id=np.asarray(self.sample_id, dtype=np.int64),
            group_id=np.asarray(self.group_id, dtype=np.int64),
            label=np.asarray(self.label, dtype=np.int64),
            is_duplicate=np.asarray(self.is_duplicate, dtype=bool),
            parent_id=np.asarray(self.parent_id, dtype=np.int64),
            features=np.asarray(self.features, dtype=np.float64),
        )
        for name, arr in cols.items():
            if len(arr) != n:
                raise DatasetError(f"column {name!r} has {len(arr)} rows, expected {n}")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if cols["features"].ndim not in (2, 3):
            raise DatasetError("features must be (N, D) or (N, H, W)")
        self._validate()

    def _validate(self):
        if len(np.unique(self.sample_id)) != len(self.sample_id):
            raise DatasetError("sample_id values are not unique")
        if np.any(self.sample_id < 0) or np.any(self.group_id < 0):
            raise DatasetError("sample_id and group_id must be non-negative")
        if not np.all(np.isin(self.label, (0, 1))):
            raise DatasetError("labels must be 0 or 1")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features must be finite")
        if np.any((self.parent_id >= 0) != self.is_duplicate):
            raise DatasetError("parent_id must be set exactly for duplicates")
        if self.is_duplicate.any():
            dup = np.flatnonzero(self.is_duplicate)
            # Parents may fall outside a subset; check the ones present.
            present = np.isin(self.parent_id[dup], self.sample_id)
            dup = dup[present]
            pos = self.index_of(self.parent_id[dup])
            if np.any(self.group_id[pos] != self.group_id[dup]) or np.any(
                self.label[pos] != self.label[dup]
            ):
                raise DatasetError("duplicate parent must share group_id and label")

    def __len__(self):
        return len(self.sample_id)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("sample_id", "group_id", "label", "is_duplicate", "parent_id", "features")
        ) and self.features.shape == other.features.shape

    @property
    def is_grid(self) -> bool:
        return self.features.ndim == 3

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.features.shape[1:]

    def index_of(self, ids) -> np.ndarray:
        """Row positions of the given sample ids (raises on unknown ids)."""
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(self.sample_id, kind="stable")
        sorted_ids = self.sample_id[order]
        pos = np.searchsorted(sorted_ids, ids)
        pos = np.clip(pos, 0, len(sorted_ids) - 1)
        if len(ids) and np.any(sorted_ids[pos] != ids):
            missing = ids[sorted_ids[pos] != ids]
            raise DatasetError(f"unknown sample ids: {missing[:5].tolist()}")
        return order[pos]

    def subset(self, ids) -> Dataset:
        """Rows with the given sample ids, in the order given."""
        idx = self.index_of(ids)
        return Dataset(
            self.sample_id[idx], self.group_id[idx], self.label[idx],
            self.is_duplicate[idx], self.parent_id[idx], self.features[idx],
        )

    def records(self):
        for i in range(len(self)):
            pid = int(self.parent_id[i])
            yield SampleRecord(
                sample_id=int(self.sample_id[i]),
                features=self.features[i],
                label=int(self.label[i]),
                group_id=int(self.group_id[i]),
                origin=DUPLICATE if self.is_duplicate[i] else BASE,
                parent_id=pid if pid >= 0 else None,
            )


@dataclass(frozen=True)
class GroupSizes:
    """Group-size distribution: a ``heavy_fraction`` of groups draw their size
    from the upper half of ``[min_size, max_size]``, the rest from the lower half."""

    min_size: int = 1
    max_size: int = 30
    heavy_fraction: float = 0.1

    def sample(self, n_groups: int, rng: np.random.Generator) -> np.ndarray:
        mid = (self.min_size + self.max_size) // 2
        heavy = rng.random(n_groups) < self.heavy_fraction
        light_sizes = rng.integers(self.min_size, mid + 1, size=n_groups)
        heavy_sizes = rng.integers(max(mid, self.min_size), self.max_size + 1, size=n_groups)
        return np.where(heavy, heavy_sizes, light_sizes)


@dataclass(frozen=True)
class SyntheticConfig:
    n_groups: int = 300
    samples_per_group: GroupSizes = field(default_factory=GroupSizes)
    duplicate_fraction: float = 0.6
    perturbation_sigma: float = 0.05
    class_prior: float = 0.45
    feature_dim: int = 8
    grid_shape: tuple[int, int] | None = None
    class_separation: float = 2.0
    abnormal_spread: float = 1.0
    mean_shift: float = 0.0
    group_id_offset: int = 0
    sample_id_offset: int = 0
    seed: int = 0

    def validate(self):
        if self.n_groups < 3:
            raise ValueError("n_groups must be at least 3 to allow a three-way split")
        if not 0.0 <= self.duplicate_fraction < 1.0:
            raise ValueError("duplicate_fraction must lie in [0, 1)")
        if self.perturbation_sigma < 0:
            raise ValueError("perturbation_sigma must be non-negative")
        if not 0.0 < self.class_prior < 1.0:
            raise ValueError("class_prior must lie in (0, 1)")
        if self.class_separation < 0:
            raise ValueError("class_separation must be non-negative")
        if self.abnormal_spread <= 0:
            raise ValueError("abnormal_spread must be positive")
        sizes = self.samples_per_group
        if sizes.min_size < 1 or sizes.max_size < sizes.min_size:
            raise ValueError("group sizes must satisfy 1 <= min_size <= max_size")
        if self.grid_shape is None and self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.grid_shape is not None and min(self.grid_shape) < 1:
            raise ValueError("grid_shape entries must be positive")


def _grid_pattern(shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    # Centred blob: the "abnormal" class carries a smooth bump, normals a flat field.
    return np.exp(-(xx**2 + yy**2) / 0.3)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Draw a dataset with an explicit share of near-duplicate samples.

    Every group keeps at least one base sample; duplicate slots are drawn among
    the remaining positions so large groups carry most of the redundancy.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    sizes = config.samples_per_group.sample(config.n_groups, rng)
    n = int(sizes.sum())
    n_dup = int(math.floor(config.duplicate_fraction * n + 0.5))
    group_of = np.repeat(np.arange(config.n_groups), sizes)
    first = np.r_[0, np.cumsum(sizes)[:-1]]
    candidates = np.setdiff1d(np.arange(n), first)
    if n_dup > len(candidates):
        raise ValueError(
            f"duplicate_fraction {config.duplicate_fraction} needs {n_dup} duplicates "
            f"but only {len(candidates)} non-leading slots exist"
        )
    is_dup = np.zeros(n, dtype=bool)
    is_dup[rng.choice(candidates, size=n_dup, replace=False)] = True

    labels = (rng.random(n) < config.class_prior).astype(np.int64)
    spread = np.where(labels == 1, config.abnormal_spread, 1.0)
    if config.grid_shape is None:
        direction = np.zeros(config.feature_dim)
        direction[0] = 1.0
        noise = rng.standard_normal((n, config.feature_dim)) * spread[:, None]
        feats = noise + np.outer(labels - 0.5, direction) * config.class_separation
        feats += config.mean_shift
    else:
        pattern = _grid_pattern(config.grid_shape)
        noise = rng.standard_normal((n, *config.grid_shape)) * spread[:, None, None]
        feats = noise + config.class_separation * labels[:, None, None] * pattern
        feats += config.mean_shift

    parent = np.full(n, -1, dtype=np.int64)
    for g in range(config.n_groups):
        lo, hi = first[g], first[g] + sizes[g]
        members = np.arange(lo, hi)
        bases = members[~is_dup[lo:hi]]
        dups = members[is_dup[lo:hi]]
        if len(dups):
            parent[dups] = rng.choice(bases, size=len(dups))
    dup_idx = np.flatnonzero(is_dup)
    labels[dup_idx] = labels[parent[dup_idx]]
    perturb = rng.standard_normal((len(dup_idx), *feats.shape[1:])) * config.perturbation_sigma
    feats[dup_idx] = feats[parent[dup_idx]] + perturb

    sample_id = np.arange(n, dtype=np.int64) + config.sample_id_offset
    parent_sid = np.where(parent >= 0, parent + config.sample_id_offset, -1)
    return Dataset(
        sample_id=sample_id,
        group_id=group_of + config.group_id_offset,
        label=labels,
        is_duplicate=is_dup,
        parent_id=parent_sid,
        features=feats,
    )


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    sample_id: np.ndarray
    split: np.ndarray  # values from SPLITS
    targets: tuple[float, float, float]

    def ids(self, name: str) -> np.ndarray:
        return np.sort(self.sample_id[self.split == name])

    def achieved(self) -> dict[str, float]:
        n = len(self.split)
        return {s: float(np.sum(self.split == s)) / n for s in SPLITS}

    def __eq__(self, other):
        return (
            isinstance(other, SplitAssignment)
            and np.array_equal(self.sample_id, other.sample_id)
            and np.array_equal(self.split, other.split)
        )


def split_by_group(dataset: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> SplitAssignment:
    """Assign whole groups to train/validation/test.

    Groups are shuffled with ``seed`` then placed largest-first (stable, so
    equal sizes keep the shuffled order) into the split whose filled share is
    furthest below its target.
    """
    fractions = np.asarray(fractions, dtype=float)
    if len(fractions) != 3 or np.any(fractions <= 0) or not math.isclose(fractions.sum(), 1.0):
        raise ValueError("fractions must be three positive numbers summing to 1")
    groups, counts = np.unique(dataset.group_id, return_counts=True)
    if len(groups) < 3:
        raise ValueError("at least 3 groups are required")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(groups))
    groups, counts = groups[perm], counts[perm]
    order = np.argsort(-counts, kind="stable")
    n = len(dataset)
    filled = np.zeros(3)
    group_split = {}
    for gi in order:
        deficit = fractions - filled / n
        s = int(np.argmax(deficit))
        group_split[int(groups[gi])] = s
        filled[s] += counts[gi]
    split_idx = np.array([group_split[int(g)] for g in dataset.group_id], dtype=np.int64)
    split = np.array(SPLITS, dtype=object)[split_idx].astype(str)
    for s, name in enumerate(SPLITS):
        labels = dataset.label[split_idx == s]
        if len(labels) == 0 or labels.min() == labels.max():
            raise ValueError(f"split {name!r} would lack samples of one class")
    return SplitAssignment(dataset.sample_id.copy(), split, tuple(float(f) for f in fractions))


def save_splits(assign: SplitAssignment, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "split"])
        for sid, s in zip(assign.sample_id, assign.split):
            w.writerow([int(sid), s])


def load_splits(path, fractions=(0.7, 0.1, 0.2)) -> SplitAssignment:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return SplitAssignment(
        np.array([int(r["sample_id"]) for r in rows], dtype=np.int64),
        np.array([r["split"] for r in rows]),
        tuple(fractions),
    )


# -- CSV interchange ---------------------------------------------------------

_GRID_COL = re.compile(r"^g(\d+)_(\d+)$")
_VEC_COL = re.compile(r"^f(\d+)$")
_REQUIRED = ("sample_id", "group_id", "label")


def _fmt(x: float) -> str:
    return format(x, ".17g")


def save_csv(dataset: Dataset, path):
    """Write ``dataset``; grid datasets use ``g{row}_{col}`` feature columns."""
    if dataset.is_grid:
        h, w = dataset.feature_shape
        fcols = [f"g{i}_{j}" for i in range(h) for j in range(w)]
    else:
        fcols = [f"f{i}" for i in range(dataset.feature_shape[0])]
    flat = dataset.features.reshape(len(dataset), -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "group_id", "label", "origin", "parent_id", *fcols])
        for i in range(len(dataset)):
            pid = int(dataset.parent_id[i])
            w.writerow([
                int(dataset.sample_id[i]),
                int(dataset.group_id[i]),
                int(dataset.label[i]),
                DUPLICATE if dataset.is_duplicate[i] else BASE,
                pid if pid >= 0 else "",
                *(_fmt(v) for v in flat[i]),
            ])


def load_csv(path) -> Dataset:
    """Read a dataset written by :func:`save_csv` or produced externally.

    ``origin`` and ``parent_id`` columns are optional; without them every row
    is a base sample. Errors name the 1-based data row.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        missing = [c for c in _REQUIRED if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing columns {missing}")
        col = {name: i for i, name in enumerate(header)}
        vec = sorted((int(m.group(1)), i) for i, c in enumerate(header) if (m := _VEC_COL.match(c)))
        grid = sorted(
            (int(m.group(1)), int(m.group(2)), i) for i, c in enumerate(header) if (m := _GRID_COL.match(c))
        )
        if vec and grid:
            raise DatasetError(f"{path}: mixes f* and g*_* feature columns")
        if vec:
            if [k for k, _ in vec] != list(range(len(vec))):
                raise DatasetError(f"{path}: feature columns must be f0..f{{D-1}}")
            fidx = [i for _, i in vec]
            shape: tuple[int, ...] = (len(vec),)
        elif grid:
            h = max(r for r, _, _ in grid) + 1
            w = max(c for _, c, _ in grid) + 1
            if len(grid) != h * w:
                raise DatasetError(f"{path}: incomplete grid declaration")
            fidx = [i for _, _, i in grid]
            shape = (h, w)
        else:
            raise DatasetError(f"{path}: no feature columns")

        sid, gid, lab, dup, par, feats = [], [], [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            try:
                label = int(row[col["label"]])
                values = [float(row[i]) for i in fidx]
                s = int(row[col["sample_id"]])
                g = int(row[col["group_id"]])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {row_no}: {exc}") from None
            if label not in (0, 1):
                raise DatasetError(f"{path}: row {row_no}: label {label} is not binary")
            if not all(math.isfinite(v) for v in values):
                raise DatasetError(f"{path}: row {row_no}: non-finite feature value")
            origin = row[col["origin"]] if "origin" in col else BASE
            if origin not in (BASE, DUPLICATE):
                raise DatasetError(f"{path}: row {row_no}: unknown origin {origin!r}")
            p = row[col["parent_id"]] if "parent_id" in col else ""
            sid.append(s)
            gid.append(g)
            lab.append(label)
            dup.append(origin == DUPLICATE)
            par.append(int(p) if p != "" else -1)
            feats.append(values)
    features = np.array(feats, dtype=np.float64).reshape(len(sid), *shape)
    return Dataset(np.array(sid), np.array(gid), np.array(lab), np.array(dup), np.array(par), features)

