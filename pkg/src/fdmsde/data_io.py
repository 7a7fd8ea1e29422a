"""CSV ingestion: windowing a long time series into fixed-length paths,
standardization fitted on the training split only, and the two splitting
protocols (random, or the chronologically latest fraction held out)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .rng import stream
from .sde import PathsBatch


class DataFormatError(ValueError):
    """Malformed input data; the message carries the file location."""


@dataclass
class NormalizationParams:
    mean: np.ndarray  # (dim,)
    std: np.ndarray  # (dim,)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class DatasetSpec:
    path: str
    feature_columns: list[str]
    window: int = 64
    stride: int = 1
    normalization: str = "standardize"  # standardize | none
    split: str = "random"  # random | chronological-last
    test_fraction: float = 0.2
    split_seed: int = 0

    def __post_init__(self):
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.normalization not in ("standardize", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.split not in ("random", "chronological-last"):
            raise ValueError(f"unknown split {self.split!r}")
        if not self.feature_columns:
            raise ValueError("at least one feature column is required")


def _read_table(path, columns):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing columns {missing} (found {header})")
        idx = [header.index(c) for c in columns]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}"
                )
            vals = []
            for col_pos, col_name in zip(idx, columns):
                cell = row[col_pos].strip()
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{line_no}: non-numeric value {cell!r} in column {col_name!r}"
                    ) from None
            rows.append(vals)
    return np.asarray(rows, dtype=np.float64)


def load_csv(spec: DatasetSpec):
    """Window the series and split into train/test PathsBatches.

    Returns (train, test, normalization).  Standardization statistics come
    from training windows only and are applied to both splits; the returned
    params invert the transform.  The time grid is uniform on [0, 1].
    """
    table = _read_table(spec.path, spec.feature_columns)
    n_rows = table.shape[0]
    starts = list(range(0, n_rows - spec.window + 1, spec.stride))
    if not starts:
        raise DataFormatError(
            f"{spec.path}: {n_rows} rows cannot fit a window of {spec.window}"
        )

    if spec.split == "chronological-last":
        boundary = int(np.ceil(n_rows * (1.0 - spec.test_fraction)))
        train_starts = [s for s in starts if s + spec.window <= boundary]
        test_starts = [s for s in starts if s >= boundary]
    else:
        order = stream(spec.split_seed, "split").permutation(len(starts))
        n_test = max(1, int(round(len(starts) * spec.test_fraction)))
        if n_test >= len(starts):
            n_test = len(starts) - 1
        test_set = set(order[:n_test].tolist())
        train_starts = [s for i, s in enumerate(starts) if i not in test_set]
        test_starts = [s for i, s in enumerate(starts) if i in test_set]
    if not train_starts or not test_starts:
        raise DataFormatError(
            f"{spec.path}: split produced {len(train_starts)} train and "
            f"{len(test_starts)} test windows; need at least one of each"
        )

    train = np.stack([table[s : s + spec.window] for s in train_starts])
    test = np.stack([table[s : s + spec.window] for s in test_starts])
    if spec.normalization == "standardize":
        mean = train.reshape(-1, train.shape[2]).mean(axis=0)
        std = train.reshape(-1, train.shape[2]).std(axis=0)
        std = np.where(std == 0, 1.0, std)
        norm = NormalizationParams(mean, std)
        train = norm.apply(train)
        test = norm.apply(test)
    else:
        dim = train.shape[2]
        norm = NormalizationParams(np.zeros(dim), np.ones(dim))
    grid = np.linspace(0.0, 1.0, spec.window)
    return PathsBatch(grid, train), PathsBatch(grid, test), norm


def save_paths(batch: PathsBatch, path):
    """Headered CSV (path_id, t, dim_0, ...) with lossless float round trip."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t"] + [f"dim_{d}" for d in range(batch.dim)])
        for i in range(batch.n_paths):
            for t in range(batch.n_times):
                writer.writerow(
                    [i, repr(float(batch.grid[t]))] + [repr(v) for v in batch.values[i, t].tolist()]
                )


def load_paths(path) -> PathsBatch:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header[:2] != ["path_id", "t"] or not all(h.startswith("dim_") for h in header[2:]):
            raise DataFormatError(f"{path}: unexpected header {header}")
        dim = len(header) - 2
        if dim < 1:
            raise DataFormatError(f"{path}: no value columns in header {header}")
        by_path: dict[int, list] = {}
        grid_rows: dict[int, list] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}")
            try:
                pid = int(row[0])
                t = float(row[1])
                vals = [float(c) for c in row[2:]]
            except ValueError:
                raise DataFormatError(f"{path}:{line_no}: non-numeric cell in {row}") from None
            by_path.setdefault(pid, []).append(vals)
            grid_rows.setdefault(pid, []).append(t)
    if not by_path:
        return PathsBatch(np.array([0.0]), np.empty((0, 1, dim)))
    pids = sorted(by_path)
    grids = [grid_rows[p] for p in pids]
    for p, g in zip(pids, grids):
        if g != grids[0]:
            raise DataFormatError(f"{path}: path {p} has a different time grid")
    values = np.asarray([by_path[p] for p in pids], dtype=np.float64)
    return PathsBatch(np.asarray(grids[0]), values)
