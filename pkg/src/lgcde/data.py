"""Datasets, variable partitions, configuration and seeded randomness."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

MIN_ESTIMATION_N = 20
MAX_SEED = 2**64 - 1
CONFIG_KEYS = frozenset({"response", "conditioning", "bandwidth", "grid_size", "seed"})


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable n x p table of finite, non-constant continuous columns.

    Parameters
    ----------
    values : array_like, shape (n, p)
        Raw observations. Copied and frozen on construction.
    names : sequence of str, optional
        Column labels. Defaults to ``X1 .. Xp``.
    """

    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise ValidationError(f"expected a non-empty 2-D table, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValidationError(
                f"non-finite value at ({bad[0] + 1},{bad[1] + 1}); NaN and Inf are not allowed"
            )
        if values.shape[0] > 1:
            const = np.flatnonzero(np.all(values == values[0], axis=0))
        else:
            const = np.arange(values.shape[1])
        names = tuple(self.names) if self.names else tuple(f"X{i + 1}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise ValidationError(f"{len(names)} names given for {values.shape[1]} columns")
        if len(set(names)) != len(names):
            raise ValidationError("duplicate column names")
        if const.size:
            raise ValidationError(f"constant column {names[const[0]]!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def column(self, key: int | str) -> np.ndarray:
        return self.values[:, self.index(key)]

    def index(self, key: int | str) -> int:
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < self.p:
                raise ValidationError(f"column index {key} out of range for p={self.p}")
            return int(key)
        try:
            return self.names.index(key)
        except ValueError:
            raise ValidationError(f"unknown column label {key!r}") from None

    def map_columns(self, fn) -> "Dataset":
        """Return a new dataset with ``fn`` applied elementwise to every column."""
        return Dataset(fn(np.array(self.values)), self.names)

    def require_estimable(self):
        if self.n < MIN_ESTIMATION_N:
            raise ValidationError(f"need n >= {MIN_ESTIMATION_N} observations, got {self.n}")
        if self.p < 2:
            raise ValidationError(f"need p >= 2 variables, got {self.p}")

    def __repr__(self):
        return f"Dataset(n={self.n}, p={self.p}, names={list(self.names)})"


@dataclass(frozen=True)
class Partition:
    """Ordered response and conditioning column indices into a dataset."""

    response_idx: tuple[int, ...]
    conditioning_idx: tuple[int, ...]

    def __post_init__(self):
        r = tuple(int(i) for i in self.response_idx)
        c = tuple(int(i) for i in self.conditioning_idx)
        if not r:
            raise ValidationError("partition needs at least one response variable")
        if not c:
            raise ValidationError("partition needs at least one conditioning variable")
        if len(set(r)) != len(r) or len(set(c)) != len(c):
            raise ValidationError("repeated variable within a partition block")
        if set(r) & set(c):
            raise ValidationError("overlapping partition")
        object.__setattr__(self, "response_idx", r)
        object.__setattr__(self, "conditioning_idx", c)

    @property
    def k(self) -> int:
        return len(self.response_idx)

    @property
    def variables(self) -> tuple[int, ...]:
        """Response indices followed by conditioning indices."""
        return self.response_idx + self.conditioning_idx

    def pairs(self) -> list[tuple[int, int]]:
        """All unordered column pairs ``(i, j)`` with ``i < j`` among the partition's variables."""
        v = sorted(self.variables)
        return [(a, b) for ai, a in enumerate(v) for b in v[ai + 1:]]


def make_partition(response: Iterable[int | str], conditioning: Iterable[int | str],
                   ds: Dataset) -> Partition:
    response = list(response)
    conditioning = list(conditioning)
    r = tuple(ds.index(x) for x in response)
    c = tuple(ds.index(x) for x in conditioning)
    if set(r) & set(c):
        raise ValidationError("overlapping partition")
    if max(r + c) >= ds.p:
        raise ValidationError("partition index out of range")
    return Partition(r, c)


def _parse_rows(rows: list[list[str]], header: bool):
    names = None
    if header:
        if not rows:
            raise ValidationError("empty CSV")
        names = [s.strip() for s in rows[0]]
        rows = rows[1:]
    rows = [r for r in rows if any(s.strip() for s in r)]
    if not rows:
        raise ValidationError("CSV has no data rows")
    width = len(names) if names is not None else len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValidationError(f"row {i + 1} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise ParseError(i + 1, j + 1, cell) from None
    return out, names


def load_csv(path: str | Path, header: bool = True) -> Dataset:
    """Read a rectangular numeric CSV into a :class:`Dataset`.

    Row and column positions in parse errors are 1-based and count data rows only.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    values, names = _parse_rows(rows, header)
    return Dataset(values, tuple(names) if names else ())


def read_csv_text(text: str, header: bool = True) -> Dataset:
    values, names = _parse_rows(list(csv.reader(io.StringIO(text))), header)
    return Dataset(values, tuple(names) if names else ())


def format_float(x: float) -> str:
    return "%.17g" % x


def write_csv(fh_or_path, values: np.ndarray, names: Sequence[str]) -> None:
    """Write a numeric table with 17 significant digits (exact float round trip)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if isinstance(fh_or_path, (str, Path)):
        with open(fh_or_path, "w", newline="") as fh:
            write_csv(fh, values, names)
        return
    w = csv.writer(fh_or_path, lineterminator="\n")
    w.writerow(list(names))
    for row in values:
        w.writerow([format_float(v) for v in row])


def write_dataset(path, ds: Dataset) -> None:
    write_csv(path, ds.values, ds.names)


def load_config(path: str | Path) -> dict:
    """Load a JSON run configuration. Unknown keys are rejected."""
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "seed" in cfg:
        check_seed(cfg["seed"])
    return cfg


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValidationError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValidationError("seed must be a 64-bit unsigned integer")
    return int(seed)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; equal seeds give bit-identical streams."""
    return np.random.default_rng(check_seed(seed))
