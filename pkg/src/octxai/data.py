"""Dataset schema, CSV ingestion, zone aggregation and feature matrices.

One :class:`EyeSample` is one eye of one subject for one retinal layer: an
8x8 grid of mean thickness values (micrometers) plus subject metadata.
Grid cells are named ``"row.col"`` with origin ``(1, 1)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GRID_SHAPE = (8, 8)
N_CELLS = 64
N_ZONES = 6
GROUPS = ("MS", "HC")
SEXES = ("M", "F")
EYES = ("L", "R")
LAYERS = ("GCL", "RNFL")
STRATEGIES = ("L", "R", "Rand", "LR")
FEATURE_SETS = ("Zones", "Grid")

CELL_COLUMNS = [f"c{r}_{c}" for r in range(1, 9) for c in range(1, 9)]
CSV_HEADER = ["subject_id", "group", "age", "sex", "eye", "layer", "quality"] + CELL_COLUMNS
GRID_NAMES = [f"{r}.{c}" for r in range(1, 9) for c in range(1, 9)]
ZONE_NAMES = [f"Z{k}" for k in range(1, N_ZONES + 1)]


class DataError(Exception):
    """Base class for dataset problems (bad files, bad configuration)."""


class ParseError(DataError):
    pass


class IntegrityError(DataError):
    pass


class ConfigurationError(DataError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EyeSample:
    subject_id: str
    group: str
    age: float
    sex: str
    laterality: str
    layer: str
    grid: np.ndarray = field(repr=False)
    quality_score: float | None = None

    def __post_init__(self):
        grid = _frozen(self.grid)
        if grid.shape != GRID_SHAPE:
            raise IntegrityError(f"grid must be 8x8, got {grid.shape}")
        if not np.all(np.isfinite(grid)) or np.any(grid < 0):
            raise IntegrityError(f"grid of subject {self.subject_id} has non-finite or negative cells")
        for name, value, allowed in (
            ("group", self.group, GROUPS),
            ("sex", self.sex, SEXES),
            ("laterality", self.laterality, EYES),
            ("layer", self.layer, LAYERS),
        ):
            if value not in allowed:
                raise IntegrityError(f"{name} must be one of {allowed}, got {value!r}")
        object.__setattr__(self, "grid", grid)

    @property
    def label(self) -> int:
        return 1 if self.group == "MS" else 0

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject_id, self.laterality, self.layer)


@dataclass(frozen=True)
class ZoneMap:
    """Cell-to-zone assignment; ``assignment[r, c]`` is a zone id in 1..6."""

    assignment: np.ndarray

    def __post_init__(self):
        a = np.array(self.assignment)
        if a.shape != GRID_SHAPE:
            raise ConfigurationError(f"zone map must be 8x8, got {a.shape}")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(a == np.round(a)):
                raise ConfigurationError("zone ids must be integers")
            a = a.astype(int)
        if a.min() < 1 or a.max() > N_ZONES:
            raise ConfigurationError("zone ids must lie in 1..6")
        missing = set(range(1, N_ZONES + 1)) - set(np.unique(a).tolist())
        if missing:
            raise ConfigurationError(f"zones without cells: {sorted(missing)}")
        a = a.astype(int)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def cells(self, zone: int) -> np.ndarray:
        """Boolean 8x8 mask of the cells in ``zone``."""
        return self.assignment == zone

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment.ravel(), minlength=N_ZONES + 1)[1:]

    @classmethod
    def from_file(cls, path: str | Path) -> "ZoneMap":
        rows = []
        text = Path(path).read_text().splitlines()
        for lineno, line in enumerate(text, 1):
            if not line.strip():
                continue
            try:
                rows.append([int(tok) for tok in line.split()])
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: non-integer zone id") from exc
            if len(rows[-1]) != 8:
                raise ConfigurationError(f"{path}:{lineno}: expected 8 zone ids, got {len(rows[-1])}")
        if len(rows) != 8:
            raise ConfigurationError(f"{path}: expected 8 rows, got {len(rows)}")
        return cls(np.array(rows))

    def to_file(self, path: str | Path) -> None:
        lines = [" ".join(str(v) for v in row) for row in self.assignment]
        Path(path).write_text("\n".join(lines) + "\n")


def default_zone_map() -> ZoneMap:
    """Shipped approximation of the clinical six-zone layout (replaceable data)."""
    ref = resources.files("octxai").joinpath("zones_default.txt")
    with resources.as_file(ref) as p:
        return ZoneMap.from_file(p)


@dataclass(frozen=True)
class FeatureMatrix:
    feature_names: tuple[str, ...]
    rows: np.ndarray
    labels: np.ndarray
    subject_ids: tuple[str, ...]
    laterality: tuple[str, ...]

    def __post_init__(self):
        rows = _frozen(self.rows)
        if rows.ndim != 2:
            raise IntegrityError("feature rows must be a 2-D matrix")
        labels = np.asarray(self.labels, dtype=int)
        labels.setflags(write=False)
        n, d = rows.shape
        if not (len(labels) == len(self.subject_ids) == len(self.laterality) == n):
            raise IntegrityError("row, label, subject and laterality counts differ")
        if len(self.feature_names) != d or d not in (N_ZONES, N_CELLS):
            raise IntegrityError(f"feature dimension must be 6 or 64 and match names, got {d}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "laterality", tuple(self.laterality))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def subset(self, index: Sequence[int]) -> "FeatureMatrix":
        index = np.asarray(index, dtype=int)
        return FeatureMatrix(
            self.feature_names,
            self.rows[index],
            self.labels[index],
            tuple(self.subject_ids[i] for i in index),
            tuple(self.laterality[i] for i in index),
        )


# -- ingestion ---------------------------------------------------------------

def _parse_row(row: list[str], lineno: int, mirror_left: bool) -> EyeSample:
    if len(row) != len(CSV_HEADER):
        raise ParseError(f"row {lineno}: expected {len(CSV_HEADER)} columns, got {len(row)}")
    sid, group, age, sex, eye, layer, quality = (v.strip() for v in row[:7])
    try:
        cells = np.array([float(v) for v in row[7:]])
        age_v = float(age)
        quality_v = float(quality) if quality else None
    except ValueError as exc:
        raise ParseError(f"row {lineno}: non-numeric value ({exc})") from None
    if not sid:
        raise ParseError(f"row {lineno}: empty subject_id")
    grid = cells.reshape(GRID_SHAPE)
    if mirror_left and eye == "L":
        grid = grid[:, ::-1]
    try:
        return EyeSample(sid, group, age_v, sex, eye, layer, grid, quality_v)
    except IntegrityError as exc:
        raise ParseError(f"row {lineno}: {exc}") from None


def load_dataset(
    path: str | Path,
    mirror_left: bool = False,
    min_quality: float | None = None,
) -> list[EyeSample]:
    """Read the dataset CSV; one :class:`EyeSample` per data row.

    Row numbers in errors count the header as row 1. ``mirror_left`` flips
    left-eye grids horizontally; ``min_quality`` drops rows whose quality
    score is below the threshold (rows without a score are kept).
    """
    samples: list[EyeSample] = []
    seen: dict[tuple[str, str, str], int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ParseError("row 1: header does not match the dataset schema")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            s = _parse_row(row, lineno, mirror_left)
            if s.key in seen:
                raise IntegrityError(
                    f"row {lineno}: duplicate (subject, eye, layer) {s.key}, first seen at row {seen[s.key]}"
                )
            seen[s.key] = lineno
            if min_quality is not None and s.quality_score is not None and s.quality_score < min_quality:
                continue
            samples.append(s)
    return samples


def write_dataset(samples: Iterable[EyeSample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in samples:
            q = "" if s.quality_score is None else repr(float(s.quality_score))
            w.writerow(
                [s.subject_id, s.group, repr(float(s.age)), s.sex, s.laterality, s.layer, q]
                + [repr(float(v)) for v in s.grid.ravel()]
            )


# -- features ----------------------------------------------------------------

def aggregate_zones(sample: EyeSample, zones: ZoneMap) -> np.ndarray:
    """Mean thickness of each zone, ``out[k-1]`` for zone ``k``."""
    return zone_means(sample.grid, zones)


def zone_means(grid: np.ndarray, zones: ZoneMap) -> np.ndarray:
    flat = np.asarray(grid, dtype=float).reshape(-1)
    ids = zones.assignment.reshape(-1) - 1
    sums = np.bincount(ids, weights=flat, minlength=N_ZONES)
    return sums / np.bincount(ids, minlength=N_ZONES)


def select_eyes(samples: Sequence[EyeSample], strategy: str, rand_seed: int = 0) -> list[EyeSample]:
    """Apply an eye-selection strategy (``L``, ``R``, ``Rand`` or ``LR``).

    ``Rand`` keeps the only eye of one-eyed subjects and draws uniformly
    between both eyes otherwise. Subjects are visited in sorted id order so
    the draw depends only on the seed and the subject set. Samples of
    several layers are handled per layer with the same per-subject choice.
    """
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"unknown eye strategy {strategy!r}")
    if strategy in ("L", "R"):
        out = [s for s in samples if s.laterality == strategy]
    elif strategy == "LR":
        out = list(samples)
    else:
        eyes: dict[str, set[str]] = {}
        for s in samples:
            eyes.setdefault(s.subject_id, set()).add(s.laterality)
        rng = np.random.default_rng(rand_seed)
        chosen = {}
        for sid in sorted(eyes):
            avail = sorted(eyes[sid])
            # draw for every subject keeps the stream aligned across subject sets
            pick = rng.integers(2)
            chosen[sid] = avail[0] if len(avail) == 1 else avail[pick]
        out = [s for s in samples if s.laterality == chosen[s.subject_id]]
    if not out:
        raise ConfigurationError(f"eye strategy {strategy} selected no samples")
    return out


def build_feature_matrix(
    samples: Sequence[EyeSample], feature_set: str, zones: ZoneMap | None = None
) -> FeatureMatrix:
    if feature_set not in FEATURE_SETS:
        raise ConfigurationError(f"unknown feature set {feature_set!r}")
    layers = {s.layer for s in samples}
    if len(layers) > 1:
        raise IntegrityError(f"samples mix layers {sorted(layers)}")
    if feature_set == "Zones":
        zones = zones if zones is not None else default_zone_map()
        rows = np.array([aggregate_zones(s, zones) for s in samples]).reshape(len(samples), N_ZONES)
        names = ZONE_NAMES
    else:
        rows = np.array([s.grid.ravel() for s in samples]).reshape(len(samples), N_CELLS)
        names = GRID_NAMES
    return FeatureMatrix(
        tuple(names),
        rows,
        np.array([s.label for s in samples], dtype=int),
        tuple(s.subject_id for s in samples),
        tuple(s.laterality for s in samples),
    )


def unflatten_grid(row: Sequence[float]) -> np.ndarray:
    """Inverse of the row-major grid flatten used for the 64-feature set."""
    row = np.asarray(row, dtype=float)
    if row.shape != (N_CELLS,):
        raise IntegrityError(f"expected 64 values, got {row.shape}")
    return row.reshape(GRID_SHAPE)


def cell_index(name: str) -> tuple[int, int]:
    """Zero-based ``(row, col)`` of a ``"r.c"`` cell name."""
    r, c = name.split(".")
    return int(r) - 1, int(c) - 1
