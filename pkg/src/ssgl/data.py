"""Datasets, label assignments, CSV ingestion and seeded subset selection.

CSV dialect: comma separated, UTF-8, LF or CRLF line endings, no quoting.
Sample ids must match ``[A-Za-z0-9_.-]+``.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import SSGLError
from .fileio import atomic_write, format_real
from .rng import SplitMix64

log = logging.getLogger(__name__)

ID_PATTERN = re.compile(r"[A-Za-z0-9_.-]+")
_REAL = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_NONFINITE = re.compile(r"[+-]?(inf|infinity|nan)", re.IGNORECASE)

# fraction * count products like 0.1 * 30 land a hair above the integer
_CEIL_SLACK = 1e-9

SEVERITY_CLASSES = ("NoDR", "Mild", "Moderate", "Severe", "PDR")


@dataclass(frozen=True)
class Dataset:
    ids: tuple[str, ...]
    features: np.ndarray
    class_catalog: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        feats = np.array(self.features, dtype=np.float64, copy=True)
        if feats.ndim != 2:
            raise SSGLError("features must be a 2-D matrix")
        if feats.shape[0] != len(self.ids):
            raise SSGLError(f"{len(self.ids)} ids but {feats.shape[0]} feature rows")
        if not np.all(np.isfinite(feats)):
            raise SSGLError("feature values must be finite")
        seen: set[str] = set()
        for ident in self.ids:
            if ident in seen:
                raise SSGLError(f"duplicate id {ident!r}")
            seen.add(ident)
        if self.class_catalog and len(self.class_catalog) < 2:
            raise SSGLError("class catalog needs at least 2 classes")
        feats.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "class_catalog", tuple(self.class_catalog))

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def index(self) -> dict[str, int]:
        return {ident: i for i, ident in enumerate(self.ids)}

    def with_catalog(self, catalog: Sequence[str]) -> Dataset:
        return Dataset(self.ids, self.features, tuple(catalog))


@dataclass(frozen=True)
class LabelAssignment:
    """Class index per labeled id; ids missing from the map are unlabeled."""

    labels: Mapping[str, int]
    coverage_fraction: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", dict(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def join(self, dataset: Dataset) -> LabelAssignment:
        """Check every id against `dataset` and fill in the coverage fraction."""
        known = dataset.index()
        missing = [ident for ident in self.labels if ident not in known]
        if missing:
            raise SSGLError(f"labeled id {missing[0]!r} not in dataset")
        k = len(dataset.class_catalog)
        if k:
            bad = [c for c in self.labels.values() if not 0 <= c < k]
            if bad:
                raise SSGLError(f"class index {bad[0]} outside catalog of size {k}")
        coverage = len(self.labels) / dataset.n if dataset.n else 0.0
        return LabelAssignment(self.labels, coverage)

    def rows(self, dataset: Dataset) -> dict[int, int]:
        """Map dataset row index to class index, in dataset order."""
        self.join(dataset)
        return {i: self.labels[ident] for i, ident in enumerate(dataset.ids) if ident in self.labels}

    def restrict(self, ids: Sequence[str]) -> LabelAssignment:
        return LabelAssignment({i: self.labels[i] for i in ids if i in self.labels})


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float
    seed: int = 0
    stratified: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.test_fraction < 1.0:
            raise SSGLError("test_fraction must lie in (0, 1)")


def _read_lines(path: str | Path) -> list[str]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise SSGLError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SSGLError(f"{path}: not valid UTF-8") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line[:-1] if line.endswith("\r") else line for line in lines]


def _check_id(ident: str, path, lineno: int) -> None:
    if not ID_PATTERN.fullmatch(ident):
        raise SSGLError(f"{path}:{lineno}: invalid id {ident!r}")


def _parse_real(cell: str, path, lineno: int) -> float:
    if _NONFINITE.fullmatch(cell):
        raise SSGLError(f"{path}:{lineno}: non-finite value {cell!r}")
    if not _REAL.fullmatch(cell):
        raise SSGLError(f"{path}:{lineno}: non-numeric value {cell!r}")
    value = float(cell)
    if not math.isfinite(value):
        raise SSGLError(f"{path}:{lineno}: non-finite value {cell!r}")
    return value


def load_features_csv(path: str | Path) -> Dataset:
    """Read ``id,f0,...,f{d-1}`` rows into a Dataset with an empty catalog."""
    lines = _read_lines(path)
    if not lines:
        raise SSGLError(f"{path}:1: missing header")
    header = lines[0].split(",")
    expected = ["id"] + [f"f{j}" for j in range(len(header) - 1)]
    if len(header) < 2 or header != expected:
        raise SSGLError(f"{path}:1: missing header, expected 'id,f0,...'")
    d = len(header) - 1
    ids: list[str] = []
    rows: list[list[float]] = []
    first_seen: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != d + 1:
            raise SSGLError(f"{path}:{lineno}: expected {d + 1} fields, got {len(cells)}")
        ident = cells[0]
        _check_id(ident, path, lineno)
        if ident in first_seen:
            raise SSGLError(
                f"{path}:{lineno}: duplicate id {ident!r} (first seen on line {first_seen[ident]})"
            )
        first_seen[ident] = lineno
        ids.append(ident)
        rows.append([_parse_real(c, path, lineno) for c in cells[1:]])
    features = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return Dataset(tuple(ids), features)


def write_features_csv(path: str | Path, dataset: Dataset) -> None:
    with atomic_write(path) as fh:
        fh.write(",".join(["id"] + [f"f{j}" for j in range(dataset.d)]) + "\n")
        for ident, row in zip(dataset.ids, dataset.features):
            fh.write(",".join([ident] + [format_real(v) for v in row]) + "\n")


def load_catalog(path: str | Path) -> tuple[str, ...]:
    """One class name per line; line order defines class indices."""
    names = [line.strip() for line in _read_lines(path) if line.strip()]
    if len(names) < 2:
        raise SSGLError(f"{path}: class catalog needs at least 2 classes")
    if len(set(names)) != len(names):
        raise SSGLError(f"{path}: duplicate class name in catalog")
    for name in names:
        if "," in name or name == "?":
            raise SSGLError(f"{path}: invalid class name {name!r}")
    return tuple(names)


def write_catalog(path: str | Path, catalog: Sequence[str]) -> None:
    with atomic_write(path) as fh:
        for name in catalog:
            fh.write(name + "\n")


def load_labels_csv(path: str | Path, catalog: Sequence[str]) -> LabelAssignment:
    lines = _read_lines(path)
    if not lines or lines[0] != "id,label":
        raise SSGLError(f"{path}:1: missing header, expected 'id,label'")
    index = {name: k for k, name in enumerate(catalog)}
    labels: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 2:
            raise SSGLError(f"{path}:{lineno}: expected 2 fields, got {len(cells)}")
        ident, token = cells
        _check_id(ident, path, lineno)
        if ident in labels:
            raise SSGLError(f"{path}:{lineno}: duplicate id {ident!r}")
        if token not in index:
            raise SSGLError(f"{path}:{lineno}: unknown class {token!r}")
        labels[ident] = index[token]
    return LabelAssignment(labels)


def write_labels_csv(
    path: str | Path, assignment: LabelAssignment, catalog: Sequence[str], order: Sequence[str]
) -> None:
    """Write labeled ids in the order given by `order` (usually dataset order)."""
    with atomic_write(path) as fh:
        fh.write("id,label\n")
        for ident in order:
            if ident in assignment.labels:
                fh.write(f"{ident},{catalog[assignment.labels[ident]]}\n")


def _members_by_class(dataset: Dataset, truth: LabelAssignment, k: int) -> list[list[str]]:
    members: list[list[str]] = [[] for _ in range(k)]
    for ident in dataset.ids:
        if ident not in truth.labels:
            raise SSGLError(f"sample {ident!r} has no ground-truth label")
        members[truth.labels[ident]].append(ident)
    return members


def _class_count(dataset: Dataset, truth: LabelAssignment) -> int:
    if dataset.class_catalog:
        return len(dataset.class_catalog)
    return max(truth.labels.values(), default=-1) + 1


def _per_class_take(fraction: float, size: int) -> int:
    return max(1, math.ceil(fraction * size - _CEIL_SLACK))


def stratified_label_subset(
    dataset: Dataset, truth: LabelAssignment, fraction: float, seed: int
) -> LabelAssignment:
    """Pick max(1, ceil(fraction * n_k)) labeled samples from every class.

    Classes are visited in index order, each shuffled (Fisher-Yates) on a
    single SplitMix64 stream and truncated to its quota.
    """
    if not 0.0 < fraction <= 1.0:
        raise SSGLError("label fraction must lie in (0, 1]")
    truth = truth.join(dataset)
    members = _members_by_class(dataset, truth, _class_count(dataset, truth))
    empty = [k for k, m in enumerate(members) if not m]
    if empty:
        names = [dataset.class_catalog[k] if dataset.class_catalog else str(k) for k in empty]
        raise SSGLError(f"classes with no members: {', '.join(names)}")
    rng = SplitMix64(seed)
    chosen: set[str] = set()
    for ids in members:
        chosen.update(rng.shuffle(ids)[: _per_class_take(fraction, len(ids))])
    labels = {i: truth.labels[i] for i in dataset.ids if i in chosen}
    return LabelAssignment(labels, len(labels) / dataset.n)


def train_test_split(
    dataset: Dataset, truth: LabelAssignment | None, spec: SplitSpec
) -> tuple[list[str], list[str]]:
    """Partition ids into (train, test), both listed in dataset order.

    Unstratified: ceil(test_fraction * n) test ids from one shuffle.
    Stratified: ceil(test_fraction * n_k) per class, at least 1.
    """
    rng = SplitMix64(spec.seed)
    test: set[str] = set()
    if spec.stratified:
        if truth is None:
            raise SSGLError("stratified split needs ground-truth labels")
        truth = truth.join(dataset)
        members = _members_by_class(dataset, truth, _class_count(dataset, truth))
        for k, ids in enumerate(members):
            if not ids:
                continue
            want = spec.test_fraction * len(ids)
            if want < 1.0:
                name = dataset.class_catalog[k] if dataset.class_catalog else str(k)
                log.warning("class %s: test_fraction * n_k = %.3g < 1, using 1 test sample", name, want)
            test.update(rng.shuffle(ids)[: _per_class_take(spec.test_fraction, len(ids))])
    else:
        take = math.ceil(spec.test_fraction * dataset.n - _CEIL_SLACK)
        test.update(rng.shuffle(list(dataset.ids))[:take])
    train = [i for i in dataset.ids if i not in test]
    return train, [i for i in dataset.ids if i in test]


def write_scores_csv(
    path: str | Path,
    ids: Sequence[str],
    scores: np.ndarray,
    predictions: Sequence[str],
    catalog: Sequence[str],
) -> None:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(ids), len(catalog)) or len(predictions) != len(ids):
        raise SSGLError(
            f"shape mismatch: {len(ids)} ids, scores {scores.shape}, "
            f"{len(predictions)} predictions, {len(catalog)} classes"
        )
    with atomic_write(path) as fh:
        fh.write(",".join(["id"] + [f"score_{c}" for c in catalog] + ["pred"]) + "\n")
        for ident, row, pred in zip(ids, scores, predictions):
            fh.write(",".join([ident] + [format_real(v) for v in row] + [pred]) + "\n")


@dataclass(frozen=True)
class ScoreTable:
    ids: tuple[str, ...]
    scores: np.ndarray
    predictions: tuple[str, ...]
    catalog: tuple[str, ...] = field(default=())


def read_scores_csv(path: str | Path) -> ScoreTable:
    lines = _read_lines(path)
    if not lines:
        raise SSGLError(f"{path}:1: missing header")
    header = lines[0].split(",")
    if len(header) < 4 or header[0] != "id" or header[-1] != "pred":
        raise SSGLError(f"{path}:1: expected 'id,score_<class>...,pred' header")
    catalog = []
    for name in header[1:-1]:
        if not name.startswith("score_"):
            raise SSGLError(f"{path}:1: bad column {name!r}")
        catalog.append(name[len("score_"):])
    ids, rows, preds = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise SSGLError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        _check_id(cells[0], path, lineno)
        ids.append(cells[0])
        rows.append([_parse_real(c, path, lineno) for c in cells[1:-1]])
        preds.append(cells[-1])
    scores = np.array(rows, dtype=np.float64).reshape(len(rows), len(catalog))
    return ScoreTable(tuple(ids), scores, tuple(preds), tuple(catalog))


def load_predictions_csv(path: str | Path, catalog: Sequence[str]) -> dict[str, int | None]:
    """Read ``id,pred`` rows; ``?`` maps to None (indeterminate)."""
    lines = _read_lines(path)
    if not lines or lines[0] != "id,pred":
        raise SSGLError(f"{path}:1: missing header, expected 'id,pred'")
    index = {name: k for k, name in enumerate(catalog)}
    out: dict[str, int | None] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 2:
            raise SSGLError(f"{path}:{lineno}: expected 2 fields, got {len(cells)}")
        ident, token = cells
        _check_id(ident, path, lineno)
        if ident in out:
            raise SSGLError(f"{path}:{lineno}: duplicate id {ident!r}")
        if token == "?":
            out[ident] = None
        elif token in index:
            out[ident] = index[token]
        else:
            raise SSGLError(f"{path}:{lineno}: unknown class {token!r}")
    return out


def write_predictions_csv(
    path: str | Path, ids: Sequence[str], predictions: Sequence[int | None], catalog: Sequence[str]
) -> None:
    with atomic_write(path) as fh:
        fh.write("id,pred\n")
        for ident, pred in zip(ids, predictions):
            fh.write(f"{ident},{'?' if pred is None else catalog[pred]}\n")
