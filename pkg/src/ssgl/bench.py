"""Synthetic datasets, a 1-NN baseline and the end-to-end benchmark loop."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, LabelAssignment, stratified_label_subset
from .errors import SSGLError
from .fileio import atomic_write, format_real
from .graph import GraphConfig, build_graph
from .metrics import classification_metrics, confusion_matrix
from .rng import SplitMix64
from .solver import SolverConfig, fit, fixed_point_oracle, init_label_matrix, predict

FAMILIES = ("two-moons", "blobs")


@dataclass(frozen=True)
class SyntheticSpec:
    family: str
    n: int
    noise: float = 0.0
    seed: int = 0
    blob_centers: tuple[tuple[tuple[float, ...], int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise SSGLError(f"unknown family {self.family!r}")
        if not (math.isfinite(self.noise) and self.noise >= 0):
            raise SSGLError("noise must be >= 0")
        if self.family == "blobs":
            if not self.blob_centers:
                raise SSGLError("blobs need at least one center")
            fractions = [f for _, _, f in self.blob_centers]
            if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
                raise SSGLError("blob fractions must be >= 0 and sum to 1")
            dims = {len(c) for c, _, _ in self.blob_centers}
            if len(dims) != 1:
                raise SSGLError("blob centers differ in dimension")
        if self.n < 2 * self.num_classes:
            raise SSGLError(f"n must be >= 2K = {2 * self.num_classes}")

    @property
    def num_classes(self) -> int:
        if self.family == "two-moons":
            return 2
        return max(cls for _, cls, _ in self.blob_centers) + 1


def severity_preset(n: int = 200, noise: float = 1.0, seed: int = 0) -> SyntheticSpec:
    """Five imbalanced 2-D blobs standing in for graded severity (rarest class 5%)."""
    fractions = (0.35, 0.25, 0.2, 0.15, 0.05)
    centers = tuple(((2.0 * k, 0.0), k, f) for k, f in enumerate(fractions))
    return SyntheticSpec("blobs", n, noise, seed, centers)


def _ids(n: int) -> tuple[str, ...]:
    width = len(str(max(n - 1, 0)))
    return tuple(f"s{i:0{width}d}" for i in range(n))


def gen_two_moons(spec: SyntheticSpec) -> tuple[Dataset, LabelAssignment]:
    """Two interleaved half circles; class 0 rows first, then class 1."""
    if spec.family != "two-moons":
        raise SSGLError("synthetic family is not two-moons")
    if spec.n % 2:
        raise SSGLError("two-moons needs an even n")
    half = spec.n // 2
    rng = SplitMix64(spec.seed)
    t = math.pi * rng.uniform_array(spec.n)
    t0, t1 = t[:half], t[half:]
    points = np.vstack([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
    ])
    if spec.noise > 0:
        points = points + spec.noise * rng.normal_array(points.size).reshape(points.shape)
    ids = _ids(spec.n)
    labels = {ident: int(i >= half) for i, ident in enumerate(ids)}
    return Dataset(ids, points, ("class0", "class1")), LabelAssignment(labels, 1.0)


def apportion(fractions: Sequence[float], n: int) -> list[int]:
    """Largest-remainder apportionment of n items; ties go to the lower index."""
    raw = [f * n for f in fractions]
    counts = [math.floor(r + 1e-9) for r in raw]
    remainders = [r - c for r, c in zip(raw, counts)]
    for i in sorted(range(len(raw)), key=lambda i: (-remainders[i], i))[: n - sum(counts)]:
        counts[i] += 1
    return counts


def gen_blobs(spec: SyntheticSpec) -> tuple[Dataset, LabelAssignment]:
    if spec.family != "blobs":
        raise SSGLError("synthetic family is not blobs")
    counts = apportion([f for _, _, f in spec.blob_centers], spec.n)
    dim = len(spec.blob_centers[0][0])
    rng = SplitMix64(spec.seed)
    blocks, classes = [], []
    for (center, cls, _), count in zip(spec.blob_centers, counts):
        pts = np.tile(np.asarray(center, dtype=np.float64), (count, 1))
        if spec.noise > 0 and count:
            pts = pts + spec.noise * rng.normal_array(count * dim).reshape(count, dim)
        blocks.append(pts)
        classes += [cls] * count
    ids = _ids(spec.n)
    k = spec.num_classes
    catalog = tuple(f"class{c}" for c in range(k))
    data = Dataset(ids, np.vstack(blocks).reshape(spec.n, dim), catalog)
    return data, LabelAssignment(dict(zip(ids, classes)), 1.0)


def generate(spec: SyntheticSpec) -> tuple[Dataset, LabelAssignment]:
    return gen_two_moons(spec) if spec.family == "two-moons" else gen_blobs(spec)


def one_nn_baseline(
    dataset: Dataset, labeled: LabelAssignment, targets: Sequence[str] | None = None
) -> dict[str, int]:
    """Predict each target as the class of its nearest labeled sample.

    Targets default to the unlabeled ids. A sample is never its own
    neighbor; distance ties go to the lower dataset index.
    """
    rows = labeled.rows(dataset)
    if not rows:
        raise SSGLError("1-NN baseline needs at least one labeled sample")
    index = dataset.index()
    if targets is None:
        targets = [i for i in dataset.ids if i not in labeled.labels]
    lab_idx = np.array(sorted(rows))
    lab_cls = np.array([rows[i] for i in lab_idx])
    out: dict[str, int] = {}
    for ident in targets:
        q = index[ident]
        diff = dataset.features[lab_idx] - dataset.features[q]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        dist[lab_idx == q] = np.inf
        if not np.any(np.isfinite(dist)):
            raise SSGLError(f"no labeled neighbor available for {ident!r}")
        out[ident] = int(lab_cls[int(np.argmin(dist))])
    return out


@dataclass
class TrialResult:
    method: str
    trial: int
    accuracy: float | None
    macro_f1: float | None
    recall: tuple[float, ...] | None


@dataclass
class BenchmarkResult:
    trials: list[TrialResult]
    num_classes: int
    config: dict = field(default_factory=dict)

    def methods(self) -> list[str]:
        return sorted({t.method for t in self.trials})

    def summary(self) -> dict:
        out: dict = {"config": self.config, "methods": {}}
        for method in self.methods():
            rows = sorted((t for t in self.trials if t.method == method), key=lambda t: t.trial)
            scored = [t for t in rows if t.accuracy is not None]
            if not scored:
                out["methods"][method] = {"accuracy_mean": "n/a", "accuracy_std": "n/a",
                                          "macro_f1_mean": "n/a", "macro_f1_std": "n/a",
                                          "recall_mean": "n/a", "trials": len(rows)}
                continue
            acc = np.array([t.accuracy for t in scored])
            f1 = np.array([t.macro_f1 for t in scored])
            recall = np.array([t.recall for t in scored])
            out["methods"][method] = {
                "accuracy_mean": float(acc.mean()),
                "accuracy_std": float(acc.std()),
                "macro_f1_mean": float(f1.mean()),
                "macro_f1_std": float(f1.std()),
                "recall_mean": [float(v) for v in recall.mean(axis=0)],
                "trials": len(rows),
            }
        return out

    def mean_accuracy(self, method: str) -> float | None:
        value = self.summary()["methods"][method]["accuracy_mean"]
        return None if value == "n/a" else value

    def mean_recall(self, method: str) -> list[float] | None:
        value = self.summary()["methods"][method]["recall_mean"]
        return None if value == "n/a" else value

    def write_csv(self, path: str | Path) -> None:
        header = ["method", "trial", "accuracy", "macro_f1"] + [
            f"recall_class{k}" for k in range(self.num_classes)
        ]
        rows = sorted(self.trials, key=lambda t: (t.method, t.trial))
        with atomic_write(path) as fh:
            fh.write(",".join(header) + "\n")
            for t in rows:
                if t.accuracy is None:
                    cells = ["n/a"] * (2 + self.num_classes)
                else:
                    cells = [format_real(t.accuracy), format_real(t.macro_f1)]
                    cells += [format_real(r) for r in t.recall]
                fh.write(",".join([t.method, str(t.trial)] + cells) + "\n")

    def write_json(self, path: str | Path) -> None:
        with atomic_write(path) as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _score(truth: LabelAssignment, preds: dict, k: int, method: str, trial: int) -> TrialResult:
    if not preds:
        return TrialResult(method, trial, None, None, None)
    report = classification_metrics(confusion_matrix(truth.labels, preds, k))
    return TrialResult(method, trial, report.accuracy, report.macro_f1, report.recall)


def run_trial(
    spec: SyntheticSpec,
    label_fraction: float,
    graph_config: GraphConfig,
    solver_config: SolverConfig,
    trial: int,
    use_oracle: bool = False,
) -> list[TrialResult]:
    seed = spec.seed + trial
    dataset, truth = generate(replace(spec, seed=seed))
    # separate stream for the labeled subset so it is not correlated with the data draw
    labeled = stratified_label_subset(dataset, truth, label_fraction, SplitMix64(seed).next_u64())
    k = spec.num_classes
    y0 = init_label_matrix(dataset.n, k, labeled.rows(dataset)).initial
    graph = build_graph(dataset, graph_config)
    if use_oracle:
        scores = fixed_point_oracle(graph, y0, solver_config)
    else:
        scores = fit(graph, y0, solver_config).scores
    preds, _ = predict(scores, k, solver_config)

    unlabeled = [i for i in dataset.ids if i not in labeled.labels]
    index = dataset.index()
    ssgl_preds = {i: preds[index[i]] for i in unlabeled}
    base_preds = one_nn_baseline(dataset, labeled, unlabeled) if unlabeled else {}
    name = "ssgl-oracle" if use_oracle else "ssgl"
    return [
        _score(truth, ssgl_preds, k, name, trial),
        _score(truth, base_preds, k, "1nn", trial),
    ]


def run_benchmark(
    spec: SyntheticSpec,
    label_fraction: float,
    graph_config: GraphConfig,
    solver_config: SolverConfig,
    trials: int,
    use_oracle: bool = False,
    workers: int = 1,
) -> BenchmarkResult:
    """Run `trials` independent trials (seed = spec.seed + trial) and collect scores.

    Only unlabeled samples are scored. Results are merged in trial order, so
    `workers` never changes the output.
    """
    if trials < 1:
        raise SSGLError("trials must be >= 1")
    args = (spec, label_fraction, graph_config, solver_config)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(lambda t: run_trial(*args, t, use_oracle), range(trials)))
    else:
        batches = [run_trial(*args, t, use_oracle) for t in range(trials)]
    results = [r for batch in batches for r in batch]
    config = {
        "family": spec.family,
        "n": spec.n,
        "noise": spec.noise,
        "seed": spec.seed,
        "label_fraction": label_fraction,
        "trials": trials,
        "graph": {
            "method": graph_config.method,
            "k": graph_config.k,
            "epsilon": graph_config.epsilon,
            "kernel": graph_config.kernel,
            "sigma": graph_config.sigma,
            "standardize": graph_config.standardize,
        },
        "solver": solver_config.as_dict(),
    }
    return BenchmarkResult(results, spec.num_classes, config)
