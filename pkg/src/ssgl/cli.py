"""Command-line entry point: ``ssgl <subcommand> [flags]``.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bench, data, graph, image, metrics, solver
from .errors import SSGLError
from .fileio import atomic_write

log = logging.getLogger("ssgl")

_IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


def _write_json(path: str | Path, payload: dict) -> None:
    with atomic_write(path) as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sigma(value: str) -> float | str:
    if value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("sigma must be a number or 'auto'") from None


def _weights(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def _graph_flags(p: argparse.ArgumentParser, standardize_default: bool) -> None:
    p.add_argument("--method", choices=graph.METHODS, default="knn")
    p.add_argument("--k", type=int, default=10, help="neighbors per node (knn)")
    p.add_argument("--epsilon", type=float, default=None, help="radius (epsilon method)")
    p.add_argument("--kernel", choices=graph.KERNELS, default="rbf")
    p.add_argument("--sigma", type=_sigma, default="auto", help="rbf bandwidth or 'auto' (median distance)")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=standardize_default,
                   help="z-score features before distances")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="smoothness weight")
    p.add_argument("--gamma", type=float, default=1.0, help="anchor weight, must be > 0")
    p.add_argument("--alpha", type=float, default=0.0, help="severity loss weight")
    p.add_argument("--severity-weights", type=_weights, default=None,
                   help="per-class weights, comma separated; class index when omitted")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold for K=2")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--clamp-labeled", action="store_true", help="reset labeled rows to Y0 each Y-step")
    p.add_argument("--laplacian", choices=graph.LAPLACIANS, default="unnormalized")


def _graph_config(args) -> graph.GraphConfig:
    return graph.GraphConfig(
        method=args.method,
        k=args.k if args.method == "knn" else None,
        epsilon=args.epsilon if args.method == "epsilon" else None,
        kernel=args.kernel,
        sigma=args.sigma,
        standardize=args.standardize,
    )


def _solver_config(args, num_classes: int) -> solver.SolverConfig:
    weights = args.severity_weights
    if weights is None and args.alpha > 0:
        weights = tuple(float(k) for k in range(num_classes))
    return solver.SolverConfig(
        lam=args.lam, gamma=args.gamma, alpha=args.alpha, severity_weights=weights,
        threshold=args.threshold, tol=args.tol, max_iter=args.max_iter,
        clamp_labeled=args.clamp_labeled, laplacian_kind=args.laplacian,
    )


def _load_dataset(args) -> data.Dataset:
    dataset = data.load_features_csv(args.features)
    if getattr(args, "classes", None):
        dataset = dataset.with_catalog(data.load_catalog(args.classes))
    return dataset


# ---------------------------------------------------------------- commands


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)


def cmd_augment(args) -> None:
    ops = image.parse_ops(args.ops)
    source = Path(args.input)
    if source.is_dir():
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for index, path in enumerate(_image_files(source)):
            result = image.apply_ops(image.read_pnm(path), ops, args.seed ^ index)
            image.write_pnm(result, out_dir / path.name)
            log.info("wrote %s", out_dir / path.name)
    else:
        image.write_pnm(image.apply_ops(image.read_pnm(source), ops, args.seed), args.out)
        log.info("wrote %s", args.out)


def cmd_features(args) -> None:
    files = _image_files(Path(args.images))
    if not files:
        raise SSGLError(f"no .pgm/.ppm images in {args.images}")
    ids = []
    for path in files:
        if not data.ID_PATTERN.fullmatch(path.stem):
            raise SSGLError(f"file name {path.name!r} is not a valid sample id")
        ids.append(path.stem)
    rows = [image.extract_features(image.read_pnm(p), args.grid, args.bins) for p in files]
    data.write_features_csv(args.out, data.Dataset(tuple(ids), np.vstack(rows)))
    log.info("wrote %d feature rows to %s", len(ids), args.out)


def cmd_graph(args) -> None:
    dataset = data.load_features_csv(args.features)
    g = graph.build_graph(dataset, _graph_config(args))
    graph.write_edgelist(g, args.out)
    log.info("wrote %d edges over %d nodes to %s", g.num_edges, g.n, args.out)


def cmd_split(args) -> None:
    dataset = _load_dataset(args)
    truth = data.load_labels_csv(args.truth, dataset.class_catalog)
    spec = data.SplitSpec(args.test_fraction, args.seed, args.stratified)
    train, test = data.train_test_split(dataset, truth, spec)
    data.write_labels_csv(args.out_train, truth.restrict(train), dataset.class_catalog, train)
    data.write_labels_csv(args.out_test, truth.restrict(test), dataset.class_catalog, test)
    log.info("split %d train / %d test", len(train), len(test))


def cmd_label_subset(args) -> None:
    dataset = _load_dataset(args)
    truth = data.load_labels_csv(args.truth, dataset.class_catalog)
    subset = data.stratified_label_subset(dataset, truth, args.fraction, args.seed)
    data.write_labels_csv(args.out, subset, dataset.class_catalog, dataset.ids)
    log.info("labeled %d of %d samples", len(subset), dataset.n)


def cmd_fit(args) -> None:
    dataset = _load_dataset(args)
    catalog = dataset.class_catalog
    g = graph.read_edgelist(args.graph)
    if g.n != dataset.n:
        raise SSGLError(f"graph has {g.n} nodes but features list {dataset.n} samples")
    labels = data.load_labels_csv(args.labels, catalog).join(dataset)
    if len(labels) == 0:
        raise SSGLError("no labeled samples: cannot fit")
    config = _solver_config(args, len(catalog))
    y0 = solver.init_label_matrix(dataset.n, len(catalog), labels.rows(dataset)).initial
    result = solver.fit(g, y0, config)
    if not result.report.converged:
        log.warning("did not converge in %d iterations (residual %.3e)",
                    result.report.iterations, result.report.final_residual)
    preds, _ = solver.predict(result.scores, catalog, config)
    names = ["?" if p is None else catalog[p] for p in preds]
    data.write_scores_csv(args.out, dataset.ids, result.scores, names, catalog)
    if args.report:
        payload = result.report.as_dict()
        payload["config"] = config.as_dict()
        payload["coverage_fraction"] = labels.coverage_fraction
        _write_json(args.report, payload)
    log.info("fit: %d iterations, converged=%s", result.report.iterations, result.report.converged)


def cmd_predict(args) -> None:
    table = data.read_scores_csv(args.scores)
    config = solver.SolverConfig(threshold=args.threshold)
    preds, _ = solver.predict(table.scores, table.catalog, config)
    data.write_predictions_csv(args.out, table.ids, preds, table.catalog)


def cmd_evaluate(args) -> None:
    catalog = data.load_catalog(args.classes)
    truth = data.load_labels_csv(args.truth, catalog).labels
    preds = data.load_predictions_csv(args.pred, catalog)
    if args.exclude:
        skip = set(data.load_labels_csv(args.exclude, catalog).labels)
        preds = {i: p for i, p in preds.items() if i not in skip}
    cm = metrics.confusion_matrix(truth, preds, catalog)
    report = metrics.classification_metrics(cm)
    decided = {i: p for i, p in preds.items() if p is not None}
    kappa = metrics.cohen_kappa({i: truth[i] for i in decided}, decided, catalog) if decided else None
    payload = report.as_dict(catalog)
    payload["kappa"] = kappa
    payload["confusion_matrix"] = cm.counts.tolist()
    _write_json(args.out, payload)


def cmd_bench(args) -> None:
    if args.family == "two-moons":
        spec = bench.SyntheticSpec("two-moons", args.n, args.noise, args.seed)
    else:
        spec = bench.severity_preset(args.n, args.noise, args.seed)
    result = bench.run_benchmark(
        spec, args.fraction, _graph_config(args), _solver_config(args, spec.num_classes),
        args.trials, use_oracle=args.oracle, workers=args.workers,
    )
    result.write_csv(args.out_csv)
    if args.out_json:
        result.write_json(args.out_json)
    for method, stats in result.summary()["methods"].items():
        log.info("%s: accuracy %s +/- %s", method, stats["accuracy_mean"], stats["accuracy_std"])


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="ssgl", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="apply image ops to a PGM/PPM file or directory", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ops", required=True,
                   help="e.g. 'rot90,flip-h,crop:0:0:8:8,resize:4:4,stretch,noise:0.05,blur:1,rot:15'")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("features", help="image directory to feature CSV", formatter_class=fmt)
    p.add_argument("--images", required=True)
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--bins", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("graph", help="feature CSV to edge list", formatter_class=fmt)
    p.add_argument("--features", required=True)
    _graph_flags(p, standardize_default=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("split", help="train/test split of a labeled dataset", formatter_class=fmt)
    p.add_argument("--features", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("label-subset", help="stratified labeled subset", formatter_class=fmt)
    p.add_argument("--features", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label_subset)

    p = sub.add_parser("fit", help="propagate labels over a graph", formatter_class=fmt)
    p.add_argument("--graph", required=True)
    p.add_argument("--features", required=True, help="feature CSV giving the id of each node")
    p.add_argument("--labels", required=True)
    p.add_argument("--classes", required=True)
    _solver_flags(p)
    p.add_argument("--out", required=True, help="score CSV")
    p.add_argument("--report", default=None, help="solve report JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="threshold a score CSV", formatter_class=fmt)
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics JSON from predictions and truth", formatter_class=fmt)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--exclude", default=None, help="label CSV whose ids are left out (e.g. the labeled set)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="synthetic end-to-end benchmark", formatter_class=fmt)
    p.add_argument("--family", choices=("two-moons", "severity"), default="two-moons")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true", help="use the dense fixed-point solve")
    p.add_argument("--workers", type=int, default=1)
    _graph_flags(p, standardize_default=True)
    _solver_flags(p)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def parse_and_dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except SSGLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
