"""Alternating F/Y label propagation with Laplacian smoothing.

The iteration is block coordinate descent on the joint objective

    J(F, Y) = ||Y - F||^2 + lam * tr(F^T L F)
              + alpha * sum_i w_i ||Y_i - F_i||^2 + gamma * ||Y - Y0||^2

where w_i is the severity weight of labeled row i (0 for unlabeled rows).
The F-step solves (I + alpha*D_w + lam*L) F = (I + alpha*D_w) Y and the
Y-step blends F with the initial labels Y0 row by row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy import sparse

from .errors import SSGLError
from .graph import LAPLACIANS, Laplacian, SimilarityGraph, laplacian
from .linalg import conjugate_gradient

# systems up to this size are factorized densely
DENSE_LIMIT = 512


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 1.0
    gamma: float = 1.0
    alpha: float = 0.0
    severity_weights: tuple[float, ...] | None = None
    threshold: float = 0.5
    tol: float = 1e-6
    max_iter: int = 1000
    clamp_labeled: bool = False
    laplacian_kind: str = "unnormalized"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise SSGLError("lambda must be >= 0")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise SSGLError("gamma must be > 0")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise SSGLError("alpha must be >= 0")
        if self.severity_weights is not None:
            ws = tuple(float(w) for w in self.severity_weights)
            if any(not math.isfinite(w) or w < 0 for w in ws):
                raise SSGLError("severity weights must be finite and >= 0")
            object.__setattr__(self, "severity_weights", ws)
        if not 0 < self.threshold < 1:
            raise SSGLError("threshold must lie in (0, 1)")
        if not self.tol > 0:
            raise SSGLError("tol must be > 0")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise SSGLError("max_iter must be a positive integer")
        if self.laplacian_kind not in LAPLACIANS:
            raise SSGLError(f"unknown Laplacian kind {self.laplacian_kind!r}")

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "severity_weights": list(self.severity_weights) if self.severity_weights else None,
            "threshold": self.threshold,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "clamp_labeled": self.clamp_labeled,
            "laplacian_kind": self.laplacian_kind,
        }


@dataclass
class LabelMatrix:
    initial: np.ndarray
    current: np.ndarray


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    residual_trace: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_residual": self.final_residual,
            "objective": list(self.objective_trace),
        }


@dataclass
class FitResult:
    scores: np.ndarray
    labels: LabelMatrix
    report: SolveReport


def init_label_matrix(n: int, k: int, labeled: Mapping[int, int] | Iterable[tuple[int, int]]) -> LabelMatrix:
    """One-hot rows for labeled samples, zero rows elsewhere."""
    pairs = labeled.items() if isinstance(labeled, Mapping) else labeled
    y0 = np.zeros((n, k))
    seen: set[int] = set()
    for row, cls in pairs:
        if not 0 <= row < n:
            raise SSGLError(f"labeled row {row} outside [0, {n})")
        if not 0 <= cls < k:
            raise SSGLError(f"class index {cls} outside [0, {k})")
        if row in seen:
            raise SSGLError(f"duplicate assignment for row {row}")
        seen.add(row)
        y0[row, cls] = 1.0
    return LabelMatrix(y0, y0.copy())


def labeled_rows(y0: np.ndarray) -> np.ndarray:
    return np.any(y0 != 0, axis=1)


def row_weights(y0: np.ndarray, config: SolverConfig) -> np.ndarray:
    """Severity weight of each row's labeled class; 0 for unlabeled rows."""
    n, k = y0.shape
    w = np.zeros(n)
    if config.severity_weights is None:
        return w
    if len(config.severity_weights) != k:
        raise SSGLError(f"{len(config.severity_weights)} severity weights for {k} classes")
    mask = labeled_rows(y0)
    w[mask] = np.asarray(config.severity_weights)[np.argmax(y0[mask], axis=1)]
    return w


def _as_laplacian(graph: SimilarityGraph | Laplacian | sparse.spmatrix | np.ndarray, kind: str):
    if isinstance(graph, SimilarityGraph):
        return laplacian(graph, kind).matrix
    if isinstance(graph, Laplacian):
        return graph.matrix
    return sparse.csr_matrix(graph)


def dr_loss(F: np.ndarray, Y: np.ndarray, weights: np.ndarray) -> float:
    """Severity-weighted squared error sum_i w_i ||Y_i - F_i||^2."""
    F, Y, weights = np.asarray(F), np.asarray(Y), np.asarray(weights, dtype=np.float64)
    if F.shape != Y.shape or weights.shape != (F.shape[0],):
        raise SSGLError("shape mismatch in dr_loss")
    if np.any(weights < 0):
        raise SSGLError("severity weights must be >= 0")
    return float(weights @ np.sum((Y - F) ** 2, axis=1))


def objective(F, Y, Y0, L, config: SolverConfig, weights: np.ndarray | None = None) -> float:
    F, Y, Y0 = (np.asarray(a, dtype=np.float64) for a in (F, Y, Y0))
    if not F.shape == Y.shape == Y0.shape:
        raise SSGLError(f"shape mismatch: F {F.shape}, Y {Y.shape}, Y0 {Y0.shape}")
    L = _as_laplacian(L, config.laplacian_kind)
    if L.shape != (F.shape[0], F.shape[0]):
        raise SSGLError(f"Laplacian {L.shape} does not match {F.shape[0]} rows")
    if weights is None:
        weights = row_weights(Y0, config)
    fit_term = float(np.sum((Y - F) ** 2))
    smooth = float(np.sum(F * (L @ F)))
    anchor = float(np.sum((Y - Y0) ** 2))
    return fit_term + config.lam * smooth + config.alpha * dr_loss(F, Y, weights) + config.gamma * anchor


class FStep:
    """The F-step system, factorized (or preconditioned) once per fit."""

    def __init__(self, L, config: SolverConfig, weights: np.ndarray) -> None:
        n = L.shape[0]
        self.fit_diag = 1.0 + config.alpha * weights
        self.system = (sparse.diags(self.fit_diag) + config.lam * L).tocsr()
        self.tol = config.tol
        self._chol = None
        if n <= DENSE_LIMIT:
            self._chol = scipy.linalg.cho_factor(self.system.toarray())
        self._last: np.ndarray | None = None

    def solve(self, Y: np.ndarray) -> np.ndarray:
        rhs = self.fit_diag[:, None] * Y
        if self._chol is not None:
            return scipy.linalg.cho_solve(self._chol, rhs)
        diag = self.system.diagonal()
        # per-column solves are independent; the warm start only speeds them up
        start = self._last if self._last is not None else Y
        F = np.column_stack([
            conjugate_gradient(self.system, rhs[:, c], start[:, c], tol=self.tol * 1e-3, diag=diag)
            for c in range(Y.shape[1])
        ])
        self._last = F
        return F


def f_step(Y, L, config: SolverConfig, weights: np.ndarray | None = None) -> np.ndarray:
    """Minimize J over F with Y fixed."""
    Y = np.asarray(Y, dtype=np.float64)
    L = _as_laplacian(L, config.laplacian_kind)
    if weights is None:
        weights = np.zeros(Y.shape[0])
    return FStep(L, config, weights).solve(Y)


def y_step(F, config: SolverConfig, Y0, weights: np.ndarray | None = None) -> np.ndarray:
    """Minimize J over Y with F fixed: a per-row weighted average of F and Y0."""
    F = np.asarray(F, dtype=np.float64)
    Y0 = np.asarray(Y0, dtype=np.float64)
    if F.shape != Y0.shape:
        raise SSGLError(f"shape mismatch: F {F.shape} vs Y0 {Y0.shape}")
    if not config.gamma > 0:
        raise SSGLError("gamma must be > 0")
    if weights is None:
        weights = row_weights(Y0, config)
    keep = (1.0 + config.alpha * weights)[:, None]
    Y = (keep * F + config.gamma * Y0) / (keep + config.gamma)
    if config.clamp_labeled:
        mask = labeled_rows(Y0)
        Y[mask] = Y0[mask]
    return Y


def fit(graph, Y0, config: SolverConfig) -> FitResult:
    """Alternate F- and Y-steps from Y = Y0 until max |dY| < tol.

    Returns the last F, the last Y and a report. Hitting max_iter is not an
    error; the report says converged=False.
    """
    Y0 = np.asarray(Y0, dtype=np.float64)
    L = _as_laplacian(graph, config.laplacian_kind)
    if L.shape[0] != Y0.shape[0]:
        raise SSGLError(f"graph has {L.shape[0]} nodes but Y0 has {Y0.shape[0]} rows")
    if not np.all(np.isfinite(Y0)):
        raise SSGLError("Y0 must be finite")
    weights = row_weights(Y0, config)
    step = FStep(L, config, weights)

    Y = Y0.copy()
    report = SolveReport(iterations=0, final_residual=math.inf, converged=False)
    F = Y
    for it in range(1, config.max_iter + 1):
        F = step.solve(Y)
        Y_next = y_step(F, config, Y0, weights)
        residual = float(np.max(np.abs(Y_next - Y))) if Y.size else 0.0
        Y = Y_next
        report.iterations = it
        report.final_residual = residual
        report.residual_trace.append(residual)
        report.objective_trace.append(objective(F, Y, Y0, L, config, weights))
        if residual < config.tol:
            report.converged = True
            break
    return FitResult(F, LabelMatrix(Y0, Y), report)


def fixed_point_oracle(graph, Y0, config: SolverConfig) -> np.ndarray:
    """Exact fixed point of the F/Y alternation by dense elimination.

    With A = (I + alpha*D_w + lam*L)^{-1} (I + alpha*D_w) the F-step is
    F = A Y, and substituting it into the Y-step gives the linear system
    (diag(1 + alpha*w + gamma) - diag(1 + alpha*w) A) Y = gamma * Y0.
    Clamped rows are eliminated as known values.
    """
    Y0 = np.asarray(Y0, dtype=np.float64)
    n = Y0.shape[0]
    if n > 1000:
        raise SSGLError("fixed_point_oracle is dense; n must be <= 1000")
    L = _as_laplacian(graph, config.laplacian_kind).toarray()
    weights = row_weights(Y0, config)
    keep = 1.0 + config.alpha * weights
    A = np.linalg.solve(np.diag(keep) + config.lam * L, np.diag(keep))
    M = np.diag(keep + config.gamma) - keep[:, None] * A
    rhs = config.gamma * Y0
    if config.clamp_labeled:
        fixed = labeled_rows(Y0)
        free = ~fixed
        Y = Y0.copy()
        if np.any(free):
            # labeled rows sit at Y0; free rows follow the unclamped Y-step
            sub = M[np.ix_(free, free)]
            Y[free] = _solve_guarded(sub, rhs[free] - M[np.ix_(free, fixed)] @ Y0[fixed])
    else:
        Y = _solve_guarded(M, rhs)
    return A @ Y


def _solve_guarded(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        out = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SSGLError("singular fixed-point system") from exc
    if not np.all(np.isfinite(out)):
        raise SSGLError("singular fixed-point system")
    return out


def predict(F, num_classes: int | Sequence[str], config: SolverConfig | None = None):
    """Class index per row, or None when a row carries no evidence.

    K > 2: argmax with ties to the lowest index. K = 2: p = F1 / (F0 + F1)
    against the threshold. Returns (predictions, p) where p is None unless K = 2.
    """
    F = np.asarray(F, dtype=np.float64)
    k = num_classes if isinstance(num_classes, int) else len(num_classes)
    if F.ndim != 2 or F.shape[1] != k:
        raise SSGLError(f"scores have shape {F.shape}, expected (n, {k})")
    if not np.all(np.isfinite(F)):
        raise SSGLError("scores must be finite")
    threshold = 0.5 if config is None else config.threshold
    if k == 2:
        total = F[:, 0] + F[:, 1]
        ok = total > 0
        p = np.full(F.shape[0], np.nan)
        p[ok] = F[ok, 1] / total[ok]
        preds = [int(pi >= threshold) if good else None for pi, good in zip(p, ok)]
        return preds, p
    empty = np.all(F == 0, axis=1)
    best = np.argmax(F, axis=1)
    return [None if e else int(b) for b, e in zip(best, empty)], None
