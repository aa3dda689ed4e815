import numpy as np
import pytest
from scipy import sparse

from conftest import random_problem
from oracles import relative_stationarity
from ssgl.errors import SSGLError
from ssgl.graph import GraphConfig, SimilarityGraph, build_graph, laplacian
from ssgl.solver import (
    SolverConfig,
    dr_loss,
    f_step,
    fit,
    fixed_point_oracle,
    init_label_matrix,
    objective,
    predict,
    y_step,
)

PAIR = SimilarityGraph(2, [0], [1], [1.0])
PAIR_L = np.array([[1.0, -1.0], [-1.0, 1.0]])
TIGHT = dict(tol=1e-12, max_iter=5000)


class TestInit:
    def test_layout(self):
        y = init_label_matrix(3, 2, {0: 1})
        assert y.initial.tolist() == [[0, 1], [0, 0], [0, 0]]
        assert np.array_equal(y.current, y.initial)

    def test_empty(self):
        assert not init_label_matrix(4, 3, {}).initial.any()

    def test_full(self):
        y = init_label_matrix(3, 3, {0: 2, 1: 0, 2: 1}).initial
        assert y.sum(axis=1).tolist() == [1, 1, 1]

    def test_duplicate_row(self):
        with pytest.raises(SSGLError, match="duplicate"):
            init_label_matrix(3, 2, [(0, 1), (0, 0)])

    def test_ranges(self):
        with pytest.raises(SSGLError):
            init_label_matrix(3, 2, {3: 0})
        with pytest.raises(SSGLError):
            init_label_matrix(3, 2, {0: 2})


class TestObjective:
    def test_constant_columns_zero(self):
        F = np.ones((2, 2)) * [0.3, 0.7]
        assert objective(F, F, F, PAIR_L, SolverConfig(lam=2.0)) == pytest.approx(0.0, abs=1e-15)

    def test_two_node_smoothness(self):
        F = np.array([[1.0], [0.0]])
        assert objective(F, F, F, PAIR_L, SolverConfig(lam=1.0, alpha=1.0, gamma=1.0)) == pytest.approx(1.0)

    def test_homogeneity(self):
        rng = np.random.default_rng(0)
        F, Y, Y0 = rng.normal(size=(3, 2, 2))
        cfg = SolverConfig(lam=0.7, gamma=1.3, alpha=0.5, severity_weights=(1.0, 2.0))
        Y0 = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert objective(2 * F, 2 * Y, 2 * Y0, PAIR_L, cfg) == pytest.approx(4 * objective(F, Y, Y0, PAIR_L, cfg))

    def test_shape_mismatch(self):
        with pytest.raises(SSGLError, match="shape"):
            objective(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)), PAIR_L, SolverConfig())


class TestDrLoss:
    def test_zero_weights(self):
        assert dr_loss(np.ones((2, 2)), np.zeros((2, 2)), np.zeros(2)) == 0.0

    def test_weighted_example(self):
        F = np.array([[0.0, 0.0], [0.0, 0.0]])
        Y = np.array([[0.1, -0.1], [1.0, 1.0]])
        assert dr_loss(F, Y, np.array([2.0, 0.0])) == pytest.approx(0.04, abs=1e-15)

    def test_zero_residual(self):
        Y = np.random.default_rng(1).normal(size=(4, 3))
        assert dr_loss(Y, Y, np.array([1.0, 5.0, 0.0, 2.0])) == 0.0

    def test_negative_weight(self):
        with pytest.raises(SSGLError):
            dr_loss(np.zeros((1, 1)), np.zeros((1, 1)), np.array([-1.0]))


class TestSteps:
    def test_f_identity(self):
        Y = np.random.default_rng(2).normal(size=(2, 3))
        np.testing.assert_array_equal(f_step(Y, PAIR_L, SolverConfig(lam=0.0)), Y)

    def test_f_two_node(self):
        F = f_step(np.array([[1.0], [0.0]]), PAIR_L, SolverConfig(lam=1.0))
        np.testing.assert_allclose(F.ravel(), [2 / 3, 1 / 3], atol=1e-15)

    def test_f_isolated_labeled_node(self):
        g = SimilarityGraph(3, [0], [1], [0.8])
        Y = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        F = f_step(Y, laplacian(g).matrix, SolverConfig(lam=7.0))
        assert F[2].tolist() == [0.0, 1.0]

    def test_f_with_severity_weights(self):
        # (I + alpha*D_w + lam*L) F = (I + alpha*D_w) Y, solved by hand with w = (1, 0), alpha = 1
        Y = np.array([[1.0], [0.0]])
        F = f_step(Y, PAIR_L, SolverConfig(lam=1.0, alpha=1.0), weights=np.array([1.0, 0.0]))
        A = np.array([[3.0, -1.0], [-1.0, 2.0]])
        np.testing.assert_allclose(F.ravel(), np.linalg.solve(A, [2.0, 0.0]), atol=1e-15)

    def test_y_average(self):
        Y = y_step(np.array([[0.5, 0.5]]), SolverConfig(gamma=1.0), np.array([[1.0, 0.0]]))
        assert Y.tolist() == [[0.75, 0.25]]

    def test_y_large_gamma(self):
        Y0 = np.array([[1.0, 0.0], [0.0, 1.0]])
        Y = y_step(np.array([[0.2, 0.9], [0.4, 0.4]]), SolverConfig(gamma=1e6), Y0)
        assert np.max(np.abs(Y - Y0)) <= 1e-5

    def test_y_unlabeled_half(self):
        F = np.array([[0.3, 0.6]])
        np.testing.assert_allclose(y_step(F, SolverConfig(gamma=1.0), np.zeros((1, 2))), F / 2)

    def test_y_clamp(self):
        Y0 = np.array([[1.0, 0.0], [0.0, 0.0]])
        F = np.array([[0.2, 0.8], [0.4, 0.4]])
        Y = y_step(F, SolverConfig(gamma=1.0, clamp_labeled=True), Y0)
        assert Y.tolist() == [[1.0, 0.0], [0.2, 0.2]]

    def test_gamma_validation(self):
        with pytest.raises(SSGLError, match="gamma must be > 0"):
            SolverConfig(gamma=0.0)


class TestFit:
    def test_two_node_fixed_point(self):
        res = fit(PAIR, np.array([[1.0], [0.0]]), SolverConfig(lam=1.0, gamma=1.0, **TIGHT))
        np.testing.assert_allclose(res.labels.current.ravel(), [0.8, 0.2], atol=1e-11)
        np.testing.assert_allclose(res.scores.ravel(), [0.6, 0.4], atol=1e-11)
        assert res.report.converged

    def test_no_smoothing(self):
        Y0 = init_label_matrix(4, 2, {0: 0, 3: 1}).initial
        g = SimilarityGraph(4, [0, 1, 2], [1, 2, 3], [0.5, 0.5, 0.5])
        res = fit(g, Y0, SolverConfig(lam=0.0, alpha=0.0))
        np.testing.assert_array_equal(res.scores, Y0)
        np.testing.assert_array_equal(res.labels.current, Y0)
        assert res.report.iterations <= 2

    def test_disconnected_component_is_zero(self):
        g = SimilarityGraph(5, [0, 1, 3], [1, 2, 4], [0.9, 0.7, 0.6])
        Y0 = init_label_matrix(5, 2, {0: 0, 2: 1}).initial
        res = fit(g, Y0, SolverConfig())
        assert np.all(res.scores[3:] == 0.0)
        preds, _ = predict(res.scores, 2)
        assert preds[3] is None and preds[4] is None

    def test_nonconvergence_reported(self):
        g, Y0 = random_problem(np.random.default_rng(0), 20, 2, "knn")
        res = fit(g, Y0, SolverConfig(tol=1e-15, max_iter=3))
        assert not res.report.converged
        assert res.report.iterations == 3
        assert len(res.report.objective_trace) == 3

    def test_node_count_mismatch(self):
        with pytest.raises(SSGLError, match="nodes"):
            fit(PAIR, np.zeros((3, 2)), SolverConfig())

    def test_report_json_fields(self):
        rep = fit(PAIR, np.array([[1.0], [0.0]]), SolverConfig()).report.as_dict()
        assert set(rep) == {"iterations", "converged", "final_residual", "objective"}


class TestOracle:
    def test_two_node(self):
        F = fixed_point_oracle(PAIR, np.array([[1.0], [0.0]]), SolverConfig(lam=1.0, gamma=1.0))
        np.testing.assert_allclose(F.ravel(), [0.6, 0.4], atol=1e-14)

    def test_no_smoothing_returns_y0(self):
        g, Y0 = random_problem(np.random.default_rng(1), 12, 3, "full")
        np.testing.assert_allclose(fixed_point_oracle(g, Y0, SolverConfig(lam=0.0)), Y0, atol=1e-14)

    @pytest.mark.parametrize("method", ["knn", "epsilon", "full"])
    @pytest.mark.parametrize(
        "extra",
        [
            {},
            dict(alpha=2.0, severity_weights=None),
            dict(clamp_labeled=True),
            dict(laplacian_kind="symmetric-normalized"),
        ],
    )
    def test_matches_fit(self, method, extra):
        rng = np.random.default_rng(hash((method, str(extra))) % 2**32)
        for _ in range(3):
            k = int(rng.choice([2, 4]))
            g, Y0 = random_problem(rng, int(rng.integers(8, 40)), k, method)
            opts = dict(extra)
            if "severity_weights" in opts:
                opts["severity_weights"] = tuple(float(c) for c in range(k))
            cfg = SolverConfig(lam=float(rng.uniform(0.1, 3)), gamma=float(rng.uniform(0.5, 3)), **opts, **TIGHT)
            res = fit(g, Y0, cfg)
            assert res.report.converged
            assert np.max(np.abs(res.scores - fixed_point_oracle(g, Y0, cfg))) <= 1e-8

    def test_iterative_path_matches_oracle(self):
        # n above the dense limit exercises the conjugate-gradient F-step
        rng = np.random.default_rng(4)
        g, Y0 = random_problem(rng, 600, 2, "knn")
        cfg = SolverConfig(lam=1.0, gamma=1.0, tol=1e-10)
        res = fit(g, Y0, cfg)
        assert res.report.converged
        assert np.max(np.abs(res.scores - fixed_point_oracle(g, Y0, cfg))) <= 1e-8


class TestInvariants:
    @pytest.mark.parametrize("gamma", [0.5, 1.0, 4.0])
    def test_contraction(self, gamma):
        rng = np.random.default_rng(int(gamma * 10))
        for method in ("knn", "epsilon", "full"):
            g, Y0 = random_problem(rng, 30, 3, method)
            res = fit(g, Y0, SolverConfig(lam=2.0, gamma=gamma, tol=1e-9))
            r = res.report.residual_trace
            for t in range(2, len(r)):
                assert r[t] <= (1 / (1 + gamma) + 1e-6) * r[t - 1]

    def test_stationarity(self):
        rng = np.random.default_rng(7)
        for method in ("knn", "epsilon", "full"):
            g, Y0 = random_problem(rng, 25, 3, method)
            cfg = SolverConfig(lam=1.5, gamma=0.8, alpha=1.0, severity_weights=(0.0, 1.0, 2.0), **TIGHT)
            res = fit(g, Y0, cfg)
            assert relative_stationarity(res, Y0, laplacian(g).matrix, cfg, rng) <= 1e-4

    def test_maximum_principle(self):
        rng = np.random.default_rng(8)
        for i in range(20):
            g, Y0 = random_problem(rng, 30, 3, ("knn", "epsilon", "full")[i % 3])
            F = fit(g, Y0, SolverConfig(lam=float(rng.uniform(0.1, 5)))).scores
            assert F.min() >= -1e-9 and F.max() <= 1 + 1e-9
            assert F.sum(axis=1).max() <= 1 + 1e-9

    def test_objective_monotone(self):
        rng = np.random.default_rng(9)
        g, Y0 = random_problem(rng, 40, 3, "knn")
        trace = fit(g, Y0, SolverConfig(alpha=1.0, severity_weights=(1.0, 2.0, 3.0), tol=1e-10)).report.objective_trace
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_scale_invariance(self):
        rng = np.random.default_rng(10)
        g, Y0 = random_problem(rng, 30, 4, "knn")
        cfg = SolverConfig(**TIGHT)
        F1 = fit(g, Y0, cfg).scores
        F3 = fit(g, 3.0 * Y0, cfg).scores
        np.testing.assert_allclose(F3, 3.0 * F1, atol=1e-9)
        assert predict(F1, 4)[0] == predict(F3, 4)[0]

    def test_kernel_lambda_trade(self):
        rng = np.random.default_rng(11)
        g, Y0 = random_problem(rng, 30, 2, "full")
        F1 = fit(g, Y0, SolverConfig(lam=1.0, **TIGHT)).scores
        F2 = fit(g.scaled(0.25), Y0, SolverConfig(lam=4.0, **TIGHT)).scores
        np.testing.assert_allclose(F1, F2, atol=1e-9)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(12)
        g, Y0 = random_problem(rng, 25, 3, "knn")
        perm = rng.permutation(25)
        Y0p = np.empty_like(Y0)
        Y0p[perm] = Y0
        cfg = SolverConfig(**TIGHT)
        F = fit(g, Y0, cfg).scores
        Fp = fit(g.permuted(perm), Y0p, cfg).scores
        np.testing.assert_allclose(Fp[perm], F, atol=1e-9)

    def test_sparse_and_dense_laplacian_inputs_agree(self):
        g, Y0 = random_problem(np.random.default_rng(13), 15, 2, "full")
        L = laplacian(g).matrix
        cfg = SolverConfig(**TIGHT)
        np.testing.assert_allclose(fit(L, Y0, cfg).scores, fit(sparse.csr_matrix(L.toarray()), Y0, cfg).scores)


class TestPredict:
    def test_binary_threshold(self):
        preds, p = predict(np.array([[0.6, 0.4]]), 2, SolverConfig(threshold=0.5))
        assert preds == [0] and p[0] == pytest.approx(0.4)

    def test_binary_low_threshold(self):
        preds, _ = predict(np.array([[0.6, 0.4]]), 2, SolverConfig(threshold=0.3))
        assert preds == [1]

    def test_indeterminate(self):
        assert predict(np.zeros((1, 2)), 2)[0] == [None]
        assert predict(np.zeros((1, 5)), 5)[0] == [None]

    def test_argmax(self):
        preds, p = predict(np.array([[0.2, 0.2, 0.5, 0.05, 0.05], [0.3, 0.3, 0.1, 0.1, 0.2]]), 5)
        assert preds == [2, 0] and p is None

    def test_shape_check(self):
        with pytest.raises(SSGLError):
            predict(np.zeros((2, 3)), 2)


def test_knn_two_moons_like_sanity():
    x = np.vstack([np.c_[np.linspace(0, 1, 20), np.zeros(20)], np.c_[np.linspace(0, 1, 20), np.full(20, 3.0)]])
    g = build_graph(x, GraphConfig("knn", k=3))
    Y0 = init_label_matrix(40, 2, {0: 0, 39: 1}).initial
    preds, _ = predict(fit(g, Y0, SolverConfig()).scores, 2)
    assert preds == [0] * 20 + [1] * 20
