import numpy as np
import pytest
from hypothesis import given, strategies as st

from crossmap.errors import DivergenceError, ValidationError
from crossmap.fmbsd import (
    FmbsdConfig,
    MapProblem,
    SimilarityRowSums,
    descriptor_operators,
    extract_correspondences,
    fit_map,
    gradient,
    map_problem,
    minimize_quadratic,
    objective,
    prepare_modalities,
    project_descriptors,
    rectangular_identity,
    retrieve,
    retrieve_all,
)
from crossmap.graph import COMBINATORIAL, build_knn_graph, laplacian
from crossmap.harness.synth import ModalitySpec, SyntheticSpec, generate_synthetic
from crossmap.numkit import pinv


def orthonormal(rng, n, k):
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return Q


def random_instance(rng, ki=None, kj=None, q=None, Ni=None, Nj=None, weights=None):
    ki = ki or int(rng.integers(2, 11))
    kj = kj or int(rng.integers(2, 11))
    q = q or int(rng.integers(1, 7))
    Ni = Ni or int(rng.integers(max(ki, 3), 41))
    Nj = Nj or int(rng.integers(max(kj, 3), 41))
    Di, Dj = orthonormal(rng, Ni, ki), orthonormal(rng, Nj, kj)
    Si, Sj = rng.random((Ni, q)), rng.random((Nj, q))
    G = build_knn_graph(rng.standard_normal((Ni, 2)), min(3, Ni - 1))
    L = laplacian(G, COMBINATORIAL).matrix
    a, b, lb, lw = weights or rng.uniform(0.1, 2.0, 4)
    cfg = FmbsdConfig(alpha=a, beta=b, lambda_b=lb, lambda_w=lw)
    args = dict(
        A_i=Di.T @ Si, A_j=Dj.T @ Sj,
        Phi_i=descriptor_operators(Di, Si).ops, Phi_j=descriptor_operators(Dj, Sj).ops,
        Pi=rng.random((Ni, Nj)), Delta_i=Di, Delta_j=Dj, L_i=L, cfg=cfg,
    )
    return args, rng.standard_normal((ki, kj))


def direct_objective(C, A_i, A_j, Phi_i, Phi_j, Pi, Delta_i, Delta_j, L_i, cfg):
    """Term-by-term evaluation, with the between term as an explicit double sum."""
    data = np.sum((C.T @ A_i - A_j) ** 2)
    comm = sum(np.sum((Pi_ @ C - C @ Pj_) ** 2) for Pi_, Pj_ in zip(Phi_i, Phi_j))
    Gam = Delta_i @ C
    between = sum(Pi[r, t] * np.sum((Gam[r] - Delta_j[t]) ** 2)
                  for r in range(Pi.shape[0]) for t in range(Pi.shape[1]))
    within = np.trace(Gam.T @ L_i @ Gam)
    return cfg.alpha * data + cfg.beta * comm + cfg.lambda_b * between + cfg.lambda_w * within


def fd_gradient(f, C, h=1e-5):
    g = np.zeros_like(C)
    for idx in np.ndindex(*C.shape):
        E = np.zeros_like(C)
        E[idx] = h
        g[idx] = (f(C + E) - f(C - E)) / (2 * h)
    return g


def two_moons_bundles(cfg, n=200, permute=True, seed=4):
    spec = SyntheticSpec(family="two-moons", n=n, latent_noise=0.1, latent_seed=seed,
                         modalities=(ModalitySpec(2, map="identity"), ModalitySpec(2, map="identity")),
                         permutation_seed=seed + 1, shuffle=permute)
    ds = generate_synthetic(spec)
    return ds, prepare_modalities(ds.features, cfg)


class TestConfig:
    def test_defaults(self):
        cfg = FmbsdConfig()
        assert (cfg.alpha, cfg.beta, cfg.lambda_b, cfg.lambda_w) == (0.1, 1.0, 1e4, 1e4)
        assert (cfg.k_basis, cfg.resolution, cfg.knn) == (60, 60, 5)

    @pytest.mark.parametrize("kw", [dict(alpha=0, beta=0), dict(lambda_b=-1), dict(knn=0),
                                    dict(grad_tol=0), dict(sigma_mode="x"), dict(method="newton"),
                                    dict(within_laplacian="rw")])
    def test_rejects(self, kw):
        with pytest.raises(ValidationError):
            FmbsdConfig(**kw)


class TestDescriptorAlgebra:
    def test_projection_reconstructs_span(self, rng):
        D = orthonormal(rng, 20, 6)
        S = D @ rng.standard_normal((6, 4))
        A = project_descriptors(D, S).A
        np.testing.assert_allclose(D @ A, S, atol=1e-8)

    def test_projection_full_basis_preserves_norm(self, rng):
        D = orthonormal(rng, 9, 9)
        S = rng.standard_normal((9, 3))
        assert np.linalg.norm(project_descriptors(D, S).A) == pytest.approx(np.linalg.norm(S))

    def test_projection_entries_are_dot_products(self, rng):
        D, S = orthonormal(rng, 12, 5), rng.standard_normal((12, 3))
        A = project_descriptors(D, S).A
        assert A[3, 1] == pytest.approx(D[:, 3] @ S[:, 1])

    def test_projection_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            project_descriptors(orthonormal(rng, 10, 3), rng.standard_normal((9, 2)))

    def test_constant_descriptor(self, rng):
        D = orthonormal(rng, 7, 7)
        ops = descriptor_operators(D, np.full((7, 1), 2.5)).ops
        np.testing.assert_allclose(ops[0], 2.5 * np.eye(7), atol=1e-10)

    def test_zero_descriptor(self, rng):
        ops = descriptor_operators(orthonormal(rng, 8, 4), np.zeros((8, 2))).ops
        np.testing.assert_array_equal(ops, 0.0)

    def test_operators_match_explicit_product(self, rng):
        D, S = orthonormal(rng, 15, 5), rng.random((15, 3))
        ops = descriptor_operators(D, S).ops
        for k in range(3):
            np.testing.assert_allclose(ops[k], pinv(D) @ np.diag(S[:, k]) @ D, atol=1e-10)

    def test_row_sums(self, rng):
        Pi = rng.random((4, 6))
        s = SimilarityRowSums.of(Pi)
        np.testing.assert_allclose(s.rows, Pi.sum(axis=1), atol=1e-12)
        np.testing.assert_allclose(s.cols, Pi.sum(axis=0), atol=1e-12)


class TestObjective:
    def test_identical_modalities_identity_map(self, rng):
        args, _ = random_instance(rng, ki=5, kj=5, Ni=20, Nj=20, weights=(1.0, 1.0, 0.0, 0.0))
        args.update(A_j=args["A_i"], Phi_j=args["Phi_i"], Delta_j=args["Delta_i"])
        assert objective(np.eye(5), **args) == pytest.approx(0.0, abs=1e-20)

    def test_zero_map_descriptor_only(self, rng):
        args, _ = random_instance(rng, weights=(1.0, 0.0, 0.0, 0.0))
        args["cfg"] = FmbsdConfig(alpha=1.0, beta=0.0, lambda_b=0.0, lambda_w=0.0)
        C = np.zeros((args["A_i"].shape[0], args["A_j"].shape[0]))
        assert objective(C, **args) == pytest.approx(np.sum(args["A_j"] ** 2))

    def test_shape_mismatch(self, rng):
        args, C = random_instance(rng, ki=4, kj=3)
        args["Pi"] = args["Pi"][:, :-1]
        with pytest.raises(ValidationError):
            objective(C, **args)

    def test_terms_sum_to_objective(self, rng):
        args, C = random_instance(rng)
        prob = MapProblem(**args)
        assert sum(prob.terms(C).values()) == pytest.approx(prob.objective(C))

    @given(st.integers(0, 10_000))
    def test_trace_form_equals_double_sum(self, seed):
        args, C = random_instance(np.random.default_rng(seed))
        assert objective(C, **args) == pytest.approx(direct_objective(C, **args), rel=1e-9, abs=1e-9)

    @given(st.integers(0, 10_000), st.floats(0.01, 0.99))
    def test_convexity_probe(self, seed, t):
        r = np.random.default_rng(seed)
        args, C1 = random_instance(r)
        C2 = r.standard_normal(C1.shape)
        f = MapProblem(**args).objective
        assert f(t * C1 + (1 - t) * C2) <= t * f(C1) + (1 - t) * f(C2) + 1e-9


class TestGradient:
    @given(st.integers(0, 10_000))
    def test_matches_finite_differences(self, seed):
        args, C = random_instance(np.random.default_rng(seed))
        prob = MapProblem(**args)
        g = gradient(C, **args)
        fd = fd_gradient(prob.objective, C)
        scale = np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())
        assert np.max(np.abs(g - fd) / scale) <= 1e-5

    def test_vanishes_at_minimizer(self, rng):
        args, C = random_instance(rng, ki=5, kj=4, weights=(1.0, 0.5, 0.0, 0.0))
        prob = MapProblem(**args)
        # the gradient is affine in C; solve for its root column by column
        g0 = prob.gradient(np.zeros_like(C)).ravel()
        H = np.column_stack([prob.hess_vec(e.reshape(C.shape)).ravel() for e in np.eye(C.size)])
        C_star = np.linalg.solve(H, -g0).reshape(C.shape)
        assert np.linalg.norm(prob.gradient(C_star)) <= 1e-8

    def test_zero_without_active_terms(self, rng):
        args, C = random_instance(rng)
        args["cfg"] = FmbsdConfig(alpha=0.0, beta=1e-300, lambda_b=1.0, lambda_w=0.0)
        args["Pi"] = np.zeros_like(args["Pi"])
        np.testing.assert_allclose(gradient(C, **args), 0.0, atol=1e-250)


class TestFit:
    def test_exact_copy_converges_to_identity(self):
        cfg = FmbsdConfig(alpha=0.1, beta=1.0, lambda_b=0.0, lambda_w=0.0, k_basis=20, resolution=10, knn=5)
        ds, (b, _) = two_moons_bundles(cfg, n=80, permute=False)
        fm = fit_map(b, b, cfg)
        assert fm.objective <= 1e-8
        np.testing.assert_allclose(fm.C, np.eye(20), atol=1e-4)

    def test_history_non_increasing(self, rng):
        args, _ = random_instance(rng)
        prob = MapProblem(**args)
        for method in ("cg", "gd"):
            C, hist, it, _ = minimize_quadratic(prob, rectangular_identity(*prob.shape), 200, 1e-9, method)
            assert np.all(np.diff(hist) <= 0)
            assert hist[-1] == pytest.approx(prob.objective(C))

    def test_recorded_objective(self):
        cfg = FmbsdConfig(k_basis=15, resolution=10, max_iters=50)
        _, (a, b) = two_moons_bundles(cfg, n=60)
        fm = fit_map(a, b, cfg)
        assert fm.objective == pytest.approx(map_problem(a, b, cfg).objective(fm.C), rel=1e-9)
        assert np.all(np.isfinite(fm.C))
        assert fm.iterations <= 50

    def test_permuted_copy_improves_on_start(self):
        cfg = FmbsdConfig(k_basis=20, resolution=20, max_iters=200)
        _, (a, b) = two_moons_bundles(cfg, n=100)
        fm = fit_map(a, b, cfg)
        assert fm.objective <= map_problem(a, b, cfg).objective(rectangular_identity(20, 20))

    def test_permutation_recovery(self):
        cfg = FmbsdConfig(alpha=1.0, beta=1.0, lambda_b=0.0, lambda_w=0.0, k_basis=30, resolution=30)
        ds, (a, b) = two_moons_bundles(cfg, n=200)
        fm = fit_map(a, b, cfg)
        acc = extract_correspondences(a.Delta, fm.C, b.Delta).accuracy(ds.ground_truth(1))
        assert acc >= 0.95

    def test_divergence(self, rng):
        args, C = random_instance(rng, weights=(1.0, 1.0, 1.0, 1.0))
        args["A_j"] = np.full_like(args["A_j"], 1e200)
        with np.errstate(over="ignore"), pytest.raises(DivergenceError):
            minimize_quadratic(MapProblem(**args), C)


def scan_nearest(Q, T, k):
    d = ((Q[:, None, :] - T[None, :, :]) ** 2).sum(axis=2)
    return np.array([np.lexsort((np.arange(T.shape[0]), row))[:k] for row in d])


class TestCorrespondences:
    def test_identity(self, rng):
        D = rng.standard_normal((25, 6))
        cm = extract_correspondences(D, np.eye(6), D)
        np.testing.assert_array_equal(cm.rho, np.arange(25))
        P = cm.P.toarray()
        np.testing.assert_array_equal(P.sum(axis=1), 1)

    def test_permutation(self, rng):
        D = rng.standard_normal((25, 6))
        perm = rng.permutation(25)
        Dj = np.empty_like(D)
        Dj[perm] = D
        cm = extract_correspondences(D, np.eye(6), Dj)
        np.testing.assert_array_equal(cm.rho, perm)

    @given(st.integers(0, 10_000))
    def test_matches_scan(self, seed):
        r = np.random.default_rng(seed)
        Di, Dj, C = r.standard_normal((15, 4)), r.standard_normal((12, 3)), r.standard_normal((4, 3))
        np.testing.assert_array_equal(extract_correspondences(Di, C, Dj).rho, scan_nearest(Di @ C, Dj, 1)[:, 0])

    def test_nonconformable(self, rng):
        with pytest.raises(ValidationError):
            extract_correspondences(rng.standard_normal((5, 3)), np.eye(2), rng.standard_normal((5, 2)))


class TestRetrieve:
    def test_single_equals_correspondence(self, rng):
        Di, Dj, C = rng.standard_normal((10, 3)), rng.standard_normal((14, 3)), rng.standard_normal((3, 3))
        rho = extract_correspondences(Di, C, Dj).rho
        for r in range(10):
            np.testing.assert_array_equal(retrieve(Di, C, Dj, r, 1), [rho[r]])

    def test_complete_list_is_permutation(self, rng):
        Di, Dj, C = rng.standard_normal((6, 3)), rng.standard_normal((9, 2)), rng.standard_normal((3, 2))
        for row in retrieve_all(Di, C, Dj, 9):
            np.testing.assert_array_equal(np.sort(row), np.arange(9))

    def test_top_five_matches_scan(self, rng):
        Di, Dj, C = rng.standard_normal((20, 4)), rng.standard_normal((30, 4)), rng.standard_normal((4, 4))
        np.testing.assert_array_equal(retrieve_all(Di, C, Dj, 5), scan_nearest(Di @ C, Dj, 5))

    @pytest.mark.parametrize("k", [0, 10])
    def test_k_out_of_range(self, rng, k):
        Di, Dj = rng.standard_normal((4, 2)), rng.standard_normal((9, 2))
        with pytest.raises(ValidationError):
            retrieve(Di, np.eye(2), Dj, 0, k)
