import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from vcsmc.copula import (
    STRUCTURES,
    CopulaHierarchy,
    CorrelationStructure,
    Layout,
    assemble_full_cholesky,
    gauss_copula_grad_theta,
    gauss_copula_logdensity,
    gauss_copula_sample,
    hierarchy_logdensity,
    lkj_build,
    n_theta,
    structure_dims,
)
from vcsmc.errors import DomainError, NumericError
from vcsmc.stats import make_rng, norm_cdf


def rho_structure(rho: float) -> CorrelationStructure:
    # theta t gives P12 = t / sqrt(1 + t^2)
    return lkj_build([rho / math.sqrt(1 - rho * rho)], 2)


def theta_vectors(max_dim=6):
    return st.integers(2, max_dim).flatmap(
        lambda m: st.tuples(st.just(m), st.lists(st.floats(-5, 5), min_size=n_theta(m), max_size=n_theta(m)))
    )


class TestLkj:
    @pytest.mark.parametrize("m", [1, 2, 5])
    def test_zero_theta_is_identity(self, m):
        c = lkj_build(np.zeros(n_theta(m)), m)
        np.testing.assert_array_equal(c.L, np.eye(m))
        np.testing.assert_array_equal(c.P, np.eye(m))

    def test_two_dim_hand_formula(self):
        c = lkj_build([1.0], 2)
        np.testing.assert_allclose(c.L[1], np.array([1.0, 1.0]) / math.sqrt(2), atol=1e-15)
        assert c.P[0, 1] == pytest.approx(0.7071067811865476, abs=1e-15)

    def test_random_five_dim_psd(self):
        c = lkj_build(make_rng(0).uniform(-5, 5, 10), 5)
        np.testing.assert_allclose(np.diag(c.L @ c.L.T), 1.0, atol=1e-12)
        # power iteration on (lambda_max I - P) gives lambda_min
        lam_max = np.max(np.linalg.eigvalsh(c.P))
        B = lam_max * np.eye(5) - c.P
        v = np.ones(5)
        for _ in range(2000):
            v = B @ v
            v /= np.linalg.norm(v)
        lam_min = lam_max - v @ B @ v
        assert lam_min >= -1e-10

    @given(theta_vectors())
    def test_invariants(self, mt):
        m, theta = mt
        c = lkj_build(theta, m)
        raw = c.L @ c.L.T
        assert np.max(np.abs(np.diag(raw) - 1)) <= 1e-12
        assert np.all(np.abs(c.P) <= 1 + 1e-12)
        assert np.min(np.linalg.eigvalsh(c.P)) >= -1e-10
        np.testing.assert_allclose(np.linalg.norm(c.L, axis=1), 1.0, atol=1e-12)
        assert np.all(np.triu(c.L, 1) == 0)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            lkj_build([0.1, 0.2], 2)


class TestDensity:
    def test_independence_is_zero(self):
        u = make_rng(1).random((20, 4))
        np.testing.assert_array_equal(gauss_copula_logdensity(u, CorrelationStructure(4)), 0.0)

    def test_center_value(self):
        assert gauss_copula_logdensity([0.5, 0.5], rho_structure(0.9)) == pytest.approx(-0.5 * math.log(0.19), abs=1e-12)
        assert -0.5 * math.log(0.19) == pytest.approx(0.8304, abs=1e-4)

    @pytest.mark.parametrize("rho", [-0.9, 0.0, 0.9])
    def test_integrates_to_one_2d(self, rho):
        # change of variables u = Phi(z): integral of c(Phi(z)) phi(z1) phi(z2) on a fine grid
        z = np.linspace(-9, 9, 1201)
        h = z[1] - z[0]
        Z1, Z2 = np.meshgrid(z, z, indexing="ij")
        u = norm_cdf(np.stack([Z1, Z2], axis=-1))
        logc = gauss_copula_logdensity_grid(u, rho_structure(rho))
        integrand = np.exp(logc - 0.5 * (Z1**2 + Z2**2)) / (2 * math.pi)
        assert integrand.sum() * h * h == pytest.approx(1.0, abs=1e-3)

    def test_integrates_to_one_3d(self):
        c = lkj_build([0.8, -0.5, 0.6], 3)
        z = np.linspace(-8, 8, 121)
        h = z[1] - z[0]
        grid = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1)
        logc = gauss_copula_logdensity_grid(norm_cdf(grid), c)
        integrand = np.exp(logc - 0.5 * np.sum(grid**2, axis=-1)) / (2 * math.pi) ** 1.5
        assert integrand.sum() * h**3 == pytest.approx(1.0, abs=1e-3)

    def test_singular_raises(self):
        c = lkj_build([1e200], 2)
        with pytest.raises(NumericError):
            gauss_copula_logdensity([0.3, 0.4], c)

    def test_theta_gradient_matches_finite_differences(self):
        rng = make_rng(4)
        for _ in range(5):
            theta = rng.uniform(-1.5, 1.5, 6)
            u = rng.uniform(0.05, 0.95, (7, 4))
            g = gauss_copula_grad_theta(u, lkj_build(theta, 4))
            h = 1e-6
            for k in range(6):
                e = np.zeros(6)
                e[k] = h
                fd = (np.sum(gauss_copula_logdensity(u, lkj_build(theta + e, 4)))
                      - np.sum(gauss_copula_logdensity(u, lkj_build(theta - e, 4)))) / (2 * h)
                assert abs(g[k] - fd) <= 1e-5 * max(abs(g[k]), abs(fd), 1e-3)


def gauss_copula_logdensity_grid(u, corr):
    flat = u.reshape(-1, corr.dim)
    return np.asarray(gauss_copula_logdensity(flat, corr)).reshape(u.shape[:-1])


class TestSampling:
    def test_identity_sample_is_cdf_of_noise(self):
        c = CorrelationStructure(3)
        u = gauss_copula_sample(c, make_rng(8), 50)
        eps = make_rng(8).standard_normal((50, 3))
        np.testing.assert_array_equal(u, norm_cdf(eps))

    @pytest.mark.parametrize("theta", [[0.0, 0.0, 0.0], [2.0, -1.0, 0.5], [-4.0, 3.0, 3.0]])
    def test_marginals_uniform_ks(self, theta):
        u = gauss_copula_sample(lkj_build(theta, 3), make_rng(2), 10_000)
        for i in range(3):
            assert sps.kstest(u[:, i], "uniform").pvalue > 0.01

    def test_correlation_monte_carlo(self):
        c = rho_structure(0.9)
        u = gauss_copula_sample(c, make_rng(11), 100_000)
        z = sps.norm.ppf(u)
        assert np.corrcoef(z.T)[0, 1] == pytest.approx(0.9, abs=0.01)

    def test_single_draw_shape(self):
        assert gauss_copula_sample(CorrelationStructure(2), make_rng(0)).shape == (2,)


def _random_hierarchy(layout, rng, which=STRUCTURES, scale=0.8):
    masks = CopulaHierarchy.free_masks(layout)
    dims = structure_dims(layout)
    thetas = {}
    for k in STRUCTURES:
        th = np.zeros(n_theta(dims[k]))
        if k in which:
            th[masks[k]] = scale * rng.standard_normal(int(masks[k].sum()))
        thetas[k] = th
    return CopulaHierarchy.from_thetas(layout, thetas)


def _independent_full_P(h: CopulaHierarchy) -> np.ndarray:
    """Assemble the joint LKJ factor pair by pair with explicit ownership rules."""
    lay = h.layout
    d = lay.dim
    raw = np.eye(d)
    sl, ll, sc, lc = (h[k].theta for k in STRUCTURES)
    m_l = lay.n_landmarks * lay.d_l

    def tri(n, i, j):  # position of (i, j), i > j, in row-major strict-lower order
        return i * (i - 1) // 2 + j

    for i in range(d):
        for j in range(i):
            i_state, j_state = i < lay.d_s, j < lay.d_s
            if i_state and j_state:
                raw[i, j] = sc[tri(lay.d_s, i, j)]
            elif j_state:
                raw[i, j] = sl[tri(d, i, j)]
            else:
                li, lj = i - lay.d_s, j - lay.d_s
                if li // lay.d_l != lj // lay.d_l:
                    raw[i, j] = ll[tri(m_l, li, lj)]
                else:
                    raw[i, j] = lc[tri(lay.d_l, li % lay.d_l, lj % lay.d_l)]
    L = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return L @ L.T


class TestHierarchy:
    def test_all_zero_is_zero(self):
        lay = Layout(2, 3, 2)
        h = CopulaHierarchy(lay)
        u = make_rng(0).random((10, lay.dim))
        np.testing.assert_array_equal(hierarchy_logdensity(u[:, :2], u[:, 2:], h), 0.0)
        np.testing.assert_array_equal(assemble_full_cholesky(h), np.eye(lay.dim))

    def test_no_landmarks_reduces_to_state_copula(self):
        lay = Layout(3, 0)
        h = _random_hierarchy(lay, make_rng(1))
        u = make_rng(2).random((10, 3))
        np.testing.assert_allclose(hierarchy_logdensity(u, np.zeros((10, 0)), h),
                                   gauss_copula_logdensity(u, h["state_components"]), atol=1e-12)

    def test_single_state_landmark_structure_is_flat_copula(self):
        lay = Layout(1, 1, 1)
        h = CopulaHierarchy.from_thetas(lay, {"state_landmark": np.array([0.7])})
        u = make_rng(3).random((25, 2))
        np.testing.assert_allclose(hierarchy_logdensity(u[:, :1], u[:, 1:], h),
                                   gauss_copula_logdensity(u, lkj_build([0.7], 2)), atol=1e-12)

    @pytest.mark.parametrize("name", STRUCTURES)
    def test_single_structure_block_embedding(self, name):
        lay = Layout(2, 2, 2)
        if name == "landmark_landmark":
            h = _random_hierarchy(lay, make_rng(4), which=(name,))
            P = h.full.P
            sub = P[2:, 2:]
            np.testing.assert_allclose(sub, h[name].P, atol=1e-12)
            np.testing.assert_allclose(P[:2, :], np.eye(6)[:2], atol=1e-15)
        elif name == "state_components":
            h = _random_hierarchy(lay, make_rng(4), which=(name,))
            P = h.full.P
            np.testing.assert_allclose(P[:2, :2], h[name].P, atol=1e-12)
            np.testing.assert_allclose(P[2:, :], np.eye(6)[2:], atol=1e-15)
        elif name == "landmark_components":
            h = _random_hierarchy(lay, make_rng(4), which=(name,))
            P = h.full.P
            for j in range(2):
                s = lay.landmark_slice(j)
                np.testing.assert_allclose(P[s, s], h[name].P, atol=1e-12)
            np.testing.assert_allclose(P[2:4, 4:6], 0.0, atol=1e-15)
        else:
            h = _random_hierarchy(lay, make_rng(4), which=(name,))
            np.testing.assert_allclose(h.full.P, h[name].P, atol=1e-12)

    def test_full_matches_independent_assembly(self):
        lay = Layout(2, 2, 1)
        rng = make_rng(6)
        h = _random_hierarchy(lay, rng)
        P_ref = _independent_full_P(h)
        np.testing.assert_allclose(h.full.P, P_ref, atol=1e-12)
        u = rng.uniform(0.01, 0.99, (100, lay.dim))
        ref = CorrelationStructure(lay.dim)  # placeholder replaced below
        L_ref = np.linalg.cholesky(P_ref)
        z = sps.norm.ppf(u)
        w = np.linalg.solve(L_ref, z.T).T
        ref = -0.5 * np.sum(w * w - z * z, axis=1) - np.sum(np.log(np.diag(L_ref)))
        np.testing.assert_allclose(hierarchy_logdensity(u[:, :2], u[:, 2:], h), ref, atol=1e-9)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([(1, 2, 1), (2, 2, 1), (2, 1, 2), (1, 3, 2)]))
    def test_block_disjoint_sum_of_parts(self, seed, shape):
        # state components and landmark components touch disjoint coordinate
        # blocks, so their joint log-density is the sum of the parts
        lay = Layout(*shape)
        rng = make_rng(seed)
        h = _random_hierarchy(lay, rng, which=("state_components", "landmark_components"))
        u = rng.uniform(0.01, 0.99, (5, lay.dim))
        parts = gauss_copula_logdensity(u[:, : lay.d_s], h["state_components"]) if lay.d_s > 1 else 0.0
        if lay.d_l > 1:
            for j in range(lay.n_landmarks):
                parts = parts + gauss_copula_logdensity(u[:, lay.landmark_slice(j)], h["landmark_components"])
        np.testing.assert_allclose(hierarchy_logdensity(u[:, : lay.d_s], u[:, lay.d_s :], h), parts, atol=1e-10)

    def test_landmark_component_copula_is_shared(self):
        lay = Layout(1, 3, 2)
        h = CopulaHierarchy.from_thetas(lay, {"landmark_components": np.array([1.3])})
        P = h.full.P
        vals = [P[s.start + 1, s.start] for s in map(lay.landmark_slice, range(3))]
        assert vals[0] == vals[1] == vals[2] == pytest.approx(1.3 / math.sqrt(1 + 1.3**2))

    def test_dimension_mismatch(self):
        h = CopulaHierarchy(Layout(2, 2, 1))
        with pytest.raises(DomainError):
            hierarchy_logdensity(np.full(3, 0.5), np.full(2, 0.5), h)
        with pytest.raises(DomainError):
            CopulaHierarchy(Layout(2, 2, 1), {"state_components": CorrelationStructure(3)})

    def test_theta_outside_free_block_rejected(self):
        lay = Layout(1, 2, 1)
        bad = np.zeros(n_theta(3))
        bad[2] = 0.5  # (2, 1) is a landmark-landmark pair
        with pytest.raises(DomainError):
            CopulaHierarchy.from_thetas(lay, {"state_landmark": bad})

    def test_scatter_grad_roundtrip(self):
        lay = Layout(2, 2, 2)
        h = _random_hierarchy(lay, make_rng(9))
        g = np.arange(n_theta(lay.dim), dtype=float)
        parts = h.scatter_grad(g)
        assert sum(np.sum(v) for v in parts.values()) == pytest.approx(g.sum())
