import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netcal.kernels import (
    CoregWeights,
    KernelParams,
    ParameterError,
    SpaceTimePoint,
    coreg_matrix,
    combined_covariance,
    eq_kernel,
    expand_coreg,
)

XYT = KernelParams(1.3, (0.7, 1.9, 2.5))


def brute_eq(P, Q, params):
    K = np.empty((len(P), len(Q)))
    for i, p in enumerate(P):
        for j, q in enumerate(Q):
            s = sum(((p[d] - q[d]) / params.lengthscales[d]) ** 2 for d in range(len(p)))
            K[i, j] = params.variance * np.exp(-0.5 * s)
    return K


class TestParams:
    @pytest.mark.parametrize("var, ls", [(0.0, (1.0,)), (-1.0, (1.0,)), (1.0, (0.0,)), (1.0, (1.0, -2.0))])
    def test_rejects_nonpositive(self, var, ls):
        with pytest.raises(ParameterError):
            KernelParams(var, ls)

    def test_point_must_be_finite(self):
        with pytest.raises(ValueError):
            SpaceTimePoint(0.0, np.inf, 1.0)

    def test_coreg_reference_pinned(self):
        with pytest.raises(ValueError):
            CoregWeights([2.0, 3.0])
        with pytest.raises(ValueError):
            CoregWeights([1.0, np.nan])
        assert CoregWeights([3.0, 1.0], reference=1).a[1] == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eq_kernel(np.zeros((2, 3)), np.zeros((2, 3)), KernelParams(1.0, (1.0, 1.0)))


class TestEqKernel:
    def test_zero_distance_gives_variance(self):
        p = [SpaceTimePoint(0.3, -2.0, 7.0)]
        np.testing.assert_array_equal(eq_kernel(p, p, KernelParams(2.0, (1.0, 1.0, 1.0))), [[2.0]])

    def test_one_lengthscale_apart(self):
        K = eq_kernel(np.array([0.0]), np.array([1.7]), KernelParams(1.0, (1.7,)))
        np.testing.assert_allclose(K, [[np.exp(-0.5)]], rtol=1e-14)
        assert abs(K[0, 0] - 0.6065) < 1e-4

    def test_matches_brute_force(self, rng):
        P, Q = rng.normal(size=(6, 3)) * 3, rng.normal(size=(4, 3)) * 3
        np.testing.assert_allclose(eq_kernel(P, Q, XYT), brute_eq(P, Q, XYT), rtol=1e-12, atol=1e-15)

    def test_large_input_path_matches_brute_force(self, rng):
        P = rng.uniform(0, 5, size=(300, 3))
        K = eq_kernel(P, P, XYT)
        idx = rng.integers(0, 300, size=(40, 2))
        ref = brute_eq(P[idx[:, 0]], P[idx[:, 1]], XYT)
        np.testing.assert_allclose(K[idx[:, 0], idx[:, 1]], np.diag(ref), rtol=1e-9, atol=1e-12)
        np.testing.assert_array_equal(K, K.T)

    def test_random_gram_is_psd(self, rng):
        for _ in range(20):
            P = rng.normal(size=(5, 3))
            K = eq_kernel(P, P, KernelParams(rng.uniform(0.1, 3), tuple(rng.uniform(0.2, 3, 3))))
            assert np.linalg.eigvalsh(K).min() >= -1e-10

    @settings(max_examples=40, deadline=None)
    @given(
        seed=st.integers(0, 2**31),
        c=st.floats(0.01, 100.0),
        n=st.integers(1, 8),
    )
    def test_joint_rescaling_invariance(self, seed, c, n):
        r = np.random.default_rng(seed)
        P = r.normal(size=(n, 3))
        params = KernelParams(1.0, tuple(r.uniform(0.3, 3, 3)))
        scaled = KernelParams(1.0, tuple(c * np.array(params.lengthscales)))
        np.testing.assert_allclose(eq_kernel(c * P, c * P, scaled), eq_kernel(P, P, params), rtol=1e-10, atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(1, 10))
    def test_symmetric_psd_property(self, seed, n):
        r = np.random.default_rng(seed)
        P = r.normal(size=(n, 3)) * r.uniform(0.1, 5)
        K = eq_kernel(P, P, KernelParams(r.uniform(0.1, 5), tuple(r.uniform(0.1, 5, 3))))
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-10 * K.max()


class TestCoreg:
    def test_outer_product_examples(self):
        np.testing.assert_array_equal(coreg_matrix(CoregWeights([1.0, 3.0])), [[1, 3], [3, 9]])
        np.testing.assert_array_equal(coreg_matrix(CoregWeights([1.0])), [[1.0]])
        assert coreg_matrix(CoregWeights([1.0, 2.0, 0.5]))[1, 2] == 1.0

    def test_rank_one_and_reference_diag(self, rng):
        a = np.concatenate([[1.0], rng.normal(size=4)])
        B = coreg_matrix(CoregWeights(a))
        assert B[0, 0] == 1.0
        assert np.linalg.matrix_rank(B) <= 1

    def test_colocated_pairs(self):
        p = [SpaceTimePoint(1, 1, 0), SpaceTimePoint(1, 1, 0)]
        params = KernelParams(1.0, (1.0, 1.0, 1.0))
        K = combined_covariance(p, [0, 0], KernelParams(2.5, (1.0, 1.0, 1.0)), CoregWeights([1.0, 3.0]))
        assert K[0, 1] == 2.5
        K = combined_covariance(p, [0, 1], params, CoregWeights([1.0, 3.0]))
        assert K[0, 1] == 3.0

    def test_out_of_range_sensor(self):
        with pytest.raises(IndexError):
            combined_covariance(np.zeros((2, 3)), [0, 2], XYT, CoregWeights([1.0, 3.0]))

    def test_hadamard_matches_scalar_loop(self, rng):
        # mobile sensor 2 sits near sensor 1 early, then near the reference (0)
        pts, sens = [], []
        for t in range(6):
            pts += [(0.0, 0.0, t), (5.0, 0.0, t), (5.0 if t < 3 else 0.1, 0.0, t)]
            sens += [0, 1, 2]
        a = np.array([1.0, 0.6, 2.0])
        K = combined_covariance(np.array(pts), sens, XYT, CoregWeights(a))
        for i in range(len(pts)):
            for j in range(len(pts)):
                kij = brute_eq([pts[i]], [pts[j]], XYT)[0, 0] * a[sens[i]] * a[sens[j]]
                assert K[i, j] == pytest.approx(kij, rel=1e-12, abs=1e-15)
        # mobile-to-sensor-1 cross block is large early and small late
        early = K[2, 1] / (a[1] * a[2] * XYT.variance)
        late = K[3 * 5 + 2, 3 * 5 + 1] / (a[1] * a[2] * XYT.variance)
        assert early > 0.99 and late < 1e-3

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(1, 12), m=st.integers(1, 4))
    def test_hadamard_property(self, seed, n, m):
        r = np.random.default_rng(seed)
        P = r.normal(size=(n, 3))
        s = r.integers(0, m, n)
        a = np.concatenate([[1.0], r.normal(size=m - 1)])
        K = combined_covariance(P, s, XYT, CoregWeights(a))
        np.testing.assert_allclose(K, eq_kernel(P, P, XYT) * expand_coreg(a, s), rtol=1e-14, atol=0)
        np.testing.assert_array_equal(K, K.T)
