import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcsmac.cscodec import (
    ReconstructionConfig, SamplingPlan, WaveletBasis, analyze, mse, observe, reconstruct, sparse_field,
    synthesize, vec,
)

from oracles import haar_matrix


@pytest.mark.parametrize("n", [1, 2, 8, 32])
def test_haar_matches_recursive_oracle(n):
    np.testing.assert_allclose(WaveletBasis(n).matrix, haar_matrix(n).T, atol=1e-12)


@pytest.mark.parametrize("kind", ["haar", "dct", "identity"])
def test_basis_orthonormal(kind):
    psi = WaveletBasis(16, kind).matrix
    np.testing.assert_allclose(psi.T @ psi, np.eye(16), atol=1e-12)


def test_basis_validation():
    with pytest.raises(ValueError):
        WaveletBasis(12)
    with pytest.raises(ValueError):
        WaveletBasis(8, "db4")


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_analyze_synthesize_roundtrip(seed):
    z = np.random.default_rng(seed).standard_normal((8, 16))
    bs, bt = WaveletBasis(8), WaveletBasis(16, "dct")
    a = analyze(z, bs, bt)
    np.testing.assert_allclose(a, bs.matrix.T @ z @ bt.matrix, atol=1e-10)
    np.testing.assert_allclose(synthesize(a, bs, bt), z, atol=1e-10)


def test_kronecker_identity_row_stacking():
    rng = np.random.default_rng(0)
    plan = SamplingPlan.random_dense(8, 4, 3, 2, seed=1)
    z = rng.standard_normal((8, 4))
    ps, pt = plan.matrices()
    np.testing.assert_allclose(vec(observe(z, plan)), np.kron(ps, pt) @ vec(z), atol=1e-12)


def test_subset_plan():
    plan = SamplingPlan.random_subset(16, 8, 5, 3, seed=2)
    assert plan.m_s == 5 and plan.m_t == 3 and plan.n_measurements == 15
    z = np.arange(128.0).reshape(16, 8)
    y = observe(z, plan)
    np.testing.assert_array_equal(y, z[np.ix_(plan.rows, plan.cols)])
    ps, pt = plan.matrices()
    np.testing.assert_array_equal(ps @ z @ pt.T, y)
    assert plan.to_dict()["rows"] == list(plan.rows)


def test_plan_validation():
    with pytest.raises(ValueError):
        SamplingPlan(4, 4, rows=(1, 1), cols=(0,))
    with pytest.raises(ValueError):
        SamplingPlan(4, 4, rows=(5,), cols=(0,))
    with pytest.raises(ValueError):
        SamplingPlan.random_subset(4, 4, 5, 1)
    with pytest.raises(ValueError):
        SamplingPlan(4, 4, mode="dense")
    with pytest.raises(ValueError):
        SamplingPlan(4, 4, mode="mask", mask=np.ones((3, 4), bool))
    with pytest.raises(ValueError):
        SamplingPlan(4, 4, mode="fourier")


def test_mask_plan():
    mask = np.zeros((4, 8), bool)
    mask[0, [1, 5]] = mask[2, 3] = True
    plan = SamplingPlan.from_mask(mask)
    assert plan.n_measurements == 3 and plan.m_s == 2 and plan.m_t == 3
    assert plan.obs_shape == (3,)
    z = np.arange(32.0).reshape(4, 8)
    np.testing.assert_array_equal(observe(z, plan), [1, 5, 19])
    assert plan.to_dict()["entries"] == [[0, 1], [0, 5], [2, 3]]
    with pytest.raises(ValueError):
        plan.matrices()


def test_observe_shape_checks():
    plan = SamplingPlan.random_subset(8, 8, 2, 2)
    with pytest.raises(ValueError):
        observe(np.zeros((4, 8)), plan)
    with pytest.raises(ValueError):
        reconstruct(np.zeros((3, 2)), plan, WaveletBasis(8), WaveletBasis(8))


def test_sparse_field_has_k_coefficients():
    bs, bt = WaveletBasis(16), WaveletBasis(16)
    z = sparse_field(16, 16, 5, seed=3)
    assert np.sum(np.abs(analyze(z, bs, bt)) > 1e-10) == 5
    a = analyze(sparse_field(16, 16, 4, seed=3, coarse=(4, 4)), bs, bt)
    assert np.all(np.abs(a[4:, :]) < 1e-10) and np.all(np.abs(a[:, 4:]) < 1e-10)


@pytest.mark.parametrize("solver", ["bpdn", "omp"])
def test_full_sampling_is_exact(solver):
    z = np.random.default_rng(1).standard_normal((8, 8))
    plan = SamplingPlan.random_subset(8, 8, 8, 8)
    res = reconstruct(observe(z, plan), plan, WaveletBasis(8), WaveletBasis(8), ReconstructionConfig(solver=solver))
    assert mse(z, res.z_hat) < 1e-12 and res.converged


@pytest.mark.parametrize("solver", ["bpdn", "omp"])
def test_sparse_recovery_subset_dct(solver):
    bs, bt = WaveletBasis(32, "dct"), WaveletBasis(32, "dct")
    z = sparse_field(32, 32, 8, seed=4, basis_s=bs, basis_t=bt)
    plan = SamplingPlan.random_subset(32, 32, 16, 16, seed=5)
    res = reconstruct(observe(z, plan), plan, bs, bt, ReconstructionConfig(solver=solver))
    assert mse(z, res.z_hat) <= 1e-6


def test_sparse_recovery_haar_dense():
    bs, bt = WaveletBasis(16), WaveletBasis(16)
    z = sparse_field(16, 16, 4, seed=2)
    plan = SamplingPlan.random_dense(16, 16, 10, 10, seed=3)
    res = reconstruct(observe(z, plan), plan, bs, bt)
    assert mse(z, res.z_hat) <= 1e-6


def test_mask_reconstruction_recovers_smooth_field():
    bs, bt = WaveletBasis(16, "dct"), WaveletBasis(16, "dct")
    z = sparse_field(16, 16, 3, seed=7, basis_s=bs, basis_t=bt, coarse=(4, 4))
    mask = np.random.default_rng(8).random((16, 16)) < 0.5
    plan = SamplingPlan.from_mask(mask)
    res = reconstruct(observe(z, plan), plan, bs, bt)
    assert mse(z, res.z_hat) <= 1e-6


def test_epsilon_bounds_residual():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((16, 16))
    plan = SamplingPlan.random_subset(16, 16, 8, 8, seed=1)
    y = observe(z, plan)
    eps = 0.1 * np.linalg.norm(y)
    res = reconstruct(y, plan, WaveletBasis(16), WaveletBasis(16), ReconstructionConfig(epsilon=eps))
    assert res.residual_norm <= eps * (1 + 1e-6) + 1e-8


def test_empty_observation():
    plan = SamplingPlan.random_subset(8, 8, 0, 0)
    res = reconstruct(np.zeros((0, 0)), plan, WaveletBasis(8), WaveletBasis(8))
    assert not res.z_hat.any()


def test_mse_definition():
    z = np.ones((2, 2))
    assert mse(z, np.zeros((2, 2))) == 1.0
    assert mse(z, z) == 0.0
    with pytest.raises(ValueError):
        mse(np.zeros((2, 2)), z)


def test_config_validation():
    with pytest.raises(ValueError):
        ReconstructionConfig(epsilon=-1)
    with pytest.raises(ValueError):
        ReconstructionConfig(solver="lasso")
    with pytest.raises(ValueError):
        ReconstructionConfig(max_iterations=0)
