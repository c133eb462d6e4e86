import numpy as np
import pytest

from dimgap import linalg


def test_exact_qr_columns_orthonormal():
    imm = linalg.sample_orthonormal_immersion(3, 10, mode="exact-qr", seed=7)
    gram = imm.M.T @ imm.M
    assert np.max(np.abs(gram - np.eye(3))) <= 1e-10


def test_exact_qr_one_dimensional_is_sign():
    imm = linalg.sample_orthonormal_immersion(1, 1, mode="exact-qr", seed=0)
    assert imm.M.shape == (1, 1)
    assert abs(abs(imm.M[0, 0]) - 1.0) <= 1e-15


def test_gaussian_raw_near_orthonormal_at_large_D():
    imm = linalg.sample_orthonormal_immersion(5, 2000, mode="gaussian-raw", seed=1)
    gram = imm.M.T @ imm.M
    offdiag = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(offdiag)) < 0.1
    assert np.allclose(np.diag(gram), 1.0, atol=0.2)


def test_gaussian_raw_column_scale():
    # Columns are i.i.d. N(0, I_D / D), so each has expected squared norm 1.
    imm = linalg.sample_orthonormal_immersion(40, 1000, mode="gaussian-raw", seed=3)
    norms2 = np.sum(imm.M * imm.M, axis=0)
    assert abs(np.mean(norms2) - 1.0) < 0.05


def test_immersion_replay_is_bit_identical():
    a = linalg.sample_orthonormal_immersion(4, 64, mode="exact-qr", seed=123)
    b = linalg.sample_orthonormal_immersion(4, 64, mode="exact-qr", seed=123)
    assert np.array_equal(a.M, b.M)
    c = linalg.sample_orthonormal_immersion(4, 64, mode="gaussian-raw", seed=123)
    d = linalg.sample_orthonormal_immersion(4, 64, mode="gaussian-raw", seed=123)
    assert np.array_equal(c.M, d.M)


def test_embed_isometry_exact_qr():
    rng = np.random.default_rng(5)
    imm = linalg.sample_orthonormal_immersion(6, 300, mode="exact-qr", seed=11)
    U = rng.standard_normal((20, 6))
    V = rng.standard_normal((20, 6))
    EU = imm.embed(U)
    EV = imm.embed(V)
    for u, v, eu, ev in zip(U, V, EU, EV):
        lhs = float(eu @ ev)
        rhs = float(u @ v)
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, np.linalg.norm(u) * np.linalg.norm(v))


def test_projector_partition_of_identity():
    imm = linalg.sample_orthonormal_immersion(4, 40, mode="exact-qr", seed=2)
    proj = linalg.build_projectors(imm)
    eye = np.eye(40)
    assert np.max(np.abs(proj.Po + proj.P - eye)) <= 1e-10
    assert np.max(np.abs(proj.Po @ proj.Po - proj.Po)) <= 1e-8
    assert np.max(np.abs(proj.P @ proj.P - proj.P)) <= 1e-8
    assert np.max(np.abs(proj.P - proj.P.T)) <= 1e-12
    assert np.max(np.abs(proj.Po - proj.Po.T)) <= 1e-12
    assert abs(np.trace(proj.Po) - 4.0) <= 1e-6


def test_projector_rank_by_eigenvalue_count():
    imm = linalg.sample_orthonormal_immersion(4, 12, mode="exact-qr", seed=9)
    proj = linalg.build_projectors(imm)
    eigs = np.linalg.eigvalsh(proj.Po)
    assert int(np.sum(eigs >= 0.5)) == 4


def test_projector_complementarity_on_vectors():
    imm = linalg.sample_orthonormal_immersion(8, 200, mode="gaussian-raw", seed=4)
    proj = linalg.build_projectors(imm)
    rng = np.random.default_rng(0)
    for _ in range(5):
        z = rng.standard_normal(200)
        zo = proj.apply_po(z)
        zp = proj.apply_p(z)
        assert np.linalg.norm(zo + zp - z) <= 1e-9 * max(1.0, np.linalg.norm(z))
        assert abs(zo @ zp) <= 1e-8 * (z @ z)


def test_projector_po_fixes_immersion_range():
    imm = linalg.sample_orthonormal_immersion(3, 50, mode="exact-qr", seed=6)
    proj = linalg.build_projectors(imm)
    assert np.max(np.abs(proj.apply_po(imm.M.T).T - imm.M)) <= 1e-9


def test_axis_aligned_projectors_diagonal():
    proj = linalg.axis_aligned_projectors(3, 8)
    expect = np.zeros((8, 8))
    expect[:3, :3] = np.eye(3)
    assert np.array_equal(proj.Po, expect)
    assert np.array_equal(proj.P, np.eye(8) - expect)


def test_factored_projector_matches_dense():
    # Above the dense cutoff the projectors apply via M without materializing
    # a D-by-D matrix; both paths must agree on vectors.
    imm = linalg.sample_orthonormal_immersion(3, 30, mode="exact-qr", seed=13)
    dense = linalg.build_projectors(imm)
    factored = linalg.build_projectors(imm, force_factored=True)
    assert factored.Po is None and factored.P is None
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((6, 30))
    assert np.max(np.abs(factored.apply_po(Z) - dense.apply_po(Z))) <= 1e-10
    assert np.max(np.abs(factored.apply_p(Z) - dense.apply_p(Z))) <= 1e-10


def test_projector_apply_subspace_dispatch():
    imm = linalg.sample_orthonormal_immersion(2, 10, mode="exact-qr", seed=8)
    proj = linalg.build_projectors(imm)
    z = np.arange(10.0)
    assert np.array_equal(proj.apply(z, "full"), z)
    assert np.allclose(proj.apply(z, "on-manifold"), proj.apply_po(z))
    assert np.allclose(proj.apply(z, "off-manifold"), proj.apply_p(z))
    with pytest.raises(ValueError):
        proj.apply(z, "sideways")


def test_semi_inner_identity_is_euclidean():
    a = np.array([1.0, -2.0, 0.5])
    assert abs(linalg.semi_inner(a, a, np.eye(3)) - float(a @ a)) <= 1e-12


def test_semi_inner_projection_example():
    A = np.zeros((2, 2))
    A[0, 0] = 1.0
    a = np.array([1.0, 2.0])
    b = np.array([3.0, 4.0])
    assert abs(linalg.semi_inner(a, b, A) - 3.0) <= 1e-12


def test_semi_inner_matches_projected_euclidean():
    imm = linalg.sample_orthonormal_immersion(4, 25, mode="exact-qr", seed=17)
    proj = linalg.build_projectors(imm)
    rng = np.random.default_rng(2)
    a = rng.standard_normal(25)
    b = rng.standard_normal(25)
    want = float(proj.apply_p(a) @ b)
    assert abs(linalg.semi_inner(a, b, proj.P) - want) <= 1e-10


def test_immersion_mode_validation():
    with pytest.raises(ValueError):
        linalg.sample_orthonormal_immersion(3, 10, mode="cayley", seed=0)
    with pytest.raises(ValueError):
        linalg.sample_orthonormal_immersion(11, 10, mode="exact-qr", seed=0)
