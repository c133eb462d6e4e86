import math

import numpy as np
import pytest

from dimgap import datagen
from dimgap.datagen import (
    AmbientSpec,
    NiceExampleError,
    build_manifold,
    nice_xi_bound,
    sample_cluster_means,
    sample_nice_batch,
    sample_nice_example,
    synthesize,
)


def small_dataset(d=6, D=40, k=3, n=60, tau=0.3, seed=0, **kw):
    cluster = sample_cluster_means(k, d, mean_mode=kw.pop("mean_mode", "orthogonal-sqrt-d"),
                                   seed=seed)
    ambient = AmbientSpec.create(D, d, tau_mode="explicit", tau=tau, **kw)
    return synthesize(cluster, ambient, n, seed=seed)


def test_orthogonal_means_exact():
    cl = sample_cluster_means(3, 7, mean_mode="orthogonal-sqrt-d")
    gram = cl.means @ cl.means.T
    assert np.max(np.abs(gram - 7.0 * np.eye(3))) <= 1e-12
    assert np.array_equal(cl.labels, [1.0, -1.0, 1.0])


def test_orthogonal_means_need_k_at_most_d():
    with pytest.raises(ValueError):
        sample_cluster_means(5, 4, mean_mode="orthogonal-sqrt-d")


def test_gaussian_means_shape_and_determinism():
    a = sample_cluster_means(4, 10, mean_mode="gaussian", seed=3)
    b = sample_cluster_means(4, 10, mean_mode="gaussian", seed=3)
    assert a.means.shape == (4, 10)
    assert np.array_equal(a.means, b.means)


def test_cluster_labels_must_cover_both_signs():
    with pytest.raises(ValueError):
        sample_cluster_means(2, 5, labels=[1.0, 1.0])


def test_tau_modes():
    assert AmbientSpec.create(400, 100, tau_mode="d-over-D").tau == 0.5
    assert AmbientSpec.create(400, 100, tau_mode="one-over-D").tau == 0.05
    assert AmbientSpec.create(400, 100, tau_mode="explicit", tau=1.5).tau == 1.5
    with pytest.raises(ValueError):
        AmbientSpec.create(400, 100, tau_mode="explicit")
    with pytest.raises(ValueError):
        AmbientSpec.create(50, 100, tau_mode="one-over-D")
    with pytest.raises(ValueError):
        AmbientSpec.create(400, 100, tau_mode="explicit", tau=-0.1)


def test_observed_matches_generative_model():
    ds = small_dataset()
    M = ds.manifold.immersion.M
    rebuilt = ds.x @ M.T + ds.manifold.zetas[ds.cluster_ids] + ds.omega
    assert np.max(np.abs(ds.observed - rebuilt)) <= 1e-10
    assert np.max(np.abs(ds.x - (ds.manifold.cluster.means[ds.cluster_ids] + ds.xi))) <= 1e-12


def test_labels_follow_cluster_assignment():
    ds = small_dataset(n=200)
    assert np.array_equal(ds.labels, ds.manifold.cluster.labels[ds.cluster_ids])
    assert set(np.unique(ds.labels)) <= {-1.0, 1.0}


def test_noiseless_embedding_is_isometric():
    ds = small_dataset(d=5, D=64, k=2, n=30, tau=0.0, omega_scale=0.0)
    for i in range(0, 30, 7):
        for j in range(1, 30, 5):
            lhs = np.linalg.norm(ds.observed[i] - ds.observed[j])
            rhs = np.linalg.norm(ds.x[i] - ds.x[j])
            assert abs(lhs - rhs) <= 1e-8 * max(1.0, rhs)


def test_synthesize_is_deterministic_per_seed():
    a = small_dataset(seed=11)
    b = small_dataset(seed=11)
    c = small_dataset(seed=12)
    assert np.array_equal(a.observed, b.observed)
    assert np.array_equal(a.cluster_ids, b.cluster_ids)
    assert not np.array_equal(a.observed, c.observed)


def test_shared_manifold_fresh_samples():
    cluster = sample_cluster_means(2, 4)
    ambient = AmbientSpec.create(20, 4, tau_mode="explicit", tau=0.5)
    manifold = build_manifold(cluster, ambient, seed=5)
    train = synthesize(cluster, ambient, 50, seed=1, manifold=manifold)
    test = synthesize(cluster, ambient, 50, seed=2, manifold=manifold)
    assert train.manifold is manifold and test.manifold is manifold
    assert not np.array_equal(train.observed, test.observed)


def test_synthesize_rejects_negative_n():
    cluster = sample_cluster_means(2, 4)
    ambient = AmbientSpec.create(20, 4, tau_mode="explicit", tau=0.1)
    with pytest.raises(ValueError):
        synthesize(cluster, ambient, -1)
    empty = synthesize(cluster, ambient, 0)
    assert empty.n == 0


def test_nice_batch_respects_bounds():
    cluster = sample_cluster_means(2, 9)
    ambient = AmbientSpec.create(120, 9, tau_mode="explicit", tau=0.4)
    manifold = build_manifold(cluster, ambient, seed=3)
    ds = sample_nice_batch(manifold, 64, seed=9)
    assert np.all(np.linalg.norm(ds.xi, axis=1) <= nice_xi_bound(9))
    assert np.all(np.linalg.norm(ds.omega, axis=1) <= datagen.NICE_OMEGA_BOUND)
    assert np.array_equal(ds.labels, cluster.labels[ds.cluster_ids])


def test_nice_batch_with_explicit_clusters():
    cluster = sample_cluster_means(3, 8)
    ambient = AmbientSpec.create(50, 8, tau_mode="explicit", tau=0.2)
    manifold = build_manifold(cluster, ambient, seed=0)
    ds = sample_nice_batch(manifold, 4, seed=1, cluster_ids=[2, 0, 2, 1])
    assert np.array_equal(ds.cluster_ids, [2, 0, 2, 1])
    with pytest.raises(ValueError):
        sample_nice_batch(manifold, 2, seed=1, cluster_ids=[0, 3])


def test_nice_example_single():
    cluster = sample_cluster_means(2, 8)
    ambient = AmbientSpec.create(50, 8, tau_mode="explicit", tau=0.2)
    manifold = build_manifold(cluster, ambient, seed=0)
    obs, label = sample_nice_example(manifold, 1, seed=4)
    assert obs.shape == (50,)
    assert label == cluster.labels[1]


def test_nice_rejection_infeasible_raises():
    cluster = sample_cluster_means(2, 3)
    ambient = AmbientSpec.create(30, 3, tau_mode="explicit", tau=0.1, xi_scale=1e6)
    manifold = build_manifold(cluster, ambient, seed=0)
    with pytest.raises(NiceExampleError):
        sample_nice_batch(manifold, 5, seed=0)


def test_nice_zero_noise_scales_give_zero_vectors():
    cluster = sample_cluster_means(2, 6)
    ambient = AmbientSpec.create(30, 6, tau_mode="explicit", tau=0.3,
                                 xi_scale=0.0, omega_scale=0.0)
    manifold = build_manifold(cluster, ambient, seed=0)
    ds = sample_nice_batch(manifold, 5, seed=0)
    assert np.array_equal(ds.xi, np.zeros((5, 6)))
    assert np.array_equal(ds.omega, np.zeros((5, 30)))


def test_audit_healthy_regime():
    cluster = sample_cluster_means(2, 50)
    ambient = AmbientSpec.create(2000, 50, tau_mode="explicit", tau=0.1,
                                 omega_scale=0.5)
    ds = synthesize(cluster, ambient, 200, seed=1)
    audit = datagen.audit_assumptions(ds, pairs=150, seed=0)
    assert audit.a1_holds
    assert audit.p == 0.0
    assert audit.a3_holds
    assert audit.max_xi_norm <= nice_xi_bound(50)
    assert audit.max_omega_norm <= 1.0
    assert audit.a4_holds == (audit.constants.c3 > 0 and audit.constants.c5 > 0)
    counts = audit.pair_check_counts
    assert counts["same_pairs"] + counts["cross_pairs"] == 150
    assert counts["same_intrinsic"] == 0
    assert counts["cross_intrinsic"] == 0
    assert counts["same_observed"] == 0
    assert counts["cross_observed"] == 0


def test_audit_cross_cluster_gap_p():
    # p is the largest off-diagonal |<mu_r, mu_s>|; for means (e1*2, e1+e2)
    # scaled it is the mixed inner product.
    means = np.array([[2.0, 0.0], [1.0, 1.0]])
    cluster = datagen.ClusterSpec(k=2, d=2, means=means,
                                  labels=np.array([1.0, -1.0]),
                                  mean_mode="gaussian")
    ambient = AmbientSpec.create(10, 2, tau_mode="explicit", tau=0.05)
    ds = synthesize(cluster, ambient, 40, seed=2)
    audit = datagen.audit_assumptions(ds, pairs=20, seed=0)
    assert abs(audit.p - 2.0) <= 1e-12
    assert not audit.a1_holds  # norms are 2 and sqrt(2), not sqrt(d)


def test_dataset_roundtrip(tmp_path):
    ds = small_dataset(d=4, D=12, k=2, n=25, tau=0.2, seed=7)
    outdir = str(tmp_path / "ds")
    datagen.write_dataset(ds, outdir, seed=7)
    back = datagen.read_dataset(outdir)
    assert np.array_equal(back.observed, ds.observed)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.cluster_ids, ds.cluster_ids)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.xi, ds.xi)
    assert np.array_equal(back.omega, ds.omega)
    assert np.array_equal(back.manifold.immersion.M, ds.manifold.immersion.M)
    assert np.array_equal(back.manifold.zetas, ds.manifold.zetas)
    assert back.manifold.ambient.tau == ds.manifold.ambient.tau
