import numpy as np
import pytest

from dimgap import attacks
from dimgap.attacks import (
    AttackSpec,
    build_theory_directions,
    mean_on_manifold_proportion,
    minimal_strength_threshold,
    on_manifold_proportion,
    pgd_attack,
    theory_attack,
)
from dimgap.datagen import AmbientSpec, build_manifold, sample_cluster_means, synthesize
from dimgap.linalg import axis_aligned_projectors
from dimgap.network import NetParams, TrainConfig, forward, init_params, train_gd


@pytest.fixture(scope="module")
def trained():
    cluster = sample_cluster_means(2, 5)
    ambient = AmbientSpec.create(30, 5, tau_mode="explicit", tau=0.4)
    manifold = build_manifold(cluster, ambient, seed=2)
    train = synthesize(cluster, ambient, 80, seed=3, manifold=manifold)
    evalset = synthesize(cluster, ambient, 60, seed=4, manifold=manifold)
    params = init_params(64, 30, seed=5)
    cfg = TrainConfig(loss_kind="exponential", lr=0.05, epochs=400)
    params, trace = train_gd(params, train.observed, train.labels, cfg)
    assert trace.accuracy[-1] == 1.0
    return manifold, evalset, params, manifold.projectors()


def passthrough_net(D=4, bias=10.0):
    """N(x) = 2 x_0 for |x_0| <= bias (two mirrored always-active neurons)."""
    W = np.zeros((2, D))
    W[0, 0] = 1.0
    W[1, 0] = -1.0
    return NetParams(W=W, b=np.array([bias, bias]), v=np.array([1.0, -1.0]))


def test_attack_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec(norm="l1")
    with pytest.raises(ValueError):
        AttackSpec(subspace="tangent")
    with pytest.raises(ValueError):
        AttackSpec(epsilon=-1.0)
    with pytest.raises(ValueError):
        AttackSpec(steps=0)
    spec = AttackSpec(norm="l2", epsilon=2.0, steps=20)
    assert spec.resolved_step() == 2.5 * 2.0 / 20
    assert AttackSpec(step_size=0.5, epsilon=1.0).resolved_step() == 0.5
    assert spec.with_epsilon(3.0).epsilon == 3.0


@pytest.mark.parametrize("norm", ["l2", "linf"])
@pytest.mark.parametrize("subspace", ["full", "on-manifold", "off-manifold"])
def test_pgd_respects_budget_and_subspace(trained, norm, subspace):
    manifold, evalset, params, proj = trained
    eps = 1.5 if norm == "l2" else 0.3
    spec = AttackSpec(norm=norm, epsilon=eps, subspace=subspace)
    out = pgd_attack(params, evalset.observed, evalset.labels, spec, proj)
    if norm == "l2":
        assert np.all(out.l2_norms <= eps * (1 + 1e-9))
    else:
        assert np.all(out.linf_norms <= eps * (1 + 1e-9))
    nz = out.l2_norms > 0
    if subspace == "on-manifold":
        leak = np.linalg.norm(proj.apply_p(out.perturbations[nz]), axis=1)
        assert np.all(leak <= 1e-8 * out.l2_norms[nz])
    elif subspace == "off-manifold":
        leak = np.linalg.norm(proj.apply_po(out.perturbations[nz]), axis=1)
        assert np.all(leak <= 1e-8 * out.l2_norms[nz])


def test_pgd_zero_epsilon_is_clean(trained):
    _, evalset, params, proj = trained
    spec = AttackSpec(norm="l2", epsilon=0.0)
    out = pgd_attack(params, evalset.observed, evalset.labels, spec, proj)
    assert np.array_equal(out.perturbations, np.zeros_like(evalset.observed))
    clean = float(np.mean(evalset.labels * forward(params, evalset.observed) > 0))
    assert out.robust_accuracy == clean


def test_pgd_success_and_accuracy_are_consistent(trained):
    _, evalset, params, proj = trained
    spec = AttackSpec(norm="l2", epsilon=3.0)
    out = pgd_attack(params, evalset.observed, evalset.labels, spec, proj)
    post = evalset.labels * forward(params, evalset.observed + out.perturbations)
    assert np.array_equal(out.success, post <= 0)
    assert out.robust_accuracy == pytest.approx(1.0 - np.mean(out.success))


def test_pgd_subspace_requires_projectors(trained):
    _, evalset, params, _ = trained
    spec = AttackSpec(norm="l2", epsilon=1.0, subspace="off-manifold")
    with pytest.raises(ValueError):
        pgd_attack(params, evalset.observed, evalset.labels, spec, None)


def test_full_attack_at_least_as_strong_as_constrained(trained):
    _, evalset, params, proj = trained
    for norm, eps in (("l2", 2.0), ("linf", 0.4)):
        accs = {}
        for sub in ("full", "on-manifold", "off-manifold"):
            spec = AttackSpec(norm=norm, epsilon=eps, subspace=sub)
            accs[sub] = pgd_attack(params, evalset.observed, evalset.labels,
                                   spec, proj).robust_accuracy
        assert accs["full"] <= min(accs["on-manifold"], accs["off-manifold"]) + 0.05


def test_pgd_beats_random_perturbation(trained):
    _, evalset, params, proj = trained
    eps = 2.0
    spec = AttackSpec(norm="l2", epsilon=eps)
    pgd_acc = pgd_attack(params, evalset.observed, evalset.labels, spec, proj).robust_accuracy
    rng = np.random.default_rng(0)
    worst_random = 1.0
    for _ in range(5):
        z = rng.standard_normal(evalset.observed.shape)
        z *= eps / np.linalg.norm(z, axis=1, keepdims=True)
        acc = float(np.mean(evalset.labels * forward(params, evalset.observed + z) > 0))
        worst_random = min(worst_random, acc)
    assert pgd_acc <= worst_random


def test_robust_accuracy_curve_non_increasing(trained):
    _, evalset, params, proj = trained
    spec = AttackSpec(norm="l2", epsilon=0.0)
    eps_grid = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
    accs = [pgd_attack(params, evalset.observed, evalset.labels,
                       spec.with_epsilon(e), proj).robust_accuracy for e in eps_grid]
    for a, b in zip(accs, accs[1:]):
        assert b <= a + 0.05


def test_threshold_search_bracket(trained):
    _, evalset, params, proj = trained
    spec = AttackSpec(norm="l2", epsilon=0.0)
    res = minimal_strength_threshold(params, evalset.observed, evalset.labels,
                                     spec, proj, target=0.10)
    assert not res.saturated
    evaluated = dict(res.curve)
    assert evaluated[res.epsilon_star] <= 0.10
    # every budget tested below the reported threshold failed to break the net
    below = [ra for eps, ra in res.curve if eps < res.epsilon_star]
    assert all(ra > 0.10 for ra in below)
    assert res.epsilon_star == min(eps for eps, ra in res.curve if ra <= 0.10)


def test_threshold_search_explicit_grid(trained):
    _, evalset, params, proj = trained
    spec = AttackSpec(norm="l2", epsilon=0.0)
    auto = minimal_strength_threshold(params, evalset.observed, evalset.labels,
                                      spec, proj, target=0.10)
    lo = auto.epsilon_star
    grid = [lo / 8, lo / 2, lo * 1.5, lo * 4]
    res = minimal_strength_threshold(params, evalset.observed, evalset.labels,
                                     spec, proj, target=0.10, grid=grid)
    assert not res.saturated
    assert res.epsilon_star == lo * 1.5
    # early exit: nothing past the first breaking budget is evaluated
    assert [eps for eps, _ in res.curve] == [lo / 8, lo / 2, lo * 1.5]
    with pytest.raises(ValueError):
        minimal_strength_threshold(params, evalset.observed, evalset.labels,
                                   spec, proj, grid=[1.0, 1.0])


def test_threshold_search_saturation(trained):
    _, evalset, params, proj = trained
    # a constant-output network is unattackable: input gradient is zero
    const = NetParams(W=np.zeros((1, 30)), b=np.array([1.0]), v=np.array([1.0]))
    spec = AttackSpec(norm="l2", epsilon=0.0)
    y = np.ones(evalset.n)
    res = minimal_strength_threshold(const, evalset.observed, y, spec, proj,
                                     target=0.10, grid=(1e-3, 10.0))
    assert res.saturated
    assert np.isnan(res.epsilon_star)
    grid_res = minimal_strength_threshold(const, evalset.observed, y, spec, proj,
                                          target=0.10, grid=[0.5, 1.0])
    assert grid_res.saturated and np.isnan(grid_res.epsilon_star)


def test_theory_directions_live_in_their_subspaces(trained):
    manifold, _, _, proj = trained
    dirs = build_theory_directions(manifold, proj)
    up, upar = dirs.u_perp, dirs.u_par
    assert np.linalg.norm(proj.apply_po(up)) <= 1e-8 * np.linalg.norm(up)
    assert np.linalg.norm(proj.apply_p(upar)) <= 1e-8 * np.linalg.norm(upar)
    assert dirs.c == 0.5


def test_theory_attack_exact_linear_case():
    # N(x) = 2 x_0; a +1 example at x_0 = 5 crosses y N <= -1 exactly at
    # eta = 5.5 when attacked along e_0.
    params = passthrough_net()
    X = np.array([[5.0, 0.0, 0.0, 0.0]])
    y = np.array([1.0])
    u = np.array([1.0, 0.0, 0.0, 0.0])
    res = theory_attack(params, X, y, u, eta="auto")
    assert res.found[0]
    assert abs(res.eta[0] - 5.5) <= 0.02 * 5.5
    assert res.raw_flip[0]
    assert res.perturbation_norms[0] == pytest.approx(res.eta[0])
    fixed_hit = theory_attack(params, X, y, u, eta=10.0)
    assert fixed_hit.found[0] and fixed_hit.raw_flip[0]
    fixed_miss = theory_attack(params, X, y, u, eta=4.0)
    assert not fixed_miss.found[0] and not fixed_miss.raw_flip[0]


def test_theory_attack_norm_scale_shifts_criterion():
    # with norm_scale = 2 the criterion is y N <= -1/2: crossing at eta = 5.25
    params = passthrough_net()
    X = np.array([[5.0, 0.0, 0.0, 0.0]])
    y = np.array([1.0])
    u = np.array([1.0, 0.0, 0.0, 0.0])
    res = theory_attack(params, X, y, u, eta="auto", norm_scale=2.0)
    assert res.found[0]
    assert abs(res.eta[0] - 5.25) <= 0.02 * 5.25


def test_theory_attack_orthogonal_direction_caps():
    params = passthrough_net()
    X = np.array([[5.0, 0.0, 0.0, 0.0], [2.0, 1.0, 0.0, 0.0]])
    y = np.array([1.0, 1.0])
    u = np.array([0.0, 1.0, 0.0, 0.0])  # N never changes along e_1 (x_1 >= 0 side)
    res = theory_attack(params, X, y, u, eta="auto", eta_max=100.0)
    assert not res.found.any()
    assert res.capped.all()
    with pytest.raises(ValueError):
        theory_attack(params, X, y, np.zeros(4))


def test_theory_attack_respects_labels():
    # a -1 example is pushed along +eta*u: x_0 = -5 + eta, N = 2(-5 + eta),
    # and y N <= -1 crosses at eta = 5.5, mirroring the +1 case.
    params = passthrough_net()
    X = np.array([[-5.0, 0.0, 0.0, 0.0]])
    y = np.array([-1.0])
    u = np.array([1.0, 0.0, 0.0, 0.0])
    res = theory_attack(params, X, y, u, eta="auto")
    assert res.found[0]
    assert abs(res.eta[0] - 5.5) <= 0.02 * 5.5


def test_on_manifold_proportion_axis_example():
    proj = axis_aligned_projectors(1, 2)
    assert on_manifold_proportion(np.array([3.0, 4.0]), proj) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        on_manifold_proportion(np.zeros(2), proj)
    Z = np.array([[3.0, 4.0], [0.0, 2.0], [5.0, 0.0]])
    mean_all = mean_on_manifold_proportion(Z, proj)
    assert mean_all == pytest.approx((0.6 + 0.0 + 1.0) / 3)
    masked = mean_on_manifold_proportion(Z, proj, mask=np.array([True, False, True]))
    assert masked == pytest.approx((0.6 + 1.0) / 2)
    zero_rows = mean_on_manifold_proportion(np.zeros((2, 2)), proj)
    assert np.isnan(zero_rows)
