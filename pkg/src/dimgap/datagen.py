"""Union-of-immersed-clusters data synthesis and assumption audits.

Observed samples follow x_tilde = M x + zeta^(r) + omega with x = mu^(r) + xi:
a d-dimensional cluster signal immersed into R^D, shifted by a per-cluster
ambient offset zeta^(r) ~ N(0, tau^2 I_D) and perturbed by ambient noise
omega ~ N(0, omega_scale^2 I_D / D). "Nice" examples additionally satisfy
||xi|| <= sqrt(2) ln d and ||omega|| <= 1, enforced by rejection.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import serialize
from .linalg import (
    OrthonormalImmersion,
    build_projectors,
    rng_from_seed,
    sample_orthonormal_immersion,
)

MEAN_MODES = ("orthogonal-sqrt-d", "gaussian")
TAU_MODES = ("explicit", "one-over-D", "d-over-D")

# Stage tags for deriving independent child streams from one base seed.
_TAG_IMMERSION = 11
_TAG_ZETAS = 12
_TAG_SAMPLES = 13


class NiceExampleError(RuntimeError):
    """Rejection sampling exceeded 10x the expected number of draws."""


def nice_xi_bound(d):
    """Norm bound sqrt(2) * ln(d) that a nice example's xi must satisfy."""
    return math.sqrt(2.0) * math.log(d)


NICE_OMEGA_BOUND = 1.0


@dataclass(frozen=True)
class ClusterSpec:
    """Cluster count, intrinsic dimension, means mu^(r), and labels y^(r)."""

    k: int
    d: int
    means: np.ndarray  # (k, d)
    labels: np.ndarray  # (k,) values in {-1, +1}
    mean_mode: str

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need k >= 2 clusters, got %d" % self.k)
        if not (np.any(self.labels > 0) and np.any(self.labels < 0)):
            raise ValueError("need at least one cluster of each label sign")


@dataclass(frozen=True)
class AmbientSpec:
    """Ambient dimension and noise scales; tau resolved from tau_mode."""

    D: int
    tau: float
    xi_scale: float
    omega_scale: float
    tau_mode: str

    @staticmethod
    def create(D, d, tau_mode="explicit", tau=None, xi_scale=1.0, omega_scale=1.0):
        D, d = int(D), int(d)
        if D < d:
            raise ValueError("need D >= d, got D=%d d=%d" % (D, d))
        if tau_mode == "one-over-D":
            tau = math.sqrt(1.0 / D)
        elif tau_mode == "d-over-D":
            tau = math.sqrt(d / D)
        elif tau_mode == "explicit":
            if tau is None:
                raise ValueError("tau_mode=explicit requires tau")
        else:
            raise ValueError("unknown tau_mode %r" % (tau_mode,))
        if tau < 0:
            raise ValueError("need tau >= 0, got %g" % tau)
        return AmbientSpec(D=D, tau=float(tau), xi_scale=float(xi_scale),
                           omega_scale=float(omega_scale), tau_mode=tau_mode)


@dataclass(frozen=True)
class Manifold:
    """A realized geometry: cluster means, immersion M, and shifts zeta^(r)."""

    cluster: ClusterSpec
    ambient: AmbientSpec
    immersion: OrthonormalImmersion
    zetas: np.ndarray  # (k, D)

    def projectors(self):
        return build_projectors(self.immersion)


@dataclass(frozen=True)
class GeneratedDataset:
    """Observed samples plus the hidden truth used by oracle checks."""

    manifold: Manifold
    observed: np.ndarray  # (n, D)
    labels: np.ndarray  # (n,)
    cluster_ids: np.ndarray  # (n,)
    x: np.ndarray  # (n, d) intrinsic signals mu^(r(i)) + xi_i
    xi: np.ndarray  # (n, d)
    omega: np.ndarray  # (n, D)

    @property
    def n(self):
        return self.observed.shape[0]

    @property
    def has_truth(self):
        return self.x is not None


def sample_cluster_means(k, d, mean_mode="orthogonal-sqrt-d", seed=0, labels=None):
    """Draw cluster means; labels alternate +1/-1 unless given explicitly.

    orthogonal-sqrt-d places mu^(r) = sqrt(d) e_r on distinct axes (exact
    norms, zero pairwise inner products); gaussian draws mu^(r) ~ N(0, I_d).
    """
    k, d = int(k), int(d)
    if mean_mode not in MEAN_MODES:
        raise ValueError("unknown mean_mode %r" % (mean_mode,))
    if mean_mode == "orthogonal-sqrt-d":
        if k > d:
            raise ValueError("too-many-clusters: orthogonal mode needs k <= d, got k=%d d=%d" % (k, d))
        means = np.zeros((k, d))
        means[np.arange(k), np.arange(k)] = math.sqrt(d)
    else:
        rng = rng_from_seed(seed)
        means = rng.standard_normal((k, d))
    if labels is None:
        labels = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    labels = np.asarray(labels, dtype=float)
    return ClusterSpec(k=k, d=d, means=means, labels=labels, mean_mode=mean_mode)


def build_manifold(cluster, ambient, seed=0, immersion_mode="exact-qr"):
    """Draw the immersion and the k cluster shifts from child streams of seed."""
    imm_seed = np.random.SeedSequence([int(seed), _TAG_IMMERSION])
    zeta_seed = np.random.SeedSequence([int(seed), _TAG_ZETAS])
    immersion = sample_orthonormal_immersion(cluster.d, ambient.D, immersion_mode, imm_seed)
    rng = rng_from_seed(zeta_seed)
    zetas = ambient.tau * rng.standard_normal((cluster.k, ambient.D))
    return Manifold(cluster=cluster, ambient=ambient, immersion=immersion, zetas=zetas)


def synthesize(cluster, ambient, n, seed=0, manifold=None, immersion_mode="exact-qr"):
    """Generate n observed samples x_tilde = M(mu^(r) + xi) + zeta^(r) + omega.

    When `manifold` is given, only cluster assignments, xi, and omega are
    drawn (so train and test sets can share one geometry); otherwise the
    manifold itself is derived from child streams of `seed`.
    """
    n = int(n)
    if n < 0:
        raise ValueError("need n >= 0")
    if manifold is None:
        manifold = build_manifold(cluster, ambient, seed, immersion_mode)
    d, D, k = cluster.d, ambient.D, cluster.k
    rng = rng_from_seed(np.random.SeedSequence([int(seed), _TAG_SAMPLES]))
    ids = rng.integers(0, k, size=n)
    xi = ambient.xi_scale * rng.standard_normal((n, d)) / math.sqrt(d)
    omega = ambient.omega_scale * rng.standard_normal((n, D)) / math.sqrt(D)
    x = cluster.means[ids] + xi
    observed = x @ manifold.immersion.M.T + manifold.zetas[ids] + omega
    labels = cluster.labels[ids]
    return GeneratedDataset(manifold=manifold, observed=observed, labels=labels,
                            cluster_ids=ids, x=x, xi=xi, omega=omega)


# Absolute ceiling on rejection draws; below want / _REJECTION_ABS_CAP the
# acceptance probability makes the request infeasible and we fail fast.
_REJECTION_ABS_CAP = 10_000_000


def _rejection_cap(p_accept, want):
    """Draw budget: 10x the expected number of draws for `want` accepts."""
    if p_accept <= 0:
        return 10 * want
    return max(10, int(math.ceil(10.0 * want / p_accept)))


def _nice_acceptance_probs(d, D, xi_scale, omega_scale):
    xi_b, om_b = nice_xi_bound(d), NICE_OMEGA_BOUND
    p_xi = 1.0 if xi_scale == 0 else float(stats.chi2.cdf(d * (xi_b / xi_scale) ** 2, d))
    p_om = 1.0 if omega_scale == 0 else float(stats.chi2.cdf(D * (om_b / omega_scale) ** 2, D))
    return p_xi, p_om


def _rejection_draw(rng, shape, scale, bound, p_accept, want, what):
    """Draw `want` rows of N(0, scale^2 I/dim) with norms <= bound."""
    dim = shape[0]
    if scale == 0:
        return np.zeros((want, dim))
    if want > 0 and p_accept * _REJECTION_ABS_CAP < want:
        raise NiceExampleError(
            "rejection for %s is infeasible: acceptance probability %.3g "
            "needs ~%.3g draws for %d accepts"
            % (what, p_accept, want / max(p_accept, 1e-300), want))
    cap = _rejection_cap(p_accept, want)
    out, drawn = [], 0
    while len(out) < want:
        batch = max(want - len(out), 16)
        if drawn + batch > cap:
            batch = cap - drawn
            if batch <= 0:
                rate = len(out) / max(drawn, 1)
                raise NiceExampleError(
                    "rejection for %s exceeded 10x expected draws: "
                    "%d accepted of %d drawn (acceptance rate %.3g, expected %.3g)"
                    % (what, len(out), drawn, rate, p_accept))
        cand = scale * rng.standard_normal((batch, dim)) / math.sqrt(dim)
        drawn += batch
        ok = np.linalg.norm(cand, axis=1) <= bound
        out.extend(cand[ok])
    return np.asarray(out[:want])


def sample_nice_example(manifold, r, seed=0):
    """Draw one nice example from cluster r: bounded xi and omega by rejection."""
    ds = sample_nice_batch(manifold, 1, seed=seed, cluster_ids=[int(r)])
    return ds.observed[0], float(ds.labels[0])


def sample_nice_batch(manifold, n, seed=0, cluster_ids=None):
    """Draw n nice examples; clusters uniform unless cluster_ids is given."""
    cl, amb = manifold.cluster, manifold.ambient
    d, D = cl.d, amb.D
    rng = rng_from_seed(np.random.SeedSequence([int(seed), _TAG_SAMPLES]))
    if cluster_ids is None:
        ids = rng.integers(0, cl.k, size=n)
    else:
        ids = np.asarray(cluster_ids, dtype=int)
        if ids.shape != (n,) and not (n == len(ids)):
            raise ValueError("cluster_ids length must equal n")
        if np.any(ids < 0) or np.any(ids >= cl.k):
            raise ValueError("cluster id out of range [0, %d)" % cl.k)
    p_xi, p_om = _nice_acceptance_probs(d, D, amb.xi_scale, amb.omega_scale)
    xi = _rejection_draw(rng, (d,), amb.xi_scale, nice_xi_bound(d), p_xi, n, "xi")
    omega = _rejection_draw(rng, (D,), amb.omega_scale, NICE_OMEGA_BOUND, p_om, n, "omega")
    x = cl.means[ids] + xi
    observed = x @ manifold.immersion.M.T + manifold.zetas[ids] + omega
    return GeneratedDataset(manifold=manifold, observed=observed, labels=cl.labels[ids],
                            cluster_ids=ids, x=x, xi=xi, omega=omega)


@dataclass(frozen=True)
class AssumptionAudit:
    """Booleans for assumptions (A1)-(A4) plus the quantities behind them.

    a2 is evaluated twice: with the probabilistic shift-norm bound zeta-bar
    from the constants definition, and with the realized max ||zeta + omega||
    over the dataset (both reported; `a2_holds` is the probabilistic one).
    """

    a1_holds: bool
    a2_holds: bool
    a3_holds: bool
    a4_holds: bool
    p: float
    c_prime: float
    max_xi_norm: float
    max_omega_norm: float
    constants: object
    a2_holds_realized: bool
    c_prime_realized: float
    zeta_bar_realized: float
    pair_check_counts: dict


def audit_assumptions(ds, pairs=100, seed=0):
    """Audit (A1)-(A4) and spot-check the pairwise inner-product bounds.

    The spot check samples `pairs` random ordered sample pairs and counts
    violations of the four bounds: same-cluster |<x_i,x_j> - d| < Delta and
    |<xt_i,xt_j> - d| < Delta', cross-cluster |<x_i,x_j>| < p + Delta and
    |<xt_i,xt_j>| < p + Delta'.
    """
    from .theory import compute_constants

    if not ds.has_truth:
        raise ValueError("audit requires a dataset with truth fields")
    cl, amb = ds.manifold.cluster, ds.manifold.ambient
    d, D, k = cl.d, amb.D, cl.k
    mu = cl.means
    gram = mu @ mu.T
    off = np.abs(gram - np.diag(np.diag(gram)))
    p = float(off.max()) if k >= 2 else 0.0
    n_pos = int(np.sum(cl.labels > 0))
    c_balance = min(n_pos, k - n_pos) / k

    consts = compute_constants(d, D, amb.tau, k, p=p, c_balance=c_balance)

    sqd = math.sqrt(d)
    a1 = bool(np.all(np.abs(np.linalg.norm(mu, axis=1) - sqd) <= 1e-9 * sqd))

    def a2_pair(delta_prime):
        lhs = k * (p + delta_prime + 1.0)
        rhs = d - delta_prime + 1.0
        c_prime = lhs / rhs if rhs != 0 else math.inf
        return bool(lhs <= 0.1 * rhs), c_prime

    a2, c_prime = a2_pair(consts.Delta_prime)

    if ds.n > 0:
        shift = ds.manifold.zetas[ds.cluster_ids] + ds.omega
        zeta_bar_real = float(np.linalg.norm(shift, axis=1).max())
    else:
        zeta_bar_real = float(np.linalg.norm(ds.manifold.zetas, axis=1).max())
    consts_real = compute_constants(d, D, amb.tau, k, p=p, c_balance=c_balance,
                                    zeta_bar=zeta_bar_real)
    a2_real, c_prime_real = a2_pair(consts_real.Delta_prime)

    max_xi = float(np.linalg.norm(ds.xi, axis=1).max()) if ds.n else 0.0
    max_om = float(np.linalg.norm(ds.omega, axis=1).max()) if ds.n else 0.0
    a3 = bool(max_xi <= nice_xi_bound(d) and max_om <= NICE_OMEGA_BOUND)
    a4 = bool(consts.c3 > 0 and consts.c5 > 0)

    counts = {"same_intrinsic": 0, "same_observed": 0,
              "cross_intrinsic": 0, "cross_observed": 0,
              "same_pairs": 0, "cross_pairs": 0}
    if ds.n >= 2:
        rng = rng_from_seed(seed)
        for _ in range(pairs):
            i, j = rng.choice(ds.n, size=2, replace=False)
            xi_xj = float(ds.x[i] @ ds.x[j])
            xti_xtj = float(ds.observed[i] @ ds.observed[j])
            if ds.cluster_ids[i] == ds.cluster_ids[j]:
                counts["same_pairs"] += 1
                counts["same_intrinsic"] += abs(xi_xj - d) >= consts.Delta
                counts["same_observed"] += abs(xti_xtj - d) >= consts.Delta_prime
            else:
                counts["cross_pairs"] += 1
                counts["cross_intrinsic"] += abs(xi_xj) >= p + consts.Delta
                counts["cross_observed"] += abs(xti_xtj) >= p + consts.Delta_prime
        counts = {k_: int(v) for k_, v in counts.items()}

    return AssumptionAudit(a1_holds=a1, a2_holds=a2, a3_holds=a3, a4_holds=a4,
                           p=p, c_prime=c_prime, max_xi_norm=max_xi,
                           max_omega_norm=max_om, constants=consts,
                           a2_holds_realized=a2_real, c_prime_realized=c_prime_real,
                           zeta_bar_realized=zeta_bar_real, pair_check_counts=counts)


def write_dataset(ds, outdir, seed=None):
    """Write data.csv (observed), truth.json, and spec.toml into outdir."""
    serialize.ensure_dir(outdir)
    cl, amb = ds.manifold.cluster, ds.manifold.ambient
    D = amb.D
    header = ["y"] + ["x%d" % (i + 1) for i in range(D)]
    rows = ([ds.labels[i]] + list(ds.observed[i]) for i in range(ds.n))
    serialize.write_csv(outdir + "/data.csv", header, rows)
    truth = {
        "d": cl.d, "D": D, "k": cl.k, "tau": amb.tau,
        "xi_scale": amb.xi_scale, "omega_scale": amb.omega_scale,
        "mean_mode": cl.mean_mode, "immersion_mode": ds.manifold.immersion.mode,
        "means": serialize.matrix_to_json(cl.means),
        "labels": [float(v) for v in cl.labels],
        "M": serialize.matrix_to_json(ds.manifold.immersion.M),
        "zetas": serialize.matrix_to_json(ds.manifold.zetas),
        "cluster_ids": [int(v) for v in ds.cluster_ids],
        "x": serialize.matrix_to_json(ds.x),
        "xi": serialize.matrix_to_json(ds.xi),
        "omega": serialize.matrix_to_json(ds.omega),
    }
    serialize.write_json(outdir + "/truth.json", truth)
    spec = {
        "d": cl.d, "D": D, "k": cl.k, "n": ds.n,
        "tau": amb.tau, "tau_mode": amb.tau_mode,
        "xi_scale": amb.xi_scale, "omega_scale": amb.omega_scale,
        "mean_mode": cl.mean_mode, "immersion_mode": ds.manifold.immersion.mode,
    }
    if seed is not None:
        spec["seed"] = int(seed)
    serialize.write_toml(outdir + "/spec.toml", spec)


def read_dataset(outdir):
    """Load a dataset directory written by write_dataset."""
    truth = serialize.read_json(outdir + "/truth.json")
    means = serialize.matrix_from_json(truth["means"])
    labels = np.asarray(truth["labels"], dtype=float)
    cl = ClusterSpec(k=int(truth["k"]), d=int(truth["d"]), means=means,
                     labels=labels, mean_mode=truth["mean_mode"])
    amb = AmbientSpec(D=int(truth["D"]), tau=float(truth["tau"]),
                      xi_scale=float(truth["xi_scale"]),
                      omega_scale=float(truth["omega_scale"]), tau_mode="explicit")
    imm = OrthonormalImmersion(d=cl.d, D=amb.D,
                               M=serialize.matrix_from_json(truth["M"]),
                               mode=truth["immersion_mode"])
    manifold = Manifold(cluster=cl, ambient=amb, immersion=imm,
                        zetas=serialize.matrix_from_json(truth["zetas"]))
    ids = np.asarray(truth["cluster_ids"], dtype=int)
    x = serialize.matrix_from_json(truth["x"])
    xi = serialize.matrix_from_json(truth["xi"])
    omega = serialize.matrix_from_json(truth["omega"])
    header, rows = serialize.read_csv(outdir + "/data.csv")
    if header[:1] != ["y"] or len(header) != amb.D + 1:
        raise ValueError("unexpected data.csv header in %s" % outdir)
    table = np.asarray([[float(c) for c in row] for row in rows])
    labels_obs = table[:, 0] if len(table) else np.zeros(0)
    observed = table[:, 1:] if len(table) else np.zeros((0, amb.D))
    return GeneratedDataset(manifold=manifold, observed=observed, labels=labels_obs,
                            cluster_ids=ids, x=x, xi=xi, omega=omega)
