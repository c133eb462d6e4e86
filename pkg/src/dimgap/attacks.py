"""Projected PGD attacks, minimal-strength threshold search, theory attacks.

Attacks maximize the classification loss within an l2 or l-inf ball, with
the perturbation optionally constrained to the on-manifold subspace
(range of Po) or the off-manifold subspace (range of P). The direction used
each step is the input-gradient of the loss; for the exponential and
logistic losses that gradient is a positive per-example scalar times
-y * grad N(x), so the scalar is dropped before normalization (identical
iterates, immune to exp underflow at large budgets).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .network import forward

NORMS = ("l2", "linf")
SUBSPACES = ("full", "on-manifold", "off-manifold")


@dataclass(frozen=True)
class AttackSpec:
    norm: str = "l2"
    epsilon: float = 0.0
    steps: int = 20
    step_size: float = None
    subspace: str = "full"
    loss_kind: str = "exponential"

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError("unknown norm %r" % (self.norm,))
        if self.subspace not in SUBSPACES:
            raise ValueError("unknown subspace %r" % (self.subspace,))
        if self.epsilon < 0:
            raise ValueError("need epsilon >= 0")
        if self.steps < 1:
            raise ValueError("need steps >= 1")

    def resolved_step(self):
        return self.step_size if self.step_size is not None else 2.5 * self.epsilon / self.steps

    def with_epsilon(self, epsilon):
        return AttackSpec(norm=self.norm, epsilon=float(epsilon), steps=self.steps,
                          step_size=self.step_size, subspace=self.subspace,
                          loss_kind=self.loss_kind)


@dataclass
class AttackOutcome:
    perturbations: np.ndarray  # (n, D)
    success: np.ndarray  # (n,) bool, sign flipped vs true label
    l2_norms: np.ndarray
    linf_norms: np.ndarray
    robust_accuracy: float


def _input_gradient_direction(params, X, y):
    """-y_i * grad_x N(x_i): the loss-ascent direction up to a positive scalar."""
    pre = X @ params.W.T + params.b
    act = pre > 0
    grad = np.where(act, params.v[None, :], 0.0) @ params.W  # (n, D)
    return -y[:, None] * grad


def _project_ball(z, norm, eps):
    if norm == "linf":
        return np.clip(z, -eps, eps)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    scale = np.where(norms > eps, eps / np.where(norms > 0, norms, 1.0), 1.0)
    return z * scale


def _enforce_constraints(z, spec, projectors):
    """Leave z inside both the norm ball and the subspace.

    One subspace projection after ball clamping suffices for l2 (projection
    shrinks norms); for l-inf a few alternating rounds are used, with a
    radial rescale fallback (scaling preserves the subspace).
    """
    eps = spec.epsilon
    if spec.subspace == "full":
        return _project_ball(z, spec.norm, eps)
    if spec.norm == "l2":
        return projectors.apply(_project_ball(z, "l2", eps), spec.subspace)
    for _ in range(10):
        z = projectors.apply(np.clip(z, -eps, eps), spec.subspace)
        if z.size == 0 or np.abs(z).max() <= eps + 1e-12:
            return z
    sup = np.abs(z).max(axis=1, keepdims=True)
    scale = np.where(sup > eps, eps / np.where(sup > 0, sup, 1.0), 1.0)
    return z * scale


def pgd_attack(params, X, y, spec, projectors=None):
    """Projected gradient ascent from z = 0; returns the attack outcome.

    Each step takes the input-gradient direction, restricted to the
    configured subspace, normalized per example (sign for l-inf, unit l2
    for l2), then projects back into the ball and subspace. A zero gradient
    leaves that example's perturbation unchanged.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.subspace != "full" and projectors is None:
        raise ValueError("subspace %r requires projectors" % (spec.subspace,))
    n = X.shape[0]
    z = np.zeros_like(X)
    step = spec.resolved_step()
    if spec.epsilon > 0 and step > 0:
        for _ in range(spec.steps):
            dirn = _input_gradient_direction(params, X + z, y)
            if projectors is not None and spec.subspace != "full":
                dirn = projectors.apply(dirn, spec.subspace)
            if spec.norm == "linf":
                move = np.sign(dirn)
            else:
                norms = np.linalg.norm(dirn, axis=1, keepdims=True)
                move = dirn / np.where(norms > 0, norms, 1.0)
            z = _enforce_constraints(z + step * move, spec, projectors)
    out = forward(params, X + z)
    success = y * out <= 0
    return AttackOutcome(perturbations=z, success=success,
                         l2_norms=np.linalg.norm(z, axis=1),
                         linf_norms=np.abs(z).max(axis=1) if n else np.zeros(0),
                         robust_accuracy=float(np.mean(y * out > 0)))


def robust_accuracy(params, X, y, spec, projectors=None):
    if len(X) == 0:
        raise ValueError("undefined-input: empty batch")
    return pgd_attack(params, X, y, spec, projectors).robust_accuracy


@dataclass
class ThresholdResult:
    """Smallest tested epsilon with robust accuracy <= target."""

    epsilon_star: float
    saturated: bool
    curve: list = field(default_factory=list)  # [(epsilon, robust_accuracy)]
    trace: list = field(default_factory=list)  # evaluation order notes


def minimal_strength_threshold(params, X, y, spec, projectors=None, target=0.10,
                               grid=None, refine_rel=0.05):
    """Find the smallest attack budget driving robust accuracy to <= target.

    `grid` is either an explicit increasing epsilon list (evaluated with
    early exit) or a (lo, hi) bracket request: a doubling scan locates the
    first breaking budget, a factor-1.25 geometric grid tightens it, and
    bisection refines the bracket to relative width <= refine_rel. Returns
    saturated=True (epsilon_star = nan) when the target is not reached.
    """
    if len(X) == 0:
        raise ValueError("undefined-input: empty batch")
    curve, trace = [], []

    def evaluate(eps):
        ra = robust_accuracy(params, X, y, spec.with_epsilon(eps), projectors)
        curve.append((float(eps), float(ra)))
        return ra

    if grid is None:
        grid = (1e-3, 1e4)
    if isinstance(grid, (list, np.ndarray)):
        eps_list = [float(e) for e in grid]
        if any(b <= a for a, b in zip(eps_list, eps_list[1:])):
            raise ValueError("grid must be strictly increasing")
        for eps in eps_list:
            trace.append("grid %.17g" % eps)
            if evaluate(eps) <= target:
                return ThresholdResult(epsilon_star=eps, saturated=False,
                                       curve=curve, trace=trace)
        return ThresholdResult(epsilon_star=float("nan"), saturated=True,
                               curve=curve, trace=trace)

    lo, hi = float(grid[0]), float(grid[1])
    # Doubling scan for the first budget at or below target.
    eps, last_fail = lo, None
    while True:
        trace.append("scan %.17g" % eps)
        if evaluate(eps) <= target:
            break
        last_fail = eps
        eps *= 2.0
        if eps > hi:
            trace.append("saturated at %.17g" % hi)
            if curve[-1][0] < hi:
                trace.append("scan %.17g" % hi)
                if evaluate(hi) <= target:
                    eps = hi
                    break
            if curve[-1][1] > target:
                return ThresholdResult(epsilon_star=float("nan"), saturated=True,
                                       curve=curve, trace=trace)
            eps = hi
            break
    good = eps
    if last_fail is None:
        # Already breaking at lo; lo is the answer at this resolution.
        return ThresholdResult(epsilon_star=good, saturated=False, curve=curve,
                               trace=trace)
    # Geometric tightening (factor 1.25) inside (last_fail, good).
    cand = last_fail * 1.25
    while cand < good * 0.999:
        trace.append("geom %.17g" % cand)
        if evaluate(cand) <= target:
            good = cand
            break
        last_fail = cand
        cand *= 1.25
    # Bisection to relative width <= refine_rel.
    while (good - last_fail) > refine_rel * good:
        mid = 0.5 * (good + last_fail)
        trace.append("bisect %.17g" % mid)
        if evaluate(mid) <= target:
            good = mid
        else:
            last_fail = mid
    return ThresholdResult(epsilon_star=good, saturated=False, curve=curve,
                           trace=trace)


@dataclass
class TheoryDirections:
    """Attack directions u_perp (off-manifold) and u_par (on-manifold)."""

    u_perp: np.ndarray
    u_par: np.ndarray
    c: float
    eta1_perp: float
    eta2_perp: float
    eta1_par: float
    eta2_par: float
    eta_perp_defined: bool
    eta_par_defined: bool


def build_theory_directions(manifold, projectors, constants=None):
    """u_par = sum_q y_q (M mu_q + Po zeta_q); u_perp = sum_q y_q P zeta_q.

    c = min(|Q+|, |Q-|) / k. The eta constants are copied from a constants
    report (computed on the manifold's parameters when not supplied).
    """
    cl, amb = manifold.cluster, manifold.ambient
    y = cl.labels
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("no-opposing-cluster: need both label signs")
    if constants is None:
        from .theory import compute_constants

        mu = cl.means
        gram = mu @ mu.T
        p = float(np.abs(gram - np.diag(np.diag(gram))).max())
        n_pos = int(np.sum(y > 0))
        constants = compute_constants(cl.d, amb.D, amb.tau, cl.k, p=p,
                                      c_balance=min(n_pos, cl.k - n_pos) / cl.k)
    mu_tilde = cl.means @ manifold.immersion.M.T  # (k, D)
    po_zeta = projectors.apply_po(manifold.zetas)
    u_par = (y[:, None] * (mu_tilde + po_zeta)).sum(axis=0)
    u_perp = (y[:, None] * (manifold.zetas - po_zeta)).sum(axis=0)
    n_pos = int(np.sum(y > 0))
    c = min(n_pos, cl.k - n_pos) / cl.k
    return TheoryDirections(u_perp=u_perp, u_par=u_par, c=c,
                            eta1_perp=constants.eta1_perp, eta2_perp=constants.eta2_perp,
                            eta1_par=constants.eta1_par, eta2_par=constants.eta2_par,
                            eta_perp_defined=constants.eta_perp_defined,
                            eta_par_defined=constants.eta_par_defined)


@dataclass
class TheoryAttackResult:
    """Per-example outcome of the closed-direction attack x -> x - y eta u."""

    eta: np.ndarray  # (n,) applied step sizes
    found: np.ndarray  # (n,) bool: flip criterion met at eta
    raw_flip: np.ndarray  # (n,) bool: sign(N) flipped at eta
    perturbation_norms: np.ndarray  # (n,) ||eta * u||
    eta_theory: float
    capped: np.ndarray  # (n,) bool: search hit eta_max without flipping


def theory_attack(params, X, y, u, eta="auto", eta_theory=None, norm_scale=1.0,
                  eta_max=None, rel_width=0.01):
    """Apply x - y * eta * u; auto mode searches the minimal flipping eta.

    The flip criterion is norm_scale * y * N(x - y eta u) <= -1, where
    norm_scale rescales the net's output so the training margin is 1
    (pass 1/min-margin; the raw sign flip is also reported). Auto-eta
    doubles from a unit-perturbation guess (or the closed-form eta when
    defined) until the criterion holds, then bisects to 1% relative width.
    Examples never flipping below eta_max get capped=True.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    n = X.shape[0]
    u_norm = float(np.linalg.norm(u))
    if u_norm == 0:
        raise ValueError("undefined-input: zero direction vector")

    def crossed(etas):
        out = forward(params, X - (y * etas)[:, None] * u[None, :])
        return norm_scale * y * out <= -1.0

    if eta != "auto":
        etas = np.full(n, float(eta))
        hit = crossed(etas)
        out = forward(params, X - (y * etas)[:, None] * u[None, :])
        return TheoryAttackResult(eta=etas, found=hit, raw_flip=y * out <= 0,
                                  perturbation_norms=etas * u_norm,
                                  eta_theory=eta_theory if eta_theory is not None else float("nan"),
                                  capped=np.zeros(n, dtype=bool))

    if eta_theory is not None and math.isfinite(eta_theory) and eta_theory > 0:
        eta0 = eta_theory
        cap = 1e6 * eta_theory if eta_max is None else eta_max
    else:
        eta0 = 1.0 / u_norm
        cap = 1e6 * eta0 if eta_max is None else eta_max

    hi = np.full(n, eta0)
    hit = crossed(hi)
    capped = np.zeros(n, dtype=bool)
    # Doubling phase: grow per-example hi until the criterion holds.
    while not np.all(hit | capped):
        grow = ~hit & ~capped
        hi[grow] *= 2.0
        over = grow & (hi > cap)
        hi[over] = cap
        capped[over] = True
        newly = crossed(hi)
        hit = hit | newly
        capped = capped & ~hit
    lo = np.where(hit, hi / 2.0, hi)
    lo[hit & (hi == eta0)] = 0.0
    # Bisection to 1% relative width on flipped examples.
    active = hit.copy()
    while True:
        width = hi - lo
        todo = active & (width > rel_width * hi)
        if not np.any(todo):
            break
        mid = 0.5 * (lo + hi)
        ok = crossed(np.where(todo, mid, hi))
        hi = np.where(todo & ok, mid, hi)
        lo = np.where(todo & ~ok, mid, lo)
    etas = hi
    out = forward(params, X - (y * etas)[:, None] * u[None, :])
    return TheoryAttackResult(eta=etas, found=hit, raw_flip=y * out <= 0,
                              perturbation_norms=etas * u_norm,
                              eta_theory=float("nan") if eta_theory is None else eta_theory,
                              capped=capped)


def on_manifold_proportion(z, projectors):
    """||Po z|| / ||z|| for one perturbation vector."""
    z = np.asarray(z, dtype=float)
    nz = float(np.linalg.norm(z))
    if nz == 0:
        raise ValueError("undefined-input: zero perturbation")
    return float(np.linalg.norm(projectors.apply_po(z))) / nz


def mean_on_manifold_proportion(Z, projectors, mask=None):
    """Mean of per-row on-manifold proportions over mask (zero rows skipped)."""
    Z = np.asarray(Z, dtype=float)
    if mask is None:
        mask = np.ones(Z.shape[0], dtype=bool)
    norms = np.linalg.norm(Z, axis=1)
    use = mask & (norms > 0)
    if not np.any(use):
        return float("nan")
    po = np.linalg.norm(projectors.apply_po(Z[use]), axis=1)
    return float(np.mean(po / norms[use]))
