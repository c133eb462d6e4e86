"""Exact theoretical constants, perturbation-norm bounds, and Monte Carlo
verification of the high-probability events behind them.

Everything here is a literal formula evaluation: no asymptotics are hidden
in the reported numbers (simplified asymptotic forms are emitted alongside,
clearly labelled). Failure probabilities delta1/delta2 frequently exceed 1
at desk scale; reports carry a vacuity flag instead of suppressing them.
"""

import math
from dataclasses import dataclass

import numpy as np

from .linalg import (
    DENSE_PROJECTOR_MAX_D,
    build_projectors,
    rng_from_seed,
    sample_orthonormal_immersion,
)

OMEGA_BAR = 1.0  # the nice-example bound on ||omega||, used in eps_zeta

_TAG_MC_CHUNK = 21


@dataclass(frozen=True)
class ConstantsReport:
    """Every constant of the bound machinery, evaluated literally.

    eta values are flagged undefined (NaN) when their denominators c6 or c4
    are nonpositive, or when 1 - 3c' vanishes; that marks a regime outside
    the theory, not an error.
    """

    d: int
    D: int
    g: int
    tau: float
    k: int
    p: float
    c: float  # class balance min(|Q+|, |Q-|) / k
    c2: float
    zeta_bar: float
    Delta: float
    eps_x: float
    eps_xi: float
    eps_x_xi: float
    eps_zeta_par: float
    eps_zeta_perp: float
    Delta_prime: float
    c_prime: float
    c3: float
    c4: float
    c5: float
    c6: float
    eta1_perp: float
    eta2_perp: float
    eta1_par: float
    eta2_par: float
    eta_perp_defined: bool
    eta_par_defined: bool

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def compute_constants(d, D, tau, k, p=0.0, c_balance=None, zeta_bar=None):
    """Evaluate the constants table for a (d, D, tau, k, p) regime.

    zeta_bar defaults to the probabilistic shift-norm bound
    sqrt(1 + 2 tau sqrt(13D/8) + 13 D tau^2 / 8); pass a realized value to
    audit against observed data instead. c_balance defaults to the balanced
    labeling floor(k/2)/k.
    """
    d, D, k = int(d), int(D), int(k)
    if d < 2:
        raise ValueError("need d >= 2 (ln d must be positive)")
    if D < d:
        raise ValueError("need D >= d")
    if tau < 0:
        raise ValueError("need tau >= 0")
    if k < 2:
        raise ValueError("need k >= 2")
    g = D - d
    tau = float(tau)
    p = float(p)
    if c_balance is None:
        c_balance = (k // 2) / k
    c2 = 1.0 + math.sqrt(2.0)
    ln_d = math.log(d)
    sq_d = math.sqrt(d)
    if zeta_bar is None:
        zeta_bar = math.sqrt(1.0 + 2.0 * tau * math.sqrt(13.0 * D / 8.0)
                             + 13.0 * D * tau**2 / 8.0)
    else:
        zeta_bar = float(zeta_bar)
    Delta = 2.0 * c2 * sq_d * ln_d
    eps_x = zeta_bar**2 + 2.0 * zeta_bar * sq_d * c2
    eps_xi = zeta_bar**2 + 2.0 * zeta_bar * math.sqrt(2.0) * ln_d
    eps_x_xi = zeta_bar**2 + zeta_bar * (2.0 * math.sqrt(2.0) * ln_d + sq_d * c2)
    Delta_prime = Delta + eps_x
    eps_zeta_perp = OMEGA_BAR * math.sqrt(13.0 * g * tau**2 / 8.0)
    eps_zeta_par = (math.sqrt(2.0) * ln_d + OMEGA_BAR) * math.sqrt(13.0 * d * tau**2 / 8.0)
    ratio = (10.0 * k + 1.0) / (10.0 * k)
    c3 = g * tau**2 / (20.0 * k) - ratio * math.sqrt(13.0 * g * tau**2 / 8.0)
    # Note the two distinct log factors: c5 carries sqrt(2 ln d + 1), while
    # c4 carries sqrt(2) * ln d + 1.
    c5 = (d * tau**2 / (20.0 * k)
          - ratio * math.sqrt(13.0 * d * tau**2 / 8.0) * math.sqrt(2.0 * ln_d + 1.0))
    c4 = (d - Delta_prime
          + 0.9 * (d * tau**2 / 2.0
                   - math.sqrt(13.0 * d * tau**2 / 8.0) * (math.sqrt(2.0) * ln_d + 1.0))
          - k * (p + Delta_prime))
    c6 = 0.9 * (g * tau**2 / 2.0 - math.sqrt(13.0 * g * tau**2 / 8.0))
    denom_prime = d - Delta_prime + 1.0
    c_prime = k * (p + Delta_prime + 1.0) / denom_prime if denom_prime != 0 else math.inf

    one_minus_3cp = 1.0 - 3.0 * c_prime
    nan = float("nan")
    eta_perp_defined = c6 > 0 and one_minus_3cp != 0 and c_balance > 0
    eta_par_defined = c4 > 0 and one_minus_3cp != 0 and c_balance > 0
    if eta_perp_defined:
        eta1_perp = (2.0 * Delta_prime + p + 1.0) / c6
        eta2_perp = (3.0 * (3.0 * d + Delta_prime + 1.0) * (1.0 - 2.0 * c_prime)
                     / (c6 * one_minus_3cp * c_balance * k))
    else:
        eta1_perp = eta2_perp = nan
    if eta_par_defined:
        eta1_par = (10.0 / 9.0) * (2.0 * Delta_prime + p + 1.0) / c4
        eta2_par = ((10.0 / 9.0) * 3.0 * (3.0 * d + Delta_prime + 1.0)
                    * (1.0 - 2.0 * c_prime) / (c4 * one_minus_3cp * c_balance * k))
    else:
        eta1_par = eta2_par = nan

    return ConstantsReport(d=d, D=D, g=g, tau=tau, k=k, p=p, c=float(c_balance),
                           c2=c2, zeta_bar=zeta_bar, Delta=Delta, eps_x=eps_x,
                           eps_xi=eps_xi, eps_x_xi=eps_x_xi,
                           eps_zeta_par=eps_zeta_par, eps_zeta_perp=eps_zeta_perp,
                           Delta_prime=Delta_prime, c_prime=c_prime,
                           c3=c3, c4=c4, c5=c5, c6=c6,
                           eta1_perp=eta1_perp, eta2_perp=eta2_perp,
                           eta1_par=eta1_par, eta2_par=eta2_par,
                           eta_perp_defined=bool(eta_perp_defined),
                           eta_par_defined=bool(eta_par_defined))


@dataclass(frozen=True)
class SandwichCheck:
    """Two-sided rate bounds on c6 and c4.

    The c6 sandwich is valid whenever c3 > 0; the c4 sandwich additionally
    needs c5 > 0, the cluster-separation bound k(p + Delta' + 1) <=
    (1/10)(d - Delta' + 1), and Delta' <= d/21, so each side carries its own
    applicability flag.
    """

    c6_lower: float
    c6_upper: float
    c6_holds: bool
    c6_applicable: bool
    c4_lower: float
    c4_upper: float
    c4_holds: bool
    c4_applicable: bool

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def check_sandwiches(consts):
    g, d, tau = consts.g, consts.d, consts.tau
    c6_lo = (18.0 / 21.0) * g * tau**2 / 2.0
    c6_hi = 0.9 * g * tau**2 / 2.0
    c4_lo = (18.0 / 21.0) * d * (1.0 + tau**2 / 2.0)
    c4_hi = d * (1.0 + 9.0 * tau**2 / 20.0)
    a2 = (consts.k * (consts.p + consts.Delta_prime + 1.0)
          <= 0.1 * (d - consts.Delta_prime + 1.0))
    return SandwichCheck(
        c6_lower=c6_lo, c6_upper=c6_hi,
        c6_holds=bool(c6_lo <= consts.c6 <= c6_hi),
        c6_applicable=bool(consts.c3 > 0),
        c4_lower=c4_lo, c4_upper=c4_hi,
        c4_holds=bool(c4_lo <= consts.c4 <= c4_hi),
        c4_applicable=bool(consts.c5 > 0 and a2 and consts.Delta_prime <= d / 21.0))


@dataclass(frozen=True)
class BoundPrediction:
    """Predicted perturbation norms and failure probabilities.

    delta values above 1 make the corresponding guarantee vacuous; the
    flags say so explicitly and success probabilities are clamped to
    [0, 1] separately so nothing is silently suppressed. When c4 <= 0 the
    cluster-alignment event inside the on-manifold guarantee is
    unsatisfiable and delta2 is flagged vacuous regardless of its value.
    """

    z_perp_l2: float
    z_perp_linf: float
    z_par_l2: float
    z_par_linf: float
    delta1: float
    delta2: float
    delta1_vacuous: bool
    delta2_vacuous: bool
    success_prob_perp: float
    success_prob_par: float
    v_event_applicable: bool
    assumptions_hold: bool
    eta_perp: float
    eta_par: float
    asymptotic_z_perp_l2: float
    asymptotic_z_perp_linf: float
    asymptotic_z_par_l2: float
    asymptotic_z_par_linf: float

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def predict_bounds(consts):
    """Evaluate the exact perturbation-norm bounds and delta1/delta2."""
    d, g, D = consts.d, consts.g, consts.D
    tau, k, c = consts.tau, consts.k, consts.c
    nan = float("nan")
    if consts.eta_perp_defined:
        eta_perp = consts.eta1_perp + consts.eta2_perp
        z_perp_l2 = eta_perp * math.sqrt(k * 13.0 * g * tau**2 / 8.0 + k * g * tau**2 / 20.0)
        z_perp_linf = eta_perp * 3.0 * k * tau * math.sqrt(2.0 * math.log(2.0 * g))
    else:
        eta_perp = z_perp_l2 = z_perp_linf = nan
    if consts.eta_par_defined:
        eta_par = consts.eta1_par + consts.eta2_par
        z_par_l2 = eta_par * math.sqrt(k * d * (6.0 / 5.0 + 69.0 * tau**2 / 40.0) + k / 10.0)
        z_par_linf = eta_par * (k * math.sqrt(d) + 3.0 * k * tau * math.sqrt(2.0 * math.log(2.0 * d)))
    else:
        eta_par = z_par_l2 = z_par_linf = nan

    def e(x):
        # exp without overflow: exponents here can be large and positive
        # when constants are negative (vacuous regimes).
        return math.exp(min(x, 700.0))

    delta1 = (4.0 * k * (k - 1.0) * e(-consts.c3 / (math.sqrt(4.0 * g) * tau**2))
              + 2.0 * k * e(-g / 16.0) + 2.0 * k * e(-D / 16.0)
              + k * (2.0 * g) ** -4.0) if tau > 0 and g > 0 else float("inf")
    delta2 = (4.0 * k * (k - 1.0) * e(-consts.c5 / (math.sqrt(4.0 * d) * tau**2))
              + 2.0 * k * e(-d / 16.0) + 2.0 * k * e(-D / 16.0)
              + k * (2.0 * d) ** -4.0
              + 2.0 * k * e(-consts.c4**2 / (20.0 * tau**2 * d * k))) if tau > 0 else float("inf")
    v_applicable = consts.c4 > 0
    delta1_vac = not (delta1 < 1.0)
    delta2_vac = not (delta2 < 1.0) or not v_applicable

    kg = k * g * tau**2
    asym_perp_l2 = d / (c * math.sqrt(kg)) if kg > 0 and c > 0 else nan
    asym_perp_linf = (d * math.sqrt(2.0 * math.log(2.0 * g)) / (c * g * tau)
                      if tau > 0 and c > 0 and g > 0 else nan)
    asym_par_l2 = math.sqrt(d / (c**2 * k * (2.0 + tau**2))) if c > 0 else nan
    asym_par_linf = ((math.sqrt(d) + tau * math.sqrt(2.0 * math.log(2.0 * d)))
                     / (c * (2.0 + tau**2)) if c > 0 else nan)

    return BoundPrediction(
        z_perp_l2=z_perp_l2, z_perp_linf=z_perp_linf,
        z_par_l2=z_par_l2, z_par_linf=z_par_linf,
        delta1=delta1, delta2=delta2,
        delta1_vacuous=bool(delta1_vac), delta2_vacuous=bool(delta2_vac),
        success_prob_perp=max(0.0, 1.0 - delta1),
        success_prob_par=max(0.0, 1.0 - delta2) if v_applicable else 0.0,
        v_event_applicable=bool(v_applicable),
        assumptions_hold=bool(consts.c3 > 0 and consts.c5 > 0),
        eta_perp=eta_perp, eta_par=eta_par,
        asymptotic_z_perp_l2=asym_perp_l2, asymptotic_z_perp_linf=asym_perp_linf,
        asymptotic_z_par_l2=asym_par_l2, asymptotic_z_par_linf=asym_par_linf)


@dataclass(frozen=True)
class EventStat:
    name: str
    empirical: float
    bound: float
    satisfied: int
    total: int
    applicable: bool
    note: str

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class LemmaVerification:
    d: int
    D: int
    g: int
    tau: float
    k: int
    draws: int
    seed: int
    immersion: str
    events: dict  # name -> EventStat

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "events"}
        out["events"] = {name: ev.to_dict() for name, ev in self.events.items()}
        return out


def _mc_chunks(draws, chunk):
    start = 0
    index = 0
    while start < draws:
        size = min(chunk, draws - start)
        yield index, size
        index += 1
        start += size


def monte_carlo_verify(d, D, tau, k, draws=10000, seed=0, immersion_mode="exact-qr",
                       chunk=None):
    """Measure the empirical frequency of the high-probability events E1-E7.

    Draws k shift vectors zeta ~ N(0, tau^2 I_D) per trial against one fixed
    immersion. E1-E5 and the cluster-alignment event V are per-vector; the
    pairwise semi-inner-product events E6/E7 are per-trial (joint over the
    k-tuple, quantified over all clusters, with the realized eps_zeta values
    max_q ||P zeta^(q)|| and (sqrt(2) ln d + 1) max_q ||Po zeta^(q)||).

    Above the dense-projector limit the fixed immersion is the canonical
    axis-aligned one (Po keeps the first d coordinates); by rotational
    invariance of the zeta law every event's distribution is identical to a
    QR-sampled immersion's. Cluster means for V are the orthogonal
    sqrt(d) e_q with alternating labels.

    Trials are drawn in fixed-size chunks with per-chunk child seeds, so the
    result is independent of how chunks are scheduled.
    """
    if draws < 100:
        raise ValueError("need draws >= 100")
    if k > d:
        raise ValueError("need k <= d for the cluster-alignment event")
    consts = compute_constants(d, D, tau, k, p=0.0)
    bounds = predict_bounds(consts)
    g = D - d
    axis_aligned = D > DENSE_PROJECTOR_MAX_D
    if axis_aligned:
        projectors = None
        M_cols = None
    else:
        imm = sample_orthonormal_immersion(d, D, immersion_mode,
                                           np.random.SeedSequence([int(seed), _TAG_MC_CHUNK, 0]))
        projectors = build_projectors(imm)
        M_cols = imm.M

    labels = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    sq_d = math.sqrt(d)
    ln_d = math.log(d)
    e1_lo, e1_hi = tau * math.sqrt(D / 2.0), tau * math.sqrt(13.0 * D / 8.0)
    e2_lo, e2_hi = g * tau**2 / 2.0, 13.0 * g * tau**2 / 8.0
    e3_lo, e3_hi = d * tau**2 / 2.0, 13.0 * d * tau**2 / 8.0
    e4_hi = 3.0 * tau * math.sqrt(2.0 * math.log(2.0 * g)) if g > 0 else 0.0
    e5_hi = 3.0 * tau * math.sqrt(2.0 * math.log(2.0 * d))

    if chunk is None:
        chunk = max(1, int(2e7 / (k * D)))
    counts = {name: 0 for name in ("E1", "E2", "E3", "E4", "E5", "E6", "E7", "V")}

    for index, size in _mc_chunks(draws, chunk):
        rng = rng_from_seed(np.random.SeedSequence([int(seed), _TAG_MC_CHUNK, 1 + index]))
        Z = tau * rng.standard_normal((size, k, D))
        if axis_aligned:
            Zo = Z[:, :, :d]
            Zp = Z[:, :, d:]
            mu_coords = Zo[:, :, :k]  # <mu_tilde_q, zeta_r> / sqrt(d)
        else:
            flat = Z.reshape(size * k, D)
            po = projectors.apply_po(flat)
            Zo = po.reshape(size, k, D)
            Zp = Z - Zo
            mu_coords = (flat @ M_cols[:, :k]).reshape(size, k, k)

        norm_full = np.linalg.norm(Z, axis=2)
        q_p = np.einsum("ski,ski->sk", Zp, Zp)
        q_o = np.einsum("ski,ski->sk", Zo, Zo)
        counts["E1"] += int(np.count_nonzero((norm_full > e1_lo) & (norm_full < e1_hi)))
        counts["E2"] += int(np.count_nonzero((q_p > e2_lo) & (q_p < e2_hi)))
        counts["E3"] += int(np.count_nonzero((q_o > e3_lo) & (q_o < e3_hi)))
        if g > 0:
            counts["E4"] += int(np.count_nonzero(np.abs(Zp).max(axis=2) <= e4_hi))
        else:
            counts["E4"] += size * k
        counts["E5"] += int(np.count_nonzero(np.abs(Zo).max(axis=2) <= e5_hi))

        # Pairwise semi-inner products, realized eps, joint over all clusters.
        gram_p = np.einsum("sik,sjk->sij", Zp, Zp)
        gram_o = np.einsum("sik,sjk->sij", Zo, Zo)
        off = ~np.eye(k, dtype=bool)
        max_off_p = np.abs(gram_p)[:, off].max(axis=1)
        max_off_o = np.abs(gram_o)[:, off].max(axis=1)
        eps_perp = OMEGA_BAR * np.sqrt(q_p).max(axis=1)
        eps_par = (math.sqrt(2.0) * ln_d + OMEGA_BAR) * np.sqrt(q_o).max(axis=1)
        e6 = np.all(k * (max_off_p[:, None] + eps_perp[:, None]) < 0.1 * (q_p - eps_perp[:, None]),
                    axis=1)
        e7 = np.all(k * (max_off_o[:, None] + eps_par[:, None]) < 0.1 * (q_o - eps_par[:, None]),
                    axis=1)
        counts["E6"] += int(np.count_nonzero(e6))
        counts["E7"] += int(np.count_nonzero(e7))

        # V_q = sum_r y_r y_q <mu_tilde_q, zeta_r>, mu_tilde_q = sqrt(d) (M e_q).
        inner = sq_d * mu_coords  # (size, r, q)
        v_q = np.einsum("r,srq->sq", labels, inner) * labels[None, :]
        if consts.c4 > 0:
            counts["V"] += int(np.count_nonzero(np.abs(v_q) < 0.1 * consts.c4))

    per_vec = draws * k
    v_bound = (max(0.0, 1.0 - 2.0 * math.exp(-consts.c4**2 / (20.0 * tau**2 * d * k)))
               if tau > 0 and consts.c4 > 0 else 0.0)
    events = {
        "E1": EventStat("E1", counts["E1"] / per_vec, 1.0 - 2.0 * math.exp(-D / 16.0),
                        counts["E1"], per_vec, True,
                        "tau sqrt(D/2) < ||zeta|| < tau sqrt(13D/8)"),
        "E2": EventStat("E2", counts["E2"] / per_vec, 1.0 - 2.0 * math.exp(-g / 16.0),
                        counts["E2"], per_vec, g > 0,
                        "g tau^2/2 < zeta' P zeta < 13 g tau^2/8"),
        "E3": EventStat("E3", counts["E3"] / per_vec, 1.0 - 2.0 * math.exp(-d / 16.0),
                        counts["E3"], per_vec, True,
                        "d tau^2/2 < zeta' Po zeta < 13 d tau^2/8"),
        "E4": EventStat("E4", counts["E4"] / per_vec,
                        1.0 - (2.0 * g) ** -4.0 if g > 0 else 0.0,
                        counts["E4"], per_vec, g > 0,
                        "||P zeta||_inf < 3 tau sqrt(2 log 2g)"),
        "E5": EventStat("E5", counts["E5"] / per_vec, 1.0 - (2.0 * d) ** -4.0,
                        counts["E5"], per_vec, True,
                        "||Po zeta||_inf < 3 tau sqrt(2 log 2d)"),
        "E6": EventStat("E6", counts["E6"] / draws, max(0.0, 1.0 - bounds.delta1),
                        counts["E6"], draws, True,
                        "pairwise off-manifold shifts nearly orthogonal (bound 1 - delta1%s)"
                        % (", vacuous" if bounds.delta1_vacuous else "")),
        "E7": EventStat("E7", counts["E7"] / draws, max(0.0, 1.0 - bounds.delta2),
                        counts["E7"], draws, True,
                        "pairwise on-manifold shifts nearly orthogonal (bound 1 - delta2%s)"
                        % (", vacuous" if bounds.delta2_vacuous else "")),
        "V": EventStat("V", counts["V"] / per_vec if consts.c4 > 0 else 0.0,
                       v_bound, counts["V"], per_vec, bool(consts.c4 > 0),
                       "|V_q| < c4/10" + ("" if consts.c4 > 0 else
                                          " (not applicable: c4 <= 0 makes the event unsatisfiable)")),
    }
    return LemmaVerification(d=d, D=D, g=g, tau=tau, k=k, draws=draws, seed=int(seed),
                             immersion="axis-aligned" if axis_aligned else immersion_mode,
                             events=events)


def theory_report_dict(d, D, tau, k, p=0.0, c_balance=None):
    """Assemble the full constants + bounds + sandwich report as a dict."""
    consts = compute_constants(d, D, tau, k, p=p, c_balance=c_balance)
    bounds = predict_bounds(consts)
    sandwich = check_sandwiches(consts)
    return {
        "inputs": {"d": d, "D": D, "tau": tau, "k": k, "p": p, "c": consts.c},
        "constants": consts.to_dict(),
        "bounds": bounds.to_dict(),
        "sandwiches": sandwich.to_dict(),
    }
