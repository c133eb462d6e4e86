"""Two-layer ReLU classifier, full-batch gradient descent, KKT diagnostics.

The network is N(x) = sum_j v_j relu(<w_j, x> + b_j), trained on the
exponential or logistic loss of the margins y_i N(x_i). After convergence
the first-layer weights admit the stationarity representation
w_j = sum_i v_j lambda_i y_i phi'_{ij} x_i with multipliers lambda >= 0,
which `kkt_diagnostics` recovers by nonnegative least squares. The ReLU
subgradient at 0 is taken to be 0 throughout.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import optimize

from .linalg import rng_from_seed

INIT_MODES = ("kaiming-normal", "scaled")
LOSS_KINDS = ("exponential", "logistic")


@dataclass
class NetParams:
    """First-layer weights W (width x D), biases b, second-layer weights v."""

    W: np.ndarray
    b: np.ndarray
    v: np.ndarray

    @property
    def width(self):
        return self.W.shape[0]

    @property
    def D(self):
        return self.W.shape[1]

    def theta_norm(self):
        """Euclidean norm of the full parameter vector theta = (W, b, v)."""
        return math.sqrt(float(np.sum(self.W**2) + np.sum(self.b**2) + np.sum(self.v**2)))

    def copy(self):
        return NetParams(W=self.W.copy(), b=self.b.copy(), v=self.v.copy())

    def rescaled(self, s):
        """Scale both layers by s (output scales by s^2 via 2-homogeneity)."""
        return NetParams(W=s * self.W, b=s * self.b, v=s * self.v)


@dataclass
class TrainConfig:
    loss_kind: str = "exponential"
    lr: float = 0.1
    epochs: int = 1000
    weight_decay: float = 0.0
    init_mode: str = "kaiming-normal"
    init_factor: float = 1.0
    stop_loss: float = None

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError("unknown loss_kind %r" % (self.loss_kind,))
        if self.lr < 0:
            raise ValueError("need lr >= 0")
        if self.epochs < 1:
            raise ValueError("need epochs >= 1")


@dataclass
class TrainTrace:
    """Per-epoch diagnostics of a training run.

    normalized_margin is min_i y_i N(x_i) / ||theta||^2, the margin of the
    scale-normalized network. loss_below_1_over_n is the first epoch whose
    loss drops below 1/n (-1 if never), the threshold after which gradient
    descent is known to steer toward the max-margin KKT point.
    """

    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    theta_norm: list = field(default_factory=list)
    normalized_margin: list = field(default_factory=list)
    stop_reason: str = ""
    loss_below_1_over_n: int = -1

    @property
    def epochs_run(self):
        return len(self.loss)


def init_params(width, D, seed=0, init_mode="kaiming-normal", init_factor=1.0):
    """Kaiming-normal init: W ~ N(0, 2/D), b = 0, v ~ N(0, 2/width).

    scaled mode multiplies every draw by init_factor (small-initialization
    studies use e.g. 0.01).
    """
    if width < 1:
        raise ValueError("need width >= 1")
    if init_mode not in INIT_MODES:
        raise ValueError("unknown init mode %r" % (init_mode,))
    factor = 1.0 if init_mode == "kaiming-normal" else float(init_factor)
    rng = rng_from_seed(seed)
    W = rng.standard_normal((width, D)) * math.sqrt(2.0 / D)
    v = rng.standard_normal(width) * math.sqrt(2.0 / width)
    return NetParams(W=factor * W, b=np.zeros(width), v=factor * v)


def forward(params, X):
    """Network outputs for one input (D,) or a batch (n, D)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != params.D:
        raise ValueError("invalid-dimensions: input has %d features, net expects %d"
                         % (X.shape[1], params.D))
    pre = X @ params.W.T + params.b
    out = np.maximum(pre, 0.0) @ params.v
    return float(out[0]) if single else out


def _pointwise_loss(z, loss_kind):
    """Loss of margin z: exp(-z) or log(1 + exp(-z)) (overflow-safe)."""
    if loss_kind == "exponential":
        with np.errstate(over="ignore"):
            return np.exp(-z)
    return np.logaddexp(0.0, -z)


def empirical_loss(params, X, y, loss_kind="exponential"):
    if len(X) == 0:
        raise ValueError("need n >= 1 samples")
    z = np.asarray(y, dtype=float) * forward(params, X)
    return float(np.mean(_pointwise_loss(z, loss_kind)))


def loss_and_gradient(params, X, y, loss_kind="exponential", weight_decay=0.0):
    """Mean loss and its exact analytic gradient in (W, b, v).

    phi'(z) = 1 for z > 0 and 0 otherwise (subgradient 0 at the kink). With
    weight_decay = lam the objective gains lam/2 * ||theta||^2, i.e. the
    gradient gains lam * theta.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("need n >= 1 samples")
    pre = X @ params.W.T + params.b
    act = pre > 0
    h = np.where(act, pre, 0.0)
    out = h @ params.v
    z = y * out
    loss = float(np.mean(_pointwise_loss(z, loss_kind)))
    if loss_kind == "exponential":
        with np.errstate(over="ignore"):
            dz = -np.exp(-z)
    else:
        # d/dz log(1+e^{-z}) = -sigmoid(-z), computed overflow-safe
        dz = -np.exp(-np.logaddexp(0.0, z))
    dout = dz * y / n
    gv = h.T @ dout
    dpre = np.where(act, (dout[:, None] * params.v[None, :]), 0.0)
    gW = dpre.T @ X
    gb = dpre.sum(axis=0)
    if weight_decay != 0.0:
        gW = gW + weight_decay * params.W
        gb = gb + weight_decay * params.b
        gv = gv + weight_decay * params.v
    return loss, (gW, gb, gv)


def _margin_stats(params, X, y):
    out = forward(params, X)
    margins = y * out
    acc = float(np.mean(margins > 0))
    tn = params.theta_norm()
    nm = float(margins.min() / tn**2) if tn > 0 else 0.0
    return acc, nm


def train_gd(params, X, y, config):
    """Full-batch gradient descent; returns (trained params, TrainTrace).

    Runs for config.epochs steps, stopping early when loss <= stop_loss.
    A non-finite loss (divergence) reverts to the last finite iterate and
    truncates the trace there with stop_reason "diverged".
    """
    params = params.copy()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    trace = TrainTrace()
    trace.stop_reason = "epochs"
    last_good = params.copy()
    for epoch in range(config.epochs):
        loss, (gW, gb, gv) = loss_and_gradient(params, X, y, config.loss_kind,
                                               config.weight_decay)
        if not math.isfinite(loss):
            params = last_good
            trace.stop_reason = "diverged"
            break
        last_good = params.copy()
        params.W -= config.lr * gW
        params.b -= config.lr * gb
        params.v -= config.lr * gv
        # an overshooting step can overflow the forward pass; the loss check
        # below catches it, so silence the intermediate warnings
        with np.errstate(over="ignore", invalid="ignore"):
            loss_after = empirical_loss(params, X, y, config.loss_kind)
        if not math.isfinite(loss_after):
            params = last_good
            trace.stop_reason = "diverged"
            break
        acc, nm = _margin_stats(params, X, y)
        trace.loss.append(loss_after)
        trace.accuracy.append(acc)
        trace.theta_norm.append(params.theta_norm())
        trace.normalized_margin.append(nm)
        if trace.loss_below_1_over_n < 0 and loss_after < 1.0 / n:
            trace.loss_below_1_over_n = epoch
        if config.stop_loss is not None and loss_after <= config.stop_loss:
            trace.stop_reason = "stop_loss"
            break
    return params, trace


@dataclass
class KktDiagnostics:
    """Multipliers and residuals of the stationarity representation.

    volatile_span_residual: per-neuron relative residual of the off-manifold
    weight component P w_j regressed onto span{P zeta^(r)} u {P omega_i}.
    Neurons whose off-manifold mass is below 1e-3 of the layer maximum are
    reported as 0 (they carry no volatile signal to explain; an untrained
    neuron frozen at a tiny initialization is the typical case). None when
    the dataset has no truth fields.
    """

    lambdas: np.ndarray
    weight_residual: float
    bias_residual: float
    volatile_span_residual: np.ndarray
    negligible_volatile_count: int


def _recover_lambdas(params, X, y):
    """Nonnegative least squares on the stacked stationarity system.

    The system A lambda ~ t has one block row per neuron j:
    v_j y_i phi'_{ij} [x_i; 1] as column i, target [w_j; b_j]. Its normal
    equations have the closed form
    A^T A = (y y^T) * (X X^T + 1) * (Phi' diag(v^2) Phi'^T) (elementwise) and
    (A^T t)_i = y_i N(x_i), so lambda is found by NNLS on a symmetric
    factorization of A^T A without materializing A.
    """
    pre = X @ params.W.T + params.b
    act = (pre > 0).astype(float)
    gram = X @ X.T + 1.0
    AtA = np.outer(y, y) * gram * ((act * params.v[None, :] ** 2) @ act.T)
    Att = y * (np.maximum(pre, 0.0) @ params.v)
    evals, evecs = np.linalg.eigh(AtA)
    root = np.sqrt(np.clip(evals, 0.0, None))
    # C^T C = A^T A and C^T s = A^T t, so nnls(C, s) solves the original
    # system; zero eigendirections are dropped via the pseudo-inverse.
    C = root[:, None] * evecs.T
    tol = root.max() * 1e-14 if root.size else 0.0
    inv_root = np.where(root > tol, 1.0 / np.where(root > tol, root, 1.0), 0.0)
    s = inv_root * (evecs.T @ Att)
    lambdas, _ = optimize.nnls(C, s)
    return lambdas, act


def kkt_diagnostics(params, dataset, projectors=None):
    """Recover lambda >= 0 and measure the stationarity residuals.

    Works on any parameters (diagnostic semantics, no convergence check).
    `dataset` is either a GeneratedDataset or a plain (X, y) pair; the
    volatile-span residual is computed only for datasets carrying truth
    fields and is None otherwise.
    """
    if isinstance(dataset, tuple):
        X, y = dataset
        truth = None
    else:
        X, y = dataset.observed, dataset.labels
        truth = dataset if dataset.has_truth else None
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lambdas, act = _recover_lambdas(params, X, y)
    coeff = lambdas * y
    W_hat = (params.v[:, None] * (act.T * coeff[None, :])) @ X
    b_hat = params.v * (act.T @ coeff)
    w_norm = float(np.linalg.norm(params.W))
    b_norm = float(np.linalg.norm(params.b))
    weight_residual = float(np.linalg.norm(W_hat - params.W)) / (w_norm if w_norm > 0 else 1.0)
    bias_residual = float(np.linalg.norm(b_hat - params.b)) / (b_norm if b_norm > 0 else 1.0)
    vol = None
    negligible = 0
    if truth is not None:
        if projectors is None:
            projectors = truth.manifold.projectors()
        vol, negligible = volatile_span_residuals(params, truth.manifold, truth.omega,
                                                  projectors)
    return KktDiagnostics(lambdas=lambdas, weight_residual=weight_residual,
                          bias_residual=bias_residual, volatile_span_residual=vol,
                          negligible_volatile_count=negligible)


def volatile_span_residuals(params, manifold, omega, projectors, negligible_rel=1e-3):
    """Per-neuron relative residual of P w_j against span{P zeta} u {P omega}.

    Neurons with ||P w_j|| below negligible_rel times the layer maximum are
    assigned residual 0 and counted (no volatile mass worth explaining).
    """
    PW = projectors.apply_p(params.W)  # (width, D)
    span = np.vstack([projectors.apply_p(manifold.zetas),
                      projectors.apply_p(np.asarray(omega, dtype=float))])  # (k+n, D)
    sol, _, _, _ = sla.lstsq(span.T, PW.T, lapack_driver="gelsd")
    resid_vec = PW.T - span.T @ sol
    num = np.linalg.norm(resid_vec, axis=0)
    den = np.linalg.norm(PW, axis=1)
    cutoff = negligible_rel * (den.max() if den.size else 0.0)
    negligible = den <= cutoff
    out = np.zeros(params.width)
    active = ~negligible
    out[active] = num[active] / den[active]
    return out, int(negligible.sum())


def decompose_weights(params, projectors):
    """Split W into authentic (on-manifold) and volatile (off-manifold) parts."""
    authentic = projectors.apply_po(params.W)
    volatile = params.W - authentic
    return authentic, volatile


def normalized_copy(params, X, y):
    """Rescale the net by 2-homogeneity so the minimum margin equals 1.

    Returns None when no positive margin exists (normalization undefined).
    """
    margins = np.asarray(y, dtype=float) * forward(params, X)
    m = float(margins.min())
    if m <= 0:
        return None
    return params.rescaled(1.0 / math.sqrt(m))


def model_to_json(params, train_config=None, final_loss=None, seed=None):
    from . import serialize

    obj = {
        "width": params.width,
        "D": params.D,
        "W": serialize.matrix_to_json(params.W),
        "b": [float(x) for x in params.b],
        "v": [float(x) for x in params.v],
    }
    if train_config is not None:
        obj["train_config"] = {
            "loss_kind": train_config.loss_kind, "lr": train_config.lr,
            "epochs": train_config.epochs, "weight_decay": train_config.weight_decay,
            "init_mode": train_config.init_mode, "init_factor": train_config.init_factor,
            "stop_loss": train_config.stop_loss,
        }
    if final_loss is not None:
        obj["final_loss"] = float(final_loss)
    if seed is not None:
        obj["seed"] = int(seed)
    return obj


def model_from_json(obj):
    from . import serialize

    return NetParams(W=serialize.matrix_from_json(obj["W"]),
                     b=np.asarray(obj["b"], dtype=float),
                     v=np.asarray(obj["v"], dtype=float))
