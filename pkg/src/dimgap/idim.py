"""Intrinsic-dimension estimators for point clouds.

Three classical estimators over brute-force exact nearest neighbors:
local PCA (eigenmass threshold), the maximum-likelihood estimator from
nearest-neighbor distance ratios, and the two-nearest-neighbor estimator.
All three depend only on interpoint distances (or their local principal
subspaces), so they are invariant under rescaling and rigid rotation of
the cloud.
"""

import math
from dataclasses import dataclass, field

import numpy as np

_ELEMENT_BUDGET = 3.0e7  # chunk size cap for the pairwise-distance workspace


@dataclass(frozen=True)
class IdEstimate:
    method: str
    estimate: float
    n_points: int
    n_skipped: int
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"method": self.method, "estimate": self.estimate,
                "n_points": self.n_points, "n_skipped": self.n_skipped,
                "detail": dict(self.detail)}


def load_point_cloud(path):
    """Read a CSV point cloud; returns (points, labels_or_None).

    A non-numeric first row is treated as a header. A header column named
    ``y`` or ``label`` (case-insensitive) is split off as labels; all other
    columns are coordinates. Malformed rows are reported by 1-based line
    number.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty point cloud file: %s" % path)
    first = lines[0].split(",")
    header = None
    try:
        [float(tok) for tok in first]
    except ValueError:
        header = [tok.strip() for tok in first]
    start = 1 if header is not None else 0
    label_col = None
    if header is not None:
        for j, name in enumerate(header):
            if name.lower() in ("y", "label"):
                label_col = j
                break
    rows = []
    width = None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        toks = line.split(",")
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise ValueError("row %d has %d fields, expected %d"
                             % (lineno, len(toks), width))
        try:
            rows.append([float(tok) for tok in toks])
        except ValueError as exc:
            raise ValueError("row %d is not numeric: %s" % (lineno, exc)) from None
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("no data rows in %s" % path)
    labels = None
    if label_col is not None:
        labels = data[:, label_col].copy()
        data = np.delete(data, label_col, axis=1)
    return data, labels


def nearest_neighbors(X, k):
    """Exact k nearest neighbors of each point (excluding itself).

    Brute force over all pairs, chunked to bound memory. Distance ties are
    broken by point index (stable sort), so results are deterministic.
    Returns (distances, indices), each (n, k) with columns ordered nearest
    first.
    """
    X = np.asarray(X, dtype=float)
    n, dim = X.shape
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n, got k=%d with n=%d" % (k, n))
    dists = np.empty((n, k))
    idxs = np.empty((n, k), dtype=np.int64)
    rows_per_chunk = max(1, int(_ELEMENT_BUDGET / max(1, n * dim)))
    for start in range(0, n, rows_per_chunk):
        stop = min(start + rows_per_chunk, n)
        diff = X[start:stop, None, :] - X[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idxs[start:stop] = order
        gathered = np.take_along_axis(d2, order, axis=1)
        dists[start:stop] = np.sqrt(np.maximum(gathered, 0.0))
    return dists, idxs


def lpca_dim(X, n_neighbors=20, threshold=0.95):
    """Local-PCA dimension: per point, the smallest count of leading
    covariance eigenvalues of its neighborhood whose mass reaches the
    threshold; the estimate is the median of those local dimensions.

    Neighborhoods whose total variance is zero (coincident points) are
    skipped and counted.
    """
    X = np.asarray(X, dtype=float)
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    _, idxs = nearest_neighbors(X, n_neighbors)
    local_dims = []
    skipped = 0
    for i in range(X.shape[0]):
        nbrs = X[idxs[i]]
        centered = nbrs - nbrs.mean(axis=0)
        cov = centered.T @ centered / max(1, n_neighbors - 1)
        evals = np.linalg.eigvalsh(cov)[::-1]
        evals = np.clip(evals, 0.0, None)
        total = evals.sum()
        if not np.isfinite(total) or total <= 0:
            skipped += 1
            continue
        ratios = np.cumsum(evals) / total
        local_dims.append(int(np.argmax(ratios >= threshold - 1e-12)) + 1)
    if not local_dims:
        raise ValueError("every neighborhood was degenerate")
    arr = np.asarray(local_dims, dtype=float)
    return IdEstimate(method="lpca", estimate=float(np.median(arr)),
                      n_points=len(local_dims), n_skipped=skipped,
                      detail={"mean_local_dim": float(arr.mean()),
                              "n_neighbors": n_neighbors,
                              "threshold": threshold})


def mle_dim(X, k=5):
    """Nearest-neighbor distance-ratio maximum-likelihood dimension.

    Per point, m_k(x) = [ (1/(k-1)) sum_{j<k} ln(T_k(x)/T_j(x)) ]^{-1} with
    T_j the distance to the j-th nearest neighbor. The global estimate is
    the inverse of the mean of the per-point inverses; the simple mean of
    the per-point values is reported alongside. Points with a zero
    nearest-neighbor distance are skipped and counted.
    """
    X = np.asarray(X, dtype=float)
    if k < 2:
        raise ValueError("need k >= 2")
    dists, _ = nearest_neighbors(X, k)
    ok = dists[:, 0] > 0
    skipped = int(np.count_nonzero(~ok))
    if not np.any(ok):
        raise ValueError("every point has a coincident nearest neighbor")
    T = dists[ok]
    inv = np.log(T[:, -1:] / T[:, :-1]).mean(axis=1)
    mean_inv = inv.mean()
    estimate = float(1.0 / mean_inv) if mean_inv > 0 else float("inf")
    with np.errstate(divide="ignore"):
        per_point = np.where(inv > 0, 1.0 / np.where(inv > 0, inv, 1.0), np.inf)
    return IdEstimate(method="mle", estimate=estimate,
                      n_points=int(np.count_nonzero(ok)), n_skipped=skipped,
                      detail={"mean_of_per_point": float(per_point.mean()),
                              "k": k})


def twonn_dim(X, discard_fraction=0.10):
    """Two-nearest-neighbor dimension from the ratio mu = r2/r1.

    Under a locally uniform density, mu follows a Pareto law with shape d,
    so -ln(1 - F(mu)) = d ln mu. The estimate is the slope of the line
    through the origin fitted to (ln mu_(i), -ln(1 - i/(N+1))) over the
    smallest (1 - discard_fraction) of the sorted ratios; dropping the top
    tail while keeping full-sample ranks is the standard trimming and, in
    contrast to a plain mean of ln mu over the kept points, leaves the
    estimate unbiased. Points whose nearest neighbor coincides with them
    are skipped and counted.
    """
    X = np.asarray(X, dtype=float)
    if not 0 <= discard_fraction < 1:
        raise ValueError("discard_fraction must be in [0, 1)")
    if X.shape[0] < 10:
        raise ValueError("need at least 10 points, got %d" % X.shape[0])
    dists, _ = nearest_neighbors(X, 2)
    ok = dists[:, 0] > 0
    skipped = int(np.count_nonzero(~ok))
    if not np.any(ok):
        raise ValueError("every point has a coincident nearest neighbor")
    mu = np.sort(dists[ok, 1] / dists[ok, 0])
    n_full = mu.size
    n_drop = int(math.ceil(discard_fraction * n_full)) if discard_fraction > 0 else 0
    n_keep = max(1, n_full - n_drop)
    log_mu = np.log(mu[:n_keep])
    cdf = np.arange(1, n_keep + 1) / (n_full + 1.0)
    target = -np.log1p(-cdf)
    denom = float(log_mu @ log_mu)
    estimate = float(log_mu @ target) / denom if denom > 0 else float("inf")
    return IdEstimate(method="twonn", estimate=float(estimate),
                      n_points=int(n_keep), n_skipped=skipped,
                      detail={"n_discarded": int(n_full - n_keep),
                              "discard_fraction": discard_fraction})


ESTIMATORS = {"lpca": lpca_dim, "mle": mle_dim, "twonn": twonn_dim}
