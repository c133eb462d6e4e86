"""Orthonormal immersions, subspace projectors, and the semi-inner product.

The data model embeds a d-dimensional signal into R^D through a D x d matrix
M. ``Po`` projects onto the image (the on-manifold subspace), ``P = I - Po``
onto its orthogonal complement (off-manifold). Projectors are materialized
densely up to D = 4096 and applied in factored form above that.
"""

from dataclasses import dataclass, field

import numpy as np

DENSE_PROJECTOR_MAX_D = 4096

IMMERSION_MODES = ("exact-qr", "gaussian-raw")


def rng_from_seed(seed):
    """Single documented PRNG: PCG64 seeded from a 64-bit integer.

    Accepts an int or a numpy SeedSequence; all randomness in the package
    flows through generators constructed here.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class OrthonormalImmersion:
    """Immersion matrix M (D x d) with its construction mode."""

    d: int
    D: int
    M: np.ndarray
    mode: str

    def embed(self, x):
        """Map intrinsic coordinates (d,) or (n, d) into R^D."""
        return np.asarray(x, dtype=float) @ self.M.T


def sample_orthonormal_immersion(d, D, mode="exact-qr", seed=0):
    """Draw a D x d immersion matrix.

    exact-qr orthonormalizes a standard Gaussian matrix (Householder QR), so
    M^T M = I_d to machine precision. gaussian-raw keeps i.i.d. N(0, 1/D)
    columns, the approximately-orthogonal construction used for simulation;
    its Gram matrix deviates from I by O(D^{-1/2}).
    """
    d, D = int(d), int(D)
    if d < 1 or d > D:
        raise ValueError("invalid-dimensions: need 1 <= d <= D, got d=%d D=%d" % (d, D))
    if mode not in IMMERSION_MODES:
        raise ValueError("unknown immersion mode %r" % (mode,))
    rng = rng_from_seed(seed)
    A = rng.standard_normal((D, d))
    if mode == "exact-qr":
        M, _ = np.linalg.qr(A)
    else:
        M = A / np.sqrt(D)
    return OrthonormalImmersion(d=d, D=D, M=M, mode=mode)


@dataclass(frozen=True)
class SubspaceProjectors:
    """On-manifold projector Po = M (M^T M)^{-1} M^T and P = I - Po.

    For D <= 4096 the dense matrices are materialized; beyond that only the
    factored form is stored and projections are applied as
    Po z = M (Gram^{-1} (M^T z)).
    """

    d: int
    D: int
    M: np.ndarray
    gram_inv: np.ndarray
    dense: bool
    Po: np.ndarray = field(default=None, repr=False)
    P: np.ndarray = field(default=None, repr=False)

    def apply_po(self, z):
        """Project onto the on-manifold subspace; rows of (n, D) or a (D,)."""
        z = np.asarray(z, dtype=float)
        if self.dense:
            return z @ self.Po.T if z.ndim == 2 else self.Po @ z
        coords = z @ self.M  # (..., d)
        return (coords @ self.gram_inv) @ self.M.T

    def apply_p(self, z):
        """Project onto the off-manifold subspace."""
        return np.asarray(z, dtype=float) - self.apply_po(z)

    def apply(self, z, subspace):
        """Dispatch on a subspace name: full | on-manifold | off-manifold."""
        if subspace == "full":
            return np.asarray(z, dtype=float)
        if subspace == "on-manifold":
            return self.apply_po(z)
        if subspace == "off-manifold":
            return self.apply_p(z)
        raise ValueError("unknown subspace %r" % (subspace,))


def build_projectors(imm, force_factored=False):
    """Build SubspaceProjectors from an immersion.

    Uses the full Gram inverse, so gaussian-raw immersions also get exact
    projectors. A numerically singular Gram matrix is rejected.
    ``force_factored`` skips materializing the dense matrices even at small D,
    which exercises the large-D code path.
    """
    M = imm.M
    gram = M.T @ M
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError("degenerate-immersion: Gram matrix condition %.3g" % cond)
    gram_inv = np.linalg.inv(gram)
    dense = imm.D <= DENSE_PROJECTOR_MAX_D and not force_factored
    Po = P = None
    if dense:
        Po = M @ gram_inv @ M.T
        Po = 0.5 * (Po + Po.T)  # enforce exact symmetry
        P = np.eye(imm.D) - Po
    return SubspaceProjectors(d=imm.d, D=imm.D, M=M, gram_inv=gram_inv, dense=dense, Po=Po, P=P)


def axis_aligned_projectors(d, D):
    """Projectors for the canonical immersion (first d coordinate axes)."""
    imm = OrthonormalImmersion(d=d, D=D, M=np.eye(D, d), mode="exact-qr")
    return build_projectors(imm)


def semi_inner(a, b, A):
    """Semi-inner product <a, b>_A = a^T A b for a square matrix A.

    When A is a projector this equals <Aa, Ab>.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("invalid-dimensions: A must be square, got %s" % (A.shape,))
    if a.shape != (A.shape[0],) or b.shape != (A.shape[1],):
        raise ValueError(
            "invalid-dimensions: a %s, b %s incompatible with A %s" % (a.shape, b.shape, A.shape)
        )
    return float(a @ A @ b)
