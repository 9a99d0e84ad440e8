"""Geometry induced by a symmetric positive definite matrix.

Every solver in the package measures lengths and angles in the inner
product ``<a, b>_S = a^T S b`` where ``S`` is the second moment of the
inputs.  The helpers here are small and pure; ``SpdMatrix`` caches the
Cholesky factor and the extreme eigenvalues so repeated solves are cheap.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg


class NotPositiveDefiniteError(ValueError):
    pass


class DimensionError(ValueError):
    pass


def _check_vec(x, dim, name="vector"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != dim:
        raise DimensionError(f"{name} has shape {x.shape}, expected ({dim},)")
    return x


def spectral_bounds(s_raw):
    """Smallest and largest eigenvalue of a symmetric matrix."""
    a = np.asarray(s_raw, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        raise DimensionError("empty matrix")
    ev = linalg.eigh(a, eigvals_only=True)
    mu, big_l = float(ev[0]), float(ev[-1])
    if mu <= 0.0:
        raise NotPositiveDefiniteError(f"smallest eigenvalue {mu:.3e} is not positive")
    return mu, big_l


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    entries: np.ndarray
    mu: float
    big_l: float
    _chol: tuple = field(repr=False, compare=False)

    @classmethod
    def from_array(cls, a, rtol=1e-12):
        a = np.array(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {a.shape}")
        scale = max(np.abs(a).max(), np.finfo(float).tiny)
        if np.abs(a - a.T).max() > rtol * scale:
            raise ValueError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        mu, big_l = spectral_bounds(a)
        # an exact zero eigenvalue can come back as a few ulps of big_l
        if mu <= 4 * a.shape[0] * np.finfo(float).eps * big_l:
            raise NotPositiveDefiniteError(f"matrix is numerically singular (mu={mu:.3e}, L={big_l:.3e})")
        try:
            chol = linalg.cho_factor(a, lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(str(exc)) from exc
        a.setflags(write=False)
        return cls(a, mu, big_l, chol)

    @property
    def dim(self):
        return self.entries.shape[0]

    def matvec(self, x):
        return self.entries @ x

    def solve(self, x):
        return linalg.cho_solve(self._chol, x)


def s_inner(a, b, S):
    a = _check_vec(a, S.dim)
    b = _check_vec(b, S.dim)
    return float(a @ S.entries @ b)


def s_norm(w, S):
    w = _check_vec(w, S.dim)
    return float(np.sqrt(max(w @ S.entries @ w, 0.0)))


def sinv_norm(x, S):
    """Norm of ``x`` in the inverse geometry, sqrt(x^T S^{-1} x)."""
    x = _check_vec(x, S.dim)
    return float(np.sqrt(max(x @ S.solve(x), 0.0)))


def sin2_s_angle(w, v, S):
    """Squared sine of the S-angle, from the S-orthogonal residual of w off v.

    The residual form keeps full relative accuracy for nearly parallel
    vectors, where 1 - cos^2 would bottom out near 1e-16.
    """
    w = _check_vec(w, S.dim)
    v = _check_vec(v, S.dim)
    sw = S.entries @ w
    sv = S.entries @ v
    ww = w @ sw
    vv = v @ sv
    if ww <= 0.0 or vv <= 0.0:
        raise ValueError("angle undefined for a zero vector")
    r = w - ((v @ sw) / vv) * v
    return float(min(max((r @ S.entries @ r) / ww, 0.0), 1.0))


def a_w_apply(w, S, x):
    """Apply A_w = I/|w|_S - S w w^T/|w|_S^3 to ``x``.

    A_w is the transposed Jacobian of w -> w/|w|_S, so the chain rule for
    the direction of the decoupled parametrization reads grad_w = g A_w grad.
    """
    w = _check_vec(w, S.dim)
    x = _check_vec(x, S.dim, "x")
    sw = S.entries @ w
    nw2 = w @ sw
    if nw2 <= 0.0:
        raise ValueError("A_w undefined for w = 0")
    nw = np.sqrt(nw2)
    return x / nw - sw * ((w @ x) / (nw2 * nw))


def s_orth_complement_basis(v1, S):
    """Columns S-orthonormal to each other and to ``v1``.

    Modified Gram-Schmidt over the canonical basis with one
    re-orthogonalization pass; candidates that collapse are skipped.
    """
    v1 = _check_vec(v1, S.dim, "v1")
    n1 = s_norm(v1, S)
    if n1 == 0.0:
        raise ValueError("v1 must be nonzero")
    d = S.dim
    basis = [v1 / n1]
    for k in range(d):
        if len(basis) == d:
            break
        q = np.zeros(d)
        q[k] = 1.0
        for _ in range(2):
            for b in basis:
                q = q - (b @ S.entries @ q) * b
        nq = s_norm(q, S)
        # drop near-dependent candidates relative to the unit vector we started from
        if nq < 1e-8 * np.sqrt(S.entries[k, k]):
            continue
        basis.append(q / nq)
    return np.column_stack(basis[1:]) if d > 1 else np.zeros((d, 0))
