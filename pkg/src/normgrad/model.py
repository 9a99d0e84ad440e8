"""Gaussian input model and empirical datasets.

Everything is expressed through z = -y x.  ``u`` is the mean of z and
``sigma`` its second moment E[z z^T]; the covariance sigma - u u^T only
shows up when drawing samples.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .sgeom import DimensionError, NotPositiveDefiniteError, SpdMatrix


class LibsvmFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpdModel:
    u: np.ndarray
    sigma: SpdMatrix

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 1 or u.shape[0] != self.sigma.dim:
            raise DimensionError(f"u has shape {u.shape}, sigma is {self.sigma.dim}x{self.sigma.dim}")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_arrays(cls, u, sigma, check_psd=True):
        m = cls(np.asarray(u, dtype=float), SpdMatrix.from_array(sigma))
        if check_psd:
            cov = m.covariance()
            ev_min = linalg.eigh(cov, eigvals_only=True)[0]
            if ev_min < -1e-10 * m.sigma.big_l:
                raise NotPositiveDefiniteError(
                    f"sigma - u u^T has eigenvalue {ev_min:.3e}; not a valid second moment")
        return m

    @property
    def dim(self):
        return self.sigma.dim

    @property
    def mu(self):
        return self.sigma.mu

    @property
    def big_l(self):
        return self.sigma.big_l

    @cached_property
    def sinv_u(self):
        x = self.sigma.solve(self.u)
        x.setflags(write=False)
        return x

    @cached_property
    def lambda1(self):
        return float(self.u @ self.sinv_u)

    @property
    def ols_solution(self):
        """Minimizer -S^{-1}u of 2u^T w + w^T S w."""
        return -self.sinv_u

    def covariance(self):
        return self.sigma.entries - np.outer(self.u, self.u)


@dataclass(frozen=True, eq=False)
class EmpiricalDataset:
    z_rows: np.ndarray
    centered: bool = False

    @property
    def n(self):
        return self.z_rows.shape[0]

    @property
    def d(self):
        return self.z_rows.shape[1]


@dataclass(frozen=True, eq=False)
class ModelStats:
    u_hat: np.ndarray
    sigma_hat: SpdMatrix
    zeta_sup: float
    ridge: float

    def to_model(self):
        return SpdModel(self.u_hat, self.sigma_hat)


def load_libsvm(path, n_features=None):
    """Parse a libsvm text file into dense features and labels in {-1, +1}.

    Label 0 is read as -1 (a common binary encoding); anything else that is
    not +-1 raises.  Indices are 1-based.
    """
    labels, rows, max_idx = [], [], 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                lab = float(parts[0])
            except ValueError:
                raise LibsvmFormatError(f"line {lineno}: bad label {parts[0]!r}") from None
            if lab == 0.0:
                lab = -1.0
            if lab not in (-1.0, 1.0):
                raise LibsvmFormatError(f"line {lineno}: non-binary label {parts[0]!r}")
            entries = []
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    idx, val = int(idx), float(val)
                except ValueError:
                    raise LibsvmFormatError(f"line {lineno}: bad entry {tok!r}") from None
                if not sep or idx < 1:
                    raise LibsvmFormatError(f"line {lineno}: bad entry {tok!r}")
                entries.append((idx, val))
                max_idx = max(max_idx, idx)
            labels.append(lab)
            rows.append(entries)
    d = max_idx if n_features is None else int(n_features)
    if max_idx > d:
        raise LibsvmFormatError(f"feature index {max_idx} exceeds n_features={d}")
    x = np.zeros((len(rows), d))
    for r, entries in enumerate(rows):
        for idx, val in entries:
            x[r, idx - 1] = val
    return x, np.array(labels)


def center_and_fold(features, labels):
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DimensionError(f"features {x.shape} and labels {y.shape} do not match")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be in {-1, +1}")
    if x.shape[0]:
        x = x - x.mean(axis=0)
    return EmpiricalDataset(-y[:, None] * x, centered=True)


def compute_stats(ds, ridge=None):
    z = ds.z_rows
    n, d = z.shape
    if n < 1:
        raise ValueError("empty dataset")
    u_hat = z.mean(axis=0)
    second = (z.T @ z) / n
    if ridge is None:
        ridge = 1e-8 * np.trace(second) / d
    sig = second + ridge * np.eye(d)
    try:
        sigma_hat = SpdMatrix.from_array(sig)
    except (NotPositiveDefiniteError, linalg.LinAlgError) as exc:
        raise NotPositiveDefiniteError(f"second moment not positive definite with ridge={ridge}") from exc
    # lambda_max(Z^T Z)/10, divided by n because objectives here are sample means
    top = float(linalg.eigh(second, eigvals_only=True, subset_by_index=[d - 1, d - 1])[0])
    return ModelStats(u_hat, sigma_hat, top / 10.0, float(ridge))


def covariance_factor(cov):
    """Factor C with C C^T = cov, valid for semidefinite input."""
    ev, vec = linalg.eigh(cov)
    if ev[0] < -1e-10 * max(abs(ev[-1]), 1.0):
        raise NotPositiveDefiniteError(f"covariance has eigenvalue {ev[0]:.3e}")
    return vec * np.sqrt(np.clip(ev, 0.0, None))


def sample_gaussian(m, n, seed):
    rng = np.random.default_rng(seed)
    c = covariance_factor(m.covariance())
    g = rng.standard_normal((int(n), m.dim))
    return EmpiricalDataset(m.u + g @ c.T, centered=False)
