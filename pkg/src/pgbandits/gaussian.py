"""Dense Gaussian beliefs and the conditional posterior of the Gibbs sweep.

Everything here is factorization based: the only route to an inverse is a
Cholesky solve, and ill-conditioned matrices get a small escalating
diagonal jitter before the factorization is declared failed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

__all__ = [
    "FactorizationError",
    "cholesky",
    "GaussianBelief",
    "DesignBundle",
    "sample_mvn",
    "pg_conditional_posterior",
]

SYMMETRY_RTOL = 1e-10
JITTER_BASE = 1e-10
JITTER_RETRIES = 3


class FactorizationError(np.linalg.LinAlgError):
    """Matrix could not be Cholesky-factorized, even with jitter."""


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    ``a`` must be symmetric to within a relative tolerance of 1e-10.  When
    the plain factorization fails, a diagonal jitter of
    ``1e-10 * trace(a)/d`` is added and escalated tenfold up to three
    times; matrices that still fail raise :class:`FactorizationError`.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = np.abs(a).max()
    asym = np.abs(a - a.T).max()
    if asym > SYMMETRY_RTOL * max(scale, 1e-300):
        raise ValueError(
            f"matrix is not symmetric: max asymmetry {asym:.3e} "
            f"exceeds {SYMMETRY_RTOL:.0e} relative"
        )
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_BASE * np.trace(a) / a.shape[0]
    eye = np.eye(a.shape[0])
    for _ in range(JITTER_RETRIES):
        try:
            return np.linalg.cholesky(a + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"matrix of shape {a.shape} is not positive definite "
        f"(jitter escalated to {jitter:.3e} without success)"
    )


@dataclass
class GaussianBelief:
    """Multivariate normal belief over a coefficient vector.

    Holds a mean vector and a symmetric positive-definite covariance.  The
    Cholesky factor, the precision matrix, and precision @ mean are
    computed lazily once and cached; they are loop invariants of the Gibbs
    sweep when the belief acts as a prior.
    """

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)
    _precision: np.ndarray | None = field(default=None, repr=False, compare=False)
    _precision_mean: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mean.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {self.mean.shape}")
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError(
                f"covariance shape {self.cov.shape} does not match "
                f"mean length {self.mean.size}"
            )

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol = cholesky(self.cov)
        return self._chol

    @property
    def precision(self) -> np.ndarray:
        if self._precision is None:
            p = cho_solve((self.chol, True), np.eye(self.dim), check_finite=False)
            self._precision = 0.5 * (p + p.T)
        return self._precision

    @property
    def precision_mean(self) -> np.ndarray:
        if self._precision_mean is None:
            self._precision_mean = cho_solve(
                (self.chol, True), self.mean, check_finite=False
            )
        return self._precision_mean


@dataclass
class DesignBundle:
    """Design matrix, centered rewards, and PG draws for one Gibbs update.

    ``x`` stacks the chosen contexts row-wise, ``kappa`` holds r_i - 1/2
    for the binary rewards r_i, and ``omega`` the positive PG draws, one
    per row.
    """

    x: np.ndarray
    kappa: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.kappa = np.asarray(self.kappa, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError(f"x must be 2-D, got shape {self.x.shape}")
        t = self.x.shape[0]
        if self.kappa.shape != (t,) or self.omega.shape != (t,):
            raise ValueError(
                f"kappa/omega lengths {self.kappa.shape}/{self.omega.shape} "
                f"do not match {t} design rows"
            )
        if t and not np.all(np.abs(self.kappa) == 0.5):
            raise ValueError("kappa entries must be +1/2 or -1/2")
        if t and not np.all(self.omega > 0.0):
            raise ValueError("omega entries must be strictly positive")

    def __len__(self) -> int:
        return self.x.shape[0]


def sample_mvn(belief: GaussianBelief, rng: np.random.Generator) -> np.ndarray:
    """One draw mean + L z with z standard normal and L the covariance factor."""
    z = rng.standard_normal(belief.dim)
    return belief.mean + belief.chol @ z


def pg_conditional_posterior(
    bundle: DesignBundle, prior: GaussianBelief
) -> GaussianBelief:
    """Gaussian conditional posterior of the coefficients given PG draws.

    Computes covariance (X' Omega X + B^-1)^-1 and mean
    cov @ (X' kappa + B^-1 b) for prior MVN(b, B), everything through
    Cholesky solves.  An empty bundle returns the prior itself.
    """
    if len(bundle) == 0:
        return prior
    if bundle.x.shape[1] != prior.dim:
        raise ValueError(
            f"design has {bundle.x.shape[1]} columns but the prior is "
            f"{prior.dim}-dimensional"
        )
    xw = bundle.x * bundle.omega[:, None]
    prec = bundle.x.T @ xw + prior.precision
    prec = 0.5 * (prec + prec.T)
    rhs = bundle.x.T @ bundle.kappa + prior.precision_mean
    lo = cholesky(prec)
    # V = prec^-1 through two triangular solves against the identity
    inv_lo = solve_triangular(
        lo, np.eye(prior.dim), lower=True, check_finite=False
    )
    cov = inv_lo.T @ inv_lo
    cov = 0.5 * (cov + cov.T)
    mean = cov @ rhs
    return GaussianBelief(mean, cov)
