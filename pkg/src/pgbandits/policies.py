"""Bandit policies behind one select/observe interface.

Four learners are provided:

* :class:`PgTsPolicy` -- Thompson sampling over the exact logistic
  posterior, approached by a Polya-Gamma Gibbs sampler warm-started from
  the previous round's coefficient draw.  ``burn_in`` sweeps run per
  round; ``burn_in=1`` is the streaming variant.
* :class:`LaplaceTsPolicy` -- Thompson sampling over a diagonal Gaussian
  fit at the posterior mode, updated one observation at a time.
* :class:`GlmUcbPolicy` -- a frequentist upper-confidence baseline around
  the ridge-regularized logistic MLE.
* :class:`UniformPolicy` -- uniform arm choice, used both as a control
  and as the logging policy that makes offline replay unbiased.

Every policy exposes ``select_arm(contexts, rng)``, ``observe(context,
reward, arm)``, and ``score_one(context, rng)`` (the latter scores a
single arm under the policy's own model and is what per-arm composite
evaluation uses).  ``select_arm`` never mutates learning state and breaks
ties toward the lowest arm index; ``observe`` appends exactly one history
row.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from .gaussian import (
    DesignBundle,
    GaussianBelief,
    cholesky,
    pg_conditional_posterior,
    sample_mvn,
)
from .pg import sample_pg1_batch

__all__ = [
    "ConvergenceError",
    "sigmoid",
    "BanditHistory",
    "gibbs_sweep",
    "PgTsPolicy",
    "LaplaceState",
    "laplace_fit_step",
    "laplace_update",
    "laplace_select_arm",
    "LaplaceTsPolicy",
    "glm_mle",
    "glmucb_select_arm",
    "GlmUcbPolicy",
    "uniform_select_arm",
    "UniformPolicy",
    "make_policy",
    "POLICY_NAMES",
]


class ConvergenceError(RuntimeError):
    """An inner Newton solve failed to reach its tolerance."""


def sigmoid(z):
    """Logistic link 1 / (1 + exp(-z)), stable over the full float range."""
    return expit(z)


class BanditHistory:
    """Ordered (context, arm, reward) triples with contexts in a growing buffer.

    ``x`` and ``kappa`` expose zero-copy views of the filled rows, which
    keeps the per-sweep cost of the Gibbs loop at the BLAS calls.  An
    optional ``cap`` keeps only the most recent rows (off by default).
    """

    def __init__(self, d: int, cap: int | None = None):
        if d < 1:
            raise ValueError(f"context dimension must be >= 1, got {d}")
        if cap is not None and cap < 1:
            raise ValueError(f"history cap must be >= 1, got {cap}")
        self.d = d
        self.cap = cap
        self._x = np.empty((64, d))
        self._rewards = np.empty(64)
        self._arms: list[int] = []
        self._n = 0

    def __len__(self) -> int:
        return self._n

    @property
    def x(self) -> np.ndarray:
        return self._x[: self._n]

    @property
    def rewards(self) -> np.ndarray:
        return self._rewards[: self._n]

    @property
    def kappa(self) -> np.ndarray:
        return self.rewards - 0.5

    @property
    def arms(self) -> list[int]:
        return list(self._arms)

    def append(self, context, reward, arm: int = -1) -> None:
        context = np.asarray(context, dtype=np.float64)
        if context.shape != (self.d,):
            raise ValueError(
                f"context shape {context.shape} does not match dimension {self.d}"
            )
        if reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {reward!r}")
        if self.cap is not None and self._n == self.cap:
            self._x[:-1] = self._x[1:self._n]
            self._rewards[:-1] = self._rewards[1:self._n]
            del self._arms[0]
            self._n -= 1
        if self._n == self._x.shape[0]:
            grow = max(2 * self._n, 64)
            x = np.empty((grow, self.d))
            x[: self._n] = self._x[: self._n]
            self._x = x
            r = np.empty(grow)
            r[: self._n] = self._rewards[: self._n]
            self._rewards = r
        self._x[self._n] = context
        self._rewards[self._n] = float(reward)
        self._arms.append(int(arm))
        self._n += 1


def _chol_solve_vec(lo: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = solve_triangular(lo, b, lower=True, check_finite=False)
    return solve_triangular(lo.T, y, lower=False, check_finite=False)


def _as_context_matrix(contexts, d: int | None = None) -> np.ndarray:
    x = np.asarray(contexts, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("contexts must be a nonempty list of equally sized vectors")
    if d is not None and x.shape[1] != d:
        raise ValueError(f"contexts have {x.shape[1]} features, expected {d}")
    return x


# ---------------------------------------------------------------------------
# PG-TS
# ---------------------------------------------------------------------------


def gibbs_sweep(
    history: BanditHistory,
    theta_in: np.ndarray,
    prior: GaussianBelief,
    rng: np.random.Generator,
) -> np.ndarray:
    """One Gibbs sweep: PG draws given theta, then a Gaussian draw of theta.

    Draws omega_i ~ PG(1, x_i . theta_in) for every history row, then
    samples from the resulting conditional Gaussian posterior.  Exactly
    one PG variate is consumed per history row.
    """
    if len(history) == 0:
        raise ValueError("gibbs_sweep requires a nonempty history")
    omega = sample_pg1_batch(history.x @ theta_in, rng)
    bundle = DesignBundle(history.x, history.kappa, omega)
    return sample_mvn(pg_conditional_posterior(bundle, prior), rng)


class PgTsPolicy:
    """Thompson sampling with a Polya-Gamma Gibbs posterior approximation.

    Each round warm-starts the Gibbs chain at the previous round's
    coefficient draw and runs ``burn_in`` sweeps over the full history;
    the final state scores the arms.  With an empty history the draw
    comes straight from the prior.  ``burn_in=1`` is the streaming
    variant, which relies on the chain mixing across rounds instead of
    within one.
    """

    name = "pg-ts"

    def __init__(
        self,
        prior: GaussianBelief,
        burn_in: int = 100,
        history_cap: int | None = None,
    ):
        if burn_in < 1:
            raise ValueError(f"burn_in must be >= 1, got {burn_in}")
        self.prior = prior
        self.burn_in = burn_in
        self.history = BanditHistory(prior.dim, cap=history_cap)
        self.theta = None

    def _advance_chain(self, rng: np.random.Generator) -> np.ndarray:
        if len(self.history) == 0:
            theta = sample_mvn(self.prior, rng)
        else:
            theta = self.theta if self.theta is not None else sample_mvn(self.prior, rng)
            for _ in range(self.burn_in):
                theta = gibbs_sweep(self.history, theta, self.prior, rng)
        self.theta = theta
        return theta

    def select_arm(self, contexts, rng: np.random.Generator) -> int:
        x = _as_context_matrix(contexts, self.prior.dim)
        theta = self._advance_chain(rng)
        # sigmoid is monotone, so the linear scores share their argmax
        return int(np.argmax(x @ theta))

    def score_one(self, context, rng: np.random.Generator) -> float:
        x = np.asarray(context, dtype=np.float64)
        theta = self._advance_chain(rng)
        return float(sigmoid(x @ theta))

    def observe(self, context, reward, arm: int = -1) -> None:
        self.history.append(context, reward, arm)


# ---------------------------------------------------------------------------
# Laplace-TS
# ---------------------------------------------------------------------------


class LaplaceState:
    """Mode vector m and per-coordinate precisions q of the diagonal fit."""

    def __init__(self, m, q):
        self.m = np.asarray(m, dtype=np.float64)
        self.q = np.asarray(q, dtype=np.float64)
        if self.m.shape != self.q.shape or self.m.ndim != 1:
            raise ValueError("m and q must be vectors of equal length")
        if not np.all(self.q > 0.0):
            raise ValueError("all precisions q must be strictly positive")

    @classmethod
    def initial(cls, d: int, regularizer: float = 1.0) -> "LaplaceState":
        return cls(np.zeros(d), np.full(d, float(regularizer)))


def laplace_fit_step(
    state: LaplaceState,
    x: np.ndarray,
    y: int,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> np.ndarray:
    """Minimize 0.5 sum q_i (w_i - m_i)^2 - log sigmoid(y x.w) over w.

    The objective is smooth and strictly convex (q_i > 0), so damped
    Newton converges; y is the +-1 encoding of the binary reward.
    """
    x = np.asarray(x, dtype=np.float64)
    if y not in (-1, 1):
        raise ValueError(f"y must be +1 or -1, got {y!r}")
    m, q = state.m, state.q

    def objective(w):
        s = y * (x @ w)
        return 0.5 * np.sum(q * (w - m) ** 2) + np.logaddexp(0.0, -s)

    w = m.copy()
    for _ in range(max_iter):
        s = y * (x @ w)
        p = sigmoid(s)
        grad = q * (w - m) - (1.0 - p) * y * x
        if np.linalg.norm(grad) <= tol:
            return w
        curv = p * (1.0 - p)
        hess = np.diag(q) + curv * np.outer(x, x)
        lo = cholesky(hess)
        step = _chol_solve_vec(lo, grad)
        # backtrack on the rare step that overshoots
        f0 = objective(w)
        scale = 1.0
        for _ in range(30):
            trial = w - scale * step
            if objective(trial) <= f0:
                break
            scale *= 0.5
        w = w - scale * step
    s = y * (x @ w)
    p = sigmoid(s)
    grad = q * (w - m) - (1.0 - p) * y * x
    if np.linalg.norm(grad) <= tol:
        return w
    raise ConvergenceError(
        f"mode fit did not reach gradient norm {tol:g} within {max_iter} iterations"
    )


def laplace_update(state: LaplaceState, x, reward) -> LaplaceState:
    """Fold one (context, reward) pair into the diagonal Gaussian fit.

    Refits the mode with the +-1 encoded reward, then inflates each
    coordinate precision by p(1-p) x_i^2 at the new mode.
    """
    x = np.asarray(x, dtype=np.float64)
    if reward not in (0, 1):
        raise ValueError(f"reward must be 0 or 1, got {reward!r}")
    y = 2 * int(reward) - 1
    w = laplace_fit_step(state, x, y)
    p = float(sigmoid(x @ w))
    q = state.q + p * (1.0 - p) * x ** 2
    return LaplaceState(w, q)


def laplace_select_arm(
    state: LaplaceState, contexts, rng: np.random.Generator
) -> int:
    """Thompson step: draw theta from MVN(m, diag(1/q)), pick the best arm."""
    x = _as_context_matrix(contexts, state.m.size)
    theta = state.m + rng.standard_normal(state.m.size) / np.sqrt(state.q)
    return int(np.argmax(x @ theta))


class LaplaceTsPolicy:
    """Laplace-approximated Thompson sampling with diagonal covariance."""

    name = "laplace-ts"

    def __init__(self, d: int, regularizer: float = 1.0):
        if regularizer <= 0:
            raise ValueError(f"regularizer must be positive, got {regularizer}")
        self.regularizer = float(regularizer)
        self.state = LaplaceState.initial(d, regularizer)
        self.history = BanditHistory(d)

    def select_arm(self, contexts, rng: np.random.Generator) -> int:
        return laplace_select_arm(self.state, contexts, rng)

    def score_one(self, context, rng: np.random.Generator) -> float:
        x = np.asarray(context, dtype=np.float64)
        theta = self.state.m + rng.standard_normal(x.size) / np.sqrt(self.state.q)
        return float(sigmoid(x @ theta))

    def observe(self, context, reward, arm: int = -1) -> None:
        self.history.append(context, reward, arm)
        self.state = laplace_update(self.state, context, reward)


# ---------------------------------------------------------------------------
# GLM-UCB
# ---------------------------------------------------------------------------


def glm_mle(
    history: BanditHistory,
    regularizer: float,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> np.ndarray:
    """Ridge-regularized logistic maximum likelihood via Newton/IRLS.

    Minimizes the negative log-likelihood plus (regularizer/2) ||theta||^2;
    an empty history returns the zero vector (the pure penalty optimum).
    """
    if regularizer <= 0:
        raise ValueError(f"regularizer must be positive, got {regularizer}")
    theta = np.zeros(history.d)
    if len(history) == 0:
        return theta
    x, r = history.x, history.rewards
    for _ in range(max_iter):
        p = sigmoid(x @ theta)
        grad = x.T @ (p - r) + regularizer * theta
        if np.linalg.norm(grad) <= tol:
            return theta
        w = p * (1.0 - p)
        hess = (x * w[:, None]).T @ x + regularizer * np.eye(history.d)
        lo = cholesky(hess)
        theta = theta - _chol_solve_vec(lo, grad)
    p = sigmoid(x @ theta)
    grad = x.T @ (p - r) + regularizer * theta
    if np.linalg.norm(grad) <= tol:
        return theta
    raise ConvergenceError(
        f"logistic MLE did not reach gradient norm {tol:g} within {max_iter} iterations"
    )


def glmucb_select_arm(
    history: BanditHistory,
    contexts,
    t: int,
    alpha: float = 1.0,
    regularizer: float = 1.0,
) -> int:
    """Pick argmax of sigmoid(x.theta_hat) + alpha sqrt(log t) ||x||_{M^-1}.

    M is regularizer * I plus the sum of outer products of observed
    contexts, and the norm is the Mahalanobis norm sqrt(x' M^-1 x).  The
    exploration schedule alpha sqrt(log t) is a configurable default; it
    is recorded in experiment metadata because the baseline's original
    tuning is not fixed by any single convention.
    """
    if t < 1:
        raise ValueError(f"round index t must be >= 1, got {t}")
    x = _as_context_matrix(contexts, history.d)
    theta = glm_mle(history, regularizer)
    m = regularizer * np.eye(history.d)
    if len(history) > 0:
        m = m + history.x.T @ history.x
    lo = cholesky(m)
    # ||x||_{M^-1} per arm through one triangular solve
    v = solve_triangular(lo, x.T, lower=True, check_finite=False)
    widths = np.sqrt(np.sum(v * v, axis=0))
    scores = sigmoid(x @ theta) + alpha * np.sqrt(np.log(t)) * widths
    return int(np.argmax(scores))


class GlmUcbPolicy:
    """Upper-confidence baseline around the regularized logistic MLE."""

    name = "glm-ucb"

    def __init__(self, d: int, alpha: float = 1.0, regularizer: float = 1.0):
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        if regularizer <= 0:
            raise ValueError(f"regularizer must be positive, got {regularizer}")
        self.alpha = float(alpha)
        self.regularizer = float(regularizer)
        self.history = BanditHistory(d)
        self._mle_cache: tuple[int, np.ndarray] | None = None

    def _theta_hat(self) -> np.ndarray:
        n = len(self.history)
        if self._mle_cache is None or self._mle_cache[0] != n:
            self._mle_cache = (n, glm_mle(self.history, self.regularizer))
        return self._mle_cache[1]

    def _round(self) -> int:
        # data-driven round counter: one more than the observations seen
        return len(self.history) + 1

    def select_arm(self, contexts, rng: np.random.Generator) -> int:
        return glmucb_select_arm(
            self.history, contexts, self._round(), self.alpha, self.regularizer
        )

    def score_one(self, context, rng: np.random.Generator) -> float:
        x = np.asarray(context, dtype=np.float64)
        theta = self._theta_hat()
        m = self.regularizer * np.eye(self.history.d)
        if len(self.history) > 0:
            m = m + self.history.x.T @ self.history.x
        lo = cholesky(m)
        v = solve_triangular(lo, x, lower=True, check_finite=False)
        width = float(np.sqrt(v @ v))
        return float(sigmoid(x @ theta)) + self.alpha * np.sqrt(
            np.log(self._round())
        ) * width

    def observe(self, context, reward, arm: int = -1) -> None:
        self.history.append(context, reward, arm)


# ---------------------------------------------------------------------------
# uniform baseline
# ---------------------------------------------------------------------------


def uniform_select_arm(contexts, rng: np.random.Generator) -> int:
    """Uniformly random arm index."""
    x = _as_context_matrix(contexts)
    return int(rng.integers(x.shape[0]))


class UniformPolicy:
    """Uniform-at-random arm choice; also the logging policy for replay."""

    name = "uniform"

    def __init__(self, d: int):
        self.history = BanditHistory(d)

    def select_arm(self, contexts, rng: np.random.Generator) -> int:
        return uniform_select_arm(contexts, rng)

    def score_one(self, context, rng: np.random.Generator) -> float:
        return float(rng.random())

    def observe(self, context, reward, arm: int = -1) -> None:
        self.history.append(context, reward, arm)


# ---------------------------------------------------------------------------
# construction by name
# ---------------------------------------------------------------------------

POLICY_NAMES = ("pg-ts", "pg-ts-stream", "laplace-ts", "glm-ucb", "uniform")


def make_policy(
    name: str,
    d: int,
    prior_mean: float = 0.0,
    prior_scale: float = 1.0,
    burn_in: int = 100,
    laplace_reg: float = 1.0,
    ucb_alpha: float = 1.0,
    ucb_reg: float = 1.0,
    history_cap: int | None = None,
):
    """Build a policy from its configuration name and hyperparameters.

    ``pg-ts-stream`` is ``pg-ts`` with ``burn_in`` pinned to 1; the two
    names share one implementation.
    """
    if name == "pg-ts" or name == "pg-ts-stream":
        prior = GaussianBelief(
            np.full(d, float(prior_mean)), float(prior_scale) * np.eye(d)
        )
        m = 1 if name == "pg-ts-stream" else burn_in
        return PgTsPolicy(prior, burn_in=m, history_cap=history_cap)
    if name == "laplace-ts":
        return LaplaceTsPolicy(d, regularizer=laplace_reg)
    if name == "glm-ucb":
        return GlmUcbPolicy(d, alpha=ucb_alpha, regularizer=ucb_reg)
    if name == "uniform":
        return UniformPolicy(d)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
