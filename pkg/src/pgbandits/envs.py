"""Ground-truth environments and regret accounting.

Two environment kinds share one stepping interface: simulation
environments with a true coefficient vector (arm means sigmoid(x . theta*))
and cluster-backed environments whose arm means are empirical rates.  Arm
contexts are drawn once and held fixed across rounds; rewards are
independent Bernoulli draws given the arm.

Instantaneous regret of playing arm a is the mean gap
mean[optimal] - mean[a]; :func:`run_bandit` accumulates it per round into
a :class:`RegretTrace`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policies import sigmoid

__all__ = [
    "SimEnvironment",
    "ClusterEnvironment",
    "RegretTrace",
    "make_gaussian_env",
    "make_mixture_theta",
    "make_mixture_env",
    "make_cluster_env",
    "env_step",
    "instant_regret",
    "run_bandit",
]


@dataclass(frozen=True)
class SimEnvironment:
    """Fixed arm contexts with a true coefficient vector behind the rewards."""

    arm_contexts: np.ndarray  # K x d
    theta_star: np.ndarray
    arm_means: np.ndarray
    optimal_arm: int

    @property
    def n_arms(self) -> int:
        return self.arm_contexts.shape[0]


@dataclass(frozen=True)
class ClusterEnvironment:
    """Arms are cluster centroids; rewards are Bernoulli at empirical rates."""

    arm_contexts: np.ndarray  # K x d centroids
    arm_rates: np.ndarray

    @property
    def arm_means(self) -> np.ndarray:
        return self.arm_rates

    @property
    def optimal_arm(self) -> int:
        return int(np.argmax(self.arm_rates))

    @property
    def n_arms(self) -> int:
        return self.arm_contexts.shape[0]


@dataclass
class RegretTrace:
    """Per-round record of one bandit run."""

    arms: np.ndarray
    rewards: np.ndarray
    inst_regret: np.ndarray
    cum_regret: np.ndarray

    def __len__(self) -> int:
        return self.arms.size


def make_gaussian_env(
    K: int, d: int, context_mean: float, seed
) -> SimEnvironment:
    """Environment with arm contexts ~ MVN(context_mean * 1, I) and theta* ~ MVN(0, I).

    Contexts are drawn once per arm and fixed for the whole run.  ``seed``
    may be an integer or an existing generator.
    """
    if K < 2:
        raise ValueError(f"need at least 2 arms, got K={K}")
    if d < 1:
        raise ValueError(f"need at least 1 feature, got d={d}")
    rng = np.random.default_rng(seed)
    contexts = rng.normal(float(context_mean), 1.0, size=(K, d))
    theta_star = rng.normal(0.0, 1.0, size=d)
    return _finish_sim_env(contexts, theta_star)


def _finish_sim_env(contexts: np.ndarray, theta_star: np.ndarray) -> SimEnvironment:
    means = sigmoid(contexts @ theta_star)
    return SimEnvironment(
        arm_contexts=contexts,
        theta_star=theta_star,
        arm_means=means,
        optimal_arm=int(np.argmax(means)),
    )


def _mixture_theta(d: int, rng: np.random.Generator) -> np.ndarray:
    # Four-component Gaussian mixture: variances ~ InverseGamma(3, 1),
    # means ~ N(-3, sigma_j^2), weights ~ Dirichlet(1, 3, 5, 7).
    sigma2 = 1.0 / rng.gamma(3.0, 1.0, size=4)
    mu = rng.normal(-3.0, np.sqrt(sigma2))
    phi = rng.dirichlet([1.0, 3.0, 5.0, 7.0])
    comp = rng.choice(4, size=d, p=phi)
    return rng.normal(mu[comp], np.sqrt(sigma2[comp]))


def make_mixture_theta(d: int, seed) -> np.ndarray:
    """Coefficient vector with i.i.d. coordinates from a 4-part Gaussian mixture."""
    if d < 1:
        raise ValueError(f"need at least 1 feature, got d={d}")
    return _mixture_theta(d, np.random.default_rng(seed))


def make_mixture_env(K: int, d: int, seed) -> SimEnvironment:
    """Misspecification environment: contexts ~ MVN(0, I), mixture theta*."""
    if K < 2:
        raise ValueError(f"need at least 2 arms, got K={K}")
    rng = np.random.default_rng(seed)
    contexts = rng.normal(0.0, 1.0, size=(K, d))
    theta_star = _mixture_theta(d, rng)
    return _finish_sim_env(contexts, theta_star)


def make_cluster_env(centroids, rates) -> ClusterEnvironment:
    """Environment whose arms are cluster centroids with empirical rates."""
    centroids = np.asarray(centroids, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    if centroids.ndim != 2:
        raise ValueError(f"centroids must be 2-D, got shape {centroids.shape}")
    if rates.shape != (centroids.shape[0],):
        raise ValueError(
            f"{centroids.shape[0]} centroids but {rates.size} rates"
        )
    if np.any(rates < 0.0) or np.any(rates > 1.0):
        raise ValueError("rates must lie in [0, 1]")
    return ClusterEnvironment(arm_contexts=centroids, arm_rates=rates)


def env_step(env, arm: int, rng: np.random.Generator) -> int:
    """Bernoulli reward for playing ``arm``."""
    means = env.arm_means
    if not 0 <= arm < means.size:
        raise ValueError(f"arm {arm} out of range [0, {means.size})")
    return int(rng.random() < means[arm])


def instant_regret(env, arm: int) -> float:
    """Mean-reward gap to the optimal arm; zero at the optimum."""
    means = env.arm_means
    if not 0 <= arm < means.size:
        raise ValueError(f"arm {arm} out of range [0, {means.size})")
    return float(means[env.optimal_arm] - means[arm])


def run_bandit(policy, env, rounds: int, rng: np.random.Generator) -> RegretTrace:
    """Play ``rounds`` select/observe cycles and record the regret trace."""
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    arms = np.empty(rounds, dtype=np.int64)
    rewards = np.empty(rounds, dtype=np.int64)
    inst = np.empty(rounds)
    contexts = env.arm_contexts
    for t in range(rounds):
        a = policy.select_arm(contexts, rng)
        r = env_step(env, a, rng)
        policy.observe(contexts[a], r, a)
        arms[t] = a
        rewards[t] = r
        inst[t] = instant_regret(env, a)
    return RegretTrace(
        arms=arms, rewards=rewards, inst_regret=inst, cum_regret=np.cumsum(inst)
    )
