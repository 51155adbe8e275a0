"""Polya-Gamma augmented Thompson sampling for logistic contextual bandits.

The package splits into:

* :mod:`pgbandits.pg`       -- exact Polya-Gamma sampling and series oracles
* :mod:`pgbandits.gaussian` -- Gaussian beliefs and the Gibbs conditional posterior
* :mod:`pgbandits.policies` -- PG-TS, Laplace-TS, GLM-UCB, and uniform policies
* :mod:`pgbandits.envs`     -- simulated environments and regret accounting
* :mod:`pgbandits.replay`   -- unbiased offline replay evaluation on logged data
* :mod:`pgbandits.ingest`   -- labeled-CSV to bandit-environment pipeline
* :mod:`pgbandits.cli`      -- the seeded experiment harness
"""

__version__ = "0.1.0"

from .gaussian import (
    DesignBundle,
    FactorizationError,
    GaussianBelief,
    cholesky,
    pg_conditional_posterior,
    sample_mvn,
)
from .pg import (
    PolyaGammaParams,
    pg_mean,
    reset_sampler_stats,
    sample_pg,
    sample_pg1,
    sample_pg1_batch,
    sample_pg_series,
    sampler_stats,
)
from .policies import (
    BanditHistory,
    GlmUcbPolicy,
    LaplaceState,
    LaplaceTsPolicy,
    PgTsPolicy,
    UniformPolicy,
    gibbs_sweep,
    glm_mle,
    glmucb_select_arm,
    laplace_fit_step,
    laplace_select_arm,
    laplace_update,
    make_policy,
    sigmoid,
    uniform_select_arm,
)
from .envs import (
    ClusterEnvironment,
    RegretTrace,
    SimEnvironment,
    env_step,
    instant_regret,
    make_cluster_env,
    make_gaussian_env,
    make_mixture_env,
    make_mixture_theta,
    run_bandit,
)
from .replay import (
    GreedyOraclePolicy,
    LogEvent,
    ReplayReport,
    disjoint_policy_factory,
    format_event,
    generate_synthetic_log,
    parse_event,
    replay,
    shared_policy_factory,
)

__all__ = [name for name in dir() if not name.startswith("_")]
