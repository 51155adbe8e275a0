"""Seeded experiment harness with CSV output.

Four commands:

* ``simulate``     -- run a policy against a simulated environment for R
  independent runs and write per-run and aggregate regret traces.
* ``replay``       -- evaluate a policy offline against a JSON-lines
  impression log with delayed batch updates, writing CTR traces.
* ``prep-dataset`` -- run the CSV-to-environment ingestion pipeline and
  write an environment bundle.
* ``pg-diagnose``  -- moment and acceptance-rate diagnostics of the
  Polya-Gamma sampler; exits nonzero when they fail.

Configuration comes from built-in presets, an optional JSON config file,
and command-line flags, in increasing order of precedence.  Every
defaulted hyperparameter is echoed into ``metadata.json`` next to the
CSVs.  Runs are seeded by spawning one child seed per run index from the
master seed, so a config plus master seed reproduces every output byte
for byte, and individual runs are independent of execution order.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .envs import make_cluster_env, make_gaussian_env, make_mixture_env, run_bandit
from .ingest import load_bundle, prep_dataset, save_bundle
from .pg import pg_mean, reset_sampler_stats, sample_pg1, sampler_stats
from .policies import POLICY_NAMES, make_policy
from .replay import (
    disjoint_policy_factory,
    read_log,
    replay,
    shared_policy_factory,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PRESETS",
    "RunRecord",
    "aggregate",
    "run_experiment",
    "pg_diagnose",
    "main",
]

OUTDIR_ENV_VAR = "PGBANDITS_OUTDIR"


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


PRESETS: dict[str, dict] = {
    # 100 Gaussian arms, 10 features, contexts centered at -3
    "gaussian-sim": {
        "env": "gaussian",
        "n_arms": 100,
        "n_features": 10,
        "context_mean": -3.0,
        "rounds": 1000,
        "runs": 100,
    },
    # misspecified coefficients from a 4-component mixture, longer horizon
    "mixture-sim": {
        "env": "mixture",
        "n_arms": 100,
        "n_features": 10,
        "context_mean": 0.0,
        "rounds": 5000,
        "runs": 100,
    },
    # cluster-backed environment from a prepared bundle
    "cluster-sim": {
        "env": "cluster",
        "n_arms": 32,
        "rounds": 1000,
        "runs": 100,
    },
}


@dataclass
class ExperimentConfig:
    """Everything one ``simulate`` or ``replay`` invocation needs."""

    command: str
    out: str
    seed: int = 0
    runs: int = 1
    rounds: int = 1000
    policy: str = "pg-ts"
    prior_mean: float = 0.0
    prior_scale: float = 1.0
    burn_in: int = 100
    laplace_reg: float = 1.0
    ucb_alpha: float = 1.0
    ucb_reg: float = 1.0
    env: str = "gaussian"
    n_arms: int = 100
    n_features: int = 10
    context_mean: float = -3.0
    env_bundle: str | None = None
    preset: str | None = None
    log: str | None = None
    update_batch: int = 100
    budget: int | None = None
    disjoint: bool = False

    def __post_init__(self):
        if self.command not in ("simulate", "replay"):
            raise ConfigError(f"unknown command {self.command!r}")
        if self.policy not in POLICY_NAMES:
            raise ConfigError(
                f"unknown policy {self.policy!r}; expected one of {POLICY_NAMES}"
            )
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if self.burn_in < 1:
            raise ConfigError(f"burn-in must be >= 1, got {self.burn_in}")
        if self.update_batch < 1:
            raise ConfigError(f"update-batch must be >= 1, got {self.update_batch}")
        if self.command == "simulate":
            if self.env not in ("gaussian", "mixture", "cluster"):
                raise ConfigError(f"unknown environment {self.env!r}")
            if self.env == "cluster" and not self.env_bundle:
                raise ConfigError("cluster environment needs --env-bundle")
            if self.env != "cluster" and self.n_arms < 2:
                raise ConfigError(f"need at least 2 arms, got {self.n_arms}")
        if self.command == "replay" and not self.log:
            raise ConfigError("replay needs --log")

    def policy_kwargs(self, d: int) -> dict:
        return {
            "name": self.policy,
            "d": d,
            "prior_mean": self.prior_mean,
            "prior_scale": self.prior_scale,
            "burn_in": self.burn_in,
            "laplace_reg": self.laplace_reg,
            "ucb_alpha": self.ucb_alpha,
            "ucb_reg": self.ucb_reg,
        }


@dataclass
class RunRecord:
    """One run's per-row trace, already flattened for CSV writing."""

    run_index: int
    columns: dict[str, list] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def aggregate(traces: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and n-1 standard deviation across equal-length traces."""
    if not traces:
        raise ValueError("nothing to aggregate")
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise ValueError(f"trace lengths differ: {sorted(lengths)}")
    stacked = np.vstack([np.asarray(t, dtype=np.float64) for t in traces])
    mean = stacked.mean(axis=0)
    if stacked.shape[0] == 1:
        std = np.zeros_like(mean)
    else:
        std = stacked.std(axis=0, ddof=1)
    return mean, std


def _run_seeds(master_seed: int, n_runs: int):
    # child 0 seeds the environment, children 1..R the runs; each child is
    # a pure function of (master seed, index), so runs are order-independent
    return np.random.SeedSequence(master_seed).spawn(n_runs + 1)


def _build_env(config: ExperimentConfig, env_seed):
    if config.env == "gaussian":
        return make_gaussian_env(
            config.n_arms, config.n_features, config.context_mean, env_seed
        )
    if config.env == "mixture":
        return make_mixture_env(config.n_arms, config.n_features, env_seed)
    bundle = load_bundle(config.env_bundle)
    return make_cluster_env(bundle["centroids"], bundle["rates"])


def run_experiment(config: ExperimentConfig) -> dict:
    """Execute all runs, write CSVs and metadata, and return the metadata."""
    t_start = time.time()
    os.makedirs(config.out, exist_ok=True)
    runs_dir = os.path.join(config.out, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    seeds = _run_seeds(config.seed, config.runs)

    records: list[RunRecord] = []
    statuses: list[dict] = []
    env_summary: dict = {}

    if config.command == "simulate":
        env = _build_env(config, seeds[0])
        d = env.arm_contexts.shape[1]
        env_summary = {
            "n_arms": int(env.n_arms),
            "n_features": int(d),
            "optimal_arm": int(env.optimal_arm),
            "optimal_mean": float(env.arm_means[env.optimal_arm]),
            "average_mean": float(np.mean(env.arm_means)),
        }
        for i in range(config.runs):
            rng = np.random.default_rng(seeds[i + 1])
            policy = make_policy(**config.policy_kwargs(d))
            try:
                trace = run_bandit(policy, env, config.rounds, rng)
            except Exception as e:  # noqa: BLE001 - recorded, not swallowed silently
                statuses.append({"run": i, "status": "failed", "error": repr(e)})
                continue
            statuses.append({"run": i, "status": "ok"})
            rec = RunRecord(
                run_index=i,
                columns={
                    "t": list(range(1, len(trace) + 1)),
                    "arm": trace.arms.tolist(),
                    "reward": trace.rewards.tolist(),
                    "inst_regret": trace.inst_regret.tolist(),
                    "cum_regret": trace.cum_regret.tolist(),
                },
            )
            records.append(rec)
        header = ["run", "t", "arm", "reward", "inst_regret", "cum_regret"]
        value_key = "cum_regret"
        index_key = "t"
    else:
        events = list(read_log(config.log))
        if not events:
            raise ConfigError(f"log {config.log!r} holds no events")
        d = events[0].pool[0][1].size
        env_summary = {
            "log": config.log,
            "n_events": len(events),
            "n_features": int(d),
            "logging_policy_assumed": "uniform display (required for unbiased replay)",
        }
        for i in range(config.runs):
            factory_fn = (
                disjoint_policy_factory if config.disjoint else shared_policy_factory
            )
            factory = factory_fn(seeds[i + 1], **config.policy_kwargs(d))
            try:
                report = replay(
                    factory,
                    events,
                    update_batch=config.update_batch,
                    budget=config.budget,
                )
            except Exception as e:  # noqa: BLE001
                statuses.append({"run": i, "status": "failed", "error": repr(e)})
                continue
            statuses.append({"run": i, "status": "ok"})
            rec = RunRecord(
                run_index=i,
                columns={
                    "valid_t": list(range(1, report.valid_events + 1)),
                    "arm": report.arms,
                    "reward": report.rewards.tolist(),
                    "ctr": report.ctr_trace.tolist(),
                },
            )
            records.append(rec)
        header = ["run", "valid_t", "arm", "reward", "ctr"]
        value_key = "ctr"
        index_key = "valid_t"

    if not records:
        raise RuntimeError("all runs failed; see metadata for errors")

    for rec in records:
        cols = [[rec.run_index] * len(rec)]
        cols += [rec.columns[k] for k in header[1:]]
        _write_csv(
            os.path.join(runs_dir, f"run_{rec.run_index:03d}.csv"), header, zip(*cols)
        )

    # replay traces can differ in length across runs; aggregate the common prefix
    common = min(len(r) for r in records)
    mean, std = aggregate([r.columns[value_key][:common] for r in records])
    agg_header = [index_key, f"mean_{value_key}", f"std_{value_key}"]
    agg_rows = zip(records[0].columns[index_key][:common], mean, std)
    _write_csv(os.path.join(config.out, "aggregate.csv"), agg_header, agg_rows)

    metadata = {
        "version": __version__,
        "config": asdict(config),
        "environment": env_summary,
        "runs": statuses,
        "n_completed": len(records),
        "aggregate_rows": int(common),
        "wall_clock_seconds": time.time() - t_start,
        "notes": {
            "per_run_seed": "SeedSequence(master).spawn(runs+1); child 0 is the environment",
            "glm_ucb_exploration": "alpha * sqrt(log t) * ||x||_{M^-1} (default alpha=1; schedule is a package default)",
        },
    }
    with open(os.path.join(config.out, "metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2)
        fh.write("\n")
    return metadata


# ---------------------------------------------------------------------------
# sampler diagnostics
# ---------------------------------------------------------------------------


def pg_diagnose(
    c_grid=(0.0, 1.0, 4.0, 10.0),
    n_draws: int = 100_000,
    seed: int = 0,
    sampler=None,
) -> tuple[list[dict], bool]:
    """Moment and acceptance diagnostics of the PG(1, c) sampler.

    For each tilt: empirical mean of ``n_draws`` draws, the series-oracle
    mean, the z-score of their difference, and the measured acceptance
    rate.  Fails when any acceptance rate drops below 0.999 or any |z|
    exceeds 4.  ``sampler`` may inject a replacement draw function for
    fault testing.
    """
    if n_draws < 1000:
        raise ValueError(f"need at least 1000 draws, got {n_draws}")
    draw = sampler if sampler is not None else sample_pg1
    rng = np.random.default_rng(seed)
    rows = []
    ok = True
    for c in c_grid:
        reset_sampler_stats()
        draws = np.array([draw(c, rng) for _ in range(n_draws)])
        stats = sampler_stats()
        acceptance = stats.acceptance_rate
        oracle = pg_mean(1, c)
        se = draws.std(ddof=1) / math.sqrt(n_draws)
        z = (draws.mean() - oracle) / se
        row_ok = abs(z) <= 4.0 and not (
            math.isfinite(acceptance) and acceptance < 0.999
        )
        ok = ok and row_ok
        rows.append(
            {
                "c": float(c),
                "empirical_mean": float(draws.mean()),
                "oracle_mean": float(oracle),
                "z": float(z),
                "acceptance": float(acceptance),
                "ok": bool(row_ok),
            }
        )
    reset_sampler_stats()
    return rows, ok


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument(
        "--out",
        help=f"output directory (default ${OUTDIR_ENV_VAR} or ./pgbandits-out)",
    )


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=POLICY_NAMES)
    p.add_argument("--runs", type=int)
    p.add_argument("--prior-mean", type=float)
    p.add_argument("--prior-scale", type=float)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--laplace-reg", type=float)
    p.add_argument("--ucb-alpha", type=float)
    p.add_argument("--ucb-reg", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgbandits",
        description="Polya-Gamma Thompson sampling experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run policies against a simulated environment")
    _add_common(sim)
    _add_policy_flags(sim)
    sim.add_argument("--preset", choices=sorted(PRESETS))
    sim.add_argument("--env", choices=("gaussian", "mixture", "cluster"))
    sim.add_argument("--rounds", type=int)
    sim.add_argument("--arms", type=int, dest="n_arms")
    sim.add_argument("--features", type=int, dest="n_features")
    sim.add_argument("--context-mean", type=float)
    sim.add_argument("--env-bundle", help="environment bundle JSON (cluster env)")

    rep = sub.add_parser("replay", help="offline replay evaluation on a log")
    _add_common(rep)
    _add_policy_flags(rep)
    rep.add_argument("--log", help="JSON-lines impression log")
    rep.add_argument("--update-batch", type=int)
    rep.add_argument("--budget", type=int)
    rep.add_argument("--disjoint", action="store_true", default=None)

    prep = sub.add_parser("prep-dataset", help="CSV to environment bundle")
    _add_common(prep)
    prep.add_argument("--csv", required=True)
    prep.add_argument("--schema", required=True)
    prep.add_argument("--k", type=int, default=32)
    prep.add_argument("--batch-size", type=int, default=1024)
    prep.add_argument("--iterations", type=int, default=200)

    diag = sub.add_parser("pg-diagnose", help="Polya-Gamma sampler diagnostics")
    diag.add_argument("--c-grid", default="0,1,4,10", help="comma-separated tilts")
    diag.add_argument("--draws", type=int, default=100_000)
    diag.add_argument("--seed", type=int, default=0)

    return parser


def _default_out() -> str:
    return os.environ.get(OUTDIR_ENV_VAR, "pgbandits-out")


def _merge_config(args: argparse.Namespace) -> ExperimentConfig:
    merged: dict = {"command": args.command}
    if getattr(args, "preset", None):
        merged["preset"] = args.preset
        merged.update(PRESETS[args.preset])
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            merged.update(json.load(fh))
    for key, value in vars(args).items():
        if key in ("command", "config", "preset") or value is None:
            continue
        merged[key] = value
    merged.setdefault("out", _default_out())
    try:
        return ExperimentConfig(**merged)
    except TypeError as e:
        raise ConfigError(f"bad config field: {e}") from e


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "prep-dataset":
        out = args.out or _default_out()
        os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
        seed = args.seed if args.seed is not None else 0
        bundle = prep_dataset(
            args.csv,
            args.schema,
            k=args.k,
            batch_size=args.batch_size,
            iterations=args.iterations,
            seed=seed,
        )
        path = out if out.endswith(".json") else os.path.join(out, "env_bundle.json")
        if os.path.dirname(path):
            os.makedirs(os.path.dirname(path), exist_ok=True)
        save_bundle(bundle, path)
        rates = bundle["rates"]
        print(
            f"wrote {path}: k={len(rates)} arms, rates in "
            f"[{min(rates):.3f}, {max(rates):.3f}]"
        )
        return 0

    if args.command == "pg-diagnose":
        grid = [float(v) for v in str(args.c_grid).split(",") if v.strip() != ""]
        rows, ok = pg_diagnose(grid, n_draws=args.draws, seed=args.seed)
        print(f"{'c':>8} {'mean':>12} {'oracle':>12} {'z':>8} {'accept':>9}  status")
        for row in rows:
            print(
                f"{row['c']:8.3f} {row['empirical_mean']:12.6f} "
                f"{row['oracle_mean']:12.6f} {row['z']:8.2f} "
                f"{row['acceptance']:9.5f}  {'ok' if row['ok'] else 'FAIL'}"
            )
        return 0 if ok else 1

    try:
        config = _merge_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        metadata = run_experiment(config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    print(
        f"{config.command}: {metadata['n_completed']}/{config.runs} runs ok, "
        f"outputs in {config.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
