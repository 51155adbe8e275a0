"""Unbiased offline replay evaluation against logged impressions.

The evaluator walks a stream of logged events, lets the candidate policy
pick from each event's arm pool, and keeps only the events where the pick
matches what was actually displayed.  When the log was collected by a
uniformly random display policy, the click-through rate over the kept
events is an unbiased estimate of the candidate policy's online CTR.

Observations reach the policy in delayed batches: matched events queue up
and are flushed to ``observe`` only once ``update_batch`` of them have
accumulated, mimicking periodic model refreshes in production.

The log format is JSON lines, one event per line, canonical field order::

    {"id": 7, "displayed": "a2", "reward": 1,
     "pool": [{"arm": "a0", "x": [0.25, -1.5]}, ...]}

Floats are written with 17 significant digits so that parse/format round
trips are exact.  No real impression data ships with the package;
:func:`generate_synthetic_log` emits schema-identical logs from a known
ground truth, with uniform display (the assumption the unbiasedness of
rejection replay rests on).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .policies import make_policy, sigmoid

__all__ = [
    "LogParseError",
    "LogEvent",
    "ReplayReport",
    "parse_event",
    "format_event",
    "read_log",
    "write_log",
    "replay",
    "generate_synthetic_log",
    "GreedyOraclePolicy",
    "SharedReplayPolicy",
    "DisjointReplayPolicy",
    "shared_policy_factory",
    "disjoint_policy_factory",
]


class LogParseError(ValueError):
    """A log line failed validation; carries the 1-based line number."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class LogEvent:
    """One logged impression: what was shown, the reward, and the pool."""

    event_id: int
    displayed: str
    reward: int
    pool: tuple[tuple[str, np.ndarray], ...]

    @property
    def arm_ids(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.pool)

    @property
    def displayed_context(self) -> np.ndarray:
        for arm, x in self.pool:
            if arm == self.displayed:
                return x
        raise KeyError(self.displayed)


def _fmt_float(v: float) -> str:
    # 17 significant digits round-trip float64 exactly; keep a decimal
    # point so integral values stay floats when parsed back
    s = "%.17g" % v
    if s.lstrip("+-").isdigit():
        s += ".0"
    return s


def format_event(event: LogEvent) -> str:
    """Canonical one-line JSON for an event (17-significant-digit floats)."""
    pool = ", ".join(
        '{"arm": %s, "x": [%s]}'
        % (json.dumps(arm), ", ".join(_fmt_float(v) for v in x))
        for arm, x in event.pool
    )
    return '{"id": %d, "displayed": %s, "reward": %d, "pool": [%s]}' % (
        event.event_id,
        json.dumps(event.displayed),
        event.reward,
        pool,
    )


def parse_event(line: str, lineno: int | None = None) -> LogEvent:
    """Parse and validate one JSON-lines record."""
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as e:
        raise LogParseError(f"malformed JSON ({e.msg})", lineno) from e
    if not isinstance(raw, dict):
        raise LogParseError("event must be a JSON object", lineno)
    for key in ("id", "displayed", "reward", "pool"):
        if key not in raw:
            raise LogParseError(f"missing field {key!r}", lineno)
    if raw["reward"] not in (0, 1):
        raise LogParseError(f"reward must be 0 or 1, got {raw['reward']!r}", lineno)
    if not isinstance(raw["pool"], list) or not raw["pool"]:
        raise LogParseError("pool must be a nonempty list", lineno)
    pool = []
    dim = None
    for entry in raw["pool"]:
        if not isinstance(entry, dict) or "arm" not in entry or "x" not in entry:
            raise LogParseError("pool entries need 'arm' and 'x'", lineno)
        x = np.asarray(entry["x"], dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise LogParseError("context 'x' must be a nonempty flat list", lineno)
        if not np.all(np.isfinite(x)):
            raise LogParseError("context 'x' must be finite", lineno)
        if dim is None:
            dim = x.size
        elif x.size != dim:
            raise LogParseError(
                f"context dimension mismatch: {x.size} != {dim}", lineno
            )
        pool.append((str(entry["arm"]), x))
    ids = [a for a, _ in pool]
    if raw["displayed"] not in ids:
        raise LogParseError(
            f"displayed arm {raw['displayed']!r} not in pool {ids}", lineno
        )
    return LogEvent(
        event_id=int(raw["id"]),
        displayed=str(raw["displayed"]),
        reward=int(raw["reward"]),
        pool=tuple(pool),
    )


def read_log(path):
    """Yield events from a JSON-lines log file."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield parse_event(line, lineno)


def write_log(path, events) -> int:
    """Write events as canonical JSON lines; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(format_event(event))
            fh.write("\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class ReplayReport:
    """Outcome of one replay pass."""

    valid_events: int
    clicks: int
    arms: list[str] = field(default_factory=list)
    rewards: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    ctr_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def final_ctr(self) -> float:
        return self.clicks / self.valid_events if self.valid_events else float("nan")


def replay(
    policy_factory,
    events,
    update_batch: int = 100,
    budget: int | None = None,
) -> ReplayReport:
    """Rejection replay of a policy over logged events.

    ``policy_factory`` builds a fresh evaluation policy exposing
    ``select(pool) -> index`` and ``observe(arm_id, context, reward)``.
    An event counts only when the policy picks the displayed arm; matched
    observations are queued and flushed to the policy every
    ``update_batch`` valid events, and unmatched events leave the policy
    untouched.  Stops early after ``budget`` valid events when given.
    """
    if update_batch < 1:
        raise ValueError(f"update_batch must be >= 1, got {update_batch}")
    if budget is not None and budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    policy = policy_factory()
    queue: list[tuple[str, np.ndarray, int]] = []
    arms: list[str] = []
    rewards: list[int] = []
    ctr: list[float] = []
    clicks = 0
    for event in events:
        choice = policy.select(event.pool)
        if event.pool[choice][0] != event.displayed:
            continue
        clicks += event.reward
        arms.append(event.displayed)
        rewards.append(event.reward)
        ctr.append(clicks / len(arms))
        queue.append((event.displayed, event.pool[choice][1], event.reward))
        if len(queue) == update_batch:
            for arm_id, x, r in queue:
                policy.observe(arm_id, x, r)
            queue.clear()
        if budget is not None and len(arms) >= budget:
            break
    return ReplayReport(
        valid_events=len(arms),
        clicks=clicks,
        arms=arms,
        rewards=np.asarray(rewards, dtype=np.int64),
        ctr_trace=np.asarray(ctr),
    )


# ---------------------------------------------------------------------------
# synthetic logs
# ---------------------------------------------------------------------------


def generate_synthetic_log(
    K: int, d: int, theta_star, n_events: int, seed
):
    """Yield logged impressions from a known logistic ground truth.

    Per event the pool holds K arms with fresh MVN(0, I) contexts, the
    displayed arm is uniform at random (which is what makes rejection
    replay unbiased), and the reward is Bernoulli(sigmoid(x . theta*)).
    """
    if K < 2:
        raise ValueError(f"need at least 2 arms, got K={K}")
    if n_events < 1:
        raise ValueError(f"n_events must be >= 1, got {n_events}")
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if theta_star.shape != (d,):
        raise ValueError(f"theta_star must have shape ({d},)")
    rng = np.random.default_rng(seed)
    width = len(str(K - 1))
    ids = [f"a{k:0{width}d}" for k in range(K)]
    for i in range(n_events):
        contexts = rng.normal(0.0, 1.0, size=(K, d))
        shown = int(rng.integers(K))
        reward = int(rng.random() < sigmoid(contexts[shown] @ theta_star))
        pool = tuple((ids[k], contexts[k]) for k in range(K))
        yield LogEvent(event_id=i, displayed=ids[shown], reward=reward, pool=pool)


# ---------------------------------------------------------------------------
# evaluation policies
# ---------------------------------------------------------------------------


class GreedyOraclePolicy:
    """Fixed, non-adaptive policy that plays argmax sigmoid(x . theta*).

    Useful for checking the replay estimate against a directly simulated
    online CTR, since its behavior never depends on what it observed.
    """

    def __init__(self, theta_star):
        self.theta_star = np.asarray(theta_star, dtype=np.float64)

    def select(self, pool) -> int:
        scores = [float(x @ self.theta_star) for _, x in pool]
        return int(np.argmax(scores))

    def observe(self, arm_id, context, reward) -> None:
        pass


class SharedReplayPolicy:
    """Adapter: one shared-coefficient policy scores every pool arm."""

    def __init__(self, base, rng: np.random.Generator):
        self.base = base
        self.rng = rng

    def select(self, pool) -> int:
        contexts = np.stack([x for _, x in pool])
        return self.base.select_arm(contexts, self.rng)

    def observe(self, arm_id, context, reward) -> None:
        self.base.observe(context, reward)


class DisjointReplayPolicy:
    """Adapter keeping one independent model per arm id.

    Models are created lazily the first time an arm id appears; each pool
    arm is scored by its own model and ties go to the smallest arm id.
    Observations route only to the displayed arm's model.
    """

    def __init__(self, base_factory, rng: np.random.Generator):
        self.base_factory = base_factory
        self.rng = rng
        self.models: dict[str, object] = {}

    def _model(self, arm_id: str):
        if arm_id not in self.models:
            self.models[arm_id] = self.base_factory()
        return self.models[arm_id]

    def select(self, pool) -> int:
        scores = [
            self._model(arm_id).score_one(x, self.rng) for arm_id, x in pool
        ]
        best = max(scores)
        tied = [i for i, s in enumerate(scores) if s == best]
        return min(tied, key=lambda i: pool[i][0])

    def observe(self, arm_id, context, reward) -> None:
        self._model(arm_id).observe(context, reward)


def shared_policy_factory(seed, **policy_config):
    """Factory of shared-model replay policies (see :func:`make_policy`)."""

    def factory() -> SharedReplayPolicy:
        rng = np.random.default_rng(seed)
        return SharedReplayPolicy(make_policy(**policy_config), rng)

    return factory


def disjoint_policy_factory(seed, **policy_config):
    """Factory of per-arm composite replay policies (see :func:`make_policy`)."""

    def factory() -> DisjointReplayPolicy:
        rng = np.random.default_rng(seed)
        return DisjointReplayPolicy(lambda: make_policy(**policy_config), rng)

    return factory
