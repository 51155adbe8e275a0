"""Turn a labeled CSV table into a cluster-backed bandit environment.

Pipeline: load and type-check the table, center and scale each numeric
column to unit sample variance (n-1 denominator) and append a constant
covariate, partition the feature rows with mini-batch k-means, binarize
the labels against a positive class, and report the mean reward of each
cluster.  The centroids become arm contexts and the per-cluster rates
become arm reward probabilities.

The schema is a small JSON document::

    {"columns": [{"name": "elevation", "type": "numeric"}, ...],
     "label": "cover_type", "positive_class": "spruce_fir"}

Only numeric columns are standardized and clustered; categorical columns
ride along untouched.  The resulting environment bundle is JSON with
centroids, rates, and provenance metadata (seed, conventions, source
hash) so a prepared environment is reproducible from the file alone.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TableLoadError",
    "TransformError",
    "TableSchema",
    "Dataset",
    "Clustering",
    "load_schema",
    "load_table",
    "standardize",
    "minibatch_kmeans",
    "binarize_and_rates",
    "prep_dataset",
    "save_bundle",
    "load_bundle",
    "write_synthetic_dataset",
]

CONSTANT_COLUMN = "const"


class TableLoadError(ValueError):
    """The CSV file or one of its cells failed validation."""


class TransformError(ValueError):
    """A dataset transform could not be applied."""


@dataclass(frozen=True)
class TableSchema:
    """Column names/types, the label column, and the positive class."""

    columns: tuple[tuple[str, str], ...]  # (name, "numeric" | "categorical")
    label: str
    positive_class: str

    def __post_init__(self):
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")
        for name, kind in self.columns:
            if kind not in ("numeric", "categorical"):
                raise ValueError(f"column {name!r} has unknown type {kind!r}")
        if self.label not in names:
            raise ValueError(f"label column {self.label!r} not declared")

    @property
    def numeric_names(self) -> list[str]:
        return [n for n, k in self.columns if k == "numeric" and n != self.label]

    @property
    def categorical_names(self) -> list[str]:
        return [n for n, k in self.columns if k == "categorical" and n != self.label]


def load_schema(path) -> TableSchema:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        columns = tuple((c["name"], c["type"]) for c in raw["columns"])
        return TableSchema(
            columns=columns,
            label=raw["label"],
            positive_class=str(raw["positive_class"]),
        )
    except (KeyError, TypeError) as e:
        raise TableLoadError(f"bad schema document: {e!r}") from e


@dataclass
class Dataset:
    """Feature matrix plus labels, with the numeric/categorical split kept."""

    features: np.ndarray  # N x p numeric feature matrix
    feature_names: list[str]
    labels: np.ndarray  # N categorical values, as strings
    categorical: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be 2-D")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must match the row count")
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names length must match feature columns")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def has_constant(self) -> bool:
        return bool(self.feature_names) and self.feature_names[-1] == CONSTANT_COLUMN


def load_table(path, schema: TableSchema) -> Dataset:
    """Read a headed CSV against the schema with cell-level validation."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise TableLoadError(f"cannot open {path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableLoadError(f"{path}: file is empty") from None
        declared = [n for n, _ in schema.columns]
        if header != declared:
            raise TableLoadError(
                f"{path}: header {header} does not match schema columns {declared}"
            )
        kind = dict(schema.columns)
        num_idx = [i for i, n in enumerate(header) if kind[n] == "numeric" and n != schema.label]
        cat_idx = [i for i, n in enumerate(header) if kind[n] == "categorical" and n != schema.label]
        lab_idx = header.index(schema.label)
        numeric_rows: list[list[float]] = []
        cat_rows: list[list[str]] = []
        labels: list[str] = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise TableLoadError(
                    f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}"
                )
            vals = []
            for i in num_idx:
                try:
                    vals.append(float(row[i]))
                except ValueError:
                    raise TableLoadError(
                        f"{path}: row {rownum}, column {header[i]!r}: "
                        f"{row[i]!r} is not numeric"
                    ) from None
            numeric_rows.append(vals)
            cat_rows.append([row[i] for i in cat_idx])
            labels.append(row[lab_idx])
    if not labels:
        raise TableLoadError(f"{path}: no data rows")
    features = np.asarray(numeric_rows, dtype=np.float64)
    categorical = {
        header[i]: np.asarray([r[j] for r in cat_rows], dtype=object)
        for j, i in enumerate(cat_idx)
    }
    return Dataset(
        features=features,
        feature_names=[header[i] for i in num_idx],
        labels=np.asarray(labels, dtype=object),
        categorical=categorical,
    )


def standardize(data: Dataset) -> Dataset:
    """Center/scale numeric columns to mean 0, sample variance 1; add a constant.

    Uses the n-1 variance convention.  Already-standardized input passes
    through unchanged (up to roundoff), and the constant column is only
    appended once, so the transform is idempotent.  A zero-variance
    column cannot be scaled and raises :class:`TransformError`.
    """
    names = list(data.feature_names)
    feats = data.features
    if data.has_constant:
        body, const = feats[:, :-1], feats[:, -1:]
    else:
        body, const = feats, None
        if body.shape[1] == 0:
            raise TransformError("no numeric columns to standardize")
    mu = body.mean(axis=0)
    sd = body.std(axis=0, ddof=1) if body.shape[0] > 1 else np.zeros(body.shape[1])
    dead = np.flatnonzero(sd == 0.0)
    if dead.size:
        raise TransformError(
            f"column {names[dead[0]]!r} has zero variance and cannot be standardized"
        )
    out = (body - mu) / sd
    if const is None:
        out = np.hstack([out, np.ones((out.shape[0], 1))])
        names = names + [CONSTANT_COLUMN]
    else:
        out = np.hstack([out, const])
    return Dataset(
        features=out,
        feature_names=names,
        labels=data.labels,
        categorical=dict(data.categorical),
    )


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


@dataclass
class Clustering:
    """Centroids, point assignments, and the squared-distance inertia."""

    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||p - c||^2 for every pair, without materializing differences
    pp = np.einsum("ij,ij->i", points, points)[:, None]
    cc = np.einsum("ij,ij->i", centroids, centroids)[None, :]
    d = pp + cc - 2.0 * points @ centroids.T
    np.maximum(d, 0.0, out=d)
    return d


def _kmeanspp_init(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = _sq_dists(points, centroids[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining mass at chosen points (duplicates); fall back to uniform
            idx = int(rng.integers(n))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, _sq_dists(points, centroids[j : j + 1]).ravel())
    return centroids


def minibatch_kmeans(
    points,
    k: int,
    batch_size: int = 1024,
    iterations: int = 200,
    seed=None,
) -> Clustering:
    """Mini-batch k-means with k-means++ seeding.

    Each iteration assigns a uniformly sampled batch to its nearest
    centroids and moves every touched centroid to the running mean of all
    points ever assigned to it (per-centroid learning rate 1/count).
    When ``batch_size`` covers the whole dataset the loop degenerates to
    full Lloyd iterations with exact cluster means; in that mode the
    inertia is recorded per iteration and verified non-increasing, and
    the loop stops early once assignments stabilize.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a nonempty 2-D array")
    n = points.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    history: list[float] = []

    if batch_size >= n:
        assign = None
        for _ in range(iterations):
            d = _sq_dists(points, centroids)
            new_assign = np.argmin(d, axis=1)
            inertia = float(d[np.arange(n), new_assign].sum())
            if history and inertia > history[-1] + 1e-9 * max(history[-1], 1.0):
                raise AssertionError(
                    "Lloyd iteration increased inertia; clustering is broken"
                )
            history.append(inertia)
            if assign is not None and np.array_equal(new_assign, assign):
                assign = new_assign
                break
            assign = new_assign
            for j in range(k):
                members = points[assign == j]
                if members.shape[0]:
                    centroids[j] = members.mean(axis=0)
    else:
        counts = np.zeros(k)
        for _ in range(iterations):
            batch = points[rng.choice(n, size=batch_size, replace=False)]
            d = _sq_dists(batch, centroids)
            owner = np.argmin(d, axis=1)
            for j in np.unique(owner):
                members = batch[owner == j]
                s = members.shape[0]
                centroids[j] = (counts[j] * centroids[j] + members.sum(axis=0)) / (
                    counts[j] + s
                )
                counts[j] += s

    d = _sq_dists(points, centroids)
    assignments = np.argmin(d, axis=1)
    inertia = float(d[np.arange(n), assignments].sum())
    return Clustering(
        centroids=centroids,
        assignments=assignments,
        inertia=inertia,
        inertia_history=history,
    )


def binarize_and_rates(
    data: Dataset,
    assignments: np.ndarray,
    positive_class: str,
    k: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster mean of the binarized label.

    Returns ``(rates, empty)`` where ``empty`` flags clusters with no
    assigned points; those keep a rate of 0 so the arm count is stable.
    Pass ``k`` explicitly when trailing clusters may be empty.
    """
    assignments = np.asarray(assignments)
    if assignments.shape != (data.n_rows,):
        raise ValueError("assignments length must match the row count")
    if k is None:
        k = int(assignments.max()) + 1 if assignments.size else 0
    rewards = (data.labels == positive_class).astype(np.float64)
    counts = np.bincount(assignments, minlength=k).astype(np.float64)
    sums = np.bincount(assignments, weights=rewards, minlength=k)
    empty = counts == 0
    rates = np.divide(sums, counts, out=np.zeros_like(sums), where=~empty)
    return rates, empty


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def prep_dataset(
    csv_path,
    schema_path,
    k: int = 32,
    batch_size: int = 1024,
    iterations: int = 200,
    seed: int = 0,
) -> dict:
    """Full pipeline from CSV to an environment bundle (a JSON-able dict)."""
    schema = load_schema(schema_path)
    data = standardize(load_table(csv_path, schema))
    clustering = minibatch_kmeans(
        data.features, k, batch_size=batch_size, iterations=iterations, seed=seed
    )
    rates, empty = binarize_and_rates(
        data, clustering.assignments, schema.positive_class, k=clustering.k
    )
    with open(csv_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    return {
        "centroids": clustering.centroids.tolist(),
        "rates": rates.tolist(),
        "metadata": {
            "source_csv": str(csv_path),
            "source_sha256": digest,
            "n_rows": data.n_rows,
            "feature_names": data.feature_names,
            "label": schema.label,
            "positive_class": schema.positive_class,
            "k": k,
            "batch_size": batch_size,
            "iterations": iterations,
            "seed": seed,
            "variance_convention": "sample (n-1 denominator)",
            "inertia": clustering.inertia,
            "empty_clusters": [int(i) for i in np.flatnonzero(empty)],
        },
    }


def save_bundle(bundle: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def write_synthetic_dataset(
    csv_path, schema_path, n_rows: int = 10_000, seed: int = 7
) -> TableSchema:
    """Write a deterministic labeled table shaped like the covertype task.

    Ten numeric features drawn around a handful of latent group centers,
    one categorical passthrough column, and a two-class label whose
    probability varies by group, so per-cluster positive rates are
    non-constant.  Returns the schema it wrote.
    """
    rng = np.random.default_rng(seed)
    n_groups = 8
    centers = rng.normal(0.0, 2.0, size=(n_groups, 10))
    group_logit = rng.normal(-1.0, 1.5, size=n_groups)
    group = rng.integers(n_groups, size=n_rows)
    feats = centers[group] + rng.normal(0.0, 1.0, size=(n_rows, 10))
    p = 1.0 / (1.0 + np.exp(-group_logit[group]))
    positive = rng.random(n_rows) < p
    region = np.array([f"r{g % 4}" for g in group])

    names = [f"f{i}" for i in range(10)]
    schema = TableSchema(
        columns=tuple(
            [(n, "numeric") for n in names]
            + [("region", "categorical"), ("cover", "categorical")]
        ),
        label="cover",
        positive_class="conifer",
    )
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["region", "cover"])
        for i in range(n_rows):
            row = [f"{v:.10g}" for v in feats[i]]
            row.append(region[i])
            row.append("conifer" if positive[i] else "other")
            writer.writerow(row)
    with open(schema_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "columns": [{"name": n, "type": k} for n, k in schema.columns],
                "label": schema.label,
                "positive_class": schema.positive_class,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return schema
