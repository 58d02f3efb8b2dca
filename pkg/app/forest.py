"""Honest MMD-split trees, the grouped half-sample forest and its weights.

A forest consists of B groups. Group b owns a half-sample S_b drawn with
independent Bernoulli(1/2) coin flips and L = round(N/B) trees, each grown on
a subsample of size ceil(|S_b|^beta) of S_b. Every tree splits its subsample
into a build half (chooses splits) and a populate half (fills leaves).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .data import Dataset
from .errors import ConfigError, DegenerateDataError, NumericError, UsageError
from .kernel import Bandwidth, FeatureMap, embed, gram, median_bandwidth

logger = logging.getLogger(__name__)

SCORE_TOL = 1e-12
MAX_HALF_SAMPLE_ATTEMPTS = 100

# SeedSequence stream tags
_HALF_SAMPLE_STREAM = 0
_TREE_STREAM = 1


class ForestConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_trees: int = 1000
    num_groups: int = 100
    subsample_exponent: float = 0.9
    mtry: Optional[int] = None
    min_node_size: int = 5
    alpha_regularity: float = 0.05
    num_features: int = 10
    bandwidth: Union[Literal["median"], float] = "median"
    split_mode: Literal["features", "exact"] = "features"
    median_cap: int = 1000
    honesty_fraction: float = 0.5
    seed: int = 0
    n_jobs: int = 1
    treatment_as_response: bool = True

    @field_validator("bandwidth", mode="before")
    @classmethod
    def _bandwidth_policy(cls, v):
        if isinstance(v, str):
            text = v.strip().lower()
            if text == "median":
                return "median"
            try:
                v = float(text)
            except ValueError:
                raise ValueError("bandwidth must be 'median' or a positive number")
        if not math.isfinite(float(v)) or float(v) <= 0:
            raise ValueError("a fixed bandwidth must be positive and finite")
        return float(v)

    @field_validator("mtry", mode="before")
    @classmethod
    def _mtry_auto(cls, v):
        if isinstance(v, str) and v.strip().lower() in ("", "auto", "none"):
            return None
        return v

    @model_validator(mode="after")
    def _check(self):
        if self.num_trees < 1 or self.num_groups < 1:
            raise ValueError("num_trees and num_groups must be positive")
        if self.trees_per_group < 1:
            raise ValueError("round(num_trees / num_groups) must be at least 1")
        if not 0.0 < self.subsample_exponent < 1.0:
            raise ValueError("subsample_exponent must lie in (0, 1)")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be positive")
        if not 0.0 < self.alpha_regularity <= 0.2:
            raise ValueError("alpha_regularity must lie in (0, 0.2]")
        if self.num_features < 1:
            raise ValueError("num_features must be positive")
        if self.honesty_fraction != 0.5:
            raise ValueError("honesty_fraction is fixed at 0.5")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.n_jobs == 0:
            raise ValueError("n_jobs must be nonzero")
        if self.median_cap < 2:
            raise ValueError("median_cap must be at least 2")
        return self

    @property
    def trees_per_group(self) -> int:
        return int(math.floor(self.num_trees / self.num_groups + 0.5))

    def resolved_mtry(self, p: int) -> int:
        return min(self.mtry or math.ceil(math.sqrt(p)), p)

    @classmethod
    def keys(cls) -> List[str]:
        return list(cls.model_fields)


def make_config(**values) -> ForestConfig:
    try:
        return ForestConfig(**values)
    except ValidationError as e:
        messages = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid forest configuration: {messages}")


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    threshold: float
    score: float
    n_left: int
    n_right: int


@dataclass
class Tree:
    """Flat array form of a fitted tree.

    ``feature[node] == -1`` marks a leaf. For leaves,
    ``populate_rows[leaf_start[node]:leaf_stop[node]]`` are the populate-half
    training rows that fell into it.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_stop: np.ndarray
    populate_rows: np.ndarray
    build_rows: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.feature.shape[0])

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, x) -> int:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return int(node)

    def leaf_rows(self, node: int) -> np.ndarray:
        return self.populate_rows[self.leaf_start[node]:self.leaf_stop[node]]

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)


@dataclass
class ForestGroup:
    half_sample: np.ndarray
    trees: List[Tree]


@dataclass
class GroupedForest:
    groups: List[ForestGroup]
    bandwidth: Bandwidth
    n: int
    p: int
    d: int
    config: ForestConfig
    Y: np.ndarray
    W: Optional[np.ndarray] = None
    x_names: List[str] = field(default_factory=list)
    y_names: List[str] = field(default_factory=list)
    w_name: Optional[str] = None

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def trees(self):
        for group in self.groups:
            yield from group.trees


@dataclass
class WeightBundle:
    w: np.ndarray
    group_weights: np.ndarray
    group_ids: np.ndarray
    abstentions: int = 0

    @property
    def num_groups(self) -> int:
        return int(self.group_weights.shape[0])


def _split_scores_features(phi: np.ndarray):
    """Size-weighted squared distance between left and right feature means
    for every split position, using running sums."""
    m = phi.shape[0]
    cs = np.cumsum(phi, axis=0)
    total = cs[-1]
    nl = np.arange(1, m, dtype=float)
    nr = m - nl
    left = cs[:-1] / nl[:, None]
    right = (total - cs[:-1]) / nr[:, None]
    return nl * nr / m ** 2 * np.sum((left - right) ** 2, axis=1)


def _split_scores_exact(K: np.ndarray):
    m = K.shape[0]
    P = np.cumsum(np.cumsum(K, axis=0), axis=1)
    idx = np.arange(m - 1)
    nl = idx + 1.0
    nr = m - nl
    s_ll = P[idx, idx]
    s_lx = P[idx, m - 1]
    s_lr = s_lx - s_ll
    s_rr = P[m - 1, m - 1] - 2.0 * s_lx + s_ll
    dist = s_ll / nl ** 2 + s_rr / nr ** 2 - 2.0 * s_lr / (nl * nr)
    return nl * nr / m ** 2 * dist


def min_child_size(parent: int, config: ForestConfig) -> int:
    return max(math.ceil(config.alpha_regularity * parent), config.min_node_size)


def best_split(x_node: np.ndarray, stats: np.ndarray, candidate_features: Sequence[int],
               config: ForestConfig) -> Optional[SplitDecision]:
    """Best admissible (feature, midpoint threshold) on the rows of a node.

    ``stats`` holds the embedded responses phi(Y_i) of the node's rows in
    ``features`` mode and the node's kernel matrix in ``exact`` mode. Ties go
    to the lowest feature index, then the lowest threshold.
    """
    m = x_node.shape[0]
    floor = min_child_size(m, config)
    if m < 2 or 2 * floor > m:
        return None
    exact = config.split_mode == "exact"
    best: Optional[SplitDecision] = None
    positions = np.arange(1, m)
    for j in sorted(int(f) for f in candidate_features):
        order = np.argsort(x_node[:, j], kind="stable")
        xs = x_node[order, j]
        if exact:
            scores = _split_scores_exact(stats[np.ix_(order, order)])
        else:
            scores = _split_scores_features(stats[order])
        admissible = (xs[:-1] < xs[1:]) & (positions >= floor) & (m - positions >= floor)
        if not admissible.any():
            continue
        scores = np.where(admissible, scores, -np.inf)
        i = int(np.argmax(scores))
        score = float(scores[i])
        if score <= SCORE_TOL:
            continue
        if best is None or score > best.score:
            mid = float((xs[i] + xs[i + 1]) / 2.0)
            # adjacent floats: the midpoint can round up onto the right value
            if mid >= xs[i + 1]:
                mid = float(xs[i])
            best = SplitDecision(j, mid, score, i + 1, m - i - 1)
    return best


def build_tree(subsample, X: np.ndarray, Y: np.ndarray, config: ForestConfig,
               rng: np.random.Generator, bandwidth: Bandwidth) -> Tree:
    subsample = np.asarray(subsample, dtype=np.int64)
    kappa = config.min_node_size
    if subsample.size < 2 * kappa:
        raise ConfigError(f"Tree subsample of {subsample.size} rows is below 2*min_node_size={2 * kappa}")
    perm = rng.permutation(subsample)
    cut = perm.size - perm.size // 2
    build, populate = perm[:cut], perm[cut:]

    Xb = X[build]
    if config.split_mode == "exact":
        stats = gram(Y[build], bw=bandwidth)
    else:
        fm = FeatureMap.draw(bandwidth, config.num_features, Y.shape[1], int(rng.integers(2 ** 63)))
        stats = embed(fm, Y[build])
    p = X.shape[1]
    mtry = config.resolved_mtry(p)

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    members: List[np.ndarray] = []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        members.append(rows)
        return len(feature) - 1

    stack = [new_node(np.arange(build.size))]
    while stack:
        node = stack.pop()
        rows = members[node]
        if rows.size < 2 * kappa:
            continue
        candidates = rng.choice(p, size=mtry, replace=False)
        local_stats = stats[np.ix_(rows, rows)] if config.split_mode == "exact" else stats[rows]
        decision = best_split(Xb[rows], local_stats, candidates, config)
        if decision is None:
            continue
        go_left = Xb[rows, decision.feature] <= decision.threshold
        feature[node] = decision.feature
        threshold[node] = decision.threshold
        left[node] = new_node(rows[go_left])
        right[node] = new_node(rows[~go_left])
        stack.extend((right[node], left[node]))

    feature_arr = np.asarray(feature, dtype=np.int64)
    threshold_arr = np.asarray(threshold, dtype=float)
    left_arr = np.asarray(left, dtype=np.int64)
    right_arr = np.asarray(right, dtype=np.int64)

    # route the populate half through the fitted splits; parents precede children
    routed = [np.empty(0, dtype=np.int64)] * feature_arr.size
    routed[0] = np.sort(populate)
    for node in range(feature_arr.size):
        if feature_arr[node] < 0:
            continue
        rows = routed[node]
        mask = X[rows, feature_arr[node]] <= threshold_arr[node]
        routed[left_arr[node]] = rows[mask]
        routed[right_arr[node]] = rows[~mask]

    leaf_start = np.zeros(feature_arr.size, dtype=np.int64)
    leaf_stop = np.zeros(feature_arr.size, dtype=np.int64)
    chunks = []
    offset = 0
    for node in np.flatnonzero(feature_arr < 0):
        leaf_start[node] = offset
        offset += routed[node].size
        leaf_stop[node] = offset
        chunks.append(routed[node])
    populate_rows = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    return Tree(feature_arr, threshold_arr, left_arr, right_arr, leaf_start, leaf_stop,
                populate_rows.astype(np.int64), np.sort(build))


def subsample_size(half_size: int, config: ForestConfig) -> int:
    return int(math.ceil(half_size ** config.subsample_exponent))


def _tree_rng(seed: int, group: int, tree: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _TREE_STREAM, group, tree]))


def draw_half_sample(n: int, group: int, config: ForestConfig) -> np.ndarray:
    """Bernoulli(1/2) membership for every row; redrawn while the subsample
    it supports would be smaller than 2*min_node_size."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _HALF_SAMPLE_STREAM, group]))
    need = 2 * config.min_node_size
    for attempt in range(1, MAX_HALF_SAMPLE_ATTEMPTS + 1):
        members = np.flatnonzero(rng.random(n) < 0.5)
        if members.size >= need and subsample_size(members.size, config) >= need:
            return members
        logger.warning("Group %d half-sample of %d rows too small (attempt %d), redrawing",
                       group, members.size, attempt)
    raise ConfigError(f"Group {group}: no usable half-sample after {MAX_HALF_SAMPLE_ATTEMPTS} attempts")


def _grow_group(group: int, half_sample: np.ndarray, X: np.ndarray, Y: np.ndarray,
                config: ForestConfig, bandwidth: Bandwidth) -> ForestGroup:
    size = subsample_size(half_sample.size, config)
    trees = []
    for t in range(config.trees_per_group):
        rng = _tree_rng(config.seed, group, t)
        subsample = rng.choice(half_sample, size=size, replace=False)
        trees.append(build_tree(subsample, X, Y, config, rng, bandwidth))
    return ForestGroup(half_sample, trees)


def resolve_bandwidth(Y: np.ndarray, config: ForestConfig) -> Bandwidth:
    if config.bandwidth == "median":
        bw = median_bandwidth(Y, cap=config.median_cap, seed=config.seed)
        logger.info("Median-heuristic bandwidth: %.6g", bw.sigma)
        return bw
    return Bandwidth(float(config.bandwidth))


def build_forest(dataset: Dataset, config: ForestConfig, bandwidth: Optional[Bandwidth] = None) -> GroupedForest:
    X = dataset.X
    Y = dataset.response(config.treatment_as_response)
    n, p = X.shape
    if Y.shape[1] < 1:
        raise DegenerateDataError("The response needs at least one column")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise DegenerateDataError("Covariates and responses must be finite")
    if n < 4 * config.min_node_size:
        raise ConfigError(f"n={n} is below 4*min_node_size={4 * config.min_node_size}")
    bw = bandwidth or resolve_bandwidth(Y, config)
    half_samples = [draw_half_sample(n, b, config) for b in range(config.num_groups)]
    logger.info("Growing %d groups x %d trees on n=%d, p=%d, d=%d (%s splits)",
                config.num_groups, config.trees_per_group, n, p, Y.shape[1], config.split_mode)
    groups = Parallel(n_jobs=config.n_jobs)(
        delayed(_grow_group)(b, s, X, Y, config, bw) for b, s in enumerate(half_samples)
    )
    return GroupedForest(
        groups=list(groups), bandwidth=bw, n=n, p=p, d=Y.shape[1], config=config,
        Y=dataset.Y, W=dataset.W, x_names=list(dataset.x_names), y_names=list(dataset.y_names),
        w_name=dataset.w_name,
    )


def weights(forest: GroupedForest, x) -> WeightBundle:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != forest.p:
        raise UsageError(f"Query point has {x.shape[0]} coordinates, the forest expects {forest.p}")
    if not np.all(np.isfinite(x)):
        raise UsageError("Query point must be finite")
    group_weights = []
    group_ids = []
    abstentions = 0
    for b, group in enumerate(forest.groups):
        acc = np.zeros(forest.n)
        contributing = 0
        for tree in group.trees:
            rows = tree.leaf_rows(tree.apply(x))
            if rows.size == 0:
                abstentions += 1
                continue
            acc[rows] += 1.0 / rows.size
            contributing += 1
        if contributing == 0:
            logger.warning("Every tree of group %d has an empty leaf at x; group excluded", b)
            continue
        group_weights.append(acc / contributing)
        group_ids.append(b)
    if not group_weights:
        raise NumericError("No group produced weights at the query point")
    if abstentions:
        logger.debug("%d trees abstained at x", abstentions)
    stacked = np.vstack(group_weights)
    w = stacked.sum(axis=0) / stacked.shape[0]
    return WeightBundle(w, stacked, np.asarray(group_ids, dtype=np.int64), abstentions)
