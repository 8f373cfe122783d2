"""
Points, projections, pair classification and the metrics d_i, d_inf.

A point of F_i is stored as its base angle theta in [0, 2pi) and the branch
labels w_1..w_i. Junction points (angles k*pi/J_b) are identified across all
copies born at or after level b, so their labels from position b on are fixed
to 1. Equality of points is equality of these canonical forms.
"""
import itertools
import logging
import math
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .exceptions import InsufficientDepthError, InvalidArgumentError
from .params import ParameterSequences, cumulative_products

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
# Absolute angle tolerance for junction detection
JUNCTION_TOL = 1e-12
# Deepest level searched for a junction birth on infinite sequences
BIRTH_SEARCH_DEPTH = 40


class PointAddress(BaseModel):
    """A point of F_i: base angle plus branch labels w_1..w_i."""

    model_config = ConfigDict(frozen=True)

    theta: float
    labels: Tuple[int, ...] = ()

    @field_validator("theta")
    @classmethod
    def _angle_range(cls, value: float) -> float:
        if not math.isfinite(value) or value < 0.0 or value >= TWO_PI:
            raise ValueError(f"theta must lie in [0, 2pi), got {value}")
        return value

    @field_validator("labels")
    @classmethod
    def _positive_labels(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(w < 1 for w in value):
            raise ValueError(f"labels start at 1, got {value}")
        return value

    @property
    def level(self) -> int:
        return len(self.labels)

    def as_tuple(self) -> Tuple[float, List[int]]:
        return self.theta, list(self.labels)


class PairConfig(BaseModel):
    """Relative position of two points of F_i."""

    level: int
    i_xy: Union[int, float]
    same_branch_at_top: bool
    per_level_delta: Tuple[int, ...]
    configuration: str

    @property
    def is_identical(self) -> bool:
        return math.isinf(self.i_xy)


class DistanceValue(NamedTuple):
    value: float
    error: float
    level: int


def wrap_angle(theta: float) -> float:
    wrapped = math.fmod(theta, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    return 0.0 if wrapped >= TWO_PI else wrapped


def birth_level(seq: ParameterSequences, theta: float, max_level: Optional[int] = None) -> Optional[int]:
    """Smallest b <= max_level with theta = k*pi/J_b, or None."""
    if max_level is None:
        max_level = seq.max_level if seq.max_level is not None else BIRTH_SEARCH_DEPTH
    for b in range(max_level + 1):
        J_b, _ = cumulative_products(seq, b)
        k = round(theta * J_b / math.pi)
        if abs(theta - k * math.pi / J_b) <= JUNCTION_TOL:
            return b
    return None


def make_point(seq: ParameterSequences, theta: float, labels: Sequence[int] = ()) -> PointAddress:
    """Build a canonical point of F_i (i = len(labels)), snapping junction angles."""
    labels = tuple(int(w) for w in labels)
    for level, w in enumerate(labels, start=1):
        _, n_l = seq.factors(level)
        if not 1 <= w <= n_l:
            raise InvalidArgumentError(f"label w_{level}={w} outside 1..{n_l}")
    theta = wrap_angle(float(theta))
    b = birth_level(seq, theta, len(labels))
    if b is not None:
        J_b, _ = cumulative_products(seq, b)
        theta = wrap_angle(round(theta * J_b / math.pi) * math.pi / J_b)
        keep = max(b - 1, 0)
        labels = labels[:keep] + (1,) * (len(labels) - keep)
    return PointAddress(theta=theta, labels=labels)


def extend_point(seq: ParameterSequences, p: PointAddress, level: int) -> PointAddress:
    """Read a truncated address as constant beyond its length (canonical label 1)."""
    if level <= p.level:
        return p
    return make_point(seq, p.theta, p.labels + (1,) * (level - p.level))


def project(p: PointAddress, k: int) -> PointAddress:
    """phi_ik: forget the labels beyond level k; the angle never moves."""
    if k < 0 or k > p.level:
        raise InvalidArgumentError(f"cannot project a level-{p.level} point to level {k}")
    return PointAddress(theta=p.theta, labels=p.labels[:k])


def random_point(seq: ParameterSequences, level: int, rng: np.random.Generator) -> PointAddress:
    """Draw a point of F_level from the normalized measure mu_level."""
    theta = float(rng.uniform(0.0, TWO_PI))
    labels = [int(rng.integers(1, seq.factors(l)[1] + 1)) for l in range(1, level + 1)]
    return make_point(seq, theta, labels)


def junction_angles(seq: ParameterSequences, i: int) -> np.ndarray:
    """The angles k*pi/J_i of B_i, k = 0..2J_i-1."""
    J_i, _ = cumulative_products(seq, i)
    return np.arange(2 * J_i) * math.pi / J_i


def interval_index(seq: ParameterSequences, level: int, theta: float) -> int:
    """Index k of the level interval [k*pi/J, (k+1)*pi/J] holding theta (junctions go right)."""
    J, _ = cumulative_products(seq, level)
    scaled = theta * J / math.pi
    nearest = round(scaled)
    k = nearest if abs(scaled - nearest) * math.pi / J <= JUNCTION_TOL else math.floor(scaled)
    return int(k) % (2 * J)


def interval_indices(seq: ParameterSequences, level: int, thetas: np.ndarray) -> np.ndarray:
    """Vectorized interval_index."""
    J, _ = cumulative_products(seq, level)
    scaled = np.asarray(thetas, dtype=float) * J / math.pi
    nearest = np.rint(scaled)
    snapped = np.abs(scaled - nearest) * math.pi / J <= JUNCTION_TOL
    k = np.where(snapped, nearest, np.floor(scaled)).astype(np.int64)
    return np.mod(k, 2 * J)


def bundle_key(seq: ParameterSequences, p: PointAddress, level: int) -> Tuple[int, Tuple[int, ...]]:
    """Hashable address of the level-`level` bundle holding p: (interval, w_1..w_{level-1})."""
    if level < 1 or level > p.level:
        raise InvalidArgumentError(f"bundle level must be in 1..{p.level}, got {level}")
    return interval_index(seq, level, p.theta), p.labels[:level - 1]


def branch_key(seq: ParameterSequences, p: PointAddress, level: int) -> Tuple[int, Tuple[int, ...]]:
    """Hashable address of the level-`level` branch holding p: (interval, w_1..w_level)."""
    if level < 0 or level > p.level:
        raise InvalidArgumentError(f"branch level must be in 0..{p.level}, got {level}")
    return interval_index(seq, level, p.theta), p.labels[:level]


def same_bundle(seq: ParameterSequences, x: PointAddress, y: PointAddress, level: int) -> bool:
    return bundle_key(seq, x, level) == bundle_key(seq, y, level)


def classify_pair(seq: ParameterSequences, x: PointAddress, y: PointAddress) -> PairConfig:
    """
    Deepest common bundle level i_xy and the per-level signs delta_xy(n_l).

    Bundles at level l are (interval at level l, labels w_1..w_{l-1}); a branch
    also fixes w_l. Identical points get i_xy = inf.
    """
    if x.level != y.level:
        raise InvalidArgumentError(f"points live on different levels ({x.level} vs {y.level}); project first")
    level = x.level
    n_values = [seq.factors(l)[1] for l in range(1, level + 1)]

    if x == y:
        return PairConfig(
            level=level,
            i_xy=math.inf,
            same_branch_at_top=True,
            per_level_delta=tuple(n_l - 1 for n_l in n_values),
            configuration="y3" if level > 0 else "y1",
        )

    i_xy = 0
    for l in range(1, level + 1):
        if not same_bundle(seq, x, y, l):
            break
        i_xy = l

    if i_xy == 0:
        same_branch = interval_index(seq, 0, x.theta) == interval_index(seq, 0, y.theta)
    else:
        same_branch = x.labels[i_xy - 1] == y.labels[i_xy - 1]

    deltas = [n_values[l - 1] - 1 for l in range(1, i_xy)]
    if i_xy >= 1:
        deltas.append(n_values[i_xy - 1] - 1 if same_branch else -1)

    if level == 0 or i_xy < level:
        configuration = "y1"
    else:
        configuration = "y3" if same_branch else "y2"
    return PairConfig(
        level=level,
        i_xy=i_xy,
        same_branch_at_top=same_branch,
        per_level_delta=tuple(deltas),
        configuration=configuration,
    )


def _circle_distance(alpha: float, beta: float) -> float:
    gap = abs(alpha - beta) % TWO_PI
    return min(gap, TWO_PI - gap)


def _exit_distances(seq: ParameterSequences, p: PointAddress, i: int, top: int) -> Tuple[float, float, float, float]:
    """
    Distances from p to the two endpoints of its level-`top` cell inside F_i.

    Returns (left angle, right angle, distance to left, distance to right).
    """
    J_i, _ = cumulative_products(seq, i)
    k = interval_index(seq, i, p.theta)
    left_dist = p.theta - k * math.pi / J_i
    right_dist = (k + 1) * math.pi / J_i - p.theta
    # junctions snapped to the right interval sit exactly on its left end
    if abs(left_dist) <= JUNCTION_TOL:
        left_dist, right_dist = 0.0, math.pi / J_i
    for level in range(i, top, -1):
        J_l, _ = cumulative_products(seq, level)
        j_l, _ = seq.factors(level)
        k_parent = interval_index(seq, level - 1, p.theta)
        m = interval_index(seq, level, p.theta) - j_l * k_parent
        step = math.pi / J_l
        left_dist, right_dist = (
            min(left_dist + m * step, right_dist + (m + 1) * step),
            min(right_dist + (j_l - 1 - m) * step, left_dist + (j_l - m) * step),
        )
    J_top, _ = cumulative_products(seq, top)
    k_top = interval_index(seq, top, p.theta)
    return k_top * math.pi / J_top, (k_top + 1) * math.pi / J_top, left_dist, right_dist


def _common_cell_level(seq: ParameterSequences, x: PointAddress, y: PointAddress, i: int) -> int:
    """Deepest level c whose cell (interval, labels w_1..w_c) holds both points; -1 if none."""
    common = -1
    for level in range(i + 1):
        if interval_index(seq, level, x.theta) != interval_index(seq, level, y.theta):
            break
        if x.labels[:level] != y.labels[:level]:
            break
        common = level
    return common


def distance_level(seq: ParameterSequences, x: PointAddress, y: PointAddress, i: int) -> float:
    """
    Geodesic distance d_i in F_i.

    Inside a common level-i branch the distance is |theta_x - theta_y|.
    Otherwise both points leave their cells one level below the deepest common
    cell through one of two end junctions; the distance is the best of the four
    exit combinations, with the end-to-end legs measured by dynamic programming
    over the finer levels.
    """
    if i < 0:
        raise InvalidArgumentError(f"level must be >= 0, got {i}")
    x = project(extend_point(seq, x, i), i)
    y = project(extend_point(seq, y, i), i)
    if x == y:
        return 0.0

    common = _common_cell_level(seq, x, y, i)
    if common == i:
        return abs(x.theta - y.theta)

    top = common + 1
    x_left, x_right, x_to_left, x_to_right = _exit_distances(seq, x, i, top)
    y_left, y_right, y_to_left, y_to_right = _exit_distances(seq, y, i, top)
    best = math.inf
    for x_angle, x_leg in ((x_left, x_to_left), (x_right, x_to_right)):
        for y_angle, y_leg in ((y_left, y_to_left), (y_right, y_to_right)):
            if common < 0:
                middle = _circle_distance(x_angle, y_angle)
            else:
                middle = abs(x_angle - y_angle)
            best = min(best, x_leg + middle + y_leg)
    return best


def distance_sandwich(seq: ParameterSequences, x: PointAddress, y: PointAddress, i: int) -> Tuple[float, float, float]:
    """(d_{i-1} of the projections, d_i, d_{i-1} + 2pi/J_i)."""
    if i < 1:
        raise InvalidArgumentError("the sandwich needs a level i >= 1")
    value = distance_level(seq, x, y, i)
    lower = distance_level(seq, x, y, i - 1)
    J_i, _ = cumulative_products(seq, i)
    return lower, value, lower + TWO_PI / J_i


def _tail_length_bound(seq: ParameterSequences, i: int) -> float:
    """Sum over k > i of 2pi/J_k, continuing with j* (or the minimum j = 2) past the prefix."""
    depth = seq.explicit_depth
    total = 0.0
    for k in range(i + 1, depth + 1):
        J_k, _ = cumulative_products(seq, k)
        total += TWO_PI / J_k
    start = max(i, depth)
    J_start, _ = cumulative_products(seq, start)
    j_rest = seq.tail[0] if seq.tail else 2
    return total + TWO_PI / (J_start * (j_rest - 1))


def distance_limit(seq: ParameterSequences, x: PointAddress, y: PointAddress, tol: float) -> DistanceValue:
    """d_inf(x, y) within tol, evaluated at the first level whose length tail drops below tol."""
    if tol <= 0:
        raise InvalidArgumentError(f"tolerance must be positive, got {tol}")
    i = 0
    while True:
        if not seq.has_regular_tail and i > seq.explicit_depth:
            raise InsufficientDepthError(
                f"sequences end at level {seq.explicit_depth}; cannot certify d_inf within {tol}"
            )
        tail = _tail_length_bound(seq, i)
        if tail < tol:
            break
        i += 1
    value = distance_level(seq, x, y, i)
    logger.debug(f"📊 d_inf evaluated at level {i} with tail bound {tail:.3e}")
    return DistanceValue(value=value, error=tail, level=i)


class BranchLayout:
    """
    Branches of F_i sampled on uniform grids of m points.

    Branches are ordered by interval index, then by labels (w_1 slowest).
    Samples at branch ends are junctions and share one node id across all
    incident branches.
    """

    def __init__(self, seq: ParameterSequences, level: int, m: int):
        if m < 2:
            raise InvalidArgumentError(f"need at least 2 samples per branch, got {m}")
        self.seq = seq
        self.level = level
        self.m = m
        self.J, self.N = cumulative_products(seq, level)
        self.branch_length = math.pi / self.J
        self.h = self.branch_length / (m - 1)

        label_sets = [range(1, seq.factors(l)[1] + 1) for l in range(1, level + 1)]
        label_rows = np.array(list(itertools.product(*label_sets)), dtype=np.int64).reshape(self.N, level)
        self.num_branches = 2 * self.J * self.N
        self.intervals = np.repeat(np.arange(2 * self.J, dtype=np.int64), self.N)
        self.labels = np.tile(label_rows, (2 * self.J, 1))
        self.thetas = self.intervals[:, None] * self.branch_length + np.arange(m)[None, :] * self.h
        self.thetas[:, -1] = (self.intervals + 1) * self.branch_length

        self.junction_births = self._junction_births()
        self.node_labels = np.repeat(self.labels[:, None, :], m, axis=1)
        left_q = self.intervals
        right_q = (self.intervals + 1) % (2 * self.J)
        self.node_labels[:, 0, :] = self._canonical_labels(left_q)
        self.node_labels[:, -1, :] = self._canonical_labels(right_q)
        self.node_ids, self.num_junctions = self._assign_node_ids(left_q, right_q)
        self.num_nodes = int(self.node_ids.max()) + 1

        self.node_theta = np.empty(self.num_nodes)
        self.node_theta[self.node_ids.ravel()] = np.mod(self.thetas, 2 * math.pi).ravel()
        self.node_theta[self.node_theta >= TWO_PI] = 0.0
        self.node_label_array = np.empty((self.num_nodes, level), dtype=np.int64)
        self.node_label_array[self.node_ids.ravel()] = self.node_labels.reshape(self.num_branches * m, level)

    def _junction_births(self) -> np.ndarray:
        q = np.arange(2 * self.J, dtype=np.int64)
        births = np.full(q.shape, self.level, dtype=np.int64)
        for b in range(self.level, -1, -1):
            J_b, _ = cumulative_products(self.seq, b)
            births[q % (self.J // J_b) == 0] = b
        return births

    def _canonical_labels(self, q: np.ndarray) -> np.ndarray:
        births = self.junction_births[q]
        keep = np.maximum(births - 1, 0)
        positions = np.arange(self.level)[None, :]
        return np.where(positions < keep[:, None], self.labels, 1)

    def _assign_node_ids(self, left_q: np.ndarray, right_q: np.ndarray) -> Tuple[np.ndarray, int]:
        keys: Dict[Tuple[int, Tuple[int, ...]], int] = {}
        ends = np.empty((self.num_branches, 2), dtype=np.int64)
        for b in range(self.num_branches):
            for side, q in enumerate((int(left_q[b]), int(right_q[b]))):
                keep = max(int(self.junction_births[q]) - 1, 0)
                key = (q, tuple(int(w) for w in self.labels[b, :keep]))
                ends[b, side] = keys.setdefault(key, len(keys))
        num_junctions = len(keys)
        node_ids = np.empty((self.num_branches, self.m), dtype=np.int64)
        node_ids[:, 0] = ends[:, 0]
        node_ids[:, -1] = ends[:, 1]
        interior = self.m - 2
        if interior > 0:
            node_ids[:, 1:-1] = num_junctions + np.arange(self.num_branches * interior).reshape(self.num_branches, interior)
        return node_ids, num_junctions

    def branch_index(self, interval: int, labels: Sequence[int]) -> int:
        rank = 0
        for l, w in enumerate(labels, start=1):
            rank = rank * self.seq.factors(l)[1] + (int(w) - 1)
        return int(interval) * self.N + rank

    def locate(self, p: PointAddress) -> Tuple[int, int]:
        """(branch index, sample index) of the grid node nearest to p."""
        p = project(extend_point(self.seq, p, self.level), self.level)
        k = interval_index(self.seq, self.level, p.theta)
        branch = self.branch_index(k, p.labels)
        s = int(round((p.theta - k * self.branch_length) / self.h))
        return branch, min(max(s, 0), self.m - 1)

    def node_of(self, p: PointAddress) -> int:
        branch, s = self.locate(p)
        return int(self.node_ids[branch, s])

    def node_point(self, node: int) -> PointAddress:
        return make_point(self.seq, float(self.node_theta[node]), [int(w) for w in self.node_label_array[node]])

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Consecutive sample pairs along every branch, as node id arrays."""
        return self.node_ids[:, :-1].ravel(), self.node_ids[:, 1:].ravel()


@lru_cache(maxsize=32)
def branch_layout(seq: ParameterSequences, level: int, m: int) -> BranchLayout:
    return BranchLayout(seq, level, m)


def discretized_graph(seq: ParameterSequences, i: int, m: int) -> Tuple[nx.Graph, BranchLayout]:
    """F_i as a weighted networkx graph with m samples per branch (weights = arc length)."""
    layout = branch_layout(seq, i, m)
    graph = nx.Graph()
    graph.add_nodes_from(range(layout.num_nodes))
    heads, tails = layout.edges()
    graph.add_weighted_edges_from(zip(heads.tolist(), tails.tolist(), itertools.repeat(layout.h)))
    logger.debug(f"🔍 Discretized F_{i}: {graph.number_of_nodes()} nodes, {graph.number_of_edges()} edges")
    return graph, layout
