"""
Sampled functions on F_i and the operators acting on them.

A GridFunction stores m samples on each of the 2 J_i N_i branches of F_i, in
the branch order of geometry.BranchLayout. Branch samples meet at shared
junction nodes; integrals use the measure mu_i, which gives each branch the
density 1/N_i per unit length.
"""
import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .exceptions import InvalidArgumentError
from .geometry import BranchLayout, branch_layout
from .kernels import DEFAULT_CONFIG, KernelEvalConfig, PointArrays, interval_kernel_dirichlet, kernel_matrix
from .params import ParameterSequences, cumulative_products

logger = logging.getLogger(__name__)

# Target nodes per kernel block in apply_semigroup
APPLY_CHUNK = 256
QUADRATURE_RULES = ("trapezoid", "simpson")


class GridFunction(BaseModel):
    """Samples of a function on F_level, shape (branches, m), read-only."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    seq: ParameterSequences
    level: int
    m: int
    values: np.ndarray

    @field_validator("values")
    @classmethod
    def _freeze(cls, value: np.ndarray) -> np.ndarray:
        frozen = np.array(value, dtype=float, copy=True)
        frozen.setflags(write=False)
        return frozen

    @model_validator(mode="after")
    def _check_shape(self) -> "GridFunction":
        if self.m < 2:
            raise InvalidArgumentError(f"need at least 2 samples per branch, got {self.m}")
        J, N = cumulative_products(self.seq, self.level)
        expected = (2 * J * N, self.m)
        if self.values.shape != expected:
            raise InvalidArgumentError(f"values must have shape {expected}, got {self.values.shape}")
        return self

    @property
    def layout(self) -> BranchLayout:
        return branch_layout(self.seq, self.level, self.m)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(seq=self.seq, level=self.level, m=self.m, values=values)

    def node_values(self) -> np.ndarray:
        """One value per grid node (junction samples are shared)."""
        nodes = np.empty(self.layout.num_nodes)
        nodes[self.layout.node_ids.ravel()] = self.values.ravel()
        return nodes

    def _compatible(self, other: "GridFunction") -> None:
        if (self.seq, self.level, self.m) != (other.seq, other.level, other.m):
            raise InvalidArgumentError("grid functions live on different grids")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._compatible(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, other: "GridFunction") -> "GridFunction":
        if isinstance(other, GridFunction):
            self._compatible(other)
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * float(other))

    __rmul__ = __mul__


def grid_function(seq: ParameterSequences, i: int, m: int,
                  fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> GridFunction:
    """
    Sample fn on every branch of F_i.

    fn receives the node angles (branches, m) in [0, 2pi) and the canonical
    node labels (branches, m, i); junction samples therefore agree across
    incident branches.
    """
    layout = branch_layout(seq, i, m)
    thetas = layout.node_theta[layout.node_ids]
    values = np.broadcast_to(np.asarray(fn(thetas, layout.node_labels), dtype=float), thetas.shape)
    return GridFunction(seq=seq, level=i, m=m, values=values)


def from_node_values(seq: ParameterSequences, i: int, m: int, node_values: np.ndarray) -> GridFunction:
    layout = branch_layout(seq, i, m)
    return GridFunction(seq=seq, level=i, m=m, values=np.asarray(node_values)[layout.node_ids])


def constant(seq: ParameterSequences, i: int, m: int, c: float = 1.0) -> GridFunction:
    return grid_function(seq, i, m, lambda theta, labels: np.full(theta.shape, float(c)))


def quadrature_weights(layout: BranchLayout, rule: str = "trapezoid") -> np.ndarray:
    """Per-sample weights of mu_i, shape (branches, m)."""
    if rule == "trapezoid":
        base = np.full(layout.m, layout.h)
        base[0] = base[-1] = layout.h / 2.0
    elif rule == "simpson":
        if layout.m % 2 == 0:
            raise InvalidArgumentError(f"Simpson's rule needs an odd number of samples, got m={layout.m}")
        base = np.full(layout.m, 2.0)
        base[1::2] = 4.0
        base[0] = base[-1] = 1.0
        base *= layout.h / 3.0
    else:
        raise InvalidArgumentError(f"unknown quadrature rule {rule!r}; use one of {QUADRATURE_RULES}")
    return np.broadcast_to(base / layout.N, (layout.num_branches, layout.m))


def node_weights(layout: BranchLayout, rule: str = "trapezoid") -> np.ndarray:
    """Quadrature weights summed onto grid nodes (junction nodes collect every incident branch)."""
    weights = np.zeros(layout.num_nodes)
    np.add.at(weights, layout.node_ids.ravel(), quadrature_weights(layout, rule).ravel())
    return weights


def inner_product(f: GridFunction, g: GridFunction, rule: str = "trapezoid") -> float:
    f._compatible(g)
    return float(np.sum(f.values * g.values * quadrature_weights(f.layout, rule)))


def norm(f: GridFunction, rule: str = "trapezoid") -> float:
    return math.sqrt(max(inner_product(f, f, rule), 0.0))


def total_integral(f: GridFunction, rule: str = "trapezoid") -> float:
    return float(np.sum(f.values * quadrature_weights(f.layout, rule)))


def sup_norm(f: GridFunction) -> float:
    return float(np.max(np.abs(f.values)))


def apply_semigroup(f: GridFunction, t: float, cfg: KernelEvalConfig = DEFAULT_CONFIG,
                    rule: str = "trapezoid", jobs: int = 1) -> GridFunction:
    """
    (P_t f)(x) = int p^{F_i}_t(x, y) f(y) dmu_i(y) at every grid node.

    The integral is a quadrature over all nodes; target nodes are processed in
    independent blocks, optionally on `jobs` threads.
    """
    layout = f.layout
    nodes = PointArrays(layout.node_theta, layout.node_label_array)
    weighted = node_weights(layout, rule) * f.node_values()
    result = np.empty(layout.num_nodes)

    def block(start: int) -> None:
        rows = slice(start, min(start + APPLY_CHUNK, layout.num_nodes))
        targets = PointArrays(nodes.thetas[rows], nodes.labels[rows])
        result[rows] = kernel_matrix(f.seq, f.level, t, targets, nodes, cfg).value @ weighted

    starts = range(0, layout.num_nodes, APPLY_CHUNK)
    if jobs <= 1:
        for start in starts:
            block(start)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            list(executor.map(block, starts))
    logger.debug(f"📊 Applied P_{t} on F_{f.level} over {layout.num_nodes} nodes")
    return f.with_values(result[layout.node_ids])


def integrate_fibers(f: GridFunction) -> GridFunction:
    """
    I_i f: average over the n_i copies above each point of F_{i-1}.

    The j_i sub-branches of every level-(i-1) branch are joined end to end, so
    the result carries j_i (m - 1) + 1 samples per branch.
    """
    i = f.level
    if i < 1:
        raise InvalidArgumentError("fiber integration needs a level >= 1")
    j_i, n_i = f.seq.factors(i)
    J_prev, N_prev = cumulative_products(f.seq, i - 1)
    averaged = f.values.reshape(2 * J_prev, j_i, N_prev, n_i, f.m).mean(axis=3)
    pieces = averaged.transpose(0, 2, 1, 3)
    body = pieces[..., :-1].reshape(2 * J_prev, N_prev, j_i * (f.m - 1))
    joined = np.concatenate([body, pieces[..., -1, -1:]], axis=-1)
    m_coarse = j_i * (f.m - 1) + 1
    return GridFunction(seq=f.seq, level=i - 1, m=m_coarse, values=joined.reshape(2 * J_prev * N_prev, m_coarse))


def _lift_once(f: GridFunction) -> GridFunction:
    k = f.level
    j_next, n_next = f.seq.factors(k + 1)
    if (f.m - 1) % j_next != 0:
        raise InvalidArgumentError(
            f"cannot split {f.m - 1} grid steps into {j_next} sub-branches; choose m - 1 divisible by J_i/J_k"
        )
    J_k, N_k = cumulative_products(f.seq, k)
    m_fine = (f.m - 1) // j_next + 1
    grid = f.values.reshape(2 * J_k, N_k, f.m)
    starts = np.arange(j_next) * (m_fine - 1)
    pieces = grid[:, :, starts[:, None] + np.arange(m_fine)[None, :]]
    pieces = pieces.transpose(0, 2, 1, 3)[:, :, :, None, :]
    copies = np.broadcast_to(pieces, (2 * J_k, j_next, N_k, n_next, m_fine))
    return GridFunction(seq=f.seq, level=k + 1, m=m_fine,
                        values=copies.reshape(2 * J_k * j_next * N_k * n_next, m_fine))


def lift(f: GridFunction, i: int) -> GridFunction:
    """Phi_i^* f = f o phi_ik: copy values to every descendant branch of F_i."""
    if i < f.level:
        raise InvalidArgumentError(f"cannot lift a level-{f.level} function down to level {i}")
    while f.level < i:
        f = _lift_once(f)
    return f


def project_to_level(f: GridFunction, k: int) -> GridFunction:
    """Pi_k: repeated fiber integration down to level k."""
    if k < 0 or k > f.level:
        raise InvalidArgumentError(f"cannot project a level-{f.level} function to level {k}")
    while f.level > k:
        f = integrate_fibers(f)
    return f


def project_sym(f: GridFunction) -> GridFunction:
    """P_i f = Phi_i^* I_i f: the part of f constant across the level-i copies."""
    return lift(integrate_fibers(f), f.level)


def project_antisym(f: GridFunction) -> GridFunction:
    """P_i^perp f = f - P_i f; zero at every junction sample."""
    return f - project_sym(f)


def dirichlet_energy(f: GridFunction) -> float:
    """
    sum over branches of (1/N_i) int (f')^2 with f' the forward difference quotient on each grid step.

    This is the exact energy of the piecewise-linear interpolant of the samples.
    """
    if f.m < 3:
        raise InvalidArgumentError(f"energy needs m >= 3 samples per branch, got {f.m}")
    layout = f.layout
    slopes = np.diff(f.values, axis=1) / layout.h
    return float(np.sum(slopes ** 2) * layout.h / layout.N)


def entropy(f: GridFunction, floor: Optional[float] = None, normalized: bool = True,
            rule: str = "trapezoid") -> float:
    """
    Ent(f) = int f log f - int f log(int f / Z) with Z = mu_i(F_i) = 2pi when normalized.

    normalized=False drops Z (the functional used in the log-Sobolev bound).
    Samples below the floor count as zero in f log f; the default floor is
    1e-12 max f.
    """
    values = f.values
    top = float(np.max(values)) if values.size else 0.0
    if floor is None:
        floor = 1e-12 * max(top, 0.0)
    if np.any(values < -max(floor, 0.0)):
        raise InvalidArgumentError(f"entropy needs f >= 0, found {float(np.min(values)):.3e}")
    weights = quadrature_weights(f.layout, rule)
    positive = values > floor
    safe = np.where(positive, values, 1.0)
    f_log_f = float(np.sum(np.where(positive, safe * np.log(safe), 0.0) * weights))
    mass = float(np.sum(np.clip(values, 0.0, None) * weights))
    if mass <= 0.0:
        return 0.0
    reference = 2.0 * math.pi if normalized else 1.0
    return f_log_f - mass * math.log(mass / reference)


def interval_semigroup(f: GridFunction, t: float, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> GridFunction:
    """Evolve every branch on its own with the Dirichlet heat kernel of [0, pi/J_i] (Lebesgue weights)."""
    layout = f.layout
    local = np.arange(f.m) * layout.h
    local[-1] = layout.branch_length
    kernel = interval_kernel_dirichlet(t, layout.branch_length, local[:, None], local[None, :], cfg).value
    weights = np.full(f.m, layout.h)
    weights[0] = weights[-1] = layout.h / 2.0
    return f.with_values((f.values * weights) @ np.asarray(kernel).T)


def dirichlet_decomposition(f: GridFunction, t: float, cfg: KernelEvalConfig = DEFAULT_CONFIG,
                            jobs: int = 1) -> Tuple[GridFunction, GridFunction]:
    """
    The two summands of P_t f on F_i (i >= 1).

    The symmetric part is P_t^{F_{i-1}}(I_i f) lifted back to F_i; the rest is
    the branchwise Dirichlet evolution of P_i^perp f.
    """
    if f.level < 1:
        raise InvalidArgumentError("the decomposition needs a level >= 1")
    coarse = apply_semigroup(integrate_fibers(f), t, cfg, jobs=jobs)
    symmetric = lift(coarse, f.level)
    antisymmetric = interval_semigroup(project_antisym(f), t, cfg)
    return symmetric, antisymmetric


def strong_convergence_residuals(f: GridFunction, t: float, cfg: KernelEvalConfig = DEFAULT_CONFIG,
                                 jobs: int = 1) -> List[float]:
    """sup |Phi_k^* P_t^{F_k} Pi_k f - P_t^{F_i} f| for k = 0..i."""
    reference = apply_semigroup(f, t, cfg, jobs=jobs)
    residuals = []
    for k in range(f.level + 1):
        approximation = lift(apply_semigroup(project_to_level(f, k), t, cfg, jobs=jobs), f.level)
        residuals.append(sup_norm(approximation - reference))
    logger.debug(f"📊 Strong convergence residuals on F_{f.level}: {residuals}")
    return residuals


def save_csv(f: GridFunction, path: str) -> str:
    """Write (branch, index, theta, value) rows."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    thetas = f.layout.thetas
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["branch", "index", "theta", "value"])
        for branch in range(f.values.shape[0]):
            for index in range(f.m):
                writer.writerow([branch, index, repr(float(thetas[branch, index])), repr(float(f.values[branch, index]))])
    return path


def load_csv(seq: ParameterSequences, level: int, path: str) -> GridFunction:
    """Read a GridFunction written by save_csv; m is taken from the largest grid index."""
    try:
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
    except OSError as e:
        raise InvalidArgumentError(f"cannot read grid function from {path}: {str(e)}") from e
    if not rows:
        raise InvalidArgumentError(f"{path} holds no samples")
    m = max(int(row["index"]) for row in rows) + 1
    J, N = cumulative_products(seq, level)
    values = np.full((2 * J * N, m), np.nan)
    for row in rows:
        branch, index = int(row["branch"]), int(row["index"])
        if not 0 <= branch < values.shape[0]:
            raise InvalidArgumentError(f"branch {branch} does not exist on F_{level}")
        values[branch, index] = float(row["value"])
    if np.isnan(values).any():
        raise InvalidArgumentError(f"{path} does not cover every sample of F_{level} with m={m}")
    return GridFunction(seq=seq, level=level, m=m, values=values)
