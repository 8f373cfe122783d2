"""
Heat kernels on the circle, on Dirichlet intervals and on the diamonds F_i, F_inf.

The circle kernel has two exact series: a sum of periodized Gaussians (fast for
small time) and a Fourier cosine series (fast for large time). Every evaluation
certifies its truncation error; values come back as KernelValue tuples.
"""
import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.special import erfc

from .exceptions import InvalidArgumentError, PrecisionFailureError
from .geometry import (
    PointAddress,
    classify_pair,
    extend_point,
    interval_indices,
    make_point,
    project,
    same_bundle,
)
from .params import ParameterSequences, cumulative_products, log_products, require_admissible

logger = logging.getLogger(__name__)

# Rows of a kernel matrix evaluated per block
MATRIX_CHUNK = 512
KERNEL_CSV_HEADER = ["t", "theta_x", "labels_x", "theta_y", "labels_y", "value", "certified_error"]


class KernelEvalConfig(BaseModel):
    """Truncation policy for every series evaluation."""

    model_config = ConfigDict(frozen=True)

    tol: float = 1e-12
    rep_switch: float = 1.0
    max_terms: int = 10000

    @field_validator("tol", "rep_switch")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(f"must be positive, got {value}")
        return value

    @field_validator("max_terms")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"max_terms must be >= 1, got {value}")
        return value

    def with_tol(self, tol: float) -> "KernelEvalConfig":
        return self.model_copy(update={"tol": tol})


DEFAULT_CONFIG = KernelEvalConfig()


class KernelValue(NamedTuple):
    value: Union[float, np.ndarray]
    error: float
    terms: int


class PointArrays(NamedTuple):
    """Points of one level as parallel arrays: angles (n,) and labels (n, level)."""

    thetas: np.ndarray
    labels: np.ndarray

    @property
    def level(self) -> int:
        return int(self.labels.shape[1])

    def __len__(self) -> int:
        return int(self.thetas.shape[0])


def point_arrays(points: Sequence[PointAddress]) -> PointArrays:
    if len(points) == 0:
        raise InvalidArgumentError("need at least one point")
    levels = {p.level for p in points}
    if len(levels) != 1:
        raise InvalidArgumentError(f"points mix levels {sorted(levels)}")
    level = levels.pop()
    thetas = np.array([p.theta for p in points], dtype=float)
    labels = np.array([list(p.labels) for p in points], dtype=np.int64).reshape(len(points), level)
    return PointArrays(thetas, labels)


def _check_time(t: float) -> float:
    t = float(t)
    if not t > 0 or not math.isfinite(t):
        raise InvalidArgumentError(f"time must be positive and finite, got {t}")
    return t


def _reduce_angle(u: np.ndarray) -> np.ndarray:
    """Map angle differences into [-pi, pi]."""
    return np.mod(u + math.pi, 2.0 * math.pi) - math.pi


def gaussian_terms(t: float, tol: float, max_terms: int) -> Tuple[int, float]:
    """
    Smallest K with the |k| > K remainder of the periodized Gaussian below tol.

    For |u| <= pi every omitted term is at most exp(-((2k-1)pi)^2/4t), and
    consecutive ratios beyond K are at most exp(-2(K+1)pi^2/t).
    """
    prefactor = 1.0 / math.sqrt(4.0 * math.pi * t)
    for K in range(0, max_terms + 1):
        lead = math.exp(-((2 * K + 1) * math.pi) ** 2 / (4.0 * t))
        ratio = math.exp(-2.0 * (K + 1) * math.pi ** 2 / t)
        tail = prefactor * 2.0 * lead / (1.0 - ratio) if ratio < 1.0 else math.inf
        if tail <= tol:
            return K, tail
    raise PrecisionFailureError(
        f"Gaussian series needs more than {max_terms} terms at t={t}", achieved_bound=tail
    )


def fourier_terms(t: float, tol: float, max_terms: int, scale: float = 1.0 / math.pi) -> Tuple[int, float]:
    """Smallest K with scale * sum_{k>K} e^{-k^2 t} <= scale * int_K^inf e^{-x^2 t} dx below tol."""
    root = math.sqrt(t)
    for K in range(0, max_terms + 1):
        tail = scale * math.sqrt(math.pi) / (2.0 * root) * float(erfc(K * root))
        if tail <= tol:
            return K, tail
    raise PrecisionFailureError(
        f"Fourier series needs more than {max_terms} terms at t={t}", achieved_bound=tail
    )


def _gaussian_sum(t: float, u: np.ndarray, K: int) -> np.ndarray:
    u = _reduce_angle(np.asarray(u, dtype=float))
    k = np.arange(-K, K + 1)
    shifted = u[..., None] - 2.0 * math.pi * k
    return np.exp(-shifted ** 2 / (4.0 * t)).sum(axis=-1) / math.sqrt(4.0 * math.pi * t)


def _fourier_sum(t: float, u: np.ndarray, K: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    k = np.arange(1, K + 1)
    weights = np.exp(-k ** 2 * t)
    return 1.0 / (2.0 * math.pi) + (np.cos(u[..., None] * k) * weights).sum(axis=-1) / math.pi


def _as_output(values: np.ndarray, like: Any) -> Union[float, np.ndarray]:
    return float(values) if np.ndim(like) == 0 else values


def circle_kernel_gaussian(t: float, theta: Any, theta_prime: Any, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    t = _check_time(t)
    K, tail = gaussian_terms(t, cfg.tol, cfg.max_terms)
    u = np.subtract(theta, theta_prime, dtype=float)
    return KernelValue(_as_output(_gaussian_sum(t, u, K), u), tail, 2 * K + 1)


def circle_kernel_fourier(t: float, theta: Any, theta_prime: Any, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    t = _check_time(t)
    K, tail = fourier_terms(t, cfg.tol, cfg.max_terms)
    u = np.subtract(theta, theta_prime, dtype=float)
    return KernelValue(_as_output(_fourier_sum(t, u, K), u), tail, K + 1)


def circle_kernel(t: float, theta: Any, theta_prime: Any, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    """p^{F_0}_t(theta, theta') on the unit circle, Gaussian series below rep_switch, Fourier above."""
    if _check_time(t) < cfg.rep_switch:
        return circle_kernel_gaussian(t, theta, theta_prime, cfg)
    return circle_kernel_fourier(t, theta, theta_prime, cfg)


def dirichlet_difference(s: float, a: Any, b: Any, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    """
    p_s(a - b) - p_s(a + b) for the circle kernel p_s.

    Above rep_switch this is summed directly as (2/pi) sum e^{-k^2 s} sin(ka) sin(kb),
    which has no cancellation; below it the two Gaussian sums are subtracted.
    """
    s = _check_time(s)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if s < cfg.rep_switch:
        K, tail = gaussian_terms(s, cfg.tol / 2.0, cfg.max_terms)
        values = _gaussian_sum(s, a - b, K) - _gaussian_sum(s, a + b, K)
        return KernelValue(_as_output(values, a - b), 2.0 * tail, 2 * K + 1)
    K, tail = fourier_terms(s, cfg.tol, cfg.max_terms, scale=2.0 / math.pi)
    k = np.arange(1, K + 1)
    weights = np.exp(-k ** 2 * s)
    values = (np.sin(a[..., None] * k) * np.sin(b[..., None] * k) * weights).sum(axis=-1) * 2.0 / math.pi
    return KernelValue(_as_output(values, a - b), tail, K)


def interval_kernel_dirichlet(t: float, L: float, theta: Any, theta_prime: Any, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    """Heat kernel of [0, L] with Dirichlet ends: (2/L) sum e^{-k^2 pi^2 t / L^2} sin(k pi x / L) sin(k pi y / L)."""
    t = _check_time(t)
    if not L > 0:
        raise InvalidArgumentError(f"interval length must be positive, got {L}")
    x = np.asarray(theta, dtype=float)
    y = np.asarray(theta_prime, dtype=float)
    for name, values in (("theta", x), ("theta'", y)):
        if np.any(values < 0.0) or np.any(values > L):
            raise InvalidArgumentError(f"{name} must lie in [0, {L}]")
    scale = math.pi / L
    inner = dirichlet_difference(scale ** 2 * t, scale * x, scale * y, cfg.with_tol(cfg.tol / scale))
    values = np.asarray(inner.value) * scale
    on_boundary = (x == 0.0) | (x == L) | (y == 0.0) | (y == L)
    values = np.where(on_boundary, 0.0, values)
    return KernelValue(_as_output(values, x - y), inner.error * scale, inner.terms)


def _level_weight(seq: ParameterSequences, level: int) -> float:
    J_l, _ = cumulative_products(seq, level)
    _, N_prev = cumulative_products(seq, level - 1)
    return float(N_prev) * float(J_l)


def _scaled_dirichlet(seq: ParameterSequences, level: int, t: float, theta_x: float, theta_y: float,
                      cfg: KernelEvalConfig) -> KernelValue:
    J_l, _ = cumulative_products(seq, level)
    return dirichlet_difference(float(J_l) ** 2 * t, J_l * theta_x, J_l * theta_y, cfg)


def diamond_kernel_level(seq: ParameterSequences, i: int, t: float, x: PointAddress, y: PointAddress,
                         cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    """
    p^{F_i}_t(x, y) by the closed formula.

    circle term + sum_{l=1}^{i_xy} delta_xy(n_l) N_{l-1} J_l (p_{J_l^2 t}(J_l theta_x, J_l theta_y)
    - p_{J_l^2 t}(J_l theta_x, -J_l theta_y)), density with respect to mu_i.
    """
    t = _check_time(t)
    if x.level != i or y.level != i:
        raise InvalidArgumentError(f"both points must live on level {i}, got {x.level} and {y.level}")
    pair = classify_pair(seq, x, y)
    levels = len(pair.per_level_delta)
    budget = cfg.tol / (levels + 1)

    circle = circle_kernel(t, x.theta, y.theta, cfg.with_tol(budget))
    value = circle.value
    error = circle.error
    terms = circle.terms
    for level, delta in enumerate(pair.per_level_delta, start=1):
        weight = delta * _level_weight(seq, level)
        term = _scaled_dirichlet(seq, level, t, x.theta, y.theta, cfg.with_tol(budget / abs(weight)))
        value += weight * term.value
        error += abs(weight) * term.error
        terms += term.terms
    return KernelValue(float(value), error, terms)


def diamond_kernel_recursive(seq: ParameterSequences, i: int, t: float, x: PointAddress, y: PointAddress,
                             cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    """
    p^{F_i}_t(x, y) by recursion on the level.

    p^{F_i} = p^{F_{i-1}}(phi x, phi y) plus nothing if y lies in another level-i
    bundle, minus N_{i-1} J_i D in the same bundle on another branch, and plus
    (n_i - 1) N_{i-1} J_i D on the same branch, where D is the scaled Dirichlet
    difference.
    """
    t = _check_time(t)
    if x.level != i or y.level != i:
        raise InvalidArgumentError(f"both points must live on level {i}, got {x.level} and {y.level}")
    if i == 0:
        return circle_kernel(t, x.theta, y.theta, cfg.with_tol(cfg.tol / 2.0))
    coarser = diamond_kernel_recursive(seq, i - 1, t, project(x, i - 1), project(y, i - 1), cfg)
    if not same_bundle(seq, x, y, i):
        return coarser
    _, n_i = seq.factors(i)
    factor = (n_i - 1) if x.labels[i - 1] == y.labels[i - 1] else -1
    weight = factor * _level_weight(seq, i)
    term = _scaled_dirichlet(seq, i, t, x.theta, y.theta, cfg.with_tol(cfg.tol / (2.0 ** (i + 1) * abs(weight))))
    return KernelValue(float(coarser.value + weight * term.value), coarser.error + abs(weight) * term.error,
                       coarser.terms + term.terms)


def _diagonal_term_bound(log_N: float, log_J: float, t: float) -> float:
    """log of N_l (2 J_l / pi) e^{-a} (1 + 1/(2a)) with a = J_l^2 t."""
    a = math.exp(2.0 * log_J) * t
    return log_N + math.log(2.0 / math.pi) + log_J - a + math.log1p(1.0 / (2.0 * a))


def on_diagonal_series(seq: ParameterSequences, t: float, x: PointAddress,
                       cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    """
    p^{F_inf}_t(x, x) with the level series truncated by a certified tail.

    Level l contributes at most N_l (2J_l/pi) e^{-a}(1 + 1/(2a)), a = J_l^2 t.
    Summation stops once that bound halves from one level to the next and twice
    the next bound fits in half the tolerance.
    """
    t = _check_time(t)
    require_admissible(seq, t)
    quarter = cfg.tol / 4.0
    circle = circle_kernel(t, x.theta, x.theta, cfg.with_tol(quarter))
    value = circle.value
    error = circle.error
    terms = circle.terms

    level = 0
    while True:
        if not seq.supports(level + 1):
            tail = 0.0
            break
        next_log_J, next_log_N = log_products(seq, level + 1)
        next_bound = _diagonal_term_bound(next_log_N, next_log_J, t)
        if level >= 1:
            log_J, log_N = log_products(seq, level)
            ratio = next_bound - _diagonal_term_bound(log_N, log_J, t)
            if ratio < math.log(0.5) and math.log(2.0) + next_bound <= math.log(2.0 * quarter):
                tail = 2.0 * math.exp(next_bound)
                break
        level += 1
        if level > cfg.max_terms:
            raise PrecisionFailureError(f"on-diagonal series did not settle within {cfg.max_terms} levels",
                                        achieved_bound=math.exp(next_bound))
        _, n_l = seq.factors(level)
        weight = (n_l - 1) * _level_weight(seq, level)
        term = _scaled_dirichlet(seq, level, t, x.theta, x.theta,
                                 cfg.with_tol(quarter / (2.0 ** level * weight)))
        value += weight * term.value
        error += weight * term.error
        terms += term.terms

    logger.debug(f"📊 On-diagonal series at t={t}: {level} levels, tail bound {tail:.3e}")
    return KernelValue(float(value), error + tail, level)


def diamond_kernel_limit(seq: ParameterSequences, t: float, x: PointAddress, y: PointAddress,
                         cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    """
    p^{F_inf}_t(x, y) for truncated points of F_inf.

    Off the diagonal the level series stops at the deepest shared bundle, so the
    value equals the kernel of the first F_i where the points separate. On the
    diagonal the infinite series is summed with a certified tail, which needs
    the sequences to be admissible at t.
    """
    t = _check_time(t)
    level = max(x.level, y.level)
    x = extend_point(seq, x, level)
    y = extend_point(seq, y, level)
    if x == y:
        return on_diagonal_series(seq, t, x, cfg)
    while classify_pair(seq, x, y).i_xy == level and seq.supports(level + 1):
        level += 1
        x = extend_point(seq, x, level)
        y = extend_point(seq, y, level)
    return diamond_kernel_level(seq, level, t, x, y, cfg)


def _pair_coefficients(seq: ParameterSequences, i: int, xs: PointArrays, ys: PointArrays) -> List[np.ndarray]:
    """delta_xy(n_l) N_{l-1} J_l for every pair and every level l = 1..i (zero past i_xy)."""
    coefficients = []
    in_bundle = np.ones((len(xs), len(ys)), dtype=bool)
    for level in range(1, i + 1):
        same_interval = interval_indices(seq, level, xs.thetas)[:, None] == interval_indices(seq, level, ys.thetas)[None, :]
        in_bundle = in_bundle & same_interval
        if level > 1:
            in_bundle = in_bundle & (xs.labels[:, None, level - 2] == ys.labels[None, :, level - 2])
        same_branch = xs.labels[:, None, level - 1] == ys.labels[None, :, level - 1]
        _, n_l = seq.factors(level)
        delta = np.where(in_bundle, np.where(same_branch, n_l - 1, -1), 0)
        coefficients.append(delta * _level_weight(seq, level))
    return coefficients


def kernel_matrix(seq: ParameterSequences, i: int, t: float, xs: PointArrays, ys: PointArrays,
                  cfg: KernelEvalConfig = DEFAULT_CONFIG) -> KernelValue:
    """
    Dense matrix p^{F_i}_t(x_a, y_b), evaluated with separable Fourier sums.

    cos(k(a - b)) and sin(ka) sin(kb) split into products of per-point tables,
    so each level costs one matrix product per row block.
    """
    t = _check_time(t)
    if xs.level != i or ys.level != i:
        raise InvalidArgumentError(f"point arrays must be on level {i}, got {xs.level} and {ys.level}")
    budget = cfg.tol / (i + 1)
    coefficients = _pair_coefficients(seq, i, xs, ys)

    K, error = fourier_terms(t, budget, cfg.max_terms)
    k = np.arange(1, K + 1)
    weights = np.exp(-k ** 2 * t) / math.pi
    values = np.full((len(xs), len(ys)), 1.0 / (2.0 * math.pi))
    y_cos = np.cos(np.outer(ys.thetas, k)) * weights
    y_sin = np.sin(np.outer(ys.thetas, k)) * weights
    for start in range(0, len(xs), MATRIX_CHUNK):
        rows = slice(start, start + MATRIX_CHUNK)
        x_angles = np.outer(xs.thetas[rows], k)
        values[rows] += np.cos(x_angles) @ y_cos.T + np.sin(x_angles) @ y_sin.T
    terms = K + 1

    for level, coefficient in enumerate(coefficients, start=1):
        scale = float(np.abs(coefficient).max())
        if scale == 0.0:
            continue
        J_l, _ = cumulative_products(seq, level)
        s = float(J_l) ** 2 * t
        K, tail = fourier_terms(s, budget / scale, cfg.max_terms, scale=2.0 / math.pi)
        if K == 0:
            error += scale * tail
            continue
        k = np.arange(1, K + 1)
        y_sin = np.sin(np.outer(J_l * ys.thetas, k)) * (np.exp(-k ** 2 * s) * 2.0 / math.pi)
        for start in range(0, len(xs), MATRIX_CHUNK):
            rows = slice(start, start + MATRIX_CHUNK)
            x_sin = np.sin(np.outer(J_l * xs.thetas[rows], k))
            values[rows] += coefficient[rows] * (x_sin @ y_sin.T)
        error += scale * tail
        terms += K
    return KernelValue(values, error, terms)


def parse_point(seq: ParameterSequences, raw: Any) -> PointAddress:
    """A point from its exchange form [theta, [w_1, ..., w_i]]."""
    try:
        theta, labels = raw
        return make_point(seq, float(theta), [int(w) for w in labels])
    except (TypeError, ValueError) as e:
        raise InvalidArgumentError(f"malformed point {raw!r}: {str(e)}") from e


def _format_labels(labels: Sequence[int]) -> str:
    return "-".join(str(w) for w in labels)


def _evaluate_row(seq: ParameterSequences, level: Optional[int], t: float, x: PointAddress, y: PointAddress,
                  cfg: KernelEvalConfig) -> Dict[str, Any]:
    if level is None:
        result = diamond_kernel_limit(seq, t, x, y, cfg)
    else:
        x_level = project(extend_point(seq, x, level), level)
        y_level = project(extend_point(seq, y, level), level)
        result = diamond_kernel_level(seq, level, t, x_level, y_level, cfg)
    return {
        "t": t,
        "theta_x": x.theta,
        "labels_x": _format_labels(x.labels),
        "theta_y": y.theta,
        "labels_y": _format_labels(y.labels),
        "value": float(result.value),
        "certified_error": result.error,
    }


def evaluate_batch(seq: ParameterSequences, level: Optional[int], t_list: Sequence[float],
                   pairs: Sequence[Tuple[PointAddress, PointAddress]], cfg: KernelEvalConfig = DEFAULT_CONFIG,
                   jobs: int = 1) -> List[Dict[str, Any]]:
    """
    Kernel rows for every (t, pair) combination, t-major.

    level=None evaluates the limit kernel on F_inf. Rows are independent and
    may be computed by `jobs` worker threads; the row order never changes.
    """
    tasks = [(float(t), x, y) for t in t_list for x, y in pairs]
    if not tasks:
        raise InvalidArgumentError("need at least one time and one pair")
    if jobs <= 1:
        rows = [_evaluate_row(seq, level, t, x, y, cfg) for t, x, y in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            rows = list(executor.map(lambda task: _evaluate_row(seq, level, *task, cfg), tasks))
    logger.info(f"✅ Evaluated {len(rows)} kernel values ({'F_inf' if level is None else f'F_{level}'})")
    return rows


def write_kernel_csv(rows: Sequence[Dict[str, Any]], path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=KERNEL_CSV_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: (repr(value) if isinstance(value, float) else value) for key, value in row.items()})
    return path
