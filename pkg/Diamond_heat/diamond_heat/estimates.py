"""
Closed-form constants and bounds for diamond heat kernels.

Series over levels are summed in log space and truncated once the terms
decrease at least geometrically (ratio <= 1/2) and the dominating geometric
tail fits in the tolerance.
"""
import logging
import math
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import mpmath
import numpy as np
from pydantic import BaseModel
from scipy import integrate

from .exceptions import AssumptionViolationError, InvalidArgumentError, PrecisionFailureError
from .params import ParameterSequences, cumulative_products, require_admissible

logger = logging.getLogger(__name__)

# Hard stop for level series that never settle
MAX_SERIES_LEVELS = 400
DEFAULT_BOUND_TOL = 1e-10
LOGSOB_DELTA_GRID = np.logspace(-3.0, 2.0, 101)


class BoundReport(BaseModel):
    name: str
    parameter: float
    value: float
    terms_used: int
    tail_bound: float
    formula_source: str
    alternative_value: Optional[float] = None
    notes: str = ""


class LogScalingBound(NamedTuple):
    value: float
    constant: float
    intermediate: float


class PoincareConstants(NamedTuple):
    lambda_1: float
    psi: float
    psi_companion: float


class SeriesBounds(NamedTuple):
    brute_force: float
    printed_bound: float
    corrected_bound: float


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise InvalidArgumentError(f"{name} must be positive and finite, got {value}")
    return value


def _level_logs(seq: ParameterSequences, last: Optional[int] = None) -> Iterator[Tuple[int, float, float]]:
    """(level, log J_level, log N_level) for level = 0, 1, ... up to `last` or the end of the sequences."""
    log_J = 0.0
    log_N = 0.0
    level = 0
    while last is None or level <= last:
        if level > 0:
            if not seq.supports(level):
                return
            j_l, n_l = seq.factors(level)
            log_J += math.log(j_l)
            log_N += math.log(n_l)
        yield level, log_J, log_N
        level += 1


def _certified_series(seq: ParameterSequences, log_term: Callable[[int, float, float], float], tol: float,
                      first_level: int = 0, level: Optional[int] = None) -> Tuple[float, int, float]:
    """
    (partial sum, terms used, tail bound) of sum_l exp(log_term(l, log J_l, log N_l)).

    With `level` set the sum runs over first_level..level exactly. Otherwise it
    stops before the first term t_l with t_l / t_{l-1} = r <= 1/2 and
    t_l / (1 - r) <= tol; that quotient bounds the remainder once ratios keep
    decreasing.
    """
    total = 0.0
    used = 0
    previous = None
    for lvl, log_J, log_N in _level_logs(seq, level):
        if lvl < first_level:
            continue
        try:
            current = log_term(lvl, log_J, log_N)
        except OverflowError:
            # J_l^2 t beyond double range: the term has underflowed
            current = -math.inf
        if level is None:
            if current == -math.inf:
                return total, used, 0.0
            if previous is not None:
                ratio = math.exp(current - previous) if current <= previous else 1.0
                if ratio <= 0.5:
                    tail = math.exp(current) / (1.0 - ratio)
                    if tail <= tol:
                        return total, used, tail
            if lvl - first_level >= MAX_SERIES_LEVELS:
                raise PrecisionFailureError(
                    f"level series did not settle within {MAX_SERIES_LEVELS} levels",
                    achieved_bound=math.exp(current) if current < 709.0 else math.inf,
                )
        total += math.exp(current)
        used += 1
        previous = current
    return total, used, 0.0


def lipschitz_bound(seq: ParameterSequences, t: float, tol: float = DEFAULT_BOUND_TOL,
                    level: Optional[int] = None) -> BoundReport:
    """
    C_L(t) = (2/pi) sum_l N_l (J_l^2 + 1/(2t)) e^{-J_l^2 t}.

    With level=i only the levels 0..i are summed, which is the constant for F_i.
    """
    t = _check_positive("t", t)
    if level is None:
        require_admissible(seq, t)

    def log_term(lvl: int, log_J: float, log_N: float) -> float:
        J2 = math.exp(2.0 * log_J)
        return math.log(2.0 / math.pi) + log_N + math.log(J2 + 1.0 / (2.0 * t)) - J2 * t

    value, used, tail = _certified_series(seq, log_term, tol, level=level)
    return BoundReport(
        name="lipschitz" if level is None else f"lipschitz_F{level}",
        parameter=t,
        value=value,
        terms_used=used,
        tail_bound=tail,
        formula_source="(2/pi) sum_l N_l (J_l^2 + 1/(2t)) exp(-J_l^2 t)",
    )


def circle_uniform_bound(t: float) -> float:
    """sup of the circle kernel is at most 1/(2pi) + 1/sqrt(4 pi t)."""
    t = _check_positive("t", t)
    return 1.0 / (2.0 * math.pi) + 1.0 / math.sqrt(4.0 * math.pi * t)


def _uniform_terms(seq: ParameterSequences, t: float, tol: float, corrected: bool,
                   level: Optional[int]) -> Tuple[float, int, float]:
    cap = math.log(1.0 / math.sqrt(math.pi * t))

    def log_term(lvl: int, log_J: float, log_N: float) -> float:
        J = math.exp(log_J)
        a = J * J * t
        if corrected:
            decay = math.log(2.0 / math.pi) + log_J - a + math.log1p(1.0 / (2.0 * a))
        else:
            decay = math.log(2.0 / (math.pi * t)) - log_J - a
        return log_N + min(cap, decay)

    return _certified_series(seq, log_term, tol, first_level=1, level=level)


def uniform_bound(seq: ParameterSequences, t: float, tol: float = DEFAULT_BOUND_TOL, corrected: bool = True,
                  level: Optional[int] = None) -> BoundReport:
    """
    Uniform bound 1/(2pi) + 1/sqrt(4 pi t) + sum_{l>=1} N_l min{1/sqrt(pi t), X_l} on the kernel.

    The printed form uses X_l = (2/(J_l pi t)) e^{-J_l^2 t}; the corrected form
    uses X_l = (2 J_l / pi) e^{-J_l^2 t} (1 + 1/(2 J_l^2 t)), which follows from
    sum_{k>=1} e^{-a k^2} <= e^{-a}(1 + 1/(2a)). Both values are reported.
    """
    t = _check_positive("t", t)
    head = circle_uniform_bound(t)
    series, used, tail = _uniform_terms(seq, t, tol, corrected, level)
    other, _, _ = _uniform_terms(seq, t, tol, not corrected, level)
    notes = ""
    if abs(series - other) > tol:
        notes = "printed and corrected level terms differ"
        logger.warning(
            f"⚠️ Uniform bound at t={t}: corrected {head + (series if corrected else other):.6g} "
            f"vs printed {head + (other if corrected else series):.6g}"
        )
    return BoundReport(
        name="uniform_corrected" if corrected else "uniform_printed",
        parameter=t,
        value=head + series,
        terms_used=used + 1,
        tail_bound=tail,
        formula_source="1/(2pi) + 1/sqrt(4 pi t) + sum_l N_l min{1/sqrt(pi t), X_l}",
        alternative_value=head + other,
        notes=notes,
    )


def wbe_constant(seq: ParameterSequences, t: float, tol: float = DEFAULT_BOUND_TOL,
                 level: Optional[int] = None) -> BoundReport:
    """
    C(t) = 2 sum_l min{2/sqrt(pi t), (J_l + 1/(2 J_l t)) e^{-J_l^2 t}}.

    Only the j-sequence enters, so the value does not depend on n.
    """
    t = _check_positive("t", t)
    cap = math.log(2.0 / math.sqrt(math.pi * t))

    def log_term(lvl: int, log_J: float, log_N: float) -> float:
        J = math.exp(log_J)
        return math.log(2.0) + min(cap, math.log(J + 1.0 / (2.0 * J * t)) - J * J * t)

    value, used, tail = _certified_series(seq, log_term, tol, level=level)
    return BoundReport(
        name="wbe" if level is None else f"wbe_F{level}",
        parameter=t,
        value=value,
        terms_used=used,
        tail_bound=tail,
        formula_source="2 sum_l min{2/sqrt(pi t), (J_l + 1/(2 J_l t)) exp(-J_l^2 t)}",
    )


def regular_log_constant(j: int, diam: float) -> float:
    """6/log j + sqrt(pi) diam/(log j log 2) + 2 diam/(e log j log 2)."""
    if j < 2:
        raise InvalidArgumentError(f"j must be >= 2, got {j}")
    log_j = math.log(j)
    log_2 = math.log(2.0)
    return 6.0 / log_j + math.sqrt(math.pi) * diam / (log_j * log_2) + 2.0 * diam / (math.e * log_j * log_2)


def regular_log_bound(j: int, diam: float, t: float, d: float) -> LogScalingBound:
    """
    C_Finf (d/sqrt t) log(d/sqrt t) on a regular diamond, with the three-term intermediate bound.

    Valid for 0 < t < d/2 and d/sqrt(t) > 2.
    """
    t = _check_positive("t", t)
    d = _check_positive("d", d)
    if not t < d / 2.0:
        raise InvalidArgumentError(f"need t < d/2, got t={t}, d={d}")
    ratio = d / math.sqrt(t)
    if not ratio > 2.0:
        raise InvalidArgumentError(f"need d/sqrt(t) > 2, got {ratio}")
    constant = regular_log_constant(j, diam)
    log_j = math.log(j)
    intermediate = (
        6.0 / (math.sqrt(t) * log_j) * math.log(ratio)
        + math.sqrt(math.pi) / log_j * ratio
        + 2.0 / (math.e * log_j) * ratio
    )
    return LogScalingBound(value=constant * ratio * math.log(ratio), constant=constant, intermediate=intermediate)


def ultracontractivity_bound(seq: ParameterSequences, t: float, tol: float = DEFAULT_BOUND_TOL,
                             level: Optional[int] = None) -> BoundReport:
    """||P_t||_{2->inf} <= 1/sqrt(2pi) + (1/sqrt(2t)) (1 + sum_{l>=1} 2 N_l min{1, (2/(J_l sqrt(pi t))) e^{-J_l^2 t}})."""
    t = _check_positive("t", t)

    def log_term(lvl: int, log_J: float, log_N: float) -> float:
        J = math.exp(log_J)
        decay = math.log(2.0 / math.sqrt(math.pi * t)) - log_J - J * J * t
        return math.log(2.0) + log_N + min(0.0, decay)

    series, used, tail = _certified_series(seq, log_term, tol, first_level=1, level=level)
    return BoundReport(
        name="ultracontractivity",
        parameter=t,
        value=1.0 / math.sqrt(2.0 * math.pi) + (1.0 + series) / math.sqrt(2.0 * t),
        terms_used=used + 1,
        tail_bound=tail / math.sqrt(2.0 * t),
        formula_source="1/sqrt(2pi) + (1/sqrt(2t))(1 + sum_l 2 N_l min{1, 2/(J_l sqrt(pi t)) exp(-J_l^2 t)})",
    )


def regular_1_to_inf_constant(j: int, n: int) -> float:
    """C(j, n) with t ||P_t||_{1->inf} <= C(j, n) for t in (0, 1) on a regular j-n diamond."""
    if j < 2 or n < 2:
        raise InvalidArgumentError(f"need j, n >= 2, got ({j}, {n})")
    head = 1.0 / (2.0 * math.pi) + 1.0 / math.sqrt(4.0 * math.pi)
    if j == n:
        return head + 2.0 / math.pi + 2.0 / (math.pi * j * math.log(j))
    if j < n:
        raise InvalidArgumentError(
            f"the closed form for j != n needs j > n (log(j/n) < 0 for j={j}, n={n}); use regular_1_to_inf_integral"
        )
    return head + 2.0 * n / (math.pi * j) + 2.0 * j / (math.pi * n * math.log(j / n))


def regular_1_to_inf_integral(j: int, n: int, t: float) -> float:
    """
    The same constant with the level sum replaced by its integral, computed numerically.

    1/(2pi) + 1/(2 sqrt pi) + 2n/(pi j) + (2/pi) int_1^inf (n/j)^x e^{-j^{2x} t} dx.
    """
    t = _check_positive("t", t)
    if j < 2 or n < 2:
        raise InvalidArgumentError(f"need j, n >= 2, got ({j}, {n})")
    log_ratio = math.log(n / j)
    log_j2 = 2.0 * math.log(j)

    def integrand(x: float) -> float:
        exponent = x * log_j2 + math.log(t)
        if exponent > 700.0:
            return 0.0
        return math.exp(x * log_ratio - math.exp(exponent))

    value, abserr = integrate.quad(integrand, 1.0, np.inf, limit=200)
    logger.debug(f"📊 C({j},{n}) integral at t={t}: {value:.6g} (quad error {abserr:.1e})")
    return 1.0 / (2.0 * math.pi) + 1.0 / (2.0 * math.sqrt(math.pi)) + 2.0 * n / (math.pi * j) + 2.0 / math.pi * value


def logsob_constant(seq: ParameterSequences, delta: float, tol: float = DEFAULT_BOUND_TOL) -> BoundReport:
    """M(delta) = 2 delta + log(1/(2pi) + 1/sqrt(4 pi delta) + pi sum_{l>=1} N_l min{1, (2/(J_l sqrt(pi delta))) e^{-J_l^2 delta}})."""
    delta = _check_positive("delta", delta)

    def log_term(lvl: int, log_J: float, log_N: float) -> float:
        J = math.exp(log_J)
        return log_N + min(0.0, math.log(2.0 / math.sqrt(math.pi * delta)) - log_J - J * J * delta)

    series, used, tail = _certified_series(seq, log_term, tol / math.pi, first_level=1)
    argument = 1.0 / (2.0 * math.pi) + 1.0 / math.sqrt(4.0 * math.pi * delta) + math.pi * series
    return BoundReport(
        name="logsob",
        parameter=delta,
        value=2.0 * delta + math.log(argument),
        terms_used=used + 1,
        tail_bound=math.pi * tail / argument,
        formula_source="2 delta + log(1/(2pi) + 1/sqrt(4 pi delta) + pi sum_l N_l min{1, 2/(J_l sqrt(pi delta)) exp(-J_l^2 delta)})",
    )


def optimal_logsob_delta(seq: ParameterSequences, grid: Optional[Sequence[float]] = None,
                         tol: float = DEFAULT_BOUND_TOL) -> Tuple[float, float]:
    """(delta, M(delta)) minimizing M over a log grid."""
    grid = LOGSOB_DELTA_GRID if grid is None else grid
    values = [(logsob_constant(seq, delta, tol).value, float(delta)) for delta in grid]
    best_value, best_delta = min(values)
    return best_delta, best_value


def local_poincare_constant(seq: ParameterSequences, i: int, mixed_boundary: bool = False) -> float:
    """2/J_i as printed, or 4/J_i^2 = (pi/(2 r_i))^{-2} for the ball radius r_i = pi/J_i."""
    if i < 1:
        raise InvalidArgumentError(f"local Poincare constants need a level >= 1, got {i}")
    J_i, _ = cumulative_products(seq, i)
    return 4.0 / float(J_i) ** 2 if mixed_boundary else 2.0 / float(J_i)


def poincare_constants(seq: ParameterSequences, i: int) -> PoincareConstants:
    """Global spectral gap 1 and the local constants 2/J_i (printed) and 4/J_i^2."""
    return PoincareConstants(
        lambda_1=1.0,
        psi=local_poincare_constant(seq, i),
        psi_companion=local_poincare_constant(seq, i, mixed_boundary=True),
    )


def series_bounds(a: float) -> SeriesBounds:
    """sum_{k>=1} e^{-a k^2} by brute force, against min{sqrt(pi)/(2 sqrt a), e^{-a}/a} and e^{-a}(1 + 1/(2a))."""
    a = _check_positive("a", a)
    with mpmath.workdps(30):
        brute = float(mpmath.nsum(lambda k: mpmath.exp(-a * k * k), [1, mpmath.inf]))
    printed = min(math.sqrt(math.pi) / (2.0 * math.sqrt(a)), math.exp(-a) / a)
    corrected = math.exp(-a) * (1.0 + 1.0 / (2.0 * a))
    return SeriesBounds(brute_force=brute, printed_bound=printed, corrected_bound=corrected)


def bounds_table(seq: ParameterSequences, t_grid: Sequence[float], tol: float = DEFAULT_BOUND_TOL) -> List[Dict[str, float]]:
    """One row per t: Lipschitz, uniform (printed and corrected), wBE, ultracontractivity and M(delta = t)."""
    rows = []
    for t in t_grid:
        t = float(t)
        try:
            lipschitz = lipschitz_bound(seq, t, tol).value
        except AssumptionViolationError as e:
            logger.warning(f"⚠️ Lipschitz bound skipped at t={t}: {str(e)}")
            lipschitz = math.nan
        corrected = uniform_bound(seq, t, tol, corrected=True)
        rows.append({
            "t": t,
            "lipschitz": lipschitz,
            "uniform_printed": corrected.alternative_value,
            "uniform_corrected": corrected.value,
            "wbe": wbe_constant(seq, t, tol).value,
            "ultracontractivity": ultracontractivity_bound(seq, t, tol).value,
            "logsob": logsob_constant(seq, t, tol).value,
        })
    logger.info(f"📊 Bounds table with {len(rows)} rows for {seq.describe()}")
    return rows
