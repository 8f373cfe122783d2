"""
Parameter sequences of a generalized diamond.

A diamond is fixed by two integer sequences: j_l (how many pieces each branch
is cut into at level l) and n_l (how many parallel copies each piece gets).
Levels beyond the explicit prefix may be covered by a regular tail (j*, n*).
"""
import logging
import math
import sys
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .exceptions import (
    ArithmeticOverflowError,
    AssumptionViolationError,
    InsufficientDepthError,
    InvalidArgumentError,
)

logger = logging.getLogger(__name__)

# Products must stay convertible to double precision for the numerics downstream
MAX_EXACT_PRODUCT = int(sys.float_info.max)
DEFAULT_PROBE_DEPTH = 30
# Number of trailing level differences that decide the admissibility verdict
VERDICT_WINDOW = 3


class ParameterSequences(BaseModel):
    """The sequences {j_l}, {n_l} for l >= 1, with an optional regular tail."""

    model_config = ConfigDict(frozen=True)

    j: Tuple[int, ...] = ()
    n: Tuple[int, ...] = ()
    tail: Optional[Tuple[int, int]] = None

    @model_validator(mode="after")
    def _check_sequences(self) -> "ParameterSequences":
        if len(self.j) != len(self.n):
            raise InvalidArgumentError(
                f"j and n prefixes must have the same length, got {len(self.j)} and {len(self.n)}"
            )
        for level, (j_l, n_l) in enumerate(zip(self.j, self.n), start=1):
            if j_l < 2 or n_l < 2:
                raise InvalidArgumentError(f"level {level}: need j >= 2 and n >= 2, got ({j_l}, {n_l})")
        if self.tail is not None and (self.tail[0] < 2 or self.tail[1] < 2):
            raise InvalidArgumentError(f"regular tail needs j* >= 2 and n* >= 2, got {self.tail}")
        return self

    @classmethod
    def regular(cls, j: int, n: int) -> "ParameterSequences":
        """Regular j-n diamond: every level uses the same pair."""
        return cls(tail=(j, n))

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> "ParameterSequences":
        """Build from the configuration keys j, n, tail_j, tail_n (or regular: [j, n])."""
        if "regular" in data and data["regular"] is not None:
            j_star, n_star = data["regular"]
            return cls(tail=(int(j_star), int(n_star)))
        tail = None
        if data.get("tail_j") is not None or data.get("tail_n") is not None:
            if data.get("tail_j") is None or data.get("tail_n") is None:
                raise InvalidArgumentError("tail_j and tail_n must be given together")
            tail = (int(data["tail_j"]), int(data["tail_n"]))
        return cls(
            j=tuple(int(v) for v in data.get("j", ()) or ()),
            n=tuple(int(v) for v in data.get("n", ()) or ()),
            tail=tail,
        )

    def to_mapping(self) -> Dict[str, Any]:
        return {
            "j": list(self.j),
            "n": list(self.n),
            "tail_j": self.tail[0] if self.tail else None,
            "tail_n": self.tail[1] if self.tail else None,
        }

    @property
    def explicit_depth(self) -> int:
        return len(self.j)

    @property
    def has_regular_tail(self) -> bool:
        return self.tail is not None

    @property
    def max_level(self) -> Optional[int]:
        """Deepest defined level, or None when the tail makes the sequences infinite."""
        return None if self.tail is not None else self.explicit_depth

    @property
    def regular_pair(self) -> Optional[Tuple[int, int]]:
        """(j, n) if every level uses the same pair, else None."""
        if self.tail is None:
            return None
        if all(j_l == self.tail[0] for j_l in self.j) and all(n_l == self.tail[1] for n_l in self.n):
            return self.tail
        return None

    def supports(self, level: int) -> bool:
        return self.max_level is None or level <= self.max_level

    def factors(self, level: int) -> Tuple[int, int]:
        """(j_l, n_l) at one level; (1, 1) at level 0."""
        if level < 0:
            raise InvalidArgumentError(f"level must be >= 0, got {level}")
        if level == 0:
            return 1, 1
        if level <= self.explicit_depth:
            return self.j[level - 1], self.n[level - 1]
        if self.tail is None:
            raise InsufficientDepthError(
                f"level {level} requested but sequences stop at level {self.explicit_depth} without a regular tail"
            )
        return self.tail

    def with_constant_n(self, n_value: int) -> "ParameterSequences":
        """Same j-sequence with every n replaced by n_value."""
        tail = (self.tail[0], n_value) if self.tail else None
        return ParameterSequences(j=self.j, n=tuple(n_value for _ in self.n), tail=tail)

    def describe(self) -> str:
        if self.regular_pair:
            return f"regular {self.regular_pair[0]}-{self.regular_pair[1]}"
        text = f"j=[{_render(self.j)}] n=[{_render(self.n)}]"
        if self.tail:
            text += f" tail={self.tail[0]}-{self.tail[1]}"
        return text



def _render(values: Sequence[int]) -> str:
    """Comma list with entries past 64 bits shown by their size only."""
    return ", ".join(str(v) if v.bit_length() <= 64 else f"<{v.bit_length()} bits>" for v in values)

def level_pairs(seq: ParameterSequences, i: int) -> Tuple[int, int]:
    return seq.factors(i)


@lru_cache(maxsize=4096)
def cumulative_products(seq: ParameterSequences, i: int) -> Tuple[int, int]:
    """Exact (J_i, N_i) = (prod j_l, prod n_l) over l = 1..i; (1, 1) for i = 0."""
    if i < 0:
        raise InvalidArgumentError(f"level index must be >= 0, got {i}")
    if i == 0:
        return 1, 1
    J_prev, N_prev = cumulative_products(seq, i - 1)
    j_i, n_i = seq.factors(i)
    J_i, N_i = J_prev * j_i, N_prev * n_i
    if J_i > MAX_EXACT_PRODUCT or N_i > MAX_EXACT_PRODUCT:
        raise ArithmeticOverflowError(
            f"cumulative products at level {i} exceed double precision range (J_i has {J_i.bit_length()} bits, "
            f"N_i has {N_i.bit_length()} bits)"
        )
    return J_i, N_i


def log_products(seq: ParameterSequences, i: int) -> Tuple[float, float]:
    """(log J_i, log N_i) summed level by level, valid far beyond the exact range."""
    log_J = 0.0
    log_N = 0.0
    for level in range(1, i + 1):
        j_l, n_l = seq.factors(level)
        log_J += math.log(j_l)
        log_N += math.log(n_l)
    return log_J, log_N


def log_admissibility_terms(seq: ParameterSequences, t: float, depth: int) -> np.ndarray:
    """log(N_i e^{-J_i^2 t}) = log N_i - J_i^2 t for i = 0..depth."""
    if t <= 0:
        raise InvalidArgumentError(f"time must be positive, got {t}")
    terms = np.empty(depth + 1)
    log_J = 0.0
    log_N = 0.0
    for i in range(depth + 1):
        if i > 0:
            j_i, n_i = seq.factors(i)
            log_J += math.log(j_i)
            log_N += math.log(n_i)
        exponent = 2.0 * log_J + math.log(t)
        terms[i] = -math.inf if exponent > 709.0 else log_N - math.exp(exponent)
    return terms


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class AdmissibilityEntry(BaseModel):
    t: float
    verdict: Verdict
    log_sup: float
    sup_level: int
    trend: str
    probed_depth: int
    log_terms: List[float]

    @property
    def sup(self) -> float:
        return math.exp(self.log_sup) if self.log_sup < 709.0 else math.inf


class AdmissibilityReport(BaseModel):
    sequences: str
    entries: List[AdmissibilityEntry]

    def verdict_at(self, t: float) -> Verdict:
        for entry in self.entries:
            if math.isclose(entry.t, t, rel_tol=1e-12, abs_tol=0.0):
                return entry.verdict
        raise InvalidArgumentError(f"time {t} was not probed")

    @property
    def overall(self) -> Verdict:
        verdicts = {entry.verdict for entry in self.entries}
        if Verdict.FAIL in verdicts:
            return Verdict.FAIL
        if Verdict.INCONCLUSIVE in verdicts:
            return Verdict.INCONCLUSIVE
        return Verdict.PASS


def _level_differences(terms: np.ndarray) -> np.ndarray:
    previous, following = terms[:-1], terms[1:]
    with np.errstate(invalid="ignore"):
        diffs = following - previous
    # once the term underflows to zero the sequence counts as decreasing
    return np.where(np.isneginf(following), -np.inf, diffs)


def _classify(diffs: np.ndarray) -> Tuple[Verdict, str]:
    if diffs.size == 0:
        return Verdict.INCONCLUSIVE, "single level"
    window = diffs[-min(VERDICT_WINDOW, diffs.size):]
    if np.all(window < 0):
        return Verdict.PASS, "decreasing"
    if np.all(window > 0):
        return Verdict.FAIL, "increasing"
    return Verdict.INCONCLUSIVE, "mixed"


def check_assumption(seq: ParameterSequences, t_grid: Sequence[float], depth: int = DEFAULT_PROBE_DEPTH) -> AdmissibilityReport:
    """
    Probe lim N_i e^{-J_i^2 t} < infinity on a grid of times.

    All arithmetic runs in log space. The verdict per t is "pass" when the last
    levels of the probed range decrease, "fail" when they increase, and
    "inconclusive" otherwise.
    """
    if t_grid is None or len(t_grid) == 0:
        raise InvalidArgumentError("t_grid must contain at least one time")
    if depth < 1:
        raise InvalidArgumentError(f"probe depth must be >= 1, got {depth}")
    if not seq.supports(depth):
        logger.warning(f"⚠️ Probe depth {depth} exceeds explicit sequences; probing up to level {seq.max_level}")
        depth = seq.max_level
        if depth < 1:
            raise InsufficientDepthError("sequences define no level beyond F_0")

    entries = []
    for t in t_grid:
        terms = log_admissibility_terms(seq, float(t), depth)
        verdict, trend = _classify(_level_differences(terms))
        sup_level = int(np.argmax(terms))
        entries.append(AdmissibilityEntry(
            t=float(t),
            verdict=verdict,
            log_sup=float(terms[sup_level]),
            sup_level=sup_level,
            trend=trend,
            probed_depth=depth,
            log_terms=[float(v) for v in terms],
        ))
        logger.debug(f"📊 Assumption probe t={t}: {verdict.value} ({trend}), sup at level {sup_level}")

    report = AdmissibilityReport(sequences=seq.describe(), entries=entries)
    logger.info(f"✅ Assumption probe over {len(entries)} times up to level {depth}: {report.overall.value}")
    return report


def require_admissible(seq: ParameterSequences, t: float, depth: int = DEFAULT_PROBE_DEPTH) -> None:
    """Raise AssumptionViolationError unless the probe passes at t."""
    probe_depth = depth if seq.supports(depth) else seq.max_level
    if probe_depth < 1:
        return
    verdict = check_assumption(seq, [t], probe_depth).verdict_at(t)
    if verdict != Verdict.PASS:
        raise AssumptionViolationError(
            f"sequences {seq.describe()} are not admissible at t={t} (probe verdict: {verdict.value})", t=t
        )
