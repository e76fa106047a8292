"""Open-set gating and MES classification.

A frame is accepted as in-distribution when its maximum raw logit
clears the gate threshold. Accepted frames are classified from the
temperature-scaled softmax. The gate deliberately uses the raw
(pre-temperature) logits so refitting the calibration never changes
which frames are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .domain import LogitVector, ProbVector, as_logits, as_probs

# Temperature search bracket (in plain units) and log-space tolerance.
TEMP_MIN = 0.05
TEMP_MAX = 20.0
TEMP_LOG_TOL = 1e-4


class EmptyValidationSet(ValueError):
    """fit_temperature was handed no samples."""


@dataclass(frozen=True)
class CalibrationModel:
    """Post-hoc scalar calibration: logits are divided by temperature."""

    temperature: float = 1.0

    def __post_init__(self) -> None:
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be positive and finite, got {self.temperature}")


@dataclass(frozen=True)
class GateDecision:
    """Outcome of gating one logit vector.

    mes, probs and certainty are present exactly when the frame is
    in-distribution.
    """

    in_distribution: bool
    max_logit: float
    mes: int | None = None
    probs: ProbVector | None = None
    certainty: float | None = None

    def __post_init__(self) -> None:
        present = (self.mes is not None, self.probs is not None, self.certainty is not None)
        if self.in_distribution and not all(present):
            raise ValueError("in-distribution decision requires mes, probs and certainty")
        if not self.in_distribution and any(present):
            raise ValueError("out-of-distribution decision must not carry scoring fields")


def argmax_high(values: Sequence[float]) -> int:
    """Index of the maximum entry, ties resolved toward the higher index."""
    best = 0
    for i, v in enumerate(values):
        if v >= values[best]:
            best = i
    return best


def apply_temperature(logits: LogitVector, calib: CalibrationModel) -> LogitVector:
    """Divide every logit by the calibration temperature."""
    return as_logits(v / calib.temperature for v in logits)


def softmax(logits: LogitVector) -> ProbVector:
    """Numerically stable softmax; valid for extreme inputs."""
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    total = math.fsum(exps)
    return as_probs(e / total for e in exps)


def gate_and_classify(
    logits: LogitVector, calib: CalibrationModel, osr_tau: float
) -> GateDecision:
    """Gate on the maximum raw logit, then classify if in-distribution.

    Strictly-below-threshold frames are rejected. Accepted frames get
    mes = argmax of the calibrated probabilities (ties toward the
    higher class) and certainty = the maximum probability.
    """
    max_logit = max(logits)
    if max_logit < osr_tau:
        return GateDecision(in_distribution=False, max_logit=max_logit)
    probs = softmax(apply_temperature(logits, calib))
    mes = argmax_high(probs)
    return GateDecision(
        in_distribution=True,
        max_logit=max_logit,
        mes=mes,
        probs=probs,
        certainty=max(probs),
    )


def nll(samples: Sequence[tuple[LogitVector, int]], temperature: float) -> float:
    """Mean negative log-likelihood of softmax(logits / T) over the samples.

    Per-sample terms are combined with an exactly-rounded sum, so the
    result does not depend on sample order.
    """
    terms = []
    for logits, label in samples:
        scaled = [v / temperature for v in logits]
        m = max(scaled)
        lse = m + math.log(math.fsum(math.exp(v - m) for v in scaled))
        terms.append(lse - scaled[label])
    return math.fsum(terms) / len(terms)


def fit_temperature(validation: Sequence[tuple[LogitVector, int]]) -> CalibrationModel:
    """Fit the temperature minimizing mean NLL on held-out (logits, label) pairs.

    Golden-section search on log T over [log 0.05, log 20] to 1e-4
    log-space tolerance. The result never does worse than T = 1.
    """
    if not validation:
        raise EmptyValidationSet("temperature fit needs at least one sample")
    samples = [(as_logits(logits), label) for logits, label in validation]
    for _, label in samples:
        if label not in (0, 1, 2, 3):
            raise ValueError(f"label must be in 0..3, got {label!r}")

    def objective(log_t: float) -> float:
        return nll(samples, math.exp(log_t))

    lo, hi = math.log(TEMP_MIN), math.log(TEMP_MAX)
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > TEMP_LOG_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = objective(d)
    fitted = math.exp((a + b) / 2.0)
    # T = 1 sits inside the bracket; never return anything worse.
    if nll(samples, 1.0) < nll(samples, fitted):
        fitted = 1.0
    return CalibrationModel(temperature=fitted)
