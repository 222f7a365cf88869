"""PV uncertainty margins: tightened active-power caps from output history.

A PV unit's nameplate cap is rarely what it can actually deliver at the hour
of interest. Given an empirical distribution of its output we replace the cap
by an effective bound p_hat that holds with a requested probability, either

  * quantile method: p_hat is the lower empirical epsilon-quantile, the level
    the unit exceeds with probability >= 1 - epsilon, or
  * scenario method: draw N_s seeded samples with replacement and keep the
    minimum, where N_s = ceil(ln(beta) / ln(1 - epsilon)) guarantees the
    margin is violated with probability at most epsilon at confidence
    1 - beta.

The tightened units feed the capability-set builder unchanged; nothing else
in the pipeline knows uncertainty exists.

Quantile convention: linear interpolation on rank epsilon * (N - 1), i.e.
numpy's "linear" method. Any fixed convention would do; this one is
continuous in epsilon, which keeps area-vs-epsilon sweeps smooth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    BadParameter,
    EmptyDistribution,
    MissingMargin,
    ParseError,
)
from .network import PV, DerUnit

__all__ = [
    "EmpiricalDistribution",
    "MarginSet",
    "load_pv_history",
    "quantile_margin",
    "scenario_sample_count",
    "scenario_margin",
    "build_margins",
    "apply_margins",
]


# --- data carriers -----------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalDistribution:
    """Observed active-power outputs of one unit, in per unit, all >= 0.

    meta is a free-form location/time tag carried through for reporting.
    """

    unit: int
    samples: tuple[float, ...]
    meta: str = ""

    def __post_init__(self) -> None:
        if len(self.samples) == 0:
            raise EmptyDistribution(f"unit {self.unit}: no samples")
        arr = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise BadParameter(f"unit {self.unit}: non-finite sample")
        if np.any(arr < 0.0):
            raise BadParameter(f"unit {self.unit}: negative sample")


@dataclass(frozen=True)
class MarginSet:
    """Effective upper bounds p_hat per unit index, plus how they were made.

    bounds maps DER index -> p_hat in per unit. beta and seed are None for
    the quantile method. The stored parameters make artifacts reproducible.
    """

    bounds: dict[int, float]
    method: str
    epsilon: float
    beta: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.method not in ("quantile", "scenario"):
            raise BadParameter(f"unknown margin method {self.method!r}")
        _check_unit_interval("epsilon", self.epsilon)
        if self.method == "scenario":
            if self.beta is None or self.seed is None:
                raise BadParameter("scenario margins need beta and seed")
            _check_unit_interval("beta", self.beta)
            if self.seed < 0:
                raise BadParameter("seed must be a nonnegative integer")
        for idx, val in self.bounds.items():
            if not math.isfinite(val) or val < 0.0:
                raise BadParameter(f"margin for unit {idx} is {val}")


def _check_unit_interval(name: str, value: float) -> None:
    if not (0.0 < value < 1.0):
        raise BadParameter(f"{name} must lie strictly in (0, 1), got {value}")


# --- history loading ---------------------------------------------------------

def load_pv_history(path: str | Path, s_base_kva: float) -> dict[int, EmpiricalDistribution]:
    """Read a unit_id,timestamp,p_kw CSV into per-unit distributions.

    Outputs are normalised to per unit on the supplied base. Rows are grouped
    by unit_id; the meta tag records the file name and the first/last
    timestamp seen for that unit.
    """
    if s_base_kva <= 0.0:
        raise BadParameter(f"s_base_kva must be positive, got {s_base_kva}")
    path = Path(path)
    samples: dict[int, list[float]] = {}
    spans: dict[int, list[str]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        field_set = set(reader.fieldnames or ())
        missing = {"unit_id", "timestamp", "p_kw"} - field_set
        if missing:
            raise ParseError(f"{path.name}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                unit = int(row["unit_id"])
                p_kw = float(row["p_kw"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path.name}:{lineno}: {exc}") from exc
            if not math.isfinite(p_kw) or p_kw < 0.0:
                raise ParseError(f"{path.name}:{lineno}: bad output {p_kw}")
            samples.setdefault(unit, []).append(p_kw / s_base_kva)
            span = spans.setdefault(unit, [row["timestamp"], row["timestamp"]])
            span[1] = row["timestamp"]
    if not samples:
        raise ParseError(f"{path.name}: no data rows")
    return {
        unit: EmpiricalDistribution(
            unit=unit,
            samples=tuple(vals),
            meta=f"{path.name}:{spans[unit][0]}..{spans[unit][1]}",
        )
        for unit, vals in samples.items()
    }


# --- margin rules ------------------------------------------------------------

def quantile_margin(
    dist: EmpiricalDistribution,
    epsilon: float,
    p_upper: float = math.inf,
) -> float:
    """Effective bound from the lower empirical epsilon-quantile.

    The returned level is exceeded by the unit with empirical probability
    at least 1 - epsilon. Clamped into [0, p_upper]. Monotone nondecreasing
    in epsilon because empirical quantiles are.
    """
    _check_unit_interval("epsilon", epsilon)
    arr = np.asarray(dist.samples, dtype=float)
    p_hat = float(np.quantile(arr, epsilon, method="linear"))
    return min(max(p_hat, 0.0), p_upper)


def scenario_sample_count(epsilon: float, beta: float) -> int:
    """Number of draws so the min violates chance epsilon with conf 1 - beta.

    ceil(ln(beta) / ln(1 - epsilon)), always >= 1.
    """
    _check_unit_interval("epsilon", epsilon)
    _check_unit_interval("beta", beta)
    return math.ceil(math.log(beta) / math.log(1.0 - epsilon))


def scenario_margin(
    dist: EmpiricalDistribution,
    epsilon: float,
    beta: float,
    seed: int,
    p_upper: float = math.inf,
) -> float:
    """Effective bound as the minimum of N_s seeded draws with replacement.

    Each unit gets its own generator stream keyed by (seed, unit index), so
    per-unit margins agree whether units are processed serially or in
    parallel, and two runs with the same seed agree exactly.
    """
    if seed < 0:
        raise BadParameter("seed must be a nonnegative integer")
    n_draws = scenario_sample_count(epsilon, beta)
    rng = np.random.default_rng([int(seed), int(dist.unit)])
    arr = np.asarray(dist.samples, dtype=float)
    drawn = arr[rng.integers(0, arr.size, size=n_draws)]
    return min(max(float(drawn.min()), 0.0), p_upper)


# --- applying margins to units -----------------------------------------------

def build_margins(
    units: tuple[DerUnit, ...] | list[DerUnit],
    dists: dict[int, EmpiricalDistribution],
    method: str = "quantile",
    epsilon: float = 0.05,
    beta: float | None = None,
    seed: int | None = None,
) -> MarginSet:
    """Compute one margin per PV unit; other kinds carry no uncertainty here.

    Raises MissingMargin when a PV unit has no distribution to draw from.
    """
    if method == "quantile":
        beta = None
        seed = None
    elif method == "scenario":
        if beta is None or seed is None:
            raise BadParameter("scenario margins need beta and seed")
    else:
        raise BadParameter(f"unknown margin method {method!r}")
    bounds: dict[int, float] = {}
    for unit in units:
        if unit.kind != PV:
            continue
        dist = dists.get(unit.index)
        if dist is None:
            raise MissingMargin(f"no output history for PV unit {unit.index}")
        if method == "quantile":
            bounds[unit.index] = quantile_margin(dist, epsilon, unit.p_upper)
        else:
            bounds[unit.index] = scenario_margin(
                dist, epsilon, beta, seed, unit.p_upper
            )
    return MarginSet(
        bounds=bounds, method=method, epsilon=epsilon, beta=beta, seed=seed
    )


def apply_margins(
    units: tuple[DerUnit, ...] | list[DerUnit],
    margins: MarginSet,
) -> tuple[DerUnit, ...]:
    """Replace each PV unit's active-power cap by its margin bound.

    Non-PV units pass through untouched. The result feeds the capability-set
    builder exactly like the original list; setpoints are not moved, so a
    base point outside the tightened set still fails loudly downstream.
    """
    out: list[DerUnit] = []
    for unit in units:
        if unit.kind != PV:
            out.append(unit)
            continue
        if unit.index not in margins.bounds:
            raise MissingMargin(f"margin set has no entry for unit {unit.index}")
        p_hat = min(margins.bounds[unit.index], unit.p_upper)
        out.append(replace(unit, p_upper=p_hat))
    return tuple(out)
