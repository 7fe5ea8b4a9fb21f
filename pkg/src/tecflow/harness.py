"""Day-long simulation of forecast-driven consensus and its evaluation metrics.

For every 15-minute interval the community's net demand comes from the true
series (RND) or from a forecast (FLF, LMF). The consensus solver runs on that
value, warm-started from the previous interval, and its prices are scored
against the analytical price of the *true* demand.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .analytical import solve_centralized
from .consensus import (
    CommGraph,
    DivergenceError,
    InnovationMode,
    TuningSchedule,
    run,
)
from .model import (
    INTERVALS_PER_DAY,
    FlowDirection,
    InvalidInputError,
    Scenario,
    TecError,
    VppSpec,
    direction_of,
)

logger = logging.getLogger(__name__)


class IntervalDivergenceError(TecError, ArithmeticError):
    def __init__(self, interval: int, method: str, cause: Exception | None = None):
        super().__init__(f"consensus diverged at interval {interval} ({method})")
        self.interval = interval
        self.method = method
        self.cause = cause


# -- metrics -------------------------------------------------------------------

def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise InvalidInputError(f"length mismatch: {y.size} vs {yhat.size}")
    if y.size == 0:
        raise InvalidInputError("metrics need at least one point")
    return y, yhat


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return math.sqrt(math.fsum((y - yhat) ** 2) / y.size)


def mae(y, yhat, paper_literal: bool = False) -> float:
    """Mean absolute error.

    ``paper_literal=True`` takes the absolute value of the summed error
    instead, ``|sum(y - yhat)| / n``, as the formula is sometimes printed.
    """
    y, yhat = _pair(y, yhat)
    if paper_literal:
        return abs(math.fsum(y - yhat)) / y.size
    return math.fsum(np.abs(y - yhat)) / y.size


class PredictionMethod(str, enum.Enum):
    RND = "rnd"
    FLF = "flf"
    LMF = "lmf"


@dataclass(frozen=True)
class IntervalResult:
    interval: int
    method: PredictionMethod
    p_community_true: float
    p_community_used: float
    lambda_conv: dict
    lambda_star: float | None
    price_gap: float
    dispatch: dict
    iterations: int
    objective: float
    converged: bool = True

    def __post_init__(self):
        if not 0 <= self.interval < INTERVALS_PER_DAY:
            raise InvalidInputError(f"interval must be in 0..95, got {self.interval}")
        if not self.price_gap >= 0.0:
            raise InvalidInputError("price gap must be non-negative")

    def numbers(self) -> tuple:
        """Every numeric field, for method-independent comparisons."""
        return (self.interval, self.p_community_true, self.p_community_used,
                tuple(sorted(self.lambda_conv.items())), self.lambda_star, self.price_gap,
                tuple(sorted(self.dispatch.items())), self.iterations, self.objective, self.converged)


def total_price_difference(results: Sequence[IntervalResult]) -> float:
    """Sum over the 96 intervals of the worst agent's distance to the optimal price."""
    if len(results) != INTERVALS_PER_DAY:
        raise InvalidInputError(f"expected {INTERVALS_PER_DAY} intervals, got {len(results)}")
    seen = sorted(r.interval for r in results)
    if seen != list(range(INTERVALS_PER_DAY)):
        missing = sorted(set(range(INTERVALS_PER_DAY)) - set(seen))
        raise InvalidInputError(f"intervals missing or repeated; missing {missing}")
    return sum(r.price_gap for r in sorted(results, key=lambda r: r.interval))


@dataclass
class DayReport:
    method: PredictionMethod
    intervals: list
    forecast_rmse: float
    forecast_mae: float
    community: str = ""
    day: str = ""

    @property
    def total_price_difference(self) -> float:
        return total_price_difference(self.intervals)

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.intervals)

    def numbers(self) -> tuple:
        return (tuple(r.numbers() for r in self.intervals), self.forecast_rmse, self.forecast_mae)


# -- simulation ------------------------------------------------------------------

def _capacity(vpps: Sequence[VppSpec]) -> tuple[float, float]:
    return sum(v.p_max_g2c for v in vpps), sum(v.p_max_c2g for v in vpps)


def clip_to_capacity(p: float, vpps: Sequence[VppSpec]) -> float:
    """Keep a forecast inside what the VPP fleet can supply or absorb."""
    up, down = _capacity(vpps)
    return float(min(max(p, -down), up))


def run_day(method: PredictionMethod | str, true_net: Sequence[float], forecast_net: Sequence[float] | None,
            vpps: Sequence[VppSpec], graph: CommGraph, schedule: TuningSchedule,
            eps: float = 1e-6, n_max: int = 50_000,
            mode: InnovationMode | str = InnovationMode.FIXED_POINT,
            vpp_schedule: Sequence[Sequence[VppSpec]] | None = None,
            warm_lambda: float | None = None) -> DayReport:
    """Simulate the 96 intervals of one day.

    ``forecast_net`` is ignored for RND. ``vpp_schedule`` optionally gives a
    VPP fleet per interval (same ids); the default keeps ``vpps`` all day.
    Intervals with zero true net demand have no optimal price and count as a
    zero gap. When the demand fed to consensus is zero, the agents hold their
    warm-start price.
    """
    method = PredictionMethod(method)
    truth = np.asarray(true_net, dtype=float)
    if truth.shape != (INTERVALS_PER_DAY,):
        raise InvalidInputError(f"true net demand must have {INTERVALS_PER_DAY} values")
    if method is PredictionMethod.RND:
        used = truth
    else:
        if forecast_net is None:
            raise InvalidInputError(f"{method.value} needs a forecast")
        used = np.asarray(forecast_net, dtype=float)
        if used.shape != truth.shape:
            raise InvalidInputError(f"forecast must have {INTERVALS_PER_DAY} values")
    if vpp_schedule is not None and len(vpp_schedule) != INTERVALS_PER_DAY:
        raise InvalidInputError(f"vpp_schedule must have {INTERVALS_PER_DAY} entries")

    results = []
    warm = warm_lambda
    for tau in range(INTERVALS_PER_DAY):
        fleet = tuple(vpps if vpp_schedule is None else vpp_schedule[tau])
        p_true = float(truth[tau])
        p_used = clip_to_capacity(float(used[tau]), fleet)
        oracle = solve_centralized(Scenario(fleet, p_true, tau))
        if direction_of(p_used) is FlowDirection.NO_FLOW:
            lam = warm if warm is not None else (oracle.lambda_star or 0.0)
            lambdas = {n: float(lam) for n in graph.nodes}
            dispatch, iterations, objective, converged = {}, 0, 0.0, True
        else:
            scenario = Scenario(fleet, p_used, tau)
            try:
                res = run(scenario, graph, schedule, eps=eps, n_max=n_max, warm_lambda=warm,
                          mode=mode, record_history=False)
            except DivergenceError as exc:
                raise IntervalDivergenceError(tau, method.value, exc) from exc
            lambdas = res.lambdas
            dispatch = res.powers
            iterations = res.iterations
            converged = res.converged
            c1, c2, _ = scenario.arrays()
            p = np.array([dispatch[v.id] for v in fleet])
            objective = float(np.sum(c1 * p * p + c2 * p))
            if not converged:
                logger.warning("interval %d (%s) stopped at n_max without agreement", tau, method.value)
        if oracle.lambda_star is None:
            gap = 0.0
        else:
            gap = max(abs(v - oracle.lambda_star) for v in lambdas.values())
        results.append(IntervalResult(tau, method, p_true, p_used, dict(lambdas), oracle.lambda_star,
                                      float(gap), dict(dispatch), iterations, objective, converged))
        if dispatch:
            warm = float(np.mean(list(lambdas.values())))
        elif oracle.lambda_star is not None and warm is None:
            warm = oracle.lambda_star
    return DayReport(method, results, rmse(truth, used), mae(truth, used))


@dataclass(frozen=True)
class DayInputs:
    """Everything one (community, day) cell needs: the truth and each method's forecast."""

    community: str
    day: str
    true_net: np.ndarray
    forecasts: dict = field(default_factory=dict)
    vpps: tuple = ()
    graph: CommGraph | None = None
    schedule: TuningSchedule | None = None


@dataclass(frozen=True)
class SummaryRow:
    community: str
    day: str
    method: PredictionMethod
    total_price_difference: float
    forecast_rmse: float
    forecast_mae: float
    mean_iterations: float
    converged: bool


def compare_methods(cells: Sequence[DayInputs],
                    methods: Sequence[PredictionMethod | str] = tuple(PredictionMethod),
                    eps: float = 1e-6, n_max: int = 50_000,
                    mode: InnovationMode | str = InnovationMode.FIXED_POINT,
                    progress: Callable[[str], None] | None = None) -> tuple[list[SummaryRow], list[DayReport]]:
    """Run every method on every cell with the cell's shared tuning; one summary row per pair."""
    rows, reports = [], []
    for cell in cells:
        for m in methods:
            m = PredictionMethod(m)
            if progress:
                progress(f"community {cell.community}, {cell.day}, {m.value}")
            rep = run_day(m, cell.true_net, cell.forecasts.get(m), cell.vpps, cell.graph, cell.schedule,
                          eps=eps, n_max=n_max, mode=mode)
            rep.community, rep.day = cell.community, cell.day
            reports.append(rep)
            rows.append(SummaryRow(cell.community, cell.day, m, rep.total_price_difference,
                                   rep.forecast_rmse, rep.forecast_mae,
                                   float(np.mean([r.iterations for r in rep.intervals])), rep.converged))
    return rows, reports


# -- exports -----------------------------------------------------------------------

def _f(x) -> str:
    return "" if x is None else repr(float(x))


def _header(fh, comments: Sequence[str]) -> csv.writer:
    for c in comments:
        fh.write(f"# {c}\n")
    return csv.writer(fh, lineterminator="\n")


def write_summary_csv(rows: Sequence[SummaryRow], path, comments: Sequence[str] = ()) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = _header(fh, comments)
        w.writerow(["community", "day", "method", "total_price_difference", "forecast_rmse",
                    "forecast_mae", "mean_iterations", "converged"])
        for r in rows:
            w.writerow([r.community, r.day, r.method.value, _f(r.total_price_difference), _f(r.forecast_rmse),
                        _f(r.forecast_mae), _f(r.mean_iterations), int(r.converged)])


def write_report_csv(reports: Sequence[DayReport], path, comments: Sequence[str] = ()) -> None:
    """Per-interval rows; the agents' converged prices appear as min/mean/max."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = _header(fh, comments)
        w.writerow(["community", "day", "method", "interval", "p_community_true", "p_community_used",
                    "lambda_star", "lambda_min", "lambda_mean", "lambda_max", "price_gap",
                    "iterations", "objective", "converged"])
        for rep in reports:
            for r in rep.intervals:
                lam = np.array(list(r.lambda_conv.values()))
                w.writerow([rep.community, rep.day, rep.method.value, r.interval, _f(r.p_community_true),
                            _f(r.p_community_used), _f(r.lambda_star), _f(lam.min()), _f(lam.mean()),
                            _f(lam.max()), _f(r.price_gap), r.iterations, _f(r.objective), int(r.converged)])


def write_gap_long_csv(reports: Sequence[DayReport], path, comments: Sequence[str] = ()) -> None:
    """Plot-ready ``interval,method,price_gap`` rows for the reports of one (community, day)."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = _header(fh, comments)
        w.writerow(["interval", "method", "price_gap"])
        for rep in reports:
            for r in rep.intervals:
                w.writerow([r.interval, rep.method.value, _f(r.price_gap)])
