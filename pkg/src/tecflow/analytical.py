"""Centralized solution of the VPP aggregation QP.

The problem in either flow direction is

    min  sum_g c1_g P_g**2 + c2_g P_g
    s.t. sum_g P_g = D,   0 <= P_g <= Pmax_g

with ``D = |p_community|``. ``solve_centralized`` builds the optimum from the
closed-form price over the free VPPs and an active-set iteration;
``projected_gradient_oracle`` solves the same problem by primal projected
gradient and shares no code with it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import FlowDirection, Scenario, TecError

logger = logging.getLogger(__name__)

MAX_ENUMERATION_VPPS = 20


class OracleFailureError(TecError, RuntimeError):
    pass


@dataclass(frozen=True)
class ActiveSet:
    at_upper: frozenset = frozenset()
    at_lower: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "at_upper", frozenset(self.at_upper))
        object.__setattr__(self, "at_lower", frozenset(self.at_lower))
        if self.at_upper & self.at_lower:
            raise ValueError("a VPP cannot sit at both bounds")


@dataclass(frozen=True)
class KktInfo:
    mu_upper: dict = field(default_factory=dict)
    mu_lower: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OptimalDispatch:
    """``lambda_star`` is None when there is no power flow (nothing to dispatch)."""

    lambda_star: float | None
    p_star: dict
    objective: float
    active_set: ActiveSet
    kkt: KktInfo
    direction: FlowDirection = FlowDirection.GRID_TO_COMMUNITY

    @property
    def is_empty(self) -> bool:
        return self.lambda_star is None


def _no_flow() -> OptimalDispatch:
    return OptimalDispatch(None, {}, 0.0, ActiveSet(), KktInfo(), FlowDirection.NO_FLOW)


def _price_over_free(c1, c2, p_max, demand, upper, lower):
    """Closed-form price with the pinned VPPs held at their bounds.

    ``upper``/``lower`` are boolean masks. Returns None when no VPP is free.
    """
    free = ~(upper | lower)
    if not free.any():
        return None
    inv = 1.0 / (2.0 * c1[free])
    residual = demand - p_max[upper].sum()  # lower bound is 0
    return (residual + np.sum(c2[free] * inv)) / np.sum(inv)


def _pinned_price(c1, c2, p_max, upper):
    # all VPPs pinned: take the limit from below, the highest marginal cost at Pmax
    if upper.any():
        return float(np.max(2.0 * c1[upper] * p_max[upper] + c2[upper]))
    return float(np.min(c2))


def _active_set_iteration(c1, c2, p_max, demand, max_rounds=None):
    """Lambda iteration with one-sided variable fixing and multiplier-sign release.

    Returns ``(upper, lower)`` masks, or None if the iteration revisits a set.
    """
    n = c1.size
    upper = np.zeros(n, dtype=bool)
    lower = np.zeros(n, dtype=bool)
    seen = set()
    for _ in range(max_rounds or 4 * n + 8):
        key = (upper.tobytes(), lower.tobytes())
        if key in seen:
            return None
        seen.add(key)
        lam = _price_over_free(c1, c2, p_max, demand, upper, lower)
        if lam is None:
            lam = _pinned_price(c1, c2, p_max, upper)
        free = ~(upper | lower)
        p_free = (lam - c2) / (2.0 * c1)
        over = free & (p_free > p_max)
        under = free & (p_free < 0.0)
        # release pinned VPPs whose multiplier turned negative
        release_up = upper & (lam < 2.0 * c1 * p_max + c2)
        release_lo = lower & (lam > c2)
        if not (over.any() or under.any() or release_up.any() or release_lo.any()):
            p = np.where(upper, p_max, np.where(lower, 0.0, p_free))
            if abs(p.sum() - demand) > 1e-9 * max(1.0, demand):
                return None
            return upper, lower
        if over.any() or under.any():
            # pin only the side with the larger total violation; pinning both
            # sides at once can strand the balance when no VPP is left free
            excess = float(np.sum(p_free[over] - p_max[over]))
            deficit = float(np.sum(-p_free[under]))
            if excess >= deficit:
                upper = upper | over
            else:
                lower = lower | under
        else:
            upper = upper & ~release_up
            lower = lower & ~release_lo
    return None


def _breakpoint_search(c1, c2, p_max, demand):
    """Exact fallback: walk the breakpoints of the monotone supply curve."""
    lo_bp = c2
    hi_bp = 2.0 * c1 * p_max + c2
    candidates = np.unique(np.concatenate([lo_bp, hi_bp]))

    def supply(lam):
        return np.clip((lam - c2) / (2.0 * c1), 0.0, p_max).sum()

    s = np.array([supply(x) for x in candidates])
    k = int(np.searchsorted(s, demand, side="left"))
    if k >= candidates.size:
        lam = candidates[-1]
    elif k == 0 or s[k] == demand:
        lam = candidates[k]
    else:
        a, b = candidates[k - 1], candidates[k]
        lam = a + (demand - s[k - 1]) * (b - a) / (s[k] - s[k - 1])
    p = np.clip((lam - c2) / (2.0 * c1), 0.0, p_max)
    tol = 1e-12 * max(1.0, float(p_max.max()))
    upper = (p >= p_max - tol) & (p_max > 0)
    lower = (p <= tol) & ~upper
    # zero-capacity VPPs sit at both bounds; call them lower
    lower |= p_max == 0
    upper &= ~lower
    return upper, lower


def _masks(scenario: Scenario):
    c1, c2, p_max = scenario.arrays()
    demand = scenario.demand
    masks = _active_set_iteration(c1, c2, p_max, demand)
    if masks is None:
        logger.warning("active-set iteration cycled; falling back to breakpoint search")
        if c1.size > MAX_ENUMERATION_VPPS:
            raise OracleFailureError(f"cycling active set with {c1.size} VPPs exceeds the fallback guard")
        masks = _breakpoint_search(c1, c2, p_max, demand)
    upper, lower = masks
    lam = _price_over_free(c1, c2, p_max, demand, upper, lower)
    if lam is None:
        lam = _pinned_price(c1, c2, p_max, upper)
    # a free VPP that lands exactly on a bound belongs to the active set
    free = ~(upper | lower)
    p = (lam - c2) / (2.0 * c1)
    tol = 1e-12 * np.maximum(1.0, p_max)
    upper = upper | (free & (p >= p_max - tol) & (p_max > 0))
    lower = lower | (free & ~upper & (p <= tol))
    return c1, c2, p_max, demand, (upper, lower), lam


def refine_active_set(scenario: Scenario) -> ActiveSet:
    """KKT-consistent set of VPPs pinned at their capacity or at zero."""
    if scenario.direction is FlowDirection.NO_FLOW:
        return ActiveSet()
    _, _, _, _, (upper, lower), _ = _masks(scenario)
    ids = scenario.ids
    return ActiveSet({ids[g] for g in np.flatnonzero(upper)},
                     {ids[g] for g in np.flatnonzero(lower)})


def solve_centralized(scenario: Scenario) -> OptimalDispatch:
    """Analytical optimum: price over the free set, free VPPs on their marginal curve."""
    if scenario.direction is FlowDirection.NO_FLOW:
        return _no_flow()
    c1, c2, p_max, demand, (upper, lower), lam = _masks(scenario)
    p = (lam - c2) / (2.0 * c1)
    p[upper] = p_max[upper]
    p[lower] = 0.0
    ids = scenario.ids
    mu_u = {ids[g]: max(0.0, float(lam - 2.0 * c1[g] * p_max[g] - c2[g])) for g in np.flatnonzero(upper)}
    mu_l = {ids[g]: max(0.0, float(c2[g] - lam)) for g in np.flatnonzero(lower)}
    return OptimalDispatch(
        lambda_star=float(lam),
        p_star={ids[g]: float(p[g]) for g in range(len(ids))},
        objective=float(np.sum(c1 * p * p + c2 * p)),
        active_set=ActiveSet({ids[g] for g in np.flatnonzero(upper)},
                             {ids[g] for g in np.flatnonzero(lower)}),
        kkt=KktInfo(mu_u, mu_l),
        direction=scenario.direction,
    )


def kkt_residuals(scenario: Scenario, sol: OptimalDispatch) -> dict[str, float]:
    """Worst violations of stationarity, balance, bounds, dual feasibility and slackness."""
    c1, c2, p_max = scenario.arrays()
    ids = scenario.ids
    lam = sol.lambda_star
    p = np.array([sol.p_star[i] for i in ids])
    mu_u = np.array([sol.kkt.mu_upper.get(i, 0.0) for i in ids])
    mu_l = np.array([sol.kkt.mu_lower.get(i, 0.0) for i in ids])
    stationarity = 2.0 * c1 * p + c2 - lam + mu_u - mu_l
    return {
        "stationarity": float(np.max(np.abs(stationarity))),
        "balance": float(abs(p.sum() - scenario.demand)),
        "bounds": float(max(0.0, np.max(-p), np.max(p - p_max))),
        "dual": float(max(0.0, np.max(-mu_u), np.max(-mu_l))),
        "slackness": float(max(np.max(np.abs(mu_u * (p_max - p))), np.max(np.abs(mu_l * p)))),
    }


# -- independent oracle ----------------------------------------------------

def _project_capped_simplex(v, p_max, demand):
    """Euclidean projection onto {x : sum x = demand, 0 <= x <= p_max}.

    ``h(t) = sum clip(v - t, 0, p_max)`` is piecewise linear and nonincreasing;
    find the root between consecutive kinks.
    """
    kinks = np.sort(np.concatenate([v, v - p_max]))
    h = np.clip(v[None, :] - kinks[:, None], 0.0, p_max[None, :]).sum(axis=1)
    # h is nonincreasing along sorted kinks
    idx = np.flatnonzero(h <= demand)
    j = idx[0]
    if j == 0 or h[j] == demand:
        t = kinks[j]
    else:
        t0, t1 = kinks[j - 1], kinks[j]
        h0, h1 = h[j - 1], h[j]
        t = t0 + (h0 - demand) * (t1 - t0) / (h0 - h1)
    return np.clip(v - t, 0.0, p_max)


def projected_gradient_oracle(scenario: Scenario, max_iters: int = 200_000,
                              step: float | None = None, tol: float = 1e-13) -> OptimalDispatch:
    """Primal projected gradient on the aggregation QP.

    The price is recovered from stationarity of the free VPPs (mean of their
    marginal costs). ``step`` defaults to ``1 / (2 max c1)``.
    """
    if scenario.direction is FlowDirection.NO_FLOW:
        return _no_flow()
    c1, c2, p_max = scenario.arrays()
    demand = scenario.demand
    if step is None:
        step = 1.0 / (2.0 * c1.max())
    scale = max(1.0, demand)
    p = _project_capped_simplex(np.full(c1.size, demand / c1.size), p_max, demand)
    for _ in range(max_iters):
        p_next = _project_capped_simplex(p - step * (2.0 * c1 * p + c2), p_max, demand)
        if np.max(np.abs(p_next - p)) <= tol * scale:
            p = p_next
            break
        p = p_next
    else:
        raise OracleFailureError(f"projected gradient did not converge in {max_iters} iterations")

    marg = 2.0 * c1 * p + c2
    edge = 1e-7 * scale
    free = (p > edge) & (p < p_max - edge)
    if free.any():
        lam = float(np.mean(marg[free]))
    else:
        at_top = p >= p_max - edge
        lam = float(np.max(marg[at_top])) if at_top.any() else float(np.min(c2))
    ids = scenario.ids
    upper = ~free & (p >= p_max - edge)
    lower = ~free & ~upper
    return OptimalDispatch(
        lambda_star=lam,
        p_star={ids[g]: float(p[g]) for g in range(len(ids))},
        objective=float(np.sum(c1 * p * p + c2 * p)),
        active_set=ActiveSet({ids[g] for g in np.flatnonzero(upper)},
                             {ids[g] for g in np.flatnonzero(lower)}),
        kkt=KktInfo({ids[g]: float(max(0.0, lam - marg[g])) for g in np.flatnonzero(upper)},
                    {ids[g]: float(max(0.0, marg[g] - lam)) for g in np.flatnonzero(lower)}),
        direction=scenario.direction,
    )
