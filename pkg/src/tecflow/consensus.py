"""Fully distributed Consensus + Innovations solver over a simulated agent graph.

Every VPP and the community manager hold a local copy of the price. Each
synchronous round an agent reads its neighbours' prices from the previous
round, moves its own price by a consensus term (disagreement with neighbours)
and an innovation term (local supply/demand signal), and every VPP then sets
its power on the clipped marginal-cost curve.

Three innovation modes are available:

``paper-literal``
    The update equations exactly as published. In the grid-to-community
    direction the innovations sum to ``-(sum P_g + P_community)``, and in the
    community-to-grid direction the VPP term is destabilising, so this mode
    does not settle at the optimum. Kept for fidelity experiments.
``corrected``
    VPP innovation ``P_g`` and community innovation ``-|P_community|`` in both
    directions, so the innovations sum to the balance mismatch. With constant
    gains the agents settle at a point biased by O(alpha/beta) from the
    optimum.
``fixed-point`` (default)
    As ``corrected``, but every agent drives its price with a running estimate
    of the network-average mismatch, maintained by a second consensus on the
    innovation signals. The network-average price follows the same dynamics
    as ``corrected``; the analytical optimum with zero mismatch estimates is
    an exact fixed point.
"""

from __future__ import annotations

import csv
import enum
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analytical import OptimalDispatch, solve_centralized
from .model import FlowDirection, InvalidDirectionError, Scenario, TecError, VppSpec

logger = logging.getLogger(__name__)

COMMUNITY_ID = "community"


class InvalidTopologyError(TecError, ValueError):
    pass


class DivergenceError(TecError, ArithmeticError):
    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite price or power at iteration {iteration}")


class InnovationMode(str, enum.Enum):
    PAPER_LITERAL = "paper-literal"
    CORRECTED = "corrected"
    FIXED_POINT = "fixed-point"


# -- graph -------------------------------------------------------------------

@dataclass(frozen=True)
class CommGraph:
    nodes: tuple
    adjacency: dict
    community_id: str = COMMUNITY_ID

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        adj = {n: frozenset(self.adjacency.get(n, ())) for n in self.nodes}
        object.__setattr__(self, "adjacency", adj)
        _validate(self.nodes, adj)

    def degree(self, node) -> int:
        return len(self.adjacency[node])

    def edges(self) -> list[tuple]:
        out = []
        for a, b in itertools.combinations(self.nodes, 2):
            if b in self.adjacency[a]:
                out.append((a, b))
        return out

    def laplacian(self, order: Sequence | None = None) -> np.ndarray:
        order = list(order or self.nodes)
        pos = {n: k for k, n in enumerate(order)}
        lap = np.zeros((len(order), len(order)))
        for a, b in self.edges():
            i, j = pos[a], pos[b]
            lap[i, j] = lap[j, i] = -1.0
            lap[i, i] += 1.0
            lap[j, j] += 1.0
        return lap


def _validate(nodes, adj):
    node_set = set(nodes)
    if len(node_set) != len(nodes):
        raise InvalidTopologyError("duplicate node ids")
    for n, nbrs in adj.items():
        if n in nbrs:
            raise InvalidTopologyError(f"self-loop at {n!r}")
        for m in nbrs:
            if m not in node_set:
                raise InvalidTopologyError(f"edge {n!r}-{m!r} leaves the node set")
            if n not in adj[m]:
                raise InvalidTopologyError(f"edge {n!r}-{m!r} is not symmetric")
    seen = {nodes[0]}
    frontier = [nodes[0]]
    while frontier:
        cur = frontier.pop()
        for m in adj[cur]:
            if m not in seen:
                seen.add(m)
                frontier.append(m)
    if seen != node_set:
        missing = sorted(map(str, node_set - seen))
        raise InvalidTopologyError(f"graph is not connected; unreachable: {missing}")


def build_graph(topology: str | Iterable[tuple], n_vpps: int, vpp_ids: Sequence[str] | None = None,
                community_id: str = COMMUNITY_ID) -> CommGraph:
    """Communication graph over ``n_vpps`` VPP agents plus the community agent.

    ``topology`` is ``"star"`` (community at the hub), ``"ring"``,
    ``"complete"``, or an iterable of ``(id, id)`` edges.
    """
    if n_vpps < 1:
        raise InvalidTopologyError("need at least one VPP")
    ids = list(vpp_ids) if vpp_ids is not None else [f"vpp{g + 1}" for g in range(n_vpps)]
    if len(ids) != n_vpps:
        raise InvalidTopologyError("vpp_ids does not match n_vpps")
    nodes = ids + [community_id]
    adj: dict = {n: set() for n in nodes}

    def link(a, b):
        adj[a].add(b)
        adj[b].add(a)

    if isinstance(topology, str):
        if topology == "star":
            for v in ids:
                link(community_id, v)
        elif topology == "ring":
            if len(nodes) == 2:
                link(nodes[0], nodes[1])
            else:
                for k in range(len(nodes)):
                    link(nodes[k], nodes[(k + 1) % len(nodes)])
        elif topology == "complete":
            for a, b in itertools.combinations(nodes, 2):
                link(a, b)
        else:
            raise InvalidTopologyError(f"unknown topology {topology!r}")
    else:
        for a, b in topology:
            a, b = str(a), str(b)
            if a not in adj or b not in adj:
                raise InvalidTopologyError(f"edge {a!r}-{b!r} names an unknown agent")
            if a == b:
                raise InvalidTopologyError(f"self-loop at {a!r}")
            link(a, b)
    return CommGraph(tuple(nodes), adj, community_id)


def read_edge_list(path) -> list[tuple[str, str]]:
    """Parse an ``id,id`` per line edge list; blank lines and ``#`` comments are skipped."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or not all(parts):
                raise InvalidTopologyError(f"{path}:{lineno}: expected 'id,id', got {line!r}")
            edges.append((parts[0], parts[1]))
    return edges


def write_edge_list(graph: CommGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in graph.edges():
            fh.write(f"{a},{b}\n")


# -- gains -------------------------------------------------------------------

@dataclass(frozen=True)
class TuningSchedule:
    alpha0: float
    beta0: float
    decay_alpha: float = 0.0
    decay_beta: float = 0.0

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise ValueError("alpha0 and beta0 must be positive")
        for d in (self.decay_alpha, self.decay_beta):
            if not 0.0 <= d <= 1.0:
                raise ValueError("decay exponents must lie in [0, 1]")


def schedule_gains(schedule: TuningSchedule, t: int) -> tuple[float, float]:
    if t < 0:
        raise ValueError("iteration index must be >= 0")
    k = t + 1.0
    return schedule.alpha0 / k ** schedule.decay_alpha, schedule.beta0 / k ** schedule.decay_beta


def default_schedule(graph: CommGraph) -> TuningSchedule:
    """Constant gains that keep the consensus term stable on ``graph``.

    ``beta0 = 1/(d_max + 1)`` bounds ``beta0 * lambda_max(L)`` below 2. The
    innovation gain was picked with :func:`sweep_gains` on the 5-agent star.
    """
    d_max = max(graph.degree(n) for n in graph.nodes)
    return TuningSchedule(alpha0=0.1, beta0=1.0 / (d_max + 1))


def price_sensitivity(vpps: Sequence[VppSpec]) -> float:
    """Largest total ``sum 1/(2 c1)`` over the two flow directions, in kW per unit price."""
    return max(sum(1.0 / (2.0 * v.g2c.c1) for v in vpps), sum(1.0 / (2.0 * v.c2g.c1) for v in vpps))


def scaled_schedule(vpps: Sequence[VppSpec], graph: CommGraph, gain: float = 0.8) -> TuningSchedule:
    """Constant gains with the innovation step normalised by the fleet's price sensitivity.

    A unit price move shifts total supply by ``price_sensitivity`` kW, so a
    fixed ``alpha0`` that suits a few-kW example is unstable on a fleet of
    hundreds of kW. ``gain`` is the dimensionless loop gain; 0.8 was picked
    with :func:`sweep_gains` on star, ring and complete graphs of 2 to 6 VPPs.
    """
    d_max = max(graph.degree(n) for n in graph.nodes)
    return TuningSchedule(alpha0=gain / price_sensitivity(vpps), beta0=1.0 / (d_max + 1))


# -- agent state ---------------------------------------------------------------

@dataclass(frozen=True)
class AgentState:
    """``mismatch`` is the running estimate used by the ``fixed-point`` mode."""

    id: str
    lam: float
    power: float = 0.0
    is_community: bool = False
    mismatch: float = 0.0


class _Layout:
    """Index bookkeeping between a scenario, a graph and flat arrays."""

    def __init__(self, scenario: Scenario, graph: CommGraph):
        if scenario.direction is FlowDirection.NO_FLOW:
            raise InvalidDirectionError("consensus needs a non-zero community net demand")
        vpp_ids = scenario.ids
        expected = set(vpp_ids) | {graph.community_id}
        if set(graph.nodes) != expected:
            raise InvalidTopologyError(
                f"graph nodes {sorted(graph.nodes)} do not match scenario agents {sorted(expected)}")
        self.order = list(vpp_ids) + [graph.community_id]
        self.n_vpp = len(vpp_ids)
        self.lap = graph.laplacian(self.order)
        pos = {n: k for k, n in enumerate(self.order)}
        edges = np.array([(pos[a], pos[b]) for a, b in graph.edges()], dtype=int)
        self.edge_i, self.edge_j = edges[:, 0], edges[:, 1]
        self.c1, self.c2, self.p_max = scenario.arrays()
        self.direction = scenario.direction
        self.p_community = scenario.p_community
        self.demand = scenario.demand

    def innovation(self, power: np.ndarray, mode: InnovationMode) -> np.ndarray:
        """Signal ``u`` entering each price update as ``- alpha * u``."""
        u = np.empty(self.n_vpp + 1)
        if mode is InnovationMode.PAPER_LITERAL:
            if self.direction is FlowDirection.GRID_TO_COMMUNITY:
                u[:-1] = power
            else:
                u[:-1] = -power
            u[-1] = self.p_community
        else:
            u[:-1] = power
            u[-1] = -self.demand
        return u

    def dispatch(self, lam_vpp: np.ndarray) -> np.ndarray:
        return np.clip((lam_vpp - self.c2) / (2.0 * self.c1), 0.0, self.p_max)

    def neighbor_gap(self, lam: np.ndarray) -> float:
        return float(np.max(np.abs(lam[self.edge_i] - lam[self.edge_j])))

    def per_agent_gap(self, lam: np.ndarray) -> np.ndarray:
        d = np.abs(lam[self.edge_i] - lam[self.edge_j])
        out = np.zeros(lam.size)
        np.maximum.at(out, self.edge_i, d)
        np.maximum.at(out, self.edge_j, d)
        return out

    def to_arrays(self, states: Sequence[AgentState]):
        by_id = {s.id: s for s in states}
        missing = [n for n in self.order if n not in by_id]
        if missing:
            raise InvalidTopologyError(f"no state for agents {missing}")
        lam = np.array([by_id[n].lam for n in self.order], dtype=float)
        power = np.array([by_id[n].power for n in self.order[:-1]], dtype=float)
        y = np.array([by_id[n].mismatch for n in self.order], dtype=float)
        return lam, power, y

    def to_states(self, lam, power, y) -> list[AgentState]:
        out = [AgentState(n, float(lam[k]), float(power[k]), False, float(y[k]))
               for k, n in enumerate(self.order[:-1])]
        out.append(AgentState(self.order[-1], float(lam[-1]), 0.0, True, float(y[-1])))
        return out


def _advance(layout: _Layout, lam, power, y, alpha, beta, mode: InnovationMode):
    u = layout.innovation(power, mode)
    drive = y if mode is InnovationMode.FIXED_POINT else u
    lam_next = lam - beta * (layout.lap @ lam) - alpha * drive
    power_next = layout.dispatch(lam_next[:-1])
    if mode is InnovationMode.FIXED_POINT:
        y_next = y - beta * (layout.lap @ y) + (layout.innovation(power_next, mode) - u)
    else:
        y_next = y
    return lam_next, power_next, y_next


def init_state(scenario: Scenario, warm_lambda: float | None = None,
               graph: CommGraph | None = None,
               mode: InnovationMode | str = InnovationMode.FIXED_POINT) -> list[AgentState]:
    """Initial prices and powers for every agent.

    Prices start at ``warm_lambda`` when given (the previous interval's
    price), otherwise at each VPP's linear cost coefficient, with the
    community at their mean. Powers start at zero; mismatch estimates start
    at each agent's own innovation signal.
    """
    mode = InnovationMode(mode)
    graph = graph or build_graph("star", len(scenario.vpps), scenario.ids)
    layout = _Layout(scenario, graph)
    if warm_lambda is not None:
        lam = np.full(layout.n_vpp + 1, float(warm_lambda))
    else:
        lam = np.append(layout.c2, layout.c2.mean())
    power = np.zeros(layout.n_vpp)
    y = layout.innovation(power, mode) if mode is InnovationMode.FIXED_POINT else np.zeros(layout.n_vpp + 1)
    return layout.to_states(lam, power, y)


def optimum_state(scenario: Scenario, graph: CommGraph,
                  solution: OptimalDispatch | None = None) -> list[AgentState]:
    """The analytical optimum as agent states: lambda* everywhere, P* at the VPPs."""
    sol = solution or solve_centralized(scenario)
    layout = _Layout(scenario, graph)
    lam = np.full(layout.n_vpp + 1, sol.lambda_star)
    power = np.array([sol.p_star[i] for i in layout.order[:-1]])
    return layout.to_states(lam, power, np.zeros(layout.n_vpp + 1))


def consensus_term(states: Sequence[AgentState], graph: CommGraph) -> dict:
    """``sum_{j in neighbours(i)} (lam_i - lam_j)`` for every agent."""
    lam = {s.id: s.lam for s in states}
    return {n: sum(lam[n] - lam[m] for m in graph.adjacency[n]) for n in graph.nodes}


def step(states: Sequence[AgentState], scenario: Scenario, graph: CommGraph,
         schedule: TuningSchedule, t: int,
         mode: InnovationMode | str = InnovationMode.FIXED_POINT) -> list[AgentState]:
    """One synchronous round: every agent reads round-``t`` values and writes round ``t+1``."""
    mode = InnovationMode(mode)
    layout = _Layout(scenario, graph)
    alpha, beta = schedule_gains(schedule, t)
    lam, power, y = layout.to_arrays(states)
    return layout.to_states(*_advance(layout, lam, power, y, alpha, beta, mode))


# -- driver ------------------------------------------------------------------

@dataclass
class ConsensusTrace:
    """Per-iteration diagnostics; row ``k`` describes the state after round ``k + 1``."""

    agent_ids: list
    neighbor_gap: np.ndarray
    oracle_gap: np.ndarray | None = None
    lambdas: np.ndarray | None = None
    powers: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.neighbor_gap.size)


@dataclass
class ConsensusResult:
    lambdas: dict
    powers: dict
    iterations: int
    converged: bool
    trace: ConsensusTrace
    states: list = field(default_factory=list)
    lambda_star: float | None = None

    def price_gap(self, lambda_star: float | None = None) -> float:
        """``max_i |lam_i - lambda*|`` over every agent."""
        ref = self.lambda_star if lambda_star is None else lambda_star
        if ref is None:
            raise ValueError("no reference price available")
        return max(abs(v - ref) for v in self.lambdas.values())


def run(scenario: Scenario, graph: CommGraph, schedule: TuningSchedule | None = None,
        eps: float = 1e-6, n_max: int = 50_000, oracle: OptimalDispatch | None = None,
        warm_lambda: float | None = None, mode: InnovationMode | str = InnovationMode.FIXED_POINT,
        initial: Sequence[AgentState] | None = None, record_history: bool = True,
        mismatch_tol: float | None = None) -> ConsensusResult:
    """Iterate :func:`step` until every neighbour pair agrees within ``eps``, or ``n_max`` rounds.

    Agreement only certifies consensus, not optimality; pass ``oracle`` to
    also record each round's distance to the analytical price. In
    ``fixed-point`` mode each agent additionally waits until its own mismatch
    estimate is within ``mismatch_tol`` (default ``eps``), so that a round in
    which prices coincide by accident does not stop the run.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    mode = InnovationMode(mode)
    schedule = schedule or default_schedule(graph)
    layout = _Layout(scenario, graph)
    states = initial if initial is not None else init_state(scenario, warm_lambda, graph, mode)
    lam, power, y = layout.to_arrays(states)
    ref = oracle.lambda_star if oracle is not None else None
    tracked = mode is InnovationMode.FIXED_POINT
    y_tol = eps if mismatch_tol is None else mismatch_tol

    gaps = np.empty(n_max)
    ogaps = np.empty(n_max) if ref is not None else None
    lam_hist = np.empty((n_max, lam.size)) if record_history else None
    pow_hist = np.empty((n_max, power.size)) if record_history else None

    converged = False
    t = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(n_max):
            alpha, beta = schedule_gains(schedule, t)
            lam, power, y = _advance(layout, lam, power, y, alpha, beta, mode)
            if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(power)) and np.all(np.isfinite(y))):
                raise DivergenceError(t + 1)
            gap = layout.neighbor_gap(lam)
            gaps[t] = gap
            if ogaps is not None:
                ogaps[t] = np.max(np.abs(lam - ref))
            if record_history:
                lam_hist[t] = lam
                pow_hist[t] = power
            if gap <= eps and (not tracked or np.max(np.abs(y)) <= y_tol):
                converged = True
                break
    n_done = t + 1
    trace = ConsensusTrace(
        agent_ids=list(layout.order),
        neighbor_gap=gaps[:n_done].copy(),
        oracle_gap=None if ogaps is None else ogaps[:n_done].copy(),
        lambdas=None if lam_hist is None else lam_hist[:n_done].copy(),
        powers=None if pow_hist is None else pow_hist[:n_done].copy(),
    )
    if not converged:
        logger.info("consensus stopped at n_max=%d with neighbour gap %.3g", n_max, gaps[t])
    return ConsensusResult(
        lambdas={n: float(lam[k]) for k, n in enumerate(layout.order)},
        powers={n: float(power[k]) for k, n in enumerate(layout.order[:-1])},
        iterations=n_done,
        converged=converged,
        trace=trace,
        states=layout.to_states(lam, power, y),
        lambda_star=ref,
    )


def write_trace_csv(result: ConsensusResult, path, graph: CommGraph | None = None) -> None:
    """Long-format trace: ``iteration,agent_id,lambda,power,neighbor_gap,oracle_gap``.

    Requires a run with ``record_history=True``. Community rows leave
    ``power`` empty, and ``oracle_gap`` is empty when no oracle was given.
    """
    tr = result.trace
    if tr.lambdas is None:
        raise ValueError("trace has no per-agent history; run with record_history=True")
    ids = tr.agent_ids
    if graph is None:
        graph = build_graph("star", len(ids) - 1, ids[:-1], ids[-1])
    pos = {n: k for k, n in enumerate(ids)}
    pairs = np.array([(pos[a], pos[b]) for a, b in graph.edges()], dtype=int)
    ref = result.lambda_star
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "agent_id", "lambda", "power", "neighbor_gap", "oracle_gap"])
        for k in range(len(tr)):
            lam = tr.lambdas[k]
            d = np.abs(lam[pairs[:, 0]] - lam[pairs[:, 1]])
            agent_gap = np.zeros(lam.size)
            np.maximum.at(agent_gap, pairs[:, 0], d)
            np.maximum.at(agent_gap, pairs[:, 1], d)
            for a, name in enumerate(ids):
                power = repr(float(tr.powers[k, a])) if a < len(ids) - 1 else ""
                ogap = "" if ref is None else repr(float(abs(lam[a] - ref)))
                w.writerow([k + 1, name, repr(float(lam[a])), power, repr(float(agent_gap[a])), ogap])


def sweep_gains(scenarios: Sequence[Scenario], graph_for, alphas: Iterable[float],
                betas: Iterable[float], eps: float = 1e-6, n_max: int = 20_000,
                mode: InnovationMode | str = InnovationMode.FIXED_POINT) -> list[dict]:
    """Grid search over constant gains, scored against the analytical price.

    ``graph_for`` maps a scenario to its graph (or is a single graph). Rows
    are sorted best first: fewest failures, then smallest worst price gap,
    then fewest mean iterations.
    """
    rows = []
    oracles = [solve_centralized(s) for s in scenarios]
    for a, b in itertools.product(list(alphas), list(betas)):
        sched = TuningSchedule(a, b)
        worst, iters, failures = 0.0, [], 0
        for s, o in zip(scenarios, oracles):
            g = graph_for(s) if callable(graph_for) else graph_for
            try:
                res = run(s, g, sched, eps, n_max, o, mode=mode, record_history=False)
            except DivergenceError:
                failures += 1
                continue
            gap = res.price_gap() / max(1.0, abs(o.lambda_star))
            worst = max(worst, gap)
            iters.append(res.iterations)
            if not res.converged:
                failures += 1
        rows.append({"alpha0": a, "beta0": b, "failures": failures, "worst_rel_gap": worst,
                     "mean_iterations": float(np.mean(iters)) if iters else float("inf")})
    rows.sort(key=lambda r: (r["failures"], r["worst_rel_gap"], r["mean_iterations"]))
    return rows
