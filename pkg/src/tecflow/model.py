"""Domain types shared across the package: VPPs, scenarios, flow direction, time series.

Sign convention: ``p_community > 0`` means the community imports power from
the VPPs (grid-to-community); ``p_community < 0`` means it exports
(community-to-grid). Power is in kW, prices in currency per kW-interval; these
units are conventions of this package.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

RESOLUTION = np.timedelta64(15, "m")
INTERVALS_PER_DAY = 96


class TecError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TecError, ValueError):
    pass


class InvalidDirectionError(TecError, ValueError):
    pass


class InfeasibleScenarioError(TecError, ValueError):
    pass


class FlowDirection(enum.Enum):
    GRID_TO_COMMUNITY = "g2c"
    COMMUNITY_TO_GRID = "c2g"
    NO_FLOW = "none"


def direction_of(p_community: float) -> FlowDirection:
    """Classify the power flow implied by a signed community net demand."""
    p = float(p_community)
    if not math.isfinite(p):
        raise InvalidInputError(f"community net demand must be finite, got {p_community!r}")
    if p > 0.0:
        return FlowDirection.GRID_TO_COMMUNITY
    if p < 0.0:
        return FlowDirection.COMMUNITY_TO_GRID
    return FlowDirection.NO_FLOW


@dataclass(frozen=True)
class CostCoefficients:
    """Quadratic cost ``c1 * P**2 + c2 * P`` of moving power through one VPP."""

    c1: float
    c2: float

    def __post_init__(self):
        if not (math.isfinite(self.c1) and math.isfinite(self.c2)):
            raise InvalidInputError("cost coefficients must be finite")
        if self.c1 <= 0.0:
            raise InvalidInputError(f"c1 must be strictly positive, got {self.c1}")
        if self.c2 < 0.0:
            raise InvalidInputError(f"c2 must be non-negative, got {self.c2}")

    def marginal(self, p: float) -> float:
        return 2.0 * self.c1 * p + self.c2

    def cost(self, p: float) -> float:
        return self.c1 * p * p + self.c2 * p


@dataclass(frozen=True)
class VppSpec:
    id: str
    g2c: CostCoefficients
    c2g: CostCoefficients
    p_max_g2c: float
    p_max_c2g: float

    def __post_init__(self):
        for name in ("p_max_g2c", "p_max_c2g"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise InvalidInputError(f"{name} of VPP {self.id!r} must be finite and >= 0, got {v}")


def effective_coeffs(vpp: VppSpec, direction: FlowDirection) -> tuple[CostCoefficients, float]:
    """Pick the cost curve and capacity that apply in ``direction``."""
    if direction is FlowDirection.GRID_TO_COMMUNITY:
        return vpp.g2c, vpp.p_max_g2c
    if direction is FlowDirection.COMMUNITY_TO_GRID:
        return vpp.c2g, vpp.p_max_c2g
    raise InvalidDirectionError("no cost curve applies when there is no power flow")


@dataclass(frozen=True)
class Scenario:
    """One 15-minute aggregation instance. Feasibility is validated on construction."""

    vpps: tuple[VppSpec, ...]
    p_community: float
    interval_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vpps", tuple(self.vpps))
        object.__setattr__(self, "p_community", float(self.p_community))
        if len(self.vpps) == 0:
            raise InvalidInputError("a scenario needs at least one VPP")
        ids = [v.id for v in self.vpps]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate VPP ids: {ids}")
        if not 0 <= self.interval_index < INTERVALS_PER_DAY:
            raise InvalidInputError(f"interval_index must be in 0..95, got {self.interval_index}")
        direction = direction_of(self.p_community)
        if direction is FlowDirection.GRID_TO_COMMUNITY:
            cap = sum(v.p_max_g2c for v in self.vpps)
            if cap < self.p_community:
                raise InfeasibleScenarioError(
                    f"community imports {self.p_community} kW but VPPs can export only {cap} kW")
        elif direction is FlowDirection.COMMUNITY_TO_GRID:
            cap = sum(v.p_max_c2g for v in self.vpps)
            if cap < -self.p_community:
                raise InfeasibleScenarioError(
                    f"community exports {-self.p_community} kW but VPPs can absorb only {cap} kW")

    @property
    def direction(self) -> FlowDirection:
        return direction_of(self.p_community)

    @property
    def demand(self) -> float:
        """Magnitude the VPPs must jointly supply or absorb."""
        return abs(self.p_community)

    @property
    def ids(self) -> list[str]:
        return [v.id for v in self.vpps]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(c1, c2, p_max)`` vectors for the active direction."""
        direction = self.direction
        picked = [effective_coeffs(v, direction) for v in self.vpps]
        c1 = np.array([c.c1 for c, _ in picked], dtype=float)
        c2 = np.array([c.c2 for c, _ in picked], dtype=float)
        p_max = np.array([p for _, p in picked], dtype=float)
        return c1, c2, p_max

    def with_demand(self, p_community: float, interval_index: int | None = None) -> "Scenario":
        return Scenario(self.vpps, p_community,
                        self.interval_index if interval_index is None else interval_index)


# -- time series ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniform 15-minute series of kW values.

    ``timestamps`` is a ``datetime64[m]`` array; both arrays are read-only.
    """

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]").copy()
        vals = np.asarray(self.values, dtype=float).copy()
        if ts.ndim != 1 or vals.ndim != 1 or ts.shape != vals.shape:
            raise InvalidInputError("timestamps and values must be 1-D arrays of equal length")
        if ts.size > 1:
            steps = np.diff(ts)
            if np.any(steps <= np.timedelta64(0, "m")):
                raise InvalidInputError("timestamps must be strictly increasing")
            if np.any(steps != RESOLUTION):
                raise InvalidInputError("timestamps must be uniformly spaced at 15 minutes")
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_start(cls, start, values: Sequence[float]) -> "TimeSeries":
        values = np.asarray(values, dtype=float)
        t0 = np.datetime64(start, "m")
        return cls(t0 + np.arange(values.size) * RESOLUTION, values)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def aligned_with(self, other: "TimeSeries") -> bool:
        return np.array_equal(self.timestamps, other.timestamps)

    def window(self, start, stop) -> "TimeSeries":
        """Points with ``start <= t < stop``."""
        lo = np.datetime64(start, "m")
        hi = np.datetime64(stop, "m")
        mask = (self.timestamps >= lo) & (self.timestamps < hi)
        return TimeSeries(self.timestamps[mask], self.values[mask])


# -- structured config ------------------------------------------------------

def cost_from_dict(d: Mapping[str, Any]) -> CostCoefficients:
    return CostCoefficients(float(d["c1"]), float(d["c2"]))


def vpp_from_dict(d: Mapping[str, Any]) -> VppSpec:
    return VppSpec(
        id=str(d["id"]),
        g2c=cost_from_dict(d["g2c"]),
        c2g=cost_from_dict(d["c2g"]),
        p_max_g2c=float(d["p_max_g2c"]),
        p_max_c2g=float(d["p_max_c2g"]),
    )


def vpp_to_dict(v: VppSpec) -> dict[str, Any]:
    return {
        "id": v.id,
        "g2c": {"c1": v.g2c.c1, "c2": v.g2c.c2},
        "c2g": {"c1": v.c2g.c1, "c2": v.c2g.c2},
        "p_max_g2c": v.p_max_g2c,
        "p_max_c2g": v.p_max_c2g,
    }


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    return {
        "p_community": s.p_community,
        "interval_index": s.interval_index,
        "vpp": [vpp_to_dict(v) for v in s.vpps],
    }


def scenario_from_dict(d: Mapping[str, Any]) -> Scenario:
    return Scenario(
        vpps=tuple(vpp_from_dict(v) for v in d["vpp"]),
        p_community=float(d["p_community"]),
        interval_index=int(d.get("interval_index", 0)),
    )


def vpps_from_config(items: Iterable[Mapping[str, Any]]) -> tuple[VppSpec, ...]:
    return tuple(vpp_from_dict(v) for v in items)


def default_vpps(n: int = 4, capacity: float = 100.0, seed: int = 0) -> tuple[VppSpec, ...]:
    """A heterogeneous VPP fleet whose total capacity in each direction is ``capacity``.

    Cost curves scale with the per-VPP share so marginal prices stay in a
    comparable range whatever the community size.
    """
    rng = np.random.default_rng(seed)
    share = rng.uniform(0.7, 1.3, size=n)
    share = share / share.sum()
    out = []
    for g in range(n):
        cap = float(capacity * share[g])
        out.append(VppSpec(
            id=f"vpp{g + 1}",
            g2c=CostCoefficients(float(rng.uniform(0.5, 1.5) / cap), float(rng.uniform(1.0, 4.0))),
            c2g=CostCoefficients(float(rng.uniform(0.3, 1.0) / cap), float(rng.uniform(0.5, 2.0))),
            p_max_g2c=cap,
            p_max_c2g=cap,
        ))
    return tuple(out)
