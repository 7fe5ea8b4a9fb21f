"""Training and forecasting pipelines for the two synthetic communities.

Community ``a`` is data-rich: 100 buildings trained on the full history before
the test month. Community ``b`` is data-poor: 25 buildings that only see days
1-28 of the test month, with federated training started from community ``a``'s
final global model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import DEFAULT_YEAR, Building, SplitMode, SplitSpec, generate_community, split
from .forecast.federated import (
    ClientDataset,
    FedConfig,
    LearnerConfig,
    ModelWeights,
    TargetKind,
    rolling_forecast,
    run_federated,
    train_local_only,
)
from .model import INTERVALS_PER_DAY, InvalidInputError, TecError, default_vpps

logger = logging.getLogger(__name__)

TARGETS = (TargetKind.DEMAND, TargetKind.GENERATION)


class MissingModelError(TecError, LookupError):
    pass


@dataclass(frozen=True)
class CommunitySpec:
    name: str
    n_buildings: int
    split_mode: SplitMode
    fed: FedConfig
    transfer_from: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "split_mode", SplitMode(self.split_mode))
        if self.n_buildings < 1:
            raise InvalidInputError("a community needs at least one building")


COMMUNITY_A = CommunitySpec("a", 100, SplitMode.FULL_HISTORY, FedConfig(rounds=30, participants=5))
COMMUNITY_B = CommunitySpec("b", 25, SplitMode.SCARCE, FedConfig(rounds=1, participants=25), transfer_from="a")


@dataclass(frozen=True)
class TestDay:
    label: str
    date: str

    @property
    def month(self) -> int:
        return int(self.date[5:7])

    @property
    def year(self) -> int:
        return int(self.date[:4])


TEST_DAYS = (
    TestDay("april", f"{DEFAULT_YEAR}-04-30"),
    TestDay("august", f"{DEFAULT_YEAR}-08-31"),
    TestDay("december", f"{DEFAULT_YEAR}-12-31"),
)


def community_seed(seed: int, name: str) -> int:
    """Independent data seed per community derived from one run seed."""
    return int(np.random.SeedSequence([seed, *name.encode()]).generate_state(1)[0])


def build_community(spec: CommunitySpec, seed: int, days: int = 365) -> list[Building]:
    return generate_community(spec.name, spec.n_buildings, days, community_seed(seed, spec.name))


def _target(b: Building, kind: TargetKind):
    return b.demand if kind is TargetKind.DEMAND else b.generation


def client_datasets(buildings: Sequence[Building], split_mode: SplitMode, test_day: TestDay,
                    history_days: int | None = None) -> dict[TargetKind, list[ClientDataset]]:
    """Training clients per target kind, normalised on their own training portion.

    ``history_days`` keeps only the most recent days of a full-history split,
    which bounds training time in quick runs.
    """
    spec = SplitSpec(test_day.month, split_mode)
    out: dict[TargetKind, list[ClientDataset]] = {k: [] for k in TARGETS}
    for b in buildings:
        for kind in TARGETS:
            train, _ = split(_target(b, kind), spec, test_day.year)
            if history_days is not None and split_mode is SplitMode.FULL_HISTORY:
                keep = history_days * INTERVALS_PER_DAY
                if len(train) > keep:
                    train = train.window(train.timestamps[-keep], train.timestamps[-1] + 1)
            out[kind].append(ClientDataset(b.id, kind, train))
    return out


@dataclass
class TrainedModels:
    """Weights and normalisation per ``(building, target)``.

    A federated run stores the one global model under every building.
    """

    method: str
    weights: dict = field(default_factory=dict)
    normalization: dict = field(default_factory=dict)
    global_weights: dict = field(default_factory=dict)

    def lookup(self, building_id: str, kind: TargetKind) -> tuple[ModelWeights, tuple]:
        key = (building_id, TargetKind(kind))
        if key not in self.weights:
            raise MissingModelError(f"no {self.method} model for {building_id}/{TargetKind(kind).value}")
        return self.weights[key], self.normalization[key]


def train_flf(clients: Mapping[TargetKind, list[ClientDataset]], fed: FedConfig, cfg: LearnerConfig,
              init: Mapping[TargetKind, ModelWeights] | None = None, log: list | None = None,
              workers: int = 1) -> TrainedModels:
    models = TrainedModels("flf")
    for k_index, kind in enumerate(TARGETS):
        # independent selection streams for the demand and generation pools
        fed_k = FedConfig(fed.rounds, fed.participants, fed.seed * 2 + k_index)
        start = None if init is None else init[kind]
        g = run_federated(clients[kind], fed_k, cfg, init=start, log=log, workers=workers)
        models.global_weights[kind] = g
        for c in clients[kind]:
            models.weights[(c.building_id, kind)] = g
            models.normalization[(c.building_id, kind)] = c.normalization
    return models


def train_lmf(clients: Mapping[TargetKind, list[ClientDataset]], cfg: LearnerConfig, seed: int) -> TrainedModels:
    models = TrainedModels("lmf")
    for k_index, kind in enumerate(TARGETS):
        seeds = np.random.SeedSequence([seed, k_index]).spawn(len(clients[kind]))
        for c, ss in zip(clients[kind], seeds):
            models.weights[(c.building_id, kind)] = train_local_only(c, cfg, np.random.default_rng(ss))
            models.normalization[(c.building_id, kind)] = c.normalization
    return models


def _day_slice(b: Building, test_day: TestDay) -> tuple[int, int]:
    t0 = np.datetime64(test_day.date, "m")
    start = int(np.searchsorted(b.demand.timestamps, t0))
    if start + INTERVALS_PER_DAY > len(b.demand) or b.demand.timestamps[start] != t0:
        raise InvalidInputError(f"building {b.id} does not cover {test_day.date}")
    return start, start + INTERVALS_PER_DAY


def true_net(buildings: Sequence[Building], test_day: TestDay) -> np.ndarray:
    start, stop = _day_slice(buildings[0], test_day)
    return np.sum([b.net.values[start:stop] for b in buildings], axis=0)


def building_forecasts(buildings: Sequence[Building], models: TrainedModels,
                       test_day: TestDay) -> dict[tuple[str, TargetKind], np.ndarray]:
    """One-step-ahead kW forecasts of every building and target over the test day."""
    out = {}
    for b in buildings:
        start, stop = _day_slice(b, test_day)
        for kind in TARGETS:
            w, norm = models.lookup(b.id, kind)
            out[(b.id, kind)] = rolling_forecast(w, _target(b, kind).values, norm, start, stop)
    return out


def forecast_net(buildings: Sequence[Building], models: TrainedModels, test_day: TestDay) -> np.ndarray:
    """Community net demand composed from per-building demand and generation forecasts."""
    per = building_forecasts(buildings, models, test_day)
    return np.sum([per[(b.id, TargetKind.DEMAND)] - per[(b.id, TargetKind.GENERATION)]
                   for b in buildings], axis=0)


def held_out_rmse(buildings: Sequence[Building], models: TrainedModels, split_mode: SplitMode,
                  test_day: TestDay) -> float:
    """Mean over buildings and targets of the normalised one-step RMSE on the held-out portion."""
    spec = SplitSpec(test_day.month, split_mode)
    errs = []
    for b in buildings:
        for kind in TARGETS:
            series = _target(b, kind)
            _, test = split(series, spec, test_day.year)
            w, norm = models.lookup(b.id, kind)
            start = int(np.searchsorted(series.timestamps, test.timestamps[0]))
            stop = start + len(test)
            pred = rolling_forecast(w, series.values, norm, start, stop)
            lo, hi = norm
            scale = hi - lo if hi > lo else 1.0
            errs.append(float(np.sqrt(np.mean(((pred - series.values[start:stop]) / scale) ** 2))))
    return float(np.mean(errs))


def fleet_for(buildings: Sequence[Building], n_vpps: int = 4, margin: float = 1.25, seed: int = 0):
    """Default VPP fleet sized to ``margin`` times the community's largest absolute net demand."""
    peak = float(np.max(np.abs(np.sum([b.net.values for b in buildings], axis=0))))
    return default_vpps(n_vpps, capacity=margin * max(peak, 1.0), seed=seed)
