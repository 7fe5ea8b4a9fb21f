"""Run configuration: one TOML file, overridable from the command line.

Every section is optional; missing keys take the defaults below. The resolved
configuration (after overrides) is hashed so outputs can record exactly which
settings produced them.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .consensus import (
    CommGraph,
    InnovationMode,
    TuningSchedule,
    build_graph,
    read_edge_list,
    scaled_schedule,
)
from .forecast.federated import FedConfig, LearnerConfig
from .model import TecError, VppSpec, vpps_from_config
from .pipeline import COMMUNITY_A, COMMUNITY_B, TEST_DAYS, CommunitySpec, TestDay

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {"data_dir": "data", "out_dir": "out"},
    "data": {"days": 365, "community_a": 100, "community_b": 25},
    "vpp": {"n": 4, "margin": 1.25, "fleet": []},
    "graph": {"topology": "star", "edges": ""},
    "tuning": {"gain": 0.8, "alpha0": 0.0, "beta0": 0.0, "decay_alpha": 0.0, "decay_beta": 0.0,
               "eps": 1e-6, "n_max": 50_000, "mode": InnovationMode.FIXED_POINT.value},
    "learner": {},
    "federated": {
        "a": {"rounds": COMMUNITY_A.fed.rounds, "participants": COMMUNITY_A.fed.participants},
        "b": {"rounds": COMMUNITY_B.fed.rounds, "participants": COMMUNITY_B.fed.participants},
    },
    "experiment": {"methods": ["rnd", "flf", "lmf"], "communities": ["a", "b"],
                   "days": [d.label for d in TEST_DAYS], "history_days": 0, "workers": 1},
}


class ConfigError(TecError, ValueError):
    pass


def _merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    source: Path | None = None

    # -- construction ----------------------------------------------------------

    @classmethod
    def load(cls, path=None, overrides: Mapping | None = None) -> "RunConfig":
        data: dict = {}
        source = None
        if path is not None:
            source = Path(path)
            try:
                with open(source, "rb") as fh:
                    data = tomllib.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {source}") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{source}: {exc}") from None
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        raw = _merge(DEFAULTS, data)
        if overrides:
            raw = _merge(raw, overrides)
        cfg = cls(raw, source)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.learner_config()
            for name in ("a", "b"):
                self.fed_config(name)
            for m in self.methods:
                if m not in ("rnd", "flf", "lmf"):
                    raise ConfigError(f"unknown method {m!r}")
            for c in self.communities:
                if c not in ("a", "b"):
                    raise ConfigError(f"unknown community {c!r}")
            self.test_days()
            InnovationMode(self.raw["tuning"]["mode"])
            if not self.eps > 0 or self.n_max < 1:
                raise ConfigError("tuning.eps must be positive and tuning.n_max at least 1")
            if float(self.raw["tuning"]["gain"]) <= 0:
                raise ConfigError("tuning.gain must be positive")
            if int(self.raw["data"]["days"]) < 1:
                raise ConfigError("data.days must be at least 1")
            self.vpp_fleet()
        except TecError as exc:
            raise ConfigError(str(exc)) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    # -- provenance ----------------------------------------------------------------

    @property
    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def provenance(self) -> list[str]:
        return [f"config_hash={self.digest}", f"seed={self.seed}"]

    # -- typed views -----------------------------------------------------------------

    @property
    def data_dir(self) -> Path:
        return Path(self.raw["paths"]["data_dir"])

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["paths"]["out_dir"])

    @property
    def days(self) -> int:
        return int(self.raw["data"]["days"])

    @property
    def methods(self) -> list[str]:
        return [str(m).lower() for m in self.raw["experiment"]["methods"]]

    @property
    def communities(self) -> list[str]:
        return [str(c).lower() for c in self.raw["experiment"]["communities"]]

    @property
    def history_days(self) -> int | None:
        h = int(self.raw["experiment"].get("history_days", 0))
        return h if h > 0 else None

    @property
    def workers(self) -> int:
        return max(1, int(self.raw["experiment"].get("workers", 1)))

    def test_days(self) -> list[TestDay]:
        known = {d.label: d for d in TEST_DAYS}
        out = []
        for label in self.raw["experiment"]["days"]:
            if label in known:
                out.append(known[label])
            else:
                raise ConfigError(f"unknown test day {label!r}; choose from {sorted(known)}")
        return out

    def community(self, name: str) -> CommunitySpec:
        base = COMMUNITY_A if name == "a" else COMMUNITY_B
        n = int(self.raw["data"][f"community_{name}"])
        return CommunitySpec(base.name, n, base.split_mode, self.fed_config(name), base.transfer_from)

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(**self.raw["learner"])

    def fed_config(self, name: str) -> FedConfig:
        f = self.raw["federated"][name]
        return FedConfig(int(f["rounds"]), int(f["participants"]), self.seed)

    def vpp_fleet(self) -> tuple[VppSpec, ...] | None:
        fleet = self.raw["vpp"].get("fleet") or []
        return vpps_from_config(fleet) if fleet else None

    def graph(self, vpps) -> CommGraph:
        ids = [v.id for v in vpps]
        edges = self.raw["graph"].get("edges") or ""
        if edges:
            return build_graph(read_edge_list(edges), len(ids), ids)
        return build_graph(self.raw["graph"]["topology"], len(ids), ids)

    def schedule(self, vpps, graph: CommGraph) -> TuningSchedule:
        """Explicit ``alpha0``/``beta0`` win; otherwise gains are scaled to the fleet."""
        t = self.raw["tuning"]
        base = scaled_schedule(vpps, graph, float(t["gain"]))
        alpha = float(t["alpha0"]) or base.alpha0
        beta = float(t["beta0"]) or base.beta0
        return TuningSchedule(alpha, beta, float(t["decay_alpha"]), float(t["decay_beta"]))

    @property
    def eps(self) -> float:
        return float(self.raw["tuning"]["eps"])

    @property
    def n_max(self) -> int:
        return int(self.raw["tuning"]["n_max"])

    @property
    def mode(self) -> InnovationMode:
        return InnovationMode(self.raw["tuning"]["mode"])
