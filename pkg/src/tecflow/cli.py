"""Command-line entry point: ``tecflow {generate,train,solve,simulate,report}``.

Exit codes: 0 success, 2 configuration, 3 data, 4 training/models,
5 consensus divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .analytical import solve_centralized
from .config import ConfigError, RunConfig
from .consensus import DivergenceError, run
from .data import (
    AlignmentError,
    Building,
    CsvFormatError,
    SpanError,
    generate_community,
    load_csv,
    write_csv,
)
from .forecast.federated import (
    ClientTrainingError,
    DataTooShortError,
    RoundLog,
    TargetKind,
    load_weights,
    save_weights,
    write_training_log,
)
from .forecast.learners import IncompatibleWeightsError
from .harness import (
    DayInputs,
    IntervalDivergenceError,
    PredictionMethod,
    compare_methods,
    write_gap_long_csv,
    write_report_csv,
    write_summary_csv,
)
from .model import FlowDirection, InfeasibleScenarioError, InvalidInputError, Scenario, default_vpps
from .pipeline import (
    TARGETS,
    MissingModelError,
    TestDay,
    TrainedModels,
    client_datasets,
    community_seed,
    fleet_for,
    forecast_net,
    train_flf,
    train_lmf,
    true_net,
)

logger = logging.getLogger("tecflow")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_DIVERGENCE = 5


class MissingTransferModelError(MissingModelError):
    pass


# -- on-disk layout -------------------------------------------------------------

def community_dir(cfg: RunConfig, name: str) -> Path:
    return cfg.data_dir / f"community_{name}"


def model_dir(cfg: RunConfig, community: str, day: TestDay, method: str) -> Path:
    return cfg.out_dir / "models" / community / day.label / method


def _weights_path(folder: Path, building: str | None, kind: TargetKind) -> Path:
    stem = "global" if building is None else building
    return folder / f"{stem}_{kind.value}.txt"


def load_buildings(cfg: RunConfig, name: str) -> list[Building]:
    root = community_dir(cfg, name)
    if not root.is_dir():
        raise FileNotFoundError(f"no data for community {name} at {root}; run 'generate' first")
    out = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        out.append(Building(d.name, load_csv(d / "demand.csv"), load_csv(d / "generation.csv")))
    if not out:
        raise FileNotFoundError(f"{root} holds no building directories")
    return out


# -- commands ---------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    comments = cfg.provenance()
    for name in ("a", "b"):
        spec = cfg.community(name)
        buildings = generate_community(name, spec.n_buildings, cfg.days, community_seed(cfg.seed, name))
        for b in buildings:
            folder = community_dir(cfg, name) / b.id
            folder.mkdir(parents=True, exist_ok=True)
            write_csv(b.demand, folder / "demand.csv", comments)
            write_csv(b.generation, folder / "generation.csv", comments)
        logger.info("community %s: %d buildings written to %s", name, len(buildings), community_dir(cfg, name))
    print(f"generated data under {cfg.data_dir}")
    return EXIT_OK


def _load_models(cfg: RunConfig, community: str, day: TestDay, method: str,
                 buildings: Sequence[Building]) -> TrainedModels:
    folder = model_dir(cfg, community, day, method)
    models = TrainedModels(method)
    for kind in TARGETS:
        shared = None
        if method == "flf":
            path = _weights_path(folder, None, kind)
            if not path.exists():
                raise MissingModelError(f"missing {method} model {path}; run 'train --method {method}' first")
            shared = load_weights(path)
            models.global_weights[kind] = shared
        for b in buildings:
            if shared is None:
                path = _weights_path(folder, b.id, kind)
                if not path.exists():
                    raise MissingModelError(f"missing {method} model {path}; run 'train --method {method}' first")
                models.weights[(b.id, kind)] = load_weights(path)
            else:
                models.weights[(b.id, kind)] = shared
    return models


def _attach_normalization(models: TrainedModels, clients) -> None:
    for kind, items in clients.items():
        for c in items:
            models.normalization[(c.building_id, kind)] = c.normalization


def cmd_train(cfg: RunConfig, method: str) -> int:
    if method not in ("flf", "lmf"):
        raise ConfigError("train needs --method flf or --method lmf")
    learner = cfg.learner_config()
    comments = cfg.provenance()
    for name in cfg.communities:
        spec = cfg.community(name)
        buildings = load_buildings(cfg, name)
        for day in cfg.test_days():
            clients = client_datasets(buildings, spec.split_mode, day, cfg.history_days)
            folder = model_dir(cfg, name, day, method)
            init = None
            if method == "flf" and spec.transfer_from:
                src = model_dir(cfg, spec.transfer_from, day, "flf")
                init = {}
                for kind in TARGETS:
                    path = _weights_path(src, None, kind)
                    if not path.exists():
                        raise MissingTransferModelError(
                            f"community {name} starts from community {spec.transfer_from}'s model, "
                            f"but {path} is missing; train community {spec.transfer_from} first")
                    init[kind] = load_weights(path)
            folder.mkdir(parents=True, exist_ok=True)
            if method == "flf":
                log: list[RoundLog] = []
                models = train_flf(clients, spec.fed, learner, init=init, log=log, workers=cfg.workers)
                for kind in TARGETS:
                    save_weights(models.global_weights[kind], _weights_path(folder, None, kind), comments)
                write_training_log(log, folder / "training_log.csv")
            else:
                models = train_lmf(clients, learner, cfg.seed)
                for (bid, kind), w in sorted(models.weights.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
                    save_weights(w, _weights_path(folder, bid, kind), comments)
            print(f"trained {method} models for community {name}, {day.label} -> {folder}")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, p_community: float) -> int:
    vpps = cfg.vpp_fleet() or default_vpps(int(cfg.raw["vpp"]["n"]), seed=cfg.seed)
    scenario = Scenario(vpps, p_community)
    if scenario.direction is FlowDirection.NO_FLOW:
        print("NoFlow: community net demand is zero, nothing to dispatch")
        return EXIT_OK
    graph = cfg.graph(vpps)
    sol = solve_centralized(scenario)
    res = run(scenario, graph, cfg.schedule(vpps, graph), eps=cfg.eps, n_max=cfg.n_max,
              oracle=sol, mode=cfg.mode, record_history=False)
    print(f"direction: {scenario.direction.value}   demand: {scenario.demand:g} kW")
    print(f"{'agent':<12}{'analytical':>16}{'consensus':>16}")
    print(f"{'price':<12}{sol.lambda_star:>16.6f}{np.mean(list(res.lambdas.values())):>16.6f}")
    for v in vpps:
        print(f"{v.id:<12}{sol.p_star[v.id]:>16.6f}{res.powers[v.id]:>16.6f}")
    print(f"objective: {sol.objective:.6f}   at upper: {sorted(sol.active_set.at_upper)}   "
          f"at lower: {sorted(sol.active_set.at_lower)}")
    print(f"consensus: {res.iterations} iterations, converged={res.converged}, "
          f"max price gap {res.price_gap():.3e}")
    return EXIT_OK


def _check_models_present(cfg: RunConfig, communities, days, methods) -> None:
    for name in communities:
        for day in days:
            for m in methods:
                if m == "rnd":
                    continue
                folder = model_dir(cfg, name, day, m)
                if not folder.is_dir():
                    raise MissingModelError(f"missing {m} models for community {name}, {day.label} at {folder}")


def cmd_simulate(cfg: RunConfig) -> int:
    methods = cfg.methods
    days = cfg.test_days()
    _check_models_present(cfg, cfg.communities, days, methods)
    cells = []
    for name in cfg.communities:
        spec = cfg.community(name)
        buildings = load_buildings(cfg, name)
        vpps = cfg.vpp_fleet() or fleet_for(buildings, int(cfg.raw["vpp"]["n"]),
                                            float(cfg.raw["vpp"]["margin"]), cfg.seed)
        graph = cfg.graph(vpps)
        schedule = cfg.schedule(vpps, graph)
        for day in days:
            forecasts = {}
            clients = None
            for m in methods:
                if m == "rnd":
                    continue
                if clients is None:
                    clients = client_datasets(buildings, spec.split_mode, day, cfg.history_days)
                models = _load_models(cfg, name, day, m, buildings)
                _attach_normalization(models, clients)
                forecasts[PredictionMethod(m)] = forecast_net(buildings, models, day)
            cells.append(DayInputs(name, day.label, true_net(buildings, day), forecasts, vpps, graph, schedule))
    rows, reports = compare_methods(cells, methods, eps=cfg.eps, n_max=cfg.n_max, mode=cfg.mode,
                                    progress=lambda s: logger.info("simulating %s", s))
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    comments = cfg.provenance()
    write_summary_csv(rows, out / "summary.csv", comments)
    write_report_csv(reports, out / "report.csv", comments)
    for cell in cells:
        mine = [r for r in reports if r.community == cell.community and r.day == cell.day]
        write_gap_long_csv(mine, out / f"price_gap_{cell.community}_{cell.day}.csv", comments)
    print(f"wrote {len(rows)} summary rows to {out / 'summary.csv'}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    """Print the summary as a community-by-day grid with one column per method."""
    path = cfg.out_dir / "summary.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'simulate' first")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    cells: dict = {}
    for r in rows:
        cells.setdefault((r["community"], r["day"]), {})[r["method"]] = r
    lines = ["Total energy price difference (sum over 96 intervals of the worst agent's gap)", ""]
    head = f"{'community':<10}{'day':<10}" + "".join(f"{m.upper():>14}" for m in methods)
    lines += [head, "-" * len(head)]
    for (community, day), by in cells.items():
        vals = "".join(f"{float(by[m]['total_price_difference']):>14.4f}" if m in by else f"{'':>14}"
                       for m in methods)
        lines.append(f"{community:<10}{day:<10}{vals}")
    lines += ["", "Forecast RMSE of community net demand (kW)", "", head, "-" * len(head)]
    for (community, day), by in cells.items():
        vals = "".join(f"{float(by[m]['forecast_rmse']):>14.4f}" if m in by else f"{'':>14}" for m in methods)
        lines.append(f"{community:<10}{day:<10}{vals}")
    text = "\n".join(lines) + "\n"
    (cfg.out_dir / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--method", choices=["rnd", "flf", "lmf"],
                        help="restrict simulate to one method; pick the training mode for train")
    common.add_argument("--community", choices=["a", "b"], help="restrict to one community")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--data", help="override the data directory")

    parser = argparse.ArgumentParser(prog="tecflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write synthetic building CSVs")
    sub.add_parser("train", parents=[common], help="train FLF or LMF forecasters")
    solve = sub.add_parser("solve", parents=[common], help="solve one interval both ways")
    solve.add_argument("p_community", type=float, help="community net demand in kW (negative = export)")
    sub.add_parser("simulate", parents=[common], help="simulate the test days for every method")
    sub.add_parser("report", parents=[common], help="print the summary grid")
    return parser


def _overrides(args) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.out:
        o.setdefault("paths", {})["out_dir"] = args.out
    if args.data:
        o.setdefault("paths", {})["data_dir"] = args.data
    if args.community:
        o.setdefault("experiment", {})["communities"] = [args.community]
    if args.method and args.command == "simulate":
        o.setdefault("experiment", {})["methods"] = [args.method]
    return o


def _configure_logging() -> None:
    level = os.environ.get("TEC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.method or "")
        if args.command == "solve":
            return cmd_solve(cfg, args.p_community)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_report(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntervalDivergenceError, DivergenceError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (MissingModelError, ClientTrainingError, IncompatibleWeightsError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except InfeasibleScenarioError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, CsvFormatError, AlignmentError, SpanError, DataTooShortError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
