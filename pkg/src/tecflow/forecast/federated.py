"""Simulated federated averaging over per-building forecasting clients."""

from __future__ import annotations

import csv
import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..model import InvalidInputError, TecError, TimeSeries
from .learners import IncompatibleWeightsError, LinearAR, RecurrentNet, learner_from_tag

logger = logging.getLogger(__name__)


class DataTooShortError(TecError, ValueError):
    pass


class ClientTrainingError(TecError, RuntimeError):
    def __init__(self, round_index: int, building_id: str, target_kind: str, cause: Exception):
        super().__init__(f"round {round_index}, building {building_id} ({target_kind}): {cause}")
        self.round_index = round_index
        self.building_id = building_id
        self.target_kind = target_kind
        self.cause = cause


class TargetKind(str, enum.Enum):
    DEMAND = "demand"
    GENERATION = "generation"


@dataclass(frozen=True)
class LearnerConfig:
    """Local-training hyperparameters. Defaults follow the published setup.

    ``lr``, ``clip_norm`` and ``dropout`` are not published and are chosen
    here. ``n_exog`` is the number of exogenous columns fed alongside the lags.
    """

    epochs: int = 8
    batch_size: int = 4
    val_split: float = 0.25
    past_obs: int = 96
    future_obs: int = 1
    cells_input: int = 16
    cells_hidden: int = 16
    learner_kind: str = "linear-ar"
    lr: float = 0.02
    clip_norm: float = 5.0
    dropout: float = 0.2
    n_exog: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_split < 1.0:
            raise InvalidInputError("val_split must lie in (0, 1)")
        if self.past_obs < 1 or self.future_obs < 1:
            raise InvalidInputError("past_obs and future_obs must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidInputError("epochs must be >= 0 and batch_size >= 1")
        if self.learner_kind not in ("linear-ar", "recurrent"):
            raise InvalidInputError(f"unknown learner kind {self.learner_kind!r}")
        if not self.lr > 0:
            raise InvalidInputError("lr must be positive")

    def build_learner(self):
        n_inputs = 1 + self.n_exog
        if self.learner_kind == "linear-ar":
            return LinearAR(self.past_obs, self.future_obs, n_inputs)
        hidden = (self.cells_input, self.cells_hidden, self.cells_hidden)
        return RecurrentNet(self.past_obs, self.future_obs, n_inputs, hidden, self.dropout)


@dataclass(frozen=True)
class FedConfig:
    rounds: int
    participants: int
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise InvalidInputError("rounds must be >= 1")
        if self.participants < 1:
            raise InvalidInputError("participants must be >= 1")


COMMUNITY_A_FED = FedConfig(rounds=30, participants=5)
COMMUNITY_B_FED = FedConfig(rounds=1, participants=25)


@dataclass(frozen=True, eq=False)
class ModelWeights:
    params: np.ndarray
    arch_tag: str

    def __post_init__(self):
        p = np.array(self.params, dtype=float).ravel()
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("model weights must be finite")
        p.flags.writeable = False
        object.__setattr__(self, "params", p)

    def __len__(self) -> int:
        return int(self.params.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return self.arch_tag == other.arch_tag and np.array_equal(self.params, other.params)

    __hash__ = None

    def averageable_with(self, other: "ModelWeights") -> bool:
        return self.arch_tag == other.arch_tag and len(self) == len(other)


def zero_weights(cfg: LearnerConfig) -> ModelWeights:
    learner = cfg.build_learner()
    return ModelWeights(np.zeros(learner.n_params), learner.arch_tag)


def initial_weights(cfg: LearnerConfig, seed: int = 0) -> ModelWeights:
    """Default starting point: zeros for the linear learner, seeded random for the recurrent one."""
    learner = cfg.build_learner()
    return ModelWeights(learner.init_params(np.random.default_rng(seed)), learner.arch_tag)


@dataclass(frozen=True)
class ClientDataset:
    """One building's training series for one target, scaled to [0, 1].

    ``normalization`` is ``(min, max)``; when omitted it is taken from
    ``series`` itself, which should therefore be the training portion only.
    A flat series uses a unit range so the transform stays invertible.
    """

    building_id: str
    target_kind: TargetKind
    series: TimeSeries
    normalization: tuple[float, float] | None = None
    exog: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "target_kind", TargetKind(self.target_kind))
        if self.normalization is None:
            if len(self.series) == 0:
                raise DataTooShortError(f"building {self.building_id}: empty series")
            v = self.series.values
            object.__setattr__(self, "normalization", (float(v.min()), float(v.max())))
        if self.exog is not None:
            ex = np.asarray(self.exog, dtype=float)
            if ex.ndim == 1:
                ex = ex[:, None]
            if ex.shape[0] != len(self.series):
                raise InvalidInputError("exogenous columns must align with the series")
            object.__setattr__(self, "exog", ex)

    def scaled(self) -> np.ndarray:
        return normalize(self.series.values, self.normalization)

    def inputs(self) -> np.ndarray:
        """``(T, 1 + n_exog)`` model inputs: the scaled target then any exogenous columns."""
        x = self.scaled()[:, None]
        return x if self.exog is None else np.hstack([x, self.exog])


def _span(norm) -> tuple[float, float]:
    lo, hi = norm
    scale = hi - lo
    return lo, (scale if scale > 0 else 1.0)


def normalize(values, norm) -> np.ndarray:
    lo, scale = _span(norm)
    return (np.asarray(values, dtype=float) - lo) / scale


def denormalize(values, norm) -> np.ndarray:
    lo, scale = _span(norm)
    return np.asarray(values, dtype=float) * scale + lo


def make_windows(inputs: np.ndarray, target: np.ndarray, past_obs: int, future_obs: int):
    """Sliding windows ``X[k] = inputs[k:k+p]`` and ``Y[k] = target[k+p:k+p+f]``."""
    n = target.size - past_obs - future_obs + 1
    if n < 1:
        raise DataTooShortError(f"need at least {past_obs + future_obs} samples, got {target.size}")
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    X = np.lib.stride_tricks.sliding_window_view(inputs[:n + past_obs - 1], past_obs, axis=0)
    X = np.ascontiguousarray(np.moveaxis(X, -1, 1))
    Y = np.ascontiguousarray(np.lib.stride_tricks.sliding_window_view(target[past_obs:], future_obs)[:n])
    return X, Y


# -- aggregation ------------------------------------------------------------

def fedavg(weights: Sequence[ModelWeights]) -> ModelWeights:
    """Unweighted elementwise mean.

    Each coordinate is summed with ``math.fsum`` (correctly rounded), so the
    result does not depend on the order of the clients.
    """
    if not weights:
        raise InvalidInputError("fedavg needs at least one weight vector")
    first = weights[0]
    for w in weights[1:]:
        if not first.averageable_with(w):
            raise IncompatibleWeightsError(
                f"cannot average {first.arch_tag}[{len(first)}] with {w.arch_tag}[{len(w)}]")
    if len(weights) == 1:
        return ModelWeights(first.params.copy(), first.arch_tag)
    stack = np.stack([w.params for w in weights], axis=1)
    k = len(weights)
    mean = np.fromiter((math.fsum(row) / k for row in stack), dtype=float, count=stack.shape[0])
    return ModelWeights(mean, first.arch_tag)


def select_participants(clients: Sequence, k: int, rng: np.random.Generator) -> list:
    if k < 1:
        raise InvalidInputError("at least one participant is required")
    if k > len(clients):
        raise InvalidInputError(f"cannot select {k} participants from {len(clients)} clients")
    idx = rng.choice(len(clients), size=k, replace=False)
    return [clients[i] for i in sorted(idx)]


# -- local training -----------------------------------------------------------

@dataclass
class TrainOutcome:
    weights: ModelWeights
    val_loss: float
    best_epoch: int
    history: list = field(default_factory=list)


def _check_arch(learner, init: ModelWeights):
    if init.arch_tag != learner.arch_tag or len(init) != learner.n_params:
        raise IncompatibleWeightsError(
            f"initial weights {init.arch_tag}[{len(init)}] do not fit {learner.arch_tag}[{learner.n_params}]")


def _batched_loss(learner, params, X, Y, chunk=4096) -> float:
    total = 0.0
    for s in range(0, X.shape[0], chunk):
        r = learner.predict(params, X[s:s + chunk]) - Y[s:s + chunk]
        total += float(np.sum(r * r))
    return total / Y.size


def local_train_detailed(dataset: ClientDataset, init: ModelWeights, cfg: LearnerConfig,
                         rng: np.random.Generator) -> TrainOutcome:
    """Mini-batch SGD on MSE; keeps the snapshot with the lowest validation loss.

    The last ``val_split`` fraction of windows (chronologically) is held out.
    ``history`` holds the validation loss after every epoch.
    """
    learner = cfg.build_learner()
    _check_arch(learner, init)
    X, Y = make_windows(dataset.inputs(), dataset.scaled(), cfg.past_obs, cfg.future_obs)
    n_val = max(1, int(round(cfg.val_split * X.shape[0])))
    n_train = X.shape[0] - n_val
    if n_train < 1:
        raise DataTooShortError(f"building {dataset.building_id}: {X.shape[0]} windows leave no training data")
    Xt, Yt, Xv, Yv = X[:n_train], Y[:n_train], X[n_train:], Y[n_train:]

    params = np.array(init.params, dtype=float)
    best = _batched_loss(learner, params, Xv, Yv)
    best_params, best_epoch = params.copy(), 0
    history = []
    dropout_rng = rng.spawn(1)[0] if isinstance(learner, RecurrentNet) else None
    if isinstance(learner, LinearAR):
        design = learner.design(Xt)
        weights = params.reshape(design.shape[1], cfg.future_obs)  # view onto params

        def sgd_step(b):
            xb = design[b]
            g = xb.T @ (xb @ weights - Yt[b])
            g *= 2.0 / g.shape[1] / b.size
            return g
    else:
        weights = params

        def sgd_step(b):
            return learner.loss_and_grad(params, Xt[b], Yt[b], dropout_rng)[1]

    clip = cfg.clip_norm
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_train)
        for s in range(0, n_train, cfg.batch_size):
            g = sgd_step(order[s:s + cfg.batch_size])
            if clip:
                norm = math.sqrt(float(np.vdot(g, g)))
                if norm > clip:
                    g *= clip / norm
            g *= cfg.lr
            weights -= g
        if not np.all(np.isfinite(params)):
            raise InvalidInputError(f"training diverged at epoch {epoch}; lower the learning rate")
        val = _batched_loss(learner, params, Xv, Yv)
        history.append(val)
        if val < best:
            best, best_params, best_epoch = val, params.copy(), epoch
    return TrainOutcome(ModelWeights(best_params, learner.arch_tag), best, best_epoch, history)


def local_train(dataset: ClientDataset, init: ModelWeights, cfg: LearnerConfig,
                rng: np.random.Generator) -> tuple[ModelWeights, float]:
    out = local_train_detailed(dataset, init, cfg, rng)
    return out.weights, out.val_loss


def train_local_only(client: ClientDataset, cfg: LearnerConfig, rng: np.random.Generator,
                     init: ModelWeights | None = None) -> ModelWeights:
    """Train one building alone, starting from zero weights unless ``init`` is given."""
    return local_train(client, init if init is not None else zero_weights(cfg), cfg, rng)[0]


@dataclass(frozen=True)
class RoundLog:
    round_index: int
    building_id: str
    target_kind: str
    val_loss: float


def run_federated(clients: Sequence[ClientDataset], fed: FedConfig, cfg: LearnerConfig,
                  init: ModelWeights | None = None, log: list | None = None,
                  workers: int = 1) -> ModelWeights:
    """``fed.rounds`` rounds of select, broadcast, local training and averaging.

    Every client in a round gets its own generator derived from
    ``(fed.seed, round, position)``, so ``workers > 1`` changes only speed.
    Per-client validation losses are appended to ``log`` as :class:`RoundLog`.
    """
    if not clients:
        raise InvalidInputError("no clients registered")
    global_w = init if init is not None else initial_weights(cfg, fed.seed)
    _check_arch(cfg.build_learner(), global_w)
    root = np.random.SeedSequence(fed.seed)
    round_seeds = root.spawn(fed.rounds)
    for r in range(fed.rounds):
        select_ss, train_ss = round_seeds[r].spawn(2)
        chosen = select_participants(clients, fed.participants, np.random.default_rng(select_ss))
        client_seeds = train_ss.spawn(len(chosen))

        def train_one(j, _w=global_w, _r=r):
            c = chosen[j]
            try:
                return local_train(c, _w, cfg, np.random.default_rng(client_seeds[j]))
            except TecError as exc:
                raise ClientTrainingError(_r + 1, c.building_id, c.target_kind.value, exc) from exc

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(train_one, range(len(chosen))))
        else:
            results = [train_one(j) for j in range(len(chosen))]
        if log is not None:
            for c, (_, loss) in zip(chosen, results):
                log.append(RoundLog(r + 1, c.building_id, c.target_kind.value, loss))
        global_w = fedavg([w for w, _ in results])
        logger.debug("round %d: mean val loss %.4g", r + 1, float(np.mean([v for _, v in results])))
    return global_w


# -- inference -----------------------------------------------------------------

def forecast(model: ModelWeights, window, normalization, exog=None) -> np.ndarray:
    """Predict the next ``future_obs`` values in kW from the last ``past_obs`` scaled values."""
    learner = learner_from_tag(model.arch_tag)
    w = np.asarray(window, dtype=float)
    if w.ndim != 1 or w.size != learner.past_obs:
        raise InvalidInputError(f"window must hold {learner.past_obs} values, got shape {w.shape}")
    x = w[:, None]
    if exog is not None:
        x = np.hstack([x, np.asarray(exog, dtype=float).reshape(learner.past_obs, -1)])
    if x.shape[1] != learner.n_inputs:
        raise InvalidInputError(f"model expects {learner.n_inputs} input columns, got {x.shape[1]}")
    y = learner.predict(model.params, x[None])[0]
    return denormalize(y, normalization)


def rolling_forecast(model: ModelWeights, history: np.ndarray, normalization, start: int, stop: int) -> np.ndarray:
    """One-step-ahead forecasts in kW for ``history[start:stop]``, each from the true preceding values."""
    learner = learner_from_tag(model.arch_tag)
    p = learner.past_obs
    if start < p:
        raise DataTooShortError(f"need {p} values before index {start}")
    scaled = normalize(np.asarray(history, dtype=float)[start - p:stop - 1], normalization)
    X = np.lib.stride_tricks.sliding_window_view(scaled, p)[:, :, None]
    return denormalize(learner.predict(model.params, X)[:, 0], normalization)


# -- persistence -----------------------------------------------------------------

def save_weights(weights: ModelWeights, path, comments: Sequence[str] = ()) -> None:
    """Text format: ``#`` comment lines, ``arch_tag <tag>``, then one float per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(f"arch_tag {weights.arch_tag}\n")
        for v in weights.params:
            fh.write(repr(float(v)) + "\n")


def load_weights(path) -> ModelWeights:
    tag, values = None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if tag is None:
                if not line.startswith("arch_tag "):
                    raise IncompatibleWeightsError(f"{path}: missing arch_tag header")
                tag = line.split(None, 1)[1]
                continue
            values.append(float(line))
    if tag is None:
        raise IncompatibleWeightsError(f"{path}: missing arch_tag header")
    learner = learner_from_tag(tag)
    if len(values) != learner.n_params:
        raise IncompatibleWeightsError(f"{path}: {len(values)} values, {tag} needs {learner.n_params}")
    return ModelWeights(np.array(values), tag)


def write_training_log(entries: Sequence[RoundLog], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "building", "target_kind", "val_loss"])
        for e in entries:
            w.writerow([e.round_index, e.building_id, e.target_kind, repr(float(e.val_loss))])
