"""
model_zoo.py: the forecaster families behind one fit/predict interface.

Every forecaster is fitted on the training days of a FoldSplit (validation
days drive early stopping and order selection) and predicts one-step-ahead
log ranges for any set of day indices. Predictions come back as a tidy
DataFrame in original log-range units:

    pair, day, minute, target, prediction

Single-pair families fit one sub-model per pair; the p-Pairs family fits one
joint network over its declared pairs, in declaration order.
"""
from __future__ import annotations

import itertools
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from src import artifacts
from src.baselines import (
    ArModel,
    GarchModel,
    GarchSettings,
    ar_windows,
    fit_ar,
    fit_garch,
    fit_train_mean,
    garch_filter,
    predict_ar_windows,
    tune_ar_order,
)
from src.config import make_rng
from src.errors import ConfigError, DataError, MissingArtifact, NumericalError, SpecError, TuningFailed
from src.features import (
    Normalizer,
    SampleSet,
    fit_normalizer,
    make_lag_samples,
    make_pair_samples,
    make_time_samples,
)
from src.market_data import RangePanel
from src.neural import EpochRecord, LstmCell, Network, TrainConfig, dense_head, train

if TYPE_CHECKING:
    from src.evaluation import FoldSplit

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["pair", "day", "minute", "target", "prediction"]


class Family(str, Enum):
    AR = "AR"
    GARCH = "GARCH"
    PLAIN_DNN = "PlainDNN"
    LSTM_T = "LSTM_t"
    LSTM_D = "LSTM_D"
    TWO_LSTM = "TwoLSTM"
    P_PAIRS = "PPairsTwoLSTM"
    TRAIN_MEAN = "TrainMean"

    @property
    def stream_id(self) -> int:
        return list(Family).index(self)

    @property
    def is_neural(self) -> bool:
        return self in NEURAL_FAMILIES

    @property
    def uses_lags(self) -> bool:
        return self in {Family.LSTM_T, Family.LSTM_D, Family.TWO_LSTM, Family.P_PAIRS}


NEURAL_FAMILIES = {Family.PLAIN_DNN, Family.LSTM_T, Family.LSTM_D, Family.TWO_LSTM, Family.P_PAIRS}


# -----------------------------
# ModelSpec
# -----------------------------
@dataclass(frozen=True)
class ModelSpec:
    name: str
    family: Family
    pairs: tuple[str, ...] = ()  # empty: every configured pair
    layers: int = 6  # affine layers of the plain DNN, output layer included
    width: int = 30
    hidden: int = 64
    p_t: int = 20
    p_d: int = 20
    head_layers: int = 2
    head_width: int = 32
    ar_order: int | None = None  # None: tuned on validation over ar_orders
    ar_orders: tuple[int, ...] = tuple(range(1, 11))
    sample_stride: int = 1
    garch: GarchSettings = GarchSettings()
    train: TrainConfig = TrainConfig()

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "ar_orders", tuple(self.ar_orders))
        positive = ("width", "hidden", "p_t", "p_d", "head_layers", "head_width", "sample_stride")
        for key in positive:
            if getattr(self, key) < 1:
                raise SpecError(f"{self.name}: {key} must be >= 1, got {getattr(self, key)}")
        if self.layers < 2:
            raise SpecError(f"{self.name}: layers must be >= 2 (one hidden layer plus output), got {self.layers}")
        if self.ar_order is not None and self.ar_order < 1:
            raise SpecError(f"{self.name}: ar_order must be >= 1")
        if not self.ar_orders or min(self.ar_orders) < 1:
            raise SpecError(f"{self.name}: ar_orders must be a non-empty list of positive orders")
        if self.family is Family.P_PAIRS and self.pairs and len(self.pairs) < 2:
            raise SpecError(f"{self.name}: pairs learning needs p >= 2 pairs, got {len(self.pairs)}")
        if len(set(self.pairs)) != len(self.pairs):
            raise SpecError(f"{self.name}: duplicate pair ids")

    @property
    def p(self) -> int:
        return len(self.pairs)

    def with_overrides(self, **changes: Any) -> "ModelSpec":
        return replace(self, **changes)

    def resolve_pairs(self, available: Sequence[str]) -> tuple[str, ...]:
        pairs = self.pairs or tuple(available)
        missing = [p for p in pairs if p not in available]
        if missing:
            raise ConfigError(f"{self.name}: unknown pair(s) {', '.join(missing)}")
        if self.family is Family.P_PAIRS and len(pairs) < 2:
            raise SpecError(f"{self.name}: pairs learning needs p >= 2 pairs")
        return pairs

    def to_dict(self) -> dict:
        out = asdict(self)
        out["family"] = self.family.value
        out["pairs"] = list(self.pairs)
        out["ar_orders"] = list(self.ar_orders)
        return out

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"Unknown model key(s): {', '.join(sorted(unknown))}")
        if "family" not in obj:
            raise ConfigError("Model entry needs a 'family'")
        try:
            family = Family(obj["family"])
        except ValueError as exc:
            raise ConfigError(f"Unknown model family {obj['family']!r}") from exc
        kwargs = dict(obj)
        kwargs["family"] = family
        kwargs.setdefault("name", family.value)
        if "garch" in kwargs:
            kwargs["garch"] = GarchSettings(**kwargs["garch"])
        if "train" in kwargs:
            kwargs["train"] = TrainConfig.from_dict(kwargs["train"])
        for key in ("pairs", "ar_orders"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"Invalid model entry {obj.get('name')!r}: {exc}") from exc


# -----------------------------
# Builders
# -----------------------------
def _rng(spec: ModelSpec, rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else make_rng(spec.train.seed, spec.family.stream_id)


def build_plain_dnn(spec: ModelSpec, rng: np.random.Generator | None = None) -> Network:
    """Time features (4) -> (layers - 1) relu layers of ``width`` -> 1."""
    sizes = [4] + [spec.width] * (spec.layers - 1) + [1]
    return Network(Family.PLAIN_DNN.value, (), dense_head(_rng(spec, rng), sizes))


def build_plain_lstm(spec: ModelSpec, axis: str, rng: np.random.Generator | None = None) -> Network:
    if axis not in {"intraday", "interday"}:
        raise SpecError(f"axis must be 'intraday' or 'interday', got {axis!r}")
    rng = _rng(spec, rng)
    cell = LstmCell.init(rng, 1, spec.hidden)
    tag = Family.LSTM_T.value if axis == "intraday" else Family.LSTM_D.value
    return Network(tag, ((0 if axis == "intraday" else 1, cell),), dense_head(rng, [spec.hidden, 1]))


def _two_branch(spec: ModelSpec, width: int, tag: str, rng: np.random.Generator | None) -> Network:
    rng = _rng(spec, rng)
    intraday = LstmCell.init(rng, width, spec.hidden)
    interday = LstmCell.init(rng, width, spec.hidden)
    sizes = [2 * spec.hidden] + [spec.head_width] * (spec.head_layers - 1) + [width]
    return Network(tag, ((0, intraday), (1, interday)), dense_head(rng, sizes))


def build_two_lstm(spec: ModelSpec, rng: np.random.Generator | None = None) -> Network:
    """Independent intraday/interday LSTMs, final states concatenated into a relu head."""
    return _two_branch(spec, 1, Family.TWO_LSTM.value, rng)


def build_p_pairs(spec: ModelSpec, rng: np.random.Generator | None = None) -> Network:
    if spec.p < 2:
        raise SpecError(f"{spec.name}: pairs learning needs p >= 2, got {spec.p}")
    return _two_branch(spec, spec.p, Family.P_PAIRS.value, rng)


def build_network(spec: ModelSpec, rng: np.random.Generator | None = None) -> Network:
    builders: dict[Family, Callable[[], Network]] = {
        Family.PLAIN_DNN: lambda: build_plain_dnn(spec, rng),
        Family.LSTM_T: lambda: build_plain_lstm(spec, "intraday", rng),
        Family.LSTM_D: lambda: build_plain_lstm(spec, "interday", rng),
        Family.TWO_LSTM: lambda: build_two_lstm(spec, rng),
        Family.P_PAIRS: lambda: build_p_pairs(spec, rng),
    }
    if spec.family not in builders:
        raise SpecError(f"{spec.family.value} is not a neural family")
    return builders[spec.family]()


# -----------------------------
# Forecasters
# -----------------------------
def _as_mapping(panels: Mapping[str, RangePanel] | Sequence[RangePanel]) -> dict[str, RangePanel]:
    if isinstance(panels, Mapping):
        return dict(panels)
    return {p.pair: p for p in panels}


def prediction_frame(panel: RangePanel, day: np.ndarray, minute: np.ndarray, prediction: np.ndarray) -> pd.DataFrame:
    day = np.asarray(day, dtype=int)
    minute = np.asarray(minute, dtype=int)
    return pd.DataFrame(
        {
            "pair": panel.pair,
            "day": [panel.days[d].isoformat() for d in day],
            "minute": minute,
            "target": panel.values[minute, day],
            "prediction": np.asarray(prediction, dtype=float),
        },
        columns=PREDICTION_COLUMNS,
    )


def _concat(frames: list[pd.DataFrame]) -> pd.DataFrame:
    if not frames:
        return pd.DataFrame(columns=PREDICTION_COLUMNS)
    return pd.concat(frames, ignore_index=True)


class Forecaster(ABC):
    """Uniform fit/predict contract; a fitted forecaster is the trained model."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.pairs: tuple[str, ...] = ()
        self.fold: int = 0

    @property
    def is_fitted(self) -> bool:
        return bool(self.pairs)

    def fit(self, panels: Mapping[str, RangePanel] | Sequence[RangePanel], split: "FoldSplit") -> "Forecaster":
        panels = _as_mapping(panels)
        self.pairs = self.spec.resolve_pairs(list(panels))
        self.fold = int(getattr(split, "fold", 0))
        logger.info("Fitting %s on fold %d (%s)", self.spec.name, self.fold, ", ".join(self.pairs))
        self._fit(panels, split)
        return self

    def predict(self, panels: Mapping[str, RangePanel] | Sequence[RangePanel], days: Iterable[int]) -> pd.DataFrame:
        if not self.is_fitted:
            raise MissingArtifact(f"{self.spec.name} has not been fitted")
        panels = _as_mapping(panels)
        missing = [p for p in self.pairs if p not in panels]
        if missing:
            raise ConfigError(f"{self.spec.name}: no panel for {', '.join(missing)}")
        return self._predict(panels, np.asarray(list(days), dtype=int))

    @abstractmethod
    def _fit(self, panels: dict[str, RangePanel], split: "FoldSplit") -> None: ...

    @abstractmethod
    def _predict(self, panels: dict[str, RangePanel], days: np.ndarray) -> pd.DataFrame: ...

    @abstractmethod
    def state_dict(self) -> dict: ...

    @abstractmethod
    def load_state(self, state: dict) -> None: ...


class TrainMeanForecaster(Forecaster):
    """Predicts the training-day mean log range everywhere."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.means: dict[str, float] = {}

    def _fit(self, panels, split) -> None:
        self.means = {p: fit_train_mean(panels[p], split.train) for p in self.pairs}

    def _predict(self, panels, days) -> pd.DataFrame:
        frames = []
        for pair in self.pairs:
            panel = panels[pair]
            local_day, minute = np.nonzero(panel.mask[:, days].T)
            day = days[local_day]
            frames.append(prediction_frame(panel, day, minute, np.full(day.size, self.means[pair])))
        return _concat(frames)

    def state_dict(self) -> dict:
        return {"means": self.means}

    def load_state(self, state: dict) -> None:
        self.means = {k: float(v) for k, v in state["means"].items()}


class ArForecaster(Forecaster):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.models: dict[str, ArModel] = {}
        self.validation_mse: dict[str, dict[int, float]] = {}

    def _fit(self, panels, split) -> None:
        for pair in self.pairs:
            panel = panels[pair]
            order = self.spec.ar_order
            if order is None:
                tuning = tune_ar_order(panel, split, self.spec.ar_orders)
                order = tuning.order
                self.validation_mse[pair] = tuning.validation_mse
                logger.info("%s: AR order %d selected on validation", pair, order)
            self.models[pair] = fit_ar(panel.values[:, list(split.train)], order)

    def _predict(self, panels, days) -> pd.DataFrame:
        frames = []
        for pair in self.pairs:
            model = self.models[pair]
            panel = panels[pair]
            windows, _, minute, col = ar_windows(panel.values[:, days], model.order)
            frames.append(prediction_frame(panel, days[col], minute, predict_ar_windows(model, windows)))
        return _concat(frames)

    def state_dict(self) -> dict:
        return {
            "models": {p: m.to_dict() for p, m in self.models.items()},
            "validation_mse": {p: {str(k): v for k, v in s.items()} for p, s in self.validation_mse.items()},
        }

    def load_state(self, state: dict) -> None:
        self.models = {p: ArModel.from_dict(m) for p, m in state["models"].items()}
        self.validation_mse = {
            p: {int(k): float(v) for k, v in s.items()} for p, s in state.get("validation_mse", {}).items()
        }


def _garch_series(panel: RangePanel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Observed returns in chronological order with their log ranges and flat grid positions."""
    if panel.closes is None:
        raise DataError(f"GARCH needs close prices; panel {panel.pair!r} carries none (re-run ingest)")
    returns = panel.minute_returns().T.reshape(-1)
    ranges = panel.values.T.reshape(-1)
    pos = np.flatnonzero(np.isfinite(returns))
    return returns[pos], ranges[pos], pos


class GarchForecaster(Forecaster):
    """
    GARCH(1,1) on close-to-close minute returns. The forecast for minute t
    uses returns up to t-1 and is mapped to a log range by ``range_scale``.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.models: dict[str, GarchModel] = {}

    def _fit(self, panels, split) -> None:
        train_days = np.asarray(list(split.train), dtype=int)
        for pair in self.pairs:
            returns, ranges, pos = _garch_series(panels[pair])
            in_train = np.isin(pos // panels[pair].T, train_days)
            self.models[pair] = fit_garch(returns[in_train], ranges[in_train], settings=self.spec.garch)

    def _predict(self, panels, days) -> pd.DataFrame:
        frames = []
        for pair in self.pairs:
            model = self.models[pair]
            panel = panels[pair]
            returns, ranges, pos = _garch_series(panel)
            sigma2 = garch_filter(
                returns, model.omega, model.alpha, model.beta, model.sigma2_0, self.spec.garch.variance_floor
            )
            day, minute = pos // panel.T, pos % panel.T
            keep = np.isin(day, days) & np.isfinite(ranges)
            frames.append(prediction_frame(panel, day[keep], minute[keep], model.range_scale * np.sqrt(sigma2[keep])))
        return _concat(frames)

    def state_dict(self) -> dict:
        return {"models": {p: m.to_dict() for p, m in self.models.items()}}

    def load_state(self, state: dict) -> None:
        self.models = {p: GarchModel.from_dict(m) for p, m in state["models"].items()}


@dataclass
class FittedGroup:
    pairs: tuple[str, ...]
    normalizers: tuple[Normalizer, ...]
    network: Network
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


class NeuralForecaster(Forecaster):
    """
    Neural families. Single-pair families train one network per pair; the
    p-Pairs family trains a single network over all of its pairs.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.groups: list[FittedGroup] = []

    def _grouping(self) -> list[tuple[str, ...]]:
        if self.spec.family is Family.P_PAIRS:
            return [self.pairs]
        return [(p,) for p in self.pairs]

    def _samples(self, panels: list[RangePanel], norms: Sequence[Normalizer], days, stride: int) -> SampleSet:
        spec = self.spec
        if spec.family is Family.PLAIN_DNN:
            samples = make_time_samples(panels[0], norms[0], days)
            return samples if stride == 1 else samples.take(np.arange(0, len(samples), stride))
        if spec.family is Family.P_PAIRS:
            return make_pair_samples(panels, norms, spec.p_t, spec.p_d, days, stride)
        return make_lag_samples(panels[0], norms[0], spec.p_t, spec.p_d, days, stride)

    def _fit(self, panels, split) -> None:
        self.groups = []
        stride = self.spec.sample_stride
        for k, group in enumerate(self._grouping()):
            group_panels = [panels[p] for p in group]
            norms = tuple(fit_normalizer(p, split.train) for p in group_panels)
            train_set = self._samples(group_panels, norms, split.train, stride)
            val_set = self._samples(group_panels, norms, split.validation, stride)
            spec = self.spec.with_overrides(pairs=group) if self.spec.family is Family.P_PAIRS else self.spec
            stream = (self.spec.family.stream_id, self.fold, k)
            network = build_network(spec, make_rng(self.spec.train.seed, *stream, 0))
            result = train(
                network, train_set.inputs, train_set.target, val_set.inputs, val_set.target,
                self.spec.train, stream=(*stream, 1),
            )
            logger.info(
                "%s [%s]: %d train / %d val sample(s), best epoch %d (val %.6g)",
                self.spec.name, "+".join(group), len(train_set), len(val_set), result.best_epoch, result.best_val_loss,
            )
            self.groups.append(FittedGroup(group, norms, network, result.history, result.best_epoch))

    def _predict(self, panels, days) -> pd.DataFrame:
        frames = []
        for group in self.groups:
            group_panels = [panels[p] for p in group.pairs]
            samples = self._samples(group_panels, group.normalizers, days, 1)
            pred = samples.denormalize(predict_in_chunks(group.network, samples.inputs))
            for j, panel in enumerate(group_panels):
                frames.append(prediction_frame(panel, samples.day, samples.minute, pred[:, j]))
        return _concat(frames)

    @property
    def histories(self) -> dict[str, list[EpochRecord]]:
        return {"+".join(g.pairs): g.history for g in self.groups}

    def state_dict(self) -> dict:
        return {
            "groups": [
                {
                    "pairs": list(g.pairs),
                    "normalizers": [n.to_dict() for n in g.normalizers],
                    "network": g.network.to_dict(),
                    "history": [asdict(r) for r in g.history],
                    "best_epoch": g.best_epoch,
                }
                for g in self.groups
            ]
        }

    def load_state(self, state: dict) -> None:
        self.groups = [
            FittedGroup(
                pairs=tuple(g["pairs"]),
                normalizers=tuple(Normalizer.from_dict(n) for n in g["normalizers"]),
                network=Network.from_dict(g["network"]),
                history=[EpochRecord(**r) for r in g["history"]],
                best_epoch=int(g["best_epoch"]),
            )
            for g in state["groups"]
        ]


def predict_in_chunks(network: Network, inputs: Sequence[np.ndarray], chunk: int = 4096) -> np.ndarray:
    n = inputs[0].shape[0]
    parts = [network.forward([a[s : s + chunk] for a in inputs]) for s in range(0, n, chunk)]
    return np.concatenate(parts, axis=0) if parts else np.empty((0, network.output_size))


def make_forecaster(spec: ModelSpec) -> Forecaster:
    if spec.family is Family.AR:
        return ArForecaster(spec)
    if spec.family is Family.GARCH:
        return GarchForecaster(spec)
    if spec.family is Family.TRAIN_MEAN:
        return TrainMeanForecaster(spec)
    return NeuralForecaster(spec)


# TrainedModel is a fitted Forecaster
TrainedModel = Forecaster


# -----------------------------
# Checkpoints
# -----------------------------
def checkpoint_dict(model: Forecaster) -> dict:
    return {
        "spec": model.spec.to_dict(),
        "pairs": list(model.pairs),
        "fold": model.fold,
        "state": model.state_dict(),
    }


def forecaster_from_dict(obj: dict) -> Forecaster:
    model = make_forecaster(ModelSpec.from_dict(obj["spec"]))
    model.pairs = tuple(obj["pairs"])
    model.fold = int(obj["fold"])
    model.load_state(obj["state"])
    return model


def save_checkpoint(model: Forecaster, path) -> None:
    if not model.is_fitted:
        raise MissingArtifact(f"{model.spec.name} has not been fitted")
    artifacts.write_json(path, checkpoint_dict(model))


def load_checkpoint(path) -> Forecaster:
    return forecaster_from_dict(artifacts.read_json(path, what="checkpoint"))


# -----------------------------
# Jobs
# -----------------------------
def map_jobs(fn: Callable, jobs: Sequence[tuple], n_workers: int = 1) -> list:
    """fn(*job) for every job; results keep job order whatever the worker count."""
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# -----------------------------
# Hyperparameter search
# -----------------------------
def default_grid(spec: ModelSpec, dnn_layers=(2, 4, 6, 8, 10), dnn_widths=(5, 10, 20, 30), lags=(5, 10, 20, 30), ar_orders=tuple(range(1, 11))) -> dict[str, tuple]:
    if spec.family is Family.PLAIN_DNN:
        return {"layers": tuple(dnn_layers), "width": tuple(dnn_widths)}
    if spec.family.uses_lags:
        return {"lag": tuple(lags)}
    if spec.family is Family.AR:
        return {"ar_order": tuple(ar_orders)}
    raise SpecError(f"{spec.family.value} has no hyperparameter grid")


def apply_cell(spec: ModelSpec, cell: Mapping[str, int]) -> ModelSpec:
    changes = dict(cell)
    if "lag" in changes:
        lag = changes.pop("lag")
        changes["p_t"] = lag
        changes["p_d"] = lag
    return spec.with_overrides(**changes)


def validation_mse(spec: ModelSpec, panels: Mapping[str, RangePanel], split: "FoldSplit") -> float:
    model = make_forecaster(spec).fit(panels, split)
    pred = model.predict(panels, split.validation)
    if pred.empty:
        raise DataError(f"{spec.name}: no validation predictions")
    return float(np.mean((pred["prediction"] - pred["target"]) ** 2))


def _cell_job(spec: ModelSpec, panels: Mapping[str, RangePanel], split: "FoldSplit") -> float:
    try:
        return validation_mse(spec, panels, split)
    except (NumericalError, DataError) as exc:
        logger.warning("Grid cell %s fold %d failed: %s", spec.name, split.fold, exc)
        return float("nan")


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def format_mean_std(mean: float, std: float, scale: float = 1.0) -> str:
    if not np.isfinite(mean):
        return "failed"
    return f"{mean / scale:.4g}±{std / scale:.2g}"


@dataclass
class TuningResult:
    best: ModelSpec
    best_cell: dict[str, int]
    cells: list[dict[str, Any]]  # one row per grid cell: axes, fold_mse, mean, std
    table: pd.DataFrame  # first axis as rows, second (or the family) as columns, "mean±std" cells


def tune_hyperparameters(
    spec: ModelSpec,
    panels: Mapping[str, RangePanel] | Sequence[RangePanel],
    splits: Sequence["FoldSplit"],
    grid: Mapping[str, Sequence[int]] | None = None,
    n_workers: int = 1,
) -> TuningResult:
    """
    Grid search on validation MSE (original units), averaged across folds.

    The best cell has the lowest mean; ties go to the cell listed first,
    which is the smallest one since every axis is sorted ascending.
    """
    panels = _as_mapping(panels)
    grid = dict(grid) if grid is not None else default_grid(spec)
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise SpecError("Empty hyperparameter grid")
    axes = list(grid)
    values = [sorted(set(int(v) for v in grid[a])) for a in axes]
    combos = [dict(zip(axes, combo)) for combo in itertools.product(*values)]

    jobs = [(apply_cell(spec, c), panels, split) for c in combos for split in splits]
    scores = map_jobs(_cell_job, jobs, n_workers)

    cells = []
    for i, combo in enumerate(combos):
        fold_mse = scores[i * len(splits) : (i + 1) * len(splits)]
        ok = [s for s in fold_mse if np.isfinite(s)]
        mean, std = mean_std(ok) if len(ok) == len(fold_mse) else (float("nan"), float("nan"))
        cells.append({**combo, "fold_mse": list(fold_mse), "mean": mean, "std": std})
        logger.info("%s %s: validation MSE %s", spec.name, combo, format_mean_std(mean, std))

    finite = [c for c in cells if np.isfinite(c["mean"])]
    if not finite:
        raise TuningFailed(f"{spec.name}: every grid cell failed")
    best_row = min(finite, key=lambda c: c["mean"])
    best_cell = {a: best_row[a] for a in axes}
    return TuningResult(apply_cell(spec, best_cell), best_cell, cells, _grid_table(spec, axes, cells))


def _grid_table(spec: ModelSpec, axes: list[str], cells: list[dict]) -> pd.DataFrame:
    text = {tuple(c[a] for a in axes): format_mean_std(c["mean"], c["std"]) for c in cells}
    if len(axes) == 2:
        rows = sorted({k[0] for k in text})
        cols = sorted({k[1] for k in text})
        table = pd.DataFrame([[text[(r, c)] for c in cols] for r in rows], index=rows, columns=cols)
        table.index.name = f"{axes[0]}\\{axes[1]}"
        return table
    keys = sorted(text)
    table = pd.DataFrame([[text[k] for k in keys]], index=[spec.name], columns=[k[0] for k in keys])
    table.index.name = f"model\\{axes[0]}"
    return table
