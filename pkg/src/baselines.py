"""
baselines.py: classical benchmarks.

AR(p) on the log-range series, fitted by least squares through the normal
equations, with lag windows that never cross a day boundary or a masked
minute. GARCH(1,1) on minute close-to-close returns, fitted by Gaussian
quasi-maximum likelihood with Nelder-Mead on transformed parameters, and
mapped to a log-range forecast through a training-fitted scale.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import softmax

from src.errors import (
    ConvergenceFailure,
    DataError,
    InsufficientHistory,
    NumericalError,
    SingularFit,
    SpecError,
    TuningFailed,
)
from src.market_data import RangePanel

if TYPE_CHECKING:
    from src.evaluation import FoldSplit

logger = logging.getLogger(__name__)

BROWNIAN_RANGE_SCALE = math.sqrt(8.0 / math.pi)
STATIONARITY_CAP = 0.999


# -----------------------------
# AR(p)
# -----------------------------
@dataclass(frozen=True)
class ArModel:
    order: int
    intercept: float
    coefficients: tuple[float, ...]  # phi_1 multiplies y_{t-1}

    def __post_init__(self) -> None:
        if self.order < 1 or len(self.coefficients) != self.order:
            raise SpecError(f"AR order {self.order} does not match {len(self.coefficients)} coefficient(s)")
        if not all(math.isfinite(c) for c in (self.intercept, *self.coefficients)):
            raise SingularFit("AR coefficients are not finite")

    def to_dict(self) -> dict:
        return {"order": self.order, "intercept": self.intercept, "coefficients": list(self.coefficients)}

    @classmethod
    def from_dict(cls, obj: dict) -> "ArModel":
        return cls(int(obj["order"]), float(obj["intercept"]), tuple(float(c) for c in obj["coefficients"]))


def _as_columns(series: np.ndarray | RangePanel) -> np.ndarray:
    """(T, D) matrix whose columns are independent contiguous segments; NaN marks gaps."""
    if isinstance(series, RangePanel):
        return series.values
    arr = np.asarray(series, dtype=float)
    if arr.ndim == 1:
        return arr[:, None]
    if arr.ndim != 2:
        raise SpecError(f"AR input must be 1-D or 2-D, got {arr.ndim}-D")
    return arr


def ar_windows(
    series: np.ndarray | RangePanel, p: int, first_target: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Fully observed (window, target) pairs.

    Returns ``(windows, targets, row, col)`` with windows ordered oldest to
    newest, shape (N, p); ``row``/``col`` locate each target in the column
    matrix. Only targets at row >= ``first_target`` (default p) are kept.
    """
    cols = _as_columns(series)
    first = p if first_target is None else first_target
    if first < p:
        raise SpecError(f"first_target ({first}) must be >= p ({p})")
    T, D = cols.shape
    if T <= first:
        empty = np.empty((0, p))
        return empty, np.empty(0), np.empty(0, dtype=int), np.empty(0, dtype=int)
    win = sliding_window_view(cols, p + 1, axis=0)[first - p :]  # (T-first, D, p+1)
    rows = win.transpose(1, 0, 2).reshape(-1, p + 1)
    row = np.tile(np.arange(first, T), D)
    col = np.repeat(np.arange(D), T - first)
    ok = np.isfinite(rows).all(axis=1)
    rows = rows[ok]
    return rows[:, :-1], rows[:, -1], row[ok], col[ok]


def fit_ar(series: np.ndarray | RangePanel, p: int) -> ArModel:
    if p < 1:
        raise SpecError(f"AR order must be >= 1, got {p}")
    cols = _as_columns(series)
    if np.isfinite(cols).sum() <= p + 10:
        raise InsufficientHistory(f"AR({p}) needs more than {p + 10} observations")
    windows, y, _, _ = ar_windows(cols, p)
    X = np.column_stack([np.ones(len(y)), windows[:, ::-1]])
    if len(y) <= p + 1 or np.linalg.matrix_rank(X) < p + 1:
        raise SingularFit(f"AR({p}) design matrix is singular (constant series?)")
    try:
        beta = np.linalg.solve(X.T @ X, X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularFit(f"AR({p}) normal equations are singular: {exc}") from exc
    logger.debug("AR(%d) fitted on %d sample(s)", p, len(y))
    return ArModel(p, float(beta[0]), tuple(float(b) for b in beta[1:]))


def predict_ar(model: ArModel, window: Sequence[float] | np.ndarray) -> float:
    """c + sum_i phi_i * y_{t-i}; ``window`` is chronological (last entry = y_{t-1})."""
    w = np.asarray(window, dtype=float)
    if w.size < model.order:
        raise InsufficientHistory(f"AR({model.order}) needs {model.order} lag(s), got {w.size}")
    if not np.all(np.isfinite(w[-model.order :])):
        raise InsufficientHistory("AR history window contains unobserved values")
    return float(model.intercept + np.dot(model.coefficients, w[::-1][: model.order]))


def predict_ar_windows(model: ArModel, windows: np.ndarray) -> np.ndarray:
    """Vectorized predict_ar over (N, >= p) chronological windows."""
    w = np.asarray(windows, dtype=float)
    if w.shape[1] < model.order:
        raise InsufficientHistory(f"AR({model.order}) needs {model.order} lag(s), got {w.shape[1]}")
    recent = w[:, ::-1][:, : model.order]
    return model.intercept + recent @ np.asarray(model.coefficients)


@dataclass(frozen=True)
class ArTuning:
    order: int
    validation_mse: dict[int, float] = field(default_factory=dict)


def tune_ar_order(
    panel: RangePanel | np.ndarray,
    split: "FoldSplit",
    orders: Iterable[int] = range(1, 11),
    tolerance: float = 1e-3,
) -> ArTuning:
    """
    Pick the AR order with the lowest validation MSE.

    Every order is scored on the same validation targets (minutes >= the
    largest order). An order within ``tolerance`` (relative) of the best
    counts as a tie, and ties go to the smaller order.
    """
    orders = sorted(set(int(o) for o in orders))
    if not orders:
        raise SpecError("Empty AR order grid")
    cols = _as_columns(panel)
    train = cols[:, list(split.train)]
    val = cols[:, list(split.validation)]
    first = max(orders)

    scores: dict[int, float] = {}
    for p in orders:
        try:
            model = fit_ar(train, p)
            windows, y, _, _ = ar_windows(val, p, first_target=first)
            if len(y) == 0:
                raise InsufficientHistory("No validation windows")
            scores[p] = float(np.mean((predict_ar_windows(model, windows) - y) ** 2))
            logger.debug("AR(%d) validation MSE %.6g", p, scores[p])
        except (NumericalError, DataError) as exc:
            logger.warning("AR(%d) skipped: %s", p, exc)
    if not scores:
        raise TuningFailed("Every AR order failed to fit")
    best = min(scores.values())
    chosen = next(p for p in orders if p in scores and scores[p] <= best * (1.0 + tolerance))
    return ArTuning(order=chosen, validation_mse=scores)


# -----------------------------
# GARCH(1,1)
# -----------------------------
@dataclass(frozen=True)
class GarchSettings:
    max_iter: int = 500
    tol: float = 1e-8  # on the per-observation average log-likelihood
    variance_floor: float = 1e-12
    range_scale_mode: str = "fitted"  # "fitted" | "brownian"

    def __post_init__(self) -> None:
        if self.range_scale_mode not in {"fitted", "brownian"}:
            raise SpecError(f"range_scale_mode must be 'fitted' or 'brownian', got {self.range_scale_mode!r}")
        if self.max_iter < 1 or self.tol <= 0 or self.variance_floor <= 0:
            raise SpecError("GARCH settings must be positive")


@dataclass(frozen=True)
class GarchModel:
    omega: float
    alpha: float
    beta: float
    range_scale: float = 1.0
    log_likelihood: float = float("nan")
    sigma2_0: float = float("nan")
    iterations: int = 0
    trace: tuple[float, ...] = ()
    method: str = "nelder-mead"

    @property
    def persistence(self) -> float:
        return self.alpha + self.beta

    def to_dict(self) -> dict:
        trace = self.trace
        return {
            "omega": self.omega,
            "alpha": self.alpha,
            "beta": self.beta,
            "range_scale": self.range_scale,
            "log_likelihood": self.log_likelihood,
            "sigma2_0": self.sigma2_0,
            "method": self.method,
            "likelihood_trace_summary": {
                "iterations": self.iterations,
                "first": trace[0] if trace else None,
                "last": trace[-1] if trace else None,
                "non_decreasing": bool(all(b >= a for a, b in zip(trace, trace[1:]))),
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GarchModel":
        return cls(
            omega=float(obj["omega"]),
            alpha=float(obj["alpha"]),
            beta=float(obj["beta"]),
            range_scale=float(obj["range_scale"]),
            log_likelihood=float(obj.get("log_likelihood", float("nan"))),
            sigma2_0=float(obj.get("sigma2_0", float("nan"))),
            method=obj.get("method", "nelder-mead"),
        )


def garch_filter(
    returns: np.ndarray, omega: float, alpha: float, beta: float, sigma2_0: float, floor: float = 1e-12
) -> np.ndarray:
    """sigma2[0] = sigma2_0; sigma2[t] = omega + alpha * r[t-1]^2 + beta * sigma2[t-1]."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        return np.empty(0)
    u = omega + alpha * r[:-1] ** 2
    rest = lfilter([1.0], [1.0, -beta], u, zi=np.array([beta * sigma2_0]))[0] if u.size else np.empty(0)
    sigma2 = np.concatenate([[sigma2_0], rest])
    return np.maximum(sigma2, floor)


def _unpack(theta: np.ndarray) -> tuple[float, float, float]:
    weights = softmax(np.array([0.0, theta[1], theta[2]]))
    return float(np.exp(theta[0])), STATIONARITY_CAP * float(weights[1]), STATIONARITY_CAP * float(weights[2])


def _pack(omega: float, alpha: float, beta: float) -> np.ndarray:
    rest = 1.0 - (alpha + beta) / STATIONARITY_CAP
    if omega <= 0 or alpha <= 0 or beta <= 0 or rest <= 0:
        raise SpecError("GARCH start values need omega, alpha, beta > 0 and alpha + beta < 0.999")
    return np.array(
        [math.log(omega), math.log(alpha / STATIONARITY_CAP / rest), math.log(beta / STATIONARITY_CAP / rest)]
    )


def garch_neg_loglik(returns: np.ndarray, omega: float, alpha: float, beta: float, sigma2_0: float, floor: float) -> float:
    """Average of 0.5 * (ln sigma2_t + r_t^2 / sigma2_t)."""
    sigma2 = garch_filter(returns, omega, alpha, beta, sigma2_0, floor)
    val = 0.5 * np.mean(np.log(sigma2) + returns**2 / sigma2)
    return float(val) if np.isfinite(val) else float("inf")


def fit_garch(
    returns: np.ndarray,
    ranges: np.ndarray | None = None,
    init: tuple[float, float, float] | None = None,
    settings: GarchSettings = GarchSettings(),
) -> GarchModel:
    """
    Gaussian QMLE of GARCH(1,1) on mean-zero returns.

    ``ranges`` (same length as ``returns``) are the observed log ranges of
    the same minutes; when given, ``range_scale`` is the no-intercept least
    squares slope of range_t on sigma_t.
    """
    r = np.asarray(returns, dtype=float)
    if not np.all(np.isfinite(r)):
        raise DataError("GARCH returns must be finite; drop unobserved minutes first")
    if r.size < 1000:
        raise InsufficientHistory(f"GARCH needs >= 1000 returns, got {r.size}")
    sigma2_0 = float(np.var(r))
    if not sigma2_0 > settings.variance_floor:
        raise ConvergenceFailure("Degenerate returns: sample variance below the variance floor")

    omega0, alpha0, beta0 = init if init is not None else (sigma2_0 * 0.05, 0.05, 0.90)
    theta0 = _pack(omega0, alpha0, beta0)
    floor = settings.variance_floor
    n = r.size

    def objective(theta: np.ndarray) -> float:
        return garch_neg_loglik(r, *_unpack(theta), sigma2_0, floor)

    trace: list[float] = [-n * objective(theta0)]

    def record(intermediate_result) -> None:
        trace.append(-n * float(intermediate_result.fun))

    res = minimize(
        objective,
        theta0,
        method="Nelder-Mead",
        callback=record,
        options={"maxiter": settings.max_iter, "maxfev": 4 * settings.max_iter, "fatol": settings.tol, "xatol": 1e-4},
    )
    omega, alpha, beta = _unpack(res.x)
    if not res.success or not np.isfinite(res.fun):
        raise ConvergenceFailure(
            f"GARCH QMLE did not converge after {res.nit} iteration(s): {res.message}",
            last_iterate=(omega, alpha, beta),
            trace=trace,
        )

    if settings.range_scale_mode == "brownian" or ranges is None:
        scale = BROWNIAN_RANGE_SCALE
    else:
        v = np.asarray(ranges, dtype=float)
        if v.shape != r.shape:
            raise SpecError("ranges must align with returns")
        sigma = np.sqrt(garch_filter(r, omega, alpha, beta, sigma2_0, floor))
        ok = np.isfinite(v)
        scale = float(np.dot(sigma[ok], v[ok]) / np.dot(sigma[ok], sigma[ok]))

    logger.info("GARCH(1,1): omega=%.3g alpha=%.4f beta=%.4f (%d iteration(s))", omega, alpha, beta, res.nit)
    return GarchModel(
        omega=omega,
        alpha=alpha,
        beta=beta,
        range_scale=scale,
        log_likelihood=-n * float(res.fun),
        sigma2_0=sigma2_0,
        iterations=int(res.nit),
        trace=tuple(trace),
    )


def predict_garch_range(model: GarchModel, last_return: float, last_variance: float) -> float:
    sigma2_next = model.omega + model.alpha * last_return**2 + model.beta * last_variance
    return model.range_scale * math.sqrt(max(sigma2_next, 0.0))


# -----------------------------
# Historical mean
# -----------------------------
def fit_train_mean(panel: RangePanel, day_subset: Iterable[int]) -> float:
    idx = list(day_subset)
    observed = panel.values[:, idx][panel.mask[:, idx]]
    if observed.size == 0:
        raise InsufficientHistory(f"No observed training cells for {panel.pair!r}")
    return float(observed.mean())
