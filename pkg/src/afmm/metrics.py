"""Market-outcome measures and the small statistics toolbox shared across modules.

Outcome conventions:

* ``pricing_error_rmse`` is a loss (lower means more informative prices).
* ``volatility`` is the population standard deviation of price changes.
* ``liquidity_level`` is mean depth relative to baseline depth.
* ``expected_shortfall`` is positive under losses.
* ``mean_rho`` averages trailing-window action correlations; NaN when no
  window had a defined correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from afmm.errors import ContractError, NumericalError, UndefinedStatisticError

DEFAULT_TAIL = 0.01


@dataclass(frozen=True)
class MetricBundle:
    pricing_error_rmse: float
    volatility: float
    liquidity_level: float
    expected_shortfall: float
    mean_rho: float

    def as_dict(self) -> dict[str, float]:
        return {
            "pricing_error_rmse": self.pricing_error_rmse,
            "volatility": self.volatility,
            "liquidity_level": self.liquidity_level,
            "expected_shortfall": self.expected_shortfall,
            "mean_rho": self.mean_rho,
        }


METRIC_NAMES = tuple(MetricBundle.__dataclass_fields__)


def _as_1d(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 0:
        raise ContractError(f"{name} is empty")
    return arr


def pricing_error(p_series, v_series) -> float:
    p = _as_1d(p_series, "p_series")
    v = _as_1d(v_series, "v_series")
    if p.shape != v.shape:
        raise ContractError(f"length mismatch: {p.size} prices vs {v.size} fundamentals")
    return float(np.sqrt(np.mean((p - v) ** 2)))


def realized_volatility(returns) -> float:
    r = np.asarray(returns, dtype=float).ravel()
    if r.size < 2:
        raise ContractError("need at least two price changes")
    return float(np.std(r))


def liquidity_level(depth_series, D0: float) -> float:
    d = _as_1d(depth_series, "depth_series")
    if not D0 > 0:
        raise ContractError(f"D0 must be positive, got {D0}")
    level = float(np.mean(d) / D0)
    if level <= 0:
        raise ContractError("mean depth must be positive")
    return min(1.0, level)


def expected_shortfall(returns, tail: float = DEFAULT_TAIL) -> float:
    """Mean of the worst ``ceil(tail * n)`` observations, sign-flipped."""
    r = _as_1d(returns, "returns")
    if not 0.0 < tail <= 0.5:
        raise ContractError(f"tail must lie in (0, 0.5], got {tail}")
    k = math.ceil(tail * r.size)
    worst = np.partition(r, k - 1)[:k]
    return float(-np.mean(worst))


class RhoSeries(NamedTuple):
    t: np.ndarray
    rho: np.ndarray


def action_similarity(action_matrix, window: int, pair_sample: Sequence[tuple[int, int]]) -> RhoSeries:
    """Mean pairwise Pearson correlation of realised actions over a trailing window.

    ``action_matrix`` has shape (T, N): row ``t`` holds every agent's executed
    trade at step ``t``.  The returned ``t`` indexes the last step of each window
    for which at least one sampled pair had non-constant series on both sides.
    """
    q = np.asarray(action_matrix, dtype=float)
    if q.ndim != 2:
        raise ContractError("action_matrix must be two-dimensional (steps x agents)")
    if window < 2:
        raise ContractError(f"window must be >= 2, got {window}")
    pairs = np.asarray(pair_sample, dtype=int).reshape(-1, 2)
    if pairs.size and np.any(pairs[:, 0] >= pairs[:, 1]):
        raise ContractError("each pair must satisfy i < j")
    n_steps = q.shape[0]
    if n_steps < window or pairs.size == 0:
        return RhoSeries(np.empty(0, dtype=int), np.empty(0))

    agents = np.unique(pairs)
    col = {a: k for k, a in enumerate(agents)}
    # (windows, agents, window)
    win = sliding_window_view(q[:, agents], window, axis=0)
    constant = win.max(axis=2) == win.min(axis=2)
    dev = win - win.mean(axis=2, keepdims=True)
    norm = np.sqrt(np.einsum("tak,tak->ta", dev, dev))

    ii = np.array([col[a] for a in pairs[:, 0]])
    jj = np.array([col[a] for a in pairs[:, 1]])
    total = np.zeros(win.shape[0])
    count = np.zeros(win.shape[0], dtype=int)
    chunk = 64
    for start in range(0, len(ii), chunk):
        a, b = ii[start:start + chunk], jj[start:start + chunk]
        cov = np.einsum("tpk,tpk->tp", dev[:, a, :], dev[:, b, :])
        valid = ~(constant[:, a] | constant[:, b])
        denom = np.where(valid, norm[:, a] * norm[:, b], 1.0)
        corr = np.clip(np.where(valid, cov / denom, 0.0), -1.0, 1.0)
        total += corr.sum(axis=1)
        count += valid.sum(axis=1)

    keep = count > 0
    t_idx = np.arange(window - 1, n_steps)[keep]
    return RhoSeries(t_idx, total[keep] / count[keep])


def _rank(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties.

    Raises UndefinedStatisticError when either input is constant.
    """
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.size != y.size:
        raise ContractError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise ContractError("spearman needs at least three observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise UndefinedStatisticError("spearman input contains undefined values")
    rx = _rank(x) - (x.size + 1) / 2.0
    ry = _rank(y) - (y.size + 1) / 2.0
    sxx, syy = float(rx @ rx), float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedStatisticError("spearman is undefined for a constant input")
    return float(rx @ ry / math.sqrt(sxx * syy))


@dataclass(frozen=True)
class OlsResult:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_stats: np.ndarray
    r_squared: float
    n_obs: int
    residuals: np.ndarray
    names: tuple[str, ...] = ()

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def t(self, name: str) -> float:
        return float(self.t_stats[self.names.index(name)])


def ols_fit(y, X, *, intercept: bool = True, names: Sequence[str] | None = None) -> OlsResult:
    """Least squares with classical (homoskedastic) standard errors.

    With ``intercept=True`` a column of ones is prepended to ``X`` and the
    intercept is the first coefficient.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.size:
        raise ContractError(f"design has {X.shape[0]} rows but y has {y.size}")
    if intercept:
        X = np.column_stack([np.ones(y.size), X])
    n, k = X.shape
    if n <= k:
        raise ContractError(f"need more observations than parameters (n={n}, k={k})")
    if names is not None:
        names = tuple(names)
        if intercept and len(names) == k - 1:
            names = ("intercept",) + names
        if len(names) != k:
            raise ContractError(f"{len(names)} names for {k} coefficients")
    else:
        names = tuple(f"x{j}" for j in range(k))

    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    tol = max(n, k) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if diag.size == 0 or np.any(diag <= tol):
        raise NumericalError("design matrix is rank deficient")

    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    ssr = float(resid @ resid)
    sigma2 = ssr / (n - k)
    r_inv = np.linalg.solve(r, np.eye(k))
    se = np.sqrt(sigma2 * np.sum(r_inv * r_inv, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0), np.copysign(np.inf, beta))
        t = np.where((se == 0) & (beta == 0), np.nan, t)

    if intercept:
        dev = y - y.mean()
        sst = float(dev @ dev)
    else:
        sst = float(y @ y)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    return OlsResult(beta, se, t, r2, n, resid, names)
