"""CRO risk analytics: standardized risk reports, backtests, and IPS
compliance for any candidate portfolio.

The CRO is a neutral assessor: it scores risk and writes commentary but
holds no vote anywhere in the review stage.  Sub-metric failures never
abort a report; the failed metric is marked unavailable instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DomainError, InsufficientDataError
from .market_data import AssetId

VAR_ALPHA = 0.95


@dataclass(frozen=True)
class Benchmark:
    """Reference portfolio, default 60/40 over configured equity/bond slugs."""

    slugs: Tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < -1e-12):
            raise ConfigError("benchmark weights must be a long-only simplex point")
        object.__setattr__(self, "weights", w)
        self.weights.flags.writeable = False


def build_benchmark(assets: Sequence[AssetId], equity_slugs: Sequence[str],
                    bond_slugs: Sequence[str], equity_share: float = 0.60) -> Benchmark:
    """Pro-rata split of the equity and bond sleeves over the named slugs."""
    slugs = [a.slug for a in assets]
    w = np.zeros(len(slugs))
    for group, share in ((list(equity_slugs), equity_share),
                         (list(bond_slugs), 1.0 - equity_share)):
        missing = [s for s in group if s not in slugs]
        if missing:
            raise ConfigError(f"benchmark slug(s) not in universe: {missing}")
        for s in group:
            w[slugs.index(s)] += share / len(group)
    return Benchmark(slugs=tuple(slugs), weights=w)


@dataclass(frozen=True)
class IpsPolicy:
    """Hard constraint set from the investment policy statement."""

    universe: Tuple[str, ...]
    real_return_target: Tuple[float, float]
    vol_band: Tuple[float, float]
    max_drawdown_limit: float  # negative, e.g. -0.25
    tracking_error_cap: float
    benchmark: Benchmark

    def __post_init__(self):
        if not self.universe:
            raise ConfigError("IPS universe is empty")
        for name in ("real_return_target", "vol_band"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"IPS {name}: need lo < hi, got [{lo}, {hi}]")
        if self.tracking_error_cap <= 0:
            raise ConfigError("IPS tracking error cap must be positive")
        if self.max_drawdown_limit >= 0:
            raise ConfigError("IPS max drawdown limit must be negative")


@dataclass(frozen=True)
class IpsFlag:
    check: str
    value: float
    bound: str
    passed: bool

    def as_dict(self) -> dict:
        return {"check": self.check, "value": self.value,
                "bound": self.bound, "pass": self.passed}


@dataclass
class BacktestStats:
    ann_return: float
    ann_vol: float
    sharpe: float
    max_drawdown: float
    wealth: np.ndarray
    monthly_returns: np.ndarray


@dataclass
class RiskReport:
    method_id: str
    ex_ante_vol: Optional[float]
    backtest_vol: Optional[float]
    backtest_return: Optional[float]
    backtest_sharpe: Optional[float]
    var_95: Optional[float]
    cvar_95: Optional[float]
    max_drawdown: Optional[float]
    effective_n: Optional[float]
    herfindahl: Optional[float]
    top_weight: Optional[float]
    risk_contributions: Optional[Dict[str, float]]
    equity_beta_tilt: Optional[float]
    duration_tilt: Optional[float]
    tracking_error: Optional[float]
    ips_flags: List[IpsFlag] = field(default_factory=list)
    commentary: str = ""

    def all_pass(self) -> bool:
        return all(flag.passed for flag in self.ips_flags)

    def pass_fraction(self) -> float:
        if not self.ips_flags:
            return 0.0
        return sum(f.passed for f in self.ips_flags) / len(self.ips_flags)


def ex_ante_vol(w: np.ndarray, sigma: np.ndarray) -> float:
    """Annualized sqrt(w'Sigma w)."""
    if sigma.shape[0] != len(w):
        raise DomainError("weight/covariance dimension mismatch")
    eigmin = float(np.linalg.eigvalsh(sigma).min())
    if eigmin < -1e-8:
        raise DomainError(f"covariance not PSD (min eigenvalue {eigmin:.2e})")
    return float(np.sqrt(max(float(w @ sigma @ w), 0.0)))


def max_drawdown(path: Sequence[float]) -> float:
    """Peak-to-trough minimum of W_t / max_{s<=t} W_s - 1 (reported <= 0)."""
    arr = np.asarray(path, dtype=float)
    if arr.size == 0:
        raise InsufficientDataError("empty wealth path")
    peaks = np.maximum.accumulate(arr)
    return float(np.min(arr / peaks - 1.0))


def backtest(w: np.ndarray, returns: np.ndarray, rebalancing: str = "monthly",
             rf: float = 0.0) -> BacktestStats:
    """Compound the rebalanced portfolio over the panel and annualize."""
    if returns.size == 0:
        raise InsufficientDataError("empty panel in backtest")
    if rebalancing not in ("monthly", "quarterly", "buy_and_hold"):
        raise ConfigError(f"unknown rebalancing {rebalancing!r}")
    T = returns.shape[0]
    if rebalancing == "monthly":
        port = returns @ w
    else:
        # holdings drift between rebalance dates; track the value path
        every = 3 if rebalancing == "quarterly" else T + 1
        values = np.empty(T + 1)
        values[0] = 1.0
        holdings = w.copy()
        for t in range(T):
            if t > 0 and t % every == 0:
                holdings = w * values[t]
            holdings = holdings * (1.0 + returns[t])
            values[t + 1] = holdings.sum()
        port = values[1:] / values[:-1] - 1.0
    wealth = np.concatenate([[1.0], np.cumprod(1.0 + port)])
    ann_return = 12.0 * float(port.mean())
    ann_vol = float(np.sqrt(12.0) * port.std(ddof=1)) if T > 1 else 0.0
    sharpe = (ann_return - rf) / ann_vol if ann_vol > 0 else 0.0
    return BacktestStats(ann_return=ann_return, ann_vol=ann_vol, sharpe=sharpe,
                         max_drawdown=max_drawdown(wealth), wealth=wealth,
                         monthly_returns=port)


def historical_var_cvar(w: np.ndarray, scenarios: np.ndarray,
                        alpha: float = VAR_ALPHA) -> Tuple[float, float]:
    """Empirical VaR (lower quantile of losses) and tail mean beyond it."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha {alpha} outside (0, 1)")
    losses = -(scenarios @ w)
    n = losses.size
    if n == 0:
        raise InsufficientDataError("no scenarios for VaR")
    ordered = np.sort(losses)
    k = max(int(math.ceil(alpha * n)), 1)
    var = float(ordered[k - 1])
    cvar = float(ordered[ordered >= var].mean())
    return var, cvar


def effective_n(w: np.ndarray) -> float:
    """exp of the Shannon entropy of the weights; 1 for one-hot, n for 1/n."""
    w = np.asarray(w, dtype=float)
    pos = w[w > 0]
    return float(np.exp(-np.sum(pos * np.log(pos))))


def herfindahl(w: np.ndarray) -> float:
    return float(np.sum(np.square(w)))


def risk_contributions(w: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """RC_i = w_i (Sigma w)_i / (w'Sigma w); sums to 1 when variance > 0."""
    total = float(w @ sigma @ w)
    if total <= 0.0:
        raise DomainError("risk contributions undefined at zero variance")
    return (w * (sigma @ w)) / total


def tracking_error(w: np.ndarray, benchmark: np.ndarray, sigma: np.ndarray) -> float:
    d = np.asarray(w, dtype=float) - np.asarray(benchmark, dtype=float)
    return float(np.sqrt(max(float(d @ sigma @ d), 0.0)))


def ips_compliance(w: np.ndarray, slugs: Sequence[str], vol: Optional[float],
                   te: Optional[float], backtest_dd: Optional[float],
                   policy: IpsPolicy) -> List[IpsFlag]:
    """Universe, vol band, tracking error cap, and drawdown limit checks."""
    flags = []
    stray = sum(weight for slug, weight in zip(slugs, w)
                if weight > 1e-12 and slug not in policy.universe)
    flags.append(IpsFlag("universe", float(stray), "0 weight outside universe",
                         stray <= 1e-12))
    if vol is not None:
        lo, hi = policy.vol_band
        flags.append(IpsFlag("volatility_band", vol, f"[{lo:.4f}, {hi:.4f}]",
                             lo <= vol <= hi))
    if te is not None:
        flags.append(IpsFlag("tracking_error", te,
                             f"<= {policy.tracking_error_cap:.4f}",
                             te <= policy.tracking_error_cap))
    if backtest_dd is not None:
        flags.append(IpsFlag("max_drawdown", backtest_dd,
                             f">= {policy.max_drawdown_limit:.4f}",
                             backtest_dd >= policy.max_drawdown_limit))
    return flags


def cro_report(method_id: str, w: np.ndarray, assets: Sequence[AssetId],
               returns: np.ndarray, sigma: np.ndarray, policy: IpsPolicy,
               equity_betas: Optional[np.ndarray] = None,
               durations: Optional[np.ndarray] = None,
               rf: float = 0.0, rebalancing: str = "monthly") -> RiskReport:
    """Assemble the full risk report; failed sub-metrics become None."""
    slugs = [a.slug for a in assets]
    notes = []

    def attempt(label, fn):
        try:
            return fn()
        except Exception as exc:  # metric-level isolation by design
            notes.append(f"{label} unavailable ({type(exc).__name__})")
            return None

    vol = attempt("ex_ante_vol", lambda: ex_ante_vol(w, sigma))
    bt = attempt("backtest", lambda: backtest(w, returns, rebalancing, rf))
    var_cvar = attempt("var_cvar", lambda: historical_var_cvar(w, returns))
    rc = attempt("risk_contributions", lambda: risk_contributions(w, sigma))
    te = attempt("tracking_error",
                 lambda: tracking_error(w, policy.benchmark.weights, sigma))
    eff_n = effective_n(w)
    hhi = herfindahl(w)
    top = float(np.max(w))

    beta_tilt = None
    if equity_betas is not None:
        beta_tilt = float(sum(weight * beta for weight, beta, a in
                              zip(w, equity_betas, assets) if a.category == "Equity"))
    dur_tilt = None
    if durations is not None:
        dur_tilt = float(sum(weight * dur for weight, dur, a in
                             zip(w, durations, assets) if a.category == "FixedIncome"))

    flags = ips_compliance(w, slugs, vol, te,
                           bt.max_drawdown if bt is not None else None, policy)
    failing = [f.check for f in flags if not f.passed]
    if failing:
        notes.append("IPS breaches: " + ", ".join(failing))
    else:
        notes.append("all IPS checks pass")
    notes.append(f"effective N {eff_n:.1f} of {len(slugs)}, top weight {top:.1%}")

    return RiskReport(
        method_id=method_id,
        ex_ante_vol=vol,
        backtest_vol=bt.ann_vol if bt is not None else None,
        backtest_return=bt.ann_return if bt is not None else None,
        backtest_sharpe=bt.sharpe if bt is not None else None,
        var_95=var_cvar[0] if var_cvar is not None else None,
        cvar_95=var_cvar[1] if var_cvar is not None else None,
        max_drawdown=bt.max_drawdown if bt is not None else None,
        effective_n=eff_n,
        herfindahl=hhi,
        top_weight=top,
        risk_contributions=(dict(zip(slugs, (float(x) for x in rc)))
                            if rc is not None else None),
        equity_beta_tilt=beta_tilt,
        duration_tilt=dur_tilt,
        tracking_error=te,
        ips_flags=flags,
        commentary="; ".join(notes),
    )
