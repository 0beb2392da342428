"""Capital market assumptions: six expected-return methods, an
auto-blend, and a rule-based judge.

Equity-style assets run the full candidate set; fixed income uses a
yield-minus-credit-loss builder and cash passes the risk-free rate
through, neither of which is judged.  The judge classifies method
dispersion, applies regime- and valuation-conditioned weights, and is
hard-clamped to the range spanned by the individual methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, DomainError, InsufficientDataError
from .macro import EXPANSION, LATE_CYCLE, RECESSION, RECOVERY, RegimeView
from .market_data import (AssetId, CovarianceEstimate, FundamentalsSnapshot,
                          MarketCapSnapshot, ReturnSeries, sample_moments)

HISTORICAL_ERP = "historical_erp"
REGIME_ADJUSTED = "regime_adjusted"
BL_EQUILIBRIUM = "bl_equilibrium"
INVERSE_GORDON = "inverse_gordon"
IMPLIED_ERP = "implied_erp"
SURVEY = "survey"
AUTO_BLEND = "auto_blend"
FIXED_INCOME = "fixed_income"
CASH_PASSTHROUGH = "cash"

CORE_METHODS = (HISTORICAL_ERP, REGIME_ADJUSTED, BL_EQUILIBRIUM,
                INVERSE_GORDON, IMPLIED_ERP, SURVEY)

TIGHT, MODERATE, WIDE = "tight", "moderate", "wide"

# Percentage-point dispersion boundaries; both boundaries classify moderate.
TIGHT_BELOW_PP = 3.0
WIDE_ABOVE_PP = 6.0

VALUATION_METHODS = (INVERSE_GORDON, IMPLIED_ERP)
ANCHOR_METHODS = (HISTORICAL_ERP, BL_EQUILIBRIUM)
PE_RICH = 30.0
PE_CHEAP = 12.0
VALUATION_TILT = 0.20

DEFAULT_METHOD_CONFIDENCE = {
    HISTORICAL_ERP: 0.60,
    REGIME_ADJUSTED: 0.65,
    BL_EQUILIBRIUM: 0.70,
    INVERSE_GORDON: 0.75,
    IMPLIED_ERP: 0.70,
    SURVEY: 0.50,
}

# Regime-conditioned base weights.  Methods absent for an asset are dropped
# and the row renormalizes; late-cycle's remaining 0.15 splits equally over
# whichever non-named methods produced candidates.
JUDGE_REGIME_WEIGHTS = {
    LATE_CYCLE: {INVERSE_GORDON: 0.30, IMPLIED_ERP: 0.30, REGIME_ADJUSTED: 0.25},
    EXPANSION: {AUTO_BLEND: 1.0},
    RECESSION: {REGIME_ADJUSTED: 0.50, BL_EQUILIBRIUM: 0.50},
    RECOVERY: {AUTO_BLEND: 0.60, REGIME_ADJUSTED: 0.40},
}
LATE_CYCLE_OTHERS_SHARE = 0.15

MIN_REGIME_MONTHS = 24
MIN_ERP_MONTHS = 120


@dataclass(frozen=True)
class CmaCandidate:
    """One method's expected-return estimate with confidence and breakdown."""

    method: str
    estimate: float
    confidence: float
    components: Dict[str, float] = field(default_factory=dict)
    rationale: str = ""

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"{self.method}: confidence {self.confidence} outside [0, 1]")
        if not math.isfinite(self.estimate):
            raise DomainError(f"{self.method}: estimate not finite")
        if self.components:
            total = sum(self.components.values())
            if abs(total - self.estimate) > 1e-9:
                raise DomainError(
                    f"{self.method}: components sum {total} != estimate {self.estimate}")


@dataclass(frozen=True)
class SignalBundle:
    """Directional signals: +1 bullish, -1 bearish, 0 unavailable/neutral."""

    momentum: int = 0
    trend: int = 0
    valuation: int = 0

    def majority(self) -> int:
        total = self.momentum + self.trend + self.valuation
        return (total > 0) - (total < 0)


@dataclass(frozen=True)
class JudgeDecision:
    dispersion_class: str
    selected_weights: Dict[str, float]
    final_estimate: float
    confidence: float
    rationale: str = ""

    def __post_init__(self):
        total = sum(self.selected_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"judge weights sum to {total}, expected 1")


@dataclass(frozen=True)
class FinalCma:
    asset: AssetId
    expected_return: float
    volatility: float
    confidence: float

    def __post_init__(self):
        if not math.isfinite(self.expected_return):
            raise DomainError(f"{self.asset.slug}: expected return not finite")
        if not self.volatility > 0:
            raise DomainError(f"{self.asset.slug}: volatility must be positive")


def _annualized_excess(returns: np.ndarray, rf_hist: float) -> float:
    return 12.0 * float(np.mean(returns)) - rf_hist


def historical_erp_method(series: ReturnSeries, rf: float,
                          rf_hist: Optional[float] = None,
                          confidence: float = DEFAULT_METHOD_CONFIDENCE[HISTORICAL_ERP],
                          ) -> Optional[CmaCandidate]:
    """Full-sample realized premium over the historical risk-free rate, added
    back to the current risk-free rate.  Skipped below 120 months."""
    if len(series) < MIN_ERP_MONTHS:
        return None
    rf_hist = rf if rf_hist is None else rf_hist
    erp = _annualized_excess(np.asarray(series.returns), rf_hist)
    return CmaCandidate(
        method=HISTORICAL_ERP, estimate=erp + rf, confidence=confidence,
        components={"erp": erp, "rf": rf},
        rationale=f"realized premium {erp:+.2%} over {len(series)} months plus current rf")


def regime_adjusted_method(series: ReturnSeries, rf: float, regime: str,
                           history_labels: Dict, rf_hist: Optional[float] = None,
                           confidence: float = DEFAULT_METHOD_CONFIDENCE[REGIME_ADJUSTED],
                           ) -> Optional[CmaCandidate]:
    """Premium conditioned on months historically labeled with the current
    regime; falls back to the unconditional premium at half confidence when
    fewer than 24 months match."""
    rf_hist = rf if rf_hist is None else rf_hist
    returns = np.asarray(series.returns)
    mask = np.array([history_labels.get(d) == regime for d in series.dates])
    if int(mask.sum()) < MIN_REGIME_MONTHS:
        fallback = historical_erp_method(series, rf, rf_hist)
        if fallback is None:
            return None
        return CmaCandidate(
            method=REGIME_ADJUSTED, estimate=fallback.estimate,
            confidence=confidence * 0.5,
            components={"erp": fallback.components["erp"], "rf": rf},
            rationale=f"only {int(mask.sum())} months in {regime}; "
                      "unconditional premium at half confidence")
    premium = _annualized_excess(returns[mask], rf_hist)
    return CmaCandidate(
        method=REGIME_ADJUSTED, estimate=premium + rf, confidence=confidence,
        components={"regime_premium": premium, "rf": rf},
        rationale=f"premium over {int(mask.sum())} {regime} months plus current rf")


def bl_equilibrium_method(cov: CovarianceEstimate, caps: MarketCapSnapshot,
                          rf: float, delta: float = 2.5,
                          confidence: float = DEFAULT_METHOD_CONFIDENCE[BL_EQUILIBRIUM],
                          ) -> Dict[str, CmaCandidate]:
    """Equilibrium-implied returns pi = delta * Sigma * w_mkt, one per asset."""
    if delta <= 0:
        raise DomainError(f"risk aversion delta must be positive, got {delta}")
    eigmin = float(np.linalg.eigvalsh(cov.matrix).min())
    if eigmin < -1e-8:
        raise DomainError(f"covariance not PSD (min eigenvalue {eigmin:.2e})")
    slugs = [a.slug for a in cov.assets]
    w_mkt = caps.weights(slugs)
    premia = delta * cov.matrix @ w_mkt
    out = {}
    for slug, pi in zip(slugs, premia):
        out[slug] = CmaCandidate(
            method=BL_EQUILIBRIUM, estimate=float(pi) + rf, confidence=confidence,
            components={"implied_premium": float(pi), "rf": rf},
            rationale=f"cap-weight equilibrium premium at delta={delta:g}")
    return out


def inverse_gordon_method(fund: FundamentalsSnapshot, cape_anchor: Optional[float],
                          horizon_years: float = 3.0,
                          confidence: float = DEFAULT_METHOD_CONFIDENCE[INVERSE_GORDON],
                          ) -> Optional[CmaCandidate]:
    """Carry plus growth plus multi-year valuation reversion toward the CAPE
    anchor; skipped when any building block is absent."""
    needed = (fund.dividend_yield, fund.buyback_yield, fund.earnings_growth, fund.cape)
    if any(v is None for v in needed) or cape_anchor is None or cape_anchor <= 0:
        return None
    valuation = (cape_anchor / fund.cape) ** (1.0 / horizon_years) - 1.0
    estimate = (fund.dividend_yield + fund.buyback_yield
                + fund.earnings_growth + valuation)
    return CmaCandidate(
        method=INVERSE_GORDON, estimate=estimate, confidence=confidence,
        components={"dividend_yield": fund.dividend_yield,
                    "buyback_yield": fund.buyback_yield,
                    "earnings_growth": fund.earnings_growth,
                    "valuation_change": valuation},
        rationale=f"carry and growth with CAPE {fund.cape:.1f} reverting to "
                  f"{cape_anchor:.1f} over {horizon_years:g}y")


def cape_implied_method(fund: FundamentalsSnapshot, expected_inflation: float = 0.0,
                        confidence: float = DEFAULT_METHOD_CONFIDENCE[IMPLIED_ERP],
                        ) -> Optional[CmaCandidate]:
    """Cyclically adjusted earnings yield plus expected inflation."""
    if fund.cape is None:
        return None
    real_ey = 1.0 / fund.cape
    return CmaCandidate(
        method=IMPLIED_ERP, estimate=real_ey + expected_inflation,
        confidence=confidence,
        components={"real_ey": real_ey, "inflation": expected_inflation},
        rationale=f"earnings yield at CAPE {fund.cape:.1f}")


def survey_method(value: Optional[float], confidence: float = DEFAULT_METHOD_CONFIDENCE[SURVEY],
                  ) -> Optional[CmaCandidate]:
    """Exogenous consensus estimate passed through from config."""
    if value is None:
        return None
    return CmaCandidate(method=SURVEY, estimate=float(value), confidence=confidence,
                        components={"survey": float(value)},
                        rationale="exogenous consensus forecast")


def auto_blend(candidates: List[CmaCandidate]) -> CmaCandidate:
    """Confidence-weighted average of the individual methods."""
    if len(candidates) < 2:
        raise InsufficientDataError("auto blend needs at least 2 candidates")
    conf = np.array([c.confidence for c in candidates])
    est = np.array([c.estimate for c in candidates])
    if conf.sum() > 0:
        estimate = float(np.dot(conf, est) / conf.sum())
        confidence = float(conf.mean())
    else:
        estimate = float(est.mean())
        confidence = 0.0
    return CmaCandidate(
        method=AUTO_BLEND, estimate=estimate, confidence=confidence,
        rationale=f"confidence-weighted blend of {len(candidates)} methods")


def fixed_income_cma(fund: FundamentalsSnapshot, expected_credit_loss: float = 0.0,
                     confidence: float = 0.8) -> Optional[CmaCandidate]:
    """Yield to maturity net of expected credit losses."""
    if fund.yield_to_maturity is None:
        return None
    estimate = fund.yield_to_maturity - expected_credit_loss
    return CmaCandidate(
        method=FIXED_INCOME, estimate=estimate, confidence=confidence,
        components={"ytm": fund.yield_to_maturity,
                    "credit_loss": -expected_credit_loss},
        rationale=f"ytm {fund.yield_to_maturity:.2%} less "
                  f"{expected_credit_loss:.2%} expected credit loss")


def cash_cma(rf: float, confidence: float = 0.8) -> CmaCandidate:
    return CmaCandidate(method=CASH_PASSTHROUGH, estimate=rf, confidence=confidence,
                        components={"rf": rf}, rationale="risk-free rate passthrough")


def compute_signals(series: ReturnSeries, cape: Optional[float],
                    cape_anchor: Optional[float]) -> SignalBundle:
    """12-month momentum sign, 10-month moving-average trend sign, and the
    CAPE-versus-anchor valuation sign."""
    r = np.asarray(series.returns)
    momentum = trend = 0
    if len(r) >= 12:
        total = float(np.prod(1.0 + r[-12:]) - 1.0)
        momentum = (total > 0) - (total < 0)
    if len(r) >= 10:
        wealth = np.cumprod(1.0 + r)
        sma = float(np.mean(wealth[-10:]))
        trend = (wealth[-1] > sma) - (wealth[-1] < sma)
    valuation = 0
    if cape is not None and cape_anchor is not None:
        valuation = (cape_anchor > cape) - (cape_anchor < cape)
    return SignalBundle(momentum=int(momentum), trend=int(trend),
                        valuation=int(valuation))


def classify_dispersion(estimates: List[float]) -> str:
    spread_pp = (max(estimates) - min(estimates)) * 100.0
    if spread_pp < TIGHT_BELOW_PP:
        return TIGHT
    if spread_pp > WIDE_ABOVE_PP:
        return WIDE
    return MODERATE


def _base_weights(regime: str, methods_present: List[str]) -> Dict[str, float]:
    table = JUDGE_REGIME_WEIGHTS.get(regime)
    if table is None:
        raise ConfigError(f"no judge weights for regime {regime!r}")
    available = set(methods_present) | {AUTO_BLEND}
    weights = {m: w for m, w in table.items() if m in available}
    if regime == LATE_CYCLE:
        others = [m for m in methods_present if m not in table]
        for m in others:
            weights[m] = LATE_CYCLE_OTHERS_SHARE / len(others)
    if not weights:
        return {AUTO_BLEND: 1.0}
    total = sum(weights.values())
    return {m: w / total for m, w in weights.items()}


def _apply_valuation_tilt(weights: Dict[str, float], targets: Tuple[str, ...],
                          methods_present: List[str]) -> Dict[str, float]:
    present = [m for m in targets if m in methods_present]
    if not present:
        return weights
    current = {m: weights.get(m, 0.0) for m in present}
    base = sum(current.values())
    tilted = dict(weights)
    for m in present:
        share = current[m] / base if base > 0 else 1.0 / len(present)
        tilted[m] = tilted.get(m, 0.0) + VALUATION_TILT * share
    total = sum(tilted.values())
    return {m: w / total for m, w in tilted.items()}


def judge_select(candidates: List[CmaCandidate], blend: CmaCandidate,
                 regime: str, fund: Optional[FundamentalsSnapshot],
                 signals: Optional[SignalBundle] = None) -> JudgeDecision:
    """Dispersion-classified, regime- and valuation-tilted selection.

    The final estimate is a weighted average of candidates, clamped to the
    closed interval spanned by the individual methods.  Signal alignment
    only ever adjusts the decision confidence, never the estimate.
    """
    by_method = {c.method: c for c in candidates}
    methods_present = [m for m in CORE_METHODS if m in by_method]
    if len(methods_present) + 1 < 3:
        return JudgeDecision(
            dispersion_class=classify_dispersion(
                [by_method[m].estimate for m in methods_present] or [blend.estimate]),
            selected_weights={AUTO_BLEND: 1.0},
            final_estimate=blend.estimate, confidence=blend.confidence,
            rationale="fewer than 3 candidates; auto-blend passthrough")

    estimates = {m: by_method[m].estimate for m in methods_present}
    lo, hi = min(estimates.values()), max(estimates.values())
    dispersion = classify_dispersion(list(estimates.values()))

    notes = [f"dispersion {dispersion} "
             f"({(hi - lo) * 100:.1f}pp across {len(methods_present)} methods)"]
    if dispersion == TIGHT:
        weights = {AUTO_BLEND: 1.0}
        notes.append("methods agree; auto-blend accepted")
    else:
        weights = _base_weights(regime, methods_present)
        notes.append(f"{regime} base weights")
        pe = fund.trailing_pe if fund is not None else None
        if pe is not None and pe > PE_RICH:
            weights = _apply_valuation_tilt(weights, VALUATION_METHODS, methods_present)
            notes.append(f"PE {pe:.0f}x rich; tilted toward valuation methods")
        elif pe is not None and pe < PE_CHEAP:
            weights = _apply_valuation_tilt(weights, ANCHOR_METHODS, methods_present)
            notes.append(f"PE {pe:.0f}x cheap; tilted toward historical and equilibrium")

    def estimate_of(method: str) -> float:
        return blend.estimate if method == AUTO_BLEND else estimates[method]

    def confidence_of(method: str) -> float:
        return blend.confidence if method == AUTO_BLEND else by_method[method].confidence

    raw = sum(w * estimate_of(m) for m, w in weights.items())
    final = min(max(raw, lo), hi)
    if final != raw:
        notes.append("weighted estimate clamped to method range")
    confidence = sum(w * confidence_of(m) for m, w in weights.items())

    if signals is not None:
        majority = signals.majority()
        diff = final - blend.estimate
        direction = (diff > 1e-12) - (diff < -1e-12)
        if majority != 0 and direction != 0:
            if majority == direction:
                confidence = min(1.0, confidence * 1.1)
                notes.append("signals confirm the adjustment")
            else:
                confidence = max(0.0, confidence * 0.9)
                notes.append("signals hedge against the adjustment")

    return JudgeDecision(dispersion_class=dispersion, selected_weights=weights,
                         final_estimate=final, confidence=confidence,
                         rationale="; ".join(notes))


def resolve_cape_anchor(cape_history: List[float],
                        config_value: Optional[float]) -> Optional[float]:
    """Configured anchor wins; otherwise the median of available history."""
    if config_value is not None:
        return float(config_value)
    values = [v for v in cape_history if v is not None and v > 0]
    if not values:
        return None
    return float(np.median(values))


def final_cma_from_decision(asset: AssetId, decision_estimate: float,
                            confidence: float, series: ReturnSeries,
                            vol_override: Optional[float] = None) -> FinalCma:
    if vol_override is not None:
        vol = float(vol_override)
    else:
        _, vol = sample_moments(series)
    return FinalCma(asset=asset, expected_return=decision_estimate,
                    volatility=vol, confidence=confidence)
