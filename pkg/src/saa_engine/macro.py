"""Macro regime classification.

Four dimensions (growth, inflation, policy, financial conditions) are
scored onto [-1, +1] by piecewise-linear threshold maps, then a quadrant
rule on (growth score, mean of the other three) yields one of four
regimes.  Positive scores always mean supportive-for-risk-assets, so the
direction field of each threshold flips sign where tighter readings hurt.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Dict, Optional

import numpy as np

from .artifacts import SCHEMA_VERSION, Fixed, write_artifact, write_text
from .errors import ConfigError

EXPANSION = "expansion"
LATE_CYCLE = "late-cycle"
RECESSION = "recession"
RECOVERY = "recovery"
REGIMES = (EXPANSION, LATE_CYCLE, RECESSION, RECOVERY)

DIMENSIONS = ("growth", "inflation", "policy", "financial")

DEFAULT_WEIGHTS = {"growth": 0.35, "inflation": 0.25, "policy": 0.20, "financial": 0.20}

# neutral: reading that scores 0; scale: distance to saturation; direction:
# +1 when a higher reading is supportive, -1 when it is a headwind.
DEFAULT_THRESHOLDS = {
    "growth": {"neutral": 2.0, "scale": 1.5, "direction": 1.0},
    "inflation": {"neutral": 2.5, "scale": 2.0, "direction": -1.0},
    "policy": {"neutral": 0.0, "scale": 2.0, "direction": -1.0},
    "financial": {"neutral": 0.0, "scale": 1.0, "direction": -1.0},
}


@dataclass(frozen=True)
class MacroIndicators:
    """Raw macro readings at one date (percent-per-year units for rates)."""

    as_of: date
    growth_reading: float
    inflation_reading: float
    policy_reading: float
    financial_conditions_reading: float

    def reading(self, dimension: str) -> float:
        return {
            "growth": self.growth_reading,
            "inflation": self.inflation_reading,
            "policy": self.policy_reading,
            "financial": self.financial_conditions_reading,
        }[dimension]


@dataclass(frozen=True)
class RegimeView:
    """Classified regime with confidence and the per-dimension scores."""

    regime: str
    confidence: float
    dimension_scores: Dict[str, float]
    as_of: date
    narrative: str = ""
    composite: float = 0.0


def score_dimensions(indicators: MacroIndicators,
                     thresholds: Optional[dict] = None) -> Dict[str, float]:
    """Map each reading to [-1, +1]; monotone in the configured direction."""
    thresholds = thresholds if thresholds is not None else DEFAULT_THRESHOLDS
    scores = {}
    for dim in DIMENSIONS:
        cfg = thresholds.get(dim)
        if cfg is None:
            raise ConfigError(f"missing threshold config for dimension {dim!r}")
        for key in ("neutral", "scale", "direction"):
            if key not in cfg:
                raise ConfigError(f"threshold config for {dim!r} missing {key!r}")
        if cfg["scale"] <= 0:
            raise ConfigError(f"threshold scale for {dim!r} must be positive")
        raw = cfg["direction"] * (indicators.reading(dim) - cfg["neutral"]) / cfg["scale"]
        scores[dim] = float(np.clip(raw, -1.0, 1.0))
    return scores


def classify_regime(scores: Dict[str, float],
                    weights: Optional[dict] = None,
                    as_of: Optional[date] = None,
                    narrative: str = "") -> RegimeView:
    """Quadrant rule on (growth, conditions) with a conservative boundary tie.

    conditions = mean of inflation/policy/financial scores.  growth > 0 and
    conditions > 0 is expansion; growth > 0 alone is late-cycle; neither is
    recession; conditions alone is recovery.  Any point exactly on a
    boundary classifies late-cycle with confidence 0 at the origin, and
    confidence is the distance to the nearest boundary, min(|g|, |c|).
    """
    weights = weights if weights is not None else DEFAULT_WEIGHTS
    missing = [d for d in DIMENSIONS if d not in scores]
    if missing:
        raise ConfigError(f"missing dimension scores: {missing}")
    total = sum(weights.get(d, 0.0) for d in DIMENSIONS)
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"dimension weights sum to {total}, expected 1")

    composite = sum(weights[d] * scores[d] for d in DIMENSIONS)
    growth = scores["growth"]
    conditions = (scores["inflation"] + scores["policy"] + scores["financial"]) / 3.0
    confidence = float(min(abs(growth), abs(conditions)))

    if growth == 0.0 or conditions == 0.0:
        regime = LATE_CYCLE
    elif growth > 0.0 and conditions > 0.0:
        regime = EXPANSION
    elif growth > 0.0:
        regime = LATE_CYCLE
    elif conditions <= 0.0:
        regime = RECESSION
    else:
        regime = RECOVERY

    return RegimeView(regime=regime, confidence=confidence,
                      dimension_scores=dict(scores),
                      as_of=as_of if as_of is not None else date(1900, 1, 1),
                      narrative=narrative, composite=float(composite))


def classify_indicators(indicators: MacroIndicators,
                        thresholds: Optional[dict] = None,
                        weights: Optional[dict] = None,
                        narrative: str = "") -> RegimeView:
    scores = score_dimensions(indicators, thresholds)
    return classify_regime(scores, weights, as_of=indicators.as_of,
                           narrative=narrative)


def macro_view_payload(view: RegimeView) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "as_of": view.as_of.isoformat(),
        "regime": view.regime,
        "confidence": Fixed(view.confidence, 4),
        "composite": Fixed(view.composite, 4),
        "scores": {d: Fixed(view.dimension_scores[d], 4) for d in DIMENSIONS},
    }


def render_macro_narrative(view: RegimeView) -> str:
    lines = [
        "# Macro Regime View",
        "",
        f"As of {view.as_of.isoformat()}, the environment classifies as "
        f"**{view.regime}** at confidence {view.confidence:.2f}.",
        "",
        "| Dimension | Score |",
        "| --- | --- |",
    ]
    for dim in DIMENSIONS:
        lines.append(f"| {dim} | {view.dimension_scores[dim]:+.2f} |")
    lines.append("")
    if view.narrative:
        lines.append(view.narrative)
        lines.append("")
    return "\n".join(lines)


def emit_macro_view(view: RegimeView, json_path: str,
                    markdown_path: Optional[str] = None) -> str:
    """Write macro-view.json (and optional narrative); byte-stable."""
    write_artifact(json_path, macro_view_payload(view))
    if markdown_path:
        write_text(markdown_path, render_macro_narrative(view))
    return json_path
