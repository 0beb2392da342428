"""Market data ingestion, alignment, moments, and covariance estimation.

Input files (all CSV, ISO dates, decimal fractions):

* ``returns.csv``      header ``date,<slug>,<slug>,...``; one row per month.
* ``fundamentals.csv`` one row per (as_of, slug); blank cell = absent field.
* ``caps.csv``         ``date,slug,cap`` with nonnegative market caps.

Annualization convention used everywhere in this codebase: monthly means
and covariances scale by 12, monthly vols by sqrt(12).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import DataFormatError, DataLoadError, DomainError, InsufficientDataError

CATEGORIES = ("Equity", "FixedIncome", "RealAssets", "Cash")

MIN_OBS = 24
PSD_EIGENVALUE_FLOOR = 1e-10


@dataclass(frozen=True)
class AssetId:
    """Universe member: short lowercase slug plus its asset category."""

    slug: str
    category: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise DataFormatError(
                f"asset {self.slug!r}: unknown category {self.category!r}")


@dataclass(frozen=True)
class ReturnSeries:
    """Monthly simple-return series for one asset."""

    asset: AssetId
    dates: Tuple[date, ...]
    returns: Tuple[float, ...]
    frequency: str = "monthly"

    def __post_init__(self):
        if len(self.dates) != len(self.returns):
            raise DataFormatError(f"{self.asset.slug}: dates/returns length mismatch")
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur <= prev:
                raise DataFormatError(f"{self.asset.slug}: dates not strictly increasing")
        for r in self.returns:
            if not np.isfinite(r) or r <= -1.0:
                raise DataFormatError(
                    f"{self.asset.slug}: return {r} outside (-1, inf)")

    def __len__(self):
        return len(self.returns)


@dataclass(frozen=True)
class FundamentalsSnapshot:
    """Point-in-time valuation and carry inputs; None marks an absent field."""

    asset: AssetId
    as_of: date
    cape: Optional[float] = None
    trailing_pe: Optional[float] = None
    dividend_yield: Optional[float] = None
    buyback_yield: Optional[float] = None
    earnings_growth: Optional[float] = None
    yield_to_maturity: Optional[float] = None
    risk_free_rate: Optional[float] = None

    def __post_init__(self):
        for name in ("cape", "trailing_pe"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise DataFormatError(f"{self.asset.slug}: {name} must be > 0, got {v}")
        for name in ("dividend_yield", "buyback_yield", "earnings_growth",
                     "yield_to_maturity", "risk_free_rate"):
            v = getattr(self, name)
            if v is not None and not np.isfinite(v):
                raise DataFormatError(f"{self.asset.slug}: {name} not finite")


@dataclass(frozen=True)
class MarketCapSnapshot:
    """Market capitalizations at one date; weights() normalizes to 1."""

    as_of: date
    caps: Dict[str, float]

    def __post_init__(self):
        if not any(v > 0 for v in self.caps.values()):
            raise DataFormatError("market caps: need at least one positive entry")
        if any(v < 0 for v in self.caps.values()):
            raise DataFormatError("market caps: negative cap")

    def weights(self, slugs: List[str]) -> np.ndarray:
        caps = np.array([self.caps.get(s, 0.0) for s in slugs], dtype=float)
        total = caps.sum()
        if total <= 0:
            raise DataFormatError("market caps: zero total over requested slugs")
        return caps / total


@dataclass(frozen=True)
class CovarianceEstimate:
    """Annualized covariance with estimator provenance."""

    assets: Tuple[AssetId, ...]
    matrix: np.ndarray
    estimator: str = "sample"
    shrinkage_intensity: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (len(self.assets), len(self.assets)):
            raise DomainError("covariance shape does not match asset list")
        if np.max(np.abs(m - m.T)) > 1e-12:
            raise DomainError("covariance not symmetric to 1e-12")
        if np.any(np.diag(m) < 0):
            raise DomainError("covariance has negative diagonal")
        object.__setattr__(self, "matrix", m)
        self.matrix.flags.writeable = False

    @property
    def vols(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))


@dataclass(frozen=True)
class AlignedPanel:
    """Return matrix on a common monthly calendar plus static snapshots."""

    assets: Tuple[AssetId, ...]
    dates: Tuple[date, ...]
    returns: np.ndarray  # T x n, column order matches assets
    fundamentals: Dict[str, FundamentalsSnapshot] = field(default_factory=dict)
    caps: Optional[MarketCapSnapshot] = None

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        if r.shape != (len(self.dates), len(self.assets)):
            raise DataFormatError("panel shape mismatch")
        object.__setattr__(self, "returns", r)
        self.returns.flags.writeable = False

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def n_rows(self) -> int:
        return len(self.dates)

    def series(self, slug: str) -> ReturnSeries:
        for j, a in enumerate(self.assets):
            if a.slug == slug:
                return ReturnSeries(a, self.dates, tuple(self.returns[:, j]))
        raise DataLoadError(f"asset {slug!r} not in panel")


def _next_month(d: date) -> Tuple[int, int]:
    return (d.year + (d.month == 12), d.month % 12 + 1)


def _parse_date(raw, context: str) -> date:
    try:
        return date.fromisoformat(str(raw)[:10])
    except ValueError as exc:
        raise DataFormatError(f"{context}: bad date {raw!r}") from exc


def load_returns(path: str, universe: List[AssetId]) -> pd.DataFrame:
    """Read returns.csv and validate it covers every universe asset."""
    try:
        frame = pd.read_csv(path)
    except OSError as exc:
        raise DataLoadError(f"cannot read returns file {path}: {exc}") from exc
    if frame.columns[0] != "date":
        raise DataFormatError(f"{path}: first column must be 'date'")
    for asset in universe:
        if asset.slug not in frame.columns:
            raise DataLoadError(f"{path}: missing asset column {asset.slug!r}")
    frame["date"] = [_parse_date(v, path) for v in frame["date"]]
    dates = list(frame["date"])
    for prev, cur in zip(dates, dates[1:]):
        if cur <= prev:
            raise DataFormatError(f"{path}: dates not strictly increasing at {cur}")
    return frame


def load_fundamentals(path: str, universe: List[AssetId],
                      as_of: Optional[date] = None) -> Dict[str, FundamentalsSnapshot]:
    """Latest snapshot per slug with as_of on or before the cutoff."""
    by_slug = {a.slug: a for a in universe}
    try:
        frame = pd.read_csv(path)
    except OSError as exc:
        raise DataLoadError(f"cannot read fundamentals file {path}: {exc}") from exc
    fields = ("cape", "trailing_pe", "dividend_yield", "buyback_yield",
              "earnings_growth", "yield_to_maturity", "risk_free_rate")
    latest: Dict[str, FundamentalsSnapshot] = {}
    for _, row in frame.iterrows():
        slug = str(row["slug"])
        if slug not in by_slug:
            continue
        row_date = _parse_date(row["date"], path)
        if as_of is not None and row_date > as_of:
            continue
        values = {}
        for name in fields:
            raw = row.get(name)
            values[name] = None if raw is None or pd.isna(raw) else float(raw)
        snap = FundamentalsSnapshot(asset=by_slug[slug], as_of=row_date, **values)
        if slug not in latest or snap.as_of > latest[slug].as_of:
            latest[slug] = snap
    return latest


def load_caps(path: str, universe: List[AssetId],
              as_of: Optional[date] = None) -> MarketCapSnapshot:
    """Market caps at the latest date on or before the cutoff."""
    slugs = {a.slug for a in universe}
    try:
        frame = pd.read_csv(path)
    except OSError as exc:
        raise DataLoadError(f"cannot read caps file {path}: {exc}") from exc
    frame["date"] = [_parse_date(v, path) for v in frame["date"]]
    if as_of is not None:
        frame = frame[frame["date"] <= as_of]
    if frame.empty:
        raise DataLoadError(f"{path}: no cap rows on or before {as_of}")
    last = frame["date"].max()
    caps = {}
    for _, row in frame[frame["date"] == last].iterrows():
        slug = str(row["slug"])
        if slug in slugs:
            caps[slug] = float(row["cap"])
    missing = sorted(slugs - set(caps))
    if missing:
        raise DataLoadError(f"{path}: missing caps for {', '.join(missing)}")
    return MarketCapSnapshot(as_of=last, caps=caps)


def load_panel(returns_path: str, universe: List[AssetId],
               fundamentals_path: Optional[str] = None,
               caps_path: Optional[str] = None,
               as_of: Optional[date] = None) -> AlignedPanel:
    """Load and align all universe series onto the common monthly window.

    Rows where any universe asset is blank are dropped before taking the
    overlapping window, and the surviving window must be gap-free
    (consecutive calendar months).
    """
    frame = load_returns(returns_path, universe)
    slugs = [a.slug for a in universe]
    mask = frame[slugs].notna().all(axis=1)
    frame = frame[mask]
    if frame.empty:
        raise InsufficientDataError("no overlapping window across universe assets")
    dates = list(frame["date"])
    for prev, cur in zip(dates, dates[1:]):
        if (cur.year, cur.month) != _next_month(prev):
            raise DataFormatError(
                f"{returns_path}: gap in aligned window between {prev} and {cur}")
    matrix = frame[slugs].to_numpy(dtype=float)
    bad = np.argwhere(matrix <= -1.0)
    if bad.size:
        t, j = bad[0]
        raise DataFormatError(
            f"{returns_path}: return {matrix[t, j]} <= -1 for {slugs[j]} at {dates[t]}")
    if not np.all(np.isfinite(matrix)):
        raise DataFormatError(f"{returns_path}: non-finite return value")

    fundamentals = {}
    if fundamentals_path:
        fundamentals = load_fundamentals(fundamentals_path, universe, as_of)
    caps = None
    if caps_path:
        caps = load_caps(caps_path, universe, as_of)
    return AlignedPanel(assets=tuple(universe), dates=tuple(dates),
                        returns=matrix, fundamentals=fundamentals, caps=caps)


def sample_moments(series: ReturnSeries) -> Tuple[float, float]:
    """Annualized arithmetic mean and volatility (sample stdev, n-1)."""
    if len(series) < MIN_OBS:
        raise InsufficientDataError(
            f"{series.asset.slug}: {len(series)} observations < {MIN_OBS}")
    r = np.asarray(series.returns, dtype=float)
    mean = 12.0 * float(r.mean())
    vol = float(np.sqrt(12.0) * r.std(ddof=1))
    return mean, vol


def sample_covariance(panel: AlignedPanel) -> CovarianceEstimate:
    """Annualized (x12) sample covariance of the aligned panel."""
    if panel.n_rows < MIN_OBS:
        raise InsufficientDataError(f"panel has {panel.n_rows} rows < {MIN_OBS}")
    cov = 12.0 * np.cov(panel.returns, rowvar=False, ddof=1)
    cov = 0.5 * (cov + cov.T)
    return CovarianceEstimate(assets=panel.assets, matrix=cov, estimator="sample")


def shrink_covariance(cov: CovarianceEstimate, intensity: float = 0.2) -> CovarianceEstimate:
    """Linear shrinkage toward the diagonal: variances kept, correlations damped."""
    if not 0.0 <= intensity <= 1.0:
        raise DomainError(f"shrinkage intensity {intensity} outside [0, 1]")
    target = np.diag(np.diag(cov.matrix))
    shrunk = (1.0 - intensity) * cov.matrix + intensity * target
    return CovarianceEstimate(assets=cov.assets, matrix=shrunk,
                              estimator="shrunk", shrinkage_intensity=intensity)


def nearest_psd_repair(matrix: np.ndarray,
                       floor: float = PSD_EIGENVALUE_FLOOR) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and reassemble; idempotent on PSD input."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError("psd repair requires a square matrix")
    if np.max(np.abs(m - m.T)) > 1e-10:
        raise DomainError("psd repair requires a symmetric matrix")
    eigvals, eigvecs = np.linalg.eigh(0.5 * (m + m.T))
    if eigvals.min() >= floor:
        return m
    clipped = np.maximum(eigvals, floor)
    repaired = (eigvecs * clipped) @ eigvecs.T
    return 0.5 * (repaired + repaired.T)
