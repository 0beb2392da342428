"""The 21 portfolio construction methods.

Categories: A heuristic, B return-optimized, C risk-structured, D
non-traditional, plus the researcher-discovered maximum entropy method
(scored as its own family E, reviewed alongside the non-traditional
methods).  Every method maps (mu, Sigma, scenarios, constraints) to a
long-only weight vector on the bounded simplex; the adversarial
diversifier runs last against the centroid of the other completed
proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from .errors import (ConfigError, ConvergenceError, DomainError,
                     InfeasibleError, InsufficientDataError)
from .market_data import AssetId, CovarianceEstimate, MarketCapSnapshot, nearest_psd_repair
from .risk import effective_n, max_drawdown
from .solvers import (MAX_ITER, SolveResult, check_bounds, fista_minimize,
                      greedy_linear_max, minimize_quadratic, penalty_maximize,
                      project_capped_simplex, quad_lipschitz, ratio_max,
                      smallest_feasible_blend, tangency_max)

CATEGORY_NAMES = {
    "A": "Heuristic",
    "B": "Return-Optimized",
    "C": "Risk-Structured",
    "D": "Non-Traditional",
    "E": "PC-Researcher",
}

ADVERSARIAL_FLOOR_FRAC = 0.75
SENSITIVITY_BUMP = 0.10  # fraction of each asset's vol used for the mu bump


@dataclass(frozen=True)
class PcInputs:
    """Everything a construction method may consume."""

    assets: Tuple[AssetId, ...]
    mu: np.ndarray                 # annual expected returns, universe order
    sigma: CovarianceEstimate
    scenarios: np.ndarray          # T x n monthly returns
    rf: float
    caps: Optional[MarketCapSnapshot] = None
    bounds: Optional[np.ndarray] = None  # n x 2, defaults to [0, 1] per asset
    target_vol: float = 0.10
    cvar_level: float = 0.95
    dd_limit: float = 0.25
    mar: float = 0.0
    robust_kappa: float = 1.0
    resample_draws: int = 200
    seed: int = 0
    bl_tau: float = 0.05
    bl_delta: float = 2.5
    view_confidence: Optional[np.ndarray] = None
    tpa_loadings: Optional[np.ndarray] = None  # n x 2 equity/bond loadings
    tpa_budget: Tuple[float, float] = (0.6, 0.4)
    sharpe_floor_frac: float = 0.8
    adversarial_floor_frac: float = ADVERSARIAL_FLOOR_FRAC

    def __post_init__(self):
        n = len(self.assets)
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (n,):
            raise DomainError("mu length does not match assets")
        if self.sigma.matrix.shape != (n, n):
            raise DomainError("sigma shape does not match assets")
        scen = np.asarray(self.scenarios, dtype=float)
        if scen.ndim != 2 or scen.shape[1] != n:
            raise DomainError("scenario matrix width does not match assets")
        bounds = self.bounds
        if bounds is None:
            bounds = np.column_stack([np.zeros(n), np.ones(n)])
        else:
            bounds = np.asarray(bounds, dtype=float)
            if bounds.shape != (n, 2):
                raise DomainError("bounds must be n x 2")
        check_bounds(bounds[:, 0], bounds[:, 1])
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "scenarios", scen)
        object.__setattr__(self, "bounds", bounds)
        if not 0.0 < self.cvar_level < 1.0:
            raise DomainError("cvar_level must be in (0, 1)")

    @property
    def n(self) -> int:
        return len(self.assets)

    @property
    def lo(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def hi(self) -> np.ndarray:
        return self.bounds[:, 1]

    @property
    def slugs(self) -> List[str]:
        return [a.slug for a in self.assets]

    @property
    def vols(self) -> np.ndarray:
        return self.sigma.vols

    def cash_index(self) -> Optional[int]:
        for i, a in enumerate(self.assets):
            if a.category == "Cash":
                return i
        return None


@dataclass(frozen=True)
class PortfolioWeights:
    """Long-only weight vector keyed by asset slug."""

    slugs: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.slugs),):
            raise DomainError("weights length mismatch")
        if abs(v.sum() - 1.0) > 1e-9:
            raise DomainError(f"weights sum to {v.sum():.12f}, expected 1")
        if np.any(v < -1e-12):
            raise DomainError("negative weight")
        object.__setattr__(self, "values", v)
        self.values.flags.writeable = False

    def as_dict(self) -> Dict[str, float]:
        return {s: float(v) for s, v in zip(self.slugs, self.values)}


@dataclass(frozen=True)
class MethodSpec:
    method_id: str
    category: str          # scoring family A..E
    display_name: str
    review_category: Optional[str] = None  # assignment family, defaults to category

    @property
    def assignment_category(self) -> str:
        return self.review_category or self.category


@dataclass
class PcProposal:
    method_id: str
    category: str
    weights: PortfolioWeights
    diagnostics: Dict[str, float]
    rationale: str = ""


@dataclass
class RunRecord:
    spec: MethodSpec
    proposal: Optional[PcProposal] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.proposal is not None


# Canonical registry in table order; the researcher and adversarial slots
# execute after these 19.
CANONICAL_SPECS = (
    MethodSpec("equal_weight", "A", "Equal Weight"),
    MethodSpec("market_cap", "A", "Market-Cap Weight"),
    MethodSpec("inverse_volatility", "A", "Inverse Volatility"),
    MethodSpec("inverse_variance", "A", "Inverse Variance"),
    MethodSpec("volatility_targeting", "A", "Volatility Targeting"),
    MethodSpec("max_sharpe", "B", "Maximum Sharpe Ratio"),
    MethodSpec("black_litterman", "B", "Black-Litterman"),
    MethodSpec("robust_mean_variance", "B", "Robust Mean-Variance"),
    MethodSpec("resampled_frontier", "B", "Resampled Efficient Frontier"),
    MethodSpec("mean_downside", "B", "Mean-Downside Risk (Sortino)"),
    MethodSpec("global_min_variance", "C", "Global Minimum Variance"),
    MethodSpec("risk_parity_erc", "C", "Risk Parity"),
    MethodSpec("hierarchical_risk_parity", "C", "Hierarchical Risk Parity"),
    MethodSpec("max_diversification", "C", "Maximum Diversification"),
    MethodSpec("min_correlation", "C", "Minimum Correlation"),
    MethodSpec("cvar_min", "D", "CVaR Minimization"),
    MethodSpec("max_drawdown_constrained", "D", "Max Drawdown Constrained"),
    MethodSpec("tail_risk_parity", "D", "Tail Risk Parity"),
    MethodSpec("tpa_two_factor", "D", "Total Portfolio Allocation"),
)

ADVERSARIAL_SPEC = MethodSpec("adversarial_diversifier", "D", "Adversarial Diversifier")

# Researcher discoveries: scored as family E, reviewed with family D.
DISCOVERY_SPECS = {
    "max_entropy": MethodSpec("max_entropy", "E", "Maximum Entropy",
                              review_category="D"),
}
DEFAULT_LIBRARY = ("max_entropy",)


def portfolio_sharpe(w: np.ndarray, mu: np.ndarray, sigma: np.ndarray, rf: float) -> float:
    vol = math.sqrt(max(float(w @ sigma @ w), 0.0))
    if vol <= 0:
        return 0.0
    return (float(mu @ w) - rf) / vol


def make_proposal(spec: MethodSpec, w: np.ndarray, inputs: PcInputs,
                  rationale: str = "") -> PcProposal:
    w = np.asarray(w, dtype=float)
    w = np.where(np.abs(w) < 1e-15, 0.0, w)
    weights = PortfolioWeights(tuple(inputs.slugs), w)
    vol = math.sqrt(max(float(w @ inputs.sigma.matrix @ w), 0.0))
    exp_ret = float(inputs.mu @ w)
    diagnostics = {
        "expected_return": exp_ret,
        "ex_ante_vol": vol,
        "sharpe": (exp_ret - inputs.rf) / vol if vol > 0 else 0.0,
        "effective_n": effective_n(w),
    }
    return PcProposal(method_id=spec.method_id, category=spec.category,
                      weights=weights, diagnostics=diagnostics,
                      rationale=rationale)


# --- category A: heuristics ------------------------------------------------

def heuristic_weights(kind: str, inputs: PcInputs) -> np.ndarray:
    n = inputs.n
    if kind == "equal_weight":
        raw = np.full(n, 1.0 / n)
    elif kind == "market_cap":
        if inputs.caps is None:
            raise InsufficientDataError("market-cap weighting needs a cap snapshot")
        raw = inputs.caps.weights(inputs.slugs)
    elif kind == "inverse_volatility":
        raw = 1.0 / np.maximum(inputs.vols, 1e-12)
        raw /= raw.sum()
    elif kind == "inverse_variance":
        raw = 1.0 / np.maximum(inputs.vols ** 2, 1e-24)
        raw /= raw.sum()
    else:
        raise ConfigError(f"unknown heuristic kind {kind!r}")
    return project_capped_simplex(raw, inputs.lo, inputs.hi)


def volatility_targeting(inputs: PcInputs, base: np.ndarray) -> np.ndarray:
    """Scale the base portfolio toward cash until it meets the target vol.

    Long-only: the scale is capped at 1, so a base already below target is
    returned unchanged (no leverage).
    """
    cash = inputs.cash_index()
    if cash is None:
        raise InsufficientDataError("volatility targeting needs a cash asset")
    base_vol = math.sqrt(max(float(base @ inputs.sigma.matrix @ base), 0.0))
    if base_vol <= 0:
        return base
    s = min(max(inputs.target_vol / base_vol, 0.0), 1.0)
    w = s * base
    w[cash] += 1.0 - s
    return project_capped_simplex(w, inputs.lo, inputs.hi)


# --- category B: return-optimized -----------------------------------------

def max_sharpe(inputs: PcInputs, mu: Optional[np.ndarray] = None,
               sigma: Optional[np.ndarray] = None,
               w0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float]:
    """Tangency portfolio on the bounded simplex; returns (weights, Sharpe)."""
    mu = inputs.mu if mu is None else mu
    sigma = inputs.sigma.matrix if sigma is None else sigma
    res = tangency_max(mu - inputs.rf, sigma, inputs.lo, inputs.hi, w0=w0)
    return res.w, res.objective


def black_litterman(inputs: PcInputs) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior returns from equilibrium prior plus absolute views, then
    a tangency solve on the posterior.  View variance scales with
    tau * Sigma_ii * (1/confidence - 1); zero-confidence views drop out."""
    if inputs.caps is None:
        raise InsufficientDataError("Black-Litterman needs a cap snapshot")
    sigma = inputs.sigma.matrix
    w_mkt = inputs.caps.weights(inputs.slugs)
    pi = inputs.bl_delta * sigma @ w_mkt          # equilibrium excess returns
    q = inputs.mu - inputs.rf                     # absolute views in excess space
    conf = (np.full(inputs.n, 0.5) if inputs.view_confidence is None
            else np.asarray(inputs.view_confidence, dtype=float))
    keep = np.where(conf > 0.0)[0]
    if keep.size == 0:
        posterior = pi
    else:
        tau = inputs.bl_tau
        P = np.eye(inputs.n)[keep]
        omega = np.diag([tau * sigma[i, i] * (1.0 / conf[i] - 1.0) for i in keep])
        mid = P @ (tau * sigma) @ P.T + omega
        adjust = (tau * sigma) @ P.T @ np.linalg.solve(mid, q[keep] - P @ pi)
        posterior = pi + adjust
    w, _ = max_sharpe(inputs, mu=posterior + inputs.rf)
    return w, posterior + inputs.rf


def robust_mean_variance(inputs: PcInputs, horizon_t: Optional[int] = None) -> np.ndarray:
    """Tangency under worst-case returns mu_i - kappa * vol_i / sqrt(T)."""
    t_obs = horizon_t if horizon_t is not None else max(inputs.scenarios.shape[0], 1)
    mu_worst = inputs.mu - inputs.robust_kappa * inputs.vols / math.sqrt(t_obs)
    w, _ = max_sharpe(inputs, mu=mu_worst)
    return w


def resampled_frontier(inputs: PcInputs) -> np.ndarray:
    """Bootstrap resampling of the scenario rows; each draw perturbs the
    input moments by the resampled-minus-full difference (so a draw with no
    sampling noise reproduces the plain tangency), one tangency solve per
    draw, weights averaged and reprojected."""
    if inputs.resample_draws < 1:
        raise ConfigError("resample_draws must be >= 1")
    scen = inputs.scenarios
    t = scen.shape[0]
    if t < 2:
        raise InsufficientDataError("resampling needs at least 2 scenario rows")
    rng = np.random.default_rng(inputs.seed)
    mean_full = scen.mean(axis=0)
    cov_full = np.cov(scen, rowvar=False, ddof=1)
    base, _ = max_sharpe(inputs)
    acc = np.zeros(inputs.n)
    for _ in range(inputs.resample_draws):
        idx = rng.integers(0, t, size=t)
        sub = scen[idx]
        mu_b = inputs.mu + 12.0 * (sub.mean(axis=0) - mean_full)
        cov_b = inputs.sigma.matrix + 12.0 * (np.cov(sub, rowvar=False, ddof=1) - cov_full)
        cov_b = nearest_psd_repair(0.5 * (cov_b + cov_b.T))
        w_b, _ = max_sharpe(inputs, mu=mu_b, sigma=cov_b, w0=base)
        acc += w_b
    return project_capped_simplex(acc / inputs.resample_draws, inputs.lo, inputs.hi)


def _downside_terms(inputs: PcInputs) -> Tuple[np.ndarray, float]:
    return inputs.scenarios, inputs.mar / 12.0


def downside_deviation(w: np.ndarray, inputs: PcInputs) -> float:
    """Annualized sqrt(mean squared below-MAR monthly shortfall)."""
    scen, mar_m = _downside_terms(inputs)
    short = np.maximum(mar_m - scen @ w, 0.0)
    return math.sqrt(12.0 * float(np.mean(short ** 2)))


def mean_downside(inputs: PcInputs) -> np.ndarray:
    """Maximize (mu'w - MAR) / downside deviation.  Portfolios with no
    below-MAR months dominate; ties among them break to lowest variance."""
    scen, mar_m = _downside_terms(inputs)
    t = scen.shape[0]
    sigma = inputs.sigma.matrix

    def dd2(w):
        short = np.maximum(mar_m - scen @ w, 0.0)
        return 12.0 * float(np.mean(short ** 2))

    def grad_dd2(w):
        short = np.maximum(mar_m - scen @ w, 0.0)
        return (-24.0 / t) * (scen.T @ short)

    l_dd = 24.0 * quad_lipschitz(scen.T @ scen) / t
    probe = fista_minimize(dd2, grad_dd2, np.full(inputs.n, 1.0 / inputs.n),
                           inputs.lo, inputs.hi, l0=max(l_dd, 1e-12), tol=1e-10,
                           max_iter=3000)
    if probe.objective <= 1e-18:
        # zero-shortfall region exists: lowest-variance point within it
        rho = 1e8 * max(quad_lipschitz(sigma), 1.0)

        def f(w):
            return float(w @ sigma @ w) + rho * dd2(w)

        def g(w):
            return 2.0 * sigma @ w + rho * grad_dd2(w)

        res = fista_minimize(f, g, probe.w, inputs.lo, inputs.hi,
                             l0=2.0 * quad_lipschitz(sigma) + rho * l_dd,
                             tol=1e-10, max_iter=3000)
        return res.w

    a = inputs.mu - inputs.mar

    def q(w):  # half squared downside deviation, so sqrt(2q) = dd
        return 0.5 * dd2(w)

    def gq(w):
        return 0.5 * grad_dd2(w)

    res = ratio_max(a, q, gq, max(0.5 * l_dd, 1e-12), inputs.lo, inputs.hi,
                    golden_iters=48, subproblem_tol=1e-9, subproblem_iter=800)
    return res.w


# --- category C: risk-structured -------------------------------------------

def global_min_variance(inputs: PcInputs) -> np.ndarray:
    res = minimize_quadratic(inputs.sigma.matrix, inputs.lo, inputs.hi)
    if not res.converged:
        raise ConvergenceError(
            f"GMV residual {res.residual:.2e} after {res.iterations} iterations",
            residual=res.residual)
    return res.w


def risk_parity_erc(inputs: PcInputs, tol: float = 1e-10,
                    max_iter: int = 200) -> np.ndarray:
    """Equal risk contributions via damped Newton on the log-barrier system
    Sigma y = 1/(n y); normalizing y recovers the ERC weights."""
    sigma = inputs.sigma.matrix
    n = inputs.n
    b = 1.0 / n
    vols = np.maximum(inputs.vols, 1e-8)
    y = (1.0 / vols) / np.sum(1.0 / vols) / np.mean(vols)

    def system(yv):
        return sigma @ yv - b / yv

    f = system(y)
    for _ in range(max_iter):
        norm = float(np.max(np.abs(f)))
        if norm <= tol:
            break
        jac = sigma + np.diag(b / y ** 2)
        step = np.linalg.solve(jac, f)
        alpha = 1.0
        for _ in range(60):
            cand = y - alpha * step
            if np.all(cand > 0):
                f_cand = system(cand)
                if float(np.max(np.abs(f_cand))) < norm:
                    y, f = cand, f_cand
                    break
            alpha *= 0.5
        else:
            raise ConvergenceError("ERC Newton stalled", residual=norm)
    w = y / y.sum()
    rc = (w * (sigma @ w)) / float(w @ sigma @ w)
    spread = float(np.max(np.abs(rc - b)))
    if spread > 1e-8:
        raise ConvergenceError(f"ERC residual {spread:.2e} exceeds 1e-8",
                               residual=spread)
    return project_capped_simplex(w, inputs.lo, inputs.hi)


def _correlation(sigma: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.clip(np.diag(sigma), 1e-24, None))
    rho = sigma / np.outer(d, d)
    return np.clip(0.5 * (rho + rho.T), -1.0, 1.0)


def _single_linkage_order(dist: np.ndarray) -> List[int]:
    """Agglomerative single linkage; ties break to the lowest asset index.
    Returns the quasi-diagonalized leaf order."""
    clusters = [((i,), i) for i in range(dist.shape[0])]  # (leaves, min leaf)
    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                li, lj = clusters[i][0], clusters[j][0]
                d = min(dist[a, b] for a in li for b in lj)
                key = (d, min(clusters[i][1], clusters[j][1]),
                       max(clusters[i][1], clusters[j][1]))
                if best is None or key < best[0]:
                    best = (key, i, j)
        _, i, j = best
        ci, cj = clusters[i], clusters[j]
        left, right = (ci, cj) if ci[1] < cj[1] else (cj, ci)
        merged = (left[0] + right[0], left[1])
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append(merged)
        clusters.sort(key=lambda c: c[1])
    return list(clusters[0][0])


def _cluster_variance(sigma: np.ndarray, members: Sequence[int]) -> float:
    sub = sigma[np.ix_(members, members)]
    ivp = 1.0 / np.clip(np.diag(sub), 1e-24, None)
    ivp /= ivp.sum()
    return float(ivp @ sub @ ivp)


def hierarchical_risk_parity(inputs: PcInputs) -> np.ndarray:
    """Correlation-distance single linkage, quasi-diagonal ordering, then
    recursive bisection with inverse-cluster-variance splits."""
    sigma = inputs.sigma.matrix
    rho = _correlation(sigma)
    dist = np.sqrt(np.clip((1.0 - rho) / 2.0, 0.0, None))
    order = _single_linkage_order(dist)
    w = np.ones(inputs.n)
    stack = [order]
    while stack:
        members = stack.pop(0)
        if len(members) < 2:
            continue
        half = len(members) // 2
        left, right = members[:half], members[half:]
        var_l = _cluster_variance(sigma, left)
        var_r = _cluster_variance(sigma, right)
        alpha = 1.0 - var_l / (var_l + var_r)
        for m in left:
            w[m] *= alpha
        for m in right:
            w[m] *= 1.0 - alpha
        stack.append(left)
        stack.append(right)
    return project_capped_simplex(w / w.sum(), inputs.lo, inputs.hi)


def max_diversification(inputs: PcInputs) -> np.ndarray:
    """Maximize (w'vols) / sqrt(w'Sigma w)."""
    res = tangency_max(inputs.vols.copy(), inputs.sigma.matrix,
                       inputs.lo, inputs.hi)
    return res.w


def min_correlation(inputs: PcInputs) -> np.ndarray:
    """Rank assets by average pairwise correlation (least correlated gets
    the highest rank weight), scale by inverse vol, normalize."""
    n = inputs.n
    if n < 2:
        return project_capped_simplex(np.ones(n), inputs.lo, inputs.hi)
    rho = _correlation(inputs.sigma.matrix)
    avg = (rho.sum(axis=1) - 1.0) / (n - 1)
    order = np.argsort(avg, kind="stable")
    ranks = np.empty(n)
    i = 0
    while i < n:  # average ranks over ties so symmetric inputs stay symmetric
        j = i
        while j + 1 < n and avg[order[j + 1]] <= avg[order[i]] + 1e-12:
            j += 1
        ranks[order[i:j + 1]] = (n - i + n - j) / 2.0
        i = j + 1
    raw = ranks / np.maximum(inputs.vols, 1e-12)
    return project_capped_simplex(raw / raw.sum(), inputs.lo, inputs.hi)


# --- category D: non-traditional --------------------------------------------

def rockafellar_cvar(losses: np.ndarray, alpha: float) -> float:
    """min over zeta of zeta + mean((losses - zeta)+) / (1 - alpha);
    exact for the empirical distribution (optimum at a breakpoint)."""
    candidates = np.unique(losses)
    best = math.inf
    for zeta in candidates:
        val = zeta + float(np.mean(np.maximum(losses - zeta, 0.0))) / (1.0 - alpha)
        best = min(best, val)
    return best


def cvar_portfolio_value(w: np.ndarray, inputs: PcInputs) -> float:
    return rockafellar_cvar(-(inputs.scenarios @ w), inputs.cvar_level)


def cvar_min(inputs: PcInputs) -> np.ndarray:
    """Rockafellar-Uryasev auxiliary LP over the scenario matrix."""
    scen = inputs.scenarios
    t, n = scen.shape
    alpha = inputs.cvar_level
    # variables: w (n), zeta (1), u (t)
    c = np.concatenate([np.zeros(n), [1.0], np.full(t, 1.0 / ((1.0 - alpha) * t))])
    a_ub = np.hstack([-scen, -np.ones((t, 1)), -np.eye(t)])
    b_ub = np.zeros(t)
    a_eq = np.concatenate([np.ones(n), [0.0], np.zeros(t)]).reshape(1, -1)
    bounds = ([(float(lo), float(hi)) for lo, hi in inputs.bounds]
              + [(None, None)] + [(0.0, None)] * t)
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                  bounds=bounds, method="highs")
    if not res.success:
        raise ConvergenceError(f"CVaR LP failed: {res.message}")
    return project_capped_simplex(res.x[:n], inputs.lo, inputs.hi)


def drawdown_magnitude(w: np.ndarray, scenarios: np.ndarray) -> float:
    wealth = np.concatenate([[1.0], np.cumprod(1.0 + scenarios @ w)])
    return -max_drawdown(wealth)


def max_drawdown_constrained(inputs: PcInputs) -> np.ndarray:
    """Maximize mu'w subject to the compounded-path drawdown staying within
    dd_limit.  Greedy feasible transfers from low-mu to high-mu assets with a
    shrinking step, from every feasible starting vertex."""
    scen = inputs.scenarios
    limit = inputs.dd_limit
    lo, hi = inputs.lo, inputs.hi
    n = inputs.n

    def feasible(w):
        return drawdown_magnitude(w, scen) <= limit + 1e-12

    starts = []
    for i in range(n):
        v = project_capped_simplex(np.eye(n)[i], lo, hi)
        if feasible(v):
            starts.append(v)
    eq = project_capped_simplex(np.full(n, 1.0 / n), lo, hi)
    if feasible(eq):
        starts.append(eq)
    if not starts:
        raise InfeasibleError(
            f"no starting portfolio satisfies drawdown limit {limit:.2%}")

    mu_order = sorted(range(n), key=lambda i: (inputs.mu[i], i))

    def climb(w):
        w = w.copy()
        step = 0.1
        while step >= 1e-7:
            improved = False
            for d in mu_order:
                if w[d] - lo[d] < 1e-12:
                    continue
                for r in reversed(mu_order):
                    if inputs.mu[r] <= inputs.mu[d] or hi[r] - w[r] < 1e-12:
                        continue
                    delta = min(step, w[d] - lo[d], hi[r] - w[r])
                    if delta < 1e-12:
                        continue
                    cand = w.copy()
                    cand[d] -= delta
                    cand[r] += delta
                    if feasible(cand):
                        w = cand
                        improved = True
            if not improved:
                step *= 0.5
        return w

    best, best_val = None, -math.inf
    for start in starts:
        w = climb(start)
        val = float(inputs.mu @ w)
        if val > best_val + 1e-15:
            best, best_val = w, val
    return best


def tail_contributions(w: np.ndarray, inputs: PcInputs) -> np.ndarray:
    """Scenario-subgradient component CVaR contributions w_i * dCVaR/dw_i."""
    scen = inputs.scenarios
    losses = -(scen @ w)
    t = losses.size
    k = max(1, int(math.ceil((1.0 - inputs.cvar_level) * t)))
    tail_idx = np.argsort(losses, kind="stable")[-k:]
    grad = -(scen[tail_idx].mean(axis=0))
    return w * grad


def tail_risk_parity(inputs: PcInputs, tol: float = 1e-4,
                     max_iter: int = 2000) -> np.ndarray:
    """Equalize normalized component CVaR contributions.

    For a fixed tail set the CVaR subgradient is constant, so exact parity
    there is w proportional to 1/g.  The fixed point alternates between
    refreshing the tail and a damped multiplicative pull toward 1/g; the
    damping shrinks whenever the residual stops improving, which settles
    tail-membership chatter.
    """
    n = inputs.n
    target = 1.0 / n
    w = 1.0 / np.maximum(inputs.vols, 1e-12)
    w /= w.sum()
    gamma = 0.7
    best_res = math.inf
    residual = math.inf
    for _ in range(max_iter):
        cc = tail_contributions(w, inputs)
        total = cc.sum()
        if total <= 0 or np.any(cc <= 0):
            raise ConvergenceError(
                "tail contributions not strictly positive; parity unattainable",
                residual=None)
        norm = cc / total
        residual = float(np.max(np.abs(norm - target)))
        if residual <= tol:
            return project_capped_simplex(w, inputs.lo, inputs.hi)
        if residual >= best_res:
            gamma = max(gamma * 0.9, 0.02)
        best_res = min(best_res, residual)
        grad = cc / w  # tail subgradient per asset
        w = w ** (1.0 - gamma) * (1.0 / grad) ** gamma
        w = np.maximum(w, 1e-12)
        w /= w.sum()
    raise ConvergenceError(
        f"tail risk parity residual {residual:.2e} after {max_iter} iterations",
        residual=residual)


def tpa_two_factor(inputs: PcInputs) -> np.ndarray:
    """Track the two-factor (equity, bond) risk budget: minimize
    ||B'w - b||^2, tie-broken toward lower variance."""
    if inputs.tpa_loadings is None:
        raise ConfigError("TPA needs factor loadings")
    loadings = np.asarray(inputs.tpa_loadings, dtype=float)
    if loadings.shape != (inputs.n, 2):
        raise DomainError("TPA loadings must be n x 2")
    budget = np.asarray(inputs.tpa_budget, dtype=float)
    tie = 1e-8
    quad = 2.0 * (loadings @ loadings.T + tie * inputs.sigma.matrix)
    linear = -2.0 * loadings @ budget
    res = minimize_quadratic(quad, inputs.lo, inputs.hi, linear=linear, tol=1e-12)
    return res.w


def max_entropy(inputs: PcInputs, floor_frac: Optional[float] = None,
                s_star: Optional[float] = None,
                w_star: Optional[np.ndarray] = None) -> np.ndarray:
    """Maximize Shannon entropy of the weights subject to a Sharpe floor
    expressed as a fraction of the maximum Sharpe ratio."""
    floor_frac = inputs.sharpe_floor_frac if floor_frac is None else floor_frac
    if w_star is None or s_star is None:
        w_star, s_star = max_sharpe(inputs)
    if s_star <= 0:
        return w_star
    floor = floor_frac * s_star
    sigma = inputs.sigma.matrix
    a = inputs.mu - inputs.rf

    def cons(w):
        return float(a @ w) - floor * math.sqrt(max(float(w @ sigma @ w), 1e-30))

    def cons_grad(w):
        vol = math.sqrt(max(float(w @ sigma @ w), 1e-30))
        return a - floor * (sigma @ w) / vol

    eq = project_capped_simplex(np.full(inputs.n, 1.0 / inputs.n),
                                inputs.lo, inputs.hi)
    if cons(eq) >= 0.0:
        return eq

    def entropy(w):
        wc = np.clip(w, 1e-16, None)
        return -float(np.sum(wc * np.log(wc)))

    def entropy_grad(w):
        wc = np.clip(w, 1e-16, None)
        return -(np.log(wc) + 1.0)

    def feasible(w):
        return cons(w) >= -1e-12

    w = eq
    for _ in range(2):
        w = penalty_maximize(entropy, entropy_grad, cons, cons_grad, w,
                             inputs.lo, inputs.hi,
                             l0=max(quad_lipschitz(sigma), 1.0),
                             rhos=(1e2, 1e4, 1e6, 1e8))
        w = smallest_feasible_blend(w, w_star, feasible)
    return w


def adversarial_diversifier(inputs: PcInputs, peers: List[np.ndarray],
                            floor_frac: Optional[float] = None,
                            s_star: Optional[float] = None,
                            w_star: Optional[np.ndarray] = None,
                            ) -> Tuple[np.ndarray, np.ndarray]:
    """Maximize tracking variance to the peer centroid subject to a Sharpe
    floor of floor_frac times the maximum Sharpe ratio.  Multi-start ascent
    from the max-Sharpe point, every feasible peer, and every vertex, so the
    result never trails a feasible peer.  Returns (weights, centroid)."""
    if not peers:
        raise InsufficientDataError("adversarial diversifier needs peer proposals")
    floor_frac = (inputs.adversarial_floor_frac if floor_frac is None
                  else floor_frac)
    if w_star is None or s_star is None:
        w_star, s_star = max_sharpe(inputs)
    centroid = np.mean(np.asarray(peers, dtype=float), axis=0)
    sigma = inputs.sigma.matrix
    a = inputs.mu - inputs.rf
    if s_star <= 0:
        return w_star, centroid
    floor = floor_frac * s_star

    def cons(w):
        return float(a @ w) - floor * math.sqrt(max(float(w @ sigma @ w), 1e-30))

    def cons_grad(w):
        vol = math.sqrt(max(float(w @ sigma @ w), 1e-30))
        return a - floor * (sigma @ w) / vol

    def objective(w):
        d = w - centroid
        return float(d @ sigma @ d)

    def obj_grad(w):
        return 2.0 * sigma @ (w - centroid)

    def feasible(w):
        return cons(w) >= -1e-12

    starts = [w_star] + [p for p in peers if feasible(p)]
    starts += [project_capped_simplex(np.eye(inputs.n)[i], inputs.lo, inputs.hi)
               for i in range(inputs.n)]
    best, best_val = None, -math.inf
    for start in starts:
        w = penalty_maximize(objective, obj_grad, cons, cons_grad, start,
                             inputs.lo, inputs.hi,
                             l0=2.0 * max(quad_lipschitz(sigma), 1e-12),
                             rhos=(1e3, 1e5, 1e7))
        if not feasible(w):
            w = smallest_feasible_blend(w, w_star, feasible)
        candidates = [w, start] if feasible(start) else [w]
        for cand in candidates:
            val = objective(cand)
            if val > best_val + 1e-15:
                best, best_val = cand, val
    return best, centroid


# --- researcher and orchestration -------------------------------------------

def researcher_discover(registry_ids: Sequence[str],
                        library: Sequence[str] = DEFAULT_LIBRARY) -> Optional[str]:
    """First library entry not already in the registry; None if exhausted."""
    present = set(registry_ids)
    for method_id in library:
        if method_id not in present:
            if method_id not in DISCOVERY_SPECS:
                raise ConfigError(f"unknown library method {method_id!r}")
            return method_id
    return None


@dataclass
class RunContext:
    s_star: float
    w_star: np.ndarray
    centroid: Optional[np.ndarray] = None
    sensitivities: Dict[str, float] = field(default_factory=dict)


@dataclass
class RunResult:
    records: List[RunRecord]
    context: RunContext

    @property
    def proposals(self) -> List[PcProposal]:
        return [r.proposal for r in self.records if r.ok]


def _canonical_runner(method_id: str) -> Callable[[PcInputs], Tuple[np.ndarray, str]]:
    def heuristic(kind, note):
        return lambda inp: (heuristic_weights(kind, inp), note)

    table = {
        "equal_weight": heuristic("equal_weight", "uniform 1/n allocation"),
        "market_cap": heuristic("market_cap", "proportional to market capitalization"),
        "inverse_volatility": heuristic("inverse_volatility",
                                        "proportional to 1/vol"),
        "inverse_variance": heuristic("inverse_variance",
                                      "proportional to 1/variance"),
        "volatility_targeting": lambda inp: (
            volatility_targeting(inp, heuristic_weights("equal_weight", inp)),
            f"equal-weight base scaled to {inp.target_vol:.0%} target vol"),
        "max_sharpe": lambda inp: (max_sharpe(inp)[0],
                                   "tangency portfolio on the bounded simplex"),
        "black_litterman": lambda inp: (black_litterman(inp)[0],
                                        "tangency on the posterior-blended returns"),
        "robust_mean_variance": lambda inp: (
            robust_mean_variance(inp), "tangency under worst-case box returns"),
        "resampled_frontier": lambda inp: (
            resampled_frontier(inp),
            f"average of {inp.resample_draws} bootstrap tangency solves"),
        "mean_downside": lambda inp: (
            mean_downside(inp), f"return over downside deviation vs MAR {inp.mar:.0%}"),
        "global_min_variance": lambda inp: (
            global_min_variance(inp), "minimum ex-ante variance"),
        "risk_parity_erc": lambda inp: (
            risk_parity_erc(inp), "equal risk contributions"),
        "hierarchical_risk_parity": lambda inp: (
            hierarchical_risk_parity(inp),
            "correlation clustering with recursive bisection"),
        "max_diversification": lambda inp: (
            max_diversification(inp), "maximum diversification ratio"),
        "min_correlation": lambda inp: (
            min_correlation(inp), "rank-weighted least-correlated assets"),
        "cvar_min": lambda inp: (
            cvar_min(inp), f"minimum {inp.cvar_level:.0%} CVaR over scenarios"),
        "max_drawdown_constrained": lambda inp: (
            max_drawdown_constrained(inp),
            f"maximum return within {inp.dd_limit:.0%} historical drawdown"),
        "tail_risk_parity": lambda inp: (
            tail_risk_parity(inp), "equal component CVaR contributions"),
        "tpa_two_factor": lambda inp: (
            tpa_two_factor(inp),
            f"two-factor budget {inp.tpa_budget[0]:.0%}/{inp.tpa_budget[1]:.0%}"),
    }
    return table[method_id]


def run_all(inputs: PcInputs, toggles: Optional[Dict[str, bool]] = None,
            library: Sequence[str] = DEFAULT_LIBRARY,
            compute_sensitivity: bool = True) -> RunResult:
    """Run the full registry: 19 canonical methods, the researcher's
    discovery, then the adversarial diversifier against the centroid of the
    completed proposals.  A single method failure is recorded, not fatal.
    Output order is fixed by the registry regardless of execution order."""
    toggles = toggles or {}

    def enabled(method_id):
        return toggles.get(method_id, True)

    w_star, s_star = max_sharpe(inputs)
    context = RunContext(s_star=s_star, w_star=w_star)

    records: List[RunRecord] = []
    completed: List[np.ndarray] = []
    for spec in CANONICAL_SPECS:
        if not enabled(spec.method_id):
            continue
        runner = _canonical_runner(spec.method_id)
        try:
            w, note = runner(inputs)
            proposal = make_proposal(spec, w, inputs, note)
            records.append(RunRecord(spec=spec, proposal=proposal))
            completed.append(proposal.weights.values)
        except Exception as exc:
            records.append(RunRecord(spec=spec, error=f"{type(exc).__name__}: {exc}"))

    discovery_record = None
    registry_ids = [s.method_id for s in CANONICAL_SPECS] + [ADVERSARIAL_SPEC.method_id]
    discovered = researcher_discover(registry_ids, library)
    if discovered is not None and enabled(discovered):
        spec = DISCOVERY_SPECS[discovered]
        try:
            w = max_entropy(inputs, s_star=s_star, w_star=w_star)
            proposal = make_proposal(
                spec, w, inputs,
                f"researcher discovery: entropy maximization with a "
                f"{inputs.sharpe_floor_frac:.0%} Sharpe floor")
            discovery_record = RunRecord(spec=spec, proposal=proposal)
            completed.append(proposal.weights.values)
        except Exception as exc:
            discovery_record = RunRecord(spec=spec,
                                         error=f"{type(exc).__name__}: {exc}")

    adversarial_record = None
    if enabled(ADVERSARIAL_SPEC.method_id):
        try:
            if not completed:
                raise InsufficientDataError("no completed peers for the adversary")
            w, centroid = adversarial_diversifier(inputs, completed,
                                                  s_star=s_star, w_star=w_star)
            context.centroid = centroid
            proposal = make_proposal(
                ADVERSARIAL_SPEC, w, inputs,
                f"maximum tracking variance to the {len(completed)}-peer centroid "
                f"with a {inputs.adversarial_floor_frac:.0%} Sharpe floor")
            adversarial_record = RunRecord(spec=ADVERSARIAL_SPEC, proposal=proposal)
        except Exception as exc:
            adversarial_record = RunRecord(spec=ADVERSARIAL_SPEC,
                                           error=f"{type(exc).__name__}: {exc}")
    if adversarial_record is not None:
        records.append(adversarial_record)
    if discovery_record is not None:
        records.append(discovery_record)

    if compute_sensitivity:
        signs = np.where(np.arange(inputs.n) % 2 == 0, 1.0, -1.0)
        bumped = replace(inputs, mu=inputs.mu + SENSITIVITY_BUMP * inputs.vols * signs)
        shadow = run_all(bumped, toggles=toggles, library=library,
                         compute_sensitivity=False)
        shadow_w = {r.spec.method_id: r.proposal.weights.values
                    for r in shadow.records if r.ok}
        for record in records:
            if not record.ok:
                continue
            other = shadow_w.get(record.spec.method_id)
            if other is None:
                continue
            sens = 0.5 * float(np.abs(record.proposal.weights.values - other).sum())
            record.proposal.diagnostics["mu_sensitivity"] = sens
            context.sensitivities[record.spec.method_id] = sens
    return RunResult(records=records, context=context)


# --- per-method evaluation hooks used by the strategy review -----------------

def method_objective(method_id: str, w: np.ndarray, inputs: PcInputs,
                     context: RunContext) -> float:
    """Score a portfolio under a method's own objective (higher is better)."""
    sigma = inputs.sigma.matrix
    mu = inputs.mu
    n = inputs.n

    def sharpe(weights):
        return portfolio_sharpe(weights, mu, sigma, inputs.rf)

    if method_id == "equal_weight":
        return -float(np.abs(w - 1.0 / n).sum())
    if method_id == "market_cap":
        if inputs.caps is None:
            return 0.0
        return -float(np.abs(w - inputs.caps.weights(inputs.slugs)).sum())
    if method_id == "inverse_volatility":
        target = 1.0 / np.maximum(inputs.vols, 1e-12)
        return -float(np.abs(w - target / target.sum()).sum())
    if method_id == "inverse_variance":
        target = 1.0 / np.maximum(inputs.vols ** 2, 1e-24)
        return -float(np.abs(w - target / target.sum()).sum())
    if method_id == "volatility_targeting":
        vol = math.sqrt(max(float(w @ sigma @ w), 0.0))
        return -abs(vol - inputs.target_vol)
    if method_id in ("max_sharpe", "resampled_frontier"):
        return sharpe(w)
    if method_id == "black_litterman":
        try:
            _, posterior = black_litterman(inputs)
        except Exception:
            return sharpe(w)
        return portfolio_sharpe(w, posterior, sigma, inputs.rf)
    if method_id == "robust_mean_variance":
        t_obs = max(inputs.scenarios.shape[0], 1)
        worst = mu - inputs.robust_kappa * inputs.vols / math.sqrt(t_obs)
        return portfolio_sharpe(w, worst, sigma, inputs.rf)
    if method_id == "mean_downside":
        dd = downside_deviation(w, inputs)
        if dd <= 1e-12:
            return 1e6 - float(w @ sigma @ w)
        return (float(mu @ w) - inputs.mar) / dd
    if method_id == "global_min_variance":
        return -math.sqrt(max(float(w @ sigma @ w), 0.0))
    if method_id in ("risk_parity_erc", "hierarchical_risk_parity"):
        total = float(w @ sigma @ w)
        if total <= 0:
            return -1.0
        rc = (w * (sigma @ w)) / total
        return -float(rc.max() - rc.min())
    if method_id == "max_diversification":
        vol = math.sqrt(max(float(w @ sigma @ w), 1e-30))
        return float(inputs.vols @ w) / vol
    if method_id == "min_correlation":
        rho = _correlation(sigma)
        avg = (rho.sum(axis=1) - 1.0) / max(n - 1, 1)
        return -float(avg @ w)
    if method_id == "cvar_min":
        return -cvar_portfolio_value(w, inputs)
    if method_id == "max_drawdown_constrained":
        breach = max(0.0, drawdown_magnitude(w, inputs.scenarios) - inputs.dd_limit)
        return float(mu @ w) - 10.0 * breach
    if method_id == "tail_risk_parity":
        cc = tail_contributions(w, inputs)
        total = cc.sum()
        if total <= 0:
            return -1.0
        norm = cc / total
        return -float(norm.max() - norm.min())
    if method_id == "tpa_two_factor":
        if inputs.tpa_loadings is None:
            return 0.0
        resid = inputs.tpa_loadings.T @ w - np.asarray(inputs.tpa_budget)
        return -float(resid @ resid)
    if method_id == "max_entropy":
        floor = inputs.sharpe_floor_frac * context.s_star
        wc = np.clip(w, 1e-16, None)
        return (-float(np.sum(wc * np.log(wc)))
                - 10.0 * max(0.0, floor - sharpe(w)))
    if method_id == "adversarial_diversifier":
        if context.centroid is None:
            return 0.0
        d = w - context.centroid
        floor = inputs.adversarial_floor_frac * context.s_star
        return float(d @ sigma @ d) - 10.0 * max(0.0, floor - sharpe(w))
    raise ConfigError(f"no objective evaluator for {method_id!r}")


def soundness_residual(method_id: str, w: np.ndarray, inputs: PcInputs,
                       context: RunContext) -> Optional[float]:
    """Residual of the method's defining identity at its proposal; None when
    no cheap identity exists for the method."""
    sigma = inputs.sigma.matrix

    if method_id in ("equal_weight", "market_cap", "inverse_volatility",
                     "inverse_variance"):
        try:
            target = heuristic_weights(method_id, inputs)
        except Exception:
            return None
        return float(np.max(np.abs(w - target)))
    if method_id == "risk_parity_erc":
        total = float(w @ sigma @ w)
        if total <= 0:
            return 1.0
        rc = (w * (sigma @ w)) / total
        return float(np.max(np.abs(rc - 1.0 / inputs.n)))
    if method_id == "tail_risk_parity":
        cc = tail_contributions(w, inputs)
        total = cc.sum()
        if total <= 0:
            return 1.0
        return float(np.max(np.abs(cc / total - 1.0 / inputs.n)))
    if method_id == "volatility_targeting":
        vol = math.sqrt(max(float(w @ sigma @ w), 0.0))
        return max(0.0, vol - inputs.target_vol)
    if method_id == "max_drawdown_constrained":
        return max(0.0, drawdown_magnitude(w, inputs.scenarios) - inputs.dd_limit)
    if method_id in ("max_entropy", "adversarial_diversifier"):
        frac = (inputs.sharpe_floor_frac if method_id == "max_entropy"
                else inputs.adversarial_floor_frac)
        floor = frac * context.s_star
        return max(0.0, floor - portfolio_sharpe(w, inputs.mu, sigma, inputs.rf))
    return None
