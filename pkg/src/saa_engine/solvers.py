"""Long-only portfolio solvers: capped-simplex projection, accelerated
projected gradient with backtracking, and a Dinkelbach loop for ratio
objectives (Sharpe-type numerator over a convex positive denominator).

All solvers are deterministic: fixed starting points, fixed iteration
order, no randomness.  Convergence is measured by the projected-gradient
fixed-point residual ``||w - P(w - grad/L)||_inf``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ConvergenceError, InfeasibleError

MAX_ITER = 10_000
TOL = 1e-9


def check_bounds(lo: np.ndarray, hi: np.ndarray) -> None:
    if np.any(lo > hi):
        raise InfeasibleError("bounds have lo > hi")
    if lo.sum() > 1.0 + 1e-12 or hi.sum() < 1.0 - 1e-12:
        raise InfeasibleError(
            f"bounds infeasible: sum(lo)={lo.sum():.4f}, sum(hi)={hi.sum():.4f}")


def project_capped_simplex(v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w : lo <= w <= hi, sum(w) = 1}.

    f(tau) = sum(clip(v - tau, lo, hi)) is piecewise linear and
    non-increasing with breakpoints at v - hi and v - lo; the exact shift
    comes from scanning the breakpoints and interpolating the crossing.
    """
    v = np.asarray(v, dtype=float)
    check_bounds(lo, hi)
    taus = np.sort(np.concatenate([v - hi, v - lo]))
    sums = np.clip(v[None, :] - taus[:, None], lo, hi).sum(axis=1)
    # sums is non-increasing; find the segment where it crosses 1
    idx = int(np.searchsorted(-sums, -1.0, side="left"))
    if idx == 0:
        tau = taus[0]
    elif idx >= len(taus):
        tau = taus[-1]
    else:
        f_hi, f_lo = sums[idx - 1], sums[idx]
        if f_hi == f_lo:
            tau = taus[idx]
        else:
            t = (f_hi - 1.0) / (f_hi - f_lo)
            tau = taus[idx - 1] + t * (taus[idx] - taus[idx - 1])
    w = np.clip(v - tau, lo, hi)
    # distribute any residual rounding over components with slack
    gap = 1.0 - w.sum()
    if gap != 0.0:
        free = (w < hi - 1e-15) if gap > 0 else (w > lo + 1e-15)
        if not free.any():
            free = np.ones_like(w, dtype=bool)
        w[free] += gap / free.sum()
        w = np.clip(w, lo, hi)
    return w


@dataclass
class SolveResult:
    w: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool


def fista_minimize(f: Callable[[np.ndarray], float],
                   grad: Callable[[np.ndarray], np.ndarray],
                   w0: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                   l0: float = 1.0, max_iter: int = MAX_ITER, tol: float = TOL,
                   require_convergence: bool = False) -> SolveResult:
    """Monotone FISTA with backtracking on the capped simplex.

    The momentum restarts whenever the objective fails to decrease, which
    keeps the iterate sequence monotone and the output deterministic.
    """
    x = project_capped_simplex(np.asarray(w0, dtype=float), lo, hi)
    y = x.copy()
    fx = f(x)
    L = max(l0, 1e-12)
    t = 1.0
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(y)
        fy = f(y)
        # backtracking: find L with sufficient decrease from y
        for _ in range(80):
            cand = project_capped_simplex(y - g / L, lo, hi)
            d = cand - y
            quad = fy + float(g @ d) + 0.5 * L * float(d @ d)
            if f(cand) <= quad + 1e-15 * max(1.0, abs(quad)):
                break
            L *= 2.0
        f_cand = f(cand)
        if f_cand <= fx:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = cand + ((t - 1.0) / t_next) * (cand - x)
            y = project_capped_simplex(y, lo, hi)
            x, fx, t = cand, f_cand, t_next
        else:
            # restart momentum from the best point so far
            y = x.copy()
            t = 1.0
        if it % 10 == 0 or it == max_iter:
            gx = grad(x)
            step = project_capped_simplex(x - gx / L, lo, hi)
            residual = float(np.max(np.abs(step - x)))
            if residual <= tol:
                return SolveResult(x, fx, residual, it, True)
    gx = grad(x)
    step = project_capped_simplex(x - gx / L, lo, hi)
    residual = float(np.max(np.abs(step - x)))
    if residual <= tol:
        return SolveResult(x, fx, residual, it, True)
    if require_convergence:
        raise ConvergenceError(
            f"projected gradient stalled at residual {residual:.3e} "
            f"after {it} iterations", residual=residual)
    return SolveResult(x, fx, residual, it, False)


def quad_lipschitz(sigma: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sigma).max())


def active_set_qp(Q: np.ndarray, c: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                  w0: Optional[np.ndarray] = None,
                  max_pivots: int = 500) -> Optional[np.ndarray]:
    """Exact primal active-set solve of min 0.5 w'Qw - c'w on the capped
    simplex, for positive-definite Q at desk scale (n <= a few dozen).

    Ratio steps keep iterates feasible and the objective non-increasing;
    ties break to the lowest index so the pivot sequence is deterministic.
    Returns None when the pivot budget is exhausted or a KKT system is
    singular (callers fall back to projected gradient).
    """
    n = len(c)
    w = project_capped_simplex(np.full(n, 1.0 / n) if w0 is None else w0, lo, hi)
    span = np.maximum(hi - lo, 1e-30)
    at_lo = w - lo <= 1e-12 * span
    at_hi = hi - w <= 1e-12 * span
    free = ~(at_lo | at_hi)
    if not free.any():
        free = np.ones(n, dtype=bool)
        at_lo[:] = False
        at_hi[:] = False

    for _ in range(max_pivots):
        idx_f = np.where(free)[0]
        if idx_f.size:
            k = idx_f.size
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = Q[np.ix_(idx_f, idx_f)]
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            fixed = ~free
            rhs = np.zeros(k + 1)
            rhs[:k] = c[idx_f] - Q[np.ix_(idx_f, np.where(fixed)[0])] @ w[fixed]
            rhs[k] = 1.0 - w[fixed].sum()
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                return None
            target = sol[:k]
            tau = sol[k]
            d = target - w[idx_f]
            if float(np.max(np.abs(d))) > 1e-13:
                # ratio test: largest feasible step toward the target
                alpha = 1.0
                blocker = -1
                blocker_hi = False
                for pos, i in enumerate(idx_f):
                    if d[pos] > 1e-15:
                        lim = (hi[i] - w[i]) / d[pos]
                        if lim < alpha - 1e-12:
                            alpha, blocker, blocker_hi = max(lim, 0.0), i, True
                    elif d[pos] < -1e-15:
                        lim = (lo[i] - w[i]) / d[pos]
                        if lim < alpha - 1e-12:
                            alpha, blocker, blocker_hi = max(lim, 0.0), i, False
                w[idx_f] += alpha * d
                if blocker >= 0:
                    if blocker_hi:
                        w[blocker] = hi[blocker]
                        at_hi[blocker] = True
                    else:
                        w[blocker] = lo[blocker]
                        at_lo[blocker] = True
                    free[blocker] = False
                continue
        # working-set optimum reached: check duals of the bound constraints
        g = Q @ w - c
        if idx_f.size:
            tau = float(-g[idx_f].mean())
        else:
            lo_req = [-g[i] for i in range(n) if at_lo[i]]
            hi_req = [-g[i] for i in range(n) if at_hi[i]]
            t_min = max(lo_req) if lo_req else -np.inf
            t_max = min(hi_req) if hi_req else np.inf
            if t_min <= t_max + 1e-12:
                return w
            tau = 0.5 * (t_min + t_max)
        worst_i, worst_v = -1, 1e-10
        for i in range(n):
            if at_lo[i]:
                viol = -(g[i] + tau)
            elif at_hi[i]:
                viol = g[i] + tau
            else:
                continue
            if viol > worst_v + 1e-15:
                worst_i, worst_v = i, viol
        if worst_i < 0:
            return w
        at_lo[worst_i] = False
        at_hi[worst_i] = False
        free[worst_i] = True
    return None


def minimize_quadratic(sigma: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                       linear: Optional[np.ndarray] = None,
                       w0: Optional[np.ndarray] = None,
                       tol: float = TOL, max_iter: int = MAX_ITER) -> SolveResult:
    """min 0.5 w'Sigma w + linear'w on the capped simplex.

    Solved exactly by the active-set pivoter; projected gradient is the
    fallback when pivoting gives up.
    """
    n = sigma.shape[0]
    lin = np.zeros(n) if linear is None else np.asarray(linear, dtype=float)
    start = np.full(n, 1.0 / n) if w0 is None else w0
    l0 = max(quad_lipschitz(sigma), 1e-12)

    def f(w):
        return 0.5 * float(w @ sigma @ w) + float(lin @ w)

    def g(w):
        return sigma @ w + lin

    w = active_set_qp(sigma, -lin, lo, hi, w0=start)
    if w is not None:
        step = project_capped_simplex(w - g(w) / l0, lo, hi)
        residual = float(np.max(np.abs(step - w)))
        if residual <= tol:
            return SolveResult(w, f(w), residual, 0, True)
        start = w
    return fista_minimize(f, g, start, lo, hi, l0=l0, tol=tol, max_iter=max_iter)


def greedy_linear_max(a: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """argmax a'w on the capped simplex: fill best coordinates to their caps."""
    check_bounds(lo, hi)
    w = lo.copy()
    budget = 1.0 - w.sum()
    for i in sorted(range(len(a)), key=lambda i: (-a[i], i)):
        room = hi[i] - w[i]
        add = min(room, budget)
        w[i] += add
        budget -= add
        if budget <= 1e-15:
            break
    return w


def ratio_max(a: np.ndarray,
              q: Callable[[np.ndarray], float],
              grad_q: Callable[[np.ndarray], np.ndarray],
              l_q: float,
              lo: np.ndarray, hi: np.ndarray,
              w0: Optional[np.ndarray] = None,
              golden_iters: int = 60,
              polish_outer: int = 4,
              q_matrix: Optional[np.ndarray] = None,
              subproblem_tol: float = 1e-11,
              subproblem_iter: int = 2000) -> SolveResult:
    """Maximize a'w / sqrt(2 q(w)) with a linear and q convex nonnegative.

    Sweeps the risk-return frontier w(gamma) = argmax a'w - gamma q(w) by
    golden section on log(gamma): the ratio is unimodal along the frontier
    because the achievable (risk, return) region is convex.  When q is the
    quadratic 0.5 w'Mw (pass q_matrix=M) the subproblems pivot exactly;
    otherwise projected gradient solves them.  A short Dinkelbach polish on
    the exact sqrt form finishes the job.  Equal-weight warm starts make
    exactly-tied objectives resolve to the maximum-entropy point.
    """
    n = len(a)

    def b(w):
        return float(np.sqrt(max(2.0 * q(w), 1e-30)))

    def ratio(w):
        return float(a @ w) / b(w)

    if float(a @ greedy_linear_max(a, lo, hi)) <= 0.0:
        # no positive-numerator direction: take the least-negative numerator
        w = greedy_linear_max(a, lo, hi)
        return SolveResult(w, ratio(w), 0.0, 0, True)

    eq = project_capped_simplex(np.full(n, 1.0 / n) if w0 is None else w0, lo, hi)

    def solve_gamma(gamma, start):
        if q_matrix is not None:
            w = active_set_qp(gamma * q_matrix, a, lo, hi, w0=start)
            if w is not None:
                return w

        def f(x):
            return gamma * q(x) - float(a @ x)

        def g(x):
            return gamma * grad_q(x) - a

        return fista_minimize(f, g, start, lo, hi, l0=max(gamma * l_q, 1e-12),
                              tol=subproblem_tol, max_iter=subproblem_iter).w

    q_eq = max(q(eq), 1e-18)
    gamma_mid = max(abs(float(a @ eq)), 1e-12) / q_eq
    u_lo, u_hi = np.log(gamma_mid) - 18.0, np.log(gamma_mid) + 18.0
    invphi = (np.sqrt(5.0) - 1.0) / 2.0

    cache = {}

    def eval_u(u, start):
        w = solve_gamma(float(np.exp(u)), start)
        cache[u] = w
        return ratio(w), w

    best_w, best_r = eq, ratio(eq)
    u1 = u_hi - invphi * (u_hi - u_lo)
    u2 = u_lo + invphi * (u_hi - u_lo)
    r1, w1 = eval_u(u1, eq)
    r2, w2 = eval_u(u2, w1)
    for rr, ww in ((r1, w1), (r2, w2)):
        if rr > best_r + 1e-15:
            best_r, best_w = rr, ww
    for _ in range(golden_iters):
        if r1 >= r2:
            u_hi, u2, r2 = u2, u1, r1
            u1 = u_hi - invphi * (u_hi - u_lo)
            r1, w1 = eval_u(u1, best_w)
            if r1 > best_r + 1e-15:
                best_r, best_w = r1, w1
        else:
            u_lo, u1, r1 = u1, u2, r2
            u2 = u_lo + invphi * (u_hi - u_lo)
            r2, w2 = eval_u(u2, best_w)
            if r2 > best_r + 1e-15:
                best_r, best_w = r2, w2
        if u_hi - u_lo < 1e-10:
            break

    # vertex guard: the frontier sweep cannot miss a strictly better vertex
    for i in range(n):
        v = project_capped_simplex(np.eye(n)[i], lo, hi)
        if ratio(v) > best_r + 1e-15:
            best_r, best_w = ratio(v), v

    # Dinkelbach polish on the exact ratio
    w = best_w
    lam = best_r
    for _ in range(polish_outer):
        if lam <= 0:
            break

        def h(x, lam=lam):
            return lam * b(x) - float(a @ x)

        def gh(x, lam=lam):
            bx = b(x)
            return lam * grad_q(x) / bx - a

        w_new = fista_minimize(h, gh, w, lo, hi, l0=max(l_q / max(b(w), 1e-12), 1e-12),
                               tol=min(subproblem_tol, 1e-12),
                               max_iter=subproblem_iter).w
        lam_new = ratio(w_new)
        if lam_new <= lam + 1e-15:
            break
        w, lam = w_new, lam_new
    if lam < best_r:
        w, lam = best_w, best_r
    return SolveResult(w, lam, 0.0, 0, True)


def tangency_max(a: np.ndarray, sigma: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                 w0: Optional[np.ndarray] = None,
                 golden_iters: int = 60) -> SolveResult:
    """Maximize a'w / sqrt(w' Sigma w) on the capped simplex."""

    def q(w):
        return 0.5 * float(w @ sigma @ w)

    def gq(w):
        return sigma @ w

    return ratio_max(a, q, gq, quad_lipschitz(sigma), lo, hi, w0=w0,
                     golden_iters=golden_iters, q_matrix=sigma)


def sharpe_denominator(sigma: np.ndarray) -> Tuple[Callable, Callable]:
    """b(w) = sqrt(w'Sigma w) and its gradient, floored away from zero."""

    def b(w):
        return float(np.sqrt(max(w @ sigma @ w, 1e-30)))

    def gb(w):
        return (sigma @ w) / b(w)

    return b, gb


def smallest_feasible_blend(w: np.ndarray, anchor: np.ndarray,
                            feasible: Callable[[np.ndarray], bool],
                            iters: int = 100) -> np.ndarray:
    """Smallest t with (1-t) w + t anchor feasible; anchor must be feasible."""
    if feasible(w):
        return w
    if not feasible(anchor):
        raise InfeasibleError("feasibility anchor is itself infeasible")
    t_lo, t_hi = 0.0, 1.0
    for _ in range(iters):
        t = 0.5 * (t_lo + t_hi)
        if feasible((1.0 - t) * w + t * anchor):
            t_hi = t
        else:
            t_lo = t
    return (1.0 - t_hi) * w + t_hi * anchor


def penalty_maximize(obj: Callable[[np.ndarray], float],
                     obj_grad: Callable[[np.ndarray], np.ndarray],
                     cons: Callable[[np.ndarray], float],
                     cons_grad: Callable[[np.ndarray], np.ndarray],
                     w0: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                     l0: float = 1.0,
                     rhos: Tuple[float, ...] = (1e2, 1e4, 1e6),
                     tol: float = 1e-10,
                     max_iter: int = 3000) -> np.ndarray:
    """Maximize obj subject to cons(w) >= 0 by ramped quadratic penalty."""
    w = np.asarray(w0, dtype=float)
    for rho in rhos:
        def f(x, rho=rho):
            v = min(cons(x), 0.0)
            return -obj(x) + rho * v * v

        def g(x, rho=rho):
            v = min(cons(x), 0.0)
            return -obj_grad(x) + 2.0 * rho * v * cons_grad(x)

        w = fista_minimize(f, g, w, lo, hi, l0=l0, tol=tol, max_iter=max_iter).w
    return w
