"""Equilibrium solvers for sampled markets.

Three routes to the dual minimizer are provided and cross-checked:

* "pr": proportional response dynamics on money bids.  Each buyer splits
  its budget over items in proportion to the utility each item currently
  delivers; prices are column sums of bids.  Robust and allocation-aware,
  linear convergence on most instances.
* "subgradient": projected subgradient descent on the dual over the
  multiplier box, with decaying steps, then a smoothed-dual Newton tail.
* "newton": damped Newton on a softmax-smoothed dual with the smoothing
  temperature driven to zero.  The fast route for large markets.

All routes finish with an exact pattern solve: near the optimum the items
whose top bids tie link buyers into a forest, and on the manifold where
those bids are exactly equal the piecewise-linear part of the dual is
linear in exp of one free log-multiplier per tree.  The constrained
minimizer is then closed form, tied supply is split by a small linear
solve, and the result is certified by the duality gap, which comes out
at float precision when the detected pattern is correct.

Quasilinear buyers keep a slack bid (money not spent on goods), which
caps multipliers at 1; the same machinery applies with the cap folded in.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .markets import FiniteMarket

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200_000

# PR iterations between exact-pattern polish attempts.
POLISH_EVERY = 100
# PR iterations before escalating to the smoothed Newton tail.
ESCALATE_AFTER = 4_000
# Subgradient warmup iterations before the Newton tail.
SUBGRADIENT_ITERS = 1_500
# Smoothing temperatures run from SMOOTH_MU_START down to SMOOTH_MU_STOP.
SMOOTH_MU_START = 1e-1
SMOOTH_MU_STOP = 1e-12


@dataclass(frozen=True)
class Certificate:
    """Optimality evidence attached to a solve result."""

    duality_gap: float
    certified: bool
    method: str
    iterations: int
    escalated: bool = False


@dataclass(frozen=True)
class FiniteEquilibrium:
    """Equilibrium of a sampled linear market.

    x holds the allocation as (item, buyer, fraction) triples; fractions
    on one item sum to the item supply 1/t.  p holds per-item prices
    max_i beta_i V[i, tau].
    """

    beta: np.ndarray
    u: np.ndarray
    p: np.ndarray
    x: list[tuple[int, int, float]]
    nsw: float
    certificate: Certificate

    def allocation_matrix(self, n: int, t: int) -> np.ndarray:
        X = np.zeros((n, t))
        for item, buyer, frac in self.x:
            X[buyer, item] = frac
        return X


@dataclass(frozen=True)
class QuasilinearEquilibrium:
    """Equilibrium of a sampled quasilinear market.

    delta is per-buyer leftover money; rev is mean price, the seller
    revenue under unit total supply.
    """

    beta: np.ndarray
    u: np.ndarray
    p: np.ndarray
    x: list[tuple[int, int, float]]
    delta: np.ndarray
    rev: float
    certificate: Certificate

    def allocation_matrix(self, n: int, t: int) -> np.ndarray:
        X = np.zeros((n, t))
        for item, buyer, frac in self.x:
            X[buyer, item] = frac
        return X


# ---------------------------------------------------------------------------
# Dual and primal values on raw arrays
# ---------------------------------------------------------------------------


def _dual(V, b, beta):
    return (beta[:, None] * V).max(axis=0).mean() - (b * np.log(beta)).sum()


def _primal_shifted(b, u):
    # at the optimum this equals the dual minimum (strong duality)
    return (b * np.log(u)).sum() - (b * (np.log(b) - 1.0)).sum()


def _gap_linear(V, b, u):
    return _dual(V, b, b / u) - _primal_shifted(b, u)


def _gap_qlin(V, b, beta, u, delta):
    primal = (b * np.log(u + delta)).sum() - delta.sum() - (b * (np.log(b) - 1.0)).sum()
    return _dual(V, b, beta) - primal


# ---------------------------------------------------------------------------
# Exact pattern polish
# ---------------------------------------------------------------------------


def _candidate_rtols(V, beta, cap=12):
    """Tie thresholds to try, placed in the largest log-gaps of bid margins.

    Margins of truly tied items shrink as beta approaches the optimum
    while strict margins stabilize, so some multiplicative gap in the
    sorted margin sequence separates them; we probe all big gaps.
    """
    bids = beta[:, None] * V
    top = bids.max(axis=0)
    rel = (top[None, :] - bids) / np.where(top > 0, top, 1.0)[None, :]
    rel = rel[:, top > 0]
    vals = np.unique(rel[(rel > 1e-15) & (rel < 0.05)])
    if len(vals) == 0:
        return [1e-9]
    if len(vals) == 1:
        return [float(vals[0]) * 0.5, float(vals[0]) * 2.0]
    logs = np.log(vals)
    order = np.argsort(-np.diff(logs))[:cap]
    cands = [float(np.exp(0.5 * (logs[g] + logs[g + 1]))) for g in order]
    cands.append(float(vals[0]) * 0.5)
    return cands


def _tie_forest(V, winmask, tied_items):
    """Offsets of log-multipliers along the tie forest.

    Returns (comp, off, ok): component id and log offset per buyer.
    Tied item tau with winner set W forces log beta_i - log beta_j =
    log V[j,tau] - log V[i,tau] for i, j in W; edges beyond a spanning
    forest must be consistent with the tree offsets or the pattern is
    rejected.
    """
    n = V.shape[0]
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    edges = []
    for tau in tied_items:
        wins = np.flatnonzero(winmask[:, tau])
        i0 = wins[0]
        for i in wins[1:]:
            if V[i, tau] <= 0 or V[i0, tau] <= 0:
                return None, None, False
            edges.append((int(i), int(i0), float(np.log(V[i0, tau]) - np.log(V[i, tau]))))
    adj = defaultdict(list)
    extra = []
    for i, j, r in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            adj[i].append((j, r))
            adj[j].append((i, -r))
        else:
            extra.append((i, j, r))
    comp = np.full(n, -1)
    off = np.zeros(n)
    ncomp = 0
    for i in range(n):
        if comp[i] >= 0:
            continue
        comp[i] = ncomp
        off[i] = 0.0
        stack = [i]
        while stack:
            a = stack.pop()
            for v, r in adj[a]:
                if comp[v] < 0:
                    comp[v] = ncomp
                    # stored relation is z_a - z_v = r
                    off[v] = off[a] - r
                    stack.append(v)
        ncomp += 1
    for i, j, r in extra:
        if abs((off[i] - off[j]) - r) > 1e-9:
            return None, None, False
    return comp, off, True


def _split_tied_supply(V, winmask, tied_items, targets, s, capped=None):
    """Solve for tied-item fractions so each buyer hits its utility target.

    targets[i] is the utility buyer i still needs from tied items; rows
    of capped buyers (quasilinear, slack absorbs the residual) are
    dropped.  Returns the fraction assignment or None if the linear
    system is inconsistent or leaves the per-item simplex.
    """
    n = V.shape[0]
    cols = []
    for tau in tied_items:
        wins = np.flatnonzero(winmask[:, tau])
        for i in wins[1:]:
            cols.append((int(i), int(tau), int(wins[0])))
    d = targets.copy()
    for tau in tied_items:
        i0 = int(winmask[:, tau].argmax())
        d[i0] -= V[i0, tau] * s
    A = np.zeros((n, len(cols)))
    for k, (i, tau, i0) in enumerate(cols):
        A[i, k] = V[i, tau]
        A[i0, k] = -V[i0, tau]
    keep = np.ones(n, dtype=bool) if capped is None else ~capped
    sol, *_ = np.linalg.lstsq(A[keep], d[keep], rcond=None)
    if sol.size and np.abs(A[keep] @ sol - d[keep]).max() > 1e-9:
        return None
    if np.any(sol < -1e-9) or np.any(sol > s * (1 + 1e-6)):
        return None
    frac = {}
    taken = defaultdict(float)
    for k, (i, tau, i0) in enumerate(cols):
        val = float(np.clip(sol[k], 0.0, s))
        frac[(i, tau)] = val
        taken[tau] += val
    for tau in tied_items:
        i0 = int(winmask[:, tau].argmax())
        rest = s - taken[int(tau)]
        if rest < -1e-9:
            return None
        frac[(i0, int(tau))] = max(rest, 0.0)
    return frac


def _attempt_pattern(V, b, beta, tie_rtol, tol, qlin=False):
    """Try to read off the exact equilibrium from the tie pattern at beta."""
    n, t = V.shape
    s = 1.0 / t
    bids = beta[:, None] * V
    top = bids.max(axis=0)
    live = top > 0
    winmask = (bids >= top[None, :] * (1.0 - tie_rtol)) & live[None, :]
    nwin = winmask.sum(axis=0)
    tied_items = np.flatnonzero((nwin > 1) & live)
    strict_items = np.flatnonzero((nwin == 1) & live)

    comp, off, ok = _tie_forest(V, winmask, tied_items)
    if not ok:
        return None
    ncomp = int(comp.max()) + 1

    winner = np.argmax(np.where(winmask, bids, -np.inf), axis=0)
    wload = np.zeros(n)
    np.add.at(wload, winner[strict_items], V[winner[strict_items], strict_items] * s)

    # on the tie manifold the max-of-bids part is linear in exp(y_c):
    # sum over items won by component c of V_w * exp(off_w) * exp(y_c) / t
    C = np.zeros(ncomp)
    np.add.at(C, comp[winner[strict_items]],
              V[winner[strict_items], strict_items] * np.exp(off[winner[strict_items]]) * s)
    if len(tied_items):
        rep = winmask[:, tied_items].argmax(axis=0)
        np.add.at(C, comp[rep], V[rep, tied_items] * np.exp(off[rep]) * s)
    Bc = np.zeros(ncomp)
    np.add.at(Bc, comp, b)
    if np.any(C <= 0):
        return None

    if qlin:
        # cap: beta_i = exp(off_i + y_c) <= 1 for all i in the component
        ybar = np.full(ncomp, np.inf)
        np.minimum.at(ybar, comp, -off)
        y = np.minimum(np.log(Bc / C), ybar)
        beta_new = np.minimum(np.exp(off + y[comp]), 1.0)
    else:
        beta_new = np.exp(off + np.log(Bc / C)[comp])

    # the pattern must still hold at the refit multipliers
    bids2 = beta_new[:, None] * V
    top2 = bids2.max(axis=0)
    if np.any(bids2[winner[strict_items], strict_items]
              < top2[strict_items] * (1.0 - 1e-12)):
        return None

    capped = (beta_new >= 1.0 - 1e-12) if qlin else None
    targets = b / beta_new - wload
    if len(tied_items):
        frac = _split_tied_supply(V, winmask, tied_items, targets, s, capped)
        if frac is None:
            return None
    else:
        frac = {}

    X = np.zeros((n, t))
    X[winner[strict_items], strict_items] = s
    for (i, tau), val in frac.items():
        X[i, tau] = val
    u = (V * X).sum(axis=1)

    if qlin:
        delta = b - beta_new * u
        if np.any(delta < -1e-10):
            return None
        if np.any(delta[~capped] > 1e-9):
            return None
        delta = np.maximum(delta, 0.0)
        gap = _gap_qlin(V, b, beta_new, u, delta)
        if not gap <= tol:
            return None
        return beta_new, u, X, delta, float(gap)
    if np.any(u <= 0):
        return None
    gap = _gap_linear(V, b, u)
    if not gap <= tol:
        return None
    return beta_new, u, X, None, float(gap)


def _polish(V, b, beta, tol, qlin=False):
    for rtol in _candidate_rtols(V, beta):
        res = _attempt_pattern(V, b, beta, rtol, tol, qlin=qlin)
        if res is not None:
            return res
    return None


# ---------------------------------------------------------------------------
# Smoothed dual (softmax) Newton tail
# ---------------------------------------------------------------------------


def _smoothed(V, b, beta, mu):
    """Value, gradient, Hessian and soft allocation of the smoothed dual."""
    n, t = V.shape
    bids = beta[:, None] * V
    top = bids.max(axis=0)
    E = np.exp((bids - top[None, :]) / mu)
    Z = E.sum(axis=0)
    sig = E / Z
    SV = sig * V
    g = SV.mean(axis=1) - b / beta
    H = -(SV @ SV.T) / (mu * t)
    H[np.arange(n), np.arange(n)] += (SV * V).sum(axis=1) / (mu * t) + b / beta ** 2
    val = (top + mu * np.log(Z)).mean() - (b * np.log(beta)).sum()
    return val, g, H, sig


def _newton_tail(V, b, beta, tol, qlin=False, polish_from=1e-5):
    """Drive the smoothing temperature down, polishing once bids separate."""
    n = len(b)
    upper = np.ones(n) if qlin else None
    mu = SMOOTH_MU_START
    while mu >= SMOOTH_MU_STOP:
        for _ in range(80):
            val, g, H, _ = _smoothed(V, b, beta, mu)
            if qlin:
                # cap at 1: freeze coordinates pressed against the cap
                active = (beta >= 1.0 - 1e-12) & (g < 0)
                free = ~active
                d = np.zeros(n)
                if free.any():
                    try:
                        d[free] = np.linalg.solve(H[np.ix_(free, free)], -g[free])
                    except np.linalg.LinAlgError:
                        d[free] = -g[free]
                # at the cap only an inward-pointing gradient is a violation
                resid = np.where(beta < 1.0 - 1e-12, np.abs(g), np.maximum(g, 0.0))
            else:
                try:
                    d = np.linalg.solve(H, -g)
                except np.linalg.LinAlgError:
                    d = -g
                resid = np.abs(g)
            if resid.max() < max(mu * 1e-3, 1e-13):
                break
            step = 1.0
            while step > 1e-14:
                cand = beta + step * d
                if upper is not None:
                    cand = np.minimum(cand, upper)
                if np.all(cand > 0):
                    v2 = _smoothed(V, b, cand, mu)[0]
                    if v2 <= val + 1e-4 * (g @ (cand - beta)):
                        break
                step *= 0.5
            new = beta + step * d
            if upper is not None:
                new = np.minimum(new, upper)
            if np.array_equal(new, beta):
                break
            beta = new
        if mu <= polish_from:
            res = _polish(V, b, beta, tol, qlin=qlin)
            if res is not None:
                return res, beta
        mu *= 0.1
    return None, beta


# ---------------------------------------------------------------------------
# Proportional response dynamics
# ---------------------------------------------------------------------------


def _run_pr(V, b, tol, max_iter, qlin=False, escalate=True):
    """PR main loop with periodic exact polish and optional Newton escalation."""
    n, t = V.shape
    s = 1.0 / t
    if qlin:
        # one extra virtual item holds the slack (unspent money) bid
        B = np.full((n, t), 1.0) * (b / (t + 1))[:, None]
        slack = b / (t + 1)
    else:
        B = np.full((n, t), 1.0) * (b / t)[:, None]
        slack = None
    u = np.full(n, np.nan)
    escalated = False
    for k in range(1, max_iter + 1):
        m = B.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            X = np.where(m > 0, B / m, 0.0) * s
        w = V * X
        u = w.sum(axis=1)
        if qlin:
            mu_money = u + slack
            B = b[:, None] * w / mu_money[:, None]
            slack = b * slack / mu_money
        else:
            B = b[:, None] * w / u[:, None]
        if k % POLISH_EVERY == 0:
            beta = b / (u + slack) if qlin else b / u
            if qlin:
                beta = np.minimum(beta, 1.0)
            res = _polish(V, b, beta, tol, qlin=qlin)
            if res is not None:
                return res, k, escalated
            if escalate and k >= ESCALATE_AFTER:
                escalated = True
                res, _ = _newton_tail(V, b, beta, tol, qlin=qlin)
                if res is not None:
                    return res, k, escalated
    # best effort without certification
    beta = b / (u + slack) if qlin else b / u
    if qlin:
        beta = np.minimum(beta, 1.0)
        delta = np.maximum(b - beta * u, 0.0)
        gap = _gap_qlin(V, b, beta, u, delta)
        return (beta, u, X, delta, float(gap)), max_iter, escalated
    gap = _gap_linear(V, b, u)
    return (beta, u, X, None, float(gap)), max_iter, escalated


# ---------------------------------------------------------------------------
# Projected subgradient route
# ---------------------------------------------------------------------------


def _run_subgradient(V, b, tol, qlin=False, iters=SUBGRADIENT_ITERS):
    """Decaying-step projected subgradient, then the smoothed Newton tail."""
    n, t = V.shape
    vbar = V.max(axis=1)
    if np.any(vbar <= 0):
        raise ValueError("every buyer needs a positive value somewhere")
    if qlin:
        lo, hi = b / (vbar + b), np.ones(n)
    else:
        lo, hi = b / vbar, np.full(n, b.sum() / vbar.min())
    beta = np.clip(b / V.mean(axis=1), lo, hi)
    best, best_val = beta.copy(), _dual(V, b, beta)
    D = float(np.linalg.norm(hi - lo)) or 1.0
    idx = np.arange(t)
    for k in range(1, iters + 1):
        bids = beta[:, None] * V
        winner = bids.argmax(axis=0)
        g = -b / beta
        np.add.at(g, winner, V[winner, idx] / t)
        norm = np.linalg.norm(g)
        if norm == 0:
            break
        beta = np.clip(beta - (D / np.sqrt(k)) * g / norm, lo, hi)
        val = _dual(V, b, beta)
        if val < best_val:
            best_val, best = val, beta.copy()
    res, beta_out = _newton_tail(V, b, best, tol, qlin=qlin)
    return res, beta_out, iters


# ---------------------------------------------------------------------------
# Public solvers
# ---------------------------------------------------------------------------


def _sparse_allocation(X):
    out = []
    for tau in range(X.shape[1]):
        for i in np.flatnonzero(X[:, tau] > 0):
            out.append((int(tau), int(i), float(X[i, tau])))
    return out


def _check_market(market: FiniteMarket):
    if np.any(market.V.max(axis=1) <= 0):
        raise ValueError("every buyer needs a positive value on some item")


def _best_effort(V, b, beta, qlin):
    """Primal point built from beta when no route certified; used for the
    flagged non-certified return."""
    t = V.shape[1]
    bids = beta[:, None] * V
    top = bids.max(axis=0)
    near = bids >= top[None, :] * (1.0 - 1e-9)
    X = near / near.sum(axis=0)[None, :] / t
    u = (V * X).sum(axis=1)
    if qlin:
        delta = np.maximum(b - beta * u, 0.0)
        gap = _gap_qlin(V, b, beta, u, delta) if np.all(u + delta > 0) else float("inf")
        return beta, u, X, delta, float(gap)
    gap = _gap_linear(V, b, u) if np.all(u > 0) else float("inf")
    return beta, u, X, None, float(gap)


def solve_sample_eg(
    market: FiniteMarket,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    method: str = "pr",
) -> FiniteEquilibrium:
    """Compute the equilibrium of a sampled linear market.

    Parameters
    ----------
    market : FiniteMarket
        Values V (n x t) and budgets; each item has supply 1/t.
    tol : float
        Certification threshold on the duality gap.
    max_iter : int
        Iteration budget for the PR route.
    method : str
        "pr" (default), "subgradient", or "newton".

    Returns
    -------
    FiniteEquilibrium with multipliers beta, utilities u = b/beta, prices
    p[tau] = max_i beta_i V[i, tau], sparse allocation, log Nash welfare,
    and a duality-gap certificate.  If no route certifies the gap below
    tol within the iteration budget, the best iterate is returned with
    certificate.certified = False.
    """
    _check_market(market)
    V, b = market.V, market.budgets
    escalated = False
    if method == "pr":
        res, iters, escalated = _run_pr(V, b, tol, max_iter)
    elif method == "subgradient":
        res, beta_out, iters = _run_subgradient(V, b, tol)
        if res is None:
            res = _best_effort(V, b, beta_out, qlin=False)
    elif method == "newton":
        beta0 = b / V.mean(axis=1).clip(min=1e-300)
        res, beta_out = _newton_tail(V, b, beta0, tol)
        iters = 0
        if res is None:
            res = _best_effort(V, b, beta_out, qlin=False)
    else:
        raise ValueError(f"unknown method {method!r}")
    beta, u, X, _, gap = res
    certified = bool(gap <= tol)
    p = (beta[:, None] * V).max(axis=0)
    with np.errstate(divide="ignore"):
        nsw = float((b * np.log(u)).sum()) if np.all(u > 0) else float("-inf")
    cert = Certificate(duality_gap=gap, certified=certified, method=method,
                       iterations=iters, escalated=escalated)
    return FiniteEquilibrium(beta=beta, u=u, p=p, x=_sparse_allocation(X),
                             nsw=nsw, certificate=cert)


def solve_sample_qeg(
    market: FiniteMarket,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    method: str = "pr",
) -> QuasilinearEquilibrium:
    """Compute the equilibrium of a sampled quasilinear market.

    Buyers may withhold money: multipliers live in (0, 1], leftover
    delta_i = b_i - beta_i u_i satisfies delta_i (1 - beta_i) = 0, and
    seller revenue is the mean price.  Non-certified solves return the
    best iterate with certificate.certified = False, as in solve_sample_eg.
    """
    _check_market(market)
    V, b = market.V, market.budgets
    escalated = False
    if method == "pr":
        res, iters, escalated = _run_pr(V, b, tol, max_iter, qlin=True)
    elif method == "subgradient":
        res, beta_out, iters = _run_subgradient(V, b, tol, qlin=True)
        if res is None:
            res = _best_effort(V, b, beta_out, qlin=True)
    elif method == "newton":
        beta0 = np.minimum(b / V.mean(axis=1).clip(min=1e-300), 1.0)
        res, beta_out = _newton_tail(V, b, beta0, tol, qlin=True)
        iters = 0
        if res is None:
            res = _best_effort(V, b, beta_out, qlin=True)
    else:
        raise ValueError(f"unknown method {method!r}")
    beta, u, X, delta, gap = res
    certified = bool(gap <= tol)
    p = (beta[:, None] * V).max(axis=0)
    cert = Certificate(duality_gap=gap, certified=certified, method=method,
                       iterations=iters, escalated=escalated)
    return QuasilinearEquilibrium(beta=beta, u=u, p=p,
                                  x=_sparse_allocation(X),
                                  delta=delta, rev=float(p.mean()), certificate=cert)


# ---------------------------------------------------------------------------
# Verification and cross-checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KKTReport:
    """Residuals of the equilibrium conditions, all should be ~0.

    clearance:     <p, s - sum_i x_i>, paid-for supply is exhausted
    winner:        max_i <p - beta_i v_i, x_i>, buyers only take items
                   priced at their own bid
    utility:       max_i |u_i - b_i / beta_i|
    feasibility:   largest oversubscription of an item or negative fraction
    budget:        |sum_tau p_tau / t - sum_i b_i|, full budget extraction
    duality_gap:   dual value minus shifted primal value
    comp_slack:    quasilinear only, max_i |delta_i (1 - beta_i)|
    """

    clearance: float
    winner: float
    utility: float
    feasibility: float
    budget: float
    duality_gap: float
    comp_slack: float
    passed: bool
    tol: float


def verify_kkt(market: FiniteMarket, eq, tol: float = 1e-7) -> KKTReport:
    V, b = market.V, market.budgets
    n, t = market.n, market.t
    s = 1.0 / t
    beta, u, p = eq.beta, eq.u, eq.p
    X = eq.allocation_matrix(n, t)
    qlin = isinstance(eq, QuasilinearEquilibrium)

    taken = X.sum(axis=0)
    clearance = float(abs((p * (s - taken)).sum()))
    winner = float(max(((p[None, :] - beta[:, None] * V) * X).sum(axis=1).max(), 0.0))
    feasibility = float(max((taken - s).max(), (-X).max(), 0.0))
    if qlin:
        utility = float(np.abs(u + eq.delta - b / beta).max())
        budget = float(abs(p.mean() + eq.delta.sum() - b.sum()))
        comp_slack = float(np.abs(eq.delta * (1.0 - beta)).max())
        gap = float(_gap_qlin(V, b, beta, u, eq.delta))
    else:
        utility = float(np.abs(u - b / beta).max())
        budget = float(abs(p.mean() - b.sum()))
        comp_slack = 0.0
        gap = float(_gap_linear(V, b, u))
    passed = all(r <= tol for r in
                 (clearance, winner, utility, feasibility, budget, comp_slack)) and gap <= tol
    return KKTReport(clearance=clearance, winner=winner, utility=utility,
                     feasibility=feasibility, budget=budget, duality_gap=gap,
                     comp_slack=comp_slack, passed=passed, tol=tol)


@dataclass(frozen=True)
class CrossCheck:
    beta_pr: np.ndarray
    beta_subgradient: np.ndarray
    max_diff: float
    agreed: bool


def cross_check_solvers(market: FiniteMarket, tol: float = DEFAULT_TOL,
                        qlin: bool = False) -> CrossCheck:
    """Solve by both first-order routes and compare multipliers.

    Raises if either route fails to certify; flags disagreement beyond
    10 * tol, which indicates a bug in one of the routes rather than
    ordinary numerical slack.
    """
    solve = solve_sample_qeg if qlin else solve_sample_eg
    eq_pr = solve(market, tol=tol, method="pr")
    eq_sub = solve(market, tol=tol, method="subgradient")
    for eq, name in ((eq_pr, "pr"), (eq_sub, "subgradient")):
        if not eq.certificate.certified:
            raise RuntimeError(
                f"{name} route did not certify "
                f"(gap {eq.certificate.duality_gap:.3e} > {tol:.1e})")
    diff = float(np.abs(eq_pr.beta - eq_sub.beta).max())
    return CrossCheck(beta_pr=eq_pr.beta, beta_subgradient=eq_sub.beta,
                      max_diff=diff, agreed=diff <= 10 * tol)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def equilibrium_to_dict(eq) -> dict:
    out = {
        "beta": eq.beta.tolist(),
        "u": eq.u.tolist(),
        "p": eq.p.tolist(),
        "x": [[item, buyer, frac] for item, buyer, frac in eq.x],
        "certificate": {
            "duality_gap": eq.certificate.duality_gap,
            "certified": eq.certificate.certified,
            "method": eq.certificate.method,
            "iterations": eq.certificate.iterations,
            "escalated": eq.certificate.escalated,
        },
    }
    if isinstance(eq, QuasilinearEquilibrium):
        out["delta"] = eq.delta.tolist()
        out["rev"] = eq.rev
    else:
        out["nsw"] = eq.nsw
    return out


def save_equilibrium(eq, path: str) -> None:
    import json

    with open(path, "w") as fh:
        json.dump(equilibrium_to_dict(eq), fh, indent=2)
        fh.write("\n")


__all__ = [
    "DEFAULT_TOL",
    "DEFAULT_MAX_ITER",
    "Certificate",
    "FiniteEquilibrium",
    "QuasilinearEquilibrium",
    "solve_sample_eg",
    "solve_sample_qeg",
    "KKTReport",
    "verify_kkt",
    "CrossCheck",
    "cross_check_solvers",
    "equilibrium_to_dict",
    "save_equilibrium",
]
