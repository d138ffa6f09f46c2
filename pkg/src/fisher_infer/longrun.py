"""Exact long-run equilibria for one-dimensional linear-valuation markets.

With item types theta uniform on [0, 1] and buyer values v_i(theta) =
c_i theta + d_i, the price curve max_i beta_i v_i(theta) is the upper
envelope of n lines.  Every quantity of interest (dual objective,
gradient, Hessian, utilities, revenue, variances) is then a polynomial
integral over envelope segments and is computed in closed form here; no
quadrature appears outside the tests.

The dual objective is

    H(beta) = integral of max_i beta_i v_i(theta) - sum_i b_i log beta_i

and the equilibrium multiplier vector is its minimizer (over (0, 1]^n in
the quasilinear variant).  The Hessian at a point with a clean winner
structure picks up, per interior breakpoint, a rank-one term from the
breakpoint shifting as multipliers move; that term plus Diag(b/beta^2)
also feeds the asymptotic covariances of the sampled-market estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .markets import Linear1DValuation, LongRunSpec

WIDTH_EPS = 1e-14


@dataclass(frozen=True)
class Envelope:
    """Upper envelope of lines on [0, 1].

    Segment k is [breakpoints[k], breakpoints[k+1]] where line
    winners[k] is on top, with scaled equation slopes[k] * theta +
    intercepts[k].
    """

    breakpoints: np.ndarray
    winners: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray

    def value_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = np.clip(np.searchsorted(self.breakpoints, theta, side="right") - 1,
                    0, len(self.winners) - 1)
        return self.slopes[k] * theta + self.intercepts[k]


def upper_envelope(slopes, intercepts) -> Envelope:
    """Upper envelope of the lines slope*theta + intercept on [0, 1].

    Identical lines resolve to the lowest index; among parallel lines
    only the highest survives.  Segments narrower than WIDTH_EPS are
    pruned.
    """
    m = np.asarray(slopes, dtype=float)
    q = np.asarray(intercepts, dtype=float)
    if m.ndim != 1 or m.shape != q.shape or len(m) == 0:
        raise ValueError("need matching nonempty slope/intercept vectors")
    n = len(m)
    # slope ascending, then intercept descending, then index: the first
    # line of each slope group dominates the rest of the group
    order = np.lexsort((np.arange(n), -q, m))
    kept = []
    for idx in order:
        if kept and m[idx] == m[kept[-1]]:
            continue
        kept.append(int(idx))

    stack = []  # rows [idx, slope, intercept, start]
    for idx in kept:
        start = -np.inf
        while stack:
            _, mA, qA, sA = stack[-1]
            start = (qA - q[idx]) / (m[idx] - mA)
            if start <= sA:
                stack.pop()
                start = -np.inf
            else:
                break
        stack.append([idx, m[idx], q[idx], start])

    bps = [0.0]
    winners, ms, qs = [], [], []
    for j, (idx, mj, qj, sj) in enumerate(stack):
        lo = max(sj, 0.0)
        hi = min(stack[j + 1][3], 1.0) if j + 1 < len(stack) else 1.0
        if hi - lo < WIDTH_EPS:
            continue
        winners.append(idx)
        ms.append(mj)
        qs.append(qj)
        bps.append(hi)
    bps[-1] = 1.0
    return Envelope(breakpoints=np.array(bps), winners=np.array(winners, dtype=int),
                    slopes=np.array(ms), intercepts=np.array(qs))


def _int_lin(c, d, lo, hi):
    # integral of c*theta + d
    return 0.5 * c * (hi * hi - lo * lo) + d * (hi - lo)


def _int_quad(c, d, lo, hi):
    # integral of (c*theta + d)^2
    return (c * c * (hi ** 3 - lo ** 3) / 3.0
            + c * d * (hi * hi - lo * lo) + d * d * (hi - lo))


def _require_linear1d(spec: LongRunSpec) -> Linear1DValuation:
    if not isinstance(spec.valuation, Linear1DValuation):
        raise TypeError("closed-form long-run computations need 1-D linear values")
    return spec.valuation


def _scaled_envelope(spec: LongRunSpec, beta: np.ndarray) -> Envelope:
    val = _require_linear1d(spec)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.n,) or np.any(beta <= 0):
        raise ValueError("beta must be positive, one entry per buyer")
    return upper_envelope(beta * val.c, beta * val.d)


# ---------------------------------------------------------------------------
# Dual objective
# ---------------------------------------------------------------------------


def dual_value_pop(spec: LongRunSpec, beta) -> float:
    """Population dual H(beta), exact by segment integration."""
    env = _scaled_envelope(spec, beta)
    lo, hi = env.breakpoints[:-1], env.breakpoints[1:]
    integral = _int_lin(env.slopes, env.intercepts, lo, hi).sum()
    return float(integral - (spec.budgets * np.log(beta)).sum())


def dual_grad_pop(spec: LongRunSpec, beta, return_tied: bool = False):
    """Gradient of H: winning-value integral minus b_i/beta_i per buyer.

    Where two scaled lines coincide (a positive-length tie) the envelope
    keeps the lowest index, making this the matching subgradient; pass
    return_tied=True to also learn whether that happened.
    """
    val = _require_linear1d(spec)
    beta = np.asarray(beta, dtype=float)
    env = _scaled_envelope(spec, beta)
    g = -spec.budgets / beta
    for k, w in enumerate(env.winners):
        g[w] += _int_lin(val.c[w], val.d[w], env.breakpoints[k], env.breakpoints[k + 1])
    if return_tied:
        scaled = np.stack([beta * val.c, beta * val.d], axis=1)
        srt = scaled[np.lexsort((scaled[:, 1], scaled[:, 0]))]
        tied = bool(np.any(np.all(srt[1:] == srt[:-1], axis=1)))
        return g, tied
    return g


# ---------------------------------------------------------------------------
# Hessian at a clean winner structure
# ---------------------------------------------------------------------------


def hessian_longrun_linear(spec: LongRunSpec, beta) -> np.ndarray:
    """Hessian of H at beta when the winner structure is nondegenerate.

    Each interior breakpoint a between adjacent winners w (left) and w'
    (right) contributes the rank-one block

        [[-v_w(a)^2,        v_w(a) v_{w'}(a)],
         [ v_w(a) v_{w'}(a), -v_{w'}(a)^2   ]] / D,

    D = beta_w c_w - beta_{w'} c_{w'} < 0, from differentiating the
    winning-set boundary; Diag(b_i / beta_i^2) is added on top.

    Raises ValueError when three lines meet at an interior breakpoint or
    a winner change sits exactly on an endpoint of [0, 1]: the Hessian
    does not exist there.
    """
    val = _require_linear1d(spec)
    beta = np.asarray(beta, dtype=float)
    env = _scaled_envelope(spec, beta)
    n = spec.n
    ms, qs = beta * val.c, beta * val.d

    def bids_at(theta):
        return ms * theta + qs

    scale = max(float(np.abs(qs).max()), float(np.abs(ms + qs).max()), 1.0)
    for theta in (0.0, 1.0):
        bids = bids_at(theta)
        if (bids >= bids.max() - 1e-12 * scale).sum() > 1:
            raise ValueError("winner change at a domain endpoint, Hessian undefined")

    H = np.diag(spec.budgets / beta ** 2)
    for k in range(1, len(env.breakpoints) - 1):
        a = env.breakpoints[k]
        w, wp = int(env.winners[k - 1]), int(env.winners[k])
        if w == wp:
            continue
        bids = bids_at(a)
        if (bids >= bids.max() - 1e-9 * scale).sum() > 2:
            raise ValueError("three-way tie at an interior breakpoint, Hessian undefined")
        D = ms[w] - ms[wp]
        if not D < 0:
            raise ValueError("breakpoint with non-increasing slope order")
        vw = val.c[w] * a + val.d[w]
        vwp = val.c[wp] * a + val.d[wp]
        H[w, w] += -vw * vw / D
        H[wp, wp] += -vwp * vwp / D
        H[w, wp] += vw * vwp / D
        H[wp, w] += vw * vwp / D
    return H


# ---------------------------------------------------------------------------
# Equilibrium solvers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LongRunEquilibrium:
    """Exact equilibrium of a long-run 1-D linear market.

    Price curve data: on [breakpoints[k], breakpoints[k+1]] the price is
    price_slopes[k] * theta + price_intercepts[k], paid to line
    winners[k].  delta and rev are filled by the quasilinear solver
    (delta is None for the linear market, where rev equals the total
    budget).
    """

    spec: LongRunSpec
    beta_star: np.ndarray
    breakpoints: np.ndarray
    winners: np.ndarray
    price_slopes: np.ndarray
    price_intercepts: np.ndarray
    u_star: np.ndarray
    nsw_star: float
    rev: float
    grad_norm: float
    delta: np.ndarray | None = None

    def price_at(self, theta):
        env = Envelope(self.breakpoints, self.winners,
                       self.price_slopes, self.price_intercepts)
        return env.value_at(theta)

    def price_segments(self) -> list[tuple[float, float, float]]:
        """(start, slope, intercept) per segment, starts increasing."""
        return [(float(self.breakpoints[k]), float(self.price_slopes[k]),
                 float(self.price_intercepts[k])) for k in range(len(self.winners))]


def _utilities_from_envelope(spec, env):
    val = spec.valuation
    u = np.zeros(spec.n)
    for k, w in enumerate(env.winners):
        u[w] += _int_lin(val.c[w], val.d[w], env.breakpoints[k], env.breakpoints[k + 1])
    return u


def _check_normalized(spec, budgets=True):
    means = spec.valuation.means()
    if np.abs(means - 1.0).max() > 1e-9:
        raise ValueError("values must be normalized to unit mean (see normalize_spec)")
    if budgets and abs(spec.budgets.sum() - 1.0) > 1e-9:
        raise ValueError("budgets must sum to 1 (see normalize_spec)")


def _descent_step(spec, beta, g, box_cap, frozen=None):
    """One damped step: Newton direction when the Hessian exists, else
    steepest descent, with backtracking on the dual value.

    Coordinates marked frozen (optimal at the cap) are held fixed, so the
    Newton system is solved on the free block only; otherwise the cross
    terms would drag capped coordinates off the boundary.
    """
    try:
        H = hessian_longrun_linear(spec, beta)
        if frozen is not None and frozen.any():
            free = ~frozen
            d = np.zeros_like(beta)
            d[free] = np.linalg.solve(H[np.ix_(free, free)], -g[free])
        else:
            d = np.linalg.solve(H, -g)
    except (ValueError, np.linalg.LinAlgError):
        d = -g
    val = dual_value_pop(spec, beta)
    step = 1.0
    while step > 1e-16:
        cand = beta + step * d
        if box_cap is not None:
            cand = np.minimum(cand, box_cap)
        if np.all(cand > 0):
            if dual_value_pop(spec, cand) <= val + 1e-4 * (g @ (cand - beta)):
                return cand
        step *= 0.5
    return beta


def solve_longrun_eg(spec: LongRunSpec, tol: float = 1e-10,
                     max_iter: int = 500,
                     beta0: np.ndarray | None = None) -> LongRunEquilibrium:
    """Equilibrium of the long-run linear market, certified by gradient norm.

    Requires a normalized spec (unit-mean values, unit total budget)
    with strictly decreasing value intercepts, so that at the optimum
    buyer i wins exactly the i-th envelope segment.  beta0 overrides the
    default warm start b_i / mean(v_i).
    """
    val = _require_linear1d(spec)
    _check_normalized(spec, budgets=True)
    if not np.all(np.diff(val.d) < 0):
        raise ValueError("value intercepts must be strictly decreasing")
    b = spec.budgets
    beta = b / val.means() if beta0 is None else np.asarray(beta0, dtype=float).copy()
    if beta.shape != (spec.n,) or np.any(beta <= 0):
        raise ValueError("beta0 must be a positive vector of length n")
    g = dual_grad_pop(spec, beta)
    for _ in range(max_iter):
        if np.abs(g).max() <= tol:
            break
        new = _descent_step(spec, beta, g, None)
        if np.array_equal(new, beta):
            break
        beta = new
        g = dual_grad_pop(spec, beta)
    grad_norm = float(np.abs(g).max())
    if grad_norm > tol:
        raise RuntimeError(f"no certificate: gradient norm {grad_norm:.3e} > {tol:.1e}")

    env = _scaled_envelope(spec, beta)
    if not np.array_equal(env.winners, np.arange(spec.n)):
        raise RuntimeError("equilibrium winner structure is not the ordered partition")
    u = _utilities_from_envelope(spec, env)
    lo, hi = env.breakpoints[:-1], env.breakpoints[1:]
    rev = float(_int_lin(env.slopes, env.intercepts, lo, hi).sum())
    return LongRunEquilibrium(
        spec=spec, beta_star=beta, breakpoints=env.breakpoints, winners=env.winners,
        price_slopes=env.slopes, price_intercepts=env.intercepts, u_star=u,
        nsw_star=float((b * np.log(u)).sum()), rev=rev, grad_norm=grad_norm)


def solve_longrun_qeg(spec: LongRunSpec, tol: float = 1e-10,
                      max_iter: int = 500,
                      beta0: np.ndarray | None = None) -> LongRunEquilibrium:
    """Equilibrium of the long-run quasilinear market.

    Minimizes the same dual over (0, 1]^n; buyers pinned at the cap
    beta_i = 1 keep leftover money delta_i = b_i - beta_i u_i, and the
    seller collects rev = integral of the price curve.
    """
    val = _require_linear1d(spec)
    _check_normalized(spec, budgets=False)
    b = spec.budgets
    cap = np.ones(spec.n)
    if beta0 is None:
        beta = np.minimum(b / val.means(), cap)
    else:
        beta = np.minimum(np.asarray(beta0, dtype=float), cap)
        if beta.shape != (spec.n,) or np.any(beta <= 0):
            raise ValueError("beta0 must be a positive vector of length n")
    for _ in range(max_iter):
        g = dual_grad_pop(spec, beta)
        at_cap = beta >= 1.0 - 1e-12
        resid = np.where(at_cap, np.maximum(g, 0.0), np.abs(g))
        if resid.max() <= tol:
            break
        frozen = at_cap & (g < 0)
        g_eff = np.where(frozen, 0.0, g)
        new = _descent_step(spec, beta, g_eff, cap, frozen=frozen)
        if np.array_equal(new, beta):
            break
        beta = new
    g = dual_grad_pop(spec, beta)
    at_cap = beta >= 1.0 - 1e-12
    grad_norm = float(np.where(at_cap, np.maximum(g, 0.0), np.abs(g)).max())
    if grad_norm > tol:
        raise RuntimeError(f"no certificate: projected gradient {grad_norm:.3e} > {tol:.1e}")

    env = _scaled_envelope(spec, beta)
    u = _utilities_from_envelope(spec, env)
    lo, hi = env.breakpoints[:-1], env.breakpoints[1:]
    rev = float(_int_lin(env.slopes, env.intercepts, lo, hi).sum())
    delta = np.maximum(b - beta * u, 0.0)
    nsw = float((b * np.log(u)).sum()) if np.all(u > 0) else float("nan")
    return LongRunEquilibrium(
        spec=spec, beta_star=beta, breakpoints=env.breakpoints, winners=env.winners,
        price_slopes=env.slopes, price_intercepts=env.intercepts, u_star=u,
        nsw_star=nsw, rev=rev, grad_norm=grad_norm, delta=delta)


# ---------------------------------------------------------------------------
# Asymptotic quantities
# ---------------------------------------------------------------------------


def sigma2_nsw(eq: LongRunEquilibrium) -> float:
    """Variance of the equilibrium price of a random item.

    Drives the welfare CLT: sqrt(t) times the sampled-market NSW error
    is asymptotically N(0, sigma2_nsw).
    """
    lo, hi = eq.breakpoints[:-1], eq.breakpoints[1:]
    second = _int_quad(eq.price_slopes, eq.price_intercepts, lo, hi).sum()
    first = _int_lin(eq.price_slopes, eq.price_intercepts, lo, hi).sum()
    return float(max(second - first * first, 0.0))


def omega2(eq: LongRunEquilibrium, i: int) -> float:
    """Variance of buyer i's winning value v_i(theta) 1{i wins theta}."""
    val = eq.spec.valuation
    if not 0 <= i < eq.spec.n:
        raise IndexError(f"buyer index {i} out of range")
    first = 0.0
    second = 0.0
    for k, w in enumerate(eq.winners):
        if w != i:
            continue
        lo, hi = eq.breakpoints[k], eq.breakpoints[k + 1]
        first += _int_lin(val.c[i], val.d[i], lo, hi)
        second += _int_quad(val.c[i], val.d[i], lo, hi)
    return float(max(second - first * first, 0.0))


def sigma_beta_u(hessian: np.ndarray, omega2_vec: np.ndarray, beta_star: np.ndarray,
                 budgets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Asymptotic covariances of the sampled multipliers and utilities.

    Sigma_beta = H^-1 Diag(Omega^2) H^-1 and Sigma_u = D Sigma_beta D
    with D = Diag(-b_i / beta_i^2), the Jacobian of u = b/beta.

    The middle matrix keeps only the per-buyer score variances Omega_i^2;
    cross-buyer score covariances (the winner indicators are mutually
    exclusive, hence negatively correlated) are not part of this formula.
    Per-coordinate marginals are exact when H is diagonal.
    """
    Hinv = np.linalg.inv(hessian)
    sigma_beta = Hinv @ np.diag(np.asarray(omega2_vec, dtype=float)) @ Hinv
    D = np.diag(-np.asarray(budgets, dtype=float) / np.asarray(beta_star, dtype=float) ** 2)
    sigma_u = D @ sigma_beta @ D
    return sigma_beta, sigma_u


@dataclass(frozen=True)
class AsymptoticPack:
    """Everything the CLTs need at one long-run equilibrium."""

    sigma2_nsw: float
    omega2: np.ndarray
    hessian: np.ndarray
    sigma_beta: np.ndarray
    sigma_u: np.ndarray


def asymptotic_pack(eq: LongRunEquilibrium) -> AsymptoticPack:
    om = np.array([omega2(eq, i) for i in range(eq.spec.n)])
    H = hessian_longrun_linear(eq.spec, eq.beta_star)
    sb, su = sigma_beta_u(H, om, eq.beta_star, eq.spec.budgets)
    return AsymptoticPack(sigma2_nsw=sigma2_nsw(eq), omega2=om, hessian=H,
                          sigma_beta=sb, sigma_u=su)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def longrun_to_dict(eq: LongRunEquilibrium) -> dict:
    from .markets import spec_to_dict

    out = {
        "spec": spec_to_dict(eq.spec),
        "beta_star": eq.beta_star.tolist(),
        "breakpoints": eq.breakpoints.tolist(),
        "winners": eq.winners.tolist(),
        "price": [[start, slope, intercept]
                  for start, slope, intercept in eq.price_segments()],
        "u_star": eq.u_star.tolist(),
        "nsw_star": eq.nsw_star,
        "rev": eq.rev,
        "grad_norm": eq.grad_norm,
    }
    if eq.delta is not None:
        out["delta"] = eq.delta.tolist()
    return out


def pack_to_dict(pack: AsymptoticPack) -> dict:
    return {
        "sigma2_nsw": pack.sigma2_nsw,
        "omega2": pack.omega2.tolist(),
        "hessian": pack.hessian.tolist(),
        "sigma_beta": pack.sigma_beta.tolist(),
        "sigma_u": pack.sigma_u.tolist(),
    }


__all__ = [
    "Envelope",
    "upper_envelope",
    "dual_value_pop",
    "dual_grad_pop",
    "hessian_longrun_linear",
    "LongRunEquilibrium",
    "solve_longrun_eg",
    "solve_longrun_qeg",
    "sigma2_nsw",
    "omega2",
    "sigma_beta_u",
    "AsymptoticPack",
    "asymptotic_pack",
    "longrun_to_dict",
    "pack_to_dict",
]
