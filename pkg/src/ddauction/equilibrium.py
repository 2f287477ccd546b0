"""Equilibrium computation for the second- and first-price auctions.

Rational bidders best-respond to the true model; data-driven bidders
best-respond to the value-conditional bid distributions generated by the
strategy profile itself.  The second-price fixed point is solved by damped
iteration of the belief / best-response map.  For the first-price auction
only the pure populations are solved: the all-rational equilibrium has a
closed form, and the all-misspecified one is a fixed point of the same
kind; the mixed first-price equilibrium is a two-ODE system with a
singular boundary point and is deliberately not attempted.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .beliefs import (BeliefPair, BidFunction, beliefs_fpa, beliefs_spa,
                      belief_derivatives, isotonic_projection, strictify)
from .density import TypeDensity

logger = logging.getLogger(__name__)

TOL_DEFAULT = 1e-6
MAX_ITER_DEFAULT = 500
DAMPING_DEFAULT = 0.5
POOLING_LIMIT = 0.01

__all__ = [
    "EquilibriumProfile", "Convergence", "MixedFpaUnsupportedError",
    "m_best_response_spa", "m_best_response_fpa", "solve_spa",
    "solve_fpa_pure", "fpa_rational_closed_form", "foc_residual",
]


class MixedFpaUnsupportedError(NotImplementedError):
    """The mixed-population first-price equilibrium is out of scope."""


class ExcessivePoolingError(RuntimeError):
    """Raised when monotonization has to pool more than 1% of the nodes."""


@dataclass(frozen=True)
class Convergence:
    """Fixed-point iteration report attached to every profile."""

    iterations: int
    final_change: float
    converged: bool
    pooled_fraction_max: float = 0.0
    polish_failures_max: int = 0
    bm_range: tuple[float, float] = (0.0, 1.0)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_change": self.final_change,
            "converged": self.converged,
            "pooled_fraction_max": self.pooled_fraction_max,
            "polish_failures_max": self.polish_failures_max,
            "bm_range": list(self.bm_range),
        }


@dataclass(frozen=True)
class EquilibriumProfile:
    """Strategy profile (rational and data-driven bids) plus its beliefs."""

    format: str
    alpha: float
    lam: float
    br: BidFunction
    bm: BidFunction
    beliefs: BeliefPair
    convergence: Convergence

    def metadata(self) -> dict:
        return {
            "format": self.format,
            "alpha": self.alpha,
            "lambda": self.lam,
            "grid_n": int(self.br.grid.size),
            "convergence": self.convergence.as_dict(),
        }

    def to_csv(self, path, header_comment: str | None = None) -> None:
        """Write (theta, br, bm) columns; bids at 9 significant digits."""
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["theta", "br", "bm"])
            for t, r, m in zip(self.br.grid, self.br.values, self.bm.values):
                writer.writerow([f"{t:.9g}", f"{r:.9g}", f"{m:.9g}"])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)


# ----------------------------------------------------------------------
# data-driven best responses
# ----------------------------------------------------------------------

def _spa_objective(pair: BeliefPair) -> tuple[np.ndarray, np.ndarray]:
    """Type-independent pieces of the second-price perceived payoff.

    The payoff of bidding ``b`` with type ``t`` is
    ``t*(H1(b) - int_0^b x dH1) - (1-t)*int_0^b x dH0``; the two cumulative
    payment terms are returned on the bid grid.
    """
    b = pair.bids
    pay1 = _cumtrapz(b * pair.h1p, b)
    pay0 = _cumtrapz(b * pair.h0p, b)
    return pair.h1 - pay1, pay0


def _spa_foc(pair: BeliefPair, theta: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (theta * (1.0 - b) * pair.h1p_at(b)
            - (1.0 - theta) * b * pair.h0p_at(b))


def _fpa_foc(pair: BeliefPair, theta: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (theta * ((1.0 - b) * pair.h1p_at(b) - pair.h1_at(b))
            - (1.0 - theta) * (pair.h0_at(b) + b * pair.h0p_at(b)))


def _cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * np.diff(x) * (y[:-1] + y[1:]))
    return out


def _best_response(pair: BeliefPair, fmt: str) -> tuple[np.ndarray, int, int]:
    """Per-type global maximizer of the perceived payoff, monotonized.

    Grid search picks the global maximizer; a bracketed bisection on the
    first-order condition then polishes interior maximizers to solver
    precision.  Returns (bids, pooled node count, polish failures).
    """
    pair._require_derivatives()
    grid = pair.bids
    n = grid.size
    theta = grid
    if fmt == "spa":
        gain, pay0 = _spa_objective(pair)
        obj = np.outer(theta, gain) - np.outer(1.0 - theta, pay0)
        foc = _spa_foc
    else:
        obj = (np.outer(theta, (1.0 - grid) * pair.h1) -
               np.outer(1.0 - theta, grid * pair.h0))
        foc = _fpa_foc
    k = np.argmax(obj, axis=1)
    bids = grid[k].astype(float)

    interior = (k > 0) & (k < n - 1)
    idx = np.nonzero(interior)[0]
    failures = 0
    if idx.size:
        polished, ok = _polish_roots(pair, foc, theta[idx], k[idx], grid)
        bids[idx[ok]] = polished[ok]
        failures = int(np.sum(~ok))

    mono, pooled = isotonic_projection(bids)
    if pooled > POOLING_LIMIT * n:
        raise ExcessivePoolingError(
            f"monotonization pooled {pooled}/{n} best-response nodes")
    if pooled:
        logger.info("best response: pooled %d of %d nodes", pooled, n)
    return strictify(mono), pooled, failures


def _polish_roots(pair, foc, theta, k, grid):
    """Bisect the first-order condition inside a widening node bracket."""
    n = grid.size
    lo = np.empty(theta.size)
    hi = np.empty(theta.size)
    ok = np.zeros(theta.size, dtype=bool)
    for width in (1, 2, 3, 5):
        lo_c = grid[np.maximum(k - width, 0)]
        hi_c = grid[np.minimum(k + width, n - 1)]
        f_lo = foc(pair, theta, lo_c)
        f_hi = foc(pair, theta, hi_c)
        bracket = ~ok & (f_lo * f_hi <= 0.0)
        lo[bracket] = lo_c[bracket]
        hi[bracket] = hi_c[bracket]
        ok |= bracket
        if ok.all():
            break
    roots = np.where(ok, 0.5 * (lo + hi), grid[k])
    if ok.any():
        a = lo[ok].copy()
        b = hi[ok].copy()
        th = theta[ok]
        fa = foc(pair, th, a)
        for _ in range(80):
            mid = 0.5 * (a + b)
            fm = foc(pair, th, mid)
            left = fa * fm <= 0.0
            b = np.where(left, mid, b)
            a = np.where(left, a, mid)
            fa = np.where(left, fa, fm)
        roots[ok] = 0.5 * (a + b)
    return roots, ok


def m_best_response_spa(pair: BeliefPair) -> BidFunction:
    """Data-driven best response in the second-price auction."""
    vals, _, _ = _best_response(pair, "spa")
    return BidFunction(pair.bids, vals)


def m_best_response_fpa(pair: BeliefPair) -> BidFunction:
    """Data-driven best response in the first-price auction."""
    vals, _, _ = _best_response(pair, "fpa")
    return BidFunction(pair.bids, vals)


# ----------------------------------------------------------------------
# fixed-point solvers
# ----------------------------------------------------------------------

def _fixed_point(density: TypeDensity, lam: float, fmt: str,
                 start: np.ndarray, tol: float, max_iter: int,
                 damping: float):
    grid = density.grid
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    bm_vals = start.astype(float)
    pooled_max = 0.0
    failures_max = 0
    change = np.inf
    prev_change = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        bm = BidFunction(grid, bm_vals)
        if fmt == "spa":
            pair = belief_derivatives(beliefs_spa(density, bm, lam))
        else:
            pair = belief_derivatives(beliefs_fpa(density, bm, bm, lam))
        target, pooled, failures = _best_response(pair, fmt)
        pooled_max = max(pooled_max, pooled / grid.size)
        failures_max = max(failures_max, failures)
        change = float(np.max(np.abs(target - bm_vals)))
        if change > prev_change:
            logger.info("oscillation watch: change grew from %.3e to %.3e",
                        prev_change, change)
        prev_change = change
        bm_vals = strictify(damping * target + (1.0 - damping) * bm_vals)
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("fixed point not converged after %d iterations "
                       "(last change %.3e)", iterations, change)
    bm = BidFunction(grid, bm_vals)
    conv = Convergence(iterations=iterations, final_change=change,
                       converged=converged, pooled_fraction_max=pooled_max,
                       polish_failures_max=failures_max,
                       bm_range=bm.bid_range)
    return bm, conv


def solve_spa(density: TypeDensity, lam: float, tol: float = TOL_DEFAULT,
              max_iter: int = MAX_ITER_DEFAULT,
              damping: float = DAMPING_DEFAULT,
              start: BidFunction | None = None) -> EquilibriumProfile:
    """Solve the second-price equilibrium with rational share ``lam``.

    Rational bidders bid their type (dominant strategy); the data-driven
    schedule is the fixed point of beliefs followed by best response,
    reached by damped iteration from the identity (or ``start``).
    Non-convergence is reported through the profile, not raised.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    grid = density.grid
    start_vals = grid if start is None else np.asarray(start.values)
    bm, conv = _fixed_point(density, lam, "spa", start_vals, tol, max_iter,
                            damping)
    pair = belief_derivatives(beliefs_spa(density, bm, lam))
    return EquilibriumProfile(format="spa", alpha=density.alpha, lam=lam,
                              br=BidFunction.identity(grid), bm=bm,
                              beliefs=pair, convergence=conv)


def fpa_rational_closed_form(density: TypeDensity) -> BidFunction:
    """Symmetric rational first-price bid when everyone is rational.

    Integrates ``b(t) = int_0^t x e^{-int_x^t g} g(x) dx`` with
    ``g(y) = f(y|y) / F(y|y)``.  Since ``g`` has a 1/y singularity at the
    origin, the exponent is split as ``log(x/t)`` plus the integral of the
    bounded remainder ``g(y) - 1/y``, which keeps every exponential
    argument nonpositive regardless of the correlation strength.
    """
    grid = density.grid
    n = grid.size
    fyy = np.diagonal(density.cond_pdf_table()).copy()
    Fyy = np.diagonal(density.cond_cdf).copy()
    g = np.zeros(n)
    g[1:] = fyy[1:] / Fyy[1:]
    rem = np.zeros(n)
    rem[1:] = g[1:] - 1.0 / grid[1:]
    rem[0] = 2.0 * rem[1] - rem[2]  # linear extrapolation to the origin
    hhat = _cumtrapz(rem, grid)

    # G(x) = log(x) + hhat(x) is the antiderivative of g; exponents are
    # differences G(x) - G(t) <= 0 for x <= t, so no overflow can occur.
    G = np.full(n, -np.inf)
    G[1:] = np.log(grid[1:]) + hhat[1:]
    xg = grid * g  # x * g(x); the x=0 entry is irrelevant (integrand -> 0)

    expo = G[None, :] - G[:, None]
    np.clip(expo, None, 0.0, out=expo)  # j > k entries are never summed
    integrand = xg[None, :] * np.exp(expo)
    integrand[:, 0] = 0.0

    # trapezoid over x in [0, t_k]: cumulative row sums up to the diagonal
    h = density.step
    cs = np.cumsum(integrand, axis=1)
    diag = np.arange(n)
    b = h * (cs[diag, diag] - 0.5 * integrand[diag, diag])
    b[0] = 0.0
    return BidFunction(grid, strictify(b))


def solve_fpa_pure(density: TypeDensity, population: str,
                   tol: float = TOL_DEFAULT, max_iter: int = MAX_ITER_DEFAULT,
                   damping: float = DAMPING_DEFAULT) -> EquilibriumProfile:
    """First-price equilibrium for a single-sophistication population.

    ``population`` is ``"all-rational"`` (closed form) or
    ``"all-misspecified"`` (fixed point started from the rational closed
    form, which also regularizes the singular behaviour at the zero type).
    """
    grid = density.grid
    rational = fpa_rational_closed_form(density)
    if population == "all-rational":
        pair = belief_derivatives(beliefs_fpa(density, rational, rational, 1.0))
        conv = Convergence(iterations=0, final_change=0.0, converged=True,
                           bm_range=rational.bid_range)
        return EquilibriumProfile(format="fpa", alpha=density.alpha, lam=1.0,
                                  br=rational, bm=rational, beliefs=pair,
                                  convergence=conv)
    if population == "all-misspecified":
        bm, conv = _fixed_point(density, 0.0, "fpa", rational.values.copy(),
                                tol, max_iter, damping)
        pair = belief_derivatives(beliefs_fpa(density, bm, bm, 0.0))
        return EquilibriumProfile(format="fpa", alpha=density.alpha, lam=0.0,
                                  br=bm, bm=bm, beliefs=pair, convergence=conv)
    raise MixedFpaUnsupportedError(
        "population must be 'all-rational' or 'all-misspecified'; the "
        "mixed-share first-price equilibrium is a singular two-ODE system "
        "and is not computed")


def foc_residual(profile: EquilibriumProfile) -> np.ndarray:
    """First-order-condition residual of the data-driven type.

    Evaluated at ``(theta, bm(theta))`` on the interior grid nodes with the
    format-appropriate perceived payoff; near zero everywhere for a
    converged profile.
    """
    pair = profile.beliefs
    pair._require_derivatives()
    theta = profile.bm.grid[1:-1]
    b = profile.bm.values[1:-1]
    if profile.format == "spa":
        return _spa_foc(pair, theta, b)
    return _fpa_foc(pair, theta, b)
