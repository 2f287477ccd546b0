"""Bid functions and the value-conditional bid distributions they induce.

A data-driven bidder cannot condition on opponents' past types, only on her
own realized value, so her belief about the opponent's bid is the pair of
conditional CDFs ``H(b | v=1)`` and ``H(b | v=0)`` generated by the
population strategy profile.  This module builds those pairs for both
auction formats, together with their analytic derivatives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .density import TypeDensity

MONOTONE_FLOOR = 1e-9

__all__ = [
    "BidFunction", "BeliefPair", "beliefs_spa", "beliefs_fpa",
    "belief_derivatives", "isotonic_projection", "MONOTONE_FLOOR",
]


class NonMonotoneBidError(ValueError):
    """Raised when a strategy that must be strictly increasing is not."""


class MissingDerivativesError(ValueError):
    """Raised when belief derivative tables are required but absent."""


class BidFunction:
    """Strictly increasing bid schedule on the shared type grid.

    Evaluation and inversion use monotone piecewise-linear interpolation;
    bids outside the function's range invert to the clamped endpoints 0/1.
    """

    __slots__ = ("grid", "values", "is_identity", "_node_slopes")

    def __init__(self, grid: np.ndarray, values: np.ndarray,
                 validate: bool = True):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.shape != values.shape or grid.ndim != 1:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if validate and np.any(np.diff(values) < MONOTONE_FLOOR):
            raise NonMonotoneBidError(
                "bid values must increase by at least "
                f"{MONOTONE_FLOOR} per grid step")
        self.grid = grid
        self.values = values
        self.is_identity = bool(np.array_equal(grid, values))
        # Central-difference slopes interpolated between nodes keep the
        # inverse slope continuous; segment slopes would feed step noise
        # into the belief derivatives and destabilize the solver.
        self._node_slopes = np.gradient(values, grid)

    @classmethod
    def identity(cls, grid: np.ndarray) -> "BidFunction":
        g = np.asarray(grid, dtype=float)
        return cls(g, g.copy())

    def __call__(self, theta):
        if self.is_identity:
            return theta
        return np.interp(theta, self.grid, self.values)

    def inverse(self, b):
        """Type bidding ``b``; bids below/above the range map to 0/1."""
        if self.is_identity:
            return np.clip(b, 0.0, 1.0)
        return np.interp(b, self.values, self.grid)

    def inverse_slope(self, b):
        """Slope of the inverse at ``b`` (0 outside the bid range)."""
        b = np.asarray(b, dtype=float)
        if self.is_identity:
            return np.where((b < 0.0) | (b > 1.0), 0.0, 1.0)
        slope = np.interp(self.inverse(b), self.grid, self._node_slopes)
        out = 1.0 / np.maximum(slope, MONOTONE_FLOOR)
        return np.where((b < self.values[0]) | (b > self.values[-1]), 0.0, out)

    @property
    def bid_range(self) -> tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])

    def __repr__(self) -> str:  # pragma: no cover
        lo, hi = self.bid_range
        tag = "identity" if self.is_identity else f"range [{lo:.4g}, {hi:.4g}]"
        return f"BidFunction(n={self.grid.size}, {tag})"


def isotonic_projection(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Pool-adjacent-violators projection onto nondecreasing sequences.

    Returns the projected values and the number of nodes whose value was
    changed by the pooling.
    """
    y = np.asarray(values, dtype=float)
    if np.all(np.diff(y) >= 0.0):
        return y.copy(), 0
    # blocks of (mean, weight) merged whenever ordering is violated
    means: list[float] = []
    weights: list[int] = []
    for v in y:
        means.append(float(v))
        weights.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            w = weights[-2] + weights[-1]
            m = (means[-2] * weights[-2] + means[-1] * weights[-1]) / w
            means[-2:] = [m]
            weights[-2:] = [w]
    out = np.repeat(means, weights)
    pooled = int(np.sum(~np.isclose(out, y, rtol=0.0, atol=1e-15)))
    return out, pooled


def strictify(values: np.ndarray, floor: float = MONOTONE_FLOOR) -> np.ndarray:
    """Smallest pointwise-dominating sequence increasing by >= floor per step."""
    n = values.size
    ramp = floor * np.arange(n)
    return np.maximum.accumulate(values - ramp) + ramp


@dataclass(frozen=True)
class BeliefPair:
    """Value-conditional opponent-bid CDFs on the shared bid grid.

    ``h1``/``h0`` are ``H(b | v=1)`` and ``H(b | v=0)``; ``h1p``/``h0p`` are
    their densities, filled by :func:`belief_derivatives`.  The provenance
    fields are retained so derivatives can be computed analytically from
    the same integral representation that produced the CDFs.
    """

    bids: np.ndarray
    h1: np.ndarray
    h0: np.ndarray
    h1p: np.ndarray | None = None
    h0p: np.ndarray | None = None
    format: str = "spa"
    lam: float = float("nan")
    density: TypeDensity | None = field(default=None, repr=False)
    br: BidFunction | None = field(default=None, repr=False)
    bm: BidFunction | None = field(default=None, repr=False)

    @property
    def has_derivatives(self) -> bool:
        return self.h1p is not None and self.h0p is not None

    def h1_at(self, b):
        return np.interp(b, self.bids, self.h1)

    def h0_at(self, b):
        return np.interp(b, self.bids, self.h0)

    def h1p_at(self, b):
        self._require_derivatives()
        return np.interp(b, self.bids, self.h1p)

    def h0p_at(self, b):
        self._require_derivatives()
        return np.interp(b, self.bids, self.h0p)

    def _require_derivatives(self):
        if not self.has_derivatives:
            raise MissingDerivativesError(
                "belief pair lacks derivative tables; "
                "call belief_derivatives() first")

    def to_csv(self, path) -> None:
        """Write columns b, H1, H0, H1', H0' (empty derivative cells if unset)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["b", "H1", "H0", "H1'", "H0'"])
            h1p = self.h1p if self.h1p is not None else [None] * self.bids.size
            h0p = self.h0p if self.h0p is not None else [None] * self.bids.size
            for row in zip(self.bids, self.h1, self.h0, h1p, h0p):
                writer.writerow(["" if v is None else f"{v:.9g}" for v in row])


def _value_weighted_rows(density: TypeDensity,
                         inner: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average the rows of ``inner`` over past types, weighted by own value.

    ``inner[i, k]`` is a bid-grid profile conditional on past type
    ``grid[i]``; the rows are integrated with weights ``t f(t) / E[t]``
    (own value 1) and ``(1 - t) f(t) / E[1 - t]`` (own value 0).
    """
    g = density.grid
    wf = density.node_weights * density.marginal_values
    h1 = ((wf * g) @ inner) / density.mean
    h0 = ((wf * (1.0 - g)) @ inner) / (1.0 - density.mean)
    return h1, h0


def _inner_table(density: TypeDensity, br: BidFunction | None,
                 bm: BidFunction | None, lam: float, spa: bool,
                 derivative: bool) -> np.ndarray:
    """CDF (or pdf) of the opponent's bid given the past type.

    Rows are past types on the grid, columns are bid-grid nodes.  The pdf
    variant applies the chain rule through each strategy's inverse.
    """
    bids = density.grid
    base = density.cond_pdf_table() if derivative else density.cond_cdf

    def component(strategy: BidFunction) -> np.ndarray:
        if strategy.is_identity:
            return base
        theta = strategy.inverse(bids)
        tab = _interp_cols(base, theta, density)
        if derivative:
            tab = tab * strategy.inverse_slope(bids)[None, :]
        return tab

    if lam == 0.0:
        return component(bm)
    rational = base if spa else component(br)
    if lam == 1.0:
        return rational
    return lam * rational + (1.0 - lam) * component(bm)


def _interp_cols(table: np.ndarray, x: np.ndarray,
                 density: TypeDensity) -> np.ndarray:
    """Interpolate a grid-aligned table along axis 1 at column positions x."""
    g = density.grid
    j = np.clip((np.clip(x, 0.0, 1.0) / density.step).astype(int),
                0, g.size - 2)
    w = (x - g[j]) / density.step
    w = np.clip(w, 0.0, 1.0)
    return table[:, j] * (1.0 - w[None, :]) + table[:, j + 1] * w[None, :]


def _validate_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return lam


def beliefs_spa(density: TypeDensity, bm: BidFunction,
                lam: float) -> BeliefPair:
    """Value-conditional bid CDFs in the second-price auction.

    Rational opponents bid their type; an opponent who is data-driven with
    probability ``1 - lam`` bids ``bm``.  Derivative tables are left unset.
    """
    lam = _validate_lambda(lam)
    c = _inner_table(density, None, bm, lam, spa=True, derivative=False)
    h1, h0 = _value_weighted_rows(density, c)
    return BeliefPair(bids=density.grid, h1=h1, h0=h0, format="spa",
                      lam=lam, density=density, br=None, bm=bm)


def beliefs_fpa(density: TypeDensity, br: BidFunction, bm: BidFunction,
                lam: float) -> BeliefPair:
    """Value-conditional bid CDFs in the first-price auction."""
    lam = _validate_lambda(lam)
    c = _inner_table(density, br, bm, lam, spa=False, derivative=False)
    h1, h0 = _value_weighted_rows(density, c)
    return BeliefPair(bids=density.grid, h1=h1, h0=h0, format="fpa",
                      lam=lam, density=density, br=br, bm=bm)


def belief_derivatives(pair: BeliefPair) -> BeliefPair:
    """Return a copy of ``pair`` with analytic derivative tables filled.

    The derivative is taken inside the defining integrals (conditional
    density times inverse-bid slope), not by differencing the CDF tables;
    the equilibrium first-order condition divides by these values, so
    finite-difference noise would destabilize the solver.
    """
    if pair.density is None:
        raise MissingDerivativesError(
            "cannot differentiate a belief pair without provenance tables")
    p = _inner_table(pair.density, pair.br, pair.bm, pair.lam,
                     spa=pair.format == "spa", derivative=True)
    h1p, h0p = _value_weighted_rows(pair.density, p)
    return replace(pair, h1p=h1p, h0p=h0p)
