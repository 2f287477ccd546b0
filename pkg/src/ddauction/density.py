"""Parametric joint density of bidder types on the unit square.

The family is ``f(t1, t2) = ((2 + alpha) / 2) * (1 - |t1 - t2|) ** alpha``:
``alpha = 0`` gives independent uniform types, and growing ``alpha``
concentrates mass on the diagonal, i.e. increases the correlation between
the two bidders' types.  All probability objects used elsewhere (marginal,
conditional CDF, partial moments, samples) are precomputed here on a shared
uniform grid.
"""

from __future__ import annotations

import json

import numpy as np

GRID_N_DEFAULT = 501

__all__ = ["TypeDensity", "eval_joint", "GRID_N_DEFAULT"]


def eval_joint(alpha: float, t1, t2):
    """Evaluate the joint type density at ``(t1, t2)``.

    Parameters
    ----------
    alpha : float
        Nonnegative correlation parameter.
    t1, t2 : float or array_like
        Points in [0, 1]; broadcastable shapes are accepted.

    Returns
    -------
    float or ndarray
        ``((2 + alpha) / 2) * (1 - |t1 - t2|) ** alpha``.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    x = np.asarray(t1, dtype=float)
    y = np.asarray(t2, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("t1 outside [0, 1]")
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise ValueError("t2 outside [0, 1]")
    out = 0.5 * (2.0 + alpha) * (1.0 - np.abs(x - y)) ** alpha
    if np.isscalar(t1) and np.isscalar(t2):
        return float(out)
    return out


def simpson_node_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` equally spaced nodes.

    For an odd node count this is the classic 1-4-2-...-4-1 rule; for an
    even count the last three panels use the 3/8 rule so the order is kept.
    """
    if n < 4:
        raise ValueError("need at least 4 nodes")
    w = np.zeros(n)
    if (n - 1) % 2 == 0:
        w[0] = w[-1] = 1.0
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= h / 3.0
    else:
        m = n - 3  # nodes 0..m-1 span an even number of panels
        w[0] = 1.0
        w[1:m - 1:2] = 4.0
        w[2:m - 1:2] = 2.0
        w[m - 1] = 1.0
        w *= h / 3.0
        w38 = np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * h / 8.0
        w[m - 1:] += w38
    return w


def _panel_simpson_cumulative(f_nodes: np.ndarray, f_mids: np.ndarray,
                              h: float) -> np.ndarray:
    """Cumulative integral at the nodes from node and midpoint samples.

    Each grid panel is integrated with a single Simpson rule, so integrands
    that are smooth within panels (kinks on panel boundaries) keep full
    order.
    """
    panels = (h / 6.0) * (f_nodes[..., :-1] + 4.0 * f_mids + f_nodes[..., 1:])
    out = np.zeros_like(f_nodes)
    out[..., 1:] = np.cumsum(panels, axis=-1)
    return out


class TypeDensity:
    """Precomputed probability tables for one correlation parameter.

    Construction evaluates the joint density on ``grid_n`` x ``grid_n``
    nodes (plus panel midpoints) and integrates panel-by-panel; the kink of
    ``|t1 - t2|`` always falls on a panel boundary, which keeps the fixed
    Simpson rule at full order at every resolution.  Instances are immutable
    after construction and safe to share across threads.
    """

    def __init__(self, alpha: float, grid_n: int = GRID_N_DEFAULT):
        if alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {alpha}")
        if int(grid_n) != grid_n or grid_n < 11:
            raise ValueError(f"grid_n must be an integer >= 11, got {grid_n}")
        self.alpha = float(alpha)
        self.grid_n = int(grid_n)
        g = np.linspace(0.0, 1.0, self.grid_n)
        self.grid = g
        self.step = g[1] - g[0]
        self.node_weights = simpson_node_weights(self.grid_n, self.step)
        mids = 0.5 * (g[:-1] + g[1:])
        self._mids = mids

        # Joint density at grid nodes and at panel midpoints along axis 1
        # (row index = conditioning type t, column index = integration var s).
        f_nodes = eval_joint(self.alpha, g[:, None], g[None, :])
        f_mids = eval_joint(self.alpha, g[:, None], mids[None, :])
        self._joint_nodes = f_nodes
        self._joint_mids = f_mids

        # C(b|t) = int_0^b f(t, s) ds and T(b|t) = int_0^b s f(t, s) ds.
        self.cum_joint = _panel_simpson_cumulative(f_nodes, f_mids, self.step)
        self.cum_first_moment = _panel_simpson_cumulative(
            g[None, :] * f_nodes, mids[None, :] * f_mids, self.step)

        self.marginal_values = self.cum_joint[:, -1].copy()
        self.cond_cdf = self.cum_joint / self.marginal_values[:, None]

        # Marginal CDF (used only by the sampler); trapezoid is enough here.
        mc = np.zeros(self.grid_n)
        mc[1:] = np.cumsum(
            0.5 * self.step * (self.marginal_values[:-1] + self.marginal_values[1:]))
        self.marginal_cdf_values = mc / mc[-1]

        w = self.node_weights
        self.mean = float(w @ (g * self.marginal_values))
        self.mean_sq = float(w @ (g ** 2 * self.marginal_values))
        self.cross_moment = float(w @ (g * self.cum_first_moment[:, -1]))

        self._cond_pdf = None
        for arr in (self.grid, self.node_weights, self.cum_joint,
                    self.cum_first_moment, self.marginal_values,
                    self.cond_cdf, self.marginal_cdf_values):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    # pointwise evaluation
    # ------------------------------------------------------------------
    def joint(self, t1, t2):
        """Joint density at ``(t1, t2)``."""
        return eval_joint(self.alpha, t1, t2)

    def marginal(self, t):
        """Marginal density at ``t`` (linear interpolation of the table)."""
        t = self._check_unit(t, "t")
        out = np.interp(t, self.grid, self.marginal_values)
        return float(out) if np.ndim(t) == 0 else out

    def conditional_cdf(self, b, t):
        """``P[s <= b | t]`` for the conditional type distribution."""
        b = self._check_unit(b, "b")
        t = self._check_unit(t, "t")
        b, t = np.broadcast_arrays(np.atleast_1d(b), np.atleast_1d(t))
        rows = self._row_blend(self.cond_cdf, t.ravel())
        out = _interp_rows(rows, b.ravel(), self.grid, self.step)
        out = out.reshape(b.shape)
        return float(out[()]) if out.size == 1 else out

    def conditional_pdf(self, b, t):
        """Conditional density ``f(b | t) = f(t, b) / marginal(t)``."""
        return self.joint(t, b) / self.marginal(t)

    def correlation(self) -> float:
        """Pearson correlation of the two types under the joint density."""
        var = self.mean_sq - self.mean ** 2
        return (self.cross_moment - self.mean ** 2) / var

    # ------------------------------------------------------------------
    # grid-table services for the other modules
    # ------------------------------------------------------------------
    def cond_pdf_table(self) -> np.ndarray:
        """Conditional density ``f(s | t)`` on grid x grid (rows = t)."""
        if self._cond_pdf is None:
            tab = self._joint_nodes / self.marginal_values[:, None]
            tab.setflags(write=False)
            self._cond_pdf = tab
        return self._cond_pdf

    def cumulative_weighted_table(self, w_nodes: np.ndarray) -> np.ndarray:
        """Table of ``int_0^{s_k} w(s) f(t, s) ds`` for grid weights ``w``.

        ``w`` is treated as piecewise linear between nodes, so its midpoint
        values are panel averages; rows are conditioning types ``t``.
        """
        w_nodes = np.asarray(w_nodes, dtype=float)
        if w_nodes.shape != self.grid.shape:
            raise ValueError("weight values must live on the density grid")
        w_mids = 0.5 * (w_nodes[:-1] + w_nodes[1:])
        return _panel_simpson_cumulative(
            w_nodes[None, :] * self._joint_nodes,
            w_mids[None, :] * self._joint_mids, self.step)

    def interp_rows_at(self, table: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Per-row linear interpolation of a grid-aligned table.

        ``table`` has one row per grid node; ``x[i]`` is the query abscissa
        for row ``i``.
        """
        return _interp_rows(table, np.asarray(x, dtype=float), self.grid,
                            self.step)

    # ------------------------------------------------------------------
    # sampling
    # ------------------------------------------------------------------
    def sample(self, n: int, seed: int | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
        """Draw ``n`` i.i.d. type pairs, shape ``(n, 2)``.

        Inverse-transform sampling: the first coordinate from the marginal
        CDF, the second from the conditional CDF (rows blended linearly in
        the first coordinate).  With an integer ``seed`` the draw is fully
        deterministic (PCG64 generator).
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        if rng is None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        u = rng.random((n, 2))
        t1 = np.interp(u[:, 0], self.marginal_cdf_values, self.grid)
        t2 = np.empty(n)
        chunk = 16384
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            rows = self._row_blend(self.cond_cdf, t1[lo:hi])
            t2[lo:hi] = _invert_cdf_rows(rows, u[lo:hi, 1], self.grid)
        return np.column_stack([t1, t2])

    # ------------------------------------------------------------------
    # (de)serialization
    # ------------------------------------------------------------------
    def to_snapshot(self) -> dict:
        return {"alpha": self.alpha, "grid_n": self.grid_n}

    @classmethod
    def from_snapshot(cls, snapshot: dict) -> "TypeDensity":
        return cls(alpha=snapshot["alpha"], grid_n=snapshot["grid_n"])

    def to_json(self) -> str:
        return json.dumps(self.to_snapshot(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TypeDensity":
        return cls.from_snapshot(json.loads(text))

    def __repr__(self) -> str:  # pragma: no cover
        return f"TypeDensity(alpha={self.alpha}, grid_n={self.grid_n})"

    # ------------------------------------------------------------------
    # internals
    # ------------------------------------------------------------------
    @staticmethod
    def _check_unit(x, name):
        arr = np.asarray(x, dtype=float)
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError(f"{name} outside [0, 1]")
        return x if np.ndim(x) == 0 else arr

    def _row_blend(self, table: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Linear blend of adjacent table rows at off-grid ``t`` values."""
        t = np.asarray(t, dtype=float)
        j = np.clip((t / self.step).astype(int), 0, self.grid_n - 2)
        w = (t - self.grid[j]) / self.step
        return table[j] * (1.0 - w[:, None]) + table[j + 1] * w[:, None]


def _interp_rows(rows: np.ndarray, x: np.ndarray, grid: np.ndarray,
                 step: float) -> np.ndarray:
    x = np.clip(x, grid[0], grid[-1])
    j = np.clip((x / step).astype(int), 0, grid.size - 2)
    w = (x - grid[j]) / step
    idx = np.arange(rows.shape[0]) if rows.ndim == 2 else None
    if rows.ndim == 1:
        return rows[j] * (1.0 - w) + rows[j + 1] * w
    return rows[idx, j] * (1.0 - w) + rows[idx, j + 1] * w


def _invert_cdf_rows(rows: np.ndarray, u: np.ndarray,
                     grid: np.ndarray) -> np.ndarray:
    """Invert one CDF row per sample at probability ``u`` (linear within panels)."""
    idx = np.sum(rows < u[:, None], axis=1)
    idx = np.clip(idx, 1, grid.size - 1)
    lo = rows[np.arange(rows.shape[0]), idx - 1]
    hi = rows[np.arange(rows.shape[0]), idx]
    denom = np.where(hi > lo, hi - lo, 1.0)
    frac = np.clip((u - lo) / denom, 0.0, 1.0)
    return grid[idx - 1] + frac * (grid[idx] - grid[idx - 1])
