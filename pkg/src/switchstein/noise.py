"""Brownian driving noise on a fine grid merged with chain jump times.

The fine grid is the uniform ``h_ref`` grid plus every jump time of the
chain, so ``W`` is known exactly at each jump. Coarser step sizes are
obtained by summing fine increments; iterated Ito integrals for a coarse
cell use the exact diagonal identity and a Riemann-Ito sum over the fine
cells for the Levy area.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonDividingStep, NonNestedStep, NotAGridPoint

DIVIDE_TOL = 1e-12
DEDUP_TOL = 1e-14


def _ratio(big, small, what):
    """Integer ``big / small`` or raise when it is not one within tolerance."""
    k = int(round(big / small))
    if k < 1 or abs(k * small - big) > DIVIDE_TOL * big:
        raise what(f"{small!r} does not divide {big!r}")
    return k


@dataclass(frozen=True)
class TimeGrid:
    points: np.ndarray
    is_node: np.ndarray
    is_jump: np.ndarray
    h_ref: float

    @property
    def horizon(self):
        return float(self.points[-1])

    @property
    def n_cells(self):
        return self.points.size - 1

    @property
    def node_index(self):
        """Positions of the uniform nodes ``k * h_ref`` in ``points``."""
        return np.flatnonzero(self.is_node)

    @property
    def jump_index(self):
        return np.flatnonzero(self.is_jump)

    def index_of(self, t):
        pos = int(np.searchsorted(self.points, t))
        tol = DEDUP_TOL * self.horizon
        for cand in (pos - 1, pos):
            if 0 <= cand < self.points.size and abs(self.points[cand] - t) <= tol:
                return cand
        raise NotAGridPoint(f"{t!r} is not a grid point")


def build_merged_grid(horizon, h_ref, chain=None):
    """Union of the uniform ``h_ref`` grid on ``[0, horizon]`` and the chain's
    jump times. A jump within ``1e-14 * horizon`` of a node is merged into it."""
    if h_ref <= 0:
        raise NonDividingStep("h_ref must be positive")
    n = _ratio(horizon, h_ref, NonDividingStep)
    nodes = np.arange(n + 1) * h_ref
    nodes[-1] = horizon
    jumps = np.empty(0) if chain is None else np.asarray(chain.jump_times, dtype=float)

    nearest = np.clip(np.rint(jumps / h_ref).astype(np.int64), 0, n)
    on_node = np.abs(jumps - nodes[nearest]) <= DEDUP_TOL * horizon
    extra = jumps[~on_node]

    points = np.concatenate([nodes, extra])
    is_node = np.concatenate([np.ones(n + 1, bool), np.zeros(extra.size, bool)])
    is_jump = np.zeros(points.size, bool)
    is_jump[nearest[on_node]] = True
    is_jump[n + 1:] = True
    order = np.argsort(points, kind="stable")
    return TimeGrid(points[order], is_node[order], is_jump[order], float(h_ref))


@dataclass(frozen=True)
class DrivingNoise:
    """Gaussian increments ``increments[j]`` of an m-dimensional Wiener
    process over the grid cell ``(points[j], points[j+1]]``."""

    grid: TimeGrid
    increments: np.ndarray

    @property
    def dimension(self):
        return self.increments.shape[1]

    def increment(self, a, b):
        """``W(b) - W(a)`` for grid points ``a <= b``."""
        i, j = self.grid.index_of(a), self.grid.index_of(b)
        if i > j:
            raise ValueError("increment needs a <= b")
        return np.add.reduce(self.increments[i:j], axis=0) if j > i else np.zeros(self.dimension)

    def path_values(self):
        """``W`` at every grid point. Prefix sums run in extended precision so
        long grids do not accumulate rounding drift."""
        return prefix_sums(self.increments).astype(float)

    def dump_csv(self, path):
        values = self.path_values()
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t"] + [f"W{l + 1}" for l in range(self.dimension)])
            for t, row in zip(self.grid.points, values):
                out.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def prefix_sums(increments):
    """Inclusive-from-zero prefix sums (length ``len + 1``) in long double."""
    acc = np.zeros((increments.shape[0] + 1,) + increments.shape[1:], dtype=np.longdouble)
    np.cumsum(increments, axis=0, dtype=np.longdouble, out=acc[1:])
    return acc


def sample_noise(grid, m, stream):
    if m < 1:
        raise ValueError("noise dimension must be at least 1")
    widths = np.diff(grid.points)
    inc = stream.standard_normal((grid.n_cells, m)) * np.sqrt(widths)[:, None]
    inc.setflags(write=False)
    return DrivingNoise(grid, inc)


def _cell_integrals(inc, bounds, h):
    """Coarse increments and iterated integrals for cells ``[bounds[k], bounds[k+1])``
    of fine cells. ``h`` is the coarse step used in the diagonal identity."""
    lo, hi = bounds[0], bounds[-1]
    fine = inc[lo:hi]
    starts = bounds[:-1] - lo
    dw = np.add.reduceat(fine, starts, axis=0)
    n, m = dw.shape
    if m > 1:
        prefix = prefix_sums(fine)[:-1]
        owner = np.repeat(np.arange(n), np.diff(bounds))
        local = (prefix - prefix[starts[owner]]).astype(float)
        riemann = np.add.reduceat(local[:, :, None] * fine[:, None, :], starts, axis=0)
        area = 0.5 * (riemann - riemann.transpose(0, 2, 1))
        table = 0.5 * dw[:, :, None] * dw[:, None, :] + area
    else:
        table = np.empty((n, 1, 1))
    diag = np.arange(m)
    table[:, diag, diag] = 0.5 * (dw * dw - h)
    return dw, table


def iterated_integrals(noise, t_start, t_end):
    """m x m table ``I[l1][l]`` approximating the double Ito integral of
    ``dW_l1 dW_l`` over one cell ``(t_start, t_end]``."""
    i, j = noise.grid.index_of(t_start), noise.grid.index_of(t_end)
    if j <= i:
        raise ValueError("iterated_integrals needs t_start < t_end")
    h = noise.grid.points[j] - noise.grid.points[i]
    _, table = _cell_integrals(noise.increments, np.array([i, j]), h)
    return table[0]


@dataclass(frozen=True)
class CoarseNoise:
    """Everything a scheme needs from the driving noise at step ``h``.

    ``jump_tail[n]`` is ``W(t_{n+1}) - W(first jump in the cell)`` and is
    zero where ``jump_count[n] == 0``.
    """

    h: float
    times: np.ndarray
    increments: np.ndarray
    iterated: np.ndarray
    jump_tail: np.ndarray
    jump_count: np.ndarray

    @property
    def has_tail(self):
        return self.jump_count > 0


def coarsen(noise, coarse_h):
    grid = noise.grid
    factor = _ratio(coarse_h, grid.h_ref, NonNestedStep)
    n = _ratio(grid.horizon, coarse_h, NonNestedStep)
    bounds = grid.node_index[::factor]
    assert bounds.size == n + 1
    dw, table = _cell_integrals(noise.increments, bounds, coarse_h)

    jumps = grid.jump_index
    first = np.searchsorted(jumps, bounds[:-1], side="right")
    count = np.searchsorted(jumps, bounds[1:], side="right") - first
    tail = np.zeros_like(dw)
    for k in np.flatnonzero(count):
        tail[k] = np.add.reduce(noise.increments[jumps[first[k]]:bounds[k + 1]], axis=0)
    times = np.arange(n + 1) * coarse_h
    times[-1] = grid.horizon
    return CoarseNoise(float(coarse_h), times, dw, table, tail, count)
