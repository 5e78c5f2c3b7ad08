"""Continuous-time Markov chain: generator validation, exact path sampling,
and path queries (states, jump counts, compensated martingales).

States are 0-based indices ``0 .. n_states - 1``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeOffDiagonal, RowSumViolation, TimeOutOfRange

ROW_SUM_TOL = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GeneratorMatrix:
    """A validated Q-matrix. Build through :func:`validate_generator`."""

    rates: np.ndarray
    max_rate: float
    # row-wise cumulative jump probabilities, used to pick the next state
    _jump_cdf: np.ndarray = field(repr=False, compare=False)

    @property
    def states(self):
        return self.rates.shape[0]

    def exit_rate(self, state):
        return -self.rates[state, state]

    def stationary_distribution(self):
        """Solve pi Q = 0 with sum(pi) = 1 (least squares for reducible chains)."""
        m0 = self.states
        a = np.vstack([self.rates.T, np.ones(m0)])
        b = np.zeros(m0 + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        return pi


def validate_generator(raw):
    """Check a square rate matrix and wrap it as a :class:`GeneratorMatrix`.

    >>> validate_generator([[-1.0, 1.0], [1.0, -1.0]]).max_rate
    1.0
    """
    q = np.array(raw, dtype=float, copy=True)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
        raise ValueError(f"generator must be a non-empty square matrix, got shape {q.shape}")
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    if (off < 0).any():
        i, j = np.argwhere(off < 0)[0]
        raise NegativeOffDiagonal(f"rate q[{i}][{j}] = {q[i, j]} is negative")
    sums = q.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums) > ROW_SUM_TOL)
    if bad.size:
        i = bad[0]
        raise RowSumViolation(f"row {i} sums to {sums[i]!r}, expected 0")
    exit_rates = -np.diag(q)
    cdf = np.zeros_like(q)
    for i in range(q.shape[0]):
        if exit_rates[i] > 0:
            cdf[i] = np.cumsum(off[i]) / exit_rates[i]
            # absorb rounding so the last reachable state closes the cdf at 1
            cdf[i, np.flatnonzero(off[i] > 0)[-1]:] = 1.0
    return GeneratorMatrix(
        rates=_frozen(q, float),
        max_rate=float(exit_rates.max()),
        _jump_cdf=_frozen(cdf, float),
    )


@dataclass(frozen=True)
class ChainPath:
    """A cadlag chain trajectory on ``[0, horizon]``.

    ``jump_times[k]`` is the time of the k-th jump and ``jump_states[k]`` the
    state entered at that time.
    """

    initial_state: int
    jump_times: np.ndarray
    jump_states: np.ndarray
    horizon: float

    def __post_init__(self):
        times = _frozen(self.jump_times, float)
        states = _frozen(self.jump_states, np.int64)
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "jump_states", states)
        if times.shape != states.shape or times.ndim != 1:
            raise ValueError("jump_times and jump_states must be 1-d and equal length")
        if times.size:
            if times[0] <= 0 or times[-1] > self.horizon or (np.diff(times) <= 0).any():
                raise ValueError("jump times must be strictly increasing in (0, horizon]")
            previous = np.concatenate([[self.initial_state], states[:-1]])
            if (previous == states).any():
                raise ValueError("every recorded jump must change the state")

    @property
    def n_jumps(self):
        return self.jump_times.size

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        if (t < 0).any() or (t > self.horizon).any():
            raise TimeOutOfRange(f"time outside [0, {self.horizon}]")
        return t

    def _lookup(self, idx):
        path = np.concatenate([[self.initial_state], self.jump_states])
        return path[idx]

    def state_at(self, t):
        """Right-continuous value alpha(t); accepts scalars or arrays."""
        t = self._check_time(t)
        out = self._lookup(np.searchsorted(self.jump_times, t, side="right"))
        return int(out) if out.ndim == 0 else out

    def left_limit(self, t):
        """Left limit alpha(t-); equals alpha(0) at t = 0."""
        t = self._check_time(t)
        out = self._lookup(np.searchsorted(self.jump_times, t, side="left"))
        return int(out) if out.ndim == 0 else out

    def jumps_in(self, start, end):
        """Jumps in the half-open interval ``(start, end]``.

        Returns ``(count, times, states_after)``.
        """
        if not 0 <= start < end <= self.horizon:
            raise TimeOutOfRange(f"need 0 <= start < end <= {self.horizon}, got ({start}, {end}]")
        lo = np.searchsorted(self.jump_times, start, side="right")
        hi = np.searchsorted(self.jump_times, end, side="right")
        return hi - lo, self.jump_times[lo:hi], self.jump_states[lo:hi]

    def jump_counts(self, nodes):
        """Number of jumps in each cell ``(nodes[k], nodes[k+1]]``."""
        pos = np.searchsorted(self.jump_times, np.asarray(nodes, dtype=float), side="right")
        return np.diff(pos)

    def occupation_times(self, n_states, t=None):
        """Time spent in each state over ``[0, t]`` (default the whole horizon)."""
        t = self.horizon if t is None else float(self._check_time(t))
        k = np.searchsorted(self.jump_times, t, side="right")
        edges = np.concatenate([[0.0], self.jump_times[:k], [t]])
        visited = self._lookup(np.arange(k + 1))
        return np.bincount(visited, weights=np.diff(edges), minlength=n_states)

    def compensated_martingale(self, gen, i0, j0, t):
        """M_{i0 j0}(t): count of i0 -> j0 transitions up to t minus its compensator
        ``q_{i0 j0} * (time spent in i0 on [0, t])``. Zero when ``i0 == j0``."""
        if i0 == j0:
            return 0.0
        t = float(self._check_time(t))
        k = np.searchsorted(self.jump_times, t, side="right")
        before = self._lookup(np.arange(k))
        count = np.count_nonzero((before == i0) & (self.jump_states[:k] == j0))
        occupied = self.occupation_times(gen.states, t)[i0]
        return count - gen.rates[i0, j0] * occupied


def sample_chain_path(gen, initial_state, horizon, stream, block=64):
    """Exact path on ``[0, horizon]``: exponential holding times with rate
    ``-q_ii`` and embedded-chain transitions ``q_ij / -q_ii``.

    Random numbers are drawn in blocks of ``block`` but consumed strictly in
    order, so the path depends only on the stream state.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not 0 <= initial_state < gen.states:
        raise ValueError(f"initial_state {initial_state} outside 0..{gen.states - 1}")
    times, states = [], []
    t, state = 0.0, int(initial_state)
    exp = uni = None
    k = block
    diag = -np.diag(gen.rates)
    cdf = gen._jump_cdf
    while diag[state] > 0:
        if k == block:
            exp = stream.standard_exponential(block)
            uni = stream.random(block)
            k = 0
        t += exp[k] / diag[state]
        if t > horizon:
            break
        # first strict cdf increase, so zero-rate targets are never picked
        nxt = int(np.searchsorted(cdf[state], uni[k], side="right"))
        k += 1
        times.append(t)
        states.append(nxt)
        state = nxt
    return ChainPath(int(initial_state), np.array(times), np.array(states, dtype=np.int64), float(horizon))
