"""Finite-state continuous-time Markov chain driving the noise regime.

States are numbered 1..m.  Two path simulators are provided: the classical
exact (Gillespie) scheme, and one driven by a unit-rate Poisson point process
on [0, T] x [0, Lambda) through the interval table, where each off-diagonal
rate gamma_ij owns a half-open interval of that length, laid out row-major.
The two are distributionally identical; their agreement is itself a test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GeneratorMatrix",
    "IntervalTable",
    "ChainPath",
    "build_interval_table",
    "h_eval",
    "simulate_chain_gillespie",
    "simulate_chain_prm",
    "empirical_generator",
]


@dataclass(frozen=True)
class GeneratorMatrix:
    """Generator of a CTMC: nonnegative off-diagonal, zero row sums."""

    gamma: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("generator must be a square matrix")
        m = g.shape[0]
        off = g[~np.eye(m, dtype=bool)]
        if off.size and off.min() < 0:
            raise ValueError("generator has a negative off-diagonal entry")
        scale = max(1.0, float(np.abs(g).max()) if g.size else 1.0)
        if np.abs(g.sum(axis=1)).max() > 1e-12 * scale:
            raise ValueError("generator rows must sum to zero")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    @property
    def m(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def from_off_diagonal(cls, rates: np.ndarray) -> "GeneratorMatrix":
        g = np.asarray(rates, dtype=float).copy()
        np.fill_diagonal(g, 0.0)
        np.fill_diagonal(g, -g.sum(axis=1))
        return cls(g)


@dataclass(frozen=True)
class IntervalTable:
    """Row-major layout of half-open intervals, one per off-diagonal rate.

    rows[i-1] lists (j, a, b) with [a, b) of length gamma_ij, consecutive
    over all (i, j), i != j, starting at zero.
    """

    m: int
    rows: tuple  # per state: tuple of (j, a, b)
    total_length: float


def build_interval_table(gamma: GeneratorMatrix) -> IntervalTable:
    g = gamma.gamma
    m = gamma.m
    rows = []
    pos = 0.0
    for i in range(1, m + 1):
        row = []
        for j in range(1, m + 1):
            if j == i:
                continue
            length = g[i - 1, j - 1]
            if length < 0:
                raise ValueError("negative off-diagonal rate")
            if length > 0.0:
                row.append((j, pos, pos + length))
                pos += length
        rows.append(tuple(row))
    return IntervalTable(m=m, rows=tuple(rows), total_length=pos)


def h_eval(table: IntervalTable, i: int, y: float) -> int:
    """Displacement j - i if y falls in an interval of row i, else 0."""
    for j, a, b in table.rows[i - 1]:
        if a <= y < b:
            return j - i
    return 0


@dataclass
class ChainPath:
    """Right-continuous piecewise-constant path with values in 1..m."""

    initial_state: int
    switch_times: np.ndarray  # strictly increasing, in (0, T]
    switch_states: np.ndarray  # state entered at each switch time
    horizon: float

    def state_at(self, t) -> np.ndarray:
        """Right-continuous evaluation; scalar or array argument."""
        idx = np.searchsorted(self.switch_times, t, side="right")
        states = np.concatenate([[self.initial_state], self.switch_states])
        return states[idx]

    def segments(self):
        """Yield (t0, t1, state) over [0, horizon]."""
        t0 = 0.0
        state = self.initial_state
        for t, s in zip(self.switch_times, self.switch_states):
            yield t0, float(t), int(state)
            t0 = float(t)
            state = int(s)
        yield t0, self.horizon, int(state)


def simulate_chain_gillespie(
    gamma: GeneratorMatrix, r0: int, horizon: float, rng: np.random.Generator
) -> ChainPath:
    """Exact simulation: exponential holding times, embedded-chain jumps."""
    if not 1 <= r0 <= gamma.m:
        raise ValueError(f"initial state {r0} outside 1..{gamma.m}")
    g = gamma.gamma
    times, states = [], []
    t = 0.0
    i = r0
    while True:
        rate = -g[i - 1, i - 1]
        if rate <= 0.0:
            break  # absorbing
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        probs = g[i - 1].copy()
        probs[i - 1] = 0.0
        probs /= rate
        i = int(rng.choice(gamma.m, p=probs)) + 1
        times.append(t)
        states.append(i)
    return ChainPath(
        initial_state=r0,
        switch_times=np.array(times),
        switch_states=np.array(states, dtype=int),
        horizon=horizon,
    )


def simulate_chain_prm(
    table: IntervalTable, r0: int, horizon: float, rng: np.random.Generator
) -> ChainPath:
    """Drive the chain with a unit-rate Poisson point process on the strip.

    Points land on [0, T] x [0, Lambda); a point (t, y) moves the state by
    the interval-table displacement of (state, y), zero displacements are
    thinned away.
    """
    if not 1 <= r0 <= table.m:
        raise ValueError(f"initial state {r0} outside 1..{table.m}")
    lam = table.total_length
    if lam <= 0.0:
        return ChainPath(r0, np.array([]), np.array([], dtype=int), horizon)
    n_pts = rng.poisson(lam * horizon)
    ts = np.sort(rng.uniform(0.0, horizon, size=n_pts))
    ys = rng.uniform(0.0, lam, size=n_pts)
    times, states = [], []
    i = r0
    for t, y in zip(ts, ys):
        d = h_eval(table, i, y)
        if d != 0:
            i += d
            times.append(t)
            states.append(i)
    return ChainPath(
        initial_state=r0,
        switch_times=np.array(times),
        switch_states=np.array(states, dtype=int),
        horizon=horizon,
    )


def empirical_generator(paths: list[ChainPath], m: int | None = None):
    """Rate estimates: transition counts over occupation time, Poisson errors.

    Returns (estimate, standard_error, no_data) arrays of shape (m, m);
    entries of states never visited are flagged in no_data.  The state count
    is inferred from the paths unless given.
    """
    if len(paths) < 100:
        raise ValueError("need at least 100 paths for rate estimation")
    if m is None:
        m = int(
            max(
                max(
                    (p.switch_states.max() for p in paths if p.switch_states.size),
                    default=1,
                ),
                max(p.initial_state for p in paths),
            )
        )
    counts = np.zeros((m, m))
    occupation = np.zeros(m)
    for p in paths:
        for t0, t1, state in p.segments():
            occupation[state - 1] += t1 - t0
        prev = p.initial_state
        for s in p.switch_states:
            counts[prev - 1, s - 1] += 1
            prev = int(s)
    est = np.zeros((m, m))
    se = np.zeros((m, m))
    no_data = occupation <= 0.0
    for i in range(m):
        if no_data[i]:
            continue
        for j in range(m):
            if i == j:
                continue
            est[i, j] = counts[i, j] / occupation[i]
            se[i, j] = np.sqrt(max(counts[i, j], 1.0)) / occupation[i]
        est[i, i] = -est[i].sum()
    return est, se, no_data
