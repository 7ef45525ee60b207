"""Poisson collision-event streams that drive the particle dynamics.

One stream realizes the superposition of all per-pair collision clocks:
a single exponential clock at the total system rate plus a uniform pair
choice, which is distributionally identical to independent pair clocks
and O(1) per event.  Streams are reproducible from (seed, replica) via a
counter-based generator, so replicas can run in parallel without shared
state.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

# Stream-kind tags keep seed derivations for unrelated consumers disjoint.
KIND_EVENTS = 0
KIND_INIT = 1
KIND_MEANFIELD = 2
KIND_BLOCK_COUPLED = 3
KIND_BLOCK_SINGLE = 4
KIND_BLOCK_MEANFIELD = 5

_CHUNK = 512

MAX_SEED = 2**64 - 1


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for (seed, path); counter-based (Philox)."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


class CollisionEvent(NamedTuple):
    """One atom of the driving random measure.

    The pair is stored canonically with i < j; the u mark is carried even
    though the finite-N dynamics ignore it, so a single stream can drive
    both finite-N and mean-field consumers.
    """

    time: float
    i: int
    j: int
    theta: float
    u: float


@dataclass(frozen=True)
class StreamConfig:
    n_particles: int
    horizon: float
    seed: int

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError(f"n_particles must be >= 2, got {self.n_particles}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ValueError("seed must fit in 64 unsigned bits")


def pair_collision_rate(n_particles: int) -> float:
    """Collision rate of one unordered pair: 2/(N-1)."""
    if n_particles < 2:
        raise ValueError(f"n_particles must be >= 2, got {n_particles}")
    return 2.0 / (n_particles - 1)


def total_system_rate(n_particles: int) -> float:
    """Total collision rate of the system; N(N-1)/2 pairs at 2/(N-1) each."""
    if n_particles < 2:
        raise ValueError(f"n_particles must be >= 2, got {n_particles}")
    return float(n_particles)


class EndOfHorizon(Exception):
    """Raised when the next event would fall beyond the stream horizon."""


@lru_cache(maxsize=32)
def pair_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Decode tables from a pair code in [0, N(N-1)/2) to indices i < j."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    i_of = np.array([p[0] for p in pairs], dtype=np.int64)
    j_of = np.array([p[1] for p in pairs], dtype=np.int64)
    return i_of, j_of


class EventStream:
    """Time-ordered collision events on [0, horizon]; single consumer.

    Waiting times are exponential at the total system rate, the pair is
    uniform over unordered pairs, theta uniform on (-pi, pi] (drawn on
    [-pi, pi) with the endpoint remapped) and u uniform on [0, 1).  The
    whole sequence is a deterministic function of (config.seed, replica).
    """

    def __init__(self, config: StreamConfig, replica: int = 0):
        self.config = config
        self.replica = int(replica)
        self._rng = rng_for(config.seed, KIND_EVENTS, self.replica)
        self._i_of, self._j_of = pair_tables(config.n_particles)
        self._rate = total_system_rate(config.n_particles)
        self._t = 0.0
        self._buf: list[CollisionEvent] = []
        self._pos = 0
        self._exhausted = False

    def _refill(self) -> None:
        if self._exhausted:
            return
        gaps = self._rng.exponential(scale=1.0 / self._rate, size=_CHUNK)
        times = self._t + np.cumsum(gaps)
        codes = self._rng.integers(0, self._i_of.size, size=_CHUNK)
        thetas = self._rng.uniform(-math.pi, math.pi, size=_CHUNK)
        thetas[thetas == -math.pi] = math.pi
        us = self._rng.random(size=_CHUNK)
        self._t = float(times[-1])
        self._buf = [
            CollisionEvent(
                float(times[k]),
                int(self._i_of[codes[k]]),
                int(self._j_of[codes[k]]),
                float(thetas[k]),
                float(us[k]),
            )
            for k in range(_CHUNK)
        ]
        self._pos = 0

    def peek(self) -> CollisionEvent:
        """Next event without consuming it; raises EndOfHorizon past the end."""
        if self._pos >= len(self._buf):
            self._refill()
        ev = self._buf[self._pos]
        if ev.time > self.config.horizon:
            self._exhausted = True
            raise EndOfHorizon(f"next event at t={ev.time} exceeds horizon")
        return ev

    def next_event(self) -> CollisionEvent:
        ev = self.peek()
        self._pos += 1
        return ev

    def events_until(self, t: float) -> list[CollisionEvent]:
        """All remaining events with time <= t, in increasing time order.

        Consuming in pieces and resuming yields the same sequence as one
        pass; t must not exceed the horizon.
        """
        if t > self.config.horizon:
            raise ValueError(f"t={t} exceeds horizon {self.config.horizon}")
        out: list[CollisionEvent] = []
        while True:
            try:
                ev = self.peek()
            except EndOfHorizon:
                break
            if ev.time > t:
                break
            out.append(ev)
            self._pos += 1
        return out

    def __iter__(self):
        return self

    def __next__(self) -> CollisionEvent:
        try:
            return self.next_event()
        except EndOfHorizon:
            raise StopIteration


def events_checksum(events) -> str:
    """Stable digest of an event sequence, for shared-stream assertions."""
    h = hashlib.blake2b(digest_size=16)
    for ev in events:
        h.update(struct.pack("<dqqdd", ev.time, ev.i, ev.j, ev.theta, ev.u))
    return h.hexdigest()
