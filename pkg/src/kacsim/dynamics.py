"""Velocity and energy states, the three equivalent collision maps, and
trajectory evolution.

All three maps conserve the pair's kinetic energy.  To keep long
trajectories from drifting, the radial map derives both outputs from one
energy split (e_i' = S cos^2, e_j' = S - e_i', then signed square roots)
and the rotation map rescales the touched pair back to its pre-collision
energy.  In the energy representation conservation is exact bit-for-bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .events import KIND_INIT, CollisionEvent, rng_for


class Formulation(enum.Enum):
    """Which of the three equivalent collision rules drives the update."""

    ROTATION = "rotation"
    RADIAL = "radial"
    ENERGY = "energy"


@dataclass
class VelocityState:
    v: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.v = np.array(self.v, dtype=float)
        if self.v.ndim != 1 or self.v.size < 1:
            raise ValueError("velocity state needs a 1D vector")
        if self.time < 0:
            raise ValueError("time must be nonnegative")

    @property
    def n(self) -> int:
        return self.v.size

    def total_energy(self) -> float:
        return float(self.v @ self.v)


@dataclass
class EnergyState:
    e: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.e = np.array(self.e, dtype=float)
        if self.e.ndim != 1 or self.e.size < 1:
            raise ValueError("energy state needs a 1D vector")
        if np.any(self.e < 0):
            raise ValueError("energies must be nonnegative")
        if self.time < 0:
            raise ValueError("time must be nonnegative")

    @property
    def n(self) -> int:
        return self.e.size

    def total_energy(self) -> float:
        return float(self.e.sum())


State = Union[VelocityState, EnergyState]


def collide_rotation(v_i: float, v_j: float, theta: float) -> tuple[float, float]:
    """Rotate the pair by theta; the lower index takes the cosine role."""
    c = math.cos(theta)
    s = math.sin(theta)
    a = v_i * c + v_j * s
    b = v_j * c - v_i * s
    pre = v_i * v_i + v_j * v_j
    post = a * a + b * b
    if post > 0.0:
        k = math.sqrt(pre / post)
        a *= k
        b *= k
    return a, b


def collide_radial(v_i: float, v_j: float, theta: float) -> tuple[float, float]:
    """Send the pair to (R cos theta, -R sin theta) on its energy circle.

    Computed through the energy split so the pair energy matches the
    energy-form map to rounding; a zero pair (R = 0) stays at zero.
    """
    c = math.cos(theta)
    s = math.sin(theta)
    total = v_i * v_i + v_j * v_j
    e_i = total * (c * c)
    e_j = total - e_i
    return math.copysign(math.sqrt(e_i), c), math.copysign(math.sqrt(e_j), -s)


def collide_energy(e_i: float, e_j: float, theta: float) -> tuple[float, float]:
    """Split the summed pair energy as (S cos^2 theta, S sin^2 theta)."""
    if e_i < 0 or e_j < 0:
        raise ValueError(f"energies must be nonnegative, got ({e_i}, {e_j})")
    c = math.cos(theta)
    total = e_i + e_j
    out_i = total * (c * c)
    return out_i, total - out_i


def apply_event(state: State, formulation: Formulation, event: CollisionEvent) -> State:
    """Apply one collision; only components i and j change; pure function."""
    n = state.n
    if not 0 <= event.i < event.j < n:
        raise IndexError(f"event pair ({event.i}, {event.j}) out of range for n={n}")
    if event.time < state.time:
        raise ValueError(f"event at t={event.time} precedes state time {state.time}")
    if isinstance(state, EnergyState):
        if formulation is not Formulation.ENERGY:
            raise TypeError("energy states evolve only under the energy formulation")
        e = state.e.copy()
        e[event.i], e[event.j] = collide_energy(e[event.i], e[event.j], event.theta)
        return EnergyState(e, time=event.time)
    if formulation is Formulation.ENERGY:
        raise TypeError("velocity states need the rotation or radial formulation")
    collide = collide_rotation if formulation is Formulation.ROTATION else collide_radial
    v = state.v.copy()
    v[event.i], v[event.j] = collide(v[event.i], v[event.j], event.theta)
    return VelocityState(v, time=event.time)


def evolve(
    state: State,
    formulation: Formulation,
    events: Iterable[CollisionEvent],
    t_end: float,
) -> State:
    """Apply all events with time in (state.time, t_end], then advance time.

    Events must be sorted by time; evolving to t1 and then to t2 matches a
    single pass to t2 with the same events.
    """
    if t_end < state.time:
        raise ValueError(f"t_end={t_end} precedes state time {state.time}")
    if isinstance(state, EnergyState):
        values = state.e.copy()
        collide = collide_energy
        if formulation is not Formulation.ENERGY:
            raise TypeError("energy states evolve only under the energy formulation")
    else:
        values = state.v.copy()
        if formulation is Formulation.ENERGY:
            raise TypeError("velocity states need the rotation or radial formulation")
        collide = collide_rotation if formulation is Formulation.ROTATION else collide_radial

    prev = -math.inf
    for ev in events:
        if ev.time < prev:
            raise ValueError("events are not sorted by time")
        prev = ev.time
        if ev.time <= state.time:
            continue
        if ev.time > t_end:
            break
        if not 0 <= ev.i < ev.j < values.size:
            raise IndexError(f"event pair ({ev.i}, {ev.j}) out of range")
        values[ev.i], values[ev.j] = collide(values[ev.i], values[ev.j], ev.theta)

    if isinstance(state, EnergyState):
        return EnergyState(values, time=t_end)
    return VelocityState(values, time=t_end)


# ---------------------------------------------------------------------------
# Initial conditions.  Every kind yields total energy N (renormalized after
# sampling, so the match is exact up to one rounding pass).


@dataclass(frozen=True)
class AxisPoint:
    """All energy on particle 0: v = (sqrt(N), 0, ..., 0)."""


@dataclass(frozen=True)
class UniformSphere:
    """Uniform on the sphere of radius sqrt(N)."""


@dataclass(frozen=True)
class TwoLevel:
    """round(fraction*N) particles at `energy`, the rest at the level that
    brings the total to N.  Gives strictly positive coupling costs against
    any other kind."""

    fraction: float = 0.5
    energy: float = 0.5


@dataclass(frozen=True)
class Custom:
    """A caller-supplied vector, renormalized to total energy N."""

    values: tuple[float, ...]


InitKind = Union[AxisPoint, UniformSphere, TwoLevel, Custom]


def init_vector(kind: InitKind, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Velocity vector for an initial-condition kind, total energy N."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if isinstance(kind, AxisPoint):
        v = np.zeros(n)
        v[0] = math.sqrt(n)
        return v
    if isinstance(kind, UniformSphere):
        if rng is None:
            raise ValueError("UniformSphere needs a random generator")
        g = rng.standard_normal(n)
        norm2 = float(g @ g)
        if norm2 == 0.0:
            raise ArithmeticError("degenerate normal draw")
        return g * math.sqrt(n / norm2)
    if isinstance(kind, TwoLevel):
        n_low = int(round(kind.fraction * n))
        if not 1 <= n_low <= n - 1:
            raise ValueError(
                f"TwoLevel fraction {kind.fraction} leaves no particles in one group"
            )
        if kind.energy < 0:
            raise ValueError("TwoLevel energy must be nonnegative")
        e_rest = (n - n_low * kind.energy) / (n - n_low)
        if e_rest < 0:
            raise ValueError(
                f"TwoLevel energy {kind.energy} exceeds the total budget for n={n}"
            )
        v = np.empty(n)
        v[:n_low] = math.sqrt(kind.energy)
        v[n_low:] = math.sqrt(e_rest)
        return _renormalize(v, n)
    if isinstance(kind, Custom):
        v = np.asarray(kind.values, dtype=float)
        if v.size != n:
            raise ValueError(f"Custom vector has length {v.size}, expected {n}")
        if float(v @ v) == 0.0:
            raise ValueError("Custom vector must be nonzero")
        return _renormalize(v.copy(), n)
    raise TypeError(f"unknown init kind: {kind!r}")


def _renormalize(v: np.ndarray, n: int) -> np.ndarray:
    return v * math.sqrt(n / float(v @ v))


def init_matrix(kind: InitKind, n: int, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """(replicas, n) initial velocities; random kinds draw one row each."""
    if isinstance(kind, UniformSphere):
        g = rng.standard_normal((replicas, n))
        norm2 = np.einsum("ij,ij->i", g, g)
        return g * np.sqrt(n / norm2)[:, None]
    row = init_vector(kind, n, rng)
    return np.tile(row, (replicas, 1))


def init_state(kind: InitKind, n: int, seed: int = 0) -> VelocityState:
    """Build a normalized initial state; random kinds draw from the seed."""
    rng = rng_for(seed, KIND_INIT)
    return VelocityState(init_vector(kind, n, rng))


def parse_init_kind(text: str) -> InitKind:
    """Parse CLI syntax: axis | sphere | twolevel[:frac:energy] | custom:a,b,..."""
    parts = text.strip().lower().split(":")
    name = parts[0]
    if name == "axis" and len(parts) == 1:
        return AxisPoint()
    if name == "sphere" and len(parts) == 1:
        return UniformSphere()
    if name == "twolevel":
        if len(parts) == 1:
            return TwoLevel()
        if len(parts) == 3:
            return TwoLevel(fraction=float(parts[1]), energy=float(parts[2]))
        raise ValueError(f"twolevel takes 0 or 2 parameters, got {text!r}")
    if name == "custom" and len(parts) == 2:
        return Custom(tuple(float(x) for x in parts[1].split(",")))
    raise ValueError(f"unknown init kind {text!r}")


def init_kind_label(kind: InitKind) -> str:
    if isinstance(kind, AxisPoint):
        return "axis"
    if isinstance(kind, UniformSphere):
        return "sphere"
    if isinstance(kind, TwoLevel):
        return f"twolevel:{kind.fraction}:{kind.energy}"
    if isinstance(kind, Custom):
        return "custom:" + ",".join(repr(float(x)) for x in kind.values)
    raise TypeError(f"unknown init kind: {kind!r}")


# ---------------------------------------------------------------------------
# Flat CSV snapshots of states: time, v_1, ..., v_N.


def state_csv_header(n: int) -> list[str]:
    return ["time"] + [f"v_{k + 1}" for k in range(n)]


def state_csv_row(state: VelocityState) -> list[str]:
    return [repr(float(state.time))] + [repr(float(x)) for x in state.v]
