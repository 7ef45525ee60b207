"""Replica-vectorized Monte Carlo drivers.

The collision maps do not depend on the event time, so within one grid
interval a trajectory is determined by the ordered iid marks alone.  Each
block therefore draws Poisson event counts per replica and interval, then
applies the marks round-by-round across all still-active replicas with
array operations.  This realizes exactly the same law as the sequential
event stream at a fraction of the cost.

Blocks are fixed slices of the replica range, each with its own generator
derived from (seed, kind, block); results merge in block order, so output
is independent of how many workers ran the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import Formulation, InitKind, init_matrix
from .events import (
    KIND_BLOCK_COUPLED,
    KIND_BLOCK_MEANFIELD,
    KIND_BLOCK_SINGLE,
    pair_tables,
    rng_for,
)
from .stats import RunningMeanVar

ENERGY_DRIFT_TOL = 1e-9  # |sum v^2 - N| <= tol * N at every recording time

DEFAULT_BATCH = 8192


def _blocks(replicas: int, batch_size: int) -> list[tuple[int, int]]:
    if replicas < 1:
        raise ValueError("need at least 1 replica")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [
        (lo, min(lo + batch_size, replicas)) for lo in range(0, replicas, batch_size)
    ]


def run_blocks(fn, n_blocks: int, workers: int = 1) -> list:
    """Evaluate fn(block_index) for every block, in index order.

    Worker count only affects scheduling; the returned list order (and so
    any downstream merge) is fixed by the block index.
    """
    if workers <= 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_blocks)))


def _draw_marks(rng, active: int, n_pairs: int):
    codes = rng.integers(0, n_pairs, size=active)
    theta = rng.uniform(-math.pi, math.pi, size=active)
    theta[theta == -math.pi] = math.pi
    return codes, np.cos(theta), np.sin(theta)


def _radial_arrays(vi, vj, c, s):
    total = vi * vi + vj * vj
    e_i = total * (c * c)
    e_j = total - e_i
    return np.copysign(np.sqrt(e_i), c), np.copysign(np.sqrt(e_j), -s)


def _rotation_arrays(vi, vj, c, s):
    a = vi * c + vj * s
    b = vj * c - vi * s
    pre = vi * vi + vj * vj
    post = a * a + b * b
    k = np.sqrt(np.where(post > 0.0, pre / np.where(post > 0.0, post, 1.0), 1.0))
    return a * k, b * k


def _check_conservation(states: np.ndarray, n: int) -> None:
    drift = np.abs(np.einsum("ij,ij->i", states, states) - n)
    worst = float(drift.max()) if drift.size else 0.0
    if worst > ENERGY_DRIFT_TOL * n:
        raise AssertionError(
            f"energy drift {worst:.3e} exceeds {ENERGY_DRIFT_TOL * n:.3e}"
        )


@dataclass
class CoupledBlockResult:
    cost2e: np.ndarray  # (replicas, grid)
    cost4: np.ndarray  # (replicas, grid)
    uncollided: np.ndarray  # (replicas, grid) fraction of particles with tau_i > t
    rate_per_particle: np.ndarray  # (replicas,)
    sign_ok: np.ndarray  # (replicas,) bool
    n_events: int


def coupled_block(
    n: int,
    replicas: int,
    grid: np.ndarray,
    init_v: InitKind,
    init_w: InitKind,
    seed: int,
    block: int,
    formulation: Formulation = Formulation.RADIAL,
) -> CoupledBlockResult:
    """One block of coupled replicas under shared events.

    Both systems always advance in velocity form; with the energy
    formulation requested, energy shadow states are co-evolved, checked
    against the squared velocities, and used as the cost2E source.
    """
    if formulation is Formulation.ROTATION:
        raise ValueError("the coupling runs on the radial or energy formulation")
    rng = rng_for(seed, KIND_BLOCK_COUPLED, block)
    i_of, j_of = pair_tables(n)
    n_pairs = i_of.size
    v = init_matrix(init_v, n, replicas, rng)
    w = init_matrix(init_w, n, replicas, rng)
    with_shadow = formulation is Formulation.ENERGY
    if with_shadow:
        ev_sh = v * v
        ew_sh = w * w

    g_pts = grid.size
    cost2e = np.empty((replicas, g_pts))
    cost4 = np.empty((replicas, g_pts))
    uncoll = np.empty((replicas, g_pts))
    collided = np.zeros((replicas, n), dtype=bool)
    counts = np.zeros(replicas, dtype=np.int64)
    sign_ok = np.ones(replicas, dtype=bool)
    rows = np.arange(replicas)

    def record(g):
        if with_shadow:
            d = ev_sh - ew_sh
        else:
            d = v * v - w * w
        cost2e[:, g] = np.mean(d * d, axis=1)
        cost4[:, g] = np.mean((v - w) ** 4, axis=1)
        uncoll[:, g] = 1.0 - collided.mean(axis=1)

    record(0)
    n_events = 0
    for g in range(1, g_pts):
        dt = grid[g] - grid[g - 1]
        n_ev = rng.poisson(n * dt, size=replicas)
        n_events += int(n_ev.sum())
        counts += n_ev
        rounds = int(n_ev.max()) if replicas else 0
        for r in range(rounds):
            act = rows[n_ev > r]
            codes, c, s = _draw_marks(rng, act.size, n_pairs)
            ci = i_of[codes]
            cj = j_of[codes]
            vi, vj = _radial_arrays(v[act, ci], v[act, cj], c, s)
            wi, wj = _radial_arrays(w[act, ci], w[act, cj], c, s)
            v[act, ci] = vi
            v[act, cj] = vj
            w[act, ci] = wi
            w[act, cj] = wj
            if with_shadow:
                ei, ej = _energy_arrays(ev_sh[act, ci], ev_sh[act, cj], c)
                ev_sh[act, ci] = ei
                ev_sh[act, cj] = ej
                fi, fj = _energy_arrays(ew_sh[act, ci], ew_sh[act, cj], c)
                ew_sh[act, ci] = fi
                ew_sh[act, cj] = fj
            sign_ok[act] &= (vi * wi >= 0) & (vj * wj >= 0)
            collided[act, ci] = True
            collided[act, cj] = True
        record(g)

    _check_conservation(v, n)
    _check_conservation(w, n)
    if with_shadow:
        drift = np.abs(v * v - ev_sh)
        if float(drift.max()) > 1e-9 * n:
            raise AssertionError("radial and energy representations diverged")
    horizon = float(grid[-1])
    # every event touches two particles
    rate = counts * (2.0 / (n * horizon))
    return CoupledBlockResult(
        cost2e=cost2e,
        cost4=cost4,
        uncollided=uncoll,
        rate_per_particle=rate,
        sign_ok=sign_ok,
        n_events=n_events,
    )


def _energy_arrays(ei, ej, c):
    total = ei + ej
    out_i = total * (c * c)
    return out_i, total - out_i


@dataclass
class CoupledEstimates:
    """Merged coupled-run statistics over all replicas."""

    times: np.ndarray
    mean2e: np.ndarray
    stderr2e: np.ndarray
    mean4: np.ndarray
    stderr4: np.ndarray
    survival: np.ndarray
    survival_stderr: np.ndarray
    rate_mean: float
    rate_stderr: float
    sign_fraction: float
    replicas: int
    n_events: int
    final_v: np.ndarray | None = None
    final_w: np.ndarray | None = None


def coupled_estimates(
    n: int,
    replicas: int,
    horizon: float,
    grid_points: int,
    init_v: InitKind,
    init_w: InitKind,
    seed: int,
    formulation: Formulation = Formulation.RADIAL,
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> CoupledEstimates:
    """Monte Carlo estimates of both coupling costs plus telemetry."""
    grid = np.linspace(0.0, horizon, grid_points)
    blocks = _blocks(replicas, batch_size)

    def job(b):
        lo, hi = blocks[b]
        return coupled_block(
            n, hi - lo, grid, init_v, init_w, seed, b, formulation=formulation
        )

    results = run_blocks(job, len(blocks), workers)
    acc2 = RunningMeanVar()
    acc4 = RunningMeanVar()
    acc_surv = RunningMeanVar()
    acc_rate = RunningMeanVar()
    sign_hits = 0
    n_events = 0
    for res in results:
        acc2.update_batch(res.cost2e)
        acc4.update_batch(res.cost4)
        acc_surv.update_batch(res.uncollided)
        acc_rate.update_batch(res.rate_per_particle[:, None])
        sign_hits += int(res.sign_ok.sum())
        n_events += res.n_events
    return CoupledEstimates(
        times=grid,
        mean2e=acc2.mean,
        stderr2e=acc2.stderr(),
        mean4=acc4.mean,
        stderr4=acc4.stderr(),
        survival=acc_surv.mean,
        survival_stderr=acc_surv.stderr(),
        rate_mean=float(acc_rate.mean[0]),
        rate_stderr=float(acc_rate.stderr()[0]),
        sign_fraction=sign_hits / replicas,
        replicas=replicas,
        n_events=n_events,
    )


@dataclass
class SingleBlockResult:
    m2: np.ndarray  # (replicas, grid) mean energy per particle
    m4: np.ndarray  # (replicas, grid) mean fourth moment per particle
    first_coord: np.ndarray  # (replicas,) terminal v_1
    n_events: int


def single_block(
    n: int,
    replicas: int,
    grid: np.ndarray,
    init: InitKind,
    seed: int,
    block: int,
    formulation: Formulation = Formulation.RADIAL,
    path: int = 0,
) -> SingleBlockResult:
    """One block of independent single-system trajectories."""
    if formulation is Formulation.ENERGY:
        raise ValueError("single-system runs track velocities")
    rng = rng_for(seed, KIND_BLOCK_SINGLE, path, block)
    i_of, j_of = pair_tables(n)
    n_pairs = i_of.size
    v = init_matrix(init, n, replicas, rng)
    update = (
        _rotation_arrays if formulation is Formulation.ROTATION else _radial_arrays
    )

    g_pts = grid.size
    m2 = np.empty((replicas, g_pts))
    m4 = np.empty((replicas, g_pts))
    rows = np.arange(replicas)

    def record(g):
        sq = v * v
        m2[:, g] = sq.mean(axis=1)
        m4[:, g] = (sq * sq).mean(axis=1)

    record(0)
    n_events = 0
    for g in range(1, g_pts):
        dt = grid[g] - grid[g - 1]
        n_ev = rng.poisson(n * dt, size=replicas)
        n_events += int(n_ev.sum())
        rounds = int(n_ev.max()) if replicas else 0
        for r in range(rounds):
            act = rows[n_ev > r]
            codes, c, s = _draw_marks(rng, act.size, n_pairs)
            ci = i_of[codes]
            cj = j_of[codes]
            vi, vj = update(v[act, ci], v[act, cj], c, s)
            v[act, ci] = vi
            v[act, cj] = vj
        record(g)

    _check_conservation(v, n)
    return SingleBlockResult(
        m2=m2, m4=m4, first_coord=v[:, 0].copy(), n_events=n_events
    )


def single_moment_series(
    n: int,
    replicas: int,
    horizon: float,
    grid_points: int,
    init: InitKind,
    formulation: Formulation,
    seed: int,
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
    path: int = 0,
):
    """Replica mean and stderr of sum(v^4) and (1/N) sum(v^4) over a grid.

    Returns (times, sum4_mean, sum4_stderr, m4_mean, m4_stderr).
    """
    grid = np.linspace(0.0, horizon, grid_points)
    blocks = _blocks(replicas, batch_size)

    def job(b):
        lo, hi = blocks[b]
        return single_block(
            n, hi - lo, grid, init, seed, b, formulation=formulation, path=path
        )

    results = run_blocks(job, len(blocks), workers)
    acc = RunningMeanVar()
    for res in results:
        acc.update_batch(res.m4)
    m4_mean = acc.mean
    m4_err = acc.stderr()
    return grid, n * m4_mean, n * m4_err, m4_mean, m4_err


@dataclass
class MeanfieldBlockResult:
    cost: np.ndarray  # (replicas, grid)
    energy_v: np.ndarray
    energy_w: np.ndarray
    sign_ok: np.ndarray
    n_events: int


def meanfield_coupled_block(
    m: int,
    replicas: int,
    grid: np.ndarray,
    init_v: np.ndarray,
    init_w: np.ndarray,
    seed: int,
    block: int,
) -> MeanfieldBlockResult:
    """One block of coupled nonlinear replicas with shared-index partners.

    The partner pair is read at one shared uniform sample index, the
    mean-field limit of the finite-N shared pair clocks.  The rank-based
    partner scheme is inherently sequential and lives in the meanfield
    module's per-replica runner.
    """
    rng = rng_for(seed, KIND_BLOCK_MEANFIELD, block)
    rate = 2.0 * m
    v = np.tile(init_v, (replicas, 1))
    w = np.tile(init_w, (replicas, 1))
    g_pts = grid.size
    cost = np.empty((replicas, g_pts))
    en_v = np.empty((replicas, g_pts))
    en_w = np.empty((replicas, g_pts))
    sign_ok = np.ones(replicas, dtype=bool)
    rows = np.arange(replicas)

    def record(g):
        d = v * v - w * w
        cost[:, g] = np.mean(d * d, axis=1)
        en_v[:, g] = np.mean(v * v, axis=1)
        en_w[:, g] = np.mean(w * w, axis=1)

    record(0)
    n_events = 0
    for g in range(1, g_pts):
        dt = grid[g] - grid[g - 1]
        n_ev = rng.poisson(rate * dt, size=replicas)
        n_events += int(n_ev.sum())
        rounds = int(n_ev.max()) if replicas else 0
        for r in range(rounds):
            act = rows[n_ev > r]
            k = rng.integers(0, m, size=act.size)
            theta = rng.uniform(-math.pi, math.pi, size=act.size)
            theta[theta == -math.pi] = math.pi
            c = np.cos(theta)
            u = rng.random(act.size)
            part = np.minimum((u * m).astype(np.int64), m - 1)
            pv = v[act, part]
            pw = w[act, part]
            vk = v[act, k]
            wk = w[act, k]
            nv = np.sqrt(vk * vk + pv * pv) * c
            nw = np.sqrt(wk * wk + pw * pw) * c
            v[act, k] = nv
            w[act, k] = nw
            sign_ok[act] &= nv * nw >= 0
        record(g)

    return MeanfieldBlockResult(
        cost=cost, energy_v=en_v, energy_w=en_w, sign_ok=sign_ok, n_events=n_events
    )


@dataclass
class MeanfieldEstimates:
    times: np.ndarray
    mean_cost: np.ndarray
    stderr_cost: np.ndarray
    mean_energy_v: np.ndarray
    stderr_energy_v: np.ndarray
    mean_energy_w: np.ndarray
    sign_fraction: float
    replicas: int
    n_events: int


def meanfield_estimates(
    m: int,
    replicas: int,
    horizon: float,
    grid_points: int,
    init_v,
    init_w,
    seed: int,
    partner: str = "index",
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> MeanfieldEstimates:
    """Replica-averaged coupled nonlinear cost and energy series.

    The default shared-index partner scheme runs on the vectorized block
    engine; the rank scheme falls back to the sequential per-replica
    runner (each replica's stream derived from (seed, replica))."""
    from .meanfield import MeanfieldConfig, ensemble_vector, run_nonlinear_coupled

    grid = np.linspace(0.0, horizon, grid_points)
    acc_cost = RunningMeanVar()
    acc_ev = RunningMeanVar()
    acc_ew = RunningMeanVar()
    sign_hits = 0
    n_events = 0
    if partner == "index":
        vec_v = ensemble_vector(init_v, m)
        vec_w = ensemble_vector(init_w, m)
        blocks = _blocks(replicas, batch_size)

        def job(b):
            lo, hi = blocks[b]
            return meanfield_coupled_block(m, hi - lo, grid, vec_v, vec_w, seed, b)

        for res in run_blocks(job, len(blocks), workers):
            acc_cost.update_batch(res.cost)
            acc_ev.update_batch(res.energy_v)
            acc_ew.update_batch(res.energy_w)
            sign_hits += int(res.sign_ok.sum())
            n_events += res.n_events
    else:

        def job(replica):
            return run_nonlinear_coupled(
                MeanfieldConfig(
                    ensemble_size=m,
                    horizon=horizon,
                    seed=seed,
                    replica=replica,
                    grid_points=grid_points,
                    init_v=init_v,
                    init_w=init_w,
                    partner=partner,
                )
            )

        for run in run_blocks(job, replicas, workers):
            acc_cost.update_batch(run.cost_series[None, :])
            acc_ev.update_batch(run.energy_v[None, :])
            acc_ew.update_batch(run.energy_w[None, :])
            sign_hits += int(run.sign_agreement)
            n_events += run.n_events

    return MeanfieldEstimates(
        times=grid,
        mean_cost=acc_cost.mean,
        stderr_cost=acc_cost.stderr(),
        mean_energy_v=acc_ev.mean,
        stderr_energy_v=acc_ev.stderr(),
        mean_energy_w=acc_ew.mean,
        sign_fraction=sign_hits / replicas,
        replicas=replicas,
        n_events=n_events,
    )


def single_terminal_samples(
    n: int,
    replicas: int,
    horizon: float,
    init: InitKind,
    formulation: Formulation,
    seed: int,
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
    path: int = 0,
):
    """Terminal v_1 and (1/N) sum v^4 samples across replicas.

    Used by the law-equivalence experiment, which compares these samples
    between the rotation and radial formulations.
    """
    grid = np.array([0.0, horizon])
    blocks = _blocks(replicas, batch_size)

    def job(b):
        lo, hi = blocks[b]
        return single_block(
            n, hi - lo, grid, init, seed, b, formulation=formulation, path=path
        )

    results = run_blocks(job, len(blocks), workers)
    v1 = np.concatenate([res.first_coord for res in results])
    m4 = np.concatenate([res.m4[:, -1] for res in results])
    n_events = sum(res.n_events for res in results)
    return v1, m4, n_events
