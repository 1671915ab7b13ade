"""Stochastic unraveling of continuous photodetection.

A trajectory alternates conditioned no-count evolution with one-count jumps.
Waiting times are drawn by inverting the analytic survival (no-count)
probability, so there is no time-step bias. Each trajectory owns a Philox
stream keyed by the ensemble seed and its stream index; ensembles are reduced
in fixed-size blocks of consecutive trajectories, which makes the result
independent of how blocks are spread over worker processes.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq
from scipy.stats import kstest, kstwo

from .evolution import TimeGrid
from .fockspace import DensityMatrix
from .jump_models import (
    JumpModel,
    ModelKind,
    conditioned_populations,
    no_count_probability,
    one_count_rate,
    post_no_count,
    post_one_count,
    survival_from_populations,
)

BLOCK_SIZE = 256
MIN_COINCIDENCES = 100


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        # the top counter word is reserved for the stream index, so streams never overlap
        key = int(self.seed) % 2**64
        return np.random.Generator(
            np.random.Philox(key=key, counter=[0, 0, 0, int(self.stream_index)])
        )


@dataclass
class TrajectoryRecord:
    stream_index: int
    jump_times: NDArray[np.float64]
    final_state: DensityMatrix
    grid_times: NDArray[np.float64]
    grid_populations: NDArray[np.float64]
    snapshots: list[tuple[float, DensityMatrix]] | None = None

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    @property
    def grid_mean_photon(self) -> NDArray[np.float64]:
        return self.grid_populations @ np.arange(self.grid_populations.shape[1])


@dataclass
class EnsembleStats:
    times: NDArray[np.float64]
    mean_photon: NDArray[np.float64]
    mean_photon_se: NDArray[np.float64]
    p_n: NDArray[np.float64]
    p_n_se: NDArray[np.float64]
    count_histogram: dict[int, float]
    first_jump_times: NDArray[np.float64]
    n_traj: int


@dataclass
class G2Estimate:
    g2: float
    se: float
    n_pairs: int
    n_singles: int
    n_traj: int
    window: float
    duration: float
    low_coincidences: bool = field(default=False)


# ------------------------------------------------------------ waiting time


def _uniform_open(gen: np.random.Generator) -> float:
    u = gen.random()
    while u == 0.0:
        u = gen.random()
    return u


def sample_waiting_time(
    model: JumpModel, rho: DensityMatrix, u: float, t_max: float
) -> float | None:
    """Time to the next count given a uniform draw ``u``, or None if none occurs before ``t_max``.

    Solves P_no-count(tau) = u. The E model and single-level SD states invert
    in closed form; general SD states use a bracketed root search.
    """
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie in (0, 1), got {u}")
    if not t_max > 0.0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    p = rho.data.diagonal().real
    if survival_from_populations(model, p, t_max) >= u:
        return None
    g = model.gamma
    if model.kind is ModelKind.E:
        p0 = p[0]
        return -math.log((u - p0) / (1.0 - p0)) / g
    occupied = np.flatnonzero(p > 0.0)
    if len(occupied) == 1:
        return -math.log(u) / (g * occupied[0])
    return brentq(
        lambda tau: float(survival_from_populations(model, p, tau)) - u,
        0.0,
        t_max,
        xtol=1e-300,
        rtol=4 * np.finfo(float).eps,
    )


def waiting_time_cdf(model: JumpModel, rho: DensityMatrix, tau: NDArray) -> NDArray:
    """Probability that the first count happens within tau: 1 - P_no-count(tau)."""
    return 1.0 - survival_from_populations(model, rho.data.diagonal().real, tau)


# -------------------------------------------------------------- trajectory


def run_trajectory(
    model: JumpModel,
    rho0: DensityMatrix,
    grid: TimeGrid,
    rng: RngStream,
    *,
    keep_snapshots: bool = False,
) -> TrajectoryRecord:
    gen = rng.generator()
    times = grid.times
    t1 = times[-1]
    state = rho0
    t = times[0]
    jumps: list[float] = []
    pops = np.empty((len(times), rho0.dim))
    snaps: list[tuple[float, DensityMatrix]] | None = [] if keep_snapshots else None
    k = 0

    while True:
        tau = sample_waiting_time(model, state, _uniform_open(gen), t1 - t) if t < t1 else None
        t_end = math.inf if tau is None else t + tau
        k_stop = k
        while k_stop < len(times) and times[k_stop] < t_end:
            k_stop += 1
        if k_stop > k:
            dts = times[k:k_stop] - t
            pops[k:k_stop] = conditioned_populations(model, state.data.diagonal().real, dts)
            if snaps is not None:
                snaps.extend((float(tg), post_no_count(model, state, dtg)) for tg, dtg in zip(times[k:k_stop], dts))
            k = k_stop
        if tau is None:
            state = post_no_count(model, state, t1 - t)
            break
        state = post_one_count(model, post_no_count(model, state, tau))
        t = t + tau
        jumps.append(t)

    return TrajectoryRecord(
        stream_index=rng.stream_index,
        jump_times=np.array(jumps),
        final_state=state,
        grid_times=times,
        grid_populations=pops,
        snapshots=snaps,
    )


def jump_times(
    model: JumpModel,
    rho0: DensityMatrix,
    t_end: float,
    rng: RngStream,
    *,
    first_survival: float | None = None,
) -> NDArray[np.float64]:
    """Count times on [0, t_end] without recording states.

    ``first_survival`` is P_no-count(t_end) for ``rho0``; passing it lets
    callers that reuse one initial state skip the common no-count case.
    """
    gen = rng.generator()
    u = _uniform_open(gen)
    if first_survival is not None and u <= first_survival:
        return np.empty(0)
    out: list[float] = []
    state, t = rho0, 0.0
    while t < t_end:
        tau = sample_waiting_time(model, state, u, t_end - t)
        if tau is None:
            break
        state = post_one_count(model, post_no_count(model, state, tau))
        t += tau
        out.append(t)
        u = _uniform_open(gen)
    return np.array(out)


# ---------------------------------------------------------------- ensemble


def _block_ranges(n: int) -> list[tuple[int, int]]:
    return [(s, min(s + BLOCK_SIZE, n)) for s in range(0, n, BLOCK_SIZE)]


def _map_blocks(fn, args: list, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args))


def _ensemble_block(args):
    model, rho0, grid, seed, start, stop = args
    n_t = len(grid.times)
    s1 = np.zeros((n_t, rho0.dim))
    s2 = np.zeros((n_t, rho0.dim))
    m1 = np.zeros(n_t)
    m2 = np.zeros(n_t)
    counts: Counter = Counter()
    first = np.full(stop - start, np.nan)
    levels = np.arange(rho0.dim)
    for i in range(start, stop):
        rec = run_trajectory(model, rho0, grid, RngStream(seed, i))
        p = rec.grid_populations
        m = p @ levels
        s1 += p
        s2 += p * p
        m1 += m
        m2 += m * m
        counts[rec.n_jumps] += 1
        if rec.n_jumps:
            first[i - start] = rec.jump_times[0] - grid.t0
    return s1, s2, m1, m2, counts, first


def _mean_se(total, total_sq, n):
    mean = total / n
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    var = np.clip((total_sq - n * mean * mean) / (n - 1), 0.0, None)
    return mean, np.sqrt(var / n)


def ensemble(
    model: JumpModel,
    rho0: DensityMatrix,
    grid: TimeGrid,
    n_traj: int,
    seed: int,
    *,
    workers: int = 1,
) -> EnsembleStats:
    """Run ``n_traj`` trajectories and estimate n̄(t) and p_n(t) with standard errors."""
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    jobs = [(model, rho0, grid, seed, a, b) for a, b in _block_ranges(n_traj)]
    parts = _map_blocks(_ensemble_block, jobs, workers)

    n_t = len(grid.times)
    s1 = np.zeros((n_t, rho0.dim))
    s2 = np.zeros_like(s1)
    m1 = np.zeros(n_t)
    m2 = np.zeros(n_t)
    counts: Counter = Counter()
    firsts = []
    for a1, a2, b1, b2, c, f in parts:
        s1 += a1
        s2 += a2
        m1 += b1
        m2 += b2
        counts.update(c)
        firsts.append(f)

    mean, mean_se = _mean_se(m1, m2, n_traj)
    p, p_se = _mean_se(s1, s2, n_traj)
    return EnsembleStats(
        times=grid.times,
        mean_photon=mean,
        mean_photon_se=mean_se,
        p_n=p,
        p_n_se=p_se,
        count_histogram={k: counts[k] / n_traj for k in sorted(counts)},
        first_jump_times=np.concatenate(firsts),
        n_traj=n_traj,
    )


def consistency_fraction(
    stats: EnsembleStats, reference_mean: NDArray, n_sigma: float = 3.0
) -> float:
    """Fraction of grid points where the ensemble mean lies within n_sigma SE of the reference."""
    diff = np.abs(stats.mean_photon - np.asarray(reference_mean))
    se = np.nan_to_num(stats.mean_photon_se, nan=0.0)
    ok = diff <= n_sigma * se + 1e-12 * np.maximum(1.0, np.abs(reference_mean))
    return float(np.mean(ok))


def waiting_time_ks(
    model: JumpModel, rho0: DensityMatrix, first_jump_times: NDArray, t_max: float, alpha: float = 0.01
) -> dict[str, float]:
    """KS test of observed first-count times against the analytic law.

    Trajectories without a count before ``t_max`` are censored, so the test
    uses the law conditioned on a count occurring within ``t_max``.
    """
    sample = np.asarray(first_jump_times)
    sample = sample[np.isfinite(sample)]
    if len(sample) == 0:
        raise ValueError("no counts observed; waiting-time law cannot be tested")
    norm = float(waiting_time_cdf(model, rho0, t_max))
    res = kstest(sample, lambda x: np.clip(waiting_time_cdf(model, rho0, x) / norm, 0.0, 1.0))
    crit = float(kstwo.ppf(1.0 - alpha, len(sample)))
    return {
        "statistic": float(res.statistic),
        "pvalue": float(res.pvalue),
        "critical_value": crit,
        "n": int(len(sample)),
        "passed": bool(res.statistic < crit),
    }


# ------------------------------------------------------------------ g2


def _g2_block(args):
    model, rho0, window, duration, seed, start, stop, first_survival = args
    c1 = np.zeros(stop - start)
    c2 = np.zeros(stop - start)
    for i in range(start, stop):
        ts = jump_times(model, rho0, duration + window, RngStream(seed, i), first_survival=first_survival)
        if len(ts) == 0:
            continue
        starts = ts[ts < duration]
        c1[i - start] = len(starts)
        # pairs (t_a, t_b) with t_a < duration and 0 < t_b - t_a < window
        idx = np.searchsorted(ts, starts + window, side="left")
        c2[i - start] = float(np.sum(idx - np.arange(len(starts)) - 1))
    return c1, c2


def expected_trajectories(
    model: JumpModel, rho0: DensityMatrix, window: float, target: int, duration: float | None = None
) -> int:
    """Trajectories needed for ``target`` coincidences at leading order in the window."""
    duration = window if duration is None else duration
    rate = one_count_rate(model, rho0)
    cond = one_count_rate(model, post_one_count(model, rho0))
    per_traj = rate * cond * window * duration
    if per_traj <= 0.0:
        raise ValueError("state produces no coincidences at leading order")
    return int(math.ceil(target / per_traj))


def mc_g2(
    model: JumpModel,
    rho0: DensityMatrix,
    window: float,
    n_traj: int,
    seed: int,
    *,
    duration: float | None = None,
    workers: int = 1,
) -> G2Estimate:
    """Monte Carlo zero-delay coincidence ratio.

    Singles are counts in [0, duration); a coincidence is any later count
    within ``window`` of a single. With per-trajectory means s and c,
    g2 = c * duration / (window * s^2), which tends to the immediate
    conditional-rate ratio as window and duration shrink. The standard error
    follows from the delta method on the per-trajectory sample covariance.
    """
    if not window > 0.0:
        raise ValueError(f"window must be positive, got {window}")
    if n_traj < 2:
        raise ValueError("mc_g2 needs at least two trajectories")
    duration = window if duration is None else float(duration)
    first_survival = no_count_probability(model, rho0, duration + window)
    jobs = [
        (model, rho0, window, duration, seed, a, b, first_survival)
        for a, b in _block_ranges(n_traj)
    ]
    parts = _map_blocks(_g2_block, jobs, workers)
    c1 = np.concatenate([p[0] for p in parts])
    c2 = np.concatenate([p[1] for p in parts])

    n_singles, n_pairs = int(c1.sum()), int(c2.sum())
    s, c = c1.mean(), c2.mean()
    if n_singles == 0 or n_pairs == 0:
        return G2Estimate(
            g2=0.0 if n_singles else math.nan,
            se=math.inf,
            n_pairs=n_pairs,
            n_singles=n_singles,
            n_traj=n_traj,
            window=window,
            duration=duration,
            low_coincidences=True,
        )
    g2 = c * duration / (window * s * s)
    cov = np.cov(np.vstack([c1, c2]), ddof=1) / n_traj
    rel_var = cov[1, 1] / c**2 + 4.0 * cov[0, 0] / s**2 - 4.0 * cov[0, 1] / (s * c)
    return G2Estimate(
        g2=float(g2),
        se=float(g2 * math.sqrt(max(rel_var, 0.0))),
        n_pairs=n_pairs,
        n_singles=n_singles,
        n_traj=n_traj,
        window=window,
        duration=duration,
        low_coincidences=n_pairs < MIN_COINCIDENCES,
    )
