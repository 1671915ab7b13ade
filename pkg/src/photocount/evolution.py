"""Unconditioned field evolution under continuous detection.

Averaging over all count records gives the master equation

    d rho/dt = -i omega0 [n, rho] + gamma (A rho A^dag - 1/2 {A^dag A, rho})

with ``A`` the model's lowering operator. :func:`evolve` integrates it with a
classical RK4 step and step-doubling error control. Diagonal initial states
can instead use the exact photon-number solution (binomial thinning for SD,
Poisson-distributed downward shifts for E).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import cumulative_simpson
from scipy.stats import binom, poisson

from .fockspace import DensityMatrix, mean_photon
from .jump_models import JumpModel, ModelKind, one_count_rate, post_one_count

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """The adaptive integrator could not meet its tolerance."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    steps: int

    def __post_init__(self) -> None:
        if not self.t1 > self.t0:
            raise ValueError(f"time grid needs t1 > t0, got [{self.t0}, {self.t1}]")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"time grid needs an integer number of steps >= 1, got {self.steps}")

    @property
    def times(self) -> NDArray[np.float64]:
        return np.linspace(self.t0, self.t1, int(self.steps) + 1)


@dataclass(frozen=True)
class EvolutionResult:
    times: NDArray[np.float64]
    states: list[DensityMatrix]
    mean_photon: NDArray[np.float64]
    vacuum_prob: NDArray[np.float64]
    trace_residual: NDArray[np.float64]
    n_steps: int = 0
    n_rejected: int = 0

    @property
    def populations(self) -> NDArray[np.float64]:
        return np.array([s.data.diagonal().real for s in self.states])


# --------------------------------------------------------------- generator


def _generator_parts(model: JumpModel, dim: int):
    A = model.lowering(dim)
    AdA = np.diag(model.jump_generator_diagonal(dim)).astype(np.complex128)
    H = model.omega0 * np.diag(np.arange(dim, dtype=np.float64)).astype(np.complex128)
    # -iH rho + rho iH - gamma/2 {AdA, rho} == K rho + rho K^dag
    K = -1j * H - 0.5 * model.gamma * AdA
    return A, K


def _rhs(A, Ad, K, Kd, gamma, rho):
    return gamma * (A @ rho @ Ad) + K @ rho + rho @ Kd


def lindblad_rhs(model: JumpModel, rho: DensityMatrix | NDArray) -> NDArray[np.complex128]:
    """Time derivative of the averaged field density matrix."""
    data = np.asarray(getattr(rho, "data", rho), dtype=np.complex128)
    A, K = _generator_parts(model, data.shape[0])
    return _rhs(A, A.conj().T, K, K.conj().T, model.gamma, data)


def population_rhs(model: JumpModel, p: NDArray) -> NDArray[np.float64]:
    """Photon-number rate equations written out explicitly.

    SD: dp_n/dt = gamma ((n+1) p_{n+1} - n p_n).
    E:  dp_0/dt = gamma p_1, dp_n/dt = gamma (p_{n+1} - p_n) for n >= 1.
    """
    p = np.asarray(p, dtype=np.float64)
    up = np.append(p[1:], 0.0)
    n = np.arange(len(p), dtype=np.float64)
    if model.kind is ModelKind.SD:
        return model.gamma * ((n + 1.0) * up - n * p)
    out = model.gamma * (up - p)
    out[0] = model.gamma * p[1]
    return out


# ---------------------------------------------------------------- solvers


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_rk4(f, y0, times, rtol, atol, h0, h_min):
    """RK4 with step doubling; returns the state at every requested time."""
    out = [y0.copy()]
    y = y0.copy()
    t = times[0]
    h = h0
    n_steps = n_rej = 0
    for t_next in times[1:]:
        while t < t_next:
            h_try = min(h, t_next - t)
            last = h_try == t_next - t
            big = _rk4(f, y, h_try)
            half = _rk4(f, y, 0.5 * h_try)
            small = _rk4(f, half, 0.5 * h_try)
            diff = small - big
            scale = atol + rtol * np.max(np.abs(small))
            err = np.max(np.abs(diff)) / 15.0 / scale
            if err <= 1.0:
                # local extrapolation: fifth-order accurate
                y = small + diff / 15.0
                t = t_next if last else t + h_try
                n_steps += 1
                fac = 2.0 if err == 0.0 else min(2.0, max(0.2, 0.9 * err ** -0.2))
                if not last or fac < 1.0:
                    h = h_try * fac
            else:
                n_rej += 1
                h = h_try * max(0.2, 0.9 * err ** -0.2)
                if h < h_min:
                    raise IntegrationError(
                        f"step size {h:.3e} below minimum {h_min:.3e} at t={t:.6g} "
                        f"(error estimate {err * scale:.3e})"
                    )
        out.append(y.copy())
    return out, n_steps, n_rej


def exact_populations(model: JumpModel, p0: NDArray, t: float) -> NDArray[np.float64]:
    """Closed-form solution of the photon-number rate equations at time t.

    SD: each photon survives independently with probability exp(-gamma t), so
    p_n(t) = sum_k p_k Binom(n; k, exp(-gamma t)).
    E: while n >= 1 the field loses photons one at a time at rate gamma, so the
    number of losses is Poisson(gamma t) truncated at the initial photon count.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    dim = len(p0)
    k = np.arange(dim)
    if model.kind is ModelKind.SD:
        s = np.exp(-model.gamma * t)
        # T[n, k] = P(n survivors | k photons)
        T = binom.pmf(k[:, None], k[None, :], s)
        return T @ p0
    lam = model.gamma * t
    T = np.zeros((dim, dim))
    for kk in range(1, dim):
        T[1 : kk + 1, kk] = poisson.pmf(kk - np.arange(1, kk + 1), lam)
    T[0, :] = 1.0 - T[1:, :].sum(axis=0)
    T[0, 0] = 1.0
    return T @ p0


def evolve(
    model: JumpModel,
    rho0: DensityMatrix,
    grid: TimeGrid,
    *,
    method: str = "rk4",
    rtol: float = 1e-9,
    atol: float = 1e-13,
    h_min: float | None = None,
) -> EvolutionResult:
    """Integrate the averaged master equation over ``grid``.

    ``method`` is ``"rk4"`` (adaptive RK4 on the full matrix), ``"exact"``
    (closed-form populations; diagonal inputs only) or ``"auto"`` (exact when
    the input is diagonal, RK4 otherwise).
    """
    times = grid.times
    if method == "auto":
        method = "exact" if rho0.is_diagonal() else "rk4"

    if method == "exact":
        if not rho0.is_diagonal():
            raise ValueError("exact population evolution needs a diagonal initial state")
        p0 = rho0.data.diagonal().real
        p0 = p0.copy()
        mats = [np.diag(exact_populations(model, p0, t - times[0])) for t in times]
        n_steps = n_rej = 0
    elif method == "rk4":
        A, K = _generator_parts(model, rho0.dim)
        Ad, Kd = A.conj().T, K.conj().T
        rate_scale = model.gamma * float(model.jump_generator_diagonal(rho0.dim).max()) + abs(
            model.omega0
        ) * (rho0.dim - 1)
        h0 = min(0.5 / rate_scale, float(times[1] - times[0]))
        if h_min is None:
            h_min = 1e-12 * (times[-1] - times[0])
        mats, n_steps, n_rej = _integrate_rk4(
            lambda r: _rhs(A, Ad, K, Kd, model.gamma, r),
            rho0.data.copy(),
            times,
            rtol,
            atol,
            h0,
            h_min,
        )
        log.debug("rk4: %d steps, %d rejected", n_steps, n_rej)
    else:
        raise ValueError(f"unknown evolution method {method!r}")

    states = [DensityMatrix(m) for m in mats]
    return EvolutionResult(
        times=times,
        states=states,
        mean_photon=np.array([mean_photon(s) for s in states]),
        vacuum_prob=np.array([s.data[0, 0].real for s in states]),
        trace_residual=np.array([s.trace - 1.0 for s in states]),
        n_steps=n_steps,
        n_rejected=n_rej,
    )


def sd_mean_closed_form(nbar0: float, gamma: float, t: float | NDArray) -> float | NDArray:
    """n̄(t) = n̄(0) exp(-gamma t) under the SD model, for any initial field."""
    return nbar0 * np.exp(-gamma * np.asarray(t, dtype=np.float64))


def e_mean_from_vacuum(
    nbar0: float, gamma: float, times: NDArray, vacuum_prob: NDArray
) -> NDArray[np.float64]:
    """n̄(0) + gamma * int_0^t (p_0 - 1) dt', composite Simpson on the given samples."""
    integral = cumulative_simpson(np.asarray(vacuum_prob) - 1.0, x=np.asarray(times), initial=0.0)
    return nbar0 + gamma * integral


# --------------------------------------------------------------- coherence


def conditional_rate(model: JumpModel, rho: DensityMatrix) -> float:
    """Count rate immediately after a count has been registered."""
    return one_count_rate(model, post_one_count(model, rho))


def g2_immediate(model: JumpModel, rho: DensityMatrix) -> float:
    """Zero-delay second-order coherence: conditional rate over the rate before the count."""
    rate = one_count_rate(model, rho)
    return conditional_rate(model, rho) / rate
