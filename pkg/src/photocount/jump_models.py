"""One-count and no-count superoperators of the SD and E photodetection models.

Both models share the jump structure ``J rho = gamma * A rho A^dag`` and the
no-count propagator ``S_tau rho = exp(Y tau) rho exp(Y^dag tau)`` with
``Y = -i omega0 n - gamma/2 A^dag A``. They differ only in the lowering
operator: ``A = a`` (SD) or ``A = E = (n + 1)^(-1/2) a`` (E).

``A^dag A`` is diagonal in the Fock basis for both choices (``n`` and the
projector onto n >= 1), and it commutes with ``n``, so ``exp(Y tau)`` is a
diagonal matrix of amplitudes. The no-count maps below use those closed-form
amplitudes instead of integrating anything.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .fockspace import (
    DensityMatrix,
    UnnormalizedDensity,
    annihilation,
    e_lowering,
    mean_photon,
)


class ModelKind(str, enum.Enum):
    SD = "SD"
    E = "E"


class ConditioningError(ValueError):
    """Conditioning on an event that has zero probability."""


@dataclass(frozen=True)
class JumpModel:
    """A jump model family together with its count-rate constant.

    ``gamma`` has units of 1/time. Using the same value for both kinds matches
    their count rates on the one-photon Fock state.
    """

    kind: ModelKind
    gamma: float = 1.0
    omega0: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not (math.isfinite(self.gamma) and self.gamma > 0.0):
            raise ValueError(f"gamma must be finite and positive, got {self.gamma}")
        if not math.isfinite(self.omega0):
            raise ValueError(f"omega0 must be finite, got {self.omega0}")

    def lowering(self, dim: int) -> NDArray[np.complex128]:
        return annihilation(dim) if self.kind is ModelKind.SD else e_lowering(dim)

    def jump_generator_diagonal(self, dim: int) -> NDArray[np.float64]:
        """Diagonal of A^dag A."""
        n = np.arange(dim, dtype=np.float64)
        if self.kind is ModelKind.SD:
            return n
        return (n > 0).astype(np.float64)


def SD(gamma: float = 1.0, omega0: float = 0.0) -> JumpModel:
    return JumpModel(ModelKind.SD, gamma, omega0)


def E(gamma: float = 1.0, omega0: float = 0.0) -> JumpModel:
    return JumpModel(ModelKind.E, gamma, omega0)


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau >= 0.0:
        raise ValueError(f"time interval must be >= 0, got {tau}")
    return tau


# ---------------------------------------------------------------- one count


def one_count_map(model: JumpModel, rho: DensityMatrix) -> UnnormalizedDensity:
    """gamma * A rho A^dag. Its trace is the one-count rate."""
    A = model.lowering(rho.dim)
    return UnnormalizedDensity(model.gamma * (A @ rho.data @ A.conj().T))


def one_count_rate(model: JumpModel, rho: DensityMatrix) -> float:
    """gamma * n̄ for SD, gamma * (1 - p_0) for E."""
    p = rho.data.diagonal().real
    if model.kind is ModelKind.SD:
        return model.gamma * mean_photon(rho)
    # summing p_n for n >= 1 avoids cancellation in 1 - p_0
    return model.gamma * float(np.sum(p[1:]))


def post_one_count(model: JumpModel, rho: DensityMatrix) -> DensityMatrix:
    rate = one_count_rate(model, rho)
    if not rate > 0.0:
        raise ConditioningError(
            f"{model.kind.value} one-count rate is zero for this state; "
            "the post-count state is undefined"
        )
    jumped = one_count_map(model, rho).data
    return DensityMatrix(jumped / np.trace(jumped).real)


# ----------------------------------------------------------------- no count


def no_count_exponents(model: JumpModel, dim: int, tau: float) -> NDArray[np.complex128]:
    """Diagonal of Y * tau, i.e. log of the no-count amplitudes."""
    n = np.arange(dim, dtype=np.float64)
    return (-1j * model.omega0 * n - 0.5 * model.gamma * model.jump_generator_diagonal(dim)) * tau


def no_count_amplitudes(model: JumpModel, dim: int, tau: float) -> NDArray[np.complex128]:
    """exp(Y tau) as a vector (the matrix is diagonal)."""
    return np.exp(no_count_exponents(model, dim, _check_tau(tau)))


def no_count_map(model: JumpModel, rho: DensityMatrix, tau: float) -> UnnormalizedDensity:
    """Entry (m, m') of rho times w_m conj(w_m'), w = exp(Y tau).

    SD: w_m = exp(-(i omega0 + gamma/2) m tau).
    E:  w_0 = 1, w_m = exp(-i omega0 m tau - gamma tau/2) for m >= 1.
    """
    w = no_count_amplitudes(model, rho.dim, tau)
    return UnnormalizedDensity(rho.data * np.outer(w, w.conj()))


def no_count_weights(model: JumpModel, dim: int, tau: float | NDArray) -> NDArray[np.float64]:
    """|exp(Y tau)|^2 on the diagonal: exp(-gamma * <n|A^dag A|n> * tau).

    ``tau`` may be an array; the result then has shape ``tau.shape + (dim,)``.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0.0):
        raise ValueError("time interval must be >= 0")
    k = model.jump_generator_diagonal(dim)
    return np.exp(-model.gamma * tau[..., None] * k)


def survival_from_populations(model: JumpModel, p: NDArray, tau: float | NDArray) -> NDArray:
    """No-count probability sum_n p_n exp(-gamma <A^dag A>_n tau), vectorized over tau."""
    return no_count_weights(model, len(p), tau) @ np.asarray(p, dtype=np.float64)


def no_count_probability(model: JumpModel, rho: DensityMatrix, tau: float) -> float:
    """Probability of no count in an interval of length tau.

    SD: sum_n exp(-gamma n tau) p_n. E: p_0 + (1 - p_0) exp(-gamma tau).
    """
    tau = _check_tau(tau)
    p = rho.data.diagonal().real
    return float(survival_from_populations(model, p, tau))


def post_no_count(model: JumpModel, rho: DensityMatrix, tau: float) -> DensityMatrix:
    """State conditioned on no count during tau, normalized.

    The decay exponents are shifted by the slowest occupied level before
    exponentiating, so long intervals do not underflow to a zero trace.
    """
    tau = _check_tau(tau)
    logw = no_count_exponents(model, rho.dim, tau)
    p = rho.data.diagonal().real
    occupied = p > 0.0
    if np.any(occupied):
        logw = logw - np.max(logw.real[occupied])
    # empty levels have empty rows and columns; zero them so exp(+big) * 0 cannot give nan
    w = np.where(occupied, np.exp(np.where(occupied, logw, 0.0)), 0.0)
    out = rho.data * np.outer(w, w.conj())
    return DensityMatrix(out / np.trace(out).real)


def conditioned_populations(model: JumpModel, p: NDArray, taus: NDArray) -> NDArray[np.float64]:
    """Populations after a no-count interval for every tau in ``taus`` (shape (len(taus), dim))."""
    p = np.asarray(p, dtype=np.float64)
    k = model.jump_generator_diagonal(len(p))
    expo = -model.gamma * np.asarray(taus, dtype=np.float64)[:, None] * k[None, :]
    occ = p > 0.0
    if np.any(occ):
        expo = expo - expo[:, occ].max(axis=1, keepdims=True)
    q = np.where(occ, np.exp(np.where(occ, expo, 0.0)), 0.0) * p
    return q / q.sum(axis=1, keepdims=True)


# ----------------------------------------------------------- closed forms


class FieldKind(str, enum.Enum):
    FOCK = "fock"
    THERMAL = "thermal"
    COHERENT = "coherent"


def _check_field(field: FieldKind | str, nbar: float) -> FieldKind:
    field = FieldKind(str(field).lower() if isinstance(field, str) else field)
    if field is FieldKind.FOCK:
        if nbar != int(nbar) or nbar < 1:
            raise ValueError(f"Fock closed forms need an integer photon number >= 1, got {nbar}")
    elif not nbar > 0.0:
        raise ValueError(f"{field.value} closed forms need n̄ > 0, got {nbar}")
    return field


def table1_oracle(model: JumpModel, field: FieldKind | str, nbar: float) -> dict[str, float]:
    """Closed-form mean photon number and vacuum probability right after one count."""
    field = _check_field(field, nbar)
    sd = model.kind is ModelKind.SD
    if field is FieldKind.FOCK:
        return {"mean_after": nbar - 1.0, "vacuum_after": 1.0 if nbar == 1 else 0.0}
    if field is FieldKind.THERMAL:
        if sd:
            return {"mean_after": 2.0 * nbar, "vacuum_after": 1.0 / (1.0 + nbar) ** 2}
        return {"mean_after": nbar, "vacuum_after": 1.0 / (1.0 + nbar)}
    if sd:
        return {"mean_after": nbar, "vacuum_after": math.exp(-nbar)}
    return {
        "mean_after": nbar / -math.expm1(-nbar) - 1.0,
        "vacuum_after": nbar / math.expm1(nbar),
    }


def table2_oracle(model: JumpModel, field: FieldKind | str, nbar: float) -> dict[str, float]:
    """Closed-form count rate, rate immediately after a count, and their ratio g2.

    For the E model on |1> the post-count state is the vacuum, so the
    conditional rate and g2 are 0; the tabulated E-model Fock entries
    (gamma and 1) hold for m >= 2.
    """
    field = _check_field(field, nbar)
    g = model.gamma
    if model.kind is ModelKind.SD:
        if field is FieldKind.FOCK:
            rate, cond = g * nbar, g * (nbar - 1.0)
            g2 = (nbar - 1.0) / nbar
        elif field is FieldKind.THERMAL:
            rate, cond, g2 = g * nbar, 2.0 * g * nbar, 2.0
        else:
            rate, cond, g2 = g * nbar, g * nbar, 1.0
        return {"rate": rate, "conditional_rate": cond, "g2": g2}

    if field is FieldKind.FOCK:
        rate = g
        cond = g if nbar >= 2 else 0.0
        g2 = 1.0 if nbar >= 2 else 0.0
    elif field is FieldKind.THERMAL:
        rate = cond = g * nbar / (1.0 + nbar)
        g2 = 1.0
    else:
        rate = -g * math.expm1(-nbar)
        cond = g * (1.0 - nbar / math.expm1(nbar))
        # (e^n - (n+1)) / (e^n + e^-n - 2), written with expm1 for small n
        g2 = (math.expm1(nbar) - nbar) / (math.expm1(nbar) + math.expm1(-nbar))
    return {"rate": rate, "conditional_rate": cond, "g2": g2}
