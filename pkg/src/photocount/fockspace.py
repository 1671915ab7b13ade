"""Truncated single-mode Fock space: ladder operators, field states, diagnostics.

Basis ordering is |0>, |1>, ..., |dim-1>. Every state constructor computes the
analytic probability mass above the cutoff and refuses to build the state when
that mass exceeds ``tail_tol``; otherwise the retained populations are
renormalized so the returned matrix has unit trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numpy.typing import NDArray
from scipy.special import gammainc

DEFAULT_TAIL_TOL = 1e-12

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
PSD_TOL = -1e-9


class TruncationError(ValueError):
    """Raised when a state does not fit in the requested Fock cutoff."""


def _check_dim(dim: int) -> int:
    dim = int(dim)
    if dim < 2:
        raise ValueError(f"Fock dimension must be >= 2, got {dim}")
    return dim


def _frozen(a: NDArray) -> NDArray[np.complex128]:
    out = np.array(a, dtype=np.complex128, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DensityMatrix:
    """Normalized field density matrix in the truncated Fock basis.

    The wrapped array is read-only; operations always return new objects.
    """

    data: NDArray[np.complex128]
    tail_mass: float = 0.0

    def __post_init__(self) -> None:
        a = np.asarray(self.data)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {a.shape}")
        _check_dim(a.shape[0])
        if not np.all(np.isfinite(a)):
            raise ValueError("density matrix contains non-finite entries")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def populations(self) -> NDArray[np.float64]:
        """Photon-number distribution p_n (diagonal, real part)."""
        return np.clip(self.data.diagonal().real, 0.0, None)

    @property
    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def is_diagonal(self, atol: float = 0.0) -> bool:
        off = self.data - np.diag(self.data.diagonal())
        return bool(np.max(np.abs(off), initial=0.0) <= atol)


@dataclass(frozen=True)
class UnnormalizedDensity:
    """Positive Hermitian matrix with trace in [0, 1]: the weight of an event times its state."""

    data: NDArray[np.complex128]

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _frozen(self.data))

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def normalized(self) -> DensityMatrix:
        tr = self.trace
        if not tr > 0.0:
            raise ZeroDivisionError("cannot normalize a zero-weight event")
        return DensityMatrix(self.data / tr)


# ---------------------------------------------------------------- operators


def annihilation(dim: int) -> NDArray[np.complex128]:
    """Bosonic lowering operator with <n-1|a|n> = sqrt(n)."""
    dim = _check_dim(dim)
    return np.diag(np.sqrt(np.arange(1, dim, dtype=np.float64)), k=1).astype(np.complex128)


def creation(dim: int) -> NDArray[np.complex128]:
    """Adjoint of :func:`annihilation`; maps |dim-1> to zero (absorbing cutoff)."""
    return annihilation(dim).conj().T.copy()


def number_operator(dim: int) -> NDArray[np.complex128]:
    dim = _check_dim(dim)
    return np.diag(np.arange(dim, dtype=np.float64)).astype(np.complex128)


def e_lowering(dim: int) -> NDArray[np.complex128]:
    """Normalized lowering operator: E|0> = 0 and E|n> = |n-1> for n >= 1.

    Equal to (n + 1)^(-1/2) a on the truncated basis.
    """
    dim = _check_dim(dim)
    return np.eye(dim, k=1, dtype=np.complex128)


# ------------------------------------------------------------- constructors


def make_fock(m: int, dim: int) -> DensityMatrix:
    dim = _check_dim(dim)
    if not 0 <= m < dim:
        raise TruncationError(f"Fock level {m} outside retained levels 0..{dim - 1}")
    rho = np.zeros((dim, dim), dtype=np.complex128)
    rho[m, m] = 1.0
    return DensityMatrix(rho, tail_mass=0.0)


def thermal_populations(nbar: float, n_levels: int) -> NDArray[np.float64]:
    """Untruncated geometric distribution n̄^n / (1 + n̄)^(n+1) for n < n_levels."""
    if nbar == 0.0:
        p = np.zeros(n_levels)
        p[0] = 1.0
        return p
    n = np.arange(n_levels)
    ratio = nbar / (1.0 + nbar)
    return np.exp(n * np.log(ratio)) / (1.0 + nbar)


def make_thermal(nbar: float, dim: int, tail_tol: float = DEFAULT_TAIL_TOL) -> DensityMatrix:
    dim = _check_dim(dim)
    if not (np.isfinite(nbar) and nbar >= 0.0):
        raise ValueError(f"mean photon number must be finite and >= 0, got {nbar}")
    tail = 0.0 if nbar == 0.0 else float((nbar / (1.0 + nbar)) ** dim)
    if tail > tail_tol:
        raise TruncationError(
            f"thermal n̄={nbar} leaks {tail:.3e} above level {dim - 1} "
            f"(tolerance {tail_tol:.1e}); increase dim"
        )
    p = thermal_populations(nbar, dim)
    p /= p.sum()
    return DensityMatrix(np.diag(p).astype(np.complex128), tail_mass=tail)


def coherent_amplitudes(alpha: complex, n_levels: int) -> NDArray[np.complex128]:
    """alpha^n exp(-|alpha|^2/2) / sqrt(n!) built by recurrence (no factorial overflow)."""
    amps = np.empty(n_levels, dtype=np.complex128)
    amps[0] = np.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, n_levels):
        amps[n] = amps[n - 1] * alpha / np.sqrt(n)
    return amps


def make_coherent(alpha: complex, dim: int, tail_tol: float = DEFAULT_TAIL_TOL) -> DensityMatrix:
    dim = _check_dim(dim)
    alpha = complex(alpha)
    if not np.isfinite(alpha):
        raise ValueError(f"coherent amplitude must be finite, got {alpha}")
    mu = abs(alpha) ** 2
    # P(N >= dim) for N ~ Poisson(mu)
    tail = 0.0 if mu == 0.0 else float(gammainc(dim, mu))
    if tail > tail_tol:
        raise TruncationError(
            f"coherent |alpha|^2={mu} leaks {tail:.3e} above level {dim - 1} "
            f"(tolerance {tail_tol:.1e}); increase dim"
        )
    psi = coherent_amplitudes(alpha, dim)
    psi /= np.linalg.norm(psi)
    return DensityMatrix(np.outer(psi, psi.conj()), tail_mass=tail)


def make_superposition(amps: Iterable[tuple[int, complex]], dim: int) -> DensityMatrix:
    """Pure state sum_k c_k |n_k> from (level, amplitude) pairs, normalized."""
    dim = _check_dim(dim)
    amps = list(amps)
    if not amps:
        raise ValueError("superposition needs at least one (level, amplitude) pair")
    psi = np.zeros(dim, dtype=np.complex128)
    for level, c in amps:
        if not 0 <= level < dim:
            raise TruncationError(f"level {level} outside retained levels 0..{dim - 1}")
        psi[level] += c
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ValueError("superposition amplitudes sum to the zero vector")
    psi /= norm
    return DensityMatrix(np.outer(psi, psi.conj()), tail_mass=0.0)


# -------------------------------------------------------------- observables


def mean_photon(rho: DensityMatrix) -> float:
    p = rho.data.diagonal().real
    return float(np.dot(np.arange(rho.dim), p))


def photon_distribution(rho: DensityMatrix) -> NDArray[np.float64]:
    return rho.populations.copy()


def fidelity_pure(rho: DensityMatrix, psi: NDArray) -> float:
    """<psi|rho|psi> for a normalized state vector psi."""
    psi = np.asarray(psi, dtype=np.complex128)
    return float((psi.conj() @ rho.data @ psi).real)


@dataclass(frozen=True)
class Diagnostics:
    trace: float
    hermiticity_residual: float
    min_eigenvalue: float
    vacuum_prob: float

    def passes(
        self,
        *,
        trace_tol: float = TRACE_TOL,
        herm_tol: float = HERMITIAN_TOL,
        psd_tol: float = PSD_TOL,
        normalized: bool = True,
    ) -> bool:
        ok = self.hermiticity_residual <= herm_tol and self.min_eigenvalue >= psd_tol
        if normalized:
            ok = ok and abs(self.trace - 1.0) <= trace_tol
        return ok


def diagnostics(rho: DensityMatrix | UnnormalizedDensity | NDArray) -> Diagnostics:
    a = np.asarray(getattr(rho, "data", rho))
    herm = float(np.max(np.abs(a - a.conj().T), initial=0.0))
    eig = np.linalg.eigvalsh(0.5 * (a + a.conj().T))
    return Diagnostics(
        trace=float(np.trace(a).real),
        hermiticity_residual=herm,
        min_eigenvalue=float(eig[0]),
        vacuum_prob=float(a[0, 0].real),
    )
