import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_density
from photocount.fockspace import (
    coherent_amplitudes,
    diagnostics,
    fidelity_pure,
    make_coherent,
    make_fock,
    make_superposition,
    make_thermal,
    mean_photon,
)
from photocount.jump_models import (
    E,
    SD,
    ConditioningError,
    JumpModel,
    conditioned_populations,
    no_count_map,
    no_count_probability,
    one_count_map,
    one_count_rate,
    post_no_count,
    post_one_count,
    table1_oracle,
    table2_oracle,
)


def _post_count_populations(kind: str, p: np.ndarray) -> np.ndarray:
    """Post-count distribution straight from the population formulas (no matrices)."""
    n = np.arange(len(p))
    shifted = np.append(p[1:], 0.0)
    if kind == "SD":
        return (n + 1) * shifted / np.dot(n, p)
    return shifted / (1.0 - p[0])


def test_model_validation():
    with pytest.raises(ValueError):
        SD(gamma=0.0)
    with pytest.raises(ValueError):
        E(gamma=-1.0)
    assert JumpModel("E", 2.0).kind.value == "E"


# ------------------------------------------------------------- one count


def test_one_count_map_examples():
    assert np.all(one_count_map(SD(), make_fock(0, 4)).data == 0)
    out = one_count_map(SD(), make_fock(1, 4))
    assert np.allclose(out.data, make_fock(0, 4).data, atol=0)
    assert out.trace == 1.0
    assert one_count_map(E(), make_thermal(1.0, 64)).trace == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("m", [1, 2, 5, 9])
def test_sd_rate_on_fock(m):
    assert one_count_rate(SD(gamma=0.7), make_fock(m, 12)) == pytest.approx(0.7 * m, rel=1e-15)


def test_superposition_rates():
    small = make_superposition([(0, 1), (1, 1)], 8)
    assert one_count_rate(SD(), small) == pytest.approx(0.5, abs=1e-12)
    assert one_count_rate(E(), small) == pytest.approx(0.5, abs=1e-12)
    big = make_superposition([(0, 1), (100, 1)], 128)
    assert one_count_rate(SD(), big) == pytest.approx(50.0, abs=1e-12)
    assert one_count_rate(E(), big) == pytest.approx(0.5, abs=1e-12)


def test_vacuum_has_zero_rate_and_no_post_count_state():
    for model in (SD(), E()):
        assert one_count_rate(model, make_fock(0, 4)) == 0.0
        with pytest.raises(ConditioningError):
            post_one_count(model, make_fock(0, 4))


def test_post_one_count_examples():
    nbar = 1.7
    th = make_thermal(nbar, 128)
    assert mean_photon(post_one_count(SD(), th)) == pytest.approx(2 * nbar, rel=1e-9)
    coh = make_coherent(math.sqrt(nbar), 64)
    assert mean_photon(post_one_count(SD(), coh)) == pytest.approx(nbar, rel=1e-9)
    th2 = make_thermal(2.0, 128)
    assert post_one_count(E(), th2).data[0, 0].real == pytest.approx(1.0 / 3.0, rel=1e-9)
    assert post_one_count(SD(), make_fock(1, 4)).data[0, 0].real == 1.0


@pytest.mark.parametrize("kind", ["SD", "E"])
@pytest.mark.parametrize("seed", range(5))
def test_post_one_count_diagonal_matches_population_formula(kind, seed):
    rho = random_density(12, seed)
    model = JumpModel(kind)
    post = post_one_count(model, rho)
    expected = _post_count_populations(kind, rho.data.diagonal().real)
    assert np.allclose(post.data.diagonal().real, expected, atol=1e-13)


def test_post_one_count_shifts_coherences():
    rho = make_superposition([(1, 1), (3, 1j)], 6)
    post = post_one_count(E(), rho)
    # E lowers each level by one without sqrt(n) weights
    assert post.data[0, 2] == pytest.approx(-0.5j)
    post_sd = post_one_count(SD(), rho)
    assert post_sd.data[0, 2] == pytest.approx(-1j * math.sqrt(3) / 4)


# -------------------------------------------------------------- no count


def test_no_count_identity_at_zero():
    rho = random_density(8, 3)
    for model in (SD(), E()):
        assert np.array_equal(no_count_map(model, rho, 0.0).data, rho.data)
        assert np.allclose(post_no_count(model, rho, 0.0).data, rho.data, atol=1e-15)
        with pytest.raises(ValueError):
            no_count_map(model, rho, -1.0)


@pytest.mark.parametrize("m", [0, 1, 4])
def test_sd_no_count_on_fock(m):
    tau = 0.37
    out = no_count_map(SD(gamma=2.0), make_fock(m, 8), tau)
    assert out.trace == pytest.approx(math.exp(-2.0 * m * tau), rel=1e-14)
    assert np.allclose(post_no_count(SD(gamma=2.0), make_fock(m, 8), 5.0).data, make_fock(m, 8).data)


def test_e_no_count_diagonal_and_offdiagonal_structure():
    rho = random_density(6, 11)
    tau, g, w0 = 0.8, 1.3, 2.1
    out = no_count_map(E(gamma=g, omega0=w0), rho, tau).data
    p0 = rho.data[0, 0].real
    assert np.trace(out).real == pytest.approx(p0 + (1 - p0) * math.exp(-g * tau), rel=1e-14)
    assert out[0, 0] == rho.data[0, 0]
    m = 3
    assert out[0, m] == pytest.approx(rho.data[0, m] * np.exp(1j * w0 * m * tau - g * tau / 2), rel=1e-13)
    assert out[m, 0] == pytest.approx(rho.data[m, 0] * np.exp(-1j * w0 * m * tau - g * tau / 2), rel=1e-13)
    assert out[2, 4] == pytest.approx(rho.data[2, 4] * np.exp(-1j * w0 * (2 - 4) * tau - g * tau), rel=1e-13)


def test_sd_no_count_offdiagonal_phase():
    rho = random_density(6, 12)
    tau, g, w0 = 0.4, 0.9, 3.0
    out = no_count_map(SD(gamma=g, omega0=w0), rho, tau).data
    m, mp = 4, 1
    expected = rho.data[m, mp] * np.exp(-1j * w0 * (m - mp) * tau - g * (m + mp) * tau / 2)
    assert out[m, mp] == pytest.approx(expected, rel=1e-13)


def test_sd_no_count_keeps_coherent_states_coherent():
    alpha, g, tau = 1.4 + 0.3j, 1.0, 0.6
    rho = make_coherent(alpha, 48)
    out = post_no_count(SD(gamma=g), rho, tau)
    target = coherent_amplitudes(alpha * math.exp(-g * tau / 2), 48)
    target /= np.linalg.norm(target)
    assert fidelity_pure(out, target) >= 1 - 1e-9


def test_no_count_probability_examples():
    vac = make_fock(0, 6)
    for model in (SD(), E()):
        assert no_count_probability(model, vac, 3.0) == 1.0
    nbar, g, tau = 1.0, 1.0, 0.5
    th = make_thermal(nbar, 96)
    # thermal generating function: sum_n e^{-g n tau} p_n = 1 / (1 + n̄ (1 - e^{-g tau}))
    assert no_count_probability(SD(g), th, tau) == pytest.approx(1 / (1 + nbar * (1 - math.exp(-g * tau))), rel=1e-12)
    rho = random_density(10, 4)
    p0 = rho.data[0, 0].real
    assert no_count_probability(E(g), rho, tau) == pytest.approx(p0 + (1 - p0) * math.exp(-g * tau), rel=1e-14)


def test_e_post_no_count_vacuum_probability():
    rho = make_thermal(1.0, 64)
    for tau in (0.1, 1.0, 4.0):
        p0 = 0.5
        out = post_no_count(E(), rho, tau)
        assert out.data[0, 0].real == pytest.approx(p0 / (p0 + (1 - p0) * math.exp(-tau)), rel=1e-12)


def test_post_no_count_survives_long_intervals():
    rho = make_superposition([(3, 1), (5, 1)], 8)
    out = post_no_count(SD(), rho, 2000.0)
    assert out.data[3, 3].real == pytest.approx(1.0)
    assert diagnostics(out).passes()


def test_conditioned_populations_matches_post_no_count():
    rho = random_density(9, 21)
    taus = np.array([0.0, 0.2, 1.5])
    for model in (SD(), E()):
        vec = conditioned_populations(model, rho.data.diagonal().real, taus)
        for row, tau in zip(vec, taus):
            assert np.allclose(row, post_no_count(model, rho, tau).data.diagonal().real, atol=1e-14)


# ----------------------------------------------------------- properties


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    dim=st.integers(2, 16),
    kind=st.sampled_from(["SD", "E"]),
    t1=st.floats(0.0, 3.0),
    t2=st.floats(0.0, 3.0),
)
def test_no_count_semigroup(seed, dim, kind, t1, t2):
    model = JumpModel(kind, 1.3, omega0=0.4)
    rho = random_density(dim, seed)
    once = no_count_map(model, rho, t1 + t2).data
    step = no_count_map(model, rho, t1)
    twice = no_count_map(model, type(rho)(step.data), t2).data
    assert np.max(np.abs(once - twice)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    dim=st.integers(2, 16),
    kind=st.sampled_from(["SD", "E"]),
    tau=st.floats(0.0, 5.0),
    rank=st.integers(1, 4),
)
def test_maps_are_consistent_and_preserve_positivity(seed, dim, kind, tau, rank):
    model = JumpModel(kind, 0.8)
    rho = random_density(dim, seed, rank=min(rank, dim))
    J = one_count_map(model, rho)
    S = no_count_map(model, rho, tau)
    assert abs(J.trace - one_count_rate(model, rho)) <= 1e-12
    assert abs(S.trace - no_count_probability(model, rho, tau)) <= 1e-12
    for out in (J, S):
        d = diagnostics(out)
        assert d.hermiticity_residual <= 1e-12 and d.min_eigenvalue >= -1e-9
    for out in (post_no_count(model, rho, tau), post_one_count(model, rho)):
        assert diagnostics(out).passes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tau=st.floats(0.0, 10.0))
def test_e_vacuum_probability_nondecreasing_without_counts(seed, tau):
    rho = random_density(10, seed)
    assert post_no_count(E(), rho, tau).data[0, 0].real >= rho.data[0, 0].real - 1e-15


@pytest.mark.parametrize("kind", ["SD", "E"])
@pytest.mark.parametrize("seed", range(4))
def test_no_count_probability_decreases(kind, seed):
    rho = random_density(8, seed)
    taus = np.linspace(0.0, 4.0, 41)
    P = [no_count_probability(JumpModel(kind), rho, t) for t in taus]
    assert np.all(np.diff(P) < 0)


# ------------------------------------------------------------ closed forms


def test_table1_oracle_values():
    nbar = 1.3
    assert table1_oracle(SD(), "thermal", nbar)["mean_after"] == 2 * nbar
    assert table1_oracle(E(), "thermal", nbar)["mean_after"] == nbar
    assert table1_oracle(SD(), "coherent", 1.0)["vacuum_after"] == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert table1_oracle(E(), "coherent", 2.0)["mean_after"] == pytest.approx(2 / (1 - math.exp(-2)) - 1, rel=1e-14)
    assert table1_oracle(E(), "coherent", 2.0)["vacuum_after"] == pytest.approx(2 / (math.exp(2) - 1), rel=1e-14)
    assert table1_oracle(SD(), "fock", 1)["vacuum_after"] == 1.0
    assert table1_oracle(E(), "fock", 3)["vacuum_after"] == 0.0
    with pytest.raises(ValueError):
        table1_oracle(SD(), "fock", 0)


def test_table2_oracle_values():
    assert table2_oracle(SD(), "thermal", 0.7)["g2"] == 2.0
    for m in (1, 2, 5):
        assert table2_oracle(SD(), "fock", m)["g2"] == pytest.approx((m - 1) / m)
    e = math.e
    assert table2_oracle(E(), "coherent", 1.0)["g2"] == pytest.approx((e - 2) / (e + 1 / e - 2), rel=1e-14)
    assert table2_oracle(E(), "fock", 3)["conditional_rate"] == 1.0
    assert table2_oracle(E(), "thermal", 3.0)["rate"] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        table2_oracle(E(), "thermal", 0.0)


def test_e_fock_one_has_no_second_count():
    """After a count on |1> the field is vacuum; the E-model conditional rate is 0."""
    post = post_one_count(E(), make_fock(1, 8))
    assert one_count_rate(E(), post) == 0.0
    assert table2_oracle(E(), "fock", 1) == {"rate": 1.0, "conditional_rate": 0.0, "g2": 0.0}


STATES = [
    ("thermal", 0.5, make_thermal(0.5, 128)),
    ("thermal", 4.0, make_thermal(4.0, 128)),
    ("coherent", 1.0, make_coherent(1.0, 128)),
    ("coherent", 4.0, make_coherent(2.0, 128)),
    ("fock", 2, make_fock(2, 128)),
]


@pytest.mark.parametrize("kind", ["SD", "E"])
@pytest.mark.parametrize("field,nbar,rho", STATES)
def test_three_routes_agree(kind, field, nbar, rho):
    """Matrix algebra, population formulas, and closed forms give the same post-count numbers."""
    model = JumpModel(kind)
    post = post_one_count(model, rho)
    pop = _post_count_populations(kind, rho.data.diagonal().real)
    t1 = table1_oracle(model, field, nbar)
    t2 = table2_oracle(model, field, nbar)

    mean_matrix = mean_photon(post)
    mean_pop = float(np.dot(np.arange(len(pop)), pop))
    assert mean_matrix == pytest.approx(t1["mean_after"], rel=1e-9, abs=1e-12)
    assert mean_pop == pytest.approx(t1["mean_after"], rel=1e-9, abs=1e-12)
    assert post.data[0, 0].real == pytest.approx(t1["vacuum_after"], rel=1e-9, abs=1e-12)
    assert pop[0] == pytest.approx(t1["vacuum_after"], rel=1e-9, abs=1e-12)
    assert one_count_rate(model, rho) == pytest.approx(t2["rate"], rel=1e-9)
    assert one_count_rate(model, post) == pytest.approx(t2["conditional_rate"], rel=1e-9)
