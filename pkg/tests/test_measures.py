"""Tests for spectral measures and Cauchy transforms.

Closed-form reference values used below:
  * Marchenko-Pastur (ratio 1): G(z) = (1 - sqrt(1 - 4/z))/2,
    so G(5) = (5 - sqrt(5))/10 = 0.27639320225002104.
  * Standard semicircle: G(z) = (z - sqrt(z^2 - 4))/2, so G(2.5) = 0.5
    and G(3i) = i(3 - sqrt(13))/2 = -0.30277563773199467i.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freespec import measures
from freespec.measures import (
    MeasureDomainError,
    arcsine,
    cauchy_matrix,
    cauchy_scalar,
    finite_atomic,
    from_density_table,
    marchenko_pastur,
    mixture,
    point_mass,
    quantiles,
    sample,
    semicircle,
    uniform,
)

MP_G5 = (5.0 - np.sqrt(5.0)) / 10.0


# ---------------------------------------------------------------------------
# scalar Cauchy transforms
# ---------------------------------------------------------------------------

def test_mp_at_5_closed_form():
    g = cauchy_scalar(marchenko_pastur(), 5.0)
    assert abs(g - MP_G5) < 1e-12


def test_mp_at_5_quadrature():
    g = cauchy_scalar(marchenko_pastur(), 5.0, force_quadrature=True)
    assert abs(g - MP_G5) < 1e-9


def test_semicircle_at_2p5():
    g = cauchy_scalar(semicircle(0.0, 1.0), 2.5)
    assert abs(g - 0.5) < 1e-12


def test_semicircle_quadrature_matches_closed():
    m = semicircle(0.3, 2.0)
    for z in (3.5 + 0.0j, -4.0 + 0.0j, 1.0 + 0.5j, -0.2 + 0.01j):
        gc = cauchy_scalar(m, z)
        gq = cauchy_scalar(m, z, force_quadrature=True)
        assert abs(gc - gq) < 1e-9, z


def test_arcsine_and_uniform_quadrature_match_closed():
    for m in (arcsine(-1.0, 3.0), uniform(-2.0, 0.5)):
        for z in (4.0 + 0.0j, 0.5 + 0.3j, -3.0 + 0.0j):
            gc = cauchy_scalar(m, z)
            gq = cauchy_scalar(m, z, force_quadrature=True)
            assert abs(gc - gq) < 1e-9, (m, z)


def test_point_mass_transform():
    m = point_mass(1.5)
    z = 2.0 + 0.1j
    assert abs(cauchy_scalar(m, z) - 1.0 / (z - 1.5)) < 1e-15


def test_mixture_atom_plus_semicircle():
    m = mixture([(point_mass(0.0), 0.5), (semicircle(0.0, 1.0), 0.5)])
    z = 3.0 + 0.2j
    expected = 0.5 / z + 0.5 * cauchy_scalar(semicircle(0.0, 1.0), z)
    assert abs(cauchy_scalar(m, z) - expected) < 1e-12


def test_table_piece_approximates_semicircle():
    xs = np.linspace(-2.0, 2.0, 4001)
    ys = np.sqrt(np.clip(4.0 - xs ** 2, 0, None)) / (2 * np.pi)
    m = from_density_table(xs, ys)
    for z in (3.0 + 0.0j, 0.5 + 0.5j):
        got = cauchy_scalar(m, z)
        ref = cauchy_scalar(semicircle(0.0, 1.0), z)
        assert abs(got - ref) < 1e-3, z


def test_real_axis_clearance_enforced():
    m = marchenko_pastur()
    with pytest.raises(MeasureDomainError):
        cauchy_scalar(m, 3.0)          # inside the support
    with pytest.raises(MeasureDomainError):
        cauchy_scalar(m, 4.0 + 1e-10)  # closer than 1e-9 to the edge
    cauchy_scalar(m, 5.0)              # comfortably outside: fine
    with pytest.raises(MeasureDomainError):
        cauchy_scalar(point_mass(2.0), 2.0 + 5e-10)


def test_stieltjes_mass_recovery():
    eta = 1e-3
    for m, lo, hi in ((semicircle(0.0, 1.0), -4.0, 4.0),
                      (marchenko_pastur(), -2.0, 6.0)):
        xs = np.linspace(lo, hi, 4001)
        dens = np.array([-cauchy_scalar(m, x + 1j * eta).imag / np.pi for x in xs])
        mass = np.trapezoid(dens, xs)
        assert abs(mass - 1.0) < 1e-3, m


@settings(max_examples=40, deadline=None)
@given(mean=st.floats(-3, 3), var=st.floats(0.1, 4.0),
       re=st.floats(-6, 6), im=st.floats(0.1, 5.0))
def test_herglotz_properties(mean, var, re, im):
    m = semicircle(mean, var)
    z = complex(re, im)
    g = cauchy_scalar(m, z)
    assert g.imag < 0
    assert abs(g) <= 1.0 / im + 1e-12
    assert abs(np.conj(g) - cauchy_scalar(m, np.conj(z))) < 1e-12


# ---------------------------------------------------------------------------
# matrix Cauchy transforms
# ---------------------------------------------------------------------------

def test_matrix_block_diagonal():
    m = semicircle(0.0, 1.0)
    gamma = np.diag([1.0, 0.0])
    beta = np.diag([3.0j, 1.0j])
    got = cauchy_matrix(m, gamma, beta)
    g_sc_3i = -0.30277563773199467j
    expect = np.diag([g_sc_3i, -1.0j])
    assert np.linalg.norm(got - expect) < 1e-9


def test_matrix_scalar_reduction():
    m = marchenko_pastur()
    z = 1.0 + 0.7j
    got = cauchy_matrix(m, np.array([[1.0]]), np.array([[z]]))
    assert abs(got[0, 0] - cauchy_scalar(m, z)) < 1e-9


def test_matrix_atoms():
    m = finite_atomic([(-1.0, 0.5), (2.0, 0.5)])
    z = 0.3 + 0.4j
    got = cauchy_matrix(m, np.eye(2), z * np.eye(2))
    expect = (0.5 / (z + 1.0) + 0.5 / (z - 2.0)) * np.eye(2)
    assert np.linalg.norm(got - expect) < 1e-12


def test_matrix_quadrature_doubling_stable():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    gamma = a + a.conj().T
    b = rng.normal(size=(3, 3))
    beta = b + b.T + 0.5j * np.eye(3) + 0.1j * np.diag([1.0, 2.0, 0.5])
    m = semicircle(0.2, 1.3)
    piece = m.pieces[0]
    vals = []
    for n in (256, 512):
        ts, ws = piece.rule(n)
        mats = np.linalg.inv(beta[None] - ts[:, None, None] * gamma[None])
        vals.append(np.einsum("k,kij->ij", ws, mats))
    assert np.linalg.norm(vals[0] - vals[1]) < 1e-10


def test_matrix_near_singular_split():
    # resolvent evaluated 1e-5 above a point inside the support: the plain
    # rule cannot resolve the spike, the graded splitting must kick in
    m = marchenko_pastur()
    x, eta = 1.0, 1e-5
    gamma = np.diag([1.0, 0.0])
    beta = np.diag([x + 1j * eta, 1.0])
    got = cauchy_matrix(m, gamma, beta)
    ref = cauchy_scalar(m, x + 1j * eta)
    assert abs(got[0, 0] - ref) < 1e-6
    assert abs(got[1, 1] - 1.0) < 1e-12


def test_matrix_singular_atom_raises():
    m = point_mass(2.0)
    with pytest.raises(MeasureDomainError):
        cauchy_matrix(m, np.eye(2), 2.0 * np.eye(2))


# ---------------------------------------------------------------------------
# quantiles and sampling
# ---------------------------------------------------------------------------

def test_quantiles_uniform():
    got = quantiles(uniform(0.0, 1.0), 2)
    assert np.allclose(got, [0.25, 0.75], atol=1e-12)


def test_quantiles_semicircle_midpoint():
    got = quantiles(semicircle(0.0, 1.0), 3)
    assert abs(got[1]) < 1e-10
    assert got[0] < got[1] < got[2]
    assert got[0] > -2.0 and got[2] < 2.0


def test_quantiles_point_mass():
    assert np.allclose(quantiles(point_mass(0.0), 4), 0.0)


def test_quantiles_two_atoms():
    m = finite_atomic([(-1.0, 0.5), (3.0, 0.5)])
    got = quantiles(m, 4)
    assert np.allclose(got, [-1.0, -1.0, 3.0, 3.0])


def test_quantiles_match_cdf():
    m = mixture([(point_mass(-2.0), 0.25), (uniform(0.0, 2.0), 0.75)])
    qs = quantiles(m, 8)
    for i, t in enumerate(qs):
        q = (i + 0.5) / 8
        assert m.cdf(t) >= q - 1e-9


def test_sample_point_mass():
    got = sample(point_mass(3.0), 5, seed=42)
    assert np.allclose(got, 3.0)


def test_sample_deterministic():
    a = sample(semicircle(0.0, 1.0), 50, seed=123)
    b = sample(semicircle(0.0, 1.0), 50, seed=123)
    c = sample(semicircle(0.0, 1.0), 50, seed=124)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_mean_concentrates():
    xs = sample(semicircle(0.0, 1.0), 100_000, seed=0)
    assert abs(xs.mean()) < 0.02
    assert abs(xs.var() - 1.0) < 0.05


# ---------------------------------------------------------------------------
# construction and support utilities
# ---------------------------------------------------------------------------

def test_mass_validation():
    with pytest.raises(ValueError):
        finite_atomic([(0.0, 0.5)])
    with pytest.raises(ValueError):
        finite_atomic([(0.0, -0.5), (1.0, 1.5)])


def test_table_normalization():
    xs = [0.0, 1.0, 2.0]
    ys = [0.0, 2.0, 0.0]     # integrates to 2, gets rescaled to mass 1
    m = from_density_table(xs, ys)
    assert abs(m.pieces[0].mass - 1.0) < 1e-15
    assert abs(np.trapezoid(m.pieces[0].table_y, xs) - 1.0) < 1e-12


def test_support_utilities():
    m = mixture([(point_mass(-5.0), 0.2), (semicircle(0.0, 1.0), 0.8)])
    assert m.support_radius() == 5.0
    assert m.support_distance(0.5) == 0.0
    assert abs(m.support_distance(2.5) - 0.5) < 1e-15
    assert abs(m.support_distance(-4.0) - 1.0) < 1e-15
    assert m.support_intervals() == [(-2.0, 2.0)]
    assert m.support_points() == [-5.0]


def test_single_semicircle_detection():
    assert semicircle(0.5, 2.0).is_single_semicircle() == (0.5, 2.0)
    assert marchenko_pastur().is_single_semicircle() is None
    assert mixture([(point_mass(0.0), 0.5),
                    (semicircle(0.0, 1.0), 0.5)]).is_single_semicircle() is None
