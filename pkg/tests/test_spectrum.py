"""Density and support tests against closed-form laws.

Oracles: the product model P = X1 X2 + X2 X1 + X2^2 with a = 0 and b
standard semicircular is Marchenko-Pastur (G(5) = (5 - sqrt 5)/10, density
sqrt((4-x)x)/(2 pi x) on (0,4), quadratic identity z G^2 - z G + 1 = 0);
P = X2 reproduces nu itself; P = X1 + X2 with both laws semicircular is
the semicircle of variance 2 on [-2 sqrt 2, 2 sqrt 2].
"""

import numpy as np
import pytest

from freespec import ncpoly
from freespec.linearize import adopt_pencil, linearize_selfadjoint
from freespec.measures import mixture, point_mass, semicircle, uniform
from freespec.subordination import FreeModel
from freespec.spectrum import (
    density,
    parse_profile,
    radius_bound,
    scalar_cauchy_of_P,
    serialize_profile,
    support,
)

MP_POLY = ncpoly.parse("x1*x2 + x2*x1 + x2^2")
ECON = [np.array([[0, 0, 0], [0, 0, -1], [0, -1, 0]], float),
        np.array([[0, 0, 1], [0, 0, 0], [1, 0, 0]], float),
        np.array([[0, 1, 0.5], [1, 0, 0], [0.5, 0, 0]], float)]


def mp_model():
    pencil = adopt_pencil(ECON, MP_POLY, trials=5, size=3)
    return FreeModel(pencil, point_mass(0.0), semicircle(0.0, 1.0))


def identity_model(nu=None):
    pencil = linearize_selfadjoint(ncpoly.parse("x2", arity=2))
    return FreeModel(pencil, point_mass(0.0), nu or semicircle(0.0, 1.0))


def additive_model():
    pencil = linearize_selfadjoint(ncpoly.parse("x1 + x2"))
    return FreeModel(pencil, semicircle(0.0, 1.0), semicircle(0.0, 1.0))


def atom_model():
    pencil = linearize_selfadjoint(ncpoly.parse("x1", arity=2))
    return FreeModel(pencil, point_mass(0.0), semicircle(0.0, 1.0))


def mp_exact_density(x):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    inside = (x > 0) & (x < 4)
    xi = x[inside]
    out[inside] = np.sqrt((4.0 - xi) * xi) / (2.0 * np.pi * xi)
    return out


@pytest.fixture(scope="module")
def mp_profile():
    return density(mp_model(), grid=np.linspace(-4.4, 4.4, 1601))


# ---------------------------------------------------------------------------
# scalar Cauchy transform
# ---------------------------------------------------------------------------

def test_scalar_cauchy_mp_near_axis():
    g = scalar_cauchy_of_P(mp_model(), 5 + 1e-8j)
    assert abs(g - (5 - np.sqrt(5)) / 10) < 1e-6


def test_scalar_cauchy_identity_polynomial():
    g = scalar_cauchy_of_P(identity_model(), 2j)
    assert abs(g - 1j * (1 - np.sqrt(2))) < 1e-9


def test_scalar_cauchy_requires_upper_half_plane():
    m = identity_model()
    with pytest.raises(ValueError):
        scalar_cauchy_of_P(m, 2.0)
    with pytest.raises(ValueError):
        scalar_cauchy_of_P(m, 1 - 1j)


def test_scalar_cauchy_herglotz_samples():
    m = mp_model()
    rng = np.random.default_rng(7)
    for _ in range(20):
        z = complex(rng.uniform(-6, 6), 10 ** rng.uniform(-3, 1))
        g = scalar_cauchy_of_P(m, z)
        assert g.imag < 0
        assert abs(g) <= 1.0 / z.imag + 1e-12


def test_quadratic_equation_for_mp_transform():
    m = mp_model()
    xs = np.linspace(0.3, 3.7, 10)
    zs = [complex(x, 1e-3) for x in xs] + [complex(x, 1.0) for x in xs]
    for z in zs:
        g = scalar_cauchy_of_P(m, z)
        assert abs(z * g * g - z * g + 1) < 1e-8


def test_radius_bound_from_polynomial():
    assert radius_bound(mp_model()) == pytest.approx(4.0)
    assert radius_bound(atom_model()) == 0.0
    # additive: |1|*2 + |1|*2
    assert radius_bound(additive_model()) == pytest.approx(4.0)


# ---------------------------------------------------------------------------
# density profiles
# ---------------------------------------------------------------------------

def test_mp_density_l1_error():
    grid = np.arange(0.05, 3.9501, 5e-3)
    prof = density(mp_model(), grid=grid)
    assert not prof.full_coverage        # partial grid skips the mass gate
    err = np.trapezoid(np.abs(prof.density - mp_exact_density(grid)), grid)
    assert err <= 1e-3


def test_identity_polynomial_density_pointwise():
    grid = np.linspace(-1.8, 1.8, 181)
    prof = density(identity_model(), grid=grid)
    exact = np.sqrt(4.0 - grid ** 2) / (2.0 * np.pi)
    assert np.max(np.abs(prof.density - exact)) <= 2e-3


def test_additive_model_is_semicircle_variance_two():
    prof = density(additive_model(), grid=np.linspace(-4.05, 4.05, 401))
    assert prof.full_coverage
    assert abs(prof.mass - 1.0) <= 5e-3
    assert len(prof.support_intervals) == 1
    a, b = prof.support_intervals[0]
    edge = 2.0 * np.sqrt(2.0)
    assert abs(a + edge) <= 0.05 and abs(b - edge) <= 0.05
    mid = len(prof.grid) // 2
    assert prof.grid[mid] == pytest.approx(0.0)
    assert abs(prof.density[mid] - 1.0 / (np.pi * np.sqrt(2.0))) <= 2e-3
    assert prof.atoms == []


def test_mp_profile_mass_and_support(mp_profile):
    assert mp_profile.full_coverage
    assert abs(mp_profile.mass - 1.0) <= 5e-3
    assert mp_profile.atoms == []
    assert len(mp_profile.support_intervals) == 1
    a, b = mp_profile.support_intervals[0]
    assert -0.02 <= a <= 0.02
    assert 3.98 <= b <= 4.02


def test_atom_model_reports_unit_atom():
    prof = density(atom_model())
    assert len(prof.atoms) == 1
    loc, mass = prof.atoms[0]
    assert abs(loc) < 1e-12
    assert abs(mass - 1.0) <= 5e-3
    assert abs(prof.mass - 1.0) <= 5e-3
    assert len(prof.support_intervals) == 1
    a, b = prof.support_intervals[0]
    assert -0.01 <= a <= 0 <= b <= 0.01


def test_bimodal_input_gives_two_intervals():
    nu = mixture([(uniform(-3.2, -2.8), 0.5), (uniform(2.8, 3.2), 0.5)])
    prof = density(identity_model(nu), grid=np.linspace(-3.6, 3.6, 241))
    assert prof.full_coverage
    assert abs(prof.mass - 1.0) <= 5e-3
    assert len(prof.support_intervals) == 2
    (a1, b1), (a2, b2) = prof.support_intervals
    assert abs(a1 + 3.2) <= 0.1 and abs(b1 + 2.8) <= 0.1
    assert abs(a2 - 2.8) <= 0.1 and abs(b2 - 3.2) <= 0.1


# ---------------------------------------------------------------------------
# support post-conditions
# ---------------------------------------------------------------------------

def test_support_monotone_in_threshold(mp_profile):
    def total_len(intervals):
        return sum(b - a for a, b in intervals)

    prev = None
    for thr in (1e-4, 1e-3, 1e-2, 1e-1):
        cur = support(mp_profile, thr)
        if prev is not None:
            assert total_len(cur) <= total_len(prev) + 1e-12
            for a, b in cur:      # nested inside some previous interval
                assert any(pa - 1e-12 <= a and b <= pb + 1e-12 for pa, pb in prev)
        prev = cur


def test_support_covers_stated_mass_fraction(mp_profile):
    thr = 1e-4
    intervals = support(mp_profile, thr)
    grid, dens = mp_profile.grid, mp_profile.density
    inside = np.zeros_like(dens, dtype=bool)
    for a, b in intervals:
        inside |= (grid >= a) & (grid <= b)
    covered = np.trapezoid(np.where(inside, dens, 0.0), grid)
    floor = (1.0 - 10.0 * thr * (grid[-1] - grid[0])) * mp_profile.mass
    assert covered >= min(floor, 0.99 * mp_profile.mass)


def test_density_rejects_tiny_grid():
    with pytest.raises(ValueError):
        density(identity_model(), grid=np.array([1.0]))


def test_workers_match_serial():
    grid = np.linspace(-1.5, 1.5, 21)
    serial = density(identity_model(), grid=grid)
    fanned = density(identity_model(), grid=grid, workers=2)
    assert np.array_equal(serial.density, fanned.density)
    assert serial.mass == fanned.mass


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_profile_round_trip(mp_profile):
    text = serialize_profile(mp_profile)
    back = parse_profile(text)
    assert np.array_equal(back.grid, mp_profile.grid)
    assert np.array_equal(back.density, mp_profile.density)
    assert back.support_intervals == mp_profile.support_intervals
    assert back.atoms == mp_profile.atoms
    assert back.mass == mp_profile.mass
    assert back.eta_used == mp_profile.eta_used
    assert back.full_coverage == mp_profile.full_coverage
    assert back.panel_overrides == mp_profile.panel_overrides
    assert np.array_equal(back.cdf, mp_profile.cdf)


def test_cdf_refined_and_monotone(mp_profile):
    # cumulative mass must be monotone, consistent with the reported total,
    # and close to the closed form F(x) = 2 F_sc(sqrt x) - 1 even though the
    # hard edge at 0 puts a x^{-1/2} singularity inside a single panel
    cdf = mp_profile.cdf
    assert np.all(np.diff(cdf) >= -1e-15)
    atom_total = sum(m for _, m in mp_profile.atoms)
    assert abs(cdf[-1] + atom_total - mp_profile.mass) < 1e-12
    assert len(mp_profile.panel_overrides) > 0

    def f_sc(t):
        t = np.clip(t, -2.0, 2.0)
        return 0.5 + (t * np.sqrt(4.0 - t * t)
                      + 4.0 * np.arcsin(t / 2.0)) / (4.0 * np.pi)

    xs = np.linspace(0.05, 3.95, 400)
    exact = 2.0 * f_sc(np.sqrt(xs)) - 1.0
    pred = np.interp(xs, mp_profile.grid, cdf) / cdf[-1]
    assert np.max(np.abs(pred - exact)) < 0.02


def test_profile_parse_requires_eta_line():
    with pytest.raises(ValueError):
        parse_profile("x,density\n0.0,0.1\n")
