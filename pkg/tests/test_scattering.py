import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosonlab.errors import PreconditionError
from bosonlab.potential import PotentialProfile, coupling_b
from bosonlab.scattering import (CSV_COLUMNS, RadialProblem, born_length, coupling_flow,
                                 effective_coupling, fit_inverse_na, scattering_length,
                                 solve_radial, square_well_length, write_flow_csv)

BUMP = PotentialProfile()
WELL = PotentialProfile("square_well", 1.0, 0.25)


@pytest.mark.parametrize("lam", [1e-3, 0.5, 4.0, 100.0])
def test_square_well_against_closed_form(lam):
    a0 = scattering_length(RadialProblem(WELL, lam))
    assert a0 == pytest.approx(square_well_length(lam, 1.0, 0.25), rel=1e-10, abs=1e-15)


def test_square_well_closed_form_values():
    # kappa = sqrt(lam v0 / 2) = 2 for lam = 8, v0 = 1
    assert square_well_length(8.0, 1.0, 0.25) == pytest.approx(0.25 - math.tanh(0.5) / 2)
    assert square_well_length(0.0, 1.0, 0.25) == 0.0


def test_hard_wall_limit():
    # a very strong well approaches the hard-sphere value a0 = R
    assert scattering_length(RadialProblem(WELL, 1e6)) == pytest.approx(0.25, rel=1e-2)


def test_born_limit_first_order():
    devs = []
    for lam in (0.1, 0.05, 0.025):
        a0 = scattering_length(RadialProblem(BUMP, lam))
        devs.append(abs(a0 - born_length(BUMP, lam)) / born_length(BUMP, lam))
    assert devs[0] <= 1e-3
    # the relative deviation is first order in lam
    assert devs[0] / devs[1] == pytest.approx(2.0, rel=0.02)
    assert devs[1] / devs[2] == pytest.approx(2.0, rel=0.02)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 50.0), st.sampled_from(["bump", "square_well"]))
def test_a0_between_zero_born_and_range(lam, kind):
    prof = PotentialProfile(kind, 1.0, 0.25)
    a0 = scattering_length(RadialProblem(prof, lam))
    assert 0 < a0 <= born_length(prof, lam) * (1 + 1e-9)
    assert a0 < prof.R


def test_a0_monotone_in_coupling():
    vals = [scattering_length(RadialProblem(BUMP, lam)) for lam in (0.1, 1, 10, 100)]
    assert all(x < y for x, y in zip(vals, vals[1:]))


def test_zero_potential():
    assert scattering_length(RadialProblem(PotentialProfile(v0=0.0))) == 0.0
    assert effective_coupling(PotentialProfile(v0=0.0), 1.0) == 0.0


def test_free_region_is_linear():
    sol = solve_radial(RadialProblem(BUMP, 5.0, r_max=2.0))
    assert sol.fit_residual < 1e-12
    r = np.array([0.5, 1.0, 1.5])
    assert np.allclose(sol.u(r), sol.slope * (r - sol.a0), rtol=1e-10)


def test_radial_guards():
    with pytest.raises(PreconditionError):
        RadialProblem(BUMP, -1.0)
    with pytest.raises(PreconditionError):
        RadialProblem(BUMP, 1.0, r_max=0.5)


@pytest.mark.parametrize("lam", [0.01, 1.0, 30.0])
def test_effective_coupling_equals_scaled_a0(lam):
    # dual route: quadrature of V f against the asymptotic slope of u
    a0 = scattering_length(RadialProblem(BUMP, lam))
    assert effective_coupling(BUMP, lam) == pytest.approx(8 * math.pi * a0 / lam, rel=1e-9)


def test_effective_coupling_below_b():
    b = coupling_b(BUMP, 3)
    assert 0 < effective_coupling(BUMP, 1.0) < b
    assert effective_coupling(BUMP, 1e-6) == pytest.approx(b, rel=1e-5)


def test_tabulated_profile_matches_born_integral():
    tab = PotentialProfile(kind="tabulated", table=((0.0, 1.0), (0.1, 0.5), (0.2, 0.0)))
    lam = 1e-4
    a0 = scattering_length(RadialProblem(tab, lam))
    assert a0 == pytest.approx(born_length(tab, lam), rel=1e-4)


def test_coupling_flow_approaches_b():
    rows = coupling_flow(BUMP, 0.4, [100, 1000, 10000])
    devs = [r.rel_dev for r in rows]
    assert all(d <= 0.05 for d in devs)
    assert devs[0] > devs[1] > devs[2]
    for r in rows:
        assert r.a == pytest.approx(r.N ** -0.4)
        assert r.eff_coupling == pytest.approx(8 * math.pi * r.N_a0, rel=1e-9)


def test_coupling_flow_guards():
    with pytest.raises(PreconditionError):
        coupling_flow(BUMP, 1.2, [10])
    with pytest.raises(PreconditionError):
        coupling_flow(BUMP, 0.4, [100, 10])


def test_fit_recovers_synthetic_line():
    from bosonlab.scattering import FlowRow
    rows = [FlowRow(N, N ** -0.4, 0.0, 1.0 - 3.0 / (N * N ** -0.4) - 0.2, 1.0) for N in (10, 100, 1000)]
    slope, intercept, err = fit_inverse_na(rows)
    assert slope == pytest.approx(3.0)
    assert intercept == pytest.approx(0.2)
    assert err < 1e-10


def test_flow_csv(tmp_path):
    rows = coupling_flow(BUMP, 0.4, [100, 1000])
    p = write_flow_csv(rows, tmp_path / "flow.csv")
    with p.open() as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == CSV_COLUMNS
    assert float(data[2][2]) == rows[1].N_a0
