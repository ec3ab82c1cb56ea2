import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings, strategies as st

from pbrigidity import flexibility as fx
from pbrigidity.field_core import FieldError, ScalarField, c0_norm, make_grid, poisson_bracket

from conftest import bump, gaussian_field


def test_transition_profile():
    s = fx.transition(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
    assert s.tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]
    t = np.linspace(0.01, 0.99, 99)
    assert np.allclose(fx.transition(t) + fx.transition(1 - t), 1.0)
    assert np.all(np.diff(fx.transition(t[5:-5])) > 0)


def test_build_mesh_five_by_five():
    g = make_grid(0, 1, 0, 1, 129, 129)
    cells = fx.build_mesh(fx.full_region(g), 0.3, g)
    assert len(cells) == 25
    assert max(c.box.diameter(g) for c in cells) < 0.3
    assert sum(c.box.area(g) for c in cells) == pytest.approx(1.0)
    # 4 x 4 would give diameter 0.25 * sqrt(2) > 0.3
    assert 0.25 * math.sqrt(2) > 0.3


def test_build_mesh_single_cell_and_too_small():
    g = make_grid(0, 1, 0, 1, 129, 129)
    assert len(fx.build_mesh(fx.full_region(g), 2.0, g)) == 1
    with pytest.raises(fx.FlexibilityError):
        fx.build_mesh(fx.full_region(g), g.hx, g)


def test_build_mesh_rejects_torus():
    g = make_grid(0, 1, 0, 1, 33, 33, "torus")
    with pytest.raises(FieldError):
        fx.build_mesh(fx.NodeBox(0, 32, 0, 32), 0.5, g)


def test_choose_nested_area_oracle():
    g = make_grid(0, 1, 0, 1, 257, 257)
    h = 1 / 256
    cell = fx.MeshCell(fx.NodeBox(0, 51, 0, 51))
    nested = fx.choose_nested(cell, 1.0, 1, 0.0, 1.0, g, fx.WIDE_LAYERS)
    shrink = 6 - 1 / 3  # Q3 sits l4 - 1/3 steps in from each side
    expected = (51 * h) ** 2 - ((51 - 2 * shrink) * h) ** 2
    assert nested.area_outside_q3(g) == pytest.approx(expected, rel=1e-12)
    assert nested.anchor == (25, 25)


def test_choose_nested_volume_condition():
    g = make_grid(0, 1, 0, 1, 129, 129)
    cell = fx.MeshCell(fx.NodeBox(0, 20, 0, 20))
    # G == 0 makes the condition vacuous
    fx.choose_nested(cell, 1e-9, 1, 0.0, 1.0, g)
    fx.choose_nested(cell, 1e9, 1, 1.0, 1.0, g)
    with pytest.raises(fx.FlexibilityError, match="refine the grid"):
        fx.choose_nested(cell, 1e-6, 1, 1.0, 1.0, g)
    with pytest.raises(fx.FlexibilityError):
        fx.choose_nested(fx.MeshCell(fx.NodeBox(0, 4, 0, 20)), 1.0, 1, 1.0, 1.0, g)


def test_bad_layers_rejected():
    g = make_grid(0, 1, 0, 1, 65, 65)
    with pytest.raises(ValueError):
        fx.choose_nested(fx.MeshCell(fx.NodeBox(0, 30, 0, 30)), 1.0, 1, 1.0, 1.0, g, (1, 1, 2, 3))


def test_cutoff_values_wide_layers():
    g = make_grid(0, 1, 0, 1, 65, 65)
    cell = fx.choose_nested(fx.MeshCell(fx.NodeBox(10, 40, 10, 40)), 1.0, 1, 0.0, 1.0, g,
                            fx.WIDE_LAYERS)
    phi, psi = fx.cutoff_pair(cell, g)
    phi, psi = phi.values, psi.values
    c = 25
    assert phi[c, c] == 0.0 and psi[c, c] == 1.0  # inside Q3
    assert phi[5, c] == 1.0 and psi[5, c] == 0.0  # outside Q
    assert phi[11, c] == 1.0 and psi[11, c] == 0.0  # outside Q1
    assert phi[12, c] == pytest.approx(0.5, abs=1e-15)  # middle of the phi band
    assert psi[15, c] == pytest.approx(0.5, abs=1e-15)  # middle of the psi band
    assert phi.min() >= 0 and phi.max() <= 1 and psi.min() >= 0 and psi.max() <= 1
    # where psi is not zero, phi is exactly zero: the bands never overlap
    assert np.all(phi[psi > 0] == 0.0)


def test_zero_g_bypass():
    F = gaussian_field(65, 4)
    Z = F.replace(np.zeros(F.grid.shape))
    Ft, Gt, cert = fx.commuting_pair(F, Z, 0.1, 1)
    assert Ft is F and Gt is Z
    assert cert.passes and cert.c0_error == 0.0 and cert.lq_error_q == 0.0


def test_support_must_fit_region():
    g = make_grid(0, 1, 0, 1, 65, 65)
    F = ScalarField.from_function(g, lambda x, y: x + 1.0)
    with pytest.raises(fx.FlexibilityError):
        fx.commuting_pair(F, F, 0.1, 1)


def test_gaussian_pair_small_grid():
    F = gaussian_field(257, 4)
    Ft, Gt, cert = fx.commuting_pair(F, F, 0.3, 1)
    assert cert.bracket_max == 0.0
    assert np.all(poisson_bracket(Ft, Gt).values == 0.0)
    assert cert.c0_error <= cert.max_cell_osc < 0.3
    assert cert.lq_error_q <= cert.lq_bound
    assert cert.passes


def test_tile_rule_reports_resolution():
    F = gaussian_field(257, 4)
    with pytest.raises(fx.FlexibilityError, match="volume condition fails.*nx="):
        fx.commuting_pair(F, F, 0.3, 1, volume_rule="tile")


def test_idempotent_on_commuting_input():
    g = make_grid(0, 1, 0, 1, 97, 97)
    region = fx.NodeBox(8, 88, 8, 88)
    mesh = fx.build_mesh(region, 0.45, g)
    F = np.zeros(g.shape)
    G = np.zeros(g.shape)
    X, Y = g.mesh()
    for n, c in enumerate(mesh):
        b = c.box
        F[b.i0 + 1:b.i1, b.j0 + 1:b.j1] = 0.1 * (n + 1)
        ci, cj = b.center()
        # G lives well inside Q3, where psi == 1 and F is constant
        G[ci - 3:ci + 4, cj - 3:cj + 4] = np.sin(X[ci - 3:ci + 4, cj - 3:cj + 4] * 9) + 2
    Ff, Gf = ScalarField(g, F), ScalarField(g, G)
    Ft, Gt, cert = fx.commuting_pair(Ff, Gf, 10.0, 1, region=region, mesh=mesh)
    assert np.array_equal(Ft.values, F)
    assert np.array_equal(Gt.values, G)
    assert cert.bracket_max == 0.0


def test_refined_mesh_reproduces_zero_bracket():
    F = gaussian_field(257, 4)
    mesh = fx.mesh_of(F, F, 0.3)
    F2 = gaussian_field(513, 8)
    region = fx.support_region(F.grid, F, F)
    region2 = fx.NodeBox(region.i0 * 2, region.i1 * 2, region.j0 * 2, region.j1 * 2)
    _, _, cert = fx.commuting_pair(F2, F2, 0.3, 1, region=region2, mesh=fx.refine_mesh(mesh, 2))
    assert cert.bracket_max == 0.0


def _random_field(g, seed, scale):
    rng = np.random.default_rng(seed)
    X, Y = g.mesh()
    v = np.zeros(g.shape)
    for _ in range(3):
        a, b, c = rng.uniform(-1, 1, 3)
        v += a * np.sin(2 * np.pi * (b * X + c * Y) + rng.uniform(0, 6))
    return ScalarField.with_margin(g, scale * v * bump(X, Y, 0.5, 0.5, 0.45), 4)


@settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**31), st.integers(0, 2**31), st.floats(0.05, 0.5))
def test_commuting_pair_bracket_exactly_zero(sf, sg, scale):
    g = make_grid(0, 1, 0, 1, 129, 129)
    F = _random_field(g, sf, scale)
    G = _random_field(g, sg, scale)
    try:
        Ft, Gt, cert = fx.commuting_pair(F, G, 0.4, 1)
    except fx.FlexibilityError:
        assume(False)
    assert c0_norm(poisson_bracket(Ft, Gt)) == 0.0
    assert cert.bracket_max == 0.0
    assert cert.c0_error < 0.4
    assert cert.support_ok
