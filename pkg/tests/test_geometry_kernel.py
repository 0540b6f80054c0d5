import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from hpgrf.geometry import (
    BoxWindow,
    Ellipsoid,
    GeometryError,
    IntensityGrid,
    MaskWindow,
    SubBox,
    VoxelSet,
    contains,
    make_grid,
    volume,
)
from hpgrf.kernel import KernelError, kernel_density, kernel_mass, log_normalizer, sample_kernel_points


@pytest.fixture
def square():
    return BoxWindow([0, 0], [100, 100])


@pytest.fixture
def ring_mask():
    occ = np.zeros((20, 20), dtype=bool)
    ii, jj = np.indices(occ.shape)
    r = np.hypot(ii - 9.5, jj - 9.5)
    occ[(r > 3) & (r < 9)] = True
    return MaskWindow(occ, [0.0, 0.0], [2.0, 2.0])


def test_box_volume_and_membership(square):
    assert volume(square) == 1e4
    assert contains(square, np.array([50.0, 50.0]))
    assert not contains(square, np.array([100.0, 50.0]))
    with pytest.raises(GeometryError):
        BoxWindow([0, 0], [0, 1])
    with pytest.raises(GeometryError, match="dimension"):
        square.contains(np.zeros((3, 3)))


def test_mask_volume(ring_mask):
    assert ring_mask.volume() == pytest.approx(ring_mask.occupancy.sum() * 4.0)
    with pytest.raises(GeometryError, match="empty"):
        MaskWindow(np.zeros((3, 3)), [0, 0], [1, 1])


def test_ellipse_volume_analytic_vs_quadrature(square):
    e = Ellipsoid("r2", square, [70, 30], [[30, -10], [-10, 40]])
    assert e.volume() == pytest.approx(e.analytic_volume())
    # chi2_2(0.95) = -2 ln 0.05, area = pi r2 sqrt(det)
    ref = math.pi * (-2 * math.log(0.05)) * math.sqrt(30 * 40 - 100)
    assert e.analytic_volume() == pytest.approx(ref, rel=1e-12)
    q = Ellipsoid("r2", square, [70, 30], [[30, -10], [-10, 40]])
    from hpgrf.geometry import _quadrature_volume

    assert _quadrature_volume(q, 0.05) == pytest.approx(ref, rel=2e-3)


def test_clipped_ellipse_uses_quadrature(square):
    e = Ellipsoid("edge", square, [0, 50], [[25, 0], [0, 25]])
    assert e.volume() == pytest.approx(e.analytic_volume() / 2, rel=5e-3)


def test_subbox_volume(square):
    assert SubBox("b", square, [-10, 0], [10, 10]).volume() == 100.0


def test_voxel_set(ring_mask):
    idx = np.argwhere(ring_mask.occupancy)[:5]
    vs = VoxelSet("v", ring_mask, idx)
    assert vs.volume() == 20.0
    centres = ring_mask.origin + (idx + 0.5) * ring_mask.voxel
    assert vs.contains(centres).all()


def test_grid_integrates_constant(square, ring_mask):
    g = make_grid(square, 2.5)
    assert g.integrate(np.ones(g.shape)) == pytest.approx(1e4)
    gm = make_grid(ring_mask)
    assert gm.integrate(np.ones(gm.shape)) == pytest.approx(ring_mask.volume())


def test_intensity_grid_interpolates_linear(square):
    g = make_grid(square, 5.0)
    vals = g.all_points[:, 0] * 2 + g.all_points[:, 1]
    ig = IntensityGrid(g, vals)
    assert ig.at(np.array([[40.0, 30.0]]))[0] == pytest.approx(110.0)


def test_kernel_centre_value(square):
    assert kernel_density([50, 50], [50, 50], 1.0, square) == pytest.approx(1 / (2 * math.pi), rel=1e-12)


def test_kernel_outside_window(square):
    with pytest.raises(KernelError):
        kernel_density([150, 50], [50, 50], 1.0, square)


@given(
    x=st.floats(0.0, 99.99),
    y=st.floats(0.0, 99.99),
    s=st.floats(1.0, 30.0),
)
@settings(max_examples=25, deadline=None)
def test_kernel_normalised_on_box(x, y, s):
    w = BoxWindow([0, 0], [100, 100])
    s2 = s * s
    val, _ = integrate.dblquad(
        lambda b, a: math.exp(-((a - x) ** 2 + (b - y) ** 2) / (2 * s2)) / (2 * math.pi * s2),
        0, 100, 0, 100, epsabs=1e-12, epsrel=1e-10,
    )
    assert math.exp(log_normalizer(w, [[x, y]], s2)[0]) == pytest.approx(val, rel=1e-7)


def test_kernel_normalised_on_mask(ring_mask):
    g = make_grid(ring_mask, 0.05)
    x = np.array([[3.0, 20.0]])
    dens = kernel_density(g.points, x, 9.0, ring_mask)
    assert dens.sum() * g.cell_volume == pytest.approx(1.0, rel=2e-3)


def test_kernel_mass_whole_window_and_subbox(square):
    assert kernel_mass(square, [20.0, 20.0], 16.0) == 1.0
    b = SubBox("left", square, [0, 0], [50, 100])
    # centre on the split line of a symmetric window: half the mass
    assert kernel_mass(b, [50.0, 50.0], 16.0, square) == pytest.approx(0.5, rel=1e-12)


def test_kernel_mass_ellipse_lattice_matches_quadrature(square):
    e = Ellipsoid("e", square, [40, 50], [[20, -5], [-5, 10]])
    x = np.array([42.0, 49.0])
    s2 = 9.0
    L = np.linalg.cholesky(e.cov)
    jac = np.linalg.det(L)

    # polar coordinates on the whitened ellipse: y = c + L (r cos p, r sin p)
    def f(r, p):
        y = e.center + L @ np.array([r * math.cos(p), r * math.sin(p)])
        return math.exp(-np.sum((y - x) ** 2) / (2 * s2)) / (2 * math.pi * s2) * r * jac

    ref, _ = integrate.dblquad(f, 0, 2 * math.pi, 0, math.sqrt(e.radius2), epsabs=1e-12, epsrel=1e-10)
    assert kernel_mass(e, x, s2, square, spacing=0.05) == pytest.approx(ref, rel=2e-3)


def test_truncated_samples_stay_inside(square, ring_mask):
    rng = np.random.default_rng(0)
    pts = sample_kernel_points(np.full((500, 2), [1.0, 1.0]), 100.0, square, rng)
    assert square.contains(pts).all()
    c = np.full((200, 2), [3.0, 20.0])
    pts = sample_kernel_points(c, 4.0, ring_mask, rng)
    assert ring_mask.contains(pts).all()
