import numpy as np
import pytest

from epslab import (
    ScalarField,
    TorusGrid,
    VectorFieldOnX,
    cross_scalar,
    divergence,
    fourier_eigenpair,
    gradient,
    integrate,
    laplacian,
    skew_gradient,
)
from epslab.errors import EpslabError


def xgrid(n):
    return np.arange(n) / n


def test_grid_validation():
    with pytest.raises(EpslabError):
        TorusGrid(3, 16)
    with pytest.raises(EpslabError):
        TorusGrid(1, 5)
    with pytest.raises(EpslabError):
        TorusGrid(1, 2)


def test_laplacian_constant_is_zero():
    g = TorusGrid(1, 16)
    f = ScalarField(g, np.full(16, 3.7))
    assert np.abs(laplacian(f).values).max() == 0.0


def test_laplacian_cos_mode_n4():
    # 3-point stencil applied by hand: eigenvalue (2 - 2cos(2 pi h)) / h^2 = 32
    g = TorusGrid(1, 4)
    f = ScalarField(g, np.cos(2 * np.pi * xgrid(4)))
    out = laplacian(f)
    assert np.allclose(out.values, 32.0 * f.values, atol=1e-13)


def test_laplacian_d2_reduces_to_d1():
    g1 = TorusGrid(1, 16)
    g2 = TorusGrid(2, 16)
    vals = np.sin(2 * np.pi * xgrid(16)) + 0.3 * np.cos(4 * np.pi * xgrid(16))
    one = laplacian(ScalarField(g1, vals)).values
    two = laplacian(ScalarField(g2, np.tile(vals[:, None], (1, 16)))).values
    assert np.allclose(two, one[:, None], atol=1e-12)


def test_gradient_constant_and_sin():
    g = TorusGrid(1, 4)
    assert np.abs(gradient(ScalarField(g, np.ones(4))).components[0]).max() == 0.0
    f = ScalarField(g, np.sin(2 * np.pi * xgrid(4)))
    expected = 4.0 * np.cos(2 * np.pi * xgrid(4))
    assert np.allclose(gradient(f).components[0], expected, atol=1e-13)


def test_gradient_d2_axis_independence():
    g = TorusGrid(2, 16)
    vals = np.tile(np.sin(2 * np.pi * xgrid(16))[:, None], (1, 16))
    gy = gradient(ScalarField(g, vals)).components[1]
    assert np.abs(gy).max() == 0.0


def test_integrate_exact_values():
    g = TorusGrid(1, 32)
    assert integrate(ScalarField(g, np.ones(32))) == pytest.approx(1.0, abs=1e-15)
    for k in (1, 5, 15):
        f = ScalarField(g, np.cos(2 * np.pi * k * xgrid(32)))
        assert integrate(f) == pytest.approx(0.0, abs=1e-14)
    csq = ScalarField(g, np.cos(2 * np.pi * xgrid(32)) ** 2)
    assert integrate(csq) == pytest.approx(0.5, abs=1e-14)


def test_fourier_eigenpair_values_and_errors():
    g = TorusGrid(1, 4)
    _, lam = fourier_eigenpair(g, 1)
    assert lam == pytest.approx(32.0, abs=1e-12)
    gbig = TorusGrid(1, 4096)
    _, lam = fourier_eigenpair(gbig, 1)
    assert lam == pytest.approx(4 * np.pi**2, rel=1e-5)
    with pytest.raises(EpslabError):
        fourier_eigenpair(g, 0)
    with pytest.raises(EpslabError):
        fourier_eigenpair(g, 2)   # n/2 aliases
    g2 = TorusGrid(2, 8)
    f, lam = fourier_eigenpair(g2, (1, 0))
    assert f.values.shape == (8, 8)


@pytest.mark.parametrize("n", [8, 64, 256, 512])
def test_fourier_eigenpair_identity(n):
    # exact eigenvectors of the stencil; the attainable floor is set by
    # rounding of O(1) samples amplified by 1/h^2
    g = TorusGrid(1, n)
    f, lam = fourier_eigenpair(g, 1)
    resid = np.abs(laplacian(f).values - lam * f.values).max()
    floor = 8 * np.finfo(float).eps * n**2
    assert resid < max(1e-12, floor)


def test_self_adjointness_and_zero_mean():
    rng = np.random.default_rng(0)
    g = TorusGrid(2, 16)
    f = ScalarField(g, rng.normal(size=(16, 16)))
    w = ScalarField(g, rng.normal(size=(16, 16)))
    lhs = integrate(ScalarField(g, laplacian(f).values * w.values))
    rhs = integrate(ScalarField(g, f.values * laplacian(w).values))
    assert lhs == pytest.approx(rhs, abs=1e-10)
    assert integrate(laplacian(f)) == pytest.approx(0.0, abs=1e-10)


def test_skew_gradient_properties():
    g = TorusGrid(2, 32)
    with pytest.raises(EpslabError):
        skew_gradient(ScalarField(TorusGrid(1, 16), np.zeros(16)))
    const = skew_gradient(ScalarField(g, np.ones((32, 32))))
    assert max(np.abs(c).max() for c in const.components) == 0.0
    # independent of x1 -> second component vanishes
    vals = np.tile(np.cos(2 * np.pi * xgrid(32))[None, :], (32, 1))
    sg = skew_gradient(ScalarField(g, vals))
    assert np.abs(sg.components[1]).max() == 0.0
    # divergence-free to rounding
    rng = np.random.default_rng(1)
    s = ScalarField(g, rng.normal(size=(32, 32)))
    div = divergence(skew_gradient(s))
    assert np.abs(div.values).max() < 1e-9


def test_skew_gradient_symbolic_refinement():
    # s = cos(2 pi x1) cos(2 pi x2): compare against the exact derivatives,
    # error halves at least 4x when h halves
    errs = []
    for n in (32, 64):
        g = TorusGrid(2, n)
        x1, x2 = g.coords()
        s = ScalarField(g, np.cos(2 * np.pi * x1) * np.cos(2 * np.pi * x2))
        sg = skew_gradient(s)
        exact0 = -2 * np.pi * np.cos(2 * np.pi * x1) * np.sin(2 * np.pi * x2)
        exact1 = 2 * np.pi * np.sin(2 * np.pi * x1) * np.cos(2 * np.pi * x2)
        errs.append(max(np.abs(sg.components[0] - exact0).max(),
                        np.abs(sg.components[1] - exact1).max()))
    assert errs[0] / errs[1] > 3.5


def test_cross_scalar():
    g = TorusGrid(2, 16)
    rng = np.random.default_rng(2)
    v = VectorFieldOnX(g, (rng.normal(size=(16, 16)), rng.normal(size=(16, 16))))
    assert np.abs(cross_scalar(v, v).values).max() == 0.0
    e1 = VectorFieldOnX(g, (np.ones((16, 16)), np.zeros((16, 16))))
    e2 = VectorFieldOnX(g, (np.zeros((16, 16)), np.ones((16, 16))))
    assert np.allclose(cross_scalar(e1, e2).values, 1.0)
    # parallel gradients of x1-only functions
    vals_a = np.tile(np.sin(2 * np.pi * xgrid(16))[:, None], (1, 16))
    vals_b = np.tile(np.cos(4 * np.pi * xgrid(16))[:, None], (1, 16))
    ga = gradient(ScalarField(g, vals_a))
    gb = gradient(ScalarField(g, vals_b))
    assert np.abs(cross_scalar(ga, gb).values).max() < 1e-14
