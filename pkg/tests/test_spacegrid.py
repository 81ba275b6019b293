"""Grid windows, stencil selection, and Lagrange interpolation."""

import numpy as np
import pytest

from fbsde_multistep import (
    ActiveWindow,
    GridSpec,
    OutOfDomainError,
    ValueField,
    grid_points,
    interpolate,
    interpolate_values,
    neighbor_set,
)


def spec1d(h=0.1, origin=0.0):
    return GridSpec(q=1, h=h, origin=[origin])


def test_neighbor_set_enclosing_cell():
    window = ActiveWindow(lo=[-50], hi=[50])
    stencil = neighbor_set(spec1d(), window, [0.05], r=1)
    assert sorted(stencil[:, 0].tolist()) == [0, 1]


def test_neighbor_set_centered_with_tie_toward_lower():
    window = ActiveWindow(lo=[-50], hi=[50])
    stencil = neighbor_set(spec1d(), window, [0.0], r=2)
    assert sorted(stencil[:, 0].tolist()) == [-1, 0, 1]


def test_neighbor_set_tie_break_on_grid_point():
    window = ActiveWindow(lo=[0], hi=[50])
    stencil = neighbor_set(spec1d(), window, [0.50], r=1)
    assert sorted(stencil[:, 0].tolist()) == [4, 5]


def test_neighbor_set_clamps_at_window_edge():
    window = ActiveWindow(lo=[0], hi=[10])
    stencil = neighbor_set(spec1d(), window, [0.05], r=4)
    assert sorted(stencil[:, 0].tolist()) == [0, 1, 2, 3, 4]


def test_neighbor_set_cardinality_2d():
    spec = GridSpec(q=2, h=[0.1, 0.2], origin=[0.0, 0.0])
    window = ActiveWindow(lo=[-5, -5], hi=[5, 5])
    stencil = neighbor_set(spec, window, [0.12, 0.33], r=2)
    assert stencil.shape == (9, 2)


def test_neighbor_set_out_of_domain():
    window = ActiveWindow(lo=[-5], hi=[5])
    with pytest.raises(OutOfDomainError):
        neighbor_set(spec1d(), window, [0.7], r=1)


def test_neighbor_set_requires_positive_degree():
    window = ActiveWindow(lo=[-5], hi=[5])
    with pytest.raises(ValueError):
        neighbor_set(spec1d(), window, [0.0], r=0)


def sample_field(spec, window, fn):
    pts = grid_points(spec, window)
    return fn(pts).reshape(window.extents)


def test_constant_field_reproduced_everywhere():
    spec = spec1d()
    window = ActiveWindow(lo=[-30], hi=[30])
    values = sample_field(spec, window, lambda X: np.full(X.shape[0], 2.25))
    probes = np.linspace(-2.9, 2.9, 41)[:, None]
    out = interpolate_values(values, window, spec, probes, r=5)
    np.testing.assert_allclose(out, 2.25, atol=1e-12)


def test_partition_of_unity_random_points():
    # Interpolating the constant 1 exercises the basis-weight sums directly.
    rng = np.random.default_rng(7)
    spec = GridSpec(q=2, h=[0.13, 0.09], origin=[0.4, -0.2])
    window = ActiveWindow(lo=[-20, -20], hi=[20, 20])
    values = np.ones(window.extents)
    probes = np.stack(
        [rng.uniform(-1.5, 1.5, 200) * 0.13 + 0.4, rng.uniform(-1.5, 1.5, 200) * 0.09 - 0.2],
        axis=1,
    )
    for r in (1, 3, 6):
        out = interpolate_values(values, window, spec, probes, r=r)
        np.testing.assert_allclose(out, 1.0, atol=1e-12)


def test_grid_point_queries_return_stored_values():
    spec = spec1d(h=0.25)
    window = ActiveWindow(lo=[-8], hi=[8])
    rng = np.random.default_rng(3)
    values = rng.normal(size=window.extents)
    pts = grid_points(spec, window)
    out = interpolate_values(values, window, spec, pts, r=4)
    np.testing.assert_allclose(out, values.ravel(), atol=1e-12)


def test_cubic_reproduces_cubic_polynomial():
    spec = spec1d()
    window = ActiveWindow(lo=[-60], hi=[60])
    values = sample_field(spec, window, lambda X: X[:, 0] ** 3)
    probes = np.linspace(-4.9, 4.9, 57)[:, None]
    out = interpolate_values(values, window, spec, probes, r=3)
    np.testing.assert_allclose(out, probes[:, 0] ** 3, atol=1e-10)


@pytest.mark.parametrize("r", [1, 2, 3, 6, 10])
def test_polynomial_reproduction_random_coeffs(r):
    rng = np.random.default_rng(100 + r)
    spec = spec1d(h=0.2, origin=0.3)
    window = ActiveWindow(lo=[-40], hi=[40])
    coeff = rng.uniform(-1, 1, size=r + 1)
    values = sample_field(spec, window, lambda X: np.polyval(coeff, X[:, 0]))
    probes = (rng.uniform(-5.0, 5.0, 64) + 0.3)[:, None]
    out = interpolate_values(values, window, spec, probes, r=r)
    np.testing.assert_allclose(out, np.polyval(coeff, probes[:, 0]), atol=1e-10, rtol=1e-10)


def test_tensor_polynomial_reproduction_2d():
    rng = np.random.default_rng(11)
    spec = GridSpec(q=2, h=[0.15, 0.1], origin=[0.0, 0.0])
    window = ActiveWindow(lo=[-25, -25], hi=[25, 25])
    cx = rng.uniform(-1, 1, 4)
    cy = rng.uniform(-1, 1, 4)
    fn = lambda X: np.polyval(cx, X[:, 0]) * np.polyval(cy, X[:, 1])
    values = sample_field(spec, window, fn)
    probes = rng.uniform(-1.5, 1.5, size=(50, 2))
    out = interpolate_values(values, window, spec, probes, r=3)
    np.testing.assert_allclose(out, fn(probes), atol=1e-10)


def sin_interp_error(h, r):
    spec = spec1d(h=h)
    window = ActiveWindow(lo=[int(-3 / h)], hi=[int(3 / h)])
    values = sample_field(spec, window, lambda X: np.sin(X[:, 0]))
    probes = np.linspace(-1.0, 1.0, 201)[:, None]
    out = interpolate_values(values, window, spec, probes, r=r)
    return np.max(np.abs(out - np.sin(probes[:, 0])))


def test_sin_refinement_order_r4():
    # Halving h must shrink the error by roughly 2^(r+1).
    ratio = sin_interp_error(0.1, 4) / sin_interp_error(0.05, 4)
    assert 2**4.5 < ratio < 2**5.5


def test_interpolate_value_field_and_bare_array():
    spec = spec1d(h=0.5)
    window = ActiveWindow(lo=[-6], hi=[6])
    pts = grid_points(spec, window)
    y = (pts[:, 0] ** 2).reshape(window.extents + (1,))
    z = (2 * pts[:, 0]).reshape(window.extents + (1, 1))
    field = ValueField(window=window, y_values=y, z_values=z, level=3)
    yq, zq = interpolate(field, spec, [1.3], r=2)
    assert yq[0] == pytest.approx(1.69, abs=1e-12)
    assert zq[0, 0] == pytest.approx(2.6, abs=1e-12)
    bare = interpolate(y[..., 0], spec, [1.3], r=2, window=window)
    assert bare == pytest.approx(1.69, abs=1e-12)
    with pytest.raises(ValueError):
        interpolate(y[..., 0], spec, [1.3], r=2)


def test_value_field_rejects_mismatched_extents():
    window = ActiveWindow(lo=[0], hi=[4])
    with pytest.raises(ValueError):
        ValueField(
            window=window,
            y_values=np.zeros((3, 1)),
            z_values=np.zeros((5, 1, 1)),
            level=0,
        )


def test_value_field_rejects_non_finite():
    window = ActiveWindow(lo=[0], hi=[2])
    y = np.array([[0.0], [np.nan], [1.0]])
    with pytest.raises(ValueError):
        ValueField(window=window, y_values=y, z_values=np.zeros((3, 1, 1)), level=1)


def test_window_validation():
    with pytest.raises(ValueError):
        ActiveWindow(lo=[3], hi=[1])
    with pytest.raises(ValueError):
        GridSpec(q=1, h=0.0, origin=[0.0])
