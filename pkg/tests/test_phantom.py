import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbdect.phantom import (Ellipse, PhantomSpec, analytic_path_integral, make_dataset, make_specs,
                            rasterize)


def quadrature_path_integral(spec, point, direction, step=1e-4, span=10.0):
    """Independent oracle: sample painter's-order membership on a fine grid along the ray,
    refine every membership change by bisection, then integrate the piecewise-constant profile."""
    dx, dy = direction
    speed = math.hypot(dx, dy)
    ux, uy = dx / speed, dy / speed

    def comp(s):
        x, y = point[0] + s * ux, point[1] + s * uy
        out = (0.0, 0.0)
        for e in spec.ellipses:
            if e.contains(x, y):
                out = e.composition
        return out

    s_grid = np.arange(-span, span + step, step)
    values = [comp(s) for s in s_grid]
    breaks = [s_grid[0]]
    for k in range(1, len(s_grid)):
        if values[k] != values[k - 1]:
            lo, hi = s_grid[k - 1], s_grid[k]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if comp(mid) == values[k - 1]:
                    lo = mid
                else:
                    hi = mid
            breaks.append(0.5 * (lo + hi))
    breaks.append(s_grid[-1])
    total = np.zeros(2)
    for a, b in zip(breaks[:-1], breaks[1:]):
        total += (b - a) * np.asarray(comp(0.5 * (a + b)))
    return total


def test_empty_spec_rasterizes_to_zero():
    img = rasterize(PhantomSpec(6.4, ()), 16)
    assert img.shape == (2, 16, 16) and not img.any()


def test_covering_ellipse():
    img = rasterize(PhantomSpec(2.0, (Ellipse((0, 0), (5, 5), 0.0, (1.0, 0.0)),)), 8, 6)
    assert img.shape == (2, 6, 8)
    assert np.all(img[0] == 1) and np.all(img[1] == 0)


def test_painter_order():
    a = Ellipse((-0.3, 0), (0.6, 0.6), 0.0, (1.0, 0.0))
    b = Ellipse((0.3, 0), (0.6, 0.6), 0.0, (0.5, 0.7))
    img = rasterize(PhantomSpec(2.0, (a, b)), 20)
    assert tuple(img[:, 10, 10]) == (0.5, 0.7)  # center pixel lies in both
    assert tuple(img[:, 10, 4]) == (1.0, 0.0)


def test_ray_missing_everything():
    spec = PhantomSpec(4.0, (Ellipse((0, 0), (1, 1), 0, (1, 0)),))
    np.testing.assert_array_equal(analytic_path_integral(spec, (0, 3), (1, 0)), [0, 0])


def test_diameter_chord():
    spec = PhantomSpec(4.0, (Ellipse((0, 0), (1.3, 1.3), 0, (1, 0)),))
    np.testing.assert_allclose(analytic_path_integral(spec, (0, 0), (0.3, 0.7)), [2.6, 0], rtol=1e-14)


def test_rotated_ellipse_matches_quadrature():
    spec = PhantomSpec(6.0, (
        Ellipse((0.2, -0.1), (2.0, 1.2), 0.6, (1.0, 0.0)),
        Ellipse((0.5, 0.3), (0.6, 0.3), -1.1, (0.9, 0.5)),
    ))
    point, direction = (0.1, 0.35), (0.8, 0.35)
    ref = quadrature_path_integral(spec, point, direction)
    got = analytic_path_integral(spec, point, direction)
    np.testing.assert_allclose(got, ref, rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 20.0), st.floats(0, 2 * math.pi))
def test_direction_scaling_invariance(scale, ang):
    spec = make_specs(4, 1)[0]
    d = (math.cos(ang), math.sin(ang))
    a = analytic_path_integral(spec, (0.1, -0.2), d)
    b = analytic_path_integral(spec, (0.1, -0.2), (scale * d[0], scale * d[1]))
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_area_fraction_convergence():
    e = Ellipse((0.13, -0.07), (0.71, 0.43), 0.3, (1.0, 0.0))
    spec = PhantomSpec(2.0, (e,))
    exact = math.pi * 0.71 * 0.43 / 4.0  # area fraction of the 2x2 cm field
    errs = []
    for n in (16, 64, 256):
        fine = rasterize(spec, 2 * n)[0]
        coarse = fine.reshape(n, 2, n, 2).mean(axis=(1, 3))
        errs.append(abs(coarse.mean() - exact))
    assert errs[2] < errs[0]


def test_dataset_determinism():
    a = make_dataset(11, 3, n=16)
    b = make_dataset(11, 3, n=16)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_dataset_count_zero():
    with pytest.raises(ValueError):
        make_dataset(1, 0)


def test_dataset_training_cardinality():
    specs = make_specs(1, 168)
    assert len(specs) == 168
    comps = np.array([e.composition for s in specs for e in s.ellipses[1:]])
    assert comps[:, 0].min() >= 0.8 and comps[:, 0].max() <= 1.2
    assert comps[:, 1].min() >= 0.0 and comps[:, 1].max() <= 0.8


def test_json_roundtrip(tmp_path):
    spec = make_specs(5, 1)[0]
    spec.save(tmp_path / "p.json")
    assert PhantomSpec.load(tmp_path / "p.json") == spec
