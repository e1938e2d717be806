"""Activation specs: exact references, approximations, repairs, round trips."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coheq import activations as act

ALL_FUNCTIONS = ("tanh", "sigmoid")
ALL_SEGMENTS = (3, 5, 7, 9)


def exact_ref(function, x):
    x = np.asarray(x, dtype=float)
    return np.tanh(x) if function == "tanh" else 1.0 / (1.0 + np.exp(-x))


# -- exact kind --------------------------------------------------------------


def test_exact_matches_library_functions():
    x = np.linspace(-6, 6, 501)
    tanh = act.exact_spec("tanh")
    sig = act.exact_spec("sigmoid")
    np.testing.assert_allclose(tanh.eval(x), np.tanh(x), rtol=1e-15)
    np.testing.assert_allclose(sig.eval(x), 1 / (1 + np.exp(-x)), rtol=1e-14)
    np.testing.assert_allclose(tanh.grad(x), 1 - np.tanh(x) ** 2, atol=1e-15)
    s = 1 / (1 + np.exp(-x))
    np.testing.assert_allclose(sig.grad(x), s * (1 - s), atol=1e-15)


def test_exact_sigmoid_is_overflow_safe():
    sig = act.exact_spec("sigmoid")
    assert sig.eval(-800.0) == 0.0
    assert sig.eval(800.0) == 1.0


def test_eval_rejects_nonfinite_input():
    with pytest.raises(ValueError):
        act.exact_spec("tanh").eval(np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        act.pwl_spec("tanh", 3).eval(math.inf)


# -- taylor kind -------------------------------------------------------------


def test_taylor_coefficients_are_the_exact_rationals():
    t9 = act.taylor_spec("tanh", 9, 1.0)
    assert t9.coeffs == (0.0, 1.0, 0.0, -1 / 3, 0.0, 2 / 15, 0.0, -17 / 315, 0.0, 62 / 2835)
    s9 = act.taylor_spec("sigmoid", 9, 2.0)
    assert s9.coeffs == (
        0.5, 0.25, 0.0, -1 / 48, 0.0, 1 / 480, 0.0, -17 / 80640, 0.0, 31 / 1451520,
    )


def test_taylor_tanh_order3_at_one():
    # x - x^3/3 at x=1
    spec = act.taylor_spec("tanh", 3, 2.0)
    assert spec.eval(1.0) == pytest.approx(2 / 3, abs=1e-15)


def test_taylor_clamps_outside_boundary():
    t = act.taylor_spec("tanh", 3, 1.0)
    s = act.taylor_spec("sigmoid", 3, 1.5)
    assert t.eval(1.5) == 1.0 and t.eval(-1.5) == -1.0
    assert s.eval(2.0) == 1.0 and s.eval(-2.0) == 0.0
    assert t.grad(1.5) == 0.0 and s.grad(-2.0) == 0.0


def test_taylor_central_values():
    for fn, want in (("tanh", 0.0), ("sigmoid", 0.5)):
        for order in (3, 5, 7, 9):
            assert act.taylor_spec(fn, order, 1.0).eval(0.0) == want


# Boundaries inside the series' convergence-dominated region (the clamp only
# makes sense there, and the boundary grid search lands there); close to the
# convergence radius the truncation orders degenerate and the ordering is no
# longer a property of the construction.
@pytest.mark.parametrize(
    "function,boundaries",
    [("tanh", (0.5, 0.8, 1.0, 1.2)), ("sigmoid", (1.0, 1.5, 2.0, 2.5))],
)
def test_taylor_error_strictly_decreases_with_order(function, boundaries):
    for a in boundaries:
        errs = [act.taylor_max_error(act.taylor_spec(function, o, a)) for o in (3, 5, 7, 9)]
        assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:])), (a, errs)


def test_taylor_order_validation():
    with pytest.raises(ValueError):
        act.taylor_spec("tanh", 4, 1.0)
    with pytest.raises(ValueError):
        act.taylor_spec("tanh", 11, 1.0)
    with pytest.raises(ValueError):
        act.taylor_spec("tanh", 3, -1.0)


# -- pwl kind ----------------------------------------------------------------


def test_pwl_tanh3_point_values():
    spec = act.pwl_spec("tanh", 3)
    assert spec.eval(0.5) == pytest.approx(0.454545, abs=1e-9)
    assert spec.grad(0.0) == pytest.approx(0.90909, abs=1e-12)


def test_pwl_357_tables_ship_unchanged():
    for fn in ALL_FUNCTIONS:
        for n in (3, 5, 7):
            _, corrections = act.load_pwl_table(fn, n)
            assert corrections == []


def test_pwl_tanh9_repair():
    segments, corrections = act.load_pwl_table("tanh", 9)
    assert len(corrections) == 2  # broken positive slope + its mirrored twin
    by_range = {(lo, hi): (m, b) for lo, hi, m, b in segments}
    m, b = by_range[(0.3, 0.9)]
    # slope solved so the segment meets 0.3381*0.9+0.412 at x=0.9
    assert m == pytest.approx(0.6938222222222222, abs=1e-12)
    assert b == 0.09185  # printed intercept kept
    assert by_range[(-0.9, -0.3)] == (pytest.approx(m), pytest.approx(-b))


def test_pwl_sigmoid9_repair():
    segments, corrections = act.load_pwl_table("sigmoid", 9)
    assert len(corrections) == 3
    by_range = {(lo, hi): (m, b) for lo, hi, m, b in segments}
    m, b = by_range[(0.8, 1.5)]
    assert m == 0.182242  # printed slope kept
    assert b == pytest.approx(0.544207, abs=1e-9)  # tanh-row duplicate replaced
    # negative-side slopes come out mirrored (inner to outer): the printed
    # table had the first and third swapped
    assert by_range[(-1.5, -0.8)][0] == pytest.approx(0.182242)
    assert by_range[(-2.0, -1.5)][0] == pytest.approx(0.12644)
    assert by_range[(-3.4, -2.0)][0] == pytest.approx(0.08514)
    # and intercepts satisfy sigma(-x) = 1 - sigma(x)
    for lo, hi, m_neg, b_neg in segments:
        if hi <= 0:
            m_pos, b_pos = by_range[(-hi, -lo)]
            assert m_neg == pytest.approx(m_pos, abs=1e-12)
            assert b_neg == pytest.approx(1.0 - b_pos, abs=1e-12)


def test_pwl_junctions_continuous_after_repair():
    worst = 0.0
    for fn in ALL_FUNCTIONS:
        for n in ALL_SEGMENTS:
            spec = act.pwl_spec(fn, n)
            for i, bp in enumerate(spec.breakpoints):
                left = spec.slopes[i] * bp + spec.intercepts[i]
                right = spec.slopes[i + 1] * bp + spec.intercepts[i + 1]
                worst = max(worst, abs(left - right))
    assert worst < act.JUNCTION_TOL
    # frozen value: the largest surviving gap sits in the unrepaired rows
    assert worst == pytest.approx(5.48e-4, abs=2e-5)


def test_pwl_breakpoint_gradient_uses_left_segment():
    spec = act.pwl_spec("tanh", 5)
    assert spec.grad(0.5) == 1.0  # x=0.5 belongs to the central (-0.5, 0.5] segment
    assert spec.grad(0.5 + 1e-9) == pytest.approx(0.41666)
    assert spec.grad(1.7) == pytest.approx(0.41666)
    assert spec.grad(1.7 + 1e-9) == 0.0


def test_pwl_zero_points():
    for n in ALL_SEGMENTS:
        assert act.pwl_spec("tanh", n).eval(0.0) == 0.0
        assert act.pwl_spec("sigmoid", n).eval(0.0) == 0.5


@pytest.mark.parametrize("function", ALL_FUNCTIONS)
@pytest.mark.parametrize("n_segments", ALL_SEGMENTS)
def test_pwl_monotone_bounded_symmetric(function, n_segments):
    spec = act.pwl_spec(function, n_segments)
    # Keep samples off the exact breakpoints: with half-open (lo, hi] segments
    # the mirror identity flips which segment owns x = +/-bp, so right at a
    # breakpoint symmetry only holds up to the junction gap.
    x = np.linspace(-8, 8, 4001) + 1.7e-4
    y = spec.eval(x)
    lo, hi = spec.limits
    # Junction gaps below tolerance survive the repair, so monotonicity across
    # a breakpoint is only guaranteed to within that gap.
    assert np.all(np.diff(y) >= -act.JUNCTION_TOL)
    assert np.all(y >= lo - 1e-12) and np.all(y <= hi + 1e-12)
    mirrored = -y[::-1] if function == "tanh" else 1.0 - y[::-1]
    np.testing.assert_allclose(spec.eval(-x)[::-1], mirrored, atol=1e-12)
    # At the breakpoints themselves the convention asymmetry stays bounded by
    # the junction tolerance.
    bp = spec.breakpoints
    mirror_bp = -spec.eval(-bp) if function == "tanh" else 1.0 - spec.eval(-bp)
    np.testing.assert_allclose(spec.eval(bp), mirror_bp, atol=act.JUNCTION_TOL)


def test_pwl_rejects_gapped_table():
    bad = [(-math.inf, -1.0, 0.0, -1.0), (-0.5, 1.0, 1.0, 0.0), (1.0, math.inf, 0.0, 1.0)]
    with pytest.raises(ValueError):
        act.repair_pwl_table(bad, "tanh")
    with pytest.raises(ValueError):
        act.pwl_spec_from_segments("tanh", bad)


# -- lut kind ----------------------------------------------------------------


def test_lut_level_arithmetic():
    spec = act.build_lut("tanh", 2, -2.0, 2.0)
    np.testing.assert_array_equal(act.lut_levels(spec), [-2.0, -1.0, 0.0, 1.0])
    assert spec.eval(-2.0) == np.tanh(-2.0)  # value at level 0 is exact
    assert len(spec.values) == 4 and len(spec.grad_values) == 4


def test_lut_default_ranges_hit_zero_exactly():
    for fn, mid in (("tanh", 0.0), ("sigmoid", 0.5)):
        for nb in (2, 4, 9):
            assert act.build_lut(fn, nb).eval(0.0) == mid


def test_lut_nearest_level_rounds_half_away_from_zero():
    spec = act.build_lut("tanh", 4)  # levels every Δ=0.5 on [-4, 4)
    assert spec.eval(0.25) == np.tanh(0.5)
    assert spec.eval(-0.25) == np.tanh(-0.5)
    assert spec.eval(0.24) == np.tanh(0.0)
    assert spec.eval(-0.24) == np.tanh(0.0)


def test_lut_clamps_to_boundary_entries():
    spec = act.build_lut("tanh", 4)
    levels = act.lut_levels(spec)
    assert spec.eval(100.0) == np.tanh(levels[-1])
    assert spec.eval(-100.0) == np.tanh(levels[0])
    assert spec.grad(100.0) == spec.grad_values[-1]


def test_lut_values_monotone_for_monotone_function():
    for fn in ALL_FUNCTIONS:
        spec = act.build_lut(fn, 4)
        assert np.all(np.diff(spec.values) >= 0)
        x = np.linspace(-8, 8, 2001)
        y = spec.eval(x)
        assert np.all(np.diff(y) >= 0)


def test_lut_gradient_is_the_stored_derivative_table():
    spec = act.build_lut("sigmoid", 5)
    levels = act.lut_levels(spec)
    s = exact_ref("sigmoid", levels)
    np.testing.assert_allclose(spec.grad_values, s * (1 - s), rtol=1e-14)
    # grad(x) equals the table entry of x's level
    x = np.array([0.1, -1.3, 2.7])
    idx = spec._lut_index(x)
    np.testing.assert_array_equal(spec.grad(x), spec.grad_values[idx])


@pytest.mark.parametrize("function", ALL_FUNCTIONS)
@pytest.mark.parametrize("n_bits", (2, 4, 6, 10, 16))
def test_lut_error_bound_holds_by_dense_sampling(function, n_bits):
    spec = act.build_lut(function, n_bits)
    x = np.linspace(-12, 12, 300001)
    err = np.max(np.abs(spec.eval(x) - exact_ref(function, x)))
    assert err <= act.lut_error_bound(spec) + 1e-15


def test_lut_validation():
    with pytest.raises(ValueError):
        act.build_lut("tanh", 1)
    with pytest.raises(ValueError):
        act.build_lut("tanh", 17)
    with pytest.raises(ValueError):
        act.build_lut("tanh", 4, 2.0, -2.0)


# -- gradients vs finite differences -----------------------------------------


@pytest.mark.parametrize(
    "spec",
    [
        act.exact_spec("tanh"),
        act.exact_spec("sigmoid"),
        act.taylor_spec("tanh", 9, 1.2),
        act.taylor_spec("sigmoid", 5, 2.0),
        act.pwl_spec("tanh", 9),
        act.pwl_spec("sigmoid", 7),
    ],
    ids=lambda s: s.label(),
)
def test_grad_matches_central_differences(spec):
    # sample points kept away from breakpoints / clamp boundaries by more
    # than the FD step
    rng = np.random.default_rng(7)
    x = rng.uniform(-3, 3, 400)
    h = 1e-6
    keep = np.ones(len(x), bool)
    if spec.kind == "pwl":
        for bp in spec.breakpoints:
            keep &= np.abs(x - bp) > 10 * h
    if spec.kind == "taylor":
        keep &= np.abs(np.abs(x) - spec.boundary) > 10 * h
    x = x[keep]
    fd = (spec.eval(x + h) - spec.eval(x - h)) / (2 * h)
    g = spec.grad(x)
    scale = np.maximum(np.abs(g), 1e-3)
    assert np.max(np.abs(fd - g) / scale) < 1e-6


# -- grid search --------------------------------------------------------------


def test_grid_search_single_candidate():
    assert act.grid_search_boundary(None, None, [1.3], score=lambda a: 0.0) == 1.3


def test_grid_search_order_invariance_and_optimality():
    def score(a):
        return -((a - 1.25) ** 2)

    cands = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0]
    shuffled = [1.5, 0.75, 1.25, 2.0, 0.5, 1.0]
    best1 = act.grid_search_boundary(None, None, cands, score=score)
    best2 = act.grid_search_boundary(None, None, shuffled, score=score)
    assert best1 == best2 == 1.25
    assert all(score(best1) >= score(c) for c in cands)
    with pytest.raises(ValueError):
        act.grid_search_boundary(None, None, [], score=score)


# -- csv round trip ------------------------------------------------------------


@pytest.mark.parametrize(
    "spec",
    [
        act.taylor_spec("tanh", 9, 1.15),
        act.pwl_spec("sigmoid", 9),
        act.build_lut("tanh", 6),
    ],
    ids=lambda s: s.label(),
)
def test_csv_round_trip_is_bit_exact(spec, tmp_path):
    path = tmp_path / "spec.csv"
    act.spec_to_csv(spec, path)
    back = act.spec_from_csv(path)
    assert back.kind == spec.kind and back.function == spec.function
    if spec.kind == "taylor":
        assert back.coeffs == spec.coeffs and back.boundary == spec.boundary
    elif spec.kind == "pwl":
        np.testing.assert_array_equal(back.breakpoints, spec.breakpoints)
        np.testing.assert_array_equal(back.slopes, spec.slopes)
        np.testing.assert_array_equal(back.intercepts, spec.intercepts)
    else:
        np.testing.assert_array_equal(back.values, spec.values)
        np.testing.assert_array_equal(back.grad_values, spec.grad_values)
        assert (back.x_min, back.x_max, back.n_bits) == (spec.x_min, spec.x_max, spec.n_bits)


def test_csv_rejects_unknown_schema(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# something-else v9\nkind,exact\n")
    with pytest.raises(ValueError):
        act.spec_from_csv(p)


# -- property tests ------------------------------------------------------------


@given(st.floats(-50, 50))
@settings(max_examples=200, deadline=None)
def test_every_kind_stays_in_range(x):
    for spec in (
        act.exact_spec("tanh"),
        act.taylor_spec("tanh", 9, 1.2),
        act.pwl_spec("tanh", 9),
        act.build_lut("tanh", 5),
    ):
        assert -1.0 - 1e-12 <= spec.eval(x) <= 1.0 + 1e-12
    for spec in (
        act.exact_spec("sigmoid"),
        act.taylor_spec("sigmoid", 9, 2.5),
        act.pwl_spec("sigmoid", 9),
        act.build_lut("sigmoid", 5),
    ):
        assert -1e-12 <= spec.eval(x) <= 1.0 + 1e-12


@given(st.integers(2, 10), st.floats(-6, 5.5), st.floats(1e-3, 0.5))
@settings(max_examples=150, deadline=None)
def test_lut_eval_is_idempotent_on_levels(n_bits, x, dx):
    # quantizing a level returns that level's value exactly
    spec = act.build_lut("tanh", n_bits)
    levels = act.lut_levels(spec)
    idx = int(spec._lut_index(np.asarray(x)))
    assert spec.eval(levels[idx]) == spec.values[idx]
