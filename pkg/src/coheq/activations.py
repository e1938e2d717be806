"""Exact and approximated nonlinear activations (tanh, sigmoid).

Four interchangeable activation kinds share one evaluation contract:

* ``exact``  -- library-precision tanh / logistic sigmoid,
* ``taylor`` -- truncated odd-order series, clamped to the saturation values
  outside a boundary ``a`` (found by grid search, not by fitting),
* ``pwl``    -- piecewise-linear segment tables; the shipped coefficient
  tables contain three internal inconsistencies in their 9-segment rows,
  which :func:`repair_pwl_table` corrects for continuity and symmetry,
* ``lut``    -- nearest-level lookup over a uniform input grid, with a
  companion gradient table (the forward map is piecewise constant, so
  training uses the stored derivative instead of the true gradient).

Every spec provides ``eval`` and ``grad`` so the network code can treat the
activation binding as opaque.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Literal

import numpy as np

logger = logging.getLogger(__name__)

FunctionName = Literal["tanh", "sigmoid"]
SpecKind = Literal["exact", "taylor", "pwl", "lut"]

# Saturation limits (lo, hi) of each function family.
_LIMITS = {"tanh": (-1.0, 1.0), "sigmoid": (0.0, 1.0)}

# Exact series coefficients about x=0, keyed by power.  The sigmoid series
# follows from sigma(x) = 1/2 + tanh(x/2)/2.  Kept as Fractions so a spec can
# be checked against the exact rationals, not a float transcription.
TANH_SERIES: dict[int, Fraction] = {
    1: Fraction(1),
    3: Fraction(-1, 3),
    5: Fraction(2, 15),
    7: Fraction(-17, 315),
    9: Fraction(62, 2835),
}
SIGMOID_SERIES: dict[int, Fraction] = {
    0: Fraction(1, 2),
    1: Fraction(1, 4),
    3: Fraction(-1, 48),
    5: Fraction(1, 480),
    7: Fraction(-17, 80640),
    9: Fraction(31, 1451520),
}

# Default LUT input ranges: wide enough that the clamp error at the range
# edge is far below the quantization step for every usable n_bits.
LUT_RANGE = {"tanh": (-4.0, 4.0), "sigmoid": (-6.0, 6.0)}

# Default boundary grids for the Taylor clamp search.
TAYLOR_BOUNDARY_GRID = {
    "tanh": np.round(np.arange(0.50, 2.0001, 0.05), 10),
    "sigmoid": np.round(np.arange(1.00, 4.0001, 0.05), 10),
}


def _exact_eval(function: FunctionName, x: np.ndarray) -> np.ndarray:
    if function == "tanh":
        return np.tanh(x)
    # Overflow-safe logistic: exp of a non-positive argument only.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _exact_grad(function: FunctionName, x: np.ndarray) -> np.ndarray:
    if function == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    s = _exact_eval("sigmoid", x)
    return s * (1.0 - s)


@dataclass(frozen=True, eq=False)
class ActivationSpec:
    """Tagged description of one activation implementation.

    Construct through :func:`exact_spec`, :func:`taylor_spec`,
    :func:`pwl_spec` or :func:`build_lut`; the payload fields used depend on
    ``kind``.  Instances are immutable and safe to share between models.
    """

    kind: SpecKind
    function: FunctionName
    # taylor payload: polynomial coefficients by ascending power, clamp point
    order: int | None = None
    boundary: float | None = None
    coeffs: tuple[float, ...] = ()
    # pwl payload: n-1 sorted breakpoints, n slopes/intercepts; segment i
    # covers (bp[i-1], bp[i]]
    breakpoints: np.ndarray | None = None
    slopes: np.ndarray | None = None
    intercepts: np.ndarray | None = None
    # lut payload: 2**n_bits uniform levels over [x_min, x_max)
    n_bits: int | None = None
    x_min: float | None = None
    x_max: float | None = None
    values: np.ndarray | None = None
    grad_values: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("breakpoints", "slopes", "intercepts", "values", "grad_values"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr, dtype=np.float64)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)

    @property
    def limits(self) -> tuple[float, float]:
        return _LIMITS[self.function]

    def label(self) -> str:
        if self.kind == "exact":
            return f"{self.function}/exact"
        if self.kind == "taylor":
            return f"{self.function}/taylor{self.order}@{self.boundary:g}"
        if self.kind == "pwl":
            return f"{self.function}/pwl{len(self.slopes)}seg"
        return f"{self.function}/lut{self.n_bits}b"

    # -- evaluation ------------------------------------------------------

    def eval(self, x):
        """Evaluate the activation at ``x`` (scalar or ndarray)."""
        xa = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(xa)):
            raise ValueError("activation input must be finite")
        out = self._eval_array(xa)
        return float(out) if np.isscalar(x) or xa.ndim == 0 else out

    def grad(self, x):
        """Derivative used for training; see class docstring for the LUT case."""
        xa = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(xa)):
            raise ValueError("activation input must be finite")
        out = self._grad_array(xa)
        return float(out) if np.isscalar(x) or xa.ndim == 0 else out

    def _eval_array(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.limits
        if self.kind == "exact":
            return _exact_eval(self.function, x)
        if self.kind == "taylor":
            # The polynomial branch is clipped as well: high orders overshoot
            # the saturation values inside large clamp boundaries, and every
            # spec must stay within the function's range.
            p = np.clip(self._poly(x, self.coeffs), lo, hi)
            return np.where(x > self.boundary, hi, np.where(x < -self.boundary, lo, p))
        if self.kind == "pwl":
            i = np.searchsorted(self.breakpoints, x, side="left")
            return self.slopes[i] * x + self.intercepts[i]
        return self.values[self._lut_index(x)]

    def _grad_array(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "exact":
            return _exact_grad(self.function, x)
        if self.kind == "taylor":
            lo, hi = self.limits
            dcoeffs = tuple(k * c for k, c in enumerate(self.coeffs))[1:]
            p = self._poly(x, self.coeffs)
            dp = np.where((p < lo) | (p > hi), 0.0, self._poly(x, dcoeffs))
            return np.where(np.abs(x) > self.boundary, 0.0, dp)
        if self.kind == "pwl":
            # side="left" puts a breakpoint into its left segment (tie-break).
            return self.slopes[np.searchsorted(self.breakpoints, x, side="left")]
        return self.grad_values[self._lut_index(x)]

    @staticmethod
    def _poly(x: np.ndarray, coeffs: tuple[float, ...]) -> np.ndarray:
        acc = np.zeros_like(x)
        for c in reversed(coeffs):
            acc = acc * x + c
        return acc

    def _lut_index(self, x: np.ndarray) -> np.ndarray:
        step = (self.x_max - self.x_min) / len(self.values)
        pos = (x - self.x_min) / step
        # Nearest level, half-away-from-zero in x; inputs outside the range
        # clamp to the boundary entries.
        idx = np.where(x >= 0, np.floor(pos + 0.5), np.ceil(pos - 0.5))
        return np.clip(idx, 0, len(self.values) - 1).astype(np.intp)


# -- constructors ----------------------------------------------------------


def exact_spec(function: FunctionName) -> ActivationSpec:
    return ActivationSpec(kind="exact", function=function)


def taylor_spec(function: FunctionName, order: int, boundary: float) -> ActivationSpec:
    """Truncated series of the given highest (odd) order, clamped at ``boundary``."""
    if order % 2 == 0 or not 1 <= order <= 9:
        raise ValueError(f"taylor order must be odd and <= 9, got {order}")
    if boundary <= 0:
        raise ValueError("boundary must be positive")
    series = TANH_SERIES if function == "tanh" else SIGMOID_SERIES
    coeffs = tuple(
        float(series.get(k, Fraction(0))) for k in range(order + 1)
    )
    return ActivationSpec(
        kind="taylor", function=function, order=order, boundary=float(boundary), coeffs=coeffs
    )


def pwl_spec_from_segments(
    function: FunctionName, segments: list[tuple[float, float, float, float]]
) -> ActivationSpec:
    """Build a PWL spec from (x_lo, x_hi, slope, intercept) rows tiling the real line."""
    seg = sorted(segments)
    if not math.isinf(seg[0][0]) or not math.isinf(seg[-1][1]):
        raise ValueError("segment table must cover the whole real line")
    for (_, hi, _, _), (lo, _, _, _) in zip(seg, seg[1:]):
        if hi != lo:
            raise ValueError(f"segment table has a gap or overlap at {hi} vs {lo}")
    return ActivationSpec(
        kind="pwl",
        function=function,
        breakpoints=np.array([s[1] for s in seg[:-1]]),
        slopes=np.array([s[2] for s in seg]),
        intercepts=np.array([s[3] for s in seg]),
    )


def pwl_spec(function: FunctionName, n_segments: int) -> ActivationSpec:
    """Shipped segment table for 3/5/7/9 segments, repaired where inconsistent."""
    segments, _ = load_pwl_table(function, n_segments)
    return pwl_spec_from_segments(function, segments)


def build_lut(
    function: FunctionName,
    n_bits: int,
    x_min: float | None = None,
    x_max: float | None = None,
) -> ActivationSpec:
    """Uniform-level lookup table with exact values and derivatives at the levels.

    ``2**n_bits`` levels are placed at ``x_min + k*step`` with
    ``step = (x_max - x_min) / 2**n_bits`` (half-open range: ``x_max`` itself
    is not a level).  For the default symmetric ranges this puts a level at
    exactly 0.
    """
    if not 2 <= n_bits <= 16:
        raise ValueError(f"n_bits must be in 2..16, got {n_bits}")
    if x_min is None or x_max is None:
        x_min, x_max = LUT_RANGE[function]
    if not x_min < x_max:
        raise ValueError("need x_min < x_max")
    n = 1 << n_bits
    step = (x_max - x_min) / n
    levels = x_min + step * np.arange(n)
    return ActivationSpec(
        kind="lut",
        function=function,
        n_bits=n_bits,
        x_min=float(x_min),
        x_max=float(x_max),
        values=_exact_eval(function, levels),
        grad_values=_exact_grad(function, levels),
    )


def lut_levels(spec: ActivationSpec) -> np.ndarray:
    """The quantization-level grid of a LUT spec."""
    n = len(spec.values)
    step = (spec.x_max - spec.x_min) / n
    return spec.x_min + step * np.arange(n)


def lut_error_bound(spec: ActivationSpec) -> float:
    """Upper bound on |spec.eval(x) - exact(x)| over the whole real line.

    Inside the level grid the nearest-level error is at most
    max|f'| * step/2; outside it the clamp to the boundary entry is bounded
    by the remaining saturation tail.
    """
    lo, hi = spec.limits
    step = (spec.x_max - spec.x_min) / len(spec.values)
    max_slope = 1.0 if spec.function == "tanh" else 0.25
    tail_hi = hi - float(spec.values[-1])
    tail_lo = float(spec.values[0]) - lo
    return max(max_slope * step / 2.0, tail_hi, tail_lo)


def taylor_max_error(spec: ActivationSpec, n_points: int = 20001) -> float:
    """Max |approx - exact| on [-boundary, boundary] by dense sampling."""
    x = np.linspace(-spec.boundary, spec.boundary, n_points)
    return float(np.max(np.abs(spec.eval(x) - _exact_eval(spec.function, x))))


# -- shipped PWL coefficient tables ----------------------------------------

_INF = math.inf

# Raw (x_lo, x_hi, slope, intercept) rows exactly as printed in the source
# coefficient tables.  The 9-segment rows carry three typographic
# inconsistencies; repair_pwl_table() corrects them at load time and pwl_spec
# only ever exposes the repaired form.
PWL_RAW_TABLES: dict[tuple[str, int], list[tuple[float, float, float, float]]] = {
    ("tanh", 3): [
        (-_INF, -1.1, 0.0, -1.0),
        (-1.1, 1.1, 0.90909, 0.0),
        (1.1, _INF, 0.0, 1.0),
    ],
    ("tanh", 5): [
        (-_INF, -1.7, 0.0, -1.0),
        (-1.7, -0.5, 0.41666, -0.29166),
        (-0.5, 0.5, 1.0, 0.0),
        (0.5, 1.7, 0.41666, 0.29166),
        (1.7, _INF, 0.0, 1.0),
    ],
    ("tanh", 7): [
        (-_INF, -1.8, 0.0, -1.0),
        (-1.8, -1.1, 0.285, -0.48699),
        (-1.1, -0.4, 0.57214, -0.17114),
        (-0.4, 0.4, 1.0, 0.0),
        (0.4, 1.1, 0.57214, 0.17114),
        (1.1, 1.8, 0.285, 0.48699),
        (1.8, _INF, 0.0, 1.0),
    ],
    ("tanh", 9): [
        (-_INF, -2.2, 0.0, -1.0),
        (-2.2, -1.4, 0.14331, -0.68417),
        (-1.4, -0.9, 0.3381, -0.412),
        (-0.9, -0.3, 0.269382, -0.09185),
        (-0.3, 0.3, 1.0, 0.0),
        (0.3, 0.9, 0.269382, 0.09185),
        (0.9, 1.4, 0.3381, 0.412),
        (1.4, 2.2, 0.14331, 0.68417),
        (2.2, _INF, 0.0, 1.0),
    ],
    ("sigmoid", 3): [
        (-_INF, -2.2, 0.0, 0.0),
        (-2.2, 2.2, 0.22727, 0.5),
        (2.2, _INF, 0.0, 1.0),
    ],
    ("sigmoid", 5): [
        (-_INF, -2.6, 0.0, 0.0),
        (-2.6, -0.8, 0.17223, 0.44781),
        (-0.8, 0.8, 0.23747, 0.5),
        (0.8, 2.6, 0.17223, 0.55219),
        (2.6, _INF, 0.0, 1.0),
    ],
    ("sigmoid", 7): [
        (-_INF, -3.0, 0.0, 0.0),
        (-3.0, -1.4, 0.12363, 0.37091),
        (-1.4, -0.8, 0.18701, 0.45964),
        (-0.8, 0.8, 0.23747, 0.5),
        (0.8, 1.4, 0.18701, 0.54036),
        (1.4, 3.0, 0.12363, 0.62909),
        (3.0, _INF, 0.0, 1.0),
    ],
    ("sigmoid", 9): [
        (-_INF, -3.4, 0.0, 0.0),
        (-3.4, -2.0, 0.182242, 0.28949),
        (-2.0, -1.5, 0.12644, 0.37209),
        (-1.5, -0.8, 0.08514, 0.45585),
        (-0.8, 0.8, 0.23747, 0.5),
        (0.8, 1.5, 0.182242, 0.09185),
        (1.5, 2.0, 0.12644, 0.62791),
        (2.0, 3.4, 0.08514, 0.71051),
        (3.4, _INF, 0.0, 1.0),
    ],
}

JUNCTION_TOL = 1e-3


def load_pwl_table(
    function: FunctionName, n_segments: int
) -> tuple[list[tuple[float, float, float, float]], list[str]]:
    """Repaired shipped table plus the list of applied corrections."""
    key = (function, n_segments)
    if key not in PWL_RAW_TABLES:
        raise ValueError(f"no shipped PWL table for {function} with {n_segments} segments")
    return repair_pwl_table(PWL_RAW_TABLES[key], function)


def repair_pwl_table(
    raw: list[tuple[float, float, float, float]],
    function: FunctionName,
    tol: float = JUNCTION_TOL,
) -> tuple[list[tuple[float, float, float, float]], list[str]]:
    """Minimally correct a segment table for continuity and symmetry.

    The positive half is validated outside-in against the saturation anchor;
    a segment whose printed coefficients break continuity is re-solved from
    the trusted values at its two breakpoints, keeping whichever printed
    coefficient (slope or intercept) is consistent with that line.  The
    negative half is then regenerated from the positive half via
    f(-x) = -f(x) (tanh) or sigma(-x) = 1 - sigma(x).

    Returns the repaired table and a human-readable correction log.  Raises
    ``ValueError`` for tables that cannot be repaired this way (coverage
    gaps, broken anchors, or adjacent broken segments).
    """
    lo_lim, hi_lim = _LIMITS[function]
    seg = sorted(raw)
    n = len(seg)
    if n % 2 == 0:
        raise ValueError("segment count must be odd")
    if not math.isinf(seg[0][0]) or not math.isinf(seg[-1][1]):
        raise ValueError("unrepairable: table does not cover the real line")
    for (_, hi, _, _), (lo2, _, _, _) in zip(seg, seg[1:]):
        if hi != lo2:
            raise ValueError(f"unrepairable: gap between {hi} and {lo2}")

    mid = n // 2
    # Trusted anchors: constant outer segments at the saturation values and a
    # central segment through (0, f(0)).
    if seg[-1][2] != 0.0 or seg[-1][3] != hi_lim or seg[0][2] != 0.0 or seg[0][3] != lo_lim:
        raise ValueError("unrepairable: outer segments are not the saturation constants")
    if abs(seg[mid][3] - (0.0 if function == "tanh" else 0.5)) > 1e-9:
        raise ValueError("unrepairable: central segment misses f(0)")

    corrections: list[str] = []
    fixed: dict[int, tuple[float, float]] = {n - 1: (seg[n - 1][2], seg[n - 1][3]),
                                             mid: (seg[mid][2], seg[mid][3])}

    def value_at(idx: int, x: float) -> float:
        m, b = fixed[idx]
        return m * x + b

    # Positive half, outside-in; defer segments whose printed line breaks
    # the junction with the already-trusted outer neighbour.
    deferred: list[int] = []
    for k in range(n - 2, mid, -1):
        x_hi = seg[k][1]
        v_hi = value_at(k + 1, x_hi)
        m, b = seg[k][2], seg[k][3]
        if abs(m * x_hi + b - v_hi) < tol:
            fixed[k] = (m, b)
        else:
            deferred.append(k)

    for k in deferred:
        if k - 1 not in fixed or k + 1 not in fixed:
            raise ValueError("unrepairable: adjacent inconsistent segments")
        x_lo, x_hi = seg[k][0], seg[k][1]
        v_lo, v_hi = value_at(k - 1, x_lo), value_at(k + 1, x_hi)
        m_solved = (v_hi - v_lo) / (x_hi - x_lo)
        b_solved = v_hi - m_solved * x_hi
        m_raw, b_raw = seg[k][2], seg[k][3]
        if abs(b_raw - b_solved) < tol:
            m, b = (v_hi - b_raw) / x_hi, b_raw
            corrections.append(
                f"{function} segment ({x_lo},{x_hi}]: slope {m_raw} -> {m:.6g} "
                f"(printed intercept {b_raw} kept)"
            )
        elif abs(m_raw - m_solved) < tol:
            m, b = m_raw, v_hi - m_raw * x_hi
            corrections.append(
                f"{function} segment ({x_lo},{x_hi}]: intercept {b_raw} -> {b:.6g} "
                f"(printed slope {m_raw} kept)"
            )
        else:
            m, b = m_solved, b_solved
            corrections.append(
                f"{function} segment ({x_lo},{x_hi}]: re-solved to slope {m:.6g}, "
                f"intercept {b:.6g}"
            )
        fixed[k] = (m, b)

    # Negative half regenerated by symmetry from the repaired positive half.
    repaired = list(seg)
    for k in range(n - 1, mid - 1, -1):
        m, b = fixed[k]
        repaired[k] = (seg[k][0], seg[k][1], m, b)
    for k in range(mid):
        src = repaired[n - 1 - k]
        m = src[2]
        b = -src[3] if function == "tanh" else 1.0 - src[3]
        if abs(m - seg[k][2]) > 1e-9 or abs(b - seg[k][3]) > 1e-9:
            corrections.append(
                f"{function} segment ({seg[k][0]},{seg[k][1]}]: mirrored from positive "
                f"side to slope {m:.6g}, intercept {b:.6g} "
                f"(printed {seg[k][2]}, {seg[k][3]})"
            )
        repaired[k] = (seg[k][0], seg[k][1], m, b)

    for (_, hi, m1, b1), (lo2, _, m2, b2) in zip(repaired, repaired[1:]):
        if abs((m1 * hi + b1) - (m2 * hi + b2)) >= tol:
            raise ValueError(f"unrepairable: residual discontinuity at {hi}")
    for rec in corrections:
        logger.info("pwl repair: %s", rec)
    return repaired, corrections


# -- boundary grid search ---------------------------------------------------


def grid_search_boundary(
    model,
    valid_data,
    candidates,
    *,
    function: FunctionName = "tanh",
    order: int = 9,
    score: Callable[[float], float] | None = None,
) -> float:
    """Clamp boundary maximizing validation Q with frozen weights.

    Every candidate boundary is substituted (as a Taylor spec of the given
    order for ``function``) into the model's activation bindings and scored
    on the validation set; weights are not retrained.  ``score`` overrides
    the default Q-factor scorer (useful for tests).
    """
    cand = [float(c) for c in candidates]
    if not cand:
        raise ValueError("candidates must be non-empty")
    if score is None:
        from .nn.evaluation import q_factor_with_specs  # deferred: avoids import cycle

        def score(a: float) -> float:
            spec = taylor_spec(function, order, a)
            return q_factor_with_specs(model, valid_data, {function: spec})

    best_a, best_q = cand[0], -math.inf
    for a in cand:
        q = score(a)
        if q > best_q:
            best_a, best_q = a, q
    return best_a


# -- CSV round trip ----------------------------------------------------------

CSV_SCHEMA = "coheq-activation-csv v1"


def spec_to_csv(spec: ActivationSpec, path) -> None:
    """Write a spec's coefficient table; floats are stored with full repr."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CSV_SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(["kind", spec.kind])
        w.writerow(["function", spec.function])
        if spec.kind == "taylor":
            w.writerow(["order", spec.order])
            w.writerow(["boundary", repr(spec.boundary)])
            w.writerow(["power", "coeff"])
            for k, c in enumerate(spec.coeffs):
                w.writerow([k, repr(c)])
        elif spec.kind == "pwl":
            w.writerow(["x_lo", "x_hi", "slope", "intercept"])
            bps = [-_INF, *spec.breakpoints.tolist(), _INF]
            for i, (m, b) in enumerate(zip(spec.slopes, spec.intercepts)):
                w.writerow([repr(bps[i]), repr(bps[i + 1]), repr(float(m)), repr(float(b))])
        elif spec.kind == "lut":
            w.writerow(["n_bits", spec.n_bits])
            w.writerow(["x_min", repr(spec.x_min)])
            w.writerow(["x_max", repr(spec.x_max)])
            w.writerow(["level", "value", "grad"])
            for lv, v, g in zip(lut_levels(spec), spec.values, spec.grad_values):
                w.writerow([repr(float(lv)), repr(float(v)), repr(float(g))])
        else:
            pass  # exact specs carry no table


def spec_from_csv(path) -> ActivationSpec:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != f"# {CSV_SCHEMA}":
            raise ValueError(f"unrecognized schema line: {header!r}")
        rows = list(csv.reader(fh))
    meta = {}
    i = 0
    while i < len(rows) and rows[i] and rows[i][0] not in ("power", "x_lo", "level"):
        meta[rows[i][0]] = rows[i][1]
        i += 1
    kind, function = meta["kind"], meta["function"]
    body = rows[i + 1:] if i < len(rows) else []
    if kind == "exact":
        return exact_spec(function)
    if kind == "taylor":
        coeffs = tuple(float(r[1]) for r in body)
        return ActivationSpec(
            kind="taylor",
            function=function,
            order=int(meta["order"]),
            boundary=float(meta["boundary"]),
            coeffs=coeffs,
        )
    if kind == "pwl":
        segs = [(float(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in body]
        return pwl_spec_from_segments(function, segs)
    if kind == "lut":
        values = np.array([float(r[1]) for r in body])
        grads = np.array([float(r[2]) for r in body])
        return ActivationSpec(
            kind="lut",
            function=function,
            n_bits=int(meta["n_bits"]),
            x_min=float(meta["x_min"]),
            x_max=float(meta["x_max"]),
            values=values,
            grad_values=grads,
        )
    raise ValueError(f"unknown spec kind {kind!r}")
