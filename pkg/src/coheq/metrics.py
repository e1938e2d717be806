"""Signal-quality and hardware-economics metrics.

Covers the two sides of equalizer evaluation: transmission quality (pre-FEC
BER and the Q-factor derived from it) and implementation cost (real-multiplier
counts per recovered symbol, achievable throughput, and the number of
equivalent FPGAs needed to reach a target line rate).

Published synthesis results (clock, utilization, resource counts) ship as a
versioned CSV in ``coheq/data`` — they are externally sourced inputs, and
:func:`resource_table_report` recomputes every derived column from them,
flagging disagreements beyond a tolerance.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, fields
from importlib import resources

import numpy as np

from .channel import SymbolBlock, demap_16qam

#: Single-carrier DP-16QAM at 34 GBd per polarization: 34e9 * 4 * 2 bits/s.
TARGET_200G_BPS = 272e9

#: Dual-carrier 400G scenario simply doubles the 200G resources.
DUAL_CARRIER_FACTOR = 2.0

#: 56 GBd single-carrier 400G scenario: time-domain resources grow roughly
#: quadratically with symbol rate.
RATE_56GBD_FACTOR = (56.0 / 34.0) ** 2


# ---------------------------------------------------------------------------
# inverse complementary error function
# ---------------------------------------------------------------------------

# Rational approximation of the inverse normal CDF (P. Acklam's coefficients,
# widely reproduced; abs. relative error ~1.15e-9 before refinement).
_ICDF_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ICDF_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ICDF_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ICDF_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)
_ICDF_P_LOW = 0.02425


def _inverse_normal_cdf(p: float) -> float:
    """Acklam's rational approximation of the standard normal quantile."""
    a, b, c, d = _ICDF_A, _ICDF_B, _ICDF_C, _ICDF_D
    if p < _ICDF_P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (
            ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        ) / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    if p > 1.0 - _ICDF_P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(
            ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        ) / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (
        ((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]
    ) * q / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)


def erfcinv(y: float) -> float:
    """Inverse of math.erfc on (0, 2), accurate to well below 1e-10.

    A documented rational initial guess (inverse normal quantile, since
    erfc⁻¹(y) = -Φ⁻¹(y/2)/√2) is polished with one Newton step on
    f(x) = erfc(x) - y, whose derivative -2/√π · exp(-x²) is exact.
    """
    if not 0.0 < y < 2.0:
        raise ValueError("erfcinv is defined on the open interval (0, 2)")
    if y > 1.0:
        # Reflect into the well-conditioned half: erfc(x) - y cancels
        # catastrophically as y -> 2, while 2 - y is exact for y in [1, 2).
        return -erfcinv(2.0 - y)
    x = -_inverse_normal_cdf(y / 2.0) / math.sqrt(2.0)
    return x + (math.erfc(x) - y) * (math.sqrt(math.pi) / 2.0) * math.exp(x * x)


# ---------------------------------------------------------------------------
# BER and Q-factor
# ---------------------------------------------------------------------------

def bit_errors(symbols: np.ndarray, reference_bits: np.ndarray) -> int:
    """Hard-decision bit error count of one symbol sequence against its bits."""
    reference_bits = np.asarray(reference_bits, dtype=np.uint8)
    decided = demap_16qam(symbols)
    if decided.size != reference_bits.size:
        raise ValueError(
            f"{decided.size} demapped bits vs {reference_bits.size} reference bits"
        )
    return int(np.count_nonzero(decided != reference_bits))


def ber_symbols(symbols: np.ndarray, reference_bits: np.ndarray) -> float:
    """Pre-FEC BER of a single-polarization symbol sequence."""
    reference_bits = np.asarray(reference_bits)
    if reference_bits.size == 0:
        raise ValueError("empty reference bit sequence")
    return bit_errors(symbols, reference_bits) / reference_bits.size


def ber(predicted: SymbolBlock, reference_bits: np.ndarray) -> float:
    """Pre-FEC BER of a dual-polarization block (both polarizations pooled)."""
    reference_bits = np.asarray(reference_bits, dtype=np.uint8)
    half = reference_bits.size // 2
    if reference_bits.size != 8 * predicted.n_symbols:
        raise ValueError("reference bits do not match the block size")
    errors = bit_errors(predicted.symbols_h, reference_bits[:half]) + bit_errors(
        predicted.symbols_v, reference_bits[half:]
    )
    return errors / reference_bits.size


def q_factor(ber_value: float) -> float:
    """Q = 20 log10(√2 · erfc⁻¹(2·BER)) in dB.

    Outside the open interval (0, 0.5) the formula has no finite value; the
    sentinel +inf (error-free) or -inf (at/beyond random guessing) is
    returned instead so sweeps can carry the flag through serialization.
    """
    if math.isnan(ber_value) or ber_value < 0.0 or ber_value > 1.0:
        raise ValueError(f"BER must lie in [0, 1], got {ber_value}")
    if ber_value == 0.0:
        return math.inf
    if ber_value >= 0.5:
        return -math.inf
    return 20.0 * math.log10(math.sqrt(2.0) * erfcinv(2.0 * ber_value))


def ber_for_q(q_db: float) -> float:
    """Gaussian-theory BER giving the requested Q-factor (inverse of q_factor)."""
    return 0.5 * math.erfc(10.0 ** (q_db / 20.0) / math.sqrt(2.0))


def evm(reference: np.ndarray, received: np.ndarray) -> float:
    """Error vector magnitude: RMS error over RMS reference amplitude."""
    reference = np.asarray(reference)
    received = np.asarray(received)
    if reference.shape != received.shape:
        raise ValueError("reference and received shapes differ")
    denom = np.linalg.norm(reference)
    if denom == 0:
        raise ValueError("reference has zero energy")
    return float(np.linalg.norm(received - reference) / denom)


# ---------------------------------------------------------------------------
# throughput and FPGA-count formulas
# ---------------------------------------------------------------------------

def throughput(clock_hz: float, qam_order: int, n_out: int) -> float:
    """Achieved throughput T_a = clock × log2(QAM) × n_out, in bits/s.

    ``n_out`` is the number of symbols recovered in parallel per clocked
    inference.
    """
    if qam_order < 2 or qam_order & (qam_order - 1):
        raise ValueError(f"qam_order must be a power of two >= 2, got {qam_order}")
    if n_out < 0:
        raise ValueError("n_out must be non-negative")
    if clock_hz <= 0:
        raise ValueError("clock_hz must be positive")
    return clock_hz * math.log2(qam_order) * n_out


def n_fpga(t_target: float, t_achieved: float, utilization: float) -> float:
    """Equivalent FPGA count N = T_target / T_a · U_t.

    ``utilization`` is the peak fraction used across resource kinds of one
    device.  Scenario scalings (dual-carrier ×2, 56 GBd ×(56/34)²) are applied
    by the caller.
    """
    if t_target <= 0 or t_achieved <= 0:
        raise ValueError("throughputs must be positive")
    if not 0.0 < utilization <= 1.0:
        raise ValueError("utilization must be in (0, 1]")
    return t_target / t_achieved * utilization


# ---------------------------------------------------------------------------
# real-multiplier accounting
# ---------------------------------------------------------------------------

def lstm_step_multipliers(n_in: int, n_hidden: int) -> int:
    """Real multiplications of one LSTM cell update for one direction.

    Four gates of (n_in + n_hidden) -> n_hidden affine maps plus the three
    element-wise Hadamard products of the state path.
    """
    return 4 * n_hidden * (n_in + n_hidden) + 3 * n_hidden


def conv_position_multipliers(c_in: int, c_out: int, kernel: int) -> int:
    """Real multiplications of a 1-D convolution at one output position."""
    return c_out * c_in * kernel


@dataclass(frozen=True)
class MultiplierCount:
    """Per-layer and total real-multiplication counts for one inference."""

    per_layer: tuple[tuple[str, int], ...]
    total: int
    n_output_symbols: int

    @property
    def per_symbol(self) -> int:
        if self.total == 0:
            return 0
        return math.ceil(self.total / self.n_output_symbols)


def count_real_multipliers(model) -> MultiplierCount:
    """Closed-form multiplication count of an equalizer model per inference.

    The model must expose ``window_symbols``, ``n_output_symbols`` and a
    ``layers`` sequence whose entries are either recurrent (``n_input``,
    ``n_hidden``, ``bidirectional``) or convolutional (``c_in``, ``c_out``,
    ``kernel_size``, ``padding``).  Counts are exact and are validated against
    an instrumented forward pass elsewhere.
    """
    per_layer = []
    total = 0
    length = model.window_symbols
    for i, layer in enumerate(model.layers):
        name = getattr(layer, "name", f"layer{i}")
        if hasattr(layer, "n_hidden"):
            directions = 2 if layer.bidirectional else 1
            count = directions * length * lstm_step_multipliers(
                layer.n_input, layer.n_hidden
            )
        elif hasattr(layer, "kernel_size"):
            if layer.padding == "same":
                positions = length
            elif layer.padding == "valid":
                positions = length - layer.kernel_size + 1
            else:
                raise ValueError(f"unknown padding {layer.padding!r}")
            count = positions * conv_position_multipliers(
                layer.c_in, layer.c_out, layer.kernel_size
            )
            length = positions
        else:
            raise TypeError(f"layer {name} has no recognizable dimensions")
        per_layer.append((name, count))
        total += count
    return MultiplierCount(
        per_layer=tuple(per_layer),
        total=total,
        n_output_symbols=model.n_output_symbols,
    )


# ---------------------------------------------------------------------------
# published hardware tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HwTableRow:
    """One published synthesis row: inputs plus the reported derived values."""

    table: str
    design: str
    latency_us: float
    clock_mhz: float
    bram: int
    srl: int
    dsp_slices: int | None
    lut: int
    ff: int
    dsp_util_pct: float | None
    lut_util_pct: float | None
    ff_util_pct: float | None
    throughput_gbps: float
    n_fpga_200g: float
    n_fpga_400g_dual: float
    n_fpga_400g_56gbd: float

    @property
    def max_utilization(self) -> float:
        """Peak utilization fraction across the reported resource kinds."""
        pcts = [
            p
            for p in (self.dsp_util_pct, self.lut_util_pct, self.ff_util_pct)
            if p is not None
        ]
        return max(pcts) / 100.0


@dataclass(frozen=True)
class DerivedCell:
    name: str
    computed: float
    published: float
    rel_err: float
    ok: bool


@dataclass(frozen=True)
class RowReport:
    row: HwTableRow
    cells: tuple[DerivedCell, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.cells)


def load_hw_tables() -> list[HwTableRow]:
    """Read the packaged CSV of published synthesis rows."""
    text = resources.files("coheq.data").joinpath("hw_tables.csv").read_text()
    rows = []
    reader = csv.DictReader(
        line for line in text.splitlines() if not line.startswith("#")
    )
    for rec in reader:
        def opt(key):
            return float(rec[key]) if rec[key] != "" else None

        rows.append(
            HwTableRow(
                table=rec["table"],
                design=rec["design"],
                latency_us=float(rec["latency_us"]),
                clock_mhz=float(rec["clock_mhz"]),
                bram=int(rec["bram"]),
                srl=int(rec["srl"]),
                dsp_slices=int(rec["dsp_slices"]) if rec["dsp_slices"] != "" else None,
                lut=int(rec["lut"]),
                ff=int(rec["ff"]),
                dsp_util_pct=opt("dsp_util_pct"),
                lut_util_pct=opt("lut_util_pct"),
                ff_util_pct=opt("ff_util_pct"),
                throughput_gbps=float(rec["throughput_gbps"]),
                n_fpga_200g=float(rec["n_fpga_200g"]),
                n_fpga_400g_dual=float(rec["n_fpga_400g_dual"]),
                n_fpga_400g_56gbd=float(rec["n_fpga_400g_56gbd"]),
            )
        )
    if not rows:
        raise ValueError("hardware table data file is empty")
    return rows


def resource_table_report(
    rows: list[HwTableRow] | None = None,
    *,
    tol: float = 0.05,
    t_target: float = TARGET_200G_BPS,
    qam_order: int = 16,
    n_out: int = 61,
) -> list[RowReport]:
    """Recompute every derived table column and compare with published values.

    Inputs per row are the synthesis outputs (clock, utilization); derived are
    the throughput and the three FPGA-count scenarios.  A cell is flagged when
    it disagrees with the published (rounded) number by more than ``tol``
    relative.
    """
    if rows is None:
        rows = load_hw_tables()
    reports = []
    for row in rows:
        t_a = throughput(row.clock_mhz * 1e6, qam_order, n_out)
        n200 = n_fpga(t_target, t_a, row.max_utilization)
        computed = {
            "throughput_gbps": t_a / 1e9,
            "n_fpga_200g": n200,
            "n_fpga_400g_dual": n200 * DUAL_CARRIER_FACTOR,
            "n_fpga_400g_56gbd": n200 * RATE_56GBD_FACTOR,
        }
        cells = []
        for name, value in computed.items():
            published = getattr(row, name)
            rel = abs(value - published) / abs(published)
            cells.append(
                DerivedCell(
                    name=name,
                    computed=value,
                    published=published,
                    rel_err=rel,
                    ok=rel <= tol,
                )
            )
        reports.append(RowReport(row=row, cells=tuple(cells)))
    return reports


# ---------------------------------------------------------------------------
# aggregated report record
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """One evaluated operating point, ready for sweep aggregation."""

    ber: float
    q_db: float
    n_real_mults_per_symbol: int
    throughput_gbps: float
    n_fpga: float
    utilization: float
    clock_mhz: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.ber <= 0.5:
            raise ValueError("ber out of [0, 0.5]")
        if not 0.0 < self.utilization <= 1.0:
            raise ValueError("utilization out of (0, 1]")

    def is_consistent(self, tol: float = 1e-9) -> bool:
        """Check q_db against the closed formula for the stored BER."""
        expected = q_factor(self.ber)
        if math.isinf(expected) or math.isinf(self.q_db):
            return expected == self.q_db
        return abs(expected - self.q_db) <= tol

    def to_json_line(self) -> str:
        return json.dumps(
            {f.name: getattr(self, f.name) for f in fields(self)}, sort_keys=True
        )

    @classmethod
    def from_json_line(cls, line: str) -> "MetricsReport":
        return cls(**json.loads(line))


def report_from_ber(
    ber_value: float,
    *,
    n_real_mults_per_symbol: int = 0,
    clock_mhz: float = 270.0,
    qam_order: int = 16,
    n_out: int = 61,
    utilization: float = 0.64,
    t_target: float = TARGET_200G_BPS,
) -> MetricsReport:
    """Assemble a consistent report from a measured BER and hardware inputs."""
    t_a = throughput(clock_mhz * 1e6, qam_order, n_out)
    return MetricsReport(
        ber=ber_value,
        q_db=q_factor(ber_value),
        n_real_mults_per_symbol=n_real_mults_per_symbol,
        throughput_gbps=t_a / 1e9,
        n_fpga=n_fpga(t_target, t_a, utilization),
        utilization=utilization,
        clock_mhz=clock_mhz,
    )


def reports_to_csv(reports: list[MetricsReport]) -> str:
    """Serialize reports to CSV text (header + one row each)."""
    buf = io.StringIO()
    names = [f.name for f in fields(MetricsReport)]
    writer = csv.writer(buf)
    writer.writerow(names)
    for rep in reports:
        writer.writerow([repr(getattr(rep, n)) for n in names])
    return buf.getvalue()


def reports_from_csv(text: str) -> list[MetricsReport]:
    names = [f.name for f in fields(MetricsReport)]
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != names:
        raise ValueError(f"unexpected CSV header {header}")
    out = []
    for row in reader:
        values = dict(zip(names, (float(v) for v in row)))
        values["n_real_mults_per_symbol"] = int(values["n_real_mults_per_symbol"])
        out.append(MetricsReport(**values))
    return out
