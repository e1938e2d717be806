"""Binary dataset containers for simulated transmission runs.

One container holds one propagated frame at one launch power: the
transmitted symbols (with their source bits), the received waveform at a
moderate oversampling (enough bandwidth headroom for the nonlinear receiver
chain), and the linearly equalized, normalized, noise-loaded symbols that
feed the neural equalizers.

Layout, all little-endian::

    magic            8 bytes  b"COHEQDS1"
    version          u32      currently 1
    symbol_rate_bd   f64
    sample_rate_hz   f64      rate of the stored waveform
    launch_power_dbm f64
    noise_sigma      f64      symbol-domain AWGN applied to the stored
                              equalized symbols (0 = none)
    seed             i64      master seed of the run (-1 = unseeded)
    link             f64 alpha_db_per_km, f64 dispersion_ps_nm_km,
                     f64 gamma_w_km, f64 lambda_nm, f64 span_km,
                     u32 n_spans, f64 edfa_nf_db, f64 step_km
    n_symbols        u64
    n_wave_samples   u64
    body: complex arrays as interleaved (re, im) f64 pairs —
      tx_h, tx_v                     n_symbols each
      wave_h, wave_v                 n_wave_samples each
      eq_h, eq_v                     n_symbols each
    bits: u8, one byte per bit, H-polarization bits then V (4 per
      symbol per polarization)

Files are written to a temporary sibling and renamed into place, so a
half-written container is never observed under the target name.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .channel import FiberLinkParams, SignalFrame, SymbolBlock

__all__ = [
    "LinkDataset",
    "save_dataset",
    "load_dataset",
    "features",
    "MAGIC",
    "FORMAT_VERSION",
]

MAGIC = b"COHEQDS1"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<8sI4dq5dI2d2Q")


@dataclass(frozen=True)
class LinkDataset:
    """One propagated frame plus its receiver-side products.

    ``tx`` carries the source bits; ``rx_wave`` is the stored capture — the
    post-fiber waveform with ``noise_sigma`` of receiver noise already added
    at the capture rate; ``rx_symbols`` are the dispersion-compensated,
    scale-normalized symbols recovered from that capture — the equalizer
    input.
    """

    launch_power_dbm: float
    noise_sigma: float
    seed: int | None
    link: FiberLinkParams
    tx: SymbolBlock
    rx_wave: SignalFrame
    rx_symbols: SymbolBlock

    def __post_init__(self) -> None:
        if self.tx.source_bits is None:
            raise ValueError("transmitted block must carry its source bits")
        if len(self.rx_symbols.symbols_h) != self.n_symbols:
            raise ValueError(
                f"equalized block has {len(self.rx_symbols.symbols_h)} symbols, "
                f"transmitted block {self.n_symbols}"
            )
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def n_symbols(self) -> int:
        return len(self.tx.symbols_h)


def _c128(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<c16").tobytes()


def save_dataset(ds: LinkDataset, path) -> None:
    """Write a container atomically (temp file + rename)."""
    link = ds.link
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION,
        ds.rx_wave.symbol_rate_bd, ds.rx_wave.sample_rate_hz,
        ds.launch_power_dbm, ds.noise_sigma,
        -1 if ds.seed is None else ds.seed,
        link.alpha_db_per_km, link.dispersion_ps_nm_km, link.gamma_w_km,
        link.lambda_nm, link.span_km, link.n_spans, link.edfa_nf_db, link.step_km,
        ds.n_symbols, ds.rx_wave.n_samples,
    )
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(_c128(ds.tx.symbols_h))
            fh.write(_c128(ds.tx.symbols_v))
            fh.write(_c128(ds.rx_wave.samples_h))
            fh.write(_c128(ds.rx_wave.samples_v))
            fh.write(_c128(ds.rx_symbols.symbols_h))
            fh.write(_c128(ds.rx_symbols.symbols_v))
            fh.write(np.ascontiguousarray(ds.tx.source_bits, dtype=np.uint8).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path) -> LinkDataset:
    """Read a container written by :func:`save_dataset` (bit-exact)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ValueError("not a dataset container (bad magic)")
    (
        _, version, symbol_rate, sample_rate, power_dbm, noise_sigma, seed,
        alpha, dispersion, gamma, lam, span, n_spans, nf, step,
        n_symbols, n_wave,
    ) = _HEADER.unpack_from(raw, 0)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    pos = _HEADER.size
    expected = pos + 16 * (4 * n_symbols + 2 * n_wave) + 8 * n_symbols
    if len(raw) != expected:
        raise ValueError(f"container is {len(raw)} bytes, layout implies {expected}")

    def c128(n: int) -> np.ndarray:
        nonlocal pos
        out = np.frombuffer(raw, dtype="<c16", count=n, offset=pos).copy()
        pos += 16 * n
        return out

    tx_h, tx_v = c128(n_symbols), c128(n_symbols)
    wave_h, wave_v = c128(n_wave), c128(n_wave)
    eq_h, eq_v = c128(n_symbols), c128(n_symbols)
    bits = np.frombuffer(raw, dtype=np.uint8, count=8 * n_symbols, offset=pos).copy()
    return LinkDataset(
        launch_power_dbm=power_dbm,
        noise_sigma=noise_sigma,
        seed=None if seed == -1 else seed,
        link=FiberLinkParams(
            alpha_db_per_km=alpha, dispersion_ps_nm_km=dispersion, gamma_w_km=gamma,
            lambda_nm=lam, span_km=span, n_spans=n_spans, edfa_nf_db=nf, step_km=step,
        ),
        tx=SymbolBlock(tx_h, tx_v, source_bits=bits),
        rx_wave=SignalFrame(wave_h, wave_v, sample_rate_hz=sample_rate, symbol_rate_bd=symbol_rate),
        rx_symbols=SymbolBlock(eq_h, eq_v),
    )


def features(ds: LinkDataset, *, margin: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Equalizer input/target arrays for the interior of the frame.

    The first and last ``margin`` symbols carry circular-boundary artifacts
    from the periodic propagation and are excluded.  Returns ``x`` of shape
    ``(n, 4)`` — Re/Im of each received polarization — and ``y`` of shape
    ``(n, 2)`` — Re/Im of the transmitted H polarization.
    """
    n = ds.n_symbols
    if margin < 0 or 2 * margin >= n:
        raise ValueError(f"margin {margin} leaves no interior in a {n}-symbol frame")
    sl = slice(margin, n - margin)
    rx_h = ds.rx_symbols.symbols_h[sl]
    rx_v = ds.rx_symbols.symbols_v[sl]
    tx_h = ds.tx.symbols_h[sl]
    x = np.stack([rx_h.real, rx_h.imag, rx_v.real, rx_v.imag], axis=1)
    y = np.stack([tx_h.real, tx_h.imag], axis=1)
    return x, y
