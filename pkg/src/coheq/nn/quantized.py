"""Integer-only inference: int32 tensors with a power-of-two scale.

A real value ``v`` is stored as ``round(v * 2**frac_bits)`` in an int32.
Products are accumulated in int64 (two quantized factors carry
``2*frac_bits`` fractional bits), rescaled back with a rounding arithmetic
shift, and checked against the int32 range at every stage — an overflow is
reported with the offending magnitude rather than wrapped.  Nonlinearities
evaluate their activation spec on the dequantized pre-activation and
requantize the result; with table or piecewise specs this matches what a
hardware implementation computes bit for bit, up to the output rounding.
"""
from __future__ import annotations

import numpy as np

from .layers import BiLstmLayer, Conv1dLayer, LstmParams, _conv_windows
from .model import EqualizerModel

__all__ = ["quantize_tensor", "dequantize", "quantize_int32", "FixedPointModel"]

INT32_MAX = 2 ** 31 - 1


def quantize_tensor(values: np.ndarray, frac_bits: int, *, name: str = "tensor") -> np.ndarray:
    """Round to the int32 grid; reject values the format cannot hold."""
    scaled = np.round(np.asarray(values, dtype=np.float64) * (1 << frac_bits))
    worst = float(np.max(np.abs(scaled))) if scaled.size else 0.0
    if worst > INT32_MAX:
        limit = INT32_MAX / (1 << frac_bits)
        peak = float(np.max(np.abs(values)))
        raise ValueError(
            f"{name}: magnitude {peak:g} exceeds the int32 range "
            f"(+/-{limit:g} at {frac_bits} fractional bits)"
        )
    return scaled.astype(np.int32)


def dequantize(q: np.ndarray, frac_bits: int) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / (1 << frac_bits)


def _requant(acc: np.ndarray, frac_bits: int, *, name: str) -> np.ndarray:
    """Drop ``frac_bits`` fractional bits with rounding; verify int32 range."""
    shifted = (acc + (1 << (frac_bits - 1))) >> frac_bits
    worst = int(np.max(np.abs(shifted))) if shifted.size else 0
    if worst > INT32_MAX:
        raise ValueError(
            f"{name}: rescaled value {worst} overflows int32 "
            f"({frac_bits} fractional bits)"
        )
    return shifted.astype(np.int32)


class _QuantLstmDirection:
    def __init__(self, p: LstmParams, frac_bits: int, name: str) -> None:
        self.w = quantize_tensor(p.w, frac_bits, name=f"{name}.w").astype(np.int64)
        self.u = quantize_tensor(p.u, frac_bits, name=f"{name}.u").astype(np.int64)
        self.b = quantize_tensor(p.b, frac_bits, name=f"{name}.b").astype(np.int64)
        self.sigma_spec = p.sigma_spec
        self.phi_spec = p.phi_spec
        self.n_hidden = p.n_hidden


class _QuantBiLstm:
    def __init__(self, layer: BiLstmLayer, frac_bits: int) -> None:
        self.name = layer.name
        self.fwd = _QuantLstmDirection(layer.fwd, frac_bits, f"{layer.name}.fwd")
        self.bwd = _QuantLstmDirection(layer.bwd, frac_bits, f"{layer.name}.bwd")

    def _direction(self, d: _QuantLstmDirection, x: np.ndarray, frac: int, reverse: bool) -> np.ndarray:
        batch, n_time, _ = x.shape
        nh = d.n_hidden
        name = f"{self.name}.{'bwd' if reverse else 'fwd'}"
        h = np.zeros((batch, nh), dtype=np.int64)
        c = np.zeros((batch, nh), dtype=np.int64)
        out = np.empty((batch, n_time, nh), dtype=np.int64)
        xw = x.reshape(batch * n_time, -1) @ d.w  # int64, scale 2**(2*frac)
        xw = xw.reshape(batch, n_time, -1)
        order = range(n_time - 1, -1, -1) if reverse else range(n_time)
        for t in order:
            z = _requant(xw[:, t] + h @ d.u, frac, name=name).astype(np.int64) + d.b
            zf = dequantize(z, frac)
            i = quantize_tensor(d.sigma_spec.eval(zf[:, 0 * nh:1 * nh]), frac, name=name)
            f = quantize_tensor(d.sigma_spec.eval(zf[:, 1 * nh:2 * nh]), frac, name=name)
            g = quantize_tensor(d.phi_spec.eval(zf[:, 2 * nh:3 * nh]), frac, name=name)
            o = quantize_tensor(d.sigma_spec.eval(zf[:, 3 * nh:4 * nh]), frac, name=name)
            c = _requant(
                f.astype(np.int64) * c + i.astype(np.int64) * g, frac, name=name
            ).astype(np.int64)
            tau = quantize_tensor(d.phi_spec.eval(dequantize(c, frac)), frac, name=name)
            h = _requant(o.astype(np.int64) * tau, frac, name=name).astype(np.int64)
            out[:, t] = h
        return out

    def forward(self, x: np.ndarray, frac: int) -> np.ndarray:
        h_f = self._direction(self.fwd, x, frac, reverse=False)
        h_b = self._direction(self.bwd, x, frac, reverse=True)
        return np.concatenate([h_f, h_b], axis=2)


class _QuantConv:
    def __init__(self, layer: Conv1dLayer, frac_bits: int) -> None:
        self.name = layer.name
        self.kernels = quantize_tensor(
            layer.kernels, frac_bits, name=f"{layer.name}.kernels"
        ).astype(np.int64)
        self.bias = quantize_tensor(
            layer.bias, frac_bits, name=f"{layer.name}.bias"
        ).astype(np.int64)
        self.padding = layer.padding
        self.activation = layer.activation
        self.kernel_size = layer.kernels.shape[2]

    def forward(self, x: np.ndarray, frac: int) -> np.ndarray:
        win = _conv_windows(x, self.kernel_size, self.padding)
        acc = np.einsum("btck,ock->bto", win, self.kernels, optimize=True)
        pre = _requant(acc, frac, name=self.name).astype(np.int64) + self.bias
        if self.activation is None:
            return pre
        return quantize_tensor(
            self.activation.eval(dequantize(pre, frac)), frac, name=self.name
        ).astype(np.int64)


class FixedPointModel:
    """Integer twin of an :class:`~coheq.nn.model.EqualizerModel`.

    Built by :func:`quantize_int32`; holds only quantized tensors plus the
    activation bindings.  ``forward`` accepts and returns floats — inputs
    are quantized on entry, outputs dequantized on exit — so it drops into
    the same evaluation helpers as the float model.
    """

    def __init__(self, model: EqualizerModel, frac_bits: int) -> None:
        if not 0 < frac_bits < 31:
            raise ValueError(f"frac_bits must lie in 1..30, got {frac_bits}")
        self.architecture = model.architecture
        self.frac_bits = int(frac_bits)
        self.window_symbols = model.window_symbols
        self.n_output_symbols = model.n_output_symbols
        self.layers = [
            _QuantBiLstm(l, frac_bits) if isinstance(l, BiLstmLayer) else _QuantConv(l, frac_bits)
            for l in model.layers
        ]

    def forward(self, windows: np.ndarray) -> np.ndarray:
        x = np.asarray(windows, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[np.newaxis]
        q = quantize_tensor(x, self.frac_bits, name="input").astype(np.int64)
        for layer in self.layers:
            q = layer.forward(q, self.frac_bits)
        out = dequantize(q, self.frac_bits)
        return out[0] if single else out


def quantize_int32(model: EqualizerModel, frac_bits: int) -> FixedPointModel:
    """Calibrate an integer model; rejects weights outside the int32 range."""
    return FixedPointModel(model, frac_bits)
