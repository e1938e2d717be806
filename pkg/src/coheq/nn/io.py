"""Binary weight container for trained equalizers.

Layout (all integers little-endian)::

    magic     8 bytes  b"COHEQWT1"
    version   u32      currently 1
    arch      u8 length + utf-8 tag
    quantized u8       0 = float64 body, 1 = int32 body
    frac_bits i32      -1 for float models
    window    u32      input window length in symbols
    n_layers  u32
    per layer:
      kind    u8       1 = bidirectional LSTM, 2 = convolution
      name    u16 length + utf-8
      lstm:   u32 n_input, u32 n_hidden, sigma spec blob, phi spec blob
      conv:   u32 c_in, u32 c_out, u32 kernel, u8 padding (0 valid / 1 same),
              u8 has_activation [, activation spec blob]
    body: per layer, in model order —
      lstm: fwd.w, fwd.u, fwd.b, bwd.w, bwd.u, bwd.b
      conv: kernels, bias
      each tensor raw little-endian float64 (or int32 when quantized).

Activation spec blobs carry the full coefficient tables, so a loaded model
reproduces the saved one bit for bit — including approximated activations.
"""
from __future__ import annotations

import struct

import numpy as np

from ..activations import ActivationSpec, exact_spec
from .layers import BiLstmLayer, Conv1dLayer, LstmParams
from .model import EqualizerModel
from .quantized import FixedPointModel, dequantize, quantize_int32

__all__ = ["save_model", "load_model", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"COHEQWT1"
FORMAT_VERSION = 1

_SPEC_KINDS = ("exact", "taylor", "pwl", "lut")
_FUNCTIONS = ("tanh", "sigmoid")


def _pack_str(s: str, width: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(f"<{width}", len(raw)) + raw


def _pack_spec(spec: ActivationSpec) -> bytes:
    out = struct.pack("<BB", _SPEC_KINDS.index(spec.kind), _FUNCTIONS.index(spec.function))
    if spec.kind == "exact":
        return out
    if spec.kind == "taylor":
        out += struct.pack("<Id", spec.order, spec.boundary)
        out += struct.pack("<I", len(spec.coeffs))
        return out + np.asarray(spec.coeffs, dtype="<f8").tobytes()
    if spec.kind == "pwl":
        out += struct.pack("<I", len(spec.slopes))
        for arr in (spec.breakpoints, spec.slopes, spec.intercepts):
            out += arr.astype("<f8").tobytes()
        return out
    out += struct.pack("<Idd", spec.n_bits, spec.x_min, spec.x_max)
    out += struct.pack("<I", len(spec.values))
    return out + spec.values.astype("<f8").tobytes() + spec.grad_values.astype("<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += struct.calcsize(fmt)
        return vals if len(vals) > 1 else vals[0]

    def raw(self, n: int) -> bytes:
        out = self.data[self.pos:self.pos + n]
        if len(out) != n:
            raise ValueError("weight file is truncated")
        self.pos += n
        return out

    def text(self, width: str) -> str:
        return self.raw(self.unpack(f"<{width}")).decode("utf-8")

    def f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self.raw(8 * n), dtype="<f8").copy()


def _read_spec(r: _Reader) -> ActivationSpec:
    kind_i, fn_i = r.unpack("<BB")
    kind, function = _SPEC_KINDS[kind_i], _FUNCTIONS[fn_i]
    if kind == "exact":
        return exact_spec(function)
    if kind == "taylor":
        order, boundary = r.unpack("<Id")
        n = r.unpack("<I")
        return ActivationSpec(
            kind="taylor", function=function, order=order, boundary=boundary,
            coeffs=tuple(r.f64(n)),
        )
    if kind == "pwl":
        n = r.unpack("<I")
        return ActivationSpec(
            kind="pwl", function=function,
            breakpoints=r.f64(n - 1), slopes=r.f64(n), intercepts=r.f64(n),
        )
    n_bits, x_min, x_max = r.unpack("<Idd")
    n = r.unpack("<I")
    return ActivationSpec(
        kind="lut", function=function, n_bits=n_bits, x_min=x_min, x_max=x_max,
        values=r.f64(n), grad_values=r.f64(n),
    )


def _float_twin(model: EqualizerModel | FixedPointModel) -> tuple[EqualizerModel, int]:
    """The float model to serialize plus the fractional-bit tag (-1 = float)."""
    if isinstance(model, EqualizerModel):
        return model, -1
    frac = model.frac_bits
    layers = []
    for q in model.layers:
        if hasattr(q, "fwd"):
            layers.append(BiLstmLayer(
                q.name,
                LstmParams(
                    dequantize(q.fwd.w, frac), dequantize(q.fwd.u, frac),
                    dequantize(q.fwd.b, frac),
                    sigma_spec=q.fwd.sigma_spec, phi_spec=q.fwd.phi_spec,
                ),
                LstmParams(
                    dequantize(q.bwd.w, frac), dequantize(q.bwd.u, frac),
                    dequantize(q.bwd.b, frac),
                    sigma_spec=q.bwd.sigma_spec, phi_spec=q.bwd.phi_spec,
                ),
            ))
        else:
            layers.append(Conv1dLayer(
                q.name, dequantize(q.kernels, frac), dequantize(q.bias, frac),
                padding=q.padding, activation=q.activation,
            ))
    return EqualizerModel(model.architecture, layers, window_symbols=model.window_symbols), frac


def save_model(model: EqualizerModel | FixedPointModel, path) -> None:
    """Serialize a float or fixed-point model to the container format."""
    twin, frac_bits = _float_twin(model)
    head = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    head.append(_pack_str(twin.architecture, "B"))
    head.append(struct.pack("<Bi", 0 if frac_bits < 0 else 1, frac_bits))
    head.append(struct.pack("<II", twin.window_symbols, len(twin.layers)))
    body: list[bytes] = []

    def emit(arr: np.ndarray) -> None:
        if frac_bits < 0:
            body.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        else:
            scaled = np.round(np.asarray(arr, dtype=np.float64) * (1 << frac_bits))
            body.append(scaled.astype("<i4").tobytes())

    for layer in twin.layers:
        if isinstance(layer, BiLstmLayer):
            head.append(struct.pack("<B", 1) + _pack_str(layer.name, "H"))
            head.append(struct.pack("<II", layer.n_input, layer.n_hidden))
            head.append(_pack_spec(layer.fwd.sigma_spec))
            head.append(_pack_spec(layer.fwd.phi_spec))
            for p in (layer.fwd, layer.bwd):
                emit(p.w)
                emit(p.u)
                emit(p.b)
        else:
            head.append(struct.pack("<B", 2) + _pack_str(layer.name, "H"))
            head.append(struct.pack(
                "<IIIBB",
                layer.c_in, layer.c_out, layer.kernel_size,
                1 if layer.padding == "same" else 0,
                0 if layer.activation is None else 1,
            ))
            if layer.activation is not None:
                head.append(_pack_spec(layer.activation))
            emit(layer.kernels)
            emit(layer.bias)
    with open(path, "wb") as fh:
        fh.write(b"".join(head))
        fh.write(b"".join(body))


def load_model(path) -> EqualizerModel | FixedPointModel:
    """Read a container written by :func:`save_model` (bit-exact round trip)."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.raw(8) != MAGIC:
        raise ValueError("not an equalizer weight file (bad magic)")
    version = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported weight format version {version}")
    arch = r.text("B")
    quantized, frac_bits = r.unpack("<Bi")
    window, n_layers = r.unpack("<II")
    descr: list[tuple] = []
    for _ in range(n_layers):
        kind = r.unpack("<B")
        name = r.text("H")
        if kind == 1:
            n_in, n_hidden = r.unpack("<II")
            sigma, phi = _read_spec(r), _read_spec(r)
            descr.append(("lstm", name, n_in, n_hidden, sigma, phi))
        elif kind == 2:
            c_in, c_out, k, pad, has_act = r.unpack("<IIIBB")
            act = _read_spec(r) if has_act else None
            descr.append(("conv", name, c_in, c_out, k, pad, act))
        else:
            raise ValueError(f"unknown layer kind {kind}")

    def take(shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        if quantized:
            q = np.frombuffer(r.raw(4 * n), dtype="<i4").astype(np.float64)
            return (q / (1 << frac_bits)).reshape(shape)
        return r.f64(n).reshape(shape)

    layers = []
    for item in descr:
        if item[0] == "lstm":
            _, name, n_in, nh, sigma, phi = item
            dirs = []
            for _ in range(2):
                w = take((n_in, 4 * nh))
                u = take((nh, 4 * nh))
                b = take((4 * nh,))
                dirs.append(LstmParams(w, u, b, sigma_spec=sigma, phi_spec=phi))
            layers.append(BiLstmLayer(name, dirs[0], dirs[1]))
        else:
            _, name, c_in, c_out, k, pad, act = item
            kernels = take((c_out, c_in, k))
            bias = take((c_out,))
            layers.append(Conv1dLayer(
                name, kernels, bias,
                padding="same" if pad else "valid", activation=act,
            ))
    if r.pos != len(r.data):
        raise ValueError("weight file has trailing bytes")
    model = EqualizerModel(arch, layers, window_symbols=window)
    if quantized:
        return quantize_int32(model, frac_bits)
    return model
