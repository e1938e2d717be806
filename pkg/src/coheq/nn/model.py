"""Equalizer models assembled from the layer kernels.

Two symbol-domain architectures share one interface:

* ``bilstm-cnn`` — a bidirectional LSTM over the input window followed by a
  linear output convolution with ``valid`` padding that trims the window
  down to the recovered central symbols.
* ``deep-cnn`` — two tanh convolutions with ``same`` padding followed by the
  identical output stage.

Both consume windows of received symbols with four real features per symbol
(in-phase and quadrature of each polarization) and emit the real and
imaginary parts of the recovered symbols of one polarization; the orthogonal
polarization is handled by a second, identically shaped model.
"""
from __future__ import annotations

import numpy as np

from ..activations import ActivationSpec, exact_spec
from .layers import BiLstmLayer, Conv1dLayer, LstmParams, MultCounter

__all__ = [
    "ARCH_BILSTM_CNN",
    "ARCH_DEEP_CNN",
    "EqualizerModel",
    "build_bilstm_cnn",
    "build_deep_cnn",
]

ARCH_BILSTM_CNN = "bilstm-cnn"
ARCH_DEEP_CNN = "deep-cnn"

#: Input features per symbol: Re/Im of each polarization.
N_FEATURES = 4
#: Output features per recovered symbol: Re/Im of one polarization.
N_OUTPUTS = 2


class EqualizerModel:
    """A stack of layers mapping symbol windows to recovered symbols.

    ``window_symbols`` and ``n_output_symbols`` describe the geometry the
    complexity model and the sliding-window evaluator rely on; the output
    length is derived from the layer stack, never stated independently.
    """

    def __init__(self, architecture: str, layers: list, *, window_symbols: int) -> None:
        if architecture not in (ARCH_BILSTM_CNN, ARCH_DEEP_CNN):
            raise ValueError(f"unknown architecture {architecture!r}")
        if not layers:
            raise ValueError("model needs at least one layer")
        self.architecture = architecture
        self.layers = list(layers)
        self.window_symbols = int(window_symbols)
        length = self.window_symbols
        width = N_FEATURES
        for layer in self.layers:
            if isinstance(layer, BiLstmLayer):
                if layer.n_input != width:
                    raise ValueError(
                        f"layer {layer.name}: expects {layer.n_input} channels, gets {width}"
                    )
                width = layer.n_output
            else:
                if layer.c_in != width:
                    raise ValueError(
                        f"layer {layer.name}: expects {layer.c_in} channels, gets {width}"
                    )
                width = layer.c_out
                if layer.padding == "valid":
                    length -= layer.kernel_size - 1
        if length < 1:
            raise ValueError("valid paddings consume the whole window")
        if width != N_OUTPUTS:
            raise ValueError(f"model must end with {N_OUTPUTS} output channels, ends with {width}")
        self.n_output_symbols = length

    # -- parameter access --------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed ``<layer>.<tensor>`` (update in place)."""
        out: dict[str, np.ndarray] = {}
        for layer in self.layers:
            for key, arr in layer.parameters().items():
                out[f"{layer.name}.{key}"] = arr
        return out

    def copy(self) -> "EqualizerModel":
        """Deep copy: fresh weight arrays, same activation bindings."""
        layers = []
        for layer in self.layers:
            if isinstance(layer, BiLstmLayer):
                layers.append(BiLstmLayer(
                    layer.name,
                    LstmParams(layer.fwd.w.copy(), layer.fwd.u.copy(), layer.fwd.b.copy(),
                               sigma_spec=layer.fwd.sigma_spec, phi_spec=layer.fwd.phi_spec),
                    LstmParams(layer.bwd.w.copy(), layer.bwd.u.copy(), layer.bwd.b.copy(),
                               sigma_spec=layer.bwd.sigma_spec, phi_spec=layer.bwd.phi_spec),
                ))
            else:
                layers.append(Conv1dLayer(
                    layer.name, layer.kernels.copy(), layer.bias.copy(),
                    padding=layer.padding, activation=layer.activation,
                ))
        return EqualizerModel(self.architecture, layers, window_symbols=self.window_symbols)

    def rebind_activations(
        self,
        *,
        tanh: ActivationSpec | None = None,
        sigmoid: ActivationSpec | None = None,
    ) -> "EqualizerModel":
        """Swap activation implementations; weight arrays are shared.

        ``None`` keeps a binding as-is.  Linear layers stay linear.
        """
        layers = []
        for layer in self.layers:
            if isinstance(layer, BiLstmLayer):
                sig = sigmoid if sigmoid is not None else layer.fwd.sigma_spec
                phi = tanh if tanh is not None else layer.fwd.phi_spec
                layers.append(layer.rebind(sig, phi))
            elif layer.activation is not None and tanh is not None:
                layers.append(layer.rebind(tanh))
            else:
                layers.append(layer)
        return EqualizerModel(self.architecture, layers, window_symbols=self.window_symbols)

    # -- inference and training --------------------------------------------

    def forward(self, windows: np.ndarray, counter: MultCounter | None = None) -> np.ndarray:
        """Map ``(batch, window, 4)`` to ``(batch, n_out, 2)`` (batch optional)."""
        y = windows
        for layer in self.layers:
            y = layer.forward(y, counter)
        return y

    def loss_and_gradients(
        self, windows: np.ndarray, targets: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean-squared error and its gradient for every parameter tensor.

        The loss averages over batch, symbol position and the two output
        components.  Gradient keys match :meth:`parameters`.
        """
        x = np.asarray(windows, dtype=np.float64)
        y_ref = np.asarray(targets, dtype=np.float64)
        if x.ndim == 2:
            x = x[np.newaxis]
        if y_ref.ndim == 2:
            y_ref = y_ref[np.newaxis]
        caches = []
        y = x
        for layer in self.layers:
            y, cache = layer.forward_cache(y)
            caches.append(cache)
        if y.shape != y_ref.shape:
            raise ValueError(f"targets shaped {y_ref.shape}, model emits {y.shape}")
        err = y - y_ref
        loss = float(np.mean(err * err))
        grads: dict[str, np.ndarray] = {}
        dy = (2.0 / err.size) * err
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, layer_grads = layer.backward(cache, dy)
            for key, g in layer_grads.items():
                grads[f"{layer.name}.{key}"] = g
        return loss, grads


def build_bilstm_cnn(
    seed: int,
    *,
    window_symbols: int = 81,
    n_hidden: int = 35,
    output_kernel: int = 21,
    sigma_spec: ActivationSpec | None = None,
    phi_spec: ActivationSpec | None = None,
) -> EqualizerModel:
    """Recurrent equalizer: biLSTM over the window, linear ``valid`` output."""
    rng = np.random.RandomState(seed)
    sig = sigma_spec if sigma_spec is not None else exact_spec("sigmoid")
    phi = phi_spec if phi_spec is not None else exact_spec("tanh")
    layers = [
        BiLstmLayer.glorot("bilstm", N_FEATURES, n_hidden, rng, sigma_spec=sig, phi_spec=phi),
        Conv1dLayer.glorot(
            "out", 2 * n_hidden, N_OUTPUTS, output_kernel, rng, padding="valid", activation=None
        ),
    ]
    return EqualizerModel(ARCH_BILSTM_CNN, layers, window_symbols=window_symbols)


def build_deep_cnn(
    seed: int,
    *,
    window_symbols: int = 81,
    n_filters: int = 35,
    hidden_kernel: int = 11,
    output_kernel: int = 21,
    phi_spec: ActivationSpec | None = None,
) -> EqualizerModel:
    """Convolutional equalizer: two tanh ``same`` stages, linear ``valid`` output."""
    rng = np.random.RandomState(seed)
    phi = phi_spec if phi_spec is not None else exact_spec("tanh")
    layers = [
        Conv1dLayer.glorot(
            "conv1", N_FEATURES, n_filters, hidden_kernel, rng, padding="same", activation=phi
        ),
        Conv1dLayer.glorot(
            "conv2", n_filters, n_filters, hidden_kernel, rng, padding="same", activation=phi
        ),
        Conv1dLayer.glorot(
            "out", n_filters, N_OUTPUTS, output_kernel, rng, padding="valid", activation=None
        ),
    ]
    return EqualizerModel(ARCH_DEEP_CNN, layers, window_symbols=window_symbols)
