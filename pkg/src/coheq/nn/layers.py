"""Recurrent and convolutional kernels for the symbol-domain equalizers.

Everything here is hand-rolled on top of plain ``numpy`` arrays: forward
passes, the backward passes (backpropagation through time for the LSTM,
transposed correlation for the convolution), and an instrumented multiplier
tally used to cross-check the closed-form complexity model.

Conventions
-----------
* Sequences are ``(batch, time, channels)`` float64 arrays; single windows
  ``(time, channels)`` are accepted and treated as a batch of one.
* LSTM gate order along the packed weight axis is ``i, f, g, o`` where ``g``
  is the candidate cell value (``i``nput, ``f``orget, candidate, ``o``utput).
* Nonlinearities go through :class:`~coheq.activations.ActivationSpec`
  bindings so exact, polynomial, piecewise-linear and table-lookup variants
  of the same network differ only in the bound specs.  Gradients always come
  from ``spec.grad``, which keeps training consistent with whatever forward
  approximation is in place.
* The multiplier tally counts real multiplications of the underlying
  arithmetic (matrix products and elementwise gate products).  Activation
  evaluations are excluded: in the hardware they are tables or shift/add
  segments, not multipliers.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..activations import ActivationSpec

__all__ = [
    "MultCounter",
    "LstmState",
    "LstmParams",
    "lstm_cell_step",
    "bilstm_forward",
    "BiLstmLayer",
    "conv1d",
    "Conv1dLayer",
]


class MultCounter:
    """Running tally of real multiplications executed by a forward pass."""

    __slots__ = ("total",)

    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


class LstmState(NamedTuple):
    """Hidden and cell state of one LSTM direction (``(..., n_hidden)``)."""

    h: np.ndarray
    c: np.ndarray


def _as_batch(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    """Promote an unbatched array to batch size one; report if it was."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[np.newaxis], True
    if x.ndim != ndim:
        raise ValueError(f"expected {ndim - 1}- or {ndim}-dimensional input, got shape {x.shape}")
    return x, False


class LstmParams:
    """Weights of a single LSTM direction plus its activation bindings.

    Storage is packed for speed: ``w`` is ``(n_input, 4*n_hidden)``, ``u`` is
    ``(n_hidden, 4*n_hidden)`` and ``b`` is ``(4*n_hidden,)`` with gate order
    ``i, f, g, o`` along the last axis.  The conventional per-gate matrices
    (``W_i`` of shape ``(n_hidden, n_input)`` and so on) are exposed as
    read-only views for inspection and serialization.
    """

    GATES = ("i", "f", "g", "o")

    def __init__(
        self,
        w: np.ndarray,
        u: np.ndarray,
        b: np.ndarray,
        *,
        sigma_spec: ActivationSpec,
        phi_spec: ActivationSpec,
    ) -> None:
        w = np.ascontiguousarray(w, dtype=np.float64)
        u = np.ascontiguousarray(u, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] % 4:
            raise ValueError(f"w must be (n_input, 4*n_hidden), got {w.shape}")
        n_hidden = w.shape[1] // 4
        if u.shape != (n_hidden, 4 * n_hidden):
            raise ValueError(f"u must be {(n_hidden, 4 * n_hidden)}, got {u.shape}")
        if b.shape != (4 * n_hidden,):
            raise ValueError(f"b must be ({4 * n_hidden},), got {b.shape}")
        if sigma_spec.function != "sigmoid":
            raise ValueError("sigma_spec must approximate the sigmoid")
        if phi_spec.function != "tanh":
            raise ValueError("phi_spec must approximate tanh")
        self.w = w
        self.u = u
        self.b = b
        self.sigma_spec = sigma_spec
        self.phi_spec = phi_spec

    @property
    def n_input(self) -> int:
        return self.w.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.w.shape[1] // 4

    def _gate(self, packed: np.ndarray, gate: str) -> np.ndarray:
        k = self.GATES.index(gate)
        h = self.n_hidden
        return packed[..., k * h:(k + 1) * h]

    # Per-gate views in the conventional (n_hidden, n_input) orientation.
    @property
    def W_i(self) -> np.ndarray:
        return self._gate(self.w, "i").T

    @property
    def W_f(self) -> np.ndarray:
        return self._gate(self.w, "f").T

    @property
    def W_c(self) -> np.ndarray:
        return self._gate(self.w, "g").T

    @property
    def W_o(self) -> np.ndarray:
        return self._gate(self.w, "o").T

    @property
    def U_i(self) -> np.ndarray:
        return self._gate(self.u, "i").T

    @property
    def U_f(self) -> np.ndarray:
        return self._gate(self.u, "f").T

    @property
    def U_c(self) -> np.ndarray:
        return self._gate(self.u, "g").T

    @property
    def U_o(self) -> np.ndarray:
        return self._gate(self.u, "o").T

    @property
    def b_i(self) -> np.ndarray:
        return self._gate(self.b, "i")

    @property
    def b_f(self) -> np.ndarray:
        return self._gate(self.b, "f")

    @property
    def b_c(self) -> np.ndarray:
        return self._gate(self.b, "g")

    @property
    def b_o(self) -> np.ndarray:
        return self._gate(self.b, "o")

    @classmethod
    def glorot(
        cls,
        n_input: int,
        n_hidden: int,
        rng: np.random.RandomState,
        *,
        sigma_spec: ActivationSpec,
        phi_spec: ActivationSpec,
    ) -> "LstmParams":
        """Fan-based uniform init per gate block; biases start at zero."""
        w = np.empty((n_input, 4 * n_hidden))
        u = np.empty((n_hidden, 4 * n_hidden))
        lim_w = np.sqrt(6.0 / (n_input + n_hidden))
        lim_u = np.sqrt(6.0 / (n_hidden + n_hidden))
        for k in range(4):
            sl = slice(k * n_hidden, (k + 1) * n_hidden)
            w[:, sl] = rng.uniform(-lim_w, lim_w, (n_input, n_hidden))
            u[:, sl] = rng.uniform(-lim_u, lim_u, (n_hidden, n_hidden))
        return cls(w, u, np.zeros(4 * n_hidden), sigma_spec=sigma_spec, phi_spec=phi_spec)


def lstm_cell_step(
    params: LstmParams,
    x_t: np.ndarray,
    state: LstmState,
    counter: MultCounter | None = None,
) -> LstmState:
    """One LSTM time step.

    ``i = sigma(W_i x + U_i h + b_i)`` and likewise for ``f`` and ``o``;
    ``g = phi(W_c x + U_c h + b_c)``; ``c' = f*c + i*g``; ``h' = o*phi(c')``.
    Accepts a single sample ``(n_input,)`` or a batch ``(batch, n_input)``.
    """
    x_t, single = _as_batch(x_t, 2)
    h = np.atleast_2d(np.asarray(state.h, dtype=np.float64))
    c = np.atleast_2d(np.asarray(state.c, dtype=np.float64))
    nh = params.n_hidden
    if x_t.shape[1] != params.n_input:
        raise ValueError(f"expected {params.n_input} input features, got {x_t.shape[1]}")
    if h.shape[1] != nh or c.shape[1] != nh:
        raise ValueError(f"state width must be {nh}, got h={h.shape} c={c.shape}")
    z = x_t @ params.w + h @ params.u + params.b
    i = params.sigma_spec.eval(z[:, 0 * nh:1 * nh])
    f = params.sigma_spec.eval(z[:, 1 * nh:2 * nh])
    g = params.phi_spec.eval(z[:, 2 * nh:3 * nh])
    o = params.sigma_spec.eval(z[:, 3 * nh:4 * nh])
    c_new = f * c + i * g
    h_new = o * params.phi_spec.eval(c_new)
    if counter is not None:
        batch = x_t.shape[0]
        counter.add(batch * (4 * nh * (params.n_input + nh) + 3 * nh))
    if single:
        return LstmState(h_new[0], c_new[0])
    return LstmState(h_new, c_new)


def _run_direction(
    params: LstmParams,
    x: np.ndarray,
    *,
    reverse: bool,
    counter: MultCounter | None,
) -> tuple[np.ndarray, dict]:
    """Run one direction over a ``(batch, time, n_input)`` sequence.

    Returns hidden states in original time order plus the cache needed by
    :func:`_direction_backward`.  The input projection for every step is one
    matrix product; only the recurrent term stays inside the loop.
    """
    batch, n_time, _ = x.shape
    nh = params.n_hidden
    xw = x.reshape(batch * n_time, -1) @ params.w
    xw = xw.reshape(batch, n_time, 4 * nh)
    z_all = np.empty((batch, n_time, 4 * nh))
    c_all = np.empty((batch, n_time, nh))
    tau_all = np.empty((batch, n_time, nh))
    h_all = np.empty((batch, n_time, nh))
    h = np.zeros((batch, nh))
    c = np.zeros((batch, nh))
    order = range(n_time - 1, -1, -1) if reverse else range(n_time)
    for t in order:
        z = xw[:, t] + h @ params.u + params.b
        i = params.sigma_spec.eval(z[:, 0 * nh:1 * nh])
        f = params.sigma_spec.eval(z[:, 1 * nh:2 * nh])
        g = params.phi_spec.eval(z[:, 2 * nh:3 * nh])
        o = params.sigma_spec.eval(z[:, 3 * nh:4 * nh])
        c = f * c + i * g
        tau = params.phi_spec.eval(c)
        h = o * tau
        z_all[:, t] = z
        c_all[:, t] = c
        tau_all[:, t] = tau
        h_all[:, t] = h
    if counter is not None:
        counter.add(batch * n_time * (4 * nh * (params.n_input + nh) + 3 * nh))
    cache = {"x": x, "z": z_all, "c": c_all, "tau": tau_all, "h": h_all, "reverse": reverse}
    return h_all, cache


def _direction_backward(
    params: LstmParams, cache: dict, dh_out: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Backpropagation through time for one direction.

    ``dh_out`` holds the loss gradient w.r.t. every emitted hidden state
    (original time order).  Gate activations are recomputed from the cached
    pre-activations, which is cheaper in memory than caching all four posts.
    """
    x, z_all, c_all, tau_all, h_all = (
        cache["x"], cache["z"], cache["c"], cache["tau"], cache["h"],
    )
    reverse = cache["reverse"]
    batch, n_time, _ = x.shape
    nh = params.n_hidden
    dw = np.zeros_like(params.w)
    du = np.zeros_like(params.u)
    db = np.zeros_like(params.b)
    dx = np.empty_like(x)
    dh = np.zeros((batch, nh))
    dc = np.zeros((batch, nh))
    zeros = np.zeros((batch, nh))
    # Walk opposite to the forward order; "previous step" below means the
    # forward-time predecessor of step t in that order.
    order = range(n_time) if reverse else range(n_time - 1, -1, -1)
    for t in order:
        z = z_all[:, t]
        i = params.sigma_spec.eval(z[:, 0 * nh:1 * nh])
        f = params.sigma_spec.eval(z[:, 1 * nh:2 * nh])
        g = params.phi_spec.eval(z[:, 2 * nh:3 * nh])
        o = params.sigma_spec.eval(z[:, 3 * nh:4 * nh])
        t_prev = (t + 1) if reverse else (t - 1)
        first = (t == n_time - 1) if reverse else (t == 0)
        c_prev = zeros if first else c_all[:, t_prev]
        h_prev = zeros if first else h_all[:, t_prev]
        dh = dh + dh_out[:, t]
        dc = dc + dh * o * params.phi_spec.grad(c_all[:, t])
        dz = np.empty((batch, 4 * nh))
        dz[:, 0 * nh:1 * nh] = dc * g * params.sigma_spec.grad(z[:, 0 * nh:1 * nh])
        dz[:, 1 * nh:2 * nh] = dc * c_prev * params.sigma_spec.grad(z[:, 1 * nh:2 * nh])
        dz[:, 2 * nh:3 * nh] = dc * i * params.phi_spec.grad(z[:, 2 * nh:3 * nh])
        dz[:, 3 * nh:4 * nh] = dh * tau_all[:, t] * params.sigma_spec.grad(z[:, 3 * nh:4 * nh])
        dw += x[:, t].T @ dz
        du += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ params.w.T
        dh = dz @ params.u.T
        dc = dc * f
    return dx, {"w": dw, "u": du, "b": db}


def bilstm_forward(
    fwd: LstmParams,
    bwd: LstmParams,
    x: np.ndarray,
    counter: MultCounter | None = None,
) -> np.ndarray:
    """Bidirectional pass: per-step concatenation ``[h_fwd || h_bwd]``.

    A ``(time, n_input)`` window maps to ``(time, 2*n_hidden)``; batched
    input adds a leading axis.
    """
    x, single = _as_batch(x, 3)
    if fwd.n_hidden != bwd.n_hidden or fwd.n_input != bwd.n_input:
        raise ValueError("forward and backward directions must agree in shape")
    h_f, _ = _run_direction(fwd, x, reverse=False, counter=counter)
    h_b, _ = _run_direction(bwd, x, reverse=True, counter=counter)
    out = np.concatenate([h_f, h_b], axis=2)
    return out[0] if single else out


class BiLstmLayer:
    """Bidirectional LSTM over the symbol window.

    Exposes ``n_input``/``n_hidden``/``bidirectional`` so the closed-form
    complexity model can size it without importing this module.
    """

    bidirectional = True

    def __init__(self, name: str, fwd: LstmParams, bwd: LstmParams) -> None:
        if fwd.n_hidden != bwd.n_hidden or fwd.n_input != bwd.n_input:
            raise ValueError("forward and backward directions must agree in shape")
        self.name = name
        self.fwd = fwd
        self.bwd = bwd

    @property
    def n_input(self) -> int:
        return self.fwd.n_input

    @property
    def n_hidden(self) -> int:
        return self.fwd.n_hidden

    @property
    def n_output(self) -> int:
        return 2 * self.fwd.n_hidden

    @classmethod
    def glorot(
        cls,
        name: str,
        n_input: int,
        n_hidden: int,
        rng: np.random.RandomState,
        *,
        sigma_spec: ActivationSpec,
        phi_spec: ActivationSpec,
    ) -> "BiLstmLayer":
        mk = lambda: LstmParams.glorot(  # noqa: E731 - tiny local factory
            n_input, n_hidden, rng, sigma_spec=sigma_spec, phi_spec=phi_spec
        )
        return cls(name, mk(), mk())

    def rebind(self, sigma_spec: ActivationSpec, phi_spec: ActivationSpec) -> "BiLstmLayer":
        """Same weight arrays, new activation bindings."""
        return BiLstmLayer(
            self.name,
            LstmParams(self.fwd.w, self.fwd.u, self.fwd.b, sigma_spec=sigma_spec, phi_spec=phi_spec),
            LstmParams(self.bwd.w, self.bwd.u, self.bwd.b, sigma_spec=sigma_spec, phi_spec=phi_spec),
        )

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "fwd.w": self.fwd.w, "fwd.u": self.fwd.u, "fwd.b": self.fwd.b,
            "bwd.w": self.bwd.w, "bwd.u": self.bwd.u, "bwd.b": self.bwd.b,
        }

    def forward(self, x: np.ndarray, counter: MultCounter | None = None) -> np.ndarray:
        return bilstm_forward(self.fwd, self.bwd, x, counter)

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        x, _ = _as_batch(x, 3)
        h_f, cache_f = _run_direction(self.fwd, x, reverse=False, counter=None)
        h_b, cache_b = _run_direction(self.bwd, x, reverse=True, counter=None)
        return np.concatenate([h_f, h_b], axis=2), {"f": cache_f, "b": cache_b}

    def backward(self, cache: dict, dy: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        nh = self.n_hidden
        dx_f, g_f = _direction_backward(self.fwd, cache["f"], dy[:, :, :nh])
        dx_b, g_b = _direction_backward(self.bwd, cache["b"], dy[:, :, nh:])
        grads = {f"fwd.{k}": v for k, v in g_f.items()}
        grads.update({f"bwd.{k}": v for k, v in g_b.items()})
        return dx_f + dx_b, grads


def _same_padding(kernel_size: int) -> tuple[int, int]:
    """Left/right zero padding that keeps the sequence length unchanged."""
    return (kernel_size - 1) // 2, kernel_size // 2


def _conv_windows(x: np.ndarray, kernel_size: int, padding: str) -> np.ndarray:
    """All length-``kernel_size`` input windows: ``(batch, t_out, c_in, k)``."""
    if padding == "same":
        pl, pr = _same_padding(kernel_size)
        x = np.pad(x, ((0, 0), (pl, pr), (0, 0)))
    elif padding != "valid":
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    if x.shape[1] < kernel_size:
        raise ValueError(
            f"sequence of length {x.shape[1]} is shorter than the kernel ({kernel_size})"
        )
    return np.lib.stride_tricks.sliding_window_view(x, kernel_size, axis=1)


def conv1d(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray | None = None,
    *,
    padding: str = "same",
    counter: MultCounter | None = None,
) -> np.ndarray:
    """Cross-correlation along time: ``y[t,o] = sum_{k,c} x[t+k-pl,c] w[o,c,k]``.

    ``kernels`` is ``(c_out, c_in, k)``; ``padding`` is ``"same"`` (zero-pad,
    output length equals input length) or ``"valid"`` (no pad, length shrinks
    by ``k - 1``).
    """
    x, single = _as_batch(x, 3)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 3:
        raise ValueError(f"kernels must be (c_out, c_in, k), got shape {kernels.shape}")
    if x.shape[2] != kernels.shape[1]:
        raise ValueError(f"input has {x.shape[2]} channels, kernels expect {kernels.shape[1]}")
    win = _conv_windows(x, kernels.shape[2], padding)
    y = np.einsum("btck,ock->bto", win, kernels, optimize=True)
    if bias is not None:
        y = y + bias
    if counter is not None:
        counter.add(x.shape[0] * y.shape[1] * kernels.shape[0] * kernels.shape[1] * kernels.shape[2])
    return y[0] if single else y


class Conv1dLayer:
    """1-D convolution with an optional activation binding.

    ``activation=None`` is a linear layer (used for the output stage).  The
    attributes ``c_in``/``c_out``/``kernel_size``/``padding`` feed the
    closed-form complexity model.
    """

    def __init__(
        self,
        name: str,
        kernels: np.ndarray,
        bias: np.ndarray,
        *,
        padding: str,
        activation: ActivationSpec | None = None,
    ) -> None:
        kernels = np.ascontiguousarray(kernels, dtype=np.float64)
        bias = np.ascontiguousarray(bias, dtype=np.float64)
        if kernels.ndim != 3:
            raise ValueError(f"kernels must be (c_out, c_in, k), got shape {kernels.shape}")
        if bias.shape != (kernels.shape[0],):
            raise ValueError(f"bias must be ({kernels.shape[0]},), got {bias.shape}")
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        if activation is not None and activation.function != "tanh":
            raise ValueError("convolution activations are tanh-shaped")
        self.name = name
        self.kernels = kernels
        self.bias = bias
        self.padding = padding
        self.activation = activation

    @property
    def c_out(self) -> int:
        return self.kernels.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    @classmethod
    def glorot(
        cls,
        name: str,
        c_in: int,
        c_out: int,
        kernel_size: int,
        rng: np.random.RandomState,
        *,
        padding: str,
        activation: ActivationSpec | None = None,
    ) -> "Conv1dLayer":
        lim = np.sqrt(6.0 / (c_in * kernel_size + c_out * kernel_size))
        kernels = rng.uniform(-lim, lim, (c_out, c_in, kernel_size))
        return cls(name, kernels, np.zeros(c_out), padding=padding, activation=activation)

    def rebind(self, phi_spec: ActivationSpec) -> "Conv1dLayer":
        """Same weights; swap the activation unless the layer is linear."""
        act = None if self.activation is None else phi_spec
        return Conv1dLayer(
            self.name, self.kernels, self.bias, padding=self.padding, activation=act
        )

    def parameters(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "bias": self.bias}

    def forward(self, x: np.ndarray, counter: MultCounter | None = None) -> np.ndarray:
        y = conv1d(x, self.kernels, self.bias, padding=self.padding, counter=counter)
        if self.activation is not None:
            y = self.activation.eval(y)
        return y

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        x, _ = _as_batch(x, 3)
        pre = conv1d(x, self.kernels, self.bias, padding=self.padding)
        y = pre if self.activation is None else self.activation.eval(pre)
        return y, {"x": x, "pre": pre}

    def backward(self, cache: dict, dy: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        x, pre = cache["x"], cache["pre"]
        if self.activation is not None:
            dy = dy * self.activation.grad(pre)
        k = self.kernel_size
        win = _conv_windows(x, k, self.padding)
        dkernels = np.einsum("btck,bto->ock", win, dy, optimize=True)
        dbias = dy.sum(axis=(0, 1))
        # Input gradient: correlate the padded output gradient with the
        # kernel flipped along time (transpose of the forward correlation).
        pl = _same_padding(k)[0] if self.padding == "same" else 0
        pr = (k - 1) - pl if self.padding == "same" else 0
        dyp = np.pad(dy, ((0, 0), (k - 1 - pl, k - 1 - pr), (0, 0)))
        dyw = np.lib.stride_tricks.sliding_window_view(dyp, k, axis=1)
        dx = np.einsum("btok,ock->btc", dyw, self.kernels[:, :, ::-1], optimize=True)
        return dx, {"kernels": dkernels, "bias": dbias}
