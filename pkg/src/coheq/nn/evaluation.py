"""Sliding-window inference and quality scoring for equalizer models.

A trained model sees a fixed window of symbols and recovers the central
portion; long sequences are equalized by sliding that window with a stride
equal to the model's output length, so every covered symbol is produced by
exactly one window.  Scoring demaps recovered symbols against the reference
transmit symbols and reports bit error ratio and Q-factor.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..activations import ActivationSpec
from ..channel import demap_16qam
from ..metrics import q_factor
from .model import EqualizerModel

__all__ = [
    "EvalResult",
    "input_windows",
    "equalize",
    "evaluate_model",
    "q_factor_with_specs",
]


class EvalResult(NamedTuple):
    mse: float
    ber: float
    q_db: float
    n_symbols: int


def input_windows(x: np.ndarray, starts: np.ndarray, window: int) -> np.ndarray:
    """Gather ``(len(starts), window, n_features)`` windows from a sequence."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (n_symbols, n_features), got shape {x.shape}")
    if len(x) < window:
        raise ValueError(f"sequence of {len(x)} symbols is shorter than the window ({window})")
    views = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)
    return views[np.asarray(starts, dtype=np.intp)].transpose(0, 2, 1)


def equalize(
    model: EqualizerModel,
    x: np.ndarray,
    *,
    batch_size: int = 1024,
) -> tuple[int, np.ndarray]:
    """Equalize a feature sequence with stride-``n_out`` window placement.

    Returns ``(offset, predictions)``: ``predictions[k]`` recovers symbol
    ``offset + k`` of the input sequence.  The first ``offset`` symbols and
    whatever tail does not fill a whole window are not covered.
    """
    window = model.window_symbols
    n_out = model.n_output_symbols
    offset = (window - n_out) // 2
    n_win = (len(x) - window) // n_out + 1
    if n_win < 1:
        raise ValueError(f"sequence of {len(x)} symbols is shorter than the window ({window})")
    starts = n_out * np.arange(n_win)
    preds = np.empty((n_win * n_out, 2))
    for lo in range(0, n_win, batch_size):
        chunk = starts[lo:lo + batch_size]
        out = model.forward(input_windows(x, chunk, window))
        preds[lo * n_out:(lo + len(chunk)) * n_out] = out.reshape(-1, 2)
    return offset, preds


def _as_complex(pairs: np.ndarray) -> np.ndarray:
    return pairs[:, 0] + 1j * pairs[:, 1]


def evaluate_model(
    model: EqualizerModel,
    x: np.ndarray,
    y: np.ndarray,
    *,
    batch_size: int = 1024,
) -> EvalResult:
    """Equalize ``x`` and score against reference outputs ``y``.

    ``y`` holds the transmitted Re/Im pairs aligned with ``x``; bits are
    recovered from both sides by hard-decision demapping, so the reference
    must contain exact constellation points.
    """
    y = np.asarray(y, dtype=np.float64)
    if len(y) != len(x):
        raise ValueError(f"feature and reference lengths differ: {len(x)} vs {len(y)}")
    offset, preds = equalize(model, x, batch_size=batch_size)
    ref = y[offset:offset + len(preds)]
    mse = float(np.mean((preds - ref) ** 2))
    bits_hat = demap_16qam(_as_complex(preds))
    bits_ref = demap_16qam(_as_complex(ref))
    ber = float(np.mean(bits_hat != bits_ref))
    return EvalResult(mse=mse, ber=ber, q_db=q_factor(ber), n_symbols=len(preds))


def _val_arrays(valid_data) -> tuple[np.ndarray, np.ndarray]:
    """Accept an ``(x, y)`` pair or any object with ``x_val``/``y_val``."""
    if hasattr(valid_data, "x_val"):
        return valid_data.x_val, valid_data.y_val
    x, y = valid_data
    return x, y


def q_factor_with_specs(
    model: EqualizerModel,
    valid_data,
    specs: dict[str, ActivationSpec],
) -> float:
    """Validation Q-factor with activation implementations swapped in.

    ``specs`` maps ``"tanh"``/``"sigmoid"`` to replacement specs; missing
    keys keep the model's current binding.  Weights are untouched.
    """
    x, y = _val_arrays(valid_data)
    swapped = model.rebind_activations(
        tanh=specs.get("tanh"), sigmoid=specs.get("sigmoid")
    )
    return evaluate_model(swapped, x, y).q_db
