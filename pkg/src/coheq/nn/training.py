"""From-scratch Adam optimizer and the equalizer training loop.

Training minimizes the mean-squared error between recovered and transmitted
symbols.  Each epoch draws random window positions from the training pool,
takes full-batch Adam steps (internally split into micro-batches to bound
the backpropagation cache), then scores bit error ratio on the validation
set.  The weights from the epoch with the lowest validation BER are the ones
kept — plain loss-based stopping is a poor proxy for decision quality at
these error rates.

Retraining with approximated activations reuses the same loop: the swapped
specs supply both the forward values and the gradients, so the network
adapts its weights to the deployed nonlinearity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import evaluate_model
from .model import EqualizerModel

__all__ = [
    "TrainConfig",
    "EqDataset",
    "AdamState",
    "adam_step",
    "TrainingDiverged",
    "EpochStats",
    "TrainResult",
    "train",
    "retrain_with_approximation",
]


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the failing epoch."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``symbols_per_epoch`` fixes how many recovered symbols each epoch is
    asked to fit; the number of optimizer steps follows from it and the
    batch size.  ``patience`` epochs without a validation-BER improvement
    end the run early (``None`` trains for ``max_epochs`` regardless).
    """

    max_epochs: int
    learning_rate: float = 5e-4
    batch_size: int = 2001
    symbols_per_epoch: int = 2 ** 18
    patience: int | None = None
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    micro_batch: int = 512

    def __post_init__(self) -> None:
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if not 0 < self.learning_rate:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.micro_batch < 1:
            raise ValueError("batch_size and micro_batch must be >= 1")
        if self.symbols_per_epoch < 1:
            raise ValueError(f"symbols_per_epoch must be >= 1, got {self.symbols_per_epoch}")
        if self.patience is not None and self.patience < 1:
            raise ValueError(f"patience must be >= 1 or None, got {self.patience}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class EqDataset:
    """Training and validation pools as aligned feature/reference arrays.

    ``x_*`` are ``(n, 4)`` received-symbol features, ``y_*`` the matching
    ``(n, 2)`` transmitted Re/Im pairs of the recovered polarization.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def __post_init__(self) -> None:
        for tag, x, y, width in (
            ("train", self.x_train, self.y_train, 4),
            ("val", self.x_val, self.y_val, 4),
        ):
            if x.ndim != 2 or x.shape[1] != width:
                raise ValueError(f"x_{tag} must be (n, {width}), got {x.shape}")
            if y.ndim != 2 or y.shape[1] != 2:
                raise ValueError(f"y_{tag} must be (n, 2), got {y.shape}")
            if len(x) != len(y):
                raise ValueError(f"{tag} arrays differ in length: {len(x)} vs {len(y)}")


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter tensor."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    *,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, applied to the arrays in place."""
    if set(params) != set(grads):
        raise ValueError("params and grads must carry the same keys")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    val_ber: float
    val_q_db: float


@dataclass
class TrainResult:
    """Run record: per-epoch stats plus which epoch's weights were kept."""

    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ber: float = float("inf")
    best_val_q_db: float = float("-inf")

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def _epoch_batches(
    rng: np.random.RandomState, n_positions: int, cfg: TrainConfig, n_out: int
) -> list[np.ndarray]:
    """Random window start positions for one epoch, grouped per Adam step."""
    steps = max(1, int(round(cfg.symbols_per_epoch / n_out)) // cfg.batch_size)
    return [rng.randint(0, n_positions, size=cfg.batch_size) for _ in range(steps)]


def _batch_gradients(
    model: EqualizerModel,
    x_win: np.ndarray,
    y_win: np.ndarray,
    micro_batch: int,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss/gradients of a batch, accumulated over micro-batches.

    Chunks are weighted by size, so the result equals a single full-batch
    pass while only ever caching ``micro_batch`` windows of activations.
    """
    total = len(x_win)
    loss_sum = 0.0
    grads: dict[str, np.ndarray] | None = None
    for lo in range(0, total, micro_batch):
        xs = x_win[lo:lo + micro_batch]
        ys = y_win[lo:lo + micro_batch]
        weight = len(xs) / total
        loss, g = model.loss_and_gradients(xs, ys)
        loss_sum += weight * loss
        if grads is None:
            grads = {k: weight * v for k, v in g.items()}
        else:
            for k, v in g.items():
                grads[k] += weight * v
    assert grads is not None
    return loss_sum, grads


def train(model: EqualizerModel, data: EqDataset, cfg: TrainConfig) -> TrainResult:
    """Fit ``model`` on ``data`` in place and keep the best-validation weights.

    With ``max_epochs=0`` the model is returned untouched (useful as the
    untrained baseline).  A non-finite loss aborts with
    :class:`TrainingDiverged`; results are bit-reproducible for a fixed
    config and starting model.
    """
    result = TrainResult()
    if cfg.max_epochs == 0:
        return result
    window = model.window_symbols
    n_out = model.n_output_symbols
    trim = (window - n_out) // 2
    n_positions = len(data.x_train) - window + 1
    if n_positions < 1:
        raise ValueError(
            f"training pool of {len(data.x_train)} symbols cannot fit a window of {window}"
        )
    x_views = np.lib.stride_tricks.sliding_window_view(data.x_train, window, axis=0)
    y_views = np.lib.stride_tricks.sliding_window_view(data.y_train, n_out, axis=0)
    rng = np.random.RandomState(cfg.seed)
    params = model.parameters()
    state = AdamState.for_params(params)
    best_params: dict[str, np.ndarray] | None = None
    for epoch in range(cfg.max_epochs):
        losses = []
        for starts in _epoch_batches(rng, n_positions, cfg, n_out):
            x_win = x_views[starts].transpose(0, 2, 1)
            y_win = y_views[starts + trim].transpose(0, 2, 1)
            loss, grads = _batch_gradients(model, x_win, y_win, cfg.micro_batch)
            if not np.isfinite(loss):
                worst = max(float(np.max(np.abs(g))) for g in grads.values())
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, step {len(losses)}; "
                    f"largest gradient magnitude {worst:g}"
                )
            adam_step(
                params, grads, state,
                learning_rate=cfg.learning_rate,
                beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
            )
            losses.append(loss)
        score = evaluate_model(model, data.x_val, data.y_val)
        result.history.append(EpochStats(
            epoch=epoch,
            loss=float(np.mean(losses)),
            val_ber=score.ber,
            val_q_db=score.q_db,
        ))
        if score.ber < result.best_val_ber:
            result.best_epoch = epoch
            result.best_val_ber = score.ber
            result.best_val_q_db = score.q_db
            best_params = {k: p.copy() for k, p in params.items()}
        elif cfg.patience is not None and epoch - result.best_epoch >= cfg.patience:
            break
    if best_params is not None:
        for key, p in params.items():
            p[...] = best_params[key]
    return result


def retrain_with_approximation(
    model: EqualizerModel,
    specs: dict,
    data: EqDataset,
    cfg: TrainConfig,
) -> tuple[EqualizerModel, TrainResult]:
    """Adapt a trained model to approximated activations.

    ``specs`` maps ``"tanh"``/``"sigmoid"`` to the replacement specs.  The
    input model is left untouched: training happens on a deep copy whose
    forward *and* backward passes run through the approximations (lookup
    tables differentiate through their stored gradient table).
    """
    adapted = model.rebind_activations(
        tanh=specs.get("tanh"), sigmoid=specs.get("sigmoid")
    ).copy()
    result = train(adapted, data, cfg)
    return adapted, result
