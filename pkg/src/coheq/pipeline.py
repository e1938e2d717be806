"""End-to-end experiment steps: simulate, equalize, calibrate, train, sweep.

Everything here works on in-memory objects and is deterministic given the
experiment config; command-line plumbing (directories, manifests, CSV
emission) lives in :mod:`coheq.cli`.  Randomness is organized around one
master seed per simulated frame: four sub-seeds are derived from it for the
independent stochastic stages (bit source, amplifier noise, receiver capture
noise, plus one reserved slot), so no two stages ever share a generator
stream.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .activations import (
    TAYLOR_BOUNDARY_GRID,
    ActivationSpec,
    build_lut,
    grid_search_boundary,
    pwl_spec,
    taylor_spec,
)
from .channel import (
    FiberLinkParams,
    SignalFrame,
    SymbolBlock,
    add_waveform_noise,
    generate_bits,
    make_symbol_block,
    rrc_shape,
    scale_to_launch_power,
    ssfm_propagate,
)
from .config import ExperimentConfig
from .dataset import LinkDataset, features
from .dsp import (
    DbpConfig,
    apply_cdc,
    dbp_1stps,
    design_cdc,
    matched_filter_downsample,
    normalize_kdsp,
    resample_frame,
)
from .metrics import ber_symbols, q_factor
from .nn.evaluation import evaluate_model
from .nn.model import EqualizerModel, build_bilstm_cnn, build_deep_cnn
from .nn.training import EqDataset, TrainConfig, TrainResult, retrain_with_approximation, train

__all__ = [
    "derive_seeds",
    "frame_seed",
    "simulate_frame",
    "linear_receiver",
    "dbp_receiver",
    "interior_q",
    "calibrate_noise_sigma",
    "make_dataset",
    "BaselineResult",
    "baseline_reports",
    "build_equalizer_dataset",
    "primary_power",
    "PowerSweepEntry",
    "train_power_sweep",
    "SweepCell",
    "sweep_cell",
    "approximation_sweep",
]

log = logging.getLogger("coheq")

# Sub-seed slots derived from a frame's master seed.  Slot 3 is reserved so
# the first three streams stay stable if another stage is ever added.
SEED_BITS, SEED_ASE, SEED_RX_NOISE = range(3)


def derive_seeds(master: int) -> np.ndarray:
    """Four decorrelated sub-seeds for one frame's stochastic stages."""
    return np.random.RandomState(master).randint(0, 2 ** 31 - 1, size=4)


def frame_seed(base_seed: int, power_index: int, role: str) -> int:
    """Deterministic master seed per (power, train/validation) frame."""
    offset = {"train": 1, "val": 2}[role]
    return base_seed + 10 * power_index + offset


def simulate_frame(
    cfg: ExperimentConfig,
    power_dbm: float,
    n_symbols: int,
    master_seed: int,
) -> tuple[SymbolBlock, SignalFrame]:
    """Generate, shape, launch and propagate one frame.

    Returns the transmitted block and the received waveform resampled to
    the storage rate.
    """
    seeds = derive_seeds(master_seed)
    tx = make_symbol_block(generate_bits(8 * n_symbols, seed=int(seeds[SEED_BITS])))
    frame = rrc_shape(
        tx, cfg.rolloff, cfg.sps_propagation,
        symbol_rate_bd=cfg.symbol_rate_bd, n_taps=cfg.rrc_taps,
    )
    frame = scale_to_launch_power(frame, power_dbm)
    rx = ssfm_propagate(frame, cfg.link, seed=int(seeds[SEED_ASE]))
    return tx, resample_frame(rx, cfg.sps_store)


def linear_receiver(
    rx_wave: SignalFrame,
    tx: SymbolBlock,
    link: FiberLinkParams,
    *,
    cdc_taps: int = 517,
    rolloff: float = 0.1,
    rrc_taps: int = 1025,
) -> SymbolBlock:
    """Dispersion compensation at 2 samples/symbol, matched filter, scale fix."""
    two_sps = resample_frame(rx_wave, 2.0)
    cdc = design_cdc(link, cdc_taps, two_sps.sample_rate_hz)
    equalized = apply_cdc(two_sps, cdc)
    symbols = matched_filter_downsample(equalized, rolloff=rolloff, n_taps=rrc_taps)
    _, normalized = normalize_kdsp(symbols, tx)
    return normalized


def dbp_receiver(
    rx_wave: SignalFrame,
    tx: SymbolBlock,
    link: FiberLinkParams,
    xi: float,
    *,
    steps_per_span: int = 1,
    sps: float = 2.3,
    rolloff: float = 0.1,
    rrc_taps: int = 1025,
) -> SymbolBlock:
    """Single-step-per-span digital back-propagation receiver."""
    back = dbp_1stps(rx_wave, link, DbpConfig(steps_per_span=steps_per_span, sps=sps, xi=xi))
    symbols = matched_filter_downsample(back, rolloff=rolloff, n_taps=rrc_taps)
    _, normalized = normalize_kdsp(symbols, tx)
    return normalized


def interior_q(block: SymbolBlock, tx: SymbolBlock, *, margin: int = 500) -> tuple[float, float]:
    """(BER, Q) of the recovered H polarization, boundary symbols excluded."""
    n = len(tx.symbols_h)
    if 2 * margin >= n:
        raise ValueError(f"margin {margin} leaves no interior in a {n}-symbol frame")
    bits = tx.bits_h.reshape(n, 4)[margin:n - margin].ravel()
    ber = ber_symbols(block.symbols_h[margin:n - margin], bits)
    return ber, q_factor(ber)


def calibrate_noise_sigma(
    rx_wave: SignalFrame,
    tx: SymbolBlock,
    cfg: ExperimentConfig,
    *,
    target_q_db: float,
    seed: int,
    margin: int = 500,
    tol_db: float = 5e-3,
    max_iter: int = 60,
) -> float:
    """Receiver noise level that brings the linear receiver down to a target Q.

    The transmission model lumps every impairment the propagation model omits
    (transceiver electronics, residual analog effects) into one white-noise
    term on the captured waveform.  Because the level is absolute — receiver
    electronics do not know the launch power — a single value calibrated at
    one power applies to the whole sweep, and the effective SNR rises 1 dB
    per dB of launch power until nonlinearity takes over.

    A fixed noise realization (``seed``) is scaled and bisected, so Q(sigma)
    is monotone and loading the same seed in :func:`make_dataset` reproduces
    the calibrated operating point exactly.
    """

    def q_at(sigma: float) -> float:
        noisy = add_waveform_noise(rx_wave, sigma, seed)
        block = linear_receiver(
            noisy, tx, cfg.link,
            cdc_taps=cfg.cdc_taps, rolloff=cfg.rolloff, rrc_taps=cfg.rrc_taps,
        )
        return interior_q(block, tx, margin=margin)[1]

    clean = q_at(0.0)
    if clean <= target_q_db:
        raise ValueError(
            f"noiseless Q {clean:.2f} dB already below the {target_q_db:.2f} dB target; "
            "nothing to calibrate"
        )
    mean_amp = np.sqrt(np.mean(
        np.abs(rx_wave.samples_h) ** 2 + np.abs(rx_wave.samples_v) ** 2
    ))
    lo, hi = 0.0, 0.1 * mean_amp
    while q_at(hi) > target_q_db:
        hi *= 2.0
        if hi > 100.0 * mean_amp:
            raise ValueError("calibration bracket exploded; target Q unreachably low")
    sigma = hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        q_mid = q_at(mid)
        if abs(q_mid - target_q_db) < tol_db:
            sigma = mid
            break
        if q_mid > target_q_db:
            lo = mid
        else:
            hi = mid
    else:
        sigma = 0.5 * (lo + hi)
    achieved = q_at(sigma)
    if abs(achieved - target_q_db) > 0.25:
        # Q(sigma) is a step function on a finite frame; a target far above
        # the error-onset region cannot be bisected onto.
        raise ValueError(
            f"calibration stalled at Q {achieved:.2f} dB for a {target_q_db:.2f} dB "
            "target; the frame is too short to resolve that error rate"
        )
    log.info("calibrated receiver noise sigma %.3e (Q %.3f dB, target %.3f dB)",
             sigma, achieved, target_q_db)
    return sigma


def make_dataset(
    cfg: ExperimentConfig,
    power_dbm: float,
    n_symbols: int,
    master_seed: int,
    noise_sigma: float,
    *,
    simulated: tuple[SymbolBlock, SignalFrame] | None = None,
) -> LinkDataset:
    """Simulate one frame, load receiver noise, and equalize the capture.

    The stored waveform carries the loaded noise, so the back-propagation
    baseline and the linear receiver both process the same capture a real
    receiver would see.  ``simulated`` accepts an already-propagated clean
    frame (it must come from this seed and power) so a frame used for noise
    calibration is not propagated twice.
    """
    seeds = derive_seeds(master_seed)
    if simulated is None:
        tx, rx_wave = simulate_frame(cfg, power_dbm, n_symbols, master_seed)
    else:
        tx, rx_wave = simulated
    noisy_wave = add_waveform_noise(rx_wave, noise_sigma, seed=int(seeds[SEED_RX_NOISE]))
    equalized = linear_receiver(
        noisy_wave, tx, cfg.link,
        cdc_taps=cfg.cdc_taps, rolloff=cfg.rolloff, rrc_taps=cfg.rrc_taps,
    )
    return LinkDataset(
        launch_power_dbm=power_dbm,
        noise_sigma=noise_sigma,
        seed=master_seed,
        link=cfg.link,
        tx=tx,
        rx_wave=noisy_wave,
        rx_symbols=equalized,
    )


# -- baselines ---------------------------------------------------------------


@dataclass(frozen=True)
class BaselineResult:
    """Per-power linear and back-propagation quality figures."""

    power_dbm: float
    cdc_ber: float
    cdc_q_db: float
    dbp_ber: float
    dbp_q_db: float
    dbp_xi: float
    xi_curve: tuple[tuple[float, float], ...]  # (xi, q_db) over the sweep grid


def baseline_reports(ds: LinkDataset, cfg: ExperimentConfig) -> BaselineResult:
    """Score the stored linear receiver output and a tuned DBP receiver.

    Both receivers process the same noisy capture, the way two DSP chains
    would be compared on one recorded frame.  Back-propagating the noise
    along with the signal is what makes partial nonlinear compensation
    (xi < 1) come out ahead at high launch powers.
    """
    margin = cfg.edge_margin
    cdc_ber, cdc_q = interior_q(ds.rx_symbols, ds.tx, margin=margin)
    curve = []
    best = (-np.inf, None, None)  # (q, xi, ber)
    for xi in cfg.xi_grid:
        block = dbp_receiver(
            ds.rx_wave, ds.tx, ds.link, xi,
            rolloff=cfg.rolloff, rrc_taps=cfg.rrc_taps,
        )
        ber, q = interior_q(block, ds.tx, margin=margin)
        curve.append((xi, q))
        if q > best[0]:
            best = (q, xi, ber)
    log.info("power %+.1f dBm: CDC %.3f dB, DBP %.3f dB at xi=%.1f",
             ds.launch_power_dbm, cdc_q, best[0], best[1])
    return BaselineResult(
        power_dbm=ds.launch_power_dbm,
        cdc_ber=cdc_ber, cdc_q_db=cdc_q,
        dbp_ber=best[2], dbp_q_db=best[0], dbp_xi=best[1],
        xi_curve=tuple(curve),
    )


# -- neural equalizer training -------------------------------------------------


def build_equalizer_dataset(
    train_ds: LinkDataset, val_ds: LinkDataset, *, margin: int = 500
) -> EqDataset:
    x_tr, y_tr = features(train_ds, margin=margin)
    x_val, y_val = features(val_ds, margin=margin)
    return EqDataset(x_tr, y_tr, x_val, y_val)


def primary_power(powers) -> float:
    """The launch power trained from scratch: nearest the expected nonlinear
    optimum (+2 dBm), ties broken toward the lower power."""
    return min(powers, key=lambda p: (abs(p - 2.0), p))


@dataclass
class PowerSweepEntry:
    power_dbm: float
    model: EqualizerModel
    result: TrainResult
    q_db: float
    val_ber: float
    warm_started_from: float | None
    wall_s: float


def _build_model(architecture: str, seed: int) -> EqualizerModel:
    if architecture == "bilstm-cnn":
        return build_bilstm_cnn(seed)
    if architecture == "deep-cnn":
        return build_deep_cnn(seed)
    raise ValueError(f"unknown architecture {architecture!r}")


def train_power_sweep(
    cfg: ExperimentConfig,
    architecture: str,
    datasets: dict[float, tuple[LinkDataset, LinkDataset]],
) -> list[PowerSweepEntry]:
    """Train one equalizer per launch power with warm starts between powers.

    The power nearest the expected nonlinear optimum (+2 dBm) gets a full
    training run from the seeded initialization; neighbors inherit the
    nearest already-trained model and fine-tune with the shorter transfer
    schedule, walking outward in both directions.
    """
    powers = sorted(datasets)
    primary = primary_power(powers)
    order = [primary]
    below = [p for p in powers if p < primary][::-1]
    above = [p for p in powers if p > primary]
    for k in range(max(len(below), len(above))):
        if k < len(above):
            order.append(above[k])
        if k < len(below):
            order.append(below[k])
    entries: dict[float, PowerSweepEntry] = {}
    for idx, power in enumerate(order):
        data = build_equalizer_dataset(*datasets[power], margin=cfg.edge_margin)
        if power == primary:
            model = _build_model(architecture, cfg.train.seed)
            run_cfg = cfg.train
            source = None
        else:
            source = min(entries, key=lambda p: abs(p - power))
            model = entries[source].model.copy()
            run_cfg = TrainConfig(
                max_epochs=cfg.transfer_max_epochs,
                learning_rate=cfg.train.learning_rate,
                batch_size=cfg.train.batch_size,
                symbols_per_epoch=cfg.train.symbols_per_epoch,
                patience=cfg.transfer_patience,
                seed=cfg.train.seed + 1 + idx,
                micro_batch=cfg.train.micro_batch,
            )
        log.info("training %s at %+.1f dBm (%s)", architecture, power,
                 "from scratch" if source is None else f"warm start from {source:+.1f} dBm")
        t0 = time.perf_counter()
        result = train(model, data, run_cfg)
        score = evaluate_model(model, data.x_val, data.y_val)
        log.info("  %d epochs, best val Q %.3f dB", result.epochs_run, score.q_db)
        entries[power] = PowerSweepEntry(
            power_dbm=power, model=model, result=result,
            q_db=score.q_db, val_ber=score.ber, warm_started_from=source,
            wall_s=time.perf_counter() - t0,
        )
    return [entries[p] for p in powers]


# -- activation approximation sweep ----------------------------------------------


@dataclass
class SweepCell:
    """One point of the approximation grid, before or after retraining."""

    family: str  # "taylor" | "pwl" | "lut"
    level: int  # polynomial order, segment count, or table address bits
    retrained: bool
    q_db: float
    boundary_tanh: float | None = None
    boundary_sigmoid: float | None = None
    result: TrainResult | None = None
    wall_s: float = 0.0


def _family_specs(
    family: str,
    level: int,
    model: EqualizerModel,
    data: EqDataset,
    cfg: ExperimentConfig,
    *,
    search_boundary: bool,
) -> tuple[dict[str, ActivationSpec], float | None, float | None]:
    if family == "pwl":
        return {"tanh": pwl_spec("tanh", level), "sigmoid": pwl_spec("sigmoid", level)}, None, None
    if family == "lut":
        return {"tanh": build_lut("tanh", level), "sigmoid": build_lut("sigmoid", level)}, None, None
    if family != "taylor":
        raise ValueError(f"unknown approximation family {family!r}")
    if search_boundary:
        valid = (data.x_val, data.y_val)
        a_tanh = grid_search_boundary(
            model, valid, TAYLOR_BOUNDARY_GRID["tanh"], function="tanh", order=level
        )
        a_sig = grid_search_boundary(
            model, valid, TAYLOR_BOUNDARY_GRID["sigmoid"], function="sigmoid", order=level
        )
    else:
        a_tanh, a_sig = cfg.taylor_boundary_tanh, cfg.taylor_boundary_sigmoid
    specs = {
        "tanh": taylor_spec("tanh", level, a_tanh),
        "sigmoid": taylor_spec("sigmoid", level, a_sig),
    }
    return specs, a_tanh, a_sig


def _retrain_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        max_epochs=cfg.transfer_max_epochs,
        learning_rate=cfg.train.learning_rate,
        batch_size=cfg.train.batch_size,
        symbols_per_epoch=cfg.train.symbols_per_epoch,
        patience=cfg.transfer_patience,
        seed=cfg.train.seed + 7000,
        micro_batch=cfg.train.micro_batch,
    )


def sweep_cell(
    model: EqualizerModel,
    data: EqDataset,
    cfg: ExperimentConfig,
    family: str,
    level: int,
    *,
    retrain: bool = True,
    search_boundary: bool = True,
    return_model: bool = False,
) -> list[SweepCell] | tuple[list[SweepCell], EqualizerModel | None]:
    """One family/level cell: frozen-weight score plus optional retraining.

    Returns the frozen cell first, then (when ``retrain``) the retrained one.
    ``return_model`` additionally hands back the adapted model.
    """
    t0 = time.perf_counter()
    specs, a_tanh, a_sig = _family_specs(
        family, level, model, data, cfg, search_boundary=search_boundary
    )
    frozen = model.rebind_activations(tanh=specs["tanh"], sigmoid=specs["sigmoid"])
    q_frozen = evaluate_model(frozen, data.x_val, data.y_val).q_db
    cells = [SweepCell(
        family=family, level=level, retrained=False, q_db=q_frozen,
        boundary_tanh=a_tanh, boundary_sigmoid=a_sig,
        wall_s=time.perf_counter() - t0,
    )]
    log.info("%s-%d frozen: %.3f dB", family, level, q_frozen)
    adapted = None
    if retrain:
        t1 = time.perf_counter()
        adapted, result = retrain_with_approximation(model, specs, data, _retrain_config(cfg))
        q_re = evaluate_model(adapted, data.x_val, data.y_val).q_db
        cells.append(SweepCell(
            family=family, level=level, retrained=True, q_db=q_re,
            boundary_tanh=a_tanh, boundary_sigmoid=a_sig, result=result,
            wall_s=time.perf_counter() - t1,
        ))
        log.info("%s-%d retrained: %.3f dB (%d epochs)",
                 family, level, q_re, result.epochs_run)
    if return_model:
        return cells, adapted
    return cells


def approximation_sweep(
    model: EqualizerModel,
    data: EqDataset,
    cfg: ExperimentConfig,
    *,
    families: dict[str, tuple[int, ...]] | None = None,
    retrain: bool = True,
    search_boundary: bool = True,
) -> list[SweepCell]:
    """Evaluate (and optionally retrain) every cell of the approximation grid.

    Every family/level pair is scored with frozen weights first; with
    ``retrain=True`` each cell additionally gets an approximation-aware
    fine-tuning run starting from the float model.
    """
    if families is None:
        families = {
            "taylor": cfg.taylor_orders,
            "pwl": cfg.pwl_segments,
            "lut": cfg.lut_bits,
        }
    cells: list[SweepCell] = []
    for family, levels in families.items():
        for level in levels:
            cells.extend(sweep_cell(
                model, data, cfg, family, level,
                retrain=retrain, search_boundary=search_boundary,
            ))
    return cells
