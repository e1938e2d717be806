"""Tests for the in-memory experiment pipeline on a small 3-span link."""
import dataclasses

import numpy as np
import pytest

from coheq import pipeline as pl
from coheq.channel import (
    FiberLinkParams,
    generate_bits,
    make_symbol_block,
    rrc_shape,
    scale_to_launch_power,
    ssfm_propagate,
)
from coheq.config import default_config
from coheq.dsp import resample_frame
from coheq.nn.training import TrainConfig


@pytest.fixture(scope="module")
def mini_cfg():
    base = default_config()
    return dataclasses.replace(
        base,
        link=FiberLinkParams(n_spans=3),
        powers_dbm=(-1.0, 1.0, 2.0),
        train_symbols=4096,
        val_symbols=4096,
        edge_margin=300,
        xi_max=1.0,
        xi_step=0.5,
        train=TrainConfig(
            max_epochs=2, symbols_per_epoch=2048, batch_size=128,
            micro_batch=128, seed=5,
        ),
        transfer_max_epochs=2,
        transfer_patience=2,
    )


@pytest.fixture(scope="module")
def mini_frame(mini_cfg):
    return pl.simulate_frame(mini_cfg, 2.0, 4096, master_seed=77)


@pytest.fixture(scope="module")
def mini_dataset(mini_cfg, mini_frame):
    tx, wave = mini_frame
    amp = np.sqrt(np.mean(np.abs(wave.samples_h) ** 2 + np.abs(wave.samples_v) ** 2))
    return pl.make_dataset(
        mini_cfg, 2.0, 4096, 77, 0.05 * amp, simulated=(tx, wave)
    )


# ---------------------------------------------------------------------------
# seed bookkeeping
# ---------------------------------------------------------------------------

def test_derive_seeds_deterministic_and_distinct():
    a = pl.derive_seeds(123)
    b = pl.derive_seeds(123)
    np.testing.assert_array_equal(a, b)
    assert len(a) == 4
    assert len(set(a.tolist())) == 4
    assert all(0 <= s < 2**31 for s in a)
    assert not np.array_equal(a, pl.derive_seeds(124))


def test_frame_seeds_unique_across_grid():
    seeds = {
        pl.frame_seed(2026, i, role)
        for i in range(9)
        for role in ("train", "val")
    }
    assert len(seeds) == 18
    with pytest.raises(KeyError):
        pl.frame_seed(2026, 0, "test")


# ---------------------------------------------------------------------------
# simulation and receivers
# ---------------------------------------------------------------------------

def test_simulate_frame_deterministic_and_resampled(mini_cfg, mini_frame):
    tx, wave = mini_frame
    tx2, wave2 = pl.simulate_frame(mini_cfg, 2.0, 4096, master_seed=77)
    np.testing.assert_array_equal(tx.symbols_h, tx2.symbols_h)
    np.testing.assert_array_equal(wave.samples_h, wave2.samples_h)
    assert wave.n_samples == 4096 * mini_cfg.sps_store
    assert wave.sample_rate_hz == pytest.approx(
        mini_cfg.sps_store * mini_cfg.symbol_rate_bd
    )

    _, other = pl.simulate_frame(mini_cfg, 2.0, 4096, master_seed=78)
    assert not np.array_equal(wave.samples_h, other.samples_h)


def test_linear_receiver_inverts_dispersion_only_link(mini_cfg):
    link = FiberLinkParams(n_spans=3, gamma_w_km=0.0)
    tx = make_symbol_block(generate_bits(8 * 4096, seed=11))
    frame = rrc_shape(
        tx, mini_cfg.rolloff, mini_cfg.sps_propagation,
        symbol_rate_bd=mini_cfg.symbol_rate_bd, n_taps=mini_cfg.rrc_taps,
    )
    frame = scale_to_launch_power(frame, 0.0)
    rx = ssfm_propagate(frame, link, seed=None)  # noiseless amplifiers
    eq = pl.linear_receiver(resample_frame(rx, 4.0), tx, link)
    sl = slice(300, 4096 - 300)
    evm = np.sqrt(
        np.mean(np.abs(eq.symbols_h[sl] - tx.symbols_h[sl]) ** 2)
        / np.mean(np.abs(tx.symbols_h[sl]) ** 2)
    )
    assert evm < 0.01
    ber, q = pl.interior_q(eq, tx, margin=300)
    assert ber == 0.0


def test_interior_q_excludes_frame_edges(mini_dataset):
    tx = mini_dataset.tx
    corrupted = dataclasses.replace(
        tx,
        symbols_h=np.concatenate([-tx.symbols_h[:200], tx.symbols_h[200:]]),
    )
    ber_all, _ = pl.interior_q(corrupted, tx, margin=0)
    ber_interior, q = pl.interior_q(corrupted, tx, margin=300)
    assert ber_all > 0
    assert ber_interior == 0.0
    with pytest.raises(ValueError):
        pl.interior_q(tx, tx, margin=2048)


# ---------------------------------------------------------------------------
# noise calibration
# ---------------------------------------------------------------------------

def test_calibration_reproduced_by_dataset_loading(mini_cfg, mini_frame):
    tx, wave = mini_frame
    target = 6.0
    noise_seed = int(pl.derive_seeds(77)[pl.SEED_RX_NOISE])
    sigma = pl.calibrate_noise_sigma(
        wave, tx, mini_cfg, target_q_db=target, seed=noise_seed,
        margin=mini_cfg.edge_margin,
    )
    assert sigma > 0
    ds = pl.make_dataset(mini_cfg, 2.0, 4096, 77, sigma, simulated=(tx, wave))
    _, q = pl.interior_q(ds.rx_symbols, ds.tx, margin=mini_cfg.edge_margin)
    assert q == pytest.approx(target, abs=0.05)


def test_calibration_rejects_unreachable_target(mini_cfg, mini_frame):
    tx, wave = mini_frame
    # A 4096-symbol frame cannot resolve the error rate of a 40 dB target:
    # the noiseless frame decodes without errors, and the first symbol error
    # already puts Q far below 40 dB.
    with pytest.raises(ValueError, match="target"):
        pl.calibrate_noise_sigma(
            wave, tx, mini_cfg, target_q_db=40.0, seed=1,
            margin=mini_cfg.edge_margin,
        )


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def test_make_dataset_matches_manual_chain(mini_cfg, mini_frame, mini_dataset):
    tx, wave = mini_frame
    ds = mini_dataset
    # The stored capture is the clean wave plus the loaded receiver noise...
    diff = ds.rx_wave.samples_h - wave.samples_h
    assert np.mean(np.abs(diff) ** 2) == pytest.approx(
        ds.noise_sigma**2, rel=0.05
    )
    # ...and the stored symbols are the linear receiver run on that capture.
    eq = pl.linear_receiver(
        ds.rx_wave, tx, mini_cfg.link,
        cdc_taps=mini_cfg.cdc_taps, rolloff=mini_cfg.rolloff,
        rrc_taps=mini_cfg.rrc_taps,
    )
    np.testing.assert_array_equal(ds.rx_symbols.symbols_h, eq.symbols_h)

    regenerated = pl.make_dataset(mini_cfg, 2.0, 4096, 77, ds.noise_sigma)
    np.testing.assert_array_equal(
        regenerated.rx_wave.samples_h, ds.rx_wave.samples_h
    )
    np.testing.assert_array_equal(
        regenerated.rx_symbols.symbols_h, ds.rx_symbols.symbols_h
    )


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def test_baseline_reports_structure(mini_cfg, mini_dataset):
    base = pl.baseline_reports(mini_dataset, mini_cfg)
    grid = mini_cfg.xi_grid
    assert base.power_dbm == 2.0
    assert len(base.xi_curve) == len(grid)
    assert [xi for xi, _ in base.xi_curve] == pytest.approx(grid)
    assert base.dbp_q_db == max(q for _, q in base.xi_curve)
    assert base.dbp_xi in grid
    cdc_ber, cdc_q = pl.interior_q(
        mini_dataset.rx_symbols, mini_dataset.tx, margin=mini_cfg.edge_margin
    )
    assert base.cdc_ber == cdc_ber
    assert base.cdc_q_db == cdc_q


def test_dbp_beats_cdc_when_nonlinearity_dominates(mini_cfg):
    # High launch power, light noise: the Kerr distortion dominates, which
    # the tuned back-propagation should partly undo and the linear receiver
    # cannot.
    tx, wave = pl.simulate_frame(mini_cfg, 6.0, 4096, master_seed=55)
    amp = np.sqrt(np.mean(np.abs(wave.samples_h) ** 2 + np.abs(wave.samples_v) ** 2))
    ds = pl.make_dataset(mini_cfg, 6.0, 4096, 55, 0.02 * amp, simulated=(tx, wave))
    base = pl.baseline_reports(ds, mini_cfg)
    assert base.dbp_q_db > base.cdc_q_db
    assert base.dbp_xi > 0.0


# ---------------------------------------------------------------------------
# training orchestration
# ---------------------------------------------------------------------------

def test_primary_power_prefers_nonlinear_optimum():
    assert pl.primary_power((-4.0, -2.0, 0.0, 2.0, 4.0)) == 2.0
    assert pl.primary_power((-1.0, 0.0, 1.0)) == 1.0
    assert pl.primary_power((1.5, 2.5)) == 1.5  # tie broken downward


def test_train_power_sweep_warm_start_chain(mini_cfg, mini_dataset):
    datasets = {1.0: (mini_dataset, mini_dataset), 2.0: (mini_dataset, mini_dataset)}
    entries = pl.train_power_sweep(mini_cfg, "bilstm-cnn", datasets)
    assert [e.power_dbm for e in entries] == [1.0, 2.0]
    by_power = {e.power_dbm: e for e in entries}
    assert by_power[2.0].warm_started_from is None
    assert by_power[1.0].warm_started_from == 2.0
    for e in entries:
        assert e.model.architecture == "bilstm-cnn"
        assert e.result.epochs_run == 2
        assert len(e.result.history) == 2
        # Two optimizer steps leave the model near chance level, so Q may be
        # -inf; it just must not be NaN.
        assert not np.isnan(e.q_db)
        assert 0.0 <= e.val_ber <= 1.0
        assert e.wall_s > 0


def test_train_power_sweep_builds_requested_architecture(mini_cfg, mini_dataset):
    entries = pl.train_power_sweep(
        mini_cfg, "deep-cnn", {2.0: (mini_dataset, mini_dataset)}
    )
    assert entries[0].model.architecture == "deep-cnn"
    with pytest.raises(ValueError, match="unknown architecture"):
        pl.train_power_sweep(mini_cfg, "mlp", {2.0: (mini_dataset, mini_dataset)})


# ---------------------------------------------------------------------------
# approximation sweep
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def mini_model_and_data(mini_cfg, mini_dataset):
    entries = pl.train_power_sweep(
        mini_cfg, "bilstm-cnn", {2.0: (mini_dataset, mini_dataset)}
    )
    data = pl.build_equalizer_dataset(
        mini_dataset, mini_dataset, margin=mini_cfg.edge_margin
    )
    small = dataclasses.replace(
        data,
        x_train=data.x_train[:1200], y_train=data.y_train[:1200],
        x_val=data.x_val[:800], y_val=data.y_val[:800],
    )
    return entries[0].model, small


def test_sweep_cell_frozen_only(mini_cfg, mini_model_and_data):
    model, data = mini_model_and_data
    cells = pl.sweep_cell(model, data, mini_cfg, "pwl", 3, retrain=False)
    assert len(cells) == 1
    cell = cells[0]
    assert (cell.family, cell.level, cell.retrained) == ("pwl", 3, False)
    assert not np.isnan(cell.q_db)
    assert cell.boundary_tanh is None and cell.boundary_sigmoid is None
    assert cell.result is None


def test_sweep_cell_taylor_uses_configured_boundaries(mini_cfg, mini_model_and_data):
    model, data = mini_model_and_data
    cells = pl.sweep_cell(
        model, data, mini_cfg, "taylor", 3,
        retrain=False, search_boundary=False,
    )
    assert cells[0].boundary_tanh == mini_cfg.taylor_boundary_tanh
    assert cells[0].boundary_sigmoid == mini_cfg.taylor_boundary_sigmoid


def test_sweep_cell_retrains_and_returns_model(mini_cfg, mini_model_and_data):
    model, data = mini_model_and_data
    cells, adapted = pl.sweep_cell(
        model, data, mini_cfg, "lut", 6,
        retrain=True, return_model=True,
    )
    assert [c.retrained for c in cells] == [False, True]
    assert cells[1].result is not None
    assert cells[1].result.epochs_run <= mini_cfg.transfer_max_epochs
    assert adapted is not None
    assert adapted is not model


def test_approximation_sweep_covers_requested_grid(mini_cfg, mini_model_and_data):
    model, data = mini_model_and_data
    cells = pl.approximation_sweep(
        model, data, mini_cfg,
        families={"pwl": (3, 5), "lut": (4,)},
        retrain=False, search_boundary=False,
    )
    assert [(c.family, c.level) for c in cells] == [("pwl", 3), ("pwl", 5), ("lut", 4)]
    with pytest.raises(ValueError, match="unknown approximation family"):
        pl.sweep_cell(model, data, mini_cfg, "spline", 3, retrain=False)
