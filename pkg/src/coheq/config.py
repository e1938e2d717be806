"""Experiment configuration: a flat, typed key-value file with sections.

The file format is INI (``configparser``): one section per concern, every
key explicitly listed in the schema below.  Unknown sections or keys are
rejected rather than ignored — a typo must fail loudly, not silently run
with a default.  ``save_config`` writes full-precision values, so
parse -> serialize -> parse is the identity.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from .channel import FiberLinkParams
from .nn.training import TrainConfig

__all__ = [
    "ExperimentConfig",
    "default_config",
    "load_config",
    "loads_config",
    "save_config",
    "dumps_config",
]

ARCHITECTURES = ("bilstm-cnn", "deep-cnn", "both")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full experiment run needs, nested by concern."""

    link: FiberLinkParams = field(default_factory=FiberLinkParams)
    # signal
    symbol_rate_bd: float = 34e9
    rolloff: float = 0.1
    sps_propagation: float = 8.0
    sps_store: float = 4.0
    rrc_taps: int = 1025
    modulation: str = "16qam"
    # experiment
    powers_dbm: tuple[float, ...] = (-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0)
    train_symbols: int = 2 ** 17
    val_symbols: int = 2 ** 15
    edge_margin: int = 500
    seed: int = 2026
    architecture: str = "both"
    noise_target_q_db: float = 3.91
    noise_calib_power_dbm: float = -1.0
    cdc_taps: int = 517
    xi_min: float = 0.0
    xi_max: float = 1.5
    xi_step: float = 0.1
    # training
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        max_epochs=600, patience=50, symbols_per_epoch=2 ** 17, seed=1,
    ))
    transfer_max_epochs: int = 300
    transfer_patience: int = 30
    # approximation sweep
    taylor_orders: tuple[int, ...] = (3, 5, 7, 9)
    pwl_segments: tuple[int, ...] = (3, 5, 7, 9)
    lut_bits: tuple[int, ...] = tuple(range(2, 17))
    taylor_boundary_tanh: float = 1.0
    taylor_boundary_sigmoid: float = 2.0
    # output
    output_dir: str = "runs/default"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.modulation != "16qam":
            raise ValueError(f"only 16qam modulation is supported, got {self.modulation!r}")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if not self.powers_dbm:
            raise ValueError("powers_dbm must list at least one launch power")
        if self.noise_calib_power_dbm not in self.powers_dbm:
            raise ValueError(
                f"noise_calib_power_dbm {self.noise_calib_power_dbm} is not in powers_dbm"
            )
        if not 0 <= self.xi_min <= self.xi_max <= 2.0:
            raise ValueError(f"xi grid must satisfy 0 <= min <= max <= 2, got [{self.xi_min}, {self.xi_max}]")
        if self.xi_step <= 0:
            raise ValueError(f"xi_step must be positive, got {self.xi_step}")
        for name in ("train_symbols", "val_symbols", "rrc_taps", "cdc_taps", "workers",
                     "transfer_max_epochs", "transfer_patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("train_symbols", "val_symbols"):
            n = getattr(self, name)
            if n & (n - 1):
                raise ValueError(
                    f"{name} must be a power of two for the FFT-based channel, got {n}"
                )
        if self.edge_margin < 0:
            raise ValueError(f"edge_margin must be >= 0, got {self.edge_margin}")
        for tag, grid in (("taylor_orders", self.taylor_orders),
                          ("pwl_segments", self.pwl_segments),
                          ("lut_bits", self.lut_bits)):
            if not grid:
                raise ValueError(f"{tag} must not be empty")

    @property
    def xi_grid(self) -> tuple[float, ...]:
        values = []
        x = self.xi_min
        while x <= self.xi_max + 1e-9:
            values.append(round(x, 10))
            x += self.xi_step
        return tuple(values)


# Section -> {key: (getter kind, accessor)} — the single source of truth for
# both directions of the serialization.
_LINK_KEYS = [f.name for f in fields(FiberLinkParams)]
_SIGNAL_KEYS = ["symbol_rate_bd", "rolloff", "sps_propagation", "sps_store", "rrc_taps", "modulation"]
_EXPERIMENT_KEYS = [
    "powers_dbm", "train_symbols", "val_symbols", "edge_margin", "seed", "architecture",
    "noise_target_q_db", "noise_calib_power_dbm", "cdc_taps", "xi_min", "xi_max", "xi_step",
]
_TRAIN_KEYS = [
    "max_epochs", "learning_rate", "batch_size", "symbols_per_epoch", "patience",
    "seed", "micro_batch", "transfer_max_epochs", "transfer_patience",
]
_APPROX_KEYS = [
    "taylor_orders", "pwl_segments", "lut_bits", "taylor_boundary_tanh", "taylor_boundary_sigmoid",
]
_OUTPUT_KEYS = ["dir", "workers"]
_SCHEMA = {
    "link": _LINK_KEYS,
    "signal": _SIGNAL_KEYS,
    "experiment": _EXPERIMENT_KEYS,
    "train": _TRAIN_KEYS,
    "approx": _APPROX_KEYS,
    "output": _OUTPUT_KEYS,
}

_INT_KEYS = {
    "n_spans", "rrc_taps", "train_symbols", "val_symbols", "edge_margin", "seed",
    "cdc_taps", "max_epochs", "batch_size", "symbols_per_epoch", "micro_batch",
    "transfer_max_epochs", "transfer_patience", "workers",
}
_STR_KEYS = {"modulation", "architecture", "dir"}
_LIST_FLOAT_KEYS = {"powers_dbm"}
_LIST_INT_KEYS = {"taylor_orders", "pwl_segments", "lut_bits"}


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def dumps_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["link"] = {k: _format_value(getattr(cfg.link, k)) for k in _LINK_KEYS}
    parser["signal"] = {k: _format_value(getattr(cfg, k)) for k in _SIGNAL_KEYS}
    parser["experiment"] = {k: _format_value(getattr(cfg, k)) for k in _EXPERIMENT_KEYS}
    train = {k: _format_value(getattr(cfg.train, k))
             for k in _TRAIN_KEYS if k not in ("transfer_max_epochs", "transfer_patience")}
    train["transfer_max_epochs"] = str(cfg.transfer_max_epochs)
    train["transfer_patience"] = str(cfg.transfer_patience)
    parser["train"] = train
    parser["approx"] = {k: _format_value(getattr(cfg, k)) for k in _APPROX_KEYS}
    parser["output"] = {"dir": cfg.output_dir, "workers": str(cfg.workers)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_config(cfg))


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    if key in _LIST_FLOAT_KEYS:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if key in _LIST_INT_KEYS:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if key == "patience":
        return None if raw == "" else int(raw)
    if key in _INT_KEYS:
        return int(raw)
    return float(raw)


def loads_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from exc
    unknown_sections = set(parser.sections()) - set(_SCHEMA)
    if unknown_sections:
        raise ValueError(f"unknown config sections: {sorted(unknown_sections)}")
    values: dict[str, dict] = {}
    for section, allowed in _SCHEMA.items():
        if not parser.has_section(section):
            raise ValueError(f"missing config section [{section}]")
        seen = dict(parser.items(section))
        unknown = set(seen) - set(allowed)
        if unknown:
            raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
        missing = set(allowed) - set(seen)
        if missing:
            raise ValueError(f"missing keys in [{section}]: {sorted(missing)}")
        values[section] = {k: _parse_value(k, v) for k, v in seen.items()}
    train_kv = values["train"]
    transfer_max = train_kv.pop("transfer_max_epochs")
    transfer_pat = train_kv.pop("transfer_patience")
    return ExperimentConfig(
        link=FiberLinkParams(**values["link"]),
        **values["signal"],
        **values["experiment"],
        train=TrainConfig(**train_kv),
        **values["approx"],
        output_dir=values["output"]["dir"],
        workers=values["output"]["workers"],
        transfer_max_epochs=transfer_max,
        transfer_patience=transfer_pat,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads_config(fh.read())
