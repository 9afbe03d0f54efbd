"""Config files: line-based ``key = value`` grammar with [sections].

See docs/config.md for the full grammar.  The [dataset] section maps to a
generation manifest, [train] to training settings, and the optional
[modem] section overrides waveform parameters.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .dataset import DatasetManifest
from .modem import ModulationScheme, SynthesisParams

__all__ = ["ConfigError", "TrainSettings", "AppConfig", "load_config"]


class ConfigError(Exception):
    pass


@dataclass
class TrainSettings:
    arch: str = "base"
    batch_size: int = 64
    learning_rate: float = 0.001
    max_epochs: int = 30
    patience: int = 5
    width_multiplier: float = 1.0
    seed: int = 0
    val_fraction: float = 0.1
    target_loss: float | None = None
    # per-antenna random phase rotation of training batches; exactly
    # distribution-preserving (fading phase is uniform, noise circular)
    # and the difference between memorizing and generalizing on small sets
    augment_phase: bool = True
    # halve the learning rate after every 2 epochs without validation
    # improvement (1.0 disables; only the initial rate is fixed at 0.001)
    lr_plateau_decay: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")


@dataclass
class AppConfig:
    manifest: DatasetManifest | None
    train: TrainSettings


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in raw.split(",") if v.strip())


def _schemes(raw: str) -> tuple[ModulationScheme, ...]:
    return tuple(
        ModulationScheme.from_label(v.strip()) for v in raw.split(",") if v.strip()
    )


def load_config(path: str) -> AppConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    try:
        manifest = None
        if parser.has_section("dataset"):
            sec = parser["dataset"]
            modem_params = SynthesisParams()
            if parser.has_section("modem"):
                msec = parser["modem"]
                fields = {f.name: f for f in dataclasses.fields(SynthesisParams)}
                overrides = {}
                for key in msec:
                    if key not in fields:
                        raise ConfigError(f"unknown [modem] key {key!r}")
                    kind = fields[key].type
                    overrides[key] = (
                        int(msec[key]) if kind == "int" else float(msec[key])
                    )
                modem_params = SynthesisParams(**overrides)
            manifest = DatasetManifest(
                schemes=_schemes(sec["schemes"]),
                snr_grid_db=_floats(sec["snr_grid_db"]),
                n_antennas=sec.getint("n_antennas"),
                frame_len=sec.getint("frame_len", 512),
                examples_per_cell=sec.getint("examples_per_cell"),
                split_ratio=sec.getfloat("split_ratio", 0.5),
                master_seed=sec.getint("master_seed", 0),
                normalize=sec.get("normalize", "per_antenna"),
                modem_params=modem_params,
            )

        train = TrainSettings()
        if parser.has_section("train"):
            sec = parser["train"]
            target = sec.get("target_loss", None)
            train = TrainSettings(
                arch=sec.get("arch", "base"),
                batch_size=sec.getint("batch_size", 64),
                learning_rate=sec.getfloat("learning_rate", 0.001),
                max_epochs=sec.getint("max_epochs", 30),
                patience=sec.getint("patience", 5),
                width_multiplier=sec.getfloat("width_multiplier", 1.0),
                seed=sec.getint("seed", 0),
                val_fraction=sec.getfloat("val_fraction", 0.1),
                target_loss=float(target) if target is not None else None,
                augment_phase=sec.getboolean("augment_phase", True),
                lr_plateau_decay=sec.getfloat("lr_plateau_decay", 0.5),
            )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"config {path}: {exc}") from exc

    return AppConfig(manifest=manifest, train=train)
