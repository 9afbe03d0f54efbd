"""Multi-antenna modulation classification toolkit.

Submodules: ``modem`` (waveform synthesis), ``channel`` (Rayleigh fading +
AWGN), ``dataset`` (example assembly and binary persistence), ``tensor`` /
``nn`` / ``optim`` / ``gradcheck`` (the autodiff engine), ``archs`` (the
classifier and its antenna-fusion variants), ``harness`` (training and
evaluation) and ``cli``.
"""

from .modem import ModulationScheme, SynthesisParams, synthesize
from .channel import ChannelDraw, apply_channel, draw_fading, measured_snr
from .dataset import (
    DatasetManifest,
    SignalDataset,
    desk_manifest,
    generate_dataset,
    load_dataset,
    save_dataset,
    split,
)
from .tensor import Tensor, no_grad
from .archs import MVCNN, WLCNN, BaseCNN, CoAMC, build_model
from .config import TrainSettings, load_config
from .harness import EvalReport, evaluate, export_curves, train

__version__ = "0.1.0"

__all__ = [
    "ModulationScheme",
    "SynthesisParams",
    "synthesize",
    "ChannelDraw",
    "apply_channel",
    "draw_fading",
    "measured_snr",
    "DatasetManifest",
    "SignalDataset",
    "desk_manifest",
    "generate_dataset",
    "load_dataset",
    "save_dataset",
    "split",
    "Tensor",
    "no_grad",
    "BaseCNN",
    "MVCNN",
    "WLCNN",
    "CoAMC",
    "build_model",
    "TrainSettings",
    "load_config",
    "EvalReport",
    "evaluate",
    "export_curves",
    "train",
    "__version__",
]
