"""Labeled multi-antenna example assembly, splitting and binary persistence.

A generated dataset holds float32 tensors of shape (n_antennas, 2, frame_len)
with the in-phase part in row 0 and quadrature in row 1 of the middle axis.
Each antenna slice is normalized to unit mean power (per-antenna by default),
which erases the fading magnitude but keeps the relative noise level, so
instantaneous SNR differences between antennas survive.

On disk (little-endian): magic ``MAMC``, version u32, then a header
{n_examples u64, n_antennas u32, frame_len u32, n_classes u32,
snr_grid_len u32 + f32 values, master_seed u64}; then one record per
example {label u16, snr_db f32, seed u64, tensor f32 row-major}.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelDraw, ReceivedFrame, apply_channel, draw_fading
from .modem import DEFAULT_PARAMS, ModulationScheme, SynthesisParams, synthesize

__all__ = [
    "MultiAntennaExample",
    "DatasetManifest",
    "SignalDataset",
    "DatasetFormatError",
    "derive_seed",
    "frame_example",
    "generate_dataset",
    "split",
    "save_dataset",
    "load_dataset",
    "desk_manifest",
]

MAGIC = b"MAMC"
FORMAT_VERSION = 1

_MASK64 = (1 << 64) - 1


class DatasetFormatError(Exception):
    """Raised on malformed dataset files; carries the byte offset."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"at byte {offset}: {message}")


@dataclass(frozen=True)
class MultiAntennaExample:
    """One labeled example: (n_antennas, 2, frame_len) tensor + metadata."""

    tensor: np.ndarray
    label: int
    snr_db: float
    seed: int


@dataclass(frozen=True)
class DatasetManifest:
    """Generation recipe; labels are indices into ``schemes``."""

    schemes: tuple[ModulationScheme, ...]
    snr_grid_db: tuple[float, ...]
    n_antennas: int
    frame_len: int
    examples_per_cell: int
    split_ratio: float = 0.5
    master_seed: int = 0
    normalize: str = "per_antenna"  # or "per_example"
    modem_params: SynthesisParams = field(default_factory=SynthesisParams)

    def __post_init__(self):
        if not self.schemes:
            raise ValueError("manifest needs at least one scheme")
        if not 1 <= self.n_antennas:
            raise ValueError("n_antennas must be >= 1")
        if self.frame_len < 1:
            raise ValueError("frame_len must be >= 1")
        if self.examples_per_cell < 1:
            raise ValueError("examples_per_cell must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")
        if self.normalize not in ("per_antenna", "per_example"):
            raise ValueError(f"unknown normalize mode {self.normalize!r}")

    @property
    def n_examples(self) -> int:
        return len(self.schemes) * len(self.snr_grid_db) * self.examples_per_cell


def desk_manifest(
    n_antennas: int = 4, master_seed: int = 2024, examples_per_cell: int = 400
) -> DatasetManifest:
    """Small default recipe: 4 well-separated schemes, 3 SNR points."""
    return DatasetManifest(
        schemes=(
            ModulationScheme.BPSK,
            ModulationScheme.QPSK,
            ModulationScheme.QAM16,
            ModulationScheme.FM,
        ),
        snr_grid_db=(-10.0, 0.0, 10.0),
        n_antennas=n_antennas,
        frame_len=512,
        examples_per_cell=examples_per_cell,
        master_seed=master_seed,
    )


class SignalDataset:
    """In-memory dataset: stacked float32 tensors plus per-example metadata.

    Indexing returns :class:`MultiAntennaExample` views.
    """

    def __init__(
        self,
        tensors: np.ndarray,
        labels: np.ndarray,
        snrs_db: np.ndarray,
        seeds: np.ndarray,
        n_classes: int,
        snr_grid_db: tuple[float, ...],
        master_seed: int,
    ):
        self.tensors = tensors
        self.labels = labels
        self.snrs_db = snrs_db
        self.seeds = seeds
        self.n_classes = int(n_classes)
        self.snr_grid_db = tuple(float(s) for s in snr_grid_db)
        self.master_seed = int(master_seed)

    @property
    def n_antennas(self) -> int:
        return self.tensors.shape[1]

    @property
    def frame_len(self) -> int:
        return self.tensors.shape[3]

    def __len__(self) -> int:
        return self.tensors.shape[0]

    def __getitem__(self, i: int) -> MultiAntennaExample:
        return MultiAntennaExample(
            self.tensors[i],
            int(self.labels[i]),
            float(self.snrs_db[i]),
            int(self.seeds[i]),
        )

    def subset(self, indices: np.ndarray) -> "SignalDataset":
        return SignalDataset(
            self.tensors[indices],
            self.labels[indices],
            self.snrs_db[indices],
            self.seeds[indices],
            self.n_classes,
            self.snr_grid_db,
            self.master_seed,
        )


def derive_seed(*values: int) -> int:
    """Order-sensitive 64-bit mix (splitmix64 absorption) of integer fields."""
    acc = 0
    for v in values:
        acc = (acc + int(v)) & _MASK64
        z = (acc + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        acc = z ^ (z >> 31)
    return acc


def frame_example(
    received: ReceivedFrame,
    label: int,
    seed: int = 0,
    normalize: str = "per_antenna",
) -> MultiAntennaExample:
    """Split complex rows into I/Q and normalize to unit mean power.

    Per-antenna mode rescales each antenna's 2 x N slice independently;
    per-example mode applies one scale to the whole tensor.  The returned
    tensor is float64; dataset assembly casts to float32 for storage.
    """
    samples = received.samples
    tensor = np.stack([samples.real, samples.imag], axis=1).astype(np.float64)
    if normalize == "per_antenna":
        power = np.mean(tensor**2, axis=(1, 2), keepdims=True) * 2.0
        tensor = tensor / np.sqrt(power)
    elif normalize == "per_example":
        power = float(np.mean(tensor**2)) * 2.0
        tensor = tensor / math.sqrt(power)
    else:
        raise ValueError(f"unknown normalize mode {normalize!r}")
    return MultiAntennaExample(
        tensor, int(label), float(received.draw.snr_db), int(seed)
    )


def generate_dataset(manifest: DatasetManifest) -> SignalDataset:
    """Generate every (scheme, snr) cell of the manifest.

    Each example's randomness comes from a counter-based generator keyed by
    a seed derived from (master_seed, scheme index, snr index, example
    index), so generation is reproducible and parallel-safe per example.
    """
    n = manifest.n_examples
    shape = (n, manifest.n_antennas, 2, manifest.frame_len)
    tensors = np.empty(shape, dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    snrs = np.empty(n, dtype=np.float64)
    seeds = np.empty(n, dtype=np.uint64)

    i = 0
    for scheme_idx, scheme in enumerate(manifest.schemes):
        for snr_idx, snr_db in enumerate(manifest.snr_grid_db):
            for k in range(manifest.examples_per_cell):
                seed = derive_seed(manifest.master_seed, scheme_idx, snr_idx, k)
                rng = np.random.Generator(np.random.Philox(key=seed))
                signal = synthesize(
                    scheme, manifest.frame_len, rng, manifest.modem_params
                )
                coeffs = draw_fading(manifest.n_antennas, rng)
                noise_seed = derive_seed(seed, 1)
                draw = ChannelDraw(coeffs, float(snr_db), noise_seed)
                received = apply_channel(signal, draw)
                example = frame_example(
                    received, scheme_idx, seed, manifest.normalize
                )
                tensors[i] = example.tensor.astype(np.float32)
                labels[i] = scheme_idx
                snrs[i] = snr_db
                seeds[i] = seed
                i += 1

    return SignalDataset(
        tensors,
        labels,
        snrs,
        seeds,
        n_classes=len(manifest.schemes),
        snr_grid_db=manifest.snr_grid_db,
        master_seed=manifest.master_seed,
    )


def split(
    dataset: SignalDataset, ratio: float, rng: np.random.Generator
) -> tuple[SignalDataset, SignalDataset]:
    """Stratified split per (label, snr) cell; first part gets ``ratio``."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    first: list[np.ndarray] = []
    second: list[np.ndarray] = []
    keys = list(
        dict.fromkeys(zip(dataset.labels.tolist(), dataset.snrs_db.tolist()))
    )
    for label, snr in keys:
        cell = np.flatnonzero((dataset.labels == label) & (dataset.snrs_db == snr))
        n_first = int(round(ratio * cell.size))
        if n_first == 0 or n_first == cell.size:
            raise ValueError(
                f"cell (label={label}, snr={snr}) with {cell.size} examples "
                f"is too small to split at ratio {ratio}"
            )
        perm = rng.permutation(cell.size)
        first.append(cell[perm[:n_first]])
        second.append(cell[perm[n_first:]])
    a = np.sort(np.concatenate(first))
    b = np.sort(np.concatenate(second))
    return dataset.subset(a), dataset.subset(b)


def save_dataset(dataset: SignalDataset, path: str) -> None:
    """Write the documented binary format; round-trips bit-exactly."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(
            struct.pack(
                "<QIII",
                len(dataset),
                dataset.n_antennas,
                dataset.frame_len,
                dataset.n_classes,
            )
        )
        f.write(struct.pack("<I", len(dataset.snr_grid_db)))
        f.write(np.asarray(dataset.snr_grid_db, dtype="<f4").tobytes())
        f.write(struct.pack("<Q", dataset.master_seed & _MASK64))
        for i in range(len(dataset)):
            f.write(
                struct.pack(
                    "<Hf",
                    int(dataset.labels[i]),
                    float(dataset.snrs_db[i]),
                )
            )
            f.write(struct.pack("<Q", int(dataset.seeds[i]) & _MASK64))
            f.write(dataset.tensors[i].astype("<f4", copy=False).tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    offset = f.tell()
    data = f.read(n)
    if len(data) != n:
        raise DatasetFormatError(
            offset, f"truncated file while reading {what} ({len(data)}/{n} bytes)"
        )
    return data


def load_dataset(path: str) -> SignalDataset:
    """Read a dataset written by :func:`save_dataset`."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise DatasetFormatError(0, f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise DatasetFormatError(
                4, f"unsupported format version {version}, expected {FORMAT_VERSION}"
            )
        n, n_antennas, frame_len, n_classes = struct.unpack(
            "<QIII", _read_exact(f, 20, "header")
        )
        (n_snr,) = struct.unpack("<I", _read_exact(f, 4, "snr grid length"))
        grid = np.frombuffer(
            _read_exact(f, 4 * n_snr, "snr grid"), dtype="<f4"
        ).astype(np.float64)
        (master_seed,) = struct.unpack("<Q", _read_exact(f, 8, "master seed"))

        tensors = np.empty((n, n_antennas, 2, frame_len), dtype=np.float32)
        labels = np.empty(n, dtype=np.int64)
        snrs = np.empty(n, dtype=np.float64)
        seeds = np.empty(n, dtype=np.uint64)
        tensor_bytes = n_antennas * 2 * frame_len * 4
        for i in range(n):
            label, snr = struct.unpack("<Hf", _read_exact(f, 6, f"record {i}"))
            (seed,) = struct.unpack("<Q", _read_exact(f, 8, f"record {i} seed"))
            raw = _read_exact(f, tensor_bytes, f"record {i} tensor")
            tensors[i] = np.frombuffer(raw, dtype="<f4").reshape(
                n_antennas, 2, frame_len
            )
            labels[i] = label
            snrs[i] = snr
            seeds[i] = seed

        offset = f.tell()
        if f.read(1):
            raise DatasetFormatError(offset, "trailing bytes after last record")

    return SignalDataset(
        tensors, labels, snrs, seeds, n_classes, tuple(grid.tolist()), master_seed
    )
