"""Classifier architectures and their antenna-fusion variants.

``BaseCNN`` is a 34-layer residual network over a single antenna's
1 x 2 x N frame, split into a feature front end (first conv, max pool,
three 64-channel residual blocks) and a classification head (the
remaining thirteen blocks, global average pooling, fully connected).

Three multi-antenna models build on it, all sharing one set of front-end
parameters across antennas:

* ``MVCNN``  - element-wise maximum across antennas between front end and head;
* ``WLCNN``  - weighted sum of per-antenna features, with the weights
  produced from the raw antenna signals by a small weight-learning
  network and softmax-normalized across antennas;
* ``CoAMC``  - the base network applied per antenna, class distributions
  averaged at inference only.

With one antenna all three reduce exactly to the base network.
"""

from __future__ import annotations

import numpy as np

from . import checkpoint
from .nn import AvgPoolW, BatchNorm2d, Conv2d, Linear, MaxPoolW, Parameter
from .tensor import (
    Tensor,
    add,
    amax,
    mul,
    no_grad,
    relu,
    reshape,
    softmax,
    stack,
    tanh,
    tensor_sum,
)

__all__ = [
    "ResidualBlock",
    "BaseCNN",
    "WeightLearningModule",
    "MVCNN",
    "WLCNN",
    "CoAMC",
    "view_pool_max",
    "coamc_predict",
    "build_model",
    "parameter_count",
    "save_model",
    "load_model",
    "assign_state",
    "snapshot_state",
]

ARCH_KINDS = ("base", "mvcnn", "wlcnn", "coamc")


def _scaled(channels: int, width: float) -> int:
    return max(1, int(round(channels * width)))


class ResidualBlock:
    """Two 1x3 convolutions with batch norm; the first carries the block
    stride.  A strided or channel-changing block uses a 1x1 projection
    shortcut (with batch norm), otherwise the identity."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int = 1,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.conv1 = Conv2d(
            in_channels, out_channels, (1, 3), (1, stride), (0, 1), rng=rng, dtype=dtype
        )
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype)
        self.conv2 = Conv2d(
            out_channels, out_channels, (1, 3), (1, 1), (0, 1), rng=rng, dtype=dtype
        )
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)
        if stride != 1 or in_channels != out_channels:
            self.proj_conv = Conv2d(
                in_channels, out_channels, (1, 1), (1, stride), (0, 0),
                rng=rng, dtype=dtype,
            )
            self.proj_bn = BatchNorm2d(out_channels, dtype=dtype)
        else:
            self.proj_conv = None
            self.proj_bn = None

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        h = relu(self.bn1(self.conv1(x, mode), mode))
        h = self.bn2(self.conv2(h, mode), mode)
        if self.proj_conv is not None:
            shortcut = self.proj_bn(self.proj_conv(x, mode), mode)
        else:
            shortcut = x
        return relu(add(h, shortcut))

    def _children(self):
        children = [("conv1", self.conv1), ("bn1", self.bn1),
                    ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.proj_conv is not None:
            children += [("proj_conv", self.proj_conv), ("proj_bn", self.proj_bn)]
        return children

    def named_parameters(self, prefix: str):
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}.{name}")

    def named_buffers(self, prefix: str):
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}.{name}")


class _Stage:
    """A sequence of residual blocks, the first optionally strided."""

    def __init__(self, in_channels, out_channels, count, entry_stride, *, rng, dtype):
        self.blocks = [
            ResidualBlock(in_channels, out_channels, entry_stride, rng=rng, dtype=dtype)
        ]
        for _ in range(count - 1):
            self.blocks.append(
                ResidualBlock(out_channels, out_channels, 1, rng=rng, dtype=dtype)
            )

    def __call__(self, x: Tensor, mode: str, record=None, tag: str = "") -> Tensor:
        for i, block in enumerate(self.blocks):
            x = block(x, mode)
            if record is not None:
                record.append((f"{tag}.block{i}", x.shape))
        return x

    def named_parameters(self, prefix: str):
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}.{i}")

    def named_buffers(self, prefix: str):
        for i, block in enumerate(self.blocks):
            yield from block.named_buffers(f"{prefix}.{i}")


class BaseCNN:
    """Single-antenna residual classifier over [B, 1, 2, N] frames."""

    arch = "base"

    def __init__(
        self,
        n_classes: int = 20,
        width: float = 1.0,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.n_classes = n_classes
        self.width = width
        self.dtype = dtype
        c1, c2, c3, c4 = (_scaled(c, width) for c in (64, 128, 256, 512))

        self.stem_conv = Conv2d(1, c1, (2, 7), (1, 2), (0, 3), rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm2d(c1, dtype=dtype)
        self.stem_pool = MaxPoolW(3, 2, 1)
        self.stage1 = _Stage(c1, c1, 3, 1, rng=rng, dtype=dtype)
        self.stage2 = _Stage(c1, c2, 4, 2, rng=rng, dtype=dtype)
        self.stage3 = _Stage(c2, c3, 6, 2, rng=rng, dtype=dtype)
        self.stage4 = _Stage(c3, c4, 3, 2, rng=rng, dtype=dtype)
        self.fc = Linear(c4, n_classes, bias=True, rng=rng, dtype=dtype)

    def features(self, x: Tensor, mode: str, record=None) -> Tensor:
        """Front end: stem conv + pool + the first three residual blocks."""
        if x.data.ndim != 4 or x.data.shape[1] != 1 or x.data.shape[2] != 2:
            raise ValueError(
                f"expected input [B, 1, 2, N], got shape {tuple(x.data.shape)}"
            )
        h = tanh(self.stem_bn(self.stem_conv(x, mode), mode))
        if record is not None:
            record.append(("stem", h.shape))
        h = self.stem_pool(h, mode)
        if record is not None:
            record.append(("stem_pool", h.shape))
        return self.stage1(h, mode, record, "stage1")

    def head(self, features: Tensor, mode: str, record=None) -> Tensor:
        """Back end: remaining stages, global average pool, classifier logits."""
        h = self.stage2(features, mode, record, "stage2")
        h = self.stage3(h, mode, record, "stage3")
        h = self.stage4(h, mode, record, "stage4")
        pool = AvgPoolW(h.shape[3], 1, 0)  # kernel 16 at the nominal N=512
        h = pool(h, mode)
        if record is not None:
            record.append(("avg_pool", h.shape))
        h = reshape(h, (h.shape[0], h.shape[1]))
        logits = self.fc(h, mode)
        if record is not None:
            record.append(("fc", logits.shape))
        return logits

    def forward(self, x: Tensor, mode: str = "train", record=None) -> Tensor:
        return self.head(self.features(x, mode, record), mode, record)

    def forward_proba(self, x: Tensor, mode: str = "train") -> Tensor:
        return softmax(self.forward(x, mode), axis=1)

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode class probabilities for [B, 1, 2, N] (or [B, Nr=1, 2, N])."""
        x = np.asarray(x, dtype=self.dtype)
        outputs = []
        with no_grad():
            for start in range(0, x.shape[0], batch_size):
                xb = Tensor(x[start : start + batch_size])
                outputs.append(self.forward_proba(xb, "eval").data)
        return np.concatenate(outputs, axis=0)

    def _children(self):
        return [
            ("stem_conv", self.stem_conv),
            ("stem_bn", self.stem_bn),
            ("stage1", self.stage1),
            ("stage2", self.stage2),
            ("stage3", self.stage3),
            ("stage4", self.stage4),
            ("fc", self.fc),
        ]

    def named_parameters(self):
        for name, child in self._children():
            yield from child.named_parameters(name)

    def named_buffers(self):
        for name, child in self._children():
            yield from child.named_buffers(name)


class WeightLearningModule:
    """Maps one antenna's raw [B, 1, 2, N] frame to a scalar fusion score."""

    def __init__(
        self,
        frame_len: int,
        width: float = 1.0,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        ch = _scaled(16, width)
        if frame_len % 16 != 0:
            raise ValueError("frame_len must be divisible by 16")
        self.conv = Conv2d(1, ch, (2, 7), (1, 2), (0, 3), rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(ch, dtype=dtype)
        self.blocks = [
            ResidualBlock(ch, ch, 2, rng=rng, dtype=dtype) for _ in range(3)
        ]
        self.fc = Linear(ch * (frame_len // 16), 1, bias=True, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, mode: str = "train", record=None) -> Tensor:
        h = tanh(self.bn(self.conv(x, mode), mode))
        if record is not None:
            record.append(("conv", h.shape))
        for i, block in enumerate(self.blocks):
            h = block(h, mode)
            if record is not None:
                record.append((f"block{i}", h.shape))
        h = reshape(h, (h.shape[0], h.shape[1] * h.shape[3]))
        score = self.fc(h, mode)
        if record is not None:
            record.append(("fc", score.shape))
        return score

    def _children(self):
        children = [("conv", self.conv), ("bn", self.bn)]
        children += [(f"block{i}", b) for i, b in enumerate(self.blocks)]
        children.append(("fc", self.fc))
        return children

    def named_parameters(self, prefix: str = "wlm"):
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}.{name}")

    def named_buffers(self, prefix: str = "wlm"):
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}.{name}")


def view_pool_max(features: list[Tensor]) -> Tensor:
    """Element-wise maximum across antenna feature maps.

    Ties route the gradient to the lowest antenna index.  A single-branch
    input is returned unchanged.
    """
    if not features:
        raise ValueError("view_pool_max needs at least one branch")
    if len(features) == 1:
        return features[0]
    return amax(stack(features, axis=1), axis=1)


def _flatten_antennas(x: Tensor) -> tuple[Tensor, int, int]:
    if x.data.ndim != 4 or x.data.shape[2] != 2:
        raise ValueError(
            f"expected input [B, Nr, 2, N], got shape {tuple(x.data.shape)}"
        )
    batch, n_r = x.data.shape[0], x.data.shape[1]
    flat = reshape(x, (batch * n_r, 1, 2, x.data.shape[3]))
    return flat, batch, n_r


class MVCNN:
    """Max-fusion network: shared front end per antenna, element-wise
    maximum across antennas, shared head."""

    arch = "mvcnn"

    def __init__(self, base: BaseCNN, n_antennas: int):
        if n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        self.base = base
        self.n_antennas = n_antennas
        self.n_classes = base.n_classes
        self.dtype = base.dtype

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        flat, batch, n_r = _flatten_antennas(x)
        if n_r != self.n_antennas:
            raise ValueError(
                f"model fuses {self.n_antennas} antennas, input has {n_r}"
            )
        f = self.base.features(flat, mode)
        _, c, h, w = f.data.shape
        f = reshape(f, (batch, n_r, c, h, w))
        fused = amax(f, axis=1) if n_r > 1 else reshape(f, (batch, c, h, w))
        return self.base.head(fused, mode)

    def forward_proba(self, x: Tensor, mode: str = "train") -> Tensor:
        return softmax(self.forward(x, mode), axis=1)

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        outputs = []
        with no_grad():
            for start in range(0, x.shape[0], batch_size):
                xb = Tensor(x[start : start + batch_size])
                outputs.append(self.forward_proba(xb, "eval").data)
        return np.concatenate(outputs, axis=0)

    def named_parameters(self):
        return self.base.named_parameters()

    def named_buffers(self):
        return self.base.named_buffers()


class WLCNN:
    """Learned-weight fusion network: per-antenna features are combined as
    a weighted sum, with the weights computed from the raw antenna signals
    and softmax-normalized across antennas.  Trained end to end."""

    arch = "wlcnn"

    def __init__(self, base: BaseCNN, wlm: WeightLearningModule, n_antennas: int):
        if n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        self.base = base
        self.wlm = wlm
        self.n_antennas = n_antennas
        self.n_classes = base.n_classes
        self.dtype = base.dtype

    def antenna_weights(self, x: Tensor, mode: str = "train") -> Tensor:
        """Per-example fusion weights [B, Nr], each row summing to 1."""
        flat, batch, n_r = _flatten_antennas(x)
        scores = self.wlm.forward(flat, mode)
        return softmax(reshape(scores, (batch, n_r)), axis=1)

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        flat, batch, n_r = _flatten_antennas(x)
        if n_r != self.n_antennas:
            raise ValueError(
                f"model fuses {self.n_antennas} antennas, input has {n_r}"
            )
        weights = self.antenna_weights(x, mode)
        f = self.base.features(flat, mode)
        _, c, h, w = f.data.shape
        f = reshape(f, (batch, n_r, c, h, w))
        wb = reshape(weights, (batch, n_r, 1, 1, 1))
        fused = tensor_sum(mul(wb, f), axis=1)
        return self.base.head(fused, mode)

    def forward_proba(self, x: Tensor, mode: str = "train") -> Tensor:
        return softmax(self.forward(x, mode), axis=1)

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        outputs = []
        with no_grad():
            for start in range(0, x.shape[0], batch_size):
                xb = Tensor(x[start : start + batch_size])
                outputs.append(self.forward_proba(xb, "eval").data)
        return np.concatenate(outputs, axis=0)

    def named_parameters(self):
        yield from self.base.named_parameters()
        yield from self.wlm.named_parameters()

    def named_buffers(self):
        yield from self.base.named_buffers()
        yield from self.wlm.named_buffers()


class CoAMC:
    """Decision-averaging ensemble: the base network scores each antenna
    independently and the class distributions are averaged at inference.
    Training happens on single-antenna examples only."""

    arch = "coamc"

    def __init__(self, base: BaseCNN, n_antennas: int):
        if n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        self.base = base
        self.n_antennas = n_antennas
        self.n_classes = base.n_classes
        self.dtype = base.dtype

    def predict(self, x: np.ndarray, batch_size: int = 256):
        """Averaged probabilities [B, K] and argmax decisions [B]."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[2] != 2:
            raise ValueError(f"expected input [B, Nr, 2, N], got shape {x.shape}")
        batch, n_r = x.shape[0], x.shape[1]
        flat = x.reshape(batch * n_r, 1, 2, x.shape[3])
        probs = self.base.predict_proba(flat, batch_size=batch_size)
        avg = probs.reshape(batch, n_r, self.n_classes).mean(axis=1)
        return avg, np.argmax(avg, axis=1)

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return self.predict(x, batch_size=batch_size)[0]

    def named_parameters(self):
        return self.base.named_parameters()

    def named_buffers(self):
        return self.base.named_buffers()


def coamc_predict(x: np.ndarray, base: BaseCNN, n_antennas: int):
    """Functional form of the decision-averaging rule."""
    return CoAMC(base, n_antennas).predict(x)


def parameter_count(model) -> int:
    seen: set[int] = set()
    total = 0
    for _, p in model.named_parameters():
        if id(p) not in seen:
            seen.add(id(p))
            total += p.data.size
    return total


def build_model(
    arch: str,
    *,
    n_classes: int,
    n_antennas: int,
    frame_len: int,
    width: float = 1.0,
    seed: int = 0,
    dtype=np.float32,
):
    """Construct a model by config key: base | mvcnn | wlcnn | coamc."""
    if arch not in ARCH_KINDS:
        raise ValueError(f"unknown arch {arch!r}, expected one of {ARCH_KINDS}")
    rng = np.random.default_rng(seed)
    base = BaseCNN(n_classes, width, rng=rng, dtype=dtype)
    if arch == "base":
        if n_antennas != 1:
            raise ValueError("arch 'base' requires n_antennas == 1")
        return base
    if arch == "mvcnn":
        return MVCNN(base, n_antennas)
    if arch == "wlcnn":
        wlm = WeightLearningModule(frame_len, width, rng=rng, dtype=dtype)
        return WLCNN(base, wlm, n_antennas)
    return CoAMC(base, n_antennas)


def _state_arrays(model) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        arrays[name] = p.data
    for name, buf in model.named_buffers():
        arrays[name] = buf
    return arrays


def save_model(model, path: str, frame_len: int) -> None:
    """Checkpoint parameters and batch-norm state with an arch header."""
    width = model.base.width if hasattr(model, "base") else model.width
    meta = (
        f"arch={model.arch};n_classes={model.n_classes};width={width};"
        f"n_antennas={getattr(model, 'n_antennas', 1)};frame_len={frame_len}"
    )
    checkpoint.save_arrays(path, _state_arrays(model), meta)


def load_model(path: str, dtype=np.float32):
    """Rebuild a model from a checkpoint written by :func:`save_model`."""
    meta, arrays = checkpoint.load_arrays(path)
    fields = dict(item.split("=", 1) for item in meta.split(";") if item)
    model = build_model(
        fields["arch"],
        n_classes=int(fields["n_classes"]),
        n_antennas=int(fields["n_antennas"]),
        frame_len=int(fields["frame_len"]),
        width=float(fields["width"]),
        seed=0,
        dtype=dtype,
    )
    assign_state(model, arrays)
    return model


def assign_state(model, arrays: dict[str, np.ndarray]) -> None:
    state = _state_arrays(model)
    missing = sorted(set(state) - set(arrays))
    if missing:
        raise ValueError(f"checkpoint is missing arrays: {missing[:5]}")
    for name, target in state.items():
        source = arrays[name]
        if tuple(source.shape) != tuple(target.shape):
            raise ValueError(
                f"array {name!r} has shape {source.shape}, expected {target.shape}"
            )
        target[...] = source.astype(target.dtype, copy=False)


def snapshot_state(model) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in _state_arrays(model).items()}
