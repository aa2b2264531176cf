"""The eight forecasters behind one contract: W scaled reals in, H scaled reals out."""
from __future__ import annotations

import enum
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
from torch.func import functional_call

warnings.filterwarnings("ignore", message="Using padding='same' with even kernel lengths")


class InvalidSpecError(ValueError):
    pass


class ModelKind(str, enum.Enum):
    MEAN = "mean"
    GRU = "gru"
    LSTM = "lstm"
    GRU_FCN = "gru_fcn"
    LSTM_FCN = "lstm_fcn"
    INCEPTION_TIME = "inception_time"
    RESNET = "resnet"
    RCLSTM = "rclstm"


ALL_KINDS: tuple[ModelKind, ...] = tuple(ModelKind)

DISPLAY_NAMES = {
    ModelKind.MEAN: "Mean",
    ModelKind.GRU: "GRU",
    ModelKind.LSTM: "LSTM",
    ModelKind.GRU_FCN: "GRU-FCN",
    ModelKind.LSTM_FCN: "LSTM-FCN",
    ModelKind.INCEPTION_TIME: "InceptionTime",
    ModelKind.RESNET: "ResNet",
    ModelKind.RCLSTM: "RCLSTM",
}

# kind: (rnn_layers, hidden_size, batch_size, learning_rate, epochs, conv_channels)
_DEFAULTS: dict[ModelKind, tuple] = {
    ModelKind.MEAN: (0, 0, 1, 0.0, 0, ()),
    ModelKind.GRU: (1, 100, 16, 0.01, 100, ()),
    ModelKind.LSTM: (1, 100, 16, 0.01, 100, ()),
    ModelKind.GRU_FCN: (4, 20, 16, 0.01, 20, (64, 128, 64)),
    ModelKind.LSTM_FCN: (1, 100, 16, 0.01, 100, (128, 256, 128)),
    ModelKind.INCEPTION_TIME: (0, 0, 128, 0.001, 20, (32,)),
    ModelKind.RESNET: (0, 0, 128, 0.01, 20, (64, 128, 128)),
    ModelKind.RCLSTM: (1, 300, 32, 0.01, 100, ()),
}

DEFAULT_CONNECTIVITY = 0.01
FCN_KERNELS = (8, 5, 3)
INCEPTION_KERNELS = (10, 20, 40)
INCEPTION_DEPTH = 6
INCEPTION_BOTTLENECK = 32


@dataclass(frozen=True)
class ModelSpec:
    """Model kind plus everything needed to build and train it.

    ``conv_channels`` holds the FCN branch widths for the hybrids, the block
    widths for ResNet and the per-branch filter count for InceptionTime.
    """

    kind: ModelKind
    W: int
    H: int
    rnn_layers: int = 0
    hidden_size: int = 0
    conv_channels: tuple[int, ...] = ()
    batch_size: int = 1
    learning_rate: float = 0.0
    epochs: int = 0
    connectivity_p: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        validate_spec(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def validate_spec(spec: ModelSpec) -> None:
    if spec.W <= 0 or spec.H <= 0:
        raise InvalidSpecError("W and H must be positive")
    if spec.kind is ModelKind.MEAN:
        return
    if spec.batch_size <= 0 or spec.epochs < 0 or not spec.learning_rate > 0:
        raise InvalidSpecError(f"{spec.kind.value}: bad optimisation settings")
    if spec.kind in (ModelKind.GRU, ModelKind.LSTM, ModelKind.GRU_FCN, ModelKind.LSTM_FCN, ModelKind.RCLSTM):
        if spec.rnn_layers <= 0 or spec.hidden_size <= 0:
            raise InvalidSpecError(f"{spec.kind.value}: rnn_layers and hidden_size must be positive")
    if spec.kind in (ModelKind.GRU_FCN, ModelKind.LSTM_FCN, ModelKind.RESNET) and len(spec.conv_channels) != 3:
        raise InvalidSpecError(f"{spec.kind.value}: needs three conv channel widths")
    if spec.kind is ModelKind.INCEPTION_TIME and len(spec.conv_channels) != 1:
        raise InvalidSpecError("inception_time: conv_channels holds one filter count")
    if any(c <= 0 for c in spec.conv_channels):
        raise InvalidSpecError("conv channel widths must be positive")
    if spec.kind is ModelKind.RCLSTM and not 0.0 < spec.connectivity_p <= 1.0:
        raise InvalidSpecError("connectivity_p must lie in (0, 1]")


def default_spec(kind: ModelKind | str, W: int, H: int, seed: int = 0, **overrides) -> ModelSpec:
    """Final benchmark hyperparameters for ``kind``, optionally overridden."""
    kind = ModelKind(kind)
    layers, hidden, batch, lr, epochs, channels = _DEFAULTS[kind]
    spec = ModelSpec(
        kind=kind, W=W, H=H, rnn_layers=layers, hidden_size=hidden,
        conv_channels=channels, batch_size=batch, learning_rate=lr, epochs=epochs,
        connectivity_p=DEFAULT_CONNECTIVITY if kind is ModelKind.RCLSTM else 1.0,
        seed=seed,
    )
    return replace(spec, **overrides) if overrides else spec


@dataclass(frozen=True, eq=False)
class MaskSet:
    input_hidden_mask: np.ndarray
    hidden_hidden_mask: np.ndarray
    p: float
    seed: int

    def ones_fraction(self) -> float:
        ones = self.input_hidden_mask.sum() + self.hidden_hidden_mask.sum()
        return float(ones) / (self.input_hidden_mask.size + self.hidden_hidden_mask.size)


def sample_masks(hidden: int, input_dim: int, p: float, seed: int) -> MaskSet:
    """Bernoulli(p) masks shaped like the stacked LSTM gate weights."""
    if not 0.0 < p <= 1.0:
        raise InvalidSpecError(f"connectivity p={p} outside (0, 1]")
    rng = np.random.default_rng(seed)
    ih = rng.random((4 * hidden, input_dim)) < p
    hh = rng.random((4 * hidden, hidden)) < p
    return MaskSet(ih, hh, float(p), int(seed))


def _single_bias(rnn: nn.RNNBase) -> None:
    # one bias per gate: the hidden-side bias stays frozen at zero
    for name, param in rnn.named_parameters():
        if name.startswith("bias_hh"):
            with torch.no_grad():
                param.zero_()
            param.requires_grad_(False)


class RecurrentEncoder(nn.Module):
    """GRU/LSTM stack over the scalar sequence, returning the last hidden state."""

    def __init__(self, cell: str, layers: int, hidden: int, masks: Sequence[MaskSet] | None = None):
        super().__init__()
        rnn_cls = nn.GRU if cell == "gru" else nn.LSTM
        self.rnn = rnn_cls(1, hidden, num_layers=layers, batch_first=True)
        _single_bias(self.rnn)
        self.masked_names: list[str] = []
        if masks is not None:
            for k, m in enumerate(masks):
                for part, arr in (("ih", m.input_hidden_mask), ("hh", m.hidden_hidden_mask)):
                    name = f"weight_{part}_l{k}"
                    mask = torch.as_tensor(arr, dtype=torch.float32)
                    self.register_buffer(f"mask_{part}_l{k}", mask)
                    with torch.no_grad():
                        getattr(self.rnn, name).mul_(mask)
                    self.masked_names.append(name)

    def forward(self, x):
        if self.masked_names:
            weights = {
                name: getattr(self.rnn, name) * getattr(self, "mask_" + name[len("weight_"):])
                for name in self.masked_names
            }
            out, _ = functional_call(self.rnn, weights, (x,))
        else:
            out, _ = self.rnn(x)
        return out[:, -1, :]


class RecurrentNet(nn.Module):
    def __init__(self, encoder: RecurrentEncoder, hidden: int, horizon: int):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Linear(hidden, horizon)

    def forward(self, x):
        return self.head(self.encoder(x.unsqueeze(-1)))


def _conv_bn_relu(c_in: int, c_out: int, k: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv1d(c_in, c_out, k, padding="same"),
        nn.BatchNorm1d(c_out),
        nn.ReLU(),
    )


class FCNBranch(nn.Module):
    def __init__(self, channels: Sequence[int]):
        super().__init__()
        widths = (1, *channels)
        self.blocks = nn.Sequential(
            *[_conv_bn_relu(widths[i], widths[i + 1], FCN_KERNELS[i]) for i in range(3)]
        )

    def forward(self, x):
        return self.blocks(x).mean(dim=-1)


class HybridNet(nn.Module):
    """Parallel recurrent and fully convolutional branches, concatenated."""

    def __init__(self, encoder: RecurrentEncoder, hidden: int, channels: Sequence[int], horizon: int):
        super().__init__()
        self.encoder = encoder
        self.fcn = FCNBranch(channels)
        self.head = nn.Linear(hidden + channels[-1], horizon)

    def forward(self, x):
        rec = self.encoder(x.unsqueeze(-1))
        conv = self.fcn(x.unsqueeze(1))
        return self.head(torch.cat([rec, conv], dim=1))


class InceptionModule(nn.Module):
    def __init__(self, c_in: int, filters: int):
        super().__init__()
        if c_in > 1:
            self.bottleneck = nn.Conv1d(c_in, INCEPTION_BOTTLENECK, 1, bias=False)
            width = INCEPTION_BOTTLENECK
        else:
            self.bottleneck = nn.Identity()
            width = c_in
        self.convs = nn.ModuleList(
            nn.Conv1d(width, filters, k, padding="same", bias=False) for k in INCEPTION_KERNELS
        )
        self.pool = nn.MaxPool1d(3, stride=1, padding=1)
        self.pool_conv = nn.Conv1d(c_in, filters, 1, bias=False)
        self.bn = nn.BatchNorm1d(4 * filters)

    def forward(self, x):
        z = self.bottleneck(x)
        branches = [conv(z) for conv in self.convs]
        branches.append(self.pool_conv(self.pool(x)))
        return torch.relu(self.bn(torch.cat(branches, dim=1)))


class InceptionTimeNet(nn.Module):
    def __init__(self, filters: int, horizon: int, depth: int = INCEPTION_DEPTH):
        super().__init__()
        out = 4 * filters
        self.modules_ = nn.ModuleList(
            InceptionModule(1 if i == 0 else out, filters) for i in range(depth)
        )
        self.shortcuts = nn.ModuleList()
        for i in range(depth // 3):
            c_in = 1 if i == 0 else out
            self.shortcuts.append(nn.Sequential(nn.Conv1d(c_in, out, 1, bias=False), nn.BatchNorm1d(out)))
        self.head = nn.Linear(out, horizon)

    def forward(self, x):
        x = x.unsqueeze(1)
        residual = x
        for i, module in enumerate(self.modules_):
            x = module(x)
            if i % 3 == 2:
                x = torch.relu(x + self.shortcuts[i // 3](residual))
                residual = x
        return self.head(x.mean(dim=-1))


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.body = nn.Sequential(
            _conv_bn_relu(c_in, c_out, 8),
            _conv_bn_relu(c_out, c_out, 5),
            nn.Conv1d(c_out, c_out, 3, padding="same"),
            nn.BatchNorm1d(c_out),
        )
        if c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv1d(c_in, c_out, 1), nn.BatchNorm1d(c_out))
        else:
            self.shortcut = nn.BatchNorm1d(c_out)

    def forward(self, x):
        return torch.relu(self.body(x) + self.shortcut(x))


class ResNetNet(nn.Module):
    def __init__(self, channels: Sequence[int], horizon: int):
        super().__init__()
        widths = (1, *channels)
        self.blocks = nn.Sequential(*[ResidualBlock(widths[i], widths[i + 1]) for i in range(len(channels))])
        self.head = nn.Linear(channels[-1], horizon)

    def forward(self, x):
        return self.head(self.blocks(x.unsqueeze(1)).mean(dim=-1))


class Forecaster:
    """A built model: the spec, its torch module (None for Mean) and RCLSTM masks."""

    def __init__(self, spec: ModelSpec, module: nn.Module | None, masks: list[MaskSet] | None = None):
        self.spec = spec
        self.module = module
        self.masks = masks

    @property
    def trainable(self) -> bool:
        return self.module is not None

    def trainable_parameters(self) -> list[nn.Parameter]:
        if self.module is None:
            return []
        return [p for p in self.module.parameters() if p.requires_grad]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.module is None:
            return x.mean(dim=1, keepdim=True).expand(-1, self.spec.H)
        return self.module(x)

    def predict_batch(self, inputs) -> np.ndarray:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.W:
            raise ValueError(f"expected inputs of shape (n, {self.spec.W}), got {x.shape}")
        if self.module is None:
            return np.repeat(x.mean(axis=1, keepdims=True), self.spec.H, axis=1)
        self.module.eval()
        dtype = next(self.module.parameters()).dtype
        with torch.no_grad():
            out = self.module(torch.as_tensor(x, dtype=dtype))
        return out.double().numpy()

    def predict(self, window) -> np.ndarray:
        x = np.asarray(window, dtype=np.float64)
        if x.shape != (self.spec.W,):
            raise ValueError(f"expected {self.spec.W} input values, got shape {x.shape}")
        return self.predict_batch(x[None, :])[0]


def build(spec: ModelSpec) -> Forecaster:
    """Construct an untrained forecaster; torch init is seeded by ``spec.seed``."""
    validate_spec(spec)
    kind = spec.kind
    if kind is ModelKind.MEAN:
        return Forecaster(spec, None)
    torch.manual_seed(spec.seed)
    masks = None
    if kind in (ModelKind.GRU, ModelKind.LSTM, ModelKind.RCLSTM):
        if kind is ModelKind.RCLSTM:
            masks = [
                sample_masks(spec.hidden_size, 1 if k == 0 else spec.hidden_size, spec.connectivity_p, spec.seed + k)
                for k in range(spec.rnn_layers)
            ]
        cell = "gru" if kind is ModelKind.GRU else "lstm"
        encoder = RecurrentEncoder(cell, spec.rnn_layers, spec.hidden_size, masks)
        module = RecurrentNet(encoder, spec.hidden_size, spec.H)
    elif kind in (ModelKind.GRU_FCN, ModelKind.LSTM_FCN):
        cell = "gru" if kind is ModelKind.GRU_FCN else "lstm"
        encoder = RecurrentEncoder(cell, spec.rnn_layers, spec.hidden_size)
        module = HybridNet(encoder, spec.hidden_size, spec.conv_channels, spec.H)
    elif kind is ModelKind.INCEPTION_TIME:
        module = InceptionTimeNet(spec.conv_channels[0], spec.H)
    elif kind is ModelKind.RESNET:
        module = ResNetNet(spec.conv_channels, spec.H)
    else:  # pragma: no cover
        raise InvalidSpecError(f"unknown kind {kind}")
    return Forecaster(spec, module, masks)


def parameter_count(model: Forecaster) -> int:
    """Trainable scalars; masked-out RCLSTM weights do not count."""
    total = sum(p.numel() for p in model.trainable_parameters())
    for m in model.masks or ():
        total -= int(m.input_hidden_mask.size - m.input_hidden_mask.sum())
        total -= int(m.hidden_hidden_mask.size - m.hidden_hidden_mask.sum())
    return total


def save_checkpoint(model: Forecaster, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "spec": model.spec.to_dict(),
        "state_dict": model.module.state_dict() if model.module is not None else {},
        "masks": [
            {
                "input_hidden": torch.as_tensor(m.input_hidden_mask),
                "hidden_hidden": torch.as_tensor(m.hidden_hidden_mask),
                "p": m.p,
                "seed": m.seed,
            }
            for m in model.masks or ()
        ],
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> Forecaster:
    payload = torch.load(Path(path), weights_only=True)
    spec = ModelSpec.from_dict(payload["spec"])
    model = build(spec)
    if model.module is not None:
        model.module.load_state_dict(payload["state_dict"])
    if payload["masks"]:
        model.masks = [
            MaskSet(m["input_hidden"].numpy(), m["hidden_hidden"].numpy(), m["p"], m["seed"])
            for m in payload["masks"]
        ]
    return model
