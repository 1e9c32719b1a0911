"""Compact keyword classifiers and their checkpoint container."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

N_CLASSES = 35
ARCHITECTURES = ("tc_resnet8", "bc_block_net")
DEFAULT_CHANNELS = {"tc_resnet8": (16, 24, 32, 48), "bc_block_net": (16, 32)}


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "tc_resnet8"
    input_dim: int = 40
    n_frames: int = 98
    channels: tuple = (16, 24, 32, 48)
    n_classes: int = N_CLASSES
    label_smoothing: float = 0.1
    first_kernel: int = 9
    block_kernel: int = 3

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.architecture == "tc_resnet8" and len(self.channels) != 4:
            raise ValueError("tc_resnet8 needs 4 channel counts (stem + 3 blocks)")
        if self.architecture == "bc_block_net" and len(self.channels) != 2:
            raise ValueError("bc_block_net needs 2 channel counts")
        if self.n_classes < 2 or self.input_dim < 1:
            raise ValueError("need n_classes >= 2 and input_dim >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class TCResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 2):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, stride=stride, padding=pad, bias=False)
        self.bn1 = nn.BatchNorm1d(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, padding=pad, bias=False)
        self.bn2 = nn.BatchNorm1d(c_out)
        self.shortcut = nn.Sequential(nn.Conv1d(c_in, c_out, 1, stride=stride, bias=False),
                                      nn.BatchNorm1d(c_out))

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return F.relu(y + self.shortcut(x))


class TCResNet8(nn.Module):
    """Temporal-convolution ResNet: coefficients are input channels, convs run over time.

    Takes ``(N, T, D)`` feature batches and returns ``(N, n_classes)`` logits.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c0, c1, c2, c3 = cfg.channels
        self.cfg = cfg
        self.stem = nn.Conv1d(cfg.input_dim, c0, cfg.first_kernel, padding=cfg.first_kernel // 2, bias=False)
        self.blocks = nn.Sequential(TCResBlock(c0, c1, cfg.block_kernel),
                                    TCResBlock(c1, c2, cfg.block_kernel),
                                    TCResBlock(c2, c3, cfg.block_kernel))
        self.head = nn.Linear(c3, cfg.n_classes)

    def forward(self, x):
        if x.dim() != 3 or x.shape[2] != self.cfg.input_dim:
            raise ValueError(f"expected (N, T, {self.cfg.input_dim}) input, got {tuple(x.shape)}")
        if x.shape[1] < 1:
            raise ValueError("need at least one frame")
        y = self.blocks(self.stem(x.transpose(1, 2)))
        return self.head(y.mean(dim=2))


def bc_residual_block(x, f1, f2):
    """``x + broadcast(f1(freq_mean(f2(x))))`` for ``(C, F, T)`` or ``(N, C, F, T)`` maps."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    if x.shape[2] < 1:
        raise ValueError("frequency axis is empty")
    z = f1(f2(x).mean(dim=2, keepdim=True))
    if z.shape[:2] != x.shape[:2] or z.shape[3] != x.shape[3]:
        raise ValueError(f"branch output {tuple(z.shape)} does not broadcast onto {tuple(x.shape)}")
    y = x + z.expand_as(x)
    return y.squeeze(0) if squeeze else y


class BCResBlock(nn.Module):
    """Broadcasted residual block; identity when its branch parameters are zero."""

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        # replicate padding keeps F-constant inputs F-constant through f2
        self.f2 = nn.Sequential(
            nn.Conv2d(channels, channels, (kernel, 1), padding=(pad, 0), groups=channels,
                      bias=False, padding_mode="replicate"),
            nn.BatchNorm2d(channels),
        )
        self.f1 = nn.Sequential(
            nn.Conv2d(channels, channels, (1, kernel), padding=(0, pad), groups=channels, bias=False),
            nn.BatchNorm2d(channels),
            nn.SiLU(),
            nn.Conv2d(channels, channels, 1),
        )

    def forward(self, x):
        return bc_residual_block(x, self.f1, self.f2)

    def zero_branch_(self):
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self


class BCBlockNet(nn.Module):
    """Small 2D network built from broadcasted residual blocks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2 = cfg.channels
        self.cfg = cfg
        self.stem = nn.Sequential(nn.Conv2d(1, c1, 5, stride=(2, 1), padding=2, bias=False),
                                  nn.BatchNorm2d(c1), nn.ReLU())
        self.stage1 = nn.Sequential(BCResBlock(c1, cfg.block_kernel), BCResBlock(c1, cfg.block_kernel))
        self.transition = nn.Sequential(nn.Conv2d(c1, c2, 1, bias=False), nn.BatchNorm2d(c2), nn.ReLU())
        self.stage2 = nn.Sequential(BCResBlock(c2, cfg.block_kernel), BCResBlock(c2, cfg.block_kernel))
        self.head = nn.Linear(c2, cfg.n_classes)

    def forward(self, x):
        if x.dim() != 3 or x.shape[2] != self.cfg.input_dim:
            raise ValueError(f"expected (N, T, {self.cfg.input_dim}) input, got {tuple(x.shape)}")
        y = self.stem(x.transpose(1, 2).unsqueeze(1))
        y = self.stage1(y)
        y = self.transition(y)
        if y.shape[2] > 1:
            y = F.avg_pool2d(y, (2, 1), ceil_mode=True)
        y = self.stage2(y)
        return self.head(y.mean(dim=(2, 3)))


def build_model(cfg: ModelConfig) -> nn.Module:
    return TCResNet8(cfg) if cfg.architecture == "tc_resnet8" else BCBlockNet(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def zero_parameters_(model: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def _as_batch(features, dtype) -> torch.Tensor:
    v = np.asarray(getattr(features, "values", features))
    if v.ndim == 2:
        v = v[None]
    return torch.as_tensor(v, dtype=dtype)


def logits(model: nn.Module, features) -> np.ndarray:
    """Inference-mode logits for one ``(T, D)`` matrix or a ``(N, T, D)`` batch."""
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(_as_batch(features, dtype))
    return out.double().numpy()


def forward(model: nn.Module, features) -> np.ndarray:
    """Softmax posteriors (a ScoreVector, or one per row for a batch)."""
    z = logits(model, features)
    p = torch.softmax(torch.from_numpy(z), dim=-1).numpy()
    return p[0] if np.asarray(getattr(features, "values", features)).ndim == 2 else p


def smoothed_cross_entropy(logit_batch: torch.Tensor, labels: torch.Tensor,
                           smoothing: float = 0.1) -> torch.Tensor:
    """Mean cross-entropy against ``(1 - s) * onehot + s / K`` targets."""
    k = logit_batch.shape[-1]
    logp = torch.log_softmax(logit_batch, dim=-1)
    target = torch.full_like(logp, smoothing / k)
    target.scatter_add_(-1, labels.view(-1, 1),
                        torch.full((labels.shape[0], 1), 1.0 - smoothing, dtype=logp.dtype))
    return -(target * logp).sum(dim=-1).mean()


# --- checkpoint container ----------------------------------------------------

CKPT_MAGIC = b"VTLKCKPT"
CKPT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")  # magic, version, header length


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    state: dict
    norm_stats: dict | None = None
    provenance: dict = field(default_factory=dict)

    def model(self) -> nn.Module:
        m = build_model(self.config)
        m.load_state_dict(self.state)
        m.eval()
        return m


def save_checkpoint(path, model: nn.Module, config: ModelConfig, norm_stats=None,
                    provenance: dict | None = None) -> None:
    tensors, blobs, offset = [], [], 0
    for name, t in model.state_dict().items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        blob = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob),
                        "torch_dtype": str(t.dtype).replace("torch.", "")})
        blobs.append(blob)
        offset += len(blob)
    if norm_stats is not None and hasattr(norm_stats, "to_dict"):
        norm_stats = norm_stats.to_dict()
    header = {
        "format_version": CKPT_VERSION,
        "model_config": config.to_dict(),
        "tensors": tensors,
        "norm_stats": norm_stats,
        "provenance": provenance or {},
    }
    raw = json.dumps(header).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path) -> ModelCheckpoint:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: not a vtlkws checkpoint")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    base = _PREFIX.size + hlen
    state = {}
    for spec in header["tensors"]:
        arr = np.frombuffer(data, dtype="<f4", count=spec["nbytes"] // 4, offset=base + spec["offset"])
        t = torch.from_numpy(arr.reshape(spec["shape"]).copy())
        state[spec["name"]] = t.to(getattr(torch, spec.get("torch_dtype", "float32")))
    return ModelCheckpoint(ModelConfig.from_dict(header["model_config"]), state,
                           header.get("norm_stats"), header.get("provenance", {}))
