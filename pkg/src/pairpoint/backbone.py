"""Encoder-decoder network producing a full-resolution logit heatmap plus the
encoder feature pyramid used for hyper-column descriptors."""

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .descriptor import HyperColumnHead
from .errors import CheckpointCorrupt, CheckpointIncompatible, ShapeError

FORMAT_VERSION = 1
_MAGIC = b"PPCKPT\x00\x01"


@dataclass(frozen=True)
class BackboneConfig:
    preset: str = "tiny"
    encoder_channels: tuple = (16, 32, 64, 128)
    encoder_strides: tuple = (1, 2, 4, 8)
    convs_per_stage: tuple = (1, 1, 2, 2)
    decoder_blocks_per_stage: int = 2
    refiner_kernel: int = 3
    descriptor_dim: int = 128
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "encoder_strides", tuple(self.encoder_strides))
        object.__setattr__(self, "convs_per_stage", tuple(self.convs_per_stage))
        n = len(self.encoder_channels)
        if len(self.encoder_strides) != n or len(self.convs_per_stage) != n:
            raise ValueError("encoder channel, stride and conv lists must have equal length")
        if any(b <= a for a, b in zip(self.encoder_strides, self.encoder_strides[1:])):
            raise ValueError("encoder strides must be strictly increasing")
        if self.encoder_strides[0] != 1 or any(b != 2 * a for a, b in zip(self.encoder_strides, self.encoder_strides[1:])):
            raise ValueError("encoder strides must start at 1 and double per stage")

    @classmethod
    def from_preset(cls, name, **overrides):
        if name == "tiny":
            base = dict(preset="tiny")
        elif name == "paper":
            # VGG-19 blocks up to stride 8, 8 depthwise refiners per scale, d = 256
            base = dict(preset="paper", encoder_channels=(64, 128, 256, 512), encoder_strides=(1, 2, 4, 8),
                        convs_per_stage=(2, 2, 4, 4), decoder_blocks_per_stage=8, descriptor_dim=256)
        else:
            raise ValueError(f"unknown backbone preset {name!r}")
        base.update(overrides)
        return cls(**base)

    @property
    def hypercolumn_dim(self):
        return sum(self.encoder_channels)

    @property
    def max_stride(self):
        return self.encoder_strides[-1]

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def group_norm(channels):
    # per-sample statistics keep micro-batch accumulation exactly equivalent to a full batch
    return nn.GroupNorm(min(8, channels), channels)


class RefinerBlock(nn.Module):
    """Depthwise k x k conv, group norm, ReLU, pointwise conv; residual."""

    def __init__(self, channels, kernel):
        super().__init__()
        self.dw = nn.Conv2d(channels, channels, kernel, padding=kernel // 2, groups=channels,
                            padding_mode="replicate")
        self.norm = group_norm(channels)
        self.pw = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        return x + self.pw(F.relu(self.norm(self.dw(x))))


class Backbone(nn.Module):
    """VGG-style encoder with max-pool downsampling and a U-shaped decoder.

    Replicate padding plus nearest upsampling make a constant image produce an
    exactly constant heatmap, which strict NMS then rejects entirely.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.encoder_channels
        stages = []
        c_in = cfg.in_channels
        for c, n in zip(chans, cfg.convs_per_stage):
            layers = []
            for _ in range(n):
                layers += [nn.Conv2d(c_in, c, 3, padding=1, padding_mode="replicate"), nn.ReLU(inplace=True)]
                c_in = c
            stages.append(nn.Sequential(*layers))
        self.encoder = nn.ModuleList(stages)
        # decoder runs deepest -> shallowest with one additive skip per stage; channels are
        # reduced before upsampling so no 1x1 conv runs on the wider full-resolution tensor
        self.reduce = nn.ModuleList([nn.Conv2d(chans[i + 1], chans[i], 1) for i in range(len(chans) - 1)])
        self.refiners = nn.ModuleList(
            [nn.Sequential(*[RefinerBlock(c, cfg.refiner_kernel) for _ in range(cfg.decoder_blocks_per_stage)])
             for c in chans]
        )
        # without this the logit scale is unbounded and REINFORCE inflates it until
        # every cell is retained and the heatmap degenerates into a smooth ramp
        self.logit_norm = group_norm(chans[0])
        self.to_logits = nn.Conv2d(chans[0], 1, 1)

    def encode(self, image):
        feats = []
        x = image.contiguous(memory_format=torch.channels_last)  # faster CPU convolutions
        for i, stage in enumerate(self.encoder):
            if i > 0:
                x = F.max_pool2d(x, 2)
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, image):
        """``image`` (B, c, h, w) -> heatmap (B, h, w), pyramid [(B, c_l, h/s_l, w/s_l)]."""
        h, w = image.shape[-2:]
        s = self.cfg.max_stride
        if h % s or w % s:
            raise ShapeError(f"input {h}x{w} is not divisible by the largest stride {s}")
        feats = self.encode(image)
        x = self.refiners[-1](feats[-1])
        for i in range(len(feats) - 2, -1, -1):
            x = F.interpolate(self.reduce[i](x), size=feats[i].shape[-2:], mode="nearest")
            x = self.refiners[i](x + feats[i])
        return self.to_logits(self.logit_norm(x))[:, 0], feats


class KeypointNet(nn.Module):
    """Backbone plus the 1x1 hyper-column projection."""

    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        self.cfg = cfg or BackboneConfig()
        self.backbone = Backbone(self.cfg)
        self.head = HyperColumnHead(self.cfg.hypercolumn_dim, self.cfg.descriptor_dim)

    def forward(self, image):
        return self.backbone(image)

    def describe(self, pyramid, positions):
        """Descriptors ``(K, d)`` for one image's pyramid (levels of shape (c, h', w'))."""
        return self.head(pyramid, positions, self.cfg.encoder_strides)

    def describe_batch(self, pyramid, positions):
        """Descriptors for every image of a batched pyramid; ``positions`` has one entry per image."""
        return self.head.forward_batch(pyramid, positions, self.cfg.encoder_strides)

    def load_encoder_weights(self, state_dict):
        """Hook for pretrained encoder initialisation (``encoder.*`` keys)."""
        self.backbone.encoder.load_state_dict(state_dict)


def build_model(preset="tiny", seed=0, **overrides):
    torch.manual_seed(seed)
    return KeypointNet(BackboneConfig.from_preset(preset, **overrides))


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path, model, extra=None):
    """Versioned container: magic, format version, config hash, parameters, extras."""
    from .io import atomic_path

    payload = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "config_hash": model.cfg.digest(),
        "params": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    body = buf.getvalue()
    header = _MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(body)) + model.cfg.digest().encode()
    with atomic_path(path) as tmp:
        tmp.write_bytes(header + body)


def read_checkpoint(path):
    raw = open(path, "rb").read()
    n = len(_MAGIC)
    if raw[:n] != _MAGIC or len(raw) < n + 12 + 64:
        raise CheckpointCorrupt(f"{path}: bad header")
    version, size = struct.unpack("<IQ", raw[n:n + 12])
    if version != FORMAT_VERSION:
        raise CheckpointCorrupt(f"{path}: unsupported format version {version}")
    digest = raw[n + 12:n + 76].decode("ascii", errors="replace")
    body = raw[n + 76:]
    if len(body) != size:
        raise CheckpointCorrupt(f"{path}: truncated payload")
    try:
        payload = torch.load(io.BytesIO(body), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointCorrupt(f"{path}: {exc}") from exc
    if payload.get("config_hash") != digest:
        raise CheckpointCorrupt(f"{path}: header hash does not match payload")
    return payload


def load_checkpoint(path, model=None):
    """Load parameters into ``model`` (or a fresh model built from the stored config).

    Returns ``(model, extra)``.
    """
    payload = read_checkpoint(path)
    cfg = BackboneConfig(**payload["config"])
    if model is None:
        model = KeypointNet(cfg)
    elif model.cfg.digest() != payload["config_hash"]:
        raise CheckpointIncompatible("checkpoint was written for a different backbone configuration")
    dtype = next(model.parameters()).dtype
    model.load_state_dict({k: v.to(dtype) for k, v in payload["params"].items()})
    return model, payload["extra"]
