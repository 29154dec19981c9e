"""Toy-scale dissimilarity network.

Image and reconstruction go through one shared CNN encoder, the semantic
map through a lighter one. At every pyramid level the three feature maps
are fused by a 1x1 convolution and re-weighted by the uncertainty map. The
decoder walks the pyramid coarse to fine, merging each level with the
upsampled coarser result, and normalizes with scale/shift maps predicted
from the semantic map. A 1x1 head yields one anomaly logit per pixel.

Level ``l`` (1-based) has spatial size ``H / 2**l`` and
``base_channels * 2**l`` channels.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

IGNORE_LABEL = 255


class AllPixelsIgnoredWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NetConfig:
    num_levels: int = 3
    base_channels: int = 16
    num_classes: int = 3
    height: int = 64
    width: int = 64
    norm_mode: str = "spatial_aware"

    def __post_init__(self):
        if self.num_levels < 2:
            raise ConfigError(f"num_levels must be >= 2, got {self.num_levels}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.norm_mode not in ("spatial_aware", "plain"):
            raise ConfigError(f"norm_mode must be 'spatial_aware' or 'plain', got {self.norm_mode!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        step = 2**self.num_levels
        if self.height % step or self.width % step:
            raise ConfigError(f"height/width must be divisible by 2**num_levels={step}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DissimOutput:
    logits: torch.Tensor  # N x 1 x H x W
    img_feats: list
    recon_feats: list
    sem_feats: list
    fused: list
    weighted: list
    decoder_features: torch.Tensor  # N x base_channels x H x W

    @property
    def prob(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)

    @property
    def coarsest_fused(self) -> torch.Tensor:
        return self.fused[-1]


def _conv(cin, cout, k=3, stride=1):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2)


class ImageEncoder(nn.Module):
    def __init__(self, cfg: NetConfig, in_channels: int = 3):
        super().__init__()
        blocks, cin = [], in_channels
        for level in range(1, cfg.num_levels + 1):
            c = cfg.channels(level)
            blocks.append(nn.Sequential(_conv(cin, c, stride=2), nn.ReLU(), _conv(c, c), nn.ReLU()))
            cin = c
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats


class SemanticEncoder(nn.Module):
    """Single strided conv per level."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        blocks, cin = [], cfg.num_classes
        for level in range(1, cfg.num_levels + 1):
            c = cfg.channels(level)
            blocks.append(nn.Sequential(_conv(cin, c, stride=2), nn.ReLU()))
            cin = c
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats


class SpatialNorm(nn.Module):
    """Instance normalization with semantic-conditioned or plain affine."""

    def __init__(self, channels: int, num_classes: int, mode: str):
        super().__init__()
        self.mode = mode
        if mode == "spatial_aware":
            self.gamma = nn.Conv2d(num_classes, channels, 1)
            self.beta = nn.Conv2d(num_classes, channels, 1)
        else:
            self.weight = nn.Parameter(torch.ones(channels))
            self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x, sem_onehot):
        normed = F.instance_norm(x, eps=1e-5)
        if self.mode == "spatial_aware":
            seg = F.adaptive_avg_pool2d(sem_onehot, x.shape[-2:])
            return normed * (1 + self.gamma(seg)) + self.beta(seg)
        return normed * self.weight[None, :, None, None] + self.bias[None, :, None, None]


class DissimNet(nn.Module):
    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or NetConfig()
        L = cfg.num_levels
        self.img_encoder = ImageEncoder(cfg)
        self.sem_encoder = SemanticEncoder(cfg)
        self.fuse = nn.ModuleList(nn.Conv2d(3 * cfg.channels(l), cfg.channels(l), 1) for l in range(1, L + 1))
        for conv in self.fuse:
            nn.init.zeros_(conv.bias)
        dec, norms = [], []
        for level in range(L, 0, -1):
            cin = cfg.channels(level) + (cfg.channels(level + 1) if level < L else 0)
            dec.append(_conv(cin, cfg.channels(level)))
            norms.append(SpatialNorm(cfg.channels(level), cfg.num_classes, cfg.norm_mode))
        self.dec_convs = nn.ModuleList(dec)
        self.dec_norms = nn.ModuleList(norms)
        self.final_conv = _conv(cfg.channels(1), cfg.base_channels)
        self.final_norm = SpatialNorm(cfg.base_channels, cfg.num_classes, cfg.norm_mode)
        self.head = nn.Conv2d(cfg.base_channels, 1, 1)

    # -- stages -------------------------------------------------------

    def _check(self, x, channels, name):
        h, w = x.shape[-2:]
        step = 2**self.cfg.num_levels
        if x.dim() != 4 or x.shape[1] != channels or h % step or w % step:
            raise ValueError(
                f"{name}: expected N x {channels} x H x W with H, W divisible by {step}, got {tuple(x.shape)}"
            )

    def encode(self, image, recon, sem_onehot):
        """Return (image, reconstruction, semantic) feature pyramids, fine to coarse."""
        self._check(image, 3, "image")
        self._check(recon, 3, "recon")
        self._check(sem_onehot, self.cfg.num_classes, "semantic")
        if image.shape != recon.shape or image.shape[-2:] != sem_onehot.shape[-2:]:
            raise ValueError(f"shape mismatch: image {tuple(image.shape)}, recon {tuple(recon.shape)}, "
                             f"semantic {tuple(sem_onehot.shape)}")
        n = image.shape[0]
        both = self.img_encoder(torch.cat([image, recon], 0))
        return [f[:n] for f in both], [f[n:] for f in both], self.sem_encoder(sem_onehot)

    def fuse_level(self, f_img, f_recon, f_sem, level: int):
        if not 1 <= level <= self.cfg.num_levels:
            raise ValueError(f"level {level} out of range 1..{self.cfg.num_levels}")
        if not (f_img.shape[-2:] == f_recon.shape[-2:] == f_sem.shape[-2:]):
            raise ValueError("fuse_level inputs must share spatial size")
        return self.fuse[level - 1](torch.cat([f_img, f_recon, f_sem], 1))

    @staticmethod
    def apply_uncertainty(fused, uncertainty):
        """``fused * (1 + u)`` with ``u`` area-averaged to the level resolution."""
        if uncertainty.dim() == 3:
            uncertainty = uncertainty[:, None]
        u = F.adaptive_avg_pool2d(uncertainty, fused.shape[-2:])
        return fused * (1 + u)

    def decode(self, weighted, sem_onehot, out_size=None):
        """Return (logits, penultimate full-resolution features)."""
        L = self.cfg.num_levels
        if len(weighted) != L:
            raise ValueError(f"decode needs a complete pyramid of {L} levels, got {len(weighted)}")
        x = None
        for i, level in enumerate(range(L, 0, -1)):
            w = weighted[level - 1]
            if x is not None:
                x = F.interpolate(x, size=w.shape[-2:], mode="bilinear", align_corners=False)
                w = torch.cat([w, x], 1)
            x = F.relu(self.dec_norms[i](self.dec_convs[i](w), sem_onehot))
        if out_size is None:
            out_size = (x.shape[-2] * 2, x.shape[-1] * 2)
        x = F.interpolate(x, size=out_size, mode="bilinear", align_corners=False)
        feats = F.relu(self.final_norm(self.final_conv(x), sem_onehot))
        return self.head(feats), feats

    def forward(self, image, recon, sem_onehot, uncertainty) -> DissimOutput:
        f_img, f_rec, f_sem = self.encode(image, recon, sem_onehot)
        fused = [self.fuse_level(a, b, c, l + 1) for l, (a, b, c) in enumerate(zip(f_img, f_rec, f_sem))]
        weighted = [self.apply_uncertainty(f, uncertainty) for f in fused]
        logits, feats = self.decode(weighted, sem_onehot, out_size=image.shape[-2:])
        return DissimOutput(logits, f_img, f_rec, f_sem, fused, weighted, feats)


def ce_loss(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over pixels whose label is not 255.

    Ignored pixels contribute neither to the value nor to the gradient. If
    every pixel is ignored the loss is 0 and an ``AllPixelsIgnoredWarning``
    is emitted.
    """
    if logits.dim() == gt.dim() + 1:
        logits = logits.squeeze(1)
    if logits.shape != gt.shape:
        raise ValueError(f"logits {tuple(logits.shape)} and gt {tuple(gt.shape)} differ")
    valid = gt != IGNORE_LABEL
    count = int(valid.sum())
    if count == 0:
        warnings.warn("all pixels carry the ignore label; L_CE defined as 0", AllPixelsIgnoredWarning)
        return (logits * 0).sum()
    x = logits[valid]
    y = gt[valid].to(x.dtype)
    # softplus(x) - y*x == -(y log sigmoid(x) + (1-y) log(1-sigmoid(x)))
    return (F.softplus(x) - y * x).sum() / count


def samples_to_batch(samples, num_classes: int, dtype=torch.float32) -> dict:
    """Stack (already normalized) samples into network input tensors."""
    image = torch.from_numpy(np.stack([s.image for s in samples]).transpose(0, 3, 1, 2).copy()).to(dtype)
    recon = torch.from_numpy(np.stack([s.recon_image for s in samples]).transpose(0, 3, 1, 2).copy()).to(dtype)
    sem = torch.from_numpy(np.stack([s.semantic_map for s in samples]).astype(np.int64))
    if int(sem.max()) >= num_classes:
        raise ValueError(f"semantic class {int(sem.max())} >= num_classes {num_classes}")
    onehot = F.one_hot(sem, num_classes).permute(0, 3, 1, 2).to(dtype)
    unc = torch.from_numpy(np.stack([s.uncertainty_map for s in samples])[:, None].copy()).to(dtype)
    gt = torch.from_numpy(np.stack([s.gt_map for s in samples]).astype(np.int64))
    return {"image": image, "recon": recon, "semantic": onehot, "uncertainty": unc, "gt": gt}
