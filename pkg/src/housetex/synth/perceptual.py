"""Fixed VGG16-topology feature network and the Gram-statistics loss."""

from __future__ import annotations

import functools
import hashlib

import numpy as np
import torch
from torch import nn

VGG16_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512)
# index of the last ReLU of each stage: relu1_2, relu2_2, relu3_3, relu4_3, relu5_3
STAGE_ENDS = (3, 8, 15, 22, 29)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class PerceptualNet(nn.Module):
    """VGG16 convolutional trunk returning the five post-activation stage outputs.

    ``weights="imagenet"`` loads the torchvision checkpoint from the local torch
    cache (no download). ``weights="fixed"`` draws a deterministic seeded
    initialisation, so every process sees the same network. ``width`` scales
    channel counts; only ``width=1`` can carry ImageNet weights.
    """

    def __init__(self, width: float = 1.0, weights: str = "fixed", seed: int = 0, pool: str = "avg"):
        super().__init__()
        self.width = width
        self.weights = weights
        layers = []
        c = 3
        for v in VGG16_CFG:
            if v == "M":
                layers.append(nn.AvgPool2d(2) if pool == "avg" else nn.MaxPool2d(2))
            else:
                out = max(4, int(round(v * width)))
                layers += [nn.Conv2d(c, out, 3, padding=1), nn.ReLU(inplace=False)]
                c = out
        self.features = nn.Sequential(*layers)
        if weights == "imagenet":
            self._load_imagenet()
        elif weights == "fixed":
            gen = torch.Generator().manual_seed(seed)
            with torch.no_grad():
                for m in self.features:
                    if isinstance(m, nn.Conv2d):
                        fan_in = m.in_channels * 9
                        m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * np.sqrt(2.0 / fan_in))
                        m.bias.zero_()
        else:
            raise ValueError(f"unknown perceptual weights {weights!r}")
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def _load_imagenet(self):
        from torchvision.models import VGG16_Weights, vgg16

        if self.width != 1.0:
            raise ValueError("ImageNet weights require width=1.0")
        try:
            state = VGG16_Weights.IMAGENET1K_V1.get_state_dict(progress=False, check_hash=False)
        except Exception as e:  # noqa: BLE001
            raise RuntimeError(f"ImageNet VGG16 weights unavailable: {e}") from e
        ref = vgg16()
        ref.load_state_dict(state)
        convs = [m for m in ref.features if isinstance(m, nn.Conv2d)]
        mine = [m for m in self.features if isinstance(m, nn.Conv2d)]
        for a, b in zip(mine, convs):
            a.load_state_dict(b.state_dict())

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = (x - self.mean) / self.std
        feats = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in STAGE_ENDS:
                feats.append(x)
        return feats

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()[:16]


@functools.lru_cache(maxsize=8)
def perceptual_net(width: float = 0.25, weights: str = "fixed", seed: int = 0) -> PerceptualNet:
    return PerceptualNet(width=width, weights=weights, seed=seed)


def gram(feat: torch.Tensor) -> torch.Tensor:
    """Gram matrix per sample, normalised by C*H*W."""
    b, c, h, w = feat.shape
    f = feat.reshape(b, c, h * w)
    return f @ f.transpose(1, 2) / (c * h * w)


def gram_stats(net: PerceptualNet, images: torch.Tensor) -> list[torch.Tensor]:
    """Gram matrices of the normalised input followed by the five stage outputs.

    The input-level Gram carries mean colour and colour covariance, which
    fixed random weights alone describe poorly.
    """
    x = (images - net.mean) / net.std
    return [gram(x)] + [gram(f) for f in net(images)]


def gram_distance(ga: list[torch.Tensor], gb: list[torch.Tensor]) -> torch.Tensor:
    """Per-sample sum over layers of squared Frobenius distance."""
    return sum(((a - b) ** 2).sum(dim=(1, 2)) for a, b in zip(ga, gb))


def to_tensor(image) -> torch.Tensor:
    """HxWx3 array or 3xHxW / Bx3xHxW tensor to a float Bx3xHxW tensor."""
    if isinstance(image, torch.Tensor):
        t = image.float()
        return t[None] if t.dim() == 3 else t
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(arr.transpose(0, 3, 1, 2).copy())


def vgg_statistics_loss(a, b, net: PerceptualNet | None = None) -> float:
    """Sum over the input and the five stages of the squared Frobenius distance
    between normalised Gram matrices of ``a`` and ``b`` (same-sized RGB images)."""
    net = net or perceptual_net()
    ta, tb = to_tensor(a), to_tensor(b)
    if ta.shape[-2:] != tb.shape[-2:]:
        raise ValueError(f"image sizes differ: {tuple(ta.shape[-2:])} vs {tuple(tb.shape[-2:])}")
    with torch.no_grad():
        d = gram_distance(gram_stats(net, ta), gram_stats(net, tb))
    return float(d.sum())
