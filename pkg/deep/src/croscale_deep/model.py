"""Encoder networks: a fully convolutional map encoder emitting per-pixel
distributions over C categories, and a residual image encoder emitting one
C-way distribution per view. Both end in a softmax.

The "mini" backbones are CPU-trainable; "fcn_resnet50" / "resnet18" build
the torchvision architectures (random init) with the first convolution
adapted to the input channel count.
"""

from __future__ import annotations

import torch
from torch import nn


class MiniFCN(nn.Module):
    """Small dilated FCN: same output height/width as the input."""

    def __init__(self, in_channels: int, num_classes: int, width: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=2, dilation=2),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=4, dilation=4),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(width, num_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.head(self.body(x)), dim=1)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.conv1(x))
        h = self.conv2(h)
        return self.act(x + h)


class MiniResNet(nn.Module):
    """Small residual image encoder with global pooling and a C-way head."""

    def __init__(self, in_channels: int, num_classes: int, width: int = 32):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, width, 5, stride=2, padding=2),
            nn.ReLU(inplace=True),
        )
        self.stage1 = ResidualBlock(width)
        self.down = nn.Sequential(
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.stage2 = ResidualBlock(2 * width)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(2 * width, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stem(x)
        h = self.stage1(h)
        h = self.down(h)
        h = self.stage2(h)
        h = self.pool(h).flatten(1)
        return torch.softmax(self.fc(h), dim=1)


class _SoftmaxFCNWrapper(nn.Module):
    def __init__(self, net: nn.Module):
        super().__init__()
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.net(x)["out"], dim=1)


class _SoftmaxWrapper(nn.Module):
    def __init__(self, net: nn.Module):
        super().__init__()
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.net(x), dim=1)


def build_map_encoder(backbone: str, in_channels: int, num_classes: int) -> nn.Module:
    if backbone == "mini":
        return MiniFCN(in_channels, num_classes)
    if backbone == "fcn_resnet50":
        from torchvision.models.segmentation import fcn_resnet50
        net = fcn_resnet50(weights=None, num_classes=num_classes)
        if in_channels != 3:
            net.backbone.conv1 = nn.Conv2d(in_channels, 64, 7, stride=2,
                                           padding=3, bias=False)
        return _SoftmaxFCNWrapper(net)
    raise ValueError(f"unknown map backbone {backbone!r}")


def build_obs_encoder(backbone: str, in_channels: int, num_classes: int) -> nn.Module:
    if backbone == "mini":
        return MiniResNet(in_channels, num_classes)
    if backbone == "resnet18":
        from torchvision.models import resnet18
        net = resnet18(weights=None, num_classes=num_classes)
        if in_channels != 3:
            net.conv1 = nn.Conv2d(in_channels, 64, 7, stride=2, padding=3,
                                  bias=False)
        return _SoftmaxWrapper(net)
    raise ValueError(f"unknown observation backbone {backbone!r}")
