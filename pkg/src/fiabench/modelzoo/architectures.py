"""Small CNN architectures that expose named feature taps.

Every network is a :class:`TappedNet`: an ordered list of blocks whose outputs
are addressable as ``block1 ... blockB``, followed by a classification head.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Sequence

import torch
from torch import nn
from torch.nn import functional as F

from ..exceptions import ContractViolationError, TapLookupError


class TappedNet(nn.Module):
    """Sequential network with named intermediate outputs.

    Parameters
    ----------
    blocks : sequence of nn.Module
        Feature blocks. The output of ``blocks[i]`` is exposed as tap
        ``tap_names[i]``.
    head : nn.Module
        Maps the last block output to logits.
    input_scale : float
        Inputs are multiplied by this before the first block (``1/255`` maps
        pixel space to ``[0, 1]``).
    """

    def __init__(self, blocks: Sequence[nn.Module], head: nn.Module, input_scale=1.0 / 255.0,
                 tap_names: Sequence[str] | None = None):
        super().__init__()
        self.blocks = nn.ModuleList(blocks)
        self.head = head
        self.input_scale = float(input_scale)
        if tap_names is None:
            tap_names = [f"block{i + 1}" for i in range(len(self.blocks))]
        if len(tap_names) != len(self.blocks) or len(set(tap_names)) != len(tap_names):
            raise ContractViolationError("tap names must be unique, one per block")
        self.tap_names: List[str] = list(tap_names)

    def tap_index(self, tap):
        try:
            return self.tap_names.index(tap)
        except ValueError:
            raise TapLookupError(f"unknown tap {tap!r}; available: {self.tap_names}") from None

    def features(self, x, tap):
        stop = self.tap_index(tap)
        h = x * self.input_scale
        for block in self.blocks[: stop + 1]:
            h = block(h)
        return h

    def head_from(self, features, tap):
        """Logits computed from the output of ``tap`` onwards."""
        h = features
        for block in self.blocks[self.tap_index(tap) + 1:]:
            h = block(h)
        return self.head(h)

    def forward(self, x):
        h = x * self.input_scale
        for block in self.blocks:
            h = block(h)
        return self.head(h)


def _conv(cin, cout, k=3, stride=1, bn=False):
    layers = [nn.Conv2d(cin, cout, k, stride, padding=k // 2)]
    if bn:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.ReLU())
    return layers


class ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride == 1 and cin == cout:
            self.shortcut = nn.Identity()
        else:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def _flat_size(blocks, in_channels, image_size):
    with torch.no_grad():
        h = torch.zeros(1, in_channels, image_size, image_size)
        for b in blocks:
            h = b(h)
    return h[0].numel()


def _vgg(in_channels, num_classes, image_size):
    blocks = [
        nn.Sequential(*_conv(in_channels, 32), *_conv(32, 32), nn.MaxPool2d(2)),
        nn.Sequential(*_conv(32, 64), *_conv(64, 64), nn.MaxPool2d(2)),
        nn.Sequential(*_conv(64, 128), nn.MaxPool2d(2)),
    ]
    head = nn.Sequential(nn.Flatten(), nn.Linear(_flat_size(blocks, in_channels, image_size), num_classes))
    return TappedNet(blocks, head)


def _resnet(in_channels, num_classes, image_size):
    blocks = [
        nn.Sequential(*_conv(in_channels, 32, bn=True)),
        ResidualBlock(32, 32),
        ResidualBlock(32, 64, stride=2),
        ResidualBlock(64, 64, stride=2),
    ]
    head = nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(64, num_classes))
    return TappedNet(blocks, head)


def _wide(in_channels, num_classes, image_size):
    blocks = [
        nn.Sequential(*_conv(in_channels, 64, 5), nn.MaxPool2d(2)),
        nn.Sequential(*_conv(64, 128, 5), nn.MaxPool2d(2)),
    ]
    flat = _flat_size(blocks, in_channels, image_size)
    blocks.append(nn.Sequential(nn.Flatten(), nn.Linear(flat, 256), nn.ReLU()))
    return TappedNet(blocks, nn.Linear(256, num_classes))


def _allconv(in_channels, num_classes, image_size):
    blocks = [
        nn.Sequential(*_conv(in_channels, 32, 3, 2)),
        nn.Sequential(*_conv(32, 64, 3, 2)),
        nn.Sequential(*_conv(64, 64, 3, 2)),
    ]
    head = nn.Sequential(nn.Flatten(), nn.Linear(_flat_size(blocks, in_channels, image_size), num_classes))
    return TappedNet(blocks, head)


def _lenet(in_channels, num_classes, image_size):
    blocks = [
        nn.Sequential(nn.Conv2d(in_channels, 6, 5, padding=2), nn.ReLU(), nn.MaxPool2d(2)),
        # small inputs (e.g. 8x8 digits) keep their size through the second conv
        nn.Sequential(nn.Conv2d(6, 16, 5, padding=0 if image_size >= 20 else 2), nn.ReLU(), nn.MaxPool2d(2)),
    ]
    flat = _flat_size(blocks, in_channels, image_size)
    blocks.append(nn.Sequential(nn.Flatten(), nn.Linear(flat, 120), nn.ReLU(), nn.Linear(120, 84), nn.ReLU()))
    return TappedNet(blocks, nn.Linear(84, num_classes))


ARCHITECTURES: Dict[str, Callable[[int, int, int], TappedNet]] = {
    "vgg": _vgg,
    "resnet": _resnet,
    "wide": _wide,
    "allconv": _allconv,
    "lenet": _lenet,
}


def build_architecture(arch_id, in_channels=1, num_classes=10, image_size=28):
    try:
        factory = ARCHITECTURES[arch_id]
    except KeyError:
        raise TapLookupError(f"unknown architecture {arch_id!r}; known: {sorted(ARCHITECTURES)}") from None
    return factory(in_channels, num_classes, image_size)


def default_tap(tap_names):
    """Middle entry of the ordered tap list."""
    return tap_names[(len(tap_names) - 1) // 2]
