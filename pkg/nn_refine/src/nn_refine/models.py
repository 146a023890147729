"""Network architectures: a 64x64 single-channel U-Net and a patch
discriminator.

U-Net: six 4x4 stride-2 convolution levels down to 1x1 and six back up,
channel widths 64-128-256-512 capped at 512, batch normalization and ReLU
activations, skip connections concatenating encoder features into the
decoder.  The generator used for adversarial training is the same U-Net
with a tanh output head (predictions live in a normalized [-1, 1] range).

Discriminator: 70x70-receptive-field patch classifier on (input, output)
image pairs, sigmoid patch outputs in (0, 1).
"""

from __future__ import annotations

import torch
from torch import nn

UNET_CHANNELS = [64, 128, 256, 512, 512, 512]  # 64 -> 1 spatial, cap 512


class UNet(nn.Module):
    def __init__(self, tanh_output: bool = False):
        super().__init__()
        chans = UNET_CHANNELS
        self.downs = nn.ModuleList()
        prev = 1
        for i, ch in enumerate(chans):
            block = [nn.Conv2d(prev, ch, 4, stride=2, padding=1, bias=(i == 0 or i == len(chans) - 1))]
            # batch normalization except on the outermost and innermost layers
            if i not in (0, len(chans) - 1):
                block.append(nn.BatchNorm2d(ch))
            block.append(nn.ReLU(inplace=True))
            self.downs.append(nn.Sequential(*block))
            prev = ch

        self.ups = nn.ModuleList()
        up_out = chans[-2::-1] + [chans[0]]  # 512,512,256,128,64,64
        prev = chans[-1]
        for i, ch in enumerate(up_out):
            last = i == len(up_out) - 1
            block = [nn.ConvTranspose2d(prev, ch, 4, stride=2, padding=1, bias=last)]
            if not last:
                block.append(nn.BatchNorm2d(ch))
            block.append(nn.ReLU(inplace=True))
            self.ups.append(nn.Sequential(*block))
            prev = ch * 2 if not last else ch  # skip concat doubles channels

        head = [nn.Conv2d(chans[0], 1, 3, padding=1)]
        if tanh_output:
            head.append(nn.Tanh())
        self.head = nn.Sequential(*head)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        out = x
        for down in self.downs:
            out = down(out)
            skips.append(out)
        out = skips.pop()
        for i, up in enumerate(self.ups):
            out = up(out)
            if skips:
                out = torch.cat([out, skips.pop()], dim=1)
        return self.head(out)


class PatchDiscriminator(nn.Module):
    """Judges (input, candidate-output) pairs patch by patch."""

    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(2, 64, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(64, 128, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(128),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(128, 256, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(256),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(256, 512, 4, stride=1, padding=1, bias=False),
            nn.BatchNorm2d(512),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(512, 1, 4, stride=1, padding=1),
            nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([x, y], dim=1))
