"""Encoder-decoder with skip connections for per-pixel binary output."""

import torch
import torch.nn as nn


def _double_conv(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """depth downsampling stages; channels double per stage from base_channels.

    depth=3, base=32 gives encoder channels 32/64/128 with a 256-channel
    bottleneck and a mirrored decoder. Input spatial dims must be divisible
    by 2**depth. Output is a single logit map.
    """

    def __init__(self, base_channels: int = 32, depth: int = 3):
        super().__init__()
        self.depth = depth
        chans = [base_channels * (2 ** i) for i in range(depth + 1)]
        self.enc = nn.ModuleList()
        c_prev = 1
        for c in chans[:-1]:
            self.enc.append(_double_conv(c_prev, c))
            c_prev = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(chans[-2], chans[-1])
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for c_hi, c_lo in zip(chans[:0:-1], chans[-2::-1]):
            self.up.append(nn.ConvTranspose2d(c_hi, c_lo, 2, stride=2))
            self.dec.append(_double_conv(2 * c_lo, c_lo))
        self.head = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x):
        if x.shape[-1] % (2 ** self.depth) or x.shape[-2] % (2 ** self.depth):
            raise ValueError(
                f"input dims {tuple(x.shape[-2:])} not divisible by "
                f"2**{self.depth}")
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        return self.head(x)
