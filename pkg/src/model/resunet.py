"""
Residual U-Net used by the depth experts and (reduced) by the attention gate.
Two stride-2 downsamples, two nearest-neighbour upsamples, additive skips.
"""

from __future__ import annotations

from src.model.layers import Conv2d, Module, ResBlock
from src.ndarr import ops
from src.ndarr.rng import RngStream
from src.ndarr.tensor import Tensor


class ResUNet(Module):
    def __init__(
        self,
        in_channels: int,
        widths: tuple[int, int, int],
        rng: RngStream,
        out_channels: int = 1,
        sigmoid: bool = True,
    ):
        w0, w1, w2 = widths
        self.enc0 = Conv2d(in_channels, w0, rng.child("enc0"))
        self.res0 = ResBlock(w0, rng.child("res0"))
        self.down1 = Conv2d(w0, w1, rng.child("down1"), stride=2)
        self.res1 = ResBlock(w1, rng.child("res1"))
        self.down2 = Conv2d(w1, w2, rng.child("down2"), stride=2)
        self.res2 = ResBlock(w2, rng.child("res2"))

        self.up1 = Conv2d(w2, w1, rng.child("up1"), kernel_size=1)
        self.dec1 = ResBlock(w1, rng.child("dec1"))
        self.up0 = Conv2d(w1, w0, rng.child("up0"), kernel_size=1)
        self.dec0 = ResBlock(w0, rng.child("dec0"))
        self.out = Conv2d(w0, out_channels, rng.child("out"), kernel_size=1)
        self.sigmoid = sigmoid

    @staticmethod
    def _merge(x: Tensor, skip: Tensor) -> Tensor:
        return ops.crop(ops.upsample_nearest(x, 2), skip.shape[2], skip.shape[3])

    def __call__(self, x: Tensor) -> Tensor:
        s0 = self.res0(ops.relu(self.enc0(x)))
        s1 = self.res1(ops.relu(self.down1(s0)))
        bottom = self.res2(ops.relu(self.down2(s1)))

        d1 = self.dec1(self.up1(self._merge(bottom, s1)) + s1)
        d0 = self.dec0(self.up0(self._merge(d1, s0)) + s0)
        out = self.out(d0)
        return ops.sigmoid(out) if self.sigmoid else out
