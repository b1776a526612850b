"""Class-conditional generator and projection discriminator."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .spectral import SNConv2d, SNLinear


class ClassEmbedding(nn.Module):
    """Learned table of class vectors.

    Called with integer class indices it returns the rows; called with soft
    label vectors (N, C) it returns the matching convex combination of rows.
    """

    def __init__(self, n_classes: int, dim: int = 128):
        super().__init__()
        self.n_classes = n_classes
        self.dim = dim
        self.weight = nn.Parameter(torch.randn(n_classes, dim))

    def forward(self, labels: torch.Tensor) -> torch.Tensor:
        if labels.dtype in (torch.int64, torch.int32):
            return self.weight[labels]
        return labels.to(self.weight.dtype) @ self.weight


class ConditionalBatchNorm2d(nn.Module):
    """Batch norm whose scale and shift are affine in the conditioning vector."""

    def __init__(self, channels: int, cond_dim: int):
        super().__init__()
        self.bn = nn.BatchNorm2d(channels, affine=False)
        self.gamma = nn.Linear(cond_dim, channels)
        self.beta = nn.Linear(cond_dim, channels)
        nn.init.normal_(self.gamma.weight, 0.0, 0.02)
        nn.init.ones_(self.gamma.bias)
        nn.init.normal_(self.beta.weight, 0.0, 0.02)
        nn.init.zeros_(self.beta.bias)

    def forward(self, x, cond):
        h = self.bn(x)
        return h * self.gamma(cond)[:, :, None, None] + self.beta(cond)[:, :, None, None]


class _ConvCBN(nn.Module):
    def __init__(self, cin, cout, cond_dim, kernel=3, stride=1, padding=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride, padding)
        self.norm = ConditionalBatchNorm2d(cout, cond_dim)

    def forward(self, x, cond):
        return self.norm(self.conv(x), cond)


class ResidualBlock(nn.Module):
    def __init__(self, channels, cond_dim):
        super().__init__()
        self.a = _ConvCBN(channels, channels, cond_dim)
        self.b = _ConvCBN(channels, channels, cond_dim)

    def forward(self, x, cond):
        return x + self.b(F.relu(self.a(x, cond)), cond)


class ConditionalGenerator(nn.Module):
    """Residual image translator conditioned through every normalisation layer.

    stem -> ``n_down`` strided convs -> ``n_res`` residual blocks -> ``n_down``
    upsample+conv stages -> output conv with a sigmoid, so outputs lie in [0, 1]
    and keep the input's spatial shape for any size. With ``skip`` the output
    conv predicts a correction added to the input's logit, so an untrained
    network starts close to the identity map.
    """

    def __init__(self, width: int = 32, n_res: int = 6, cond_dim: int = 128, n_down: int = 2, skip: bool = False):
        super().__init__()
        self.cond_dim = cond_dim
        self.skip = skip
        self.stem = _ConvCBN(1, width, cond_dim)
        chans = [width * 2 ** i for i in range(n_down + 1)]
        self.down = nn.ModuleList(
            _ConvCBN(chans[i], chans[i + 1], cond_dim, kernel=4, stride=2, padding=1) for i in range(n_down)
        )
        self.res = nn.ModuleList(ResidualBlock(chans[-1], cond_dim) for _ in range(n_res))
        self.up = nn.ModuleList(_ConvCBN(chans[i + 1], chans[i], cond_dim) for i in reversed(range(n_down)))
        self.out = nn.Conv2d(width, 1, 3, 1, 1)

    def forward(self, x, cond):
        h = F.relu(self.stem(x, cond))
        sizes = []
        for layer in self.down:
            sizes.append(h.shape[-2:])
            h = F.relu(layer(h, cond))
        for block in self.res:
            h = block(h, cond)
        for layer, size in zip(self.up, reversed(sizes)):
            h = F.interpolate(h, size=size, mode="nearest")
            h = F.relu(layer(h, cond))
        logits = self.out(h)
        if self.skip:
            logits = logits + torch.logit(x, eps=1e-3)
        return torch.sigmoid(logits)


class ProjectionDiscriminator(nn.Module):
    """Score = psi(phi(x)) + <cond, V phi(x)>.

    phi is a stack of strided, spectrally normalised convs with leaky ReLUs,
    then global sum (or mean) pooling. Every conv but the last is followed by
    instance norm; normalising the last one would zero each channel's spatial
    mean and leave the pooled features nearly constant. Returns one raw
    (pre-sigmoid) score per input.
    """

    def __init__(self, width: int = 32, n_layers: int = 4, cond_dim: int = 128, n_power_iterations: int = 1,
                 pooling: str = "sum"):
        super().__init__()
        if pooling not in ("sum", "mean"):
            raise ValueError(f"pooling must be 'sum' or 'mean', got {pooling!r}")
        self.pooling = pooling
        chans = [1] + [width * 2 ** i for i in range(n_layers)]
        self.convs = nn.ModuleList(
            SNConv2d(chans[i], chans[i + 1], 4, 2, 1, n_power_iterations=n_power_iterations)
            for i in range(n_layers)
        )
        self.norms = nn.ModuleList(nn.InstanceNorm2d(c, affine=True) for c in chans[1:-1])
        self.norms.append(nn.Identity())
        self.psi = SNLinear(chans[-1], 1, n_power_iterations=n_power_iterations)
        self.project = SNLinear(chans[-1], cond_dim, bias=False, n_power_iterations=n_power_iterations)

    def features(self, x):
        h = x
        for conv, norm in zip(self.convs, self.norms):
            h = F.leaky_relu(norm(conv(h)), 0.2)
        return h.sum(dim=(2, 3)) if self.pooling == "sum" else h.mean(dim=(2, 3))

    def forward(self, x, cond):
        phi = self.features(x)
        return self.psi(phi).squeeze(1) + (self.project(phi) * cond).sum(dim=1)
