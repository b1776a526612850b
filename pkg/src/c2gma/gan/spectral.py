"""Spectral normalisation by power iteration."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

SIGMA_FLOOR = 1e-12


def spectral_norm(weight: torch.Tensor, state: torch.Tensor | None = None, n_iter: int = 1,
                  eps: float = SIGMA_FLOOR):
    """Divide ``weight`` by a power-iteration estimate of its top singular value.

    Conv kernels are flattened to (out_channels, rest). ``state`` is the right
    singular vector estimate (length = number of columns); a random one is drawn
    when it is missing. Returns ``(weight / sigma, new_state)``. Gradients flow
    through ``weight`` only, with the singular vectors treated as constants.
    """
    mat = weight.reshape(weight.shape[0], -1)
    if state is None:
        state = F.normalize(torch.randn(mat.shape[1], dtype=mat.dtype, device=mat.device), dim=0, eps=eps)
    if state.numel() != mat.shape[1]:
        raise ValueError(f"state has {state.numel()} entries, weight has {mat.shape[1]} columns")
    with torch.no_grad():
        v = state.to(mat.dtype)
        for _ in range(n_iter):
            u = F.normalize(mat @ v, dim=0, eps=eps)
            v = F.normalize(mat.t() @ u, dim=0, eps=eps)
        u = F.normalize(mat @ v, dim=0, eps=eps)
    sigma = torch.dot(u, mat @ v).clamp_min(eps)
    return weight / sigma, v


class _SpectralMixin:
    n_power_iterations: int

    def _init_spectral(self, n_power_iterations: int):
        self.n_power_iterations = n_power_iterations
        cols = self.weight[0].numel()
        self.register_buffer("sn_v", F.normalize(torch.randn(cols), dim=0))

    def normalized_weight(self) -> torch.Tensor:
        # power iteration advances only in training mode; eval reuses the stored vector
        n_iter = self.n_power_iterations if self.training else 0
        w, v = spectral_norm(self.weight, self.sn_v, n_iter)
        if self.training:
            self.sn_v.copy_(v)
        return w


class SNConv2d(_SpectralMixin, nn.Conv2d):
    def __init__(self, *args, n_power_iterations: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        self._init_spectral(n_power_iterations)

    def forward(self, x):
        return self._conv_forward(x, self.normalized_weight(), self.bias)


class SNLinear(_SpectralMixin, nn.Linear):
    def __init__(self, *args, n_power_iterations: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        self._init_spectral(n_power_iterations)

    def forward(self, x):
        return F.linear(x, self.normalized_weight(), self.bias)


def top_singular_value(weight: torch.Tensor) -> float:
    """Exact largest singular value (SVD), for verification."""
    mat = weight.detach().reshape(weight.shape[0], -1).double()
    return float(torch.linalg.matrix_norm(mat, ord=2))
