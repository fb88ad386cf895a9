"""Normalisation and activation layers used in the encoder stem.

Statistics are computed explicitly (biased variances) so that every
estimator is visible; gradients come from autograd.
"""
from __future__ import annotations

import torch
from torch import nn

EPS = 1e-5
MOMENTUM = 0.1


def _instance_stats(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = ((x - mean) ** 2).mean(dim=(2, 3), keepdim=True)
    return mean, var


def _batch_stats(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    mean = x.mean(dim=(0, 2, 3), keepdim=True)
    var = ((x - mean) ** 2).mean(dim=(0, 2, 3), keepdim=True)
    return mean, var


def _layer_stats(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    mean = x.mean(dim=(1, 2, 3), keepdim=True)
    var = ((x - mean) ** 2).mean(dim=(1, 2, 3), keepdim=True)
    return mean, var


class _RunningStats(nn.Module):
    """Per-channel running mean/variance with exponential momentum."""

    def __init__(self, channels: int, momentum: float = MOMENTUM, eps: float = EPS):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))
        self.register_buffer("num_batches_tracked", torch.tensor(0, dtype=torch.long))

    @torch.no_grad()
    def _track(self, mean: torch.Tensor, var: torch.Tensor, count: int) -> None:
        unbiased = var.flatten() * count / max(count - 1, 1)
        self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean.flatten())
        self.running_var.mul_(1 - self.momentum).add_(self.momentum * unbiased)
        self.num_batches_tracked += 1

    def _running(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.running_mean.view(1, -1, 1, 1), self.running_var.view(1, -1, 1, 1)


class BatchNorm(_RunningStats):
    def __init__(self, channels: int, momentum: float = MOMENTUM, eps: float = EPS):
        super().__init__(channels, momentum, eps)
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training:
            mean, var = _batch_stats(x)
            self._track(mean, var, x.shape[0] * x.shape[2] * x.shape[3])
        else:
            mean, var = self._running()
        y = (x - mean) / torch.sqrt(var + self.eps)
        return y * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class InstanceNorm(nn.Module):
    """Per-sample, per-channel normalisation; no running statistics."""

    def __init__(self, channels: int, eps: float = EPS):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean, var = _instance_stats(x)
        y = (x - mean) / torch.sqrt(var + self.eps)
        return y * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class IBN(nn.Module):
    """Instance norm on the first ``floor(channels * ratio)`` channels, batch norm on the rest."""

    def __init__(self, channels: int, ratio: float = 0.5, momentum: float = MOMENTUM, eps: float = EPS):
        super().__init__()
        if not 0 < ratio < 1:
            raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
        half = int(channels * ratio)
        if half < 1 or channels - half < 1:
            raise ValueError(f"cannot split {channels} channels with ratio {ratio}")
        self.channels = channels
        self.half = half
        self.IN = InstanceNorm(half, eps)
        self.BN = BatchNorm(channels - half, momentum, eps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"IBN expects {self.channels} channels, got {x.shape[1]}")
        first, second = torch.split(x, [self.half, self.channels - self.half], dim=1)
        return torch.cat([self.IN(first), self.BN(second)], dim=1)


class SwitchNorm(_RunningStats):
    """Switchable normalisation over instance, layer and batch statistics.

    Means and variances are mixed with separate softmax weights. Layer and
    batch variances are the exact variances over their pooled axes, so they
    include the spread of the per-instance means.
    """

    def __init__(self, channels: int, momentum: float = MOMENTUM, eps: float = EPS):
        super().__init__(channels, momentum, eps)
        self.channels = channels
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        # order: instance, layer, batch
        self.mean_logits = nn.Parameter(torch.ones(3))
        self.var_logits = nn.Parameter(torch.ones(3))

    def mixture_weights(self) -> tuple[torch.Tensor, torch.Tensor]:
        return torch.softmax(self.mean_logits, 0), torch.softmax(self.var_logits, 0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"SwitchNorm expects {self.channels} channels, got {x.shape[1]}")
        mean_in, var_in = _instance_stats(x)
        mean_ln, var_ln = _layer_stats(x)
        if self.training:
            mean_bn, var_bn = _batch_stats(x)
            self._track(mean_bn, var_bn, x.shape[0] * x.shape[2] * x.shape[3])
        else:
            mean_bn, var_bn = self._running()
        wm, wv = self.mixture_weights()
        mean = wm[0] * mean_in + wm[1] * mean_ln + wm[2] * mean_bn
        var = wv[0] * var_in + wv[1] * var_ln + wv[2] * var_bn
        y = (x - mean) / torch.sqrt(var + self.eps)
        return y * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class PReLU(nn.Module):
    """Rectifier with a learnable negative slope per channel (dim 1)."""

    def __init__(self, channels: int, init: float = 0.25):
        super().__init__()
        self.weight = nn.Parameter(torch.full((channels,), float(init)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.weight.numel():
            raise ValueError(f"PReLU expects {self.weight.numel()} channels, got {x.shape[1]}")
        shape = [1, -1] + [1] * (x.dim() - 2)
        return torch.where(x > 0, x, self.weight.view(shape) * x)
