"""Reusable learned blocks: conv block, shared per-element MLP, FC layer.

Normalization is "feature-norm": statistics over the element axis (points,
or spatial positions for images), so batch size 1 works. Running statistics
are tracked for eval mode. Leaky-ReLU slope is 0.1.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch
from .params import Module, Parameter

LEAKY_SLOPE = 0.1
NORM_EPS = 1e-5
NORM_MOMENTUM = 0.1


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    # fan-in scaling with the leaky-ReLU gain
    gain = np.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, name, in_dim, out_dim, rng):
        self.in_dim = in_dim
        self.weight = Parameter(f"{name}.weight", kaiming_uniform(rng, (in_dim, out_dim), in_dim))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatch(x.shape, (self.in_dim,), "linear input")
        return x @ self.weight.tensor + self.bias.tensor


class FeatureNorm(Module):
    """Normalize each channel over all element axes (everything but the last)."""

    def __init__(self, name, dim):
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def named_buffers(self):
        return [(f"{self.name}.running_mean", self, "running_mean"),
                (f"{self.name}.running_var", self, "running_var")]

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        axes = tuple(range(x.data.ndim - 1))
        if train:
            flat = x.reshape(-1, x.shape[-1])
            mu = flat.mean(axis=0, keepdims=True)
            var = ((flat - mu) * (flat - mu)).mean(axis=0, keepdims=True)
            self.running_mean = (
                (1 - NORM_MOMENTUM) * self.running_mean + NORM_MOMENTUM * mu.data[0]
            )
            self.running_var = (1 - NORM_MOMENTUM) * self.running_var + NORM_MOMENTUM * var.data[0]
            xn = (flat - mu) / (var + NORM_EPS).sqrt()
            xn = xn.reshape(*x.shape)
        else:
            xn = (x - Tensor(self.running_mean)) / Tensor(np.sqrt(self.running_var + NORM_EPS))
        del axes
        return xn * self.gamma.tensor + self.beta.tensor


class SharedMlp(Module):
    """Stack of (linear -> feature-norm -> leaky ReLU) applied per element.

    With final_linear=True the last layer skips norm and activation (used
    for logit heads).
    """

    def __init__(self, name, in_dim, dims, rng, final_linear=False):
        self.final_linear = final_linear
        self.layers = []
        self.norms = []
        d = in_dim
        for i, out in enumerate(dims):
            self.layers.append(Linear(f"{name}.lin{i}", d, out, rng))
            last = i == len(dims) - 1
            if not (final_linear and last):
                self.norms.append(FeatureNorm(f"{name}.norm{i}", out))
            d = out
        self.out_dim = d

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < len(self.norms):
                x = self.norms[i](x, train).leaky_relu(LEAKY_SLOPE)
        return x


class ConvBlock(Module):
    """3x3 conv -> feature-norm -> leaky ReLU -> max-pool(stride)."""

    def __init__(self, name, in_ch, out_ch, stride, rng):
        self.stride = tuple(stride)
        self.weight = Parameter(
            f"{name}.weight", kaiming_uniform(rng, (3, 3, in_ch, out_ch), 9 * in_ch)
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_ch))
        self.norm = FeatureNorm(f"{name}.norm", out_ch)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        x = ad.conv2d_3x3(x, self.weight.tensor, self.bias.tensor)
        x = self.norm(x, train).leaky_relu(LEAKY_SLOPE)
        return ad.maxpool2d(x, self.stride)
