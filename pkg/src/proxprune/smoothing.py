"""Gaussian smoothing of the loss in weight space.

Noise comes in two flavours: ``relative`` scales each element's std by the
magnitude of the weight it perturbs (the pipeline default), ``absolute``
uses one constant std everywhere (the mode the Lipschitz bounds are probed
in). Draws are keyed by (seed, step, draw index), so every consumer that
shares a seed sees identical noise, and each optimization step redraws
fresh vectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradMap
from .params import ParamSet

MODES = ("relative", "absolute")


class SmoothingError(Exception):
    def __init__(self, msg: str, draw_index: int):
        super().__init__(msg)
        self.draw_index = draw_index


@dataclass(frozen=True)
class NoiseSpec:
    """scale: relative factor s (std = s*|w|) or absolute std; m: draw count."""

    scale: float = 0.05
    m: int = 1
    seed: int = 0
    mode: str = "relative"

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("noise scale must be >= 0")
        if self.m < 1:
            raise ValueError("noise sample count m must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"noise mode must be one of {MODES}")
        if self.seed < 0:
            raise ValueError("noise seed must be a non-negative integer")


def sample_noise(
    params: ParamSet, spec: NoiseSpec, draw_index: int, step: int = 0
) -> dict[str, np.ndarray]:
    """One noise draw shaped like params, deterministic in (seed, step, draw).

    In relative mode elements with w == 0 receive exactly zero noise.
    """
    if draw_index >= spec.m:
        raise ValueError(f"draw_index {draw_index} out of range for m={spec.m}")
    rng = np.random.default_rng((spec.seed, step, draw_index))
    out = {}
    for name, w in params:
        z = rng.standard_normal(w.shape)
        if spec.mode == "relative":
            out[name] = z * (spec.scale * np.abs(w))
        else:
            out[name] = z * spec.scale
    return out


def smoothed_loss_and_grad(
    model, params: ParamSet, batch, spec: NoiseSpec, step: int = 0
) -> tuple[GradMap, float]:
    """Monte Carlo smoothed gradient: mean over m noisy gradient evaluations,
    accumulated in ascending draw order. Also returns the mean noisy loss.

    scale == 0 short-circuits to a single exact evaluation, which makes
    (m=1, scale=0) reduce to the plain gradient bit-exactly.
    """
    if spec.scale == 0.0:
        loss, grads = _eval(model, params, batch, draw=0)
        return grads, loss
    sums: GradMap = {}
    losses = []
    for i in range(spec.m):
        noise = sample_noise(params, spec, i, step)
        loss, grads = _eval(model, params.add(noise), batch, draw=i)
        losses.append(loss)
        for name, g in grads.items():
            if name in sums:
                sums[name] = sums[name] + g
            else:
                sums[name] = g.copy()
    mean = {name: g / spec.m for name, g in sums.items()}
    return mean, math.fsum(losses) / spec.m


def _eval(model, params: ParamSet, batch, draw: int):
    try:
        loss, grads = ad.gradient(model.loss, dict(params), batch)
    except ad.NonFiniteError as e:
        raise SmoothingError(f"non-finite gradient in draw {draw}: {e}", draw) from e
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise SmoothingError(f"non-finite gradient for {name!r} in draw {draw}", draw)
    return loss, grads


def smoothed_grad(model, params: ParamSet, batch, spec: NoiseSpec, step: int = 0) -> GradMap:
    """The smoothed-gradient pruning criterion; see smoothed_loss_and_grad."""
    grads, _ = smoothed_loss_and_grad(model, params, batch, spec, step)
    return grads
