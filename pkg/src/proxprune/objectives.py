"""Synthetic scalar objectives with known proximal maps.

These behave like zoo models (a ``loss(params, batch)`` method over the
single parameter "w") so the full optimization pipeline can run on
functions whose envelopes are available in closed form. The batch argument
is ignored.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .params import ParamSet


def wrap(w: np.ndarray) -> ParamSet:
    return ParamSet([("w", np.atleast_1d(np.asarray(w, dtype=np.float64)))])


class Quadratic:
    """g(w) = 0.5 * ||w||^2."""

    kind = "quadratic"

    def loss(self, p, batch):
        w = p["w"]
        return ad.multiply(ad.sum_all(ad.multiply(w, w)), 0.5)


class Linear:
    """g(w) = u . w for a fixed coefficient vector u."""

    kind = "linear"

    def __init__(self, u):
        self.u = np.atleast_1d(np.asarray(u, dtype=np.float64))

    def loss(self, p, batch):
        return ad.sum_all(ad.multiply(p["w"], self.u))


class ScaledAbs:
    """g(w) = beta * ||w||_1, built as beta * sum(relu(w) + relu(-w))."""

    kind = "scaled-abs"

    def __init__(self, beta: float = 1.0):
        self.beta = float(beta)

    def loss(self, p, batch):
        w = p["w"]
        absval = ad.add(ad.relu(w), ad.relu(ad.multiply(w, -1.0)))
        return ad.multiply(ad.sum_all(absval), self.beta)
