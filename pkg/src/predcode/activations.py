"""Elementwise activation functions and their analytic derivatives."""

from __future__ import annotations

import enum

import numpy as np


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    LOGISTIC = "logistic"
    RECTIFIER = "rectifier"

    @classmethod
    def parse(cls, value: "Activation | str") -> "Activation":
        if isinstance(value, cls):
            return value
        aliases = {"linear": "identity", "sigmoid": "logistic", "relu": "rectifier"}
        key = str(value).strip().lower()
        return cls(aliases.get(key, key))

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self is Activation.IDENTITY:
            return np.array(z, dtype=float, copy=True)
        if self is Activation.TANH:
            return np.tanh(z)
        if self is Activation.LOGISTIC:
            # split by sign so exp never overflows
            z = np.asarray(z, dtype=float)
            out = np.empty_like(z)
            pos = z >= 0
            out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
            ez = np.exp(z[~pos])
            out[~pos] = ez / (1.0 + ez)
            return out
        return np.maximum(z, 0.0)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        """Derivative evaluated at the pre-activation ``z``.

        The rectifier derivative at the kink ``z == 0`` is taken to be 0.
        """
        z = np.asarray(z, dtype=float)
        if self is Activation.IDENTITY:
            return np.ones_like(z)
        if self is Activation.TANH:
            t = np.tanh(z)
            return 1.0 - t * t
        if self is Activation.LOGISTIC:
            s = self.apply(z)
            return s * (1.0 - s)
        return (z > 0).astype(float)
