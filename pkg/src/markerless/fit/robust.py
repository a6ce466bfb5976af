"""Robust estimators applied to whitened residual norms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("none", "geman_mcclure", "huber")


@dataclass(frozen=True)
class RobustEstimator:
    """``kind`` is one of none, geman_mcclure (scale ``c``) or huber (threshold ``delta``)."""

    kind: str = "none"
    c: float = 5.0
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown robust estimator {self.kind!r}")
        if self.kind == "geman_mcclure" and not self.c > 0:
            raise ValueError("Geman-McClure scale c must be positive")
        if self.kind == "huber" and not self.delta > 0:
            raise ValueError("Huber delta must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "RobustEstimator":
        return cls(**d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": self.c, "delta": self.delta}


def robust(x, est: RobustEstimator):
    """rho(x): x^2, c^2 x^2 / (x^2 + c^2), or Huber with quadratic part x^2 / 2."""
    x = np.asarray(x, dtype=np.float64)
    x2 = x * x
    if est.kind == "none":
        out = x2
    elif est.kind == "geman_mcclure":
        c2 = est.c * est.c
        out = c2 * x2 / (x2 + c2)
    else:
        ax = np.abs(x)
        d = est.delta
        out = np.where(ax <= d, 0.5 * x2, d * (ax - 0.5 * d))
    return out if out.ndim else float(out)


def robust_derivative(x, est: RobustEstimator):
    """d rho / dx."""
    x = np.asarray(x, dtype=np.float64)
    out = x * robust_weight(x, est)
    return out if out.ndim else float(out)


def robust_weight(x, est: RobustEstimator):
    """rho'(x) / x, finite at x = 0. Used to differentiate rho(||r|| / sigma) in r."""
    x = np.asarray(x, dtype=np.float64)
    if est.kind == "none":
        out = np.full_like(x, 2.0)
    elif est.kind == "geman_mcclure":
        c2 = est.c * est.c
        out = 2.0 * c2 * c2 / (x * x + c2) ** 2
    else:
        ax = np.abs(x)
        d = est.delta
        out = np.where(ax <= d, 1.0, d / np.maximum(ax, d))
    return out if out.ndim else float(out)
