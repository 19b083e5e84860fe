"""Synthetic desk-scale layers with channel disparity and column outliers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from skim.calibration import CalibSample


@dataclass(frozen=True)
class OutlierSpec:
    count: int = 4
    scale: float = 100.0

    @classmethod
    def parse(cls, text: str | None) -> "OutlierSpec | None":
        """``"4x100"`` -> 4 columns scaled by 100; ``"none"`` -> None."""
        if text is None or text.lower() in ("", "none", "0"):
            return None
        count, _, scale = text.lower().partition("x")
        return cls(int(count), float(scale) if scale else 100.0)


def generate_fixture(seed: int, n: int, m: int, k: int = 32, num_samples: int = 4,
                     outliers: OutlierSpec | None = None, row_sigma: float = 1.0):
    """Random layer ``W`` (n x m) plus ``num_samples`` calibration samples.

    Row scales are log-normal with shape ``row_sigma``; ``outliers`` multiplies
    a few randomly chosen columns.  Fully determined by ``seed``.
    """
    rng = np.random.default_rng(seed)
    row_scale = rng.lognormal(0.0, row_sigma, size=n)
    W = rng.standard_normal((n, m)) * row_scale[:, None]
    if outliers is not None and outliers.count > 0:
        cols = np.sort(rng.choice(m, size=min(outliers.count, m), replace=False))
        W[:, cols] *= outliers.scale
    samples = [
        CalibSample(rng.standard_normal((m, k)), rng.standard_normal((n, k)))
        for _ in range(num_samples)
    ]
    return W, samples

