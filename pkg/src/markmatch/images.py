"""Grayscale mark images: the atomic unit the encoder compares.

Intensities are float64 in [0, 1] with 0 = ink and 1 = paper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MarkImage:
    """A square grayscale crop of one ballot mark."""

    pixels: np.ndarray  # (height, width), row-major, values in [0, 1]
    mark_id: str = ""
    ballot_id: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValueError(f"pixels must be a non-empty 2-D array, got shape {self.pixels.shape}")
        if not (np.all(self.pixels >= 0.0) and np.all(self.pixels <= 1.0)):
            raise ValueError("pixel intensities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def ink_fraction(self, threshold: float = 0.5) -> float:
        """Fraction of pixels darker than ``threshold``."""
        return float(np.mean(self.pixels < threshold))
