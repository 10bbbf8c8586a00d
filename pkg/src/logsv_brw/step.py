"""Non-negative step functions on the normalized scale."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepFunction:
    """``f = values[i]`` on ``(edges[i], edges[i+1]]``, zero elsewhere.

    The last edge may be ``inf``; values may be ``inf`` (void functionals).
    """

    edges: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if len(self.values) != len(self.edges) - 1 or e.size < 2:
            raise ValueError("need len(values) == len(edges) - 1 >= 1")
        if not np.isfinite(e[0]):
            raise ValueError("support must be bounded below")
        if np.any(np.diff(e) <= 0):
            raise ValueError("edges must be strictly increasing")
        if any(v < 0 for v in self.values):
            raise ValueError("step values must be non-negative")

    @classmethod
    def indicator(cls, x: float, height: float = 1.0) -> "StepFunction":
        """``height * 1{(x, inf]}``."""
        return cls((float(x), np.inf), (float(height),))

    @property
    def lower(self) -> float:
        return float(self.edges[0])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        e = np.asarray(self.edges, dtype=float)
        vals = np.append(np.asarray(self.values, dtype=float), 0.0)
        idx = np.searchsorted(e, x, side="left") - 1
        idx = np.where((idx < 0) | (idx >= len(self.values)), len(self.values), idx)
        out = vals[idx]
        return float(out) if out.ndim == 0 else out

    def pieces(self):
        return zip(self.edges[:-1], self.edges[1:], self.values)
