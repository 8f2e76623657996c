"""Built-in test objectives.

Cheap deterministic functions used by the CLI `run` command and the examples.
"""

from __future__ import annotations

import numpy as np

# Smooth 2-d function on [0.2, 5.2] x [0, 5] mimicking a safety-assessment
# response: one pronounced bump crossing the 0.92 threshold near the low corner
# plus a gentle tilt, so the below-threshold (safe) region covers most of the
# box and the above-threshold island is compact.
BUMP2D_BOX = np.array([[0.2, 5.2], [0.0, 5.0]])
BUMP2D_THRESHOLD = 0.92


def bump2d(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u, v = x[:, 0], x[:, 1]
    hump = np.exp(-(((u - 1.2) / 1.3) ** 2) - (((v - 1.1) / 1.6) ** 2))
    return 0.44 + 0.76 * hump + 0.012 * (u - 0.2) / 5.0 - 0.008 * v / 5.0


def sine_valley(x: np.ndarray) -> np.ndarray:
    """Oscillatory d-dimensional function on the unit cube, excursions above ~0.6."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.sin(3.0 * np.pi * x[:, 0]) * np.prod(np.cos(np.pi * (x[:, 1:] - 0.5)), axis=1)


OBJECTIVES = {
    "bump2d": (bump2d, BUMP2D_BOX, BUMP2D_THRESHOLD, "below"),
    "sine_valley": (sine_valley, np.array([[0.0, 1.0], [0.0, 1.0]]), 0.6, "above"),
}
