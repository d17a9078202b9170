"""Engine-wide constants with the default softening and stepping values."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class EngineConfig:
    """Stepping and constraint-softening parameters.

    Defaults: 0.01 s steps, Baumgarte factor 0.2, 1 mm penetration slop,
    cfm 1e-3, 16 Gauss-Seidel sweeps, 0.1 m/s restitution threshold.
    """

    dt: float = 0.01
    gravity: float = -9.81          # z component; x and y are always 0
    baumgarte: float = 0.2
    slop: float = 1e-3
    cfm: float = 1e-3
    pgs_iterations: int = 16
    restitution_threshold: float = 0.1
    # applications of the multiplicative renormalization per step; 3 holds
    # the 1e-6 orthogonality bound up to |w| ~ 30 rad/s at dt = 0.01
    renorm_iterations: int = 3
    dtype: np.dtype = field(default=np.dtype(np.float64))

    def with_(self, **kw) -> "EngineConfig":
        return replace(self, **kw)


DEFAULT_CONFIG = EngineConfig()
