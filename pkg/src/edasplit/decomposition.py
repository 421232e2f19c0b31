from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Decomposition:
    """Tonic and phasic traces for one frame.

    Every method in this package defines ``phasic = frame - tonic``, so the
    pair reconstructs the frame up to rounding.
    """

    tonic: np.ndarray
    phasic: np.ndarray
    frame_ref: int = 0
    method: str = ""

    def __post_init__(self):
        tonic = np.asarray(self.tonic, dtype=np.float64)
        phasic = np.asarray(self.phasic, dtype=np.float64)
        if tonic.shape != phasic.shape or tonic.ndim != 1:
            raise DataError(f"tonic/phasic shape mismatch: {tonic.shape} vs {phasic.shape}")
        object.__setattr__(self, "tonic", tonic)
        object.__setattr__(self, "phasic", phasic)

    @classmethod
    def from_tonic(cls, samples, tonic, frame_ref=0, method=""):
        tonic = np.asarray(tonic, dtype=np.float64)
        return cls(tonic, np.asarray(samples, dtype=np.float64) - tonic, frame_ref, method)

    def reconstruct(self) -> np.ndarray:
        return self.tonic + self.phasic
