"""Row-stochastic mechanisms over a finite set of cells."""

from __future__ import annotations

import numpy as np

from geopriv.errors import ConfigError
from geopriv.grid import load_matrix_csv, save_matrix_csv

ROW_SUM_TOL = 1e-8


class DiscreteMechanism:
    """Matrix ``k[x, z]``: probability of reporting cell ``z`` from cell ``x``.

    Entries must be non-negative and every row must sum to one within
    ``ROW_SUM_TOL``.  Tiny negative round-off (above -1e-12) is clipped.
    """

    def __init__(self, matrix):
        # No copy for float arrays; large fine-grid matrices are hundreds of MB.
        k = np.asarray(matrix, dtype=float)
        if k.ndim != 2:
            raise ConfigError("mechanism matrix must be 2-D")
        if np.any(k < -1e-12) or not np.all(np.isfinite(k)):
            raise ConfigError("mechanism entries must be finite and non-negative")
        if np.any(k < 0):
            k = np.clip(k, 0.0, None)
        sums = k.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ConfigError(f"mechanism rows must sum to 1 (worst deviation {worst:.3g})")
        self.matrix = k

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n_inputs(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def uniform(cls, n: int, m: int = None) -> "DiscreteMechanism":
        m = n if m is None else m
        return cls(np.full((n, m), 1.0 / m))

    @classmethod
    def identity(cls, n: int) -> "DiscreteMechanism":
        return cls(np.eye(n))

    def to_csv(self, path) -> None:
        save_matrix_csv(path, self.matrix)

    @classmethod
    def from_csv(cls, path) -> "DiscreteMechanism":
        return cls(load_matrix_csv(path))

    def __repr__(self):
        return f"DiscreteMechanism(shape={self.matrix.shape})"


def as_matrix(mech) -> np.ndarray:
    if isinstance(mech, DiscreteMechanism):
        return mech.matrix
    return np.asarray(mech, dtype=float)
