"""Binary time-frequency masks and energy-dominance training labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .clustering import ClusterAssignment
from .errors import ParameterError
from .tfr import Spectrogram, write_pgm


@dataclass
class BinaryMask:
    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2:
            raise ParameterError(f"mask must be 2-D, got shape {cells.shape}")
        if not np.all((cells == 0) | (cells == 1)):
            raise ParameterError("mask values must be 0 or 1")
        self.cells = cells.astype(np.uint8)

    @property
    def shape(self):
        return self.cells.shape

    def to_pgm(self, path):
        # frequency on the vertical axis, low bins at the bottom
        write_pgm(path, self.cells.T[::-1], maxval=1)

    def to_csv(self, path):
        np.savetxt(path, self.cells, delimiter=",", fmt="%d")


@dataclass
class LabelMatrix:
    """One-hot dominance labels, shape (T*F, C), with per-row weights."""

    onehot: np.ndarray
    weights: np.ndarray

    @property
    def n_sources(self) -> int:
        return self.onehot.shape[1]

    def rows(self, start: int, stop: int) -> "LabelMatrix":
        return LabelMatrix(self.onehot[start:stop], self.weights[start:stop])


def masks_from_assignment(assign: ClusterAssignment, T: int, F: int) -> list[BinaryMask]:
    labels = np.asarray(assign.labels)
    if labels.size != T * F:
        raise ParameterError(f"{labels.size} labels for a {T}x{F} grid")
    k = assign.centers.shape[0]
    grid = labels.reshape(T, F)
    return [BinaryMask(grid == j) for j in range(k)]


def apply_mask(M: BinaryMask, X: Spectrogram) -> Spectrogram:
    if M.shape != X.shape:
        raise ParameterError(f"mask shape {M.shape} does not match spectrogram {X.shape}")
    return X.with_bins(M.cells * X.bins)


def ideal_labels(source_specs: Sequence[Spectrogram], floor_db: float = -40.0,
                 mixture: Optional[Spectrogram] = None) -> LabelMatrix:
    """Label each bin with the source of largest magnitude (ties: lowest index).

    Bins where the mixture magnitude sits more than ``|floor_db|`` below its
    maximum get weight 0 and an all-zero label row. The mixture defaults to
    the sum of the source spectrograms.
    """
    if not source_specs:
        raise ParameterError("need at least one source spectrogram")
    shape = source_specs[0].shape
    for i, S in enumerate(source_specs):
        if S.shape != shape:
            raise ParameterError(f"source {i} has shape {S.shape}, expected {shape}")
    mags = np.stack([np.abs(S.bins).reshape(-1) for S in source_specs], axis=1)
    winner = np.argmax(mags, axis=1)
    C = len(source_specs)
    onehot = np.zeros((mags.shape[0], C))
    onehot[np.arange(mags.shape[0]), winner] = 1.0

    if mixture is None:
        mix_mag = np.abs(sum(S.bins for S in source_specs)).reshape(-1)
    else:
        if mixture.shape != shape:
            raise ParameterError(f"mixture shape {mixture.shape}, expected {shape}")
        mix_mag = np.abs(mixture.bins).reshape(-1)
    if math.isinf(floor_db) and floor_db < 0:
        weights = np.ones(mags.shape[0])
    else:
        top = mix_mag.max()
        weights = ((mix_mag >= top * 10 ** (-abs(floor_db) / 20)) & (top > 0)).astype(np.float64)
    onehot *= weights[:, None]
    return LabelMatrix(onehot, weights)


def ideal_binary_mask(source_specs: Sequence[Spectrogram], target_index: int,
                      floor_db: float = -40.0,
                      mixture: Optional[Spectrogram] = None) -> BinaryMask:
    if not 0 <= target_index < len(source_specs):
        raise ParameterError(
            f"target_index {target_index} out of range for {len(source_specs)} sources")
    labels = ideal_labels(source_specs, floor_db, mixture)
    return BinaryMask(labels.onehot[:, target_index].reshape(source_specs[0].shape))
