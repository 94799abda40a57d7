"""Hand-crafted spatial features for classic time-frequency mask separation.

Rows are laid out bin-major within a frame: row ``t * F + f``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .tfr import Spectrogram

# ratio reported where the reference channel is silent
ALPHA_MAX = 1e6


@dataclass
class FeatureConfig:
    ref_channel: int = 0
    d_max: float = 1.0
    sound_speed: float = 1500.0
    floor_db: float = -40.0

    def __post_init__(self):
        if self.d_max <= 0:
            raise ParameterError(f"d_max must be positive, got {self.d_max}")
        if self.sound_speed <= 0:
            raise ParameterError(f"sound_speed must be positive, got {self.sound_speed}")

    @property
    def beta(self) -> float:
        return 4 * np.pi * self.d_max / self.sound_speed


@dataclass
class FeatureMatrix:
    """Per-bin feature rows plus clustering weights (0 marks low-energy bins)."""

    rows: np.ndarray
    weights: np.ndarray
    n_frames: int
    n_bins: int

    @property
    def low_energy(self) -> np.ndarray:
        return self.weights == 0

    def to_csv(self, path):
        idx = np.arange(self.rows.shape[0])[:, None]
        np.savetxt(path, np.hstack([idx, self.rows]), delimiter=",",
                   fmt=["%d"] + ["%.12g"] * self.rows.shape[1])


def _check_shapes(Xs: Sequence[Spectrogram]):
    shape = Xs[0].shape
    for i, X in enumerate(Xs):
        if X.shape != shape:
            raise ParameterError(f"channel {i} has shape {X.shape}, expected {shape}")
    return shape


def magnitude_normalizer(Xs: Sequence[Spectrogram]) -> np.ndarray:
    """Root-sum-square magnitude over channels, per bin."""
    if not Xs:
        raise ParameterError("no channels given")
    _check_shapes(Xs)
    return np.sqrt(sum(np.abs(X.bins) ** 2 for X in Xs))


def energy_weights(A: np.ndarray, floor_db: float = -40.0) -> np.ndarray:
    """1 for bins within ``|floor_db|`` of the loudest, 0 elsewhere (and for silence)."""
    top = A.max() if A.size else 0.0
    if top <= 0:
        return np.zeros(A.size)
    w = (A >= top * 10 ** (floor_db / 20)) & (A > 0)
    return w.reshape(-1).astype(np.float64)


def features_two_channel(X1: Spectrogram, X2: Spectrogram,
                         floor_db: float = -40.0) -> FeatureMatrix:
    """Gain ratio ``|X2|/|X1|`` and frequency-normalized phase difference per bin."""
    T, F = _check_shapes([X1, X2])
    m1, m2 = np.abs(X1.bins), np.abs(X2.bins)
    eps = 1e-12 * max(m1.max(), 1e-300)
    ok = m1 >= eps
    alpha = np.where(ok, m2 / np.where(ok, m1, 1.0), ALPHA_MAX)
    alpha = np.minimum(alpha, ALPHA_MAX)
    f = X1.frequencies()[None, :]
    ratio_phase = np.angle(X2.bins * np.conj(X1.bins))
    phi = np.zeros_like(alpha)
    valid = ok & (f > 0)
    phi[valid] = (ratio_phase / (2 * np.pi * np.where(f > 0, f, 1.0)))[valid]
    rows = np.stack([alpha.reshape(-1), phi.reshape(-1)], axis=1)
    weights = energy_weights(np.sqrt(m1 ** 2 + m2 ** 2), floor_db)
    return FeatureMatrix(rows, weights, T, F)


def features_multi_channel(Xs: Sequence[Spectrogram],
                           cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """Unit-norm complex direction vectors, emitted as interleaved re/im columns.

    Channel ``i`` contributes ``|X_i| exp(j arg(X_i / X_ref) / (beta f)) / A``
    with ``A`` the root-sum-square magnitude over channels.
    """
    if len(Xs) < 2:
        raise ParameterError(f"need at least 2 channels, got {len(Xs)}")
    if not 0 <= cfg.ref_channel < len(Xs):
        raise ParameterError(f"ref_channel {cfg.ref_channel} out of range for {len(Xs)} channels")
    T, F = _check_shapes(Xs)
    A = magnitude_normalizer(Xs)
    ref = Xs[cfg.ref_channel].bins
    f = Xs[0].frequencies()[None, :]
    scale = np.where(f > 0, 1.0 / (cfg.beta * np.where(f > 0, f, 1.0)), 0.0)
    nz = A > 0
    safe_A = np.where(nz, A, 1.0)
    cols = []
    for X in Xs:
        phase = np.angle(X.bins * np.conj(ref)) * scale
        z = np.where(nz, np.abs(X.bins) / safe_A, 0.0) * np.exp(1j * phase)
        cols.append(z.reshape(-1))
    Z = np.stack(cols, axis=1)
    rows = np.empty((Z.shape[0], 2 * Z.shape[1]))
    rows[:, 0::2] = Z.real
    rows[:, 1::2] = Z.imag
    return FeatureMatrix(rows, energy_weights(A, cfg.floor_db), T, F)
