"""Waveform synthesis, normalization, mixing, noise injection and file I/O."""

from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .errors import FormatError, ParameterError

logger = logging.getLogger(__name__)

# below this the de-meaned signal counts as silent
_SILENCE = 1e-12


@dataclass
class TimeSignal:
    """A sampled real waveform."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("samples contain NaN or Inf")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def power(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.mean(self.samples ** 2))

    def with_samples(self, samples) -> "TimeSignal":
        return TimeSignal(samples, self.sample_rate)


@dataclass
class LfmSpec:
    f_start: float
    f_end: float
    launch_time: float
    duration: float
    total_length: float
    sample_rate: int

    def validate(self):
        nyq = self.sample_rate / 2
        if self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.launch_time < 0:
            raise ParameterError(f"launch_time must be >= 0, got {self.launch_time}")
        if self.duration < 0:
            raise ParameterError(f"duration must be >= 0, got {self.duration}")
        if self.launch_time + self.duration > self.total_length + 1e-12:
            raise ParameterError(
                f"launch_time + duration ({self.launch_time + self.duration}) exceeds "
                f"total_length ({self.total_length})"
            )
        for name in ("f_start", "f_end"):
            f = getattr(self, name)
            if not 0 < f < nyq:
                raise ParameterError(f"{name}={f} Hz outside (0, {nyq}) Hz")


@dataclass
class MixSpec:
    """Mixing coefficients for ``x = sum_c a_c s_c`` or a full matrix ``x = A s``."""

    coefficients: Optional[Sequence[float]] = None
    mixing_matrix: Optional[np.ndarray] = None
    noise_snr_db: Optional[float] = None

    def n_sources(self) -> int:
        if self.mixing_matrix is not None:
            return np.atleast_2d(self.mixing_matrix).shape[1]
        if self.coefficients is not None:
            return len(self.coefficients)
        raise ParameterError("MixSpec needs coefficients or a mixing_matrix")


def gen_lfm(spec: LfmSpec) -> TimeSignal:
    """Linear chirp with zero initial phase, zero outside its launch window."""
    spec.validate()
    fs = spec.sample_rate
    n_total = int(round(spec.total_length * fs))
    start = int(round(spec.launch_time * fs))
    stop = min(int(round((spec.launch_time + spec.duration) * fs)), n_total)
    out = np.zeros(n_total)
    if stop > start and spec.duration > 0:
        t = np.arange(stop - start) / fs
        rate = (spec.f_end - spec.f_start) / spec.duration
        phase = 2 * np.pi * (spec.f_start * t + 0.5 * rate * t ** 2)
        out[start:stop] = np.cos(phase)
    return TimeSignal(out, fs)


def gen_band_noise(f_lo: float, f_hi: float, duration: float, sample_rate: int,
                   seed, order: int = 6) -> TimeSignal:
    """Gaussian noise band-passed to ``[f_lo, f_hi]`` Hz, scaled to unit peak."""
    nyq = sample_rate / 2
    if not 0 <= f_lo < f_hi <= nyq:
        raise ParameterError(f"band [{f_lo}, {f_hi}] Hz invalid for fs={sample_rate}")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    white = rng.standard_normal(n)
    if f_lo <= 0 and f_hi >= nyq:
        y = white
    elif f_lo <= 0:
        sos = sps.butter(order, f_hi, btype="lowpass", fs=sample_rate, output="sos")
        y = sps.sosfiltfilt(sos, white)
    elif f_hi >= nyq:
        sos = sps.butter(order, f_lo, btype="highpass", fs=sample_rate, output="sos")
        y = sps.sosfiltfilt(sos, white)
    else:
        sos = sps.butter(order, [f_lo, f_hi], btype="bandpass", fs=sample_rate, output="sos")
        y = sps.sosfiltfilt(sos, white)
    peak = np.max(np.abs(y)) if n else 0.0
    return TimeSignal(y / peak if peak > 0 else y, sample_rate)


def normalize(x: TimeSignal) -> TimeSignal:
    """Remove the mean and scale to unit peak; silent input maps to zeros."""
    centered = x.samples - np.mean(x.samples) if len(x) else x.samples.copy()
    peak = np.max(np.abs(centered)) if len(x) else 0.0
    if peak < _SILENCE:
        return x.with_samples(np.zeros_like(centered))
    return x.with_samples(centered / peak)


def random_coefficients(n: int, seed, low: float = 0.75, high: float = 1.0) -> np.ndarray:
    """Mixing weights drawn uniformly from ``[low, high]``."""
    return np.random.default_rng(seed).uniform(low, high, size=n)


def _check_sources(sources: Sequence[TimeSignal]):
    if not sources:
        raise ParameterError("at least one source is required")
    fs = sources[0].sample_rate
    n = len(sources[0])
    for i, s in enumerate(sources):
        if s.sample_rate != fs:
            raise ParameterError(f"source {i} has sample_rate {s.sample_rate}, expected {fs}")
        if len(s) != n:
            raise ParameterError(f"source {i} has length {len(s)}, expected {n}")
    return fs


def mix(sources: Sequence[TimeSignal], spec: MixSpec, seed=0) -> list[TimeSignal]:
    """Instantaneous linear mixing, optionally followed by white Gaussian noise.

    Returns a single observation for coefficient mixing and one observation
    per row of ``spec.mixing_matrix`` otherwise.
    """
    fs = _check_sources(sources)
    S = np.stack([s.samples for s in sources])
    if spec.mixing_matrix is not None:
        A = np.atleast_2d(np.asarray(spec.mixing_matrix, dtype=np.float64))
        if A.shape[1] != len(sources):
            raise ParameterError(
                f"mixing_matrix has {A.shape[1]} columns for {len(sources)} sources")
        X = A @ S
    elif spec.coefficients is not None:
        a = np.asarray(spec.coefficients, dtype=np.float64)
        if a.shape != (len(sources),):
            raise ParameterError(f"{a.size} coefficients for {len(sources)} sources")
        X = (a @ S)[None, :]
    else:
        raise ParameterError("MixSpec needs coefficients or a mixing_matrix")

    observations = [TimeSignal(row, fs) for row in X]
    if spec.noise_snr_db is not None and not math.isinf(spec.noise_snr_db):
        children = np.random.SeedSequence(seed).spawn(len(observations))
        observations = [add_awgn(obs, spec.noise_snr_db, child)
                        for obs, child in zip(observations, children)]
    return observations


def add_awgn(x: TimeSignal, snr_db: float, seed) -> TimeSignal:
    """Add white Gaussian noise at ``snr_db`` relative to the power of ``x``.

    ``snr_db = inf`` is the no-noise flag and returns an unchanged copy.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return x.with_samples(x.samples.copy())
    p = x.power()
    if p <= 0:
        raise ParameterError("cannot set an SNR against a silent signal")
    noise_power = p / 10 ** (snr_db / 10)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(x)) * math.sqrt(noise_power)
    return x.with_samples(x.samples + noise)


def random_mixing_matrix(n_obs: int, n_sources: int, seed, min_angle: float = 0.15,
                         low: float = 0.2, high: float = 1.0,
                         max_tries: int = 1000) -> np.ndarray:
    """Positive random mixing matrix whose columns point in distinct directions.

    Columns closer than ``min_angle`` radians are redrawn; instantaneous
    mixing leaves only column direction to tell sources apart.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        A = rng.uniform(low, high, size=(n_obs, n_sources))
        U = A / np.linalg.norm(A, axis=0)
        cos = np.clip(U.T @ U, -1.0, 1.0)
        ang = np.arccos(cos[np.triu_indices(n_sources, 1)])
        if n_sources < 2 or ang.min() >= min_angle:
            return A
    raise ParameterError(f"no {n_obs}x{n_sources} matrix with column angles >= {min_angle}")


# --- files -----------------------------------------------------------------

def read_wav(path) -> TimeSignal:
    """Read 16-bit PCM or 32-bit float WAV; multi-channel input keeps channel 0."""
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            fs, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError, struct.error) as exc:
        raise FormatError(f"{path}: cannot decode WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported encoding {data.dtype} "
                          "(expected PCM int16 or float32)")
    if samples.ndim == 2:
        if samples.shape[1] > 1:
            logger.warning("%s has %d channels; using channel 0", path, samples.shape[1])
        samples = samples[:, 0]
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{path}: non-finite samples")
    return TimeSignal(samples, int(fs))


def write_wav(path, x: TimeSignal, bit_depth: int = 16):
    if bit_depth == 16:
        data = np.clip(np.round(x.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif bit_depth == 32:
        data = x.samples.astype(np.float32)
    else:
        raise ParameterError(f"bit_depth must be 16 or 32, got {bit_depth}")
    wavfile.write(Path(path), x.sample_rate, data)


def write_csv(path, x: TimeSignal):
    np.savetxt(path, x.samples, header=f"sample_rate={x.sample_rate}", fmt="%.17g")


def read_csv(path) -> TimeSignal:
    with open(path) as fh:
        first = fh.readline().strip()
    if not first.startswith("#") or "sample_rate=" not in first:
        raise FormatError(f"{path}: missing '# sample_rate=<int>' header")
    try:
        fs = int(first.split("sample_rate=", 1)[1])
    except ValueError as exc:
        raise FormatError(f"{path}: bad sample_rate header {first!r}") from exc
    return TimeSignal(np.atleast_1d(np.loadtxt(path, comments="#")), fs)
