"""Short-time Fourier analysis/synthesis and spectrogram file formats.

Frames start at ``t * hop`` in a copy of the signal padded with
``frame_len - hop`` zeros in front, so every original sample is covered by
the full set of overlapping frames and overlap-add is exact from the first
sample on.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import get_window

from .errors import ConfigurationError, FormatError, ParameterError
from .signals import TimeSignal

WINDOW_KINDS = ("hann", "sqrt_hann", "hamming", "rect")
_MAGIC = b"UASPEC1"
# relative spread of the overlap-add sum tolerated before synthesis refuses
COLA_TOLERANCE = 0.01


def analysis_window(kind: str, n: int) -> np.ndarray:
    if kind == "hann":
        return get_window("hann", n)
    if kind == "sqrt_hann":
        return np.sqrt(get_window("hann", n))
    if kind == "hamming":
        return get_window("hamming", n)
    if kind == "rect":
        return np.ones(n)
    raise ParameterError(f"unknown window kind {kind!r}; choose from {WINDOW_KINDS}")


def synthesis_window(kind: str, n: int) -> np.ndarray:
    # sqrt_hann is applied on both sides so the product is plain Hann
    if kind == "sqrt_hann":
        return analysis_window(kind, n)
    return np.ones(n)


@dataclass(frozen=True)
class StftConfig:
    frame_ms: float = 32.0
    hop_ms: float = 8.0
    window_kind: str = "hann"

    def __post_init__(self):
        if not self.frame_ms > self.hop_ms > 0:
            raise ParameterError(
                f"need frame_ms > hop_ms > 0, got {self.frame_ms} / {self.hop_ms}")
        if self.window_kind not in WINDOW_KINDS:
            raise ParameterError(f"unknown window kind {self.window_kind!r}")

    @classmethod
    def from_samples(cls, frame_len: int, hop: int, sample_rate: int,
                     window_kind: str = "hann") -> "StftConfig":
        return cls(1000.0 * frame_len / sample_rate, 1000.0 * hop / sample_rate, window_kind)

    def frame_len(self, sample_rate: int) -> int:
        return int(round(self.frame_ms * sample_rate / 1000.0))

    def hop(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def n_bins(self, sample_rate: int) -> int:
        return self.frame_len(sample_rate) // 2 + 1


@dataclass
class Spectrogram:
    """One-sided complex STFT, ``bins`` has shape (frames, frame_len // 2 + 1)."""

    bins: np.ndarray
    frame_len: int
    hop: int
    sample_rate: int
    window_kind: str = "hann"
    length: Optional[int] = None

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 2:
            raise ParameterError(f"bins must be 2-D, got shape {self.bins.shape}")
        if self.bins.shape[1] != self.frame_len // 2 + 1:
            raise ParameterError(
                f"{self.bins.shape[1]} bins inconsistent with frame_len {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ParameterError(f"hop {self.hop} must lie in (0, frame_len={self.frame_len}]")
        if self.window_kind not in WINDOW_KINDS:
            raise ParameterError(f"unknown window kind {self.window_kind!r}")
        if not np.all(np.isfinite(self.bins)):
            raise ParameterError("spectrogram contains NaN or Inf")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bins.shape

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def n_bins(self) -> int:
        return self.bins.shape[1]

    def frequencies(self) -> np.ndarray:
        """Physical frequency of every bin in Hz."""
        return np.arange(self.n_bins) * self.sample_rate / self.frame_len

    def with_bins(self, bins) -> "Spectrogram":
        return replace(self, bins=np.asarray(bins, dtype=np.complex128))

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.bins) ** 2))


def _pad_front(frame_len: int, hop: int) -> int:
    return frame_len - hop


def stft(x: TimeSignal, cfg: StftConfig) -> Spectrogram:
    fs = x.sample_rate
    n = cfg.frame_len(fs)
    hop = cfg.hop(fs)
    if hop < 1 or hop > n:
        raise ParameterError(f"hop {hop} samples invalid for frame_len {n}")
    if len(x) < n:
        raise ParameterError(f"signal of {len(x)} samples is shorter than one frame ({n})")
    front = _pad_front(n, hop)
    n_frames = (front + len(x) - 1) // hop + 1
    padded = np.zeros((n_frames - 1) * hop + n)
    padded[front:front + len(x)] = x.samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, n)[::hop][:n_frames]
    bins = np.fft.rfft(frames * analysis_window(cfg.window_kind, n), n=n, axis=1)
    return Spectrogram(bins, n, hop, fs, cfg.window_kind, len(x))


def ola_envelope(window_kind: str, frame_len: int, hop: int) -> np.ndarray:
    """Steady-state overlap-add sum of analysis*synthesis windows, one hop long."""
    prod = analysis_window(window_kind, frame_len) * synthesis_window(window_kind, frame_len)
    reps = math.ceil(frame_len / hop)
    padded = np.zeros(reps * hop)
    padded[:frame_len] = prod
    return padded.reshape(reps, hop).sum(axis=0)


def ola_gain(window_kind: str, frame_len: int, hop: int) -> float:
    """Overlap-add constant A; ``0.5 * frame_len / hop`` for the Hann family."""
    if window_kind in ("hann", "sqrt_hann"):
        return 0.5 * frame_len / hop
    return float(np.mean(ola_envelope(window_kind, frame_len, hop)))


def check_cola(window_kind: str, frame_len: int, hop: int, tol: float = COLA_TOLERANCE):
    env = ola_envelope(window_kind, frame_len, hop)
    spread = (env.max() - env.min()) / env.mean()
    if spread > tol:
        raise ConfigurationError(
            f"{window_kind} window with frame_len={frame_len}, hop={hop} has an overlap-add "
            f"sum varying by {100 * spread:.1f}% (limit {100 * tol:.0f}%)")
    return spread


def istft(S: Spectrogram) -> TimeSignal:
    """Overlap-add resynthesis using the parameters stored in ``S``.

    The sum of frames is divided by the measured window envelope. When the
    window satisfies constant overlap-add exactly, that envelope equals
    :func:`ola_gain` everywhere; otherwise it corrects the residual ripple
    (e.g. Hann at 1411/353 samples, ripple 2e-4).
    """
    n, hop = S.frame_len, S.hop
    check_cola(S.window_kind, n, hop)
    front = _pad_front(n, hop)
    T = S.n_frames
    total = (T - 1) * hop + n
    syn = synthesis_window(S.window_kind, n)
    ana = analysis_window(S.window_kind, n)
    frames = np.fft.irfft(S.bins, n=n, axis=1) * syn
    out = np.zeros(total)
    env = np.zeros(total)
    prod = ana * syn
    for t in range(T):
        out[t * hop:t * hop + n] += frames[t]
        env[t * hop:t * hop + n] += prod
    length = S.length if S.length is not None else T * hop - front
    seg = out[front:front + length]
    den = env[front:front + length]
    gain = ola_gain(S.window_kind, n, hop)
    den = np.where(den > 1e-3 * gain, den, gain)
    result = seg / den
    if result.shape[0] < length:
        result = np.pad(result, (0, length - result.shape[0]))
    return TimeSignal(result, S.sample_rate)


def log_magnitude(S: Spectrogram, floor_db: float = -120.0) -> np.ndarray:
    mag = np.abs(S.bins)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return np.maximum(db, floor_db)


# --- file formats ----------------------------------------------------------

def dump_spectrogram(path, S: Spectrogram):
    """Binary dump: magic, u32 T/F/frame_len/hop/sample_rate, u8 window, complex64 bins."""
    T, F = S.shape
    header = _MAGIC + struct.pack("<5IB", T, F, S.frame_len, S.hop, S.sample_rate,
                                  WINDOW_KINDS.index(S.window_kind))
    body = S.bins.astype("<c8").tobytes(order="C")
    Path(path).write_bytes(header + body)


def load_spectrogram(path) -> Spectrogram:
    raw = Path(path).read_bytes()
    hsize = len(_MAGIC) + struct.calcsize("<5IB")
    if len(raw) < hsize or raw[:len(_MAGIC)] != _MAGIC:
        raise FormatError(f"{path}: not a UASPEC1 spectrogram dump")
    T, F, frame_len, hop, fs, wk = struct.unpack("<5IB", raw[len(_MAGIC):hsize])
    if wk >= len(WINDOW_KINDS):
        raise FormatError(f"{path}: unknown window code {wk}")
    expected = hsize + T * F * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    bins = np.frombuffer(raw, dtype="<c8", offset=hsize).reshape(T, F)
    return Spectrogram(bins.astype(np.complex128), frame_len, hop, fs, WINDOW_KINDS[wk])


def write_magnitude_csv(path, S: Spectrogram):
    np.savetxt(path, np.abs(S.bins), delimiter=",", fmt="%.9g")


def write_pgm(path, image: np.ndarray, maxval: int = 255):
    """Binary (P5) PGM; rows are written top to bottom as given."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ParameterError("PGM export needs a 2-D array")
    h, w = image.shape
    data = np.clip(np.round(image), 0, maxval).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    # exactly one whitespace byte separates the header from the raster
    data = raw[pos + 1:]
    if len(data) < w * h:
        raise FormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(data[:w * h], dtype=np.uint8).reshape(h, w)


def spectrogram_image(S: Spectrogram, dynamic_range_db: float = 80.0) -> np.ndarray:
    """8-bit image of the log magnitude, low frequencies at the bottom."""
    db = log_magnitude(S, floor_db=-300.0)
    top = db.max()
    scaled = (db - (top - dynamic_range_db)) / dynamic_range_db
    return np.clip(scaled, 0.0, 1.0).T[::-1] * 255.0


def write_spectrogram_pgm(path, S: Spectrogram, dynamic_range_db: float = 80.0):
    write_pgm(path, spectrogram_image(S, dynamic_range_db), 255)
