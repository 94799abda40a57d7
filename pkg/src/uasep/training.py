"""Training data assembly, the SGD epoch loop, and chunked inference."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .embednet import EmbeddingNet, TrainConfig, save_checkpoint, sgd_step
from .errors import ParameterError, TrainingDivergedError
from .masking import LabelMatrix, ideal_labels
from .signals import (LfmSpec, TimeSignal, add_awgn, gen_band_noise, gen_lfm, normalize,
                      read_wav, random_coefficients)
from .tfr import Spectrogram, StftConfig, log_magnitude, stft

logger = logging.getLogger(__name__)

INPUT_FLOOR_DB = -120.0
FAMILIES = ("ship", "sonar", "bio")
# seed offset separating held-out benchmark draws from training draws
HELDOUT_OFFSET = 1_000_003


# --- sources ---------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSource:
    """A reproducible synthetic clip from one of the band-disjoint families.

    ship: low-band filtered noise with slow amplitude modulation (< 800 Hz).
    sonar: trains of LFM pings inside 1-2.2 kHz.
    bio: gated high-band noise bursts (2.6-3.8 kHz).
    Bands scale with the sample rate relative to 8 kHz.
    """

    family: str
    seed: int
    duration: float = 2.0
    sample_rate: int = 8000

    def generate(self) -> TimeSignal:
        return _generate(self)


@lru_cache(maxsize=4096)
def _generate(src: SyntheticSource) -> TimeSignal:
    fs, dur = src.sample_rate, src.duration
    rng = np.random.default_rng([src.seed, FAMILIES.index(src.family)])
    s = fs / 8000.0
    n = int(round(dur * fs))
    t = np.arange(n) / fs
    if src.family == "ship":
        lo, hi = rng.uniform(60, 200) * s, rng.uniform(500, 800) * s
        x = gen_band_noise(lo, hi, dur, fs, rng).samples
        rate, depth = rng.uniform(0.5, 3.0), rng.uniform(0.2, 0.6)
        x = x * (1 + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    elif src.family == "sonar":
        x = np.zeros(n)
        n_pings = int(rng.integers(2, 5))
        for _ in range(n_pings):
            length = rng.uniform(0.1, 0.35)
            launch = rng.uniform(0, max(dur - length, 1e-3))
            f0, f1 = rng.uniform(1000, 2200, size=2) * s
            if abs(f1 - f0) < 200 * s:
                f1 = f0 + 300 * s if f0 < 1800 * s else f0 - 300 * s
            ping = gen_lfm(LfmSpec(f0, f1, launch, length, dur, fs)).samples
            x = x + ping * rng.uniform(0.5, 1.0)
    elif src.family == "bio":
        lo = rng.uniform(2600, 3000) * s
        hi = rng.uniform(3300, 3800) * s
        x = gen_band_noise(lo, hi, dur, fs, rng).samples
        gate = np.zeros(n)
        for _ in range(int(rng.integers(3, 9))):
            c = rng.uniform(0, dur)
            w = rng.uniform(0.03, 0.2)
            gate += np.exp(-0.5 * ((t - c) / w) ** 2)
        x = x * np.minimum(gate + 0.05, 1.0)
    else:
        raise ParameterError(f"unknown synthetic family {src.family!r}")
    return normalize(TimeSignal(x, fs))


@dataclass(frozen=True)
class PoolItem:
    """One entry of a source pool: a WAV path or a synthetic source, plus a group tag.

    Mixtures never draw two items from the same group.
    """

    source: Union[str, SyntheticSource]
    group: str

    def load(self) -> TimeSignal:
        if isinstance(self.source, SyntheticSource):
            return self.source.generate()
        return _read_cached(str(self.source))


@lru_cache(maxsize=1024)
def _read_cached(path: str) -> TimeSignal:
    return read_wav(path)


def synthetic_pool(n_per_family: int = 12, sample_rate: int = 8000, duration: float = 2.0,
                   seed: int = 0, families: Sequence[str] = FAMILIES) -> list[PoolItem]:
    items = []
    for fam in families:
        for i in range(n_per_family):
            src = SyntheticSource(fam, seed * 10_000 + i, duration, sample_rate)
            items.append(PoolItem(src, fam))
    return items


def wav_pool(paths: Sequence) -> list[PoolItem]:
    return [PoolItem(str(p), str(p)) for p in paths]


# --- dataset ---------------------------------------------------------------

@dataclass
class DatasetSpec:
    source_pool: list
    min_mix: int = 2
    max_mix: int = 3
    mixtures_per_epoch: int = 24
    stft: StftConfig = field(default_factory=StftConfig)
    floor_db: float = -40.0
    seed: int = 0
    clip_seconds: Optional[float] = None
    noise_snr_db: Optional[float] = None
    # per-mixture SNR drawn uniformly from this range (overrides noise_snr_db)
    noise_snr_range: Optional[tuple] = None
    noise_probability: float = 1.0
    # label noise-dominated bins as an extra class
    label_noise: bool = True

    def __post_init__(self):
        if not 2 <= self.min_mix <= self.max_mix:
            raise ParameterError(f"need 2 <= min_mix <= max_mix, got {self.min_mix}, {self.max_mix}")
        groups = {item.group for item in self.source_pool}
        if len(groups) < self.max_mix:
            raise ParameterError(
                f"pool has {len(groups)} distinct groups, fewer than max_mix={self.max_mix}")


@dataclass
class TrainChunk:
    frames: np.ndarray
    labels: LabelMatrix
    mixture: int = 0


@dataclass
class Mixture:
    """A mixed observation with its scaled source images."""

    mixture: TimeSignal
    sources: list
    coefficients: np.ndarray
    groups: list
    noise: Optional[TimeSignal] = None


def chunk_starts(n_frames: int, chunk: int, overlap: float = 0.5) -> list[int]:
    step = max(1, int(round(chunk * (1 - overlap))))
    if n_frames <= chunk:
        return [0]
    return list(range(0, n_frames - chunk + 1, step))


def _crop(x: TimeSignal, n: int, rng) -> np.ndarray:
    if len(x) == n:
        return x.samples
    start = int(rng.integers(0, len(x) - n + 1))
    return x.samples[start:start + n]


def draw_mixture(pool: Sequence[PoolItem], n_sources: int, rng,
                 clip_seconds: Optional[float] = None,
                 noise_snr_db: Optional[float] = None) -> Mixture:
    """Sample ``n_sources`` items from distinct groups and mix with weights in [3/4, 1]."""
    groups = sorted({item.group for item in pool})
    if n_sources > len(groups):
        raise ParameterError(f"cannot draw {n_sources} sources from {len(groups)} groups")
    chosen = rng.choice(len(groups), size=n_sources, replace=False)
    picks = []
    for g in chosen:
        members = [item for item in pool if item.group == groups[g]]
        picks.append(members[int(rng.integers(len(members)))])
    signals = [normalize(p.load()) for p in picks]
    fs = signals[0].sample_rate
    if any(s.sample_rate != fs for s in signals):
        raise ParameterError("pool items have different sample rates")
    n = min(len(s) for s in signals)
    if clip_seconds is not None:
        n = min(n, int(round(clip_seconds * fs)))
    alphas = random_coefficients(n_sources, rng)
    images = [TimeSignal(a * _crop(s, n, rng), fs) for a, s in zip(alphas, signals)]
    clean = TimeSignal(np.sum([im.samples for im in images], axis=0), fs)
    mixture, noise = clean, None
    if noise_snr_db is not None and not math.isinf(noise_snr_db):
        mixture = add_awgn(clean, noise_snr_db, rng)
        noise = TimeSignal(mixture.samples - clean.samples, fs)
    return Mixture(mixture, images, alphas, [groups[g] for g in chosen], noise)


def mixture_features(m: Mixture, cfg: StftConfig, floor_db: float, label_noise: bool = False):
    """Log-magnitude input frames and dominance labels for one mixture.

    The mixture is normalized before analysis; source images get the same
    scale so the labels stay consistent with the input. With
    ``label_noise`` the additive noise competes for dominance as one more
    column.
    """
    centered = m.mixture.samples - np.mean(m.mixture.samples)
    peak = np.max(np.abs(centered))
    scale = 1.0 / peak if peak > 0 else 1.0
    X = stft(TimeSignal(centered * scale, m.mixture.sample_rate), cfg)
    parts = list(m.sources)
    if label_noise and m.noise is not None:
        parts.append(m.noise)
    specs = [stft(TimeSignal(s.samples * scale, s.sample_rate), cfg) for s in parts]
    labels = ideal_labels(specs, floor_db, mixture=X)
    return log_magnitude(X, INPUT_FLOOR_DB), labels


def chunk_mixture(frames: np.ndarray, labels: LabelMatrix, chunk: int, overlap: float,
                  mixture_id: int = 0) -> list[TrainChunk]:
    T, F = frames.shape
    out = []
    for s in chunk_starts(T, chunk, overlap):
        e = s + chunk
        fr = frames[s:e]
        lab = labels.rows(s * F, min(e, T) * F)
        if fr.shape[0] < chunk:
            pad = chunk - fr.shape[0]
            fr = np.vstack([fr, np.full((pad, F), INPUT_FLOOR_DB)])
            lab = LabelMatrix(np.vstack([lab.onehot, np.zeros((pad * F, lab.n_sources))]),
                              np.concatenate([lab.weights, np.zeros(pad * F)]))
        out.append(TrainChunk(fr, lab, mixture_id))
    return out


def build_epoch(spec: DatasetSpec, epoch_seed: int, chunk_frames: int = 100,
                chunk_overlap: float = 0.5) -> list[TrainChunk]:
    rng = np.random.default_rng([spec.seed, epoch_seed])
    chunks = []
    for i in range(spec.mixtures_per_epoch):
        n = int(rng.integers(spec.min_mix, spec.max_mix + 1))
        snr = spec.noise_snr_db
        if spec.noise_snr_range is not None:
            lo, hi = spec.noise_snr_range
            snr = float(rng.uniform(lo, hi))
            if rng.random() >= spec.noise_probability:
                snr = None
        m = draw_mixture(spec.source_pool, n, rng, spec.clip_seconds, snr)
        frames, labels = mixture_features(m, spec.stft, spec.floor_db, spec.label_noise)
        chunks.extend(chunk_mixture(frames, labels, chunk_frames, chunk_overlap, i))
    return chunks


def input_statistics(chunks: Sequence[TrainChunk]) -> tuple[np.ndarray, np.ndarray]:
    """Per-frequency mean and standard deviation of the log-magnitude input."""
    X = np.concatenate([c.frames for c in chunks], axis=0)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return mean, np.where(std > 1e-6, std, 1.0)


# --- training --------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    history: list
    net: EmbeddingNet

    def epoch_means(self) -> list[float]:
        by_epoch: dict[int, list] = {}
        for epoch, _, loss in self.history:
            by_epoch.setdefault(epoch, []).append(loss)
        return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]


def init_network(spec: DatasetSpec, cfg: TrainConfig, arch: str = "bilstm",
                 hidden: int = 64, embed_dim: int = 10, layers: int = 2,
                 **net_kwargs) -> EmbeddingNet:
    """Fresh network with input statistics calibrated on epoch 0 of the dataset."""
    calib = build_epoch(spec, 0, cfg.chunk_frames, cfg.chunk_overlap)
    F = calib[0].frames.shape[1]
    net = EmbeddingNet(arch, F, hidden, embed_dim, layers, seed=cfg.seed, **net_kwargs)
    net.input_mean, net.input_std = input_statistics(calib)
    return net


def _checkpoint_extra(spec: DatasetSpec, cfg: TrainConfig) -> dict:
    return {
        "train_config": asdict(cfg),
        "stft": asdict(spec.stft),
        "floor_db": spec.floor_db,
        "dataset_seed": spec.seed,
    }


def train(spec: DatasetSpec, cfg: TrainConfig, arch: str = "bilstm", outdir=None,
          net: Optional[EmbeddingNet] = None, hidden: int = 64, embed_dim: int = 10,
          layers: int = 2, fixed_chunks: Optional[Sequence[TrainChunk]] = None,
          **net_kwargs) -> TrainResult:
    """Run ``cfg.epochs`` epochs of momentum SGD on the affinity loss.

    Each epoch draws fresh mixtures (``build_epoch(spec, epoch)``) unless
    ``fixed_chunks`` is given, in which case the same chunks are reused
    every epoch (overfitting checks). A checkpoint is written after every
    epoch and the loss history goes to ``loss_history.csv``.
    """
    if net is None:
        net = init_network(spec, cfg, arch, hidden, embed_dim, layers, **net_kwargs)
    out = Path(outdir) if outdir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    extra = _checkpoint_extra(spec, cfg)
    rng = np.random.default_rng([cfg.seed, 7919])
    velocity: dict = {}
    history = []
    final = out / "final.uanet" if out is not None else None
    if final is not None:
        save_checkpoint(final, net, extra)

    for epoch in range(1, cfg.epochs + 1):
        if fixed_chunks is not None:
            chunks = list(fixed_chunks)
        else:
            chunks = build_epoch(spec, epoch, cfg.chunk_frames, cfg.chunk_overlap)
        order = rng.permutation(len(chunks))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            frames = np.stack([chunks[i].frames for i in idx])
            labels = [chunks[i].labels for i in idx]
            _, grads, per_chunk = net.loss_and_grads(
                frames, labels, training=True, rng=rng, cfg=cfg, normalize=cfg.normalize_loss)
            for i, loss in zip(idx, per_chunk):
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, chunk {int(i)}")
                history.append((epoch, int(i), float(loss)))
            bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
            if bad:
                raise TrainingDivergedError(
                    f"non-finite gradient for {bad[0]} at epoch {epoch}, batch starting {start}")
            sgd_step(net.params, grads, cfg, velocity)
        net.epoch = epoch
        mean_loss = np.mean([h[2] for h in history if h[0] == epoch])
        logger.info("epoch %d: mean normalized loss %.5f", epoch, mean_loss)
        if out is not None:
            save_checkpoint(out / f"epoch_{epoch:03d}.uanet", net, extra)
            save_checkpoint(final, net, extra)

    if out is not None:
        write_history(out / "loss_history.csv", history)
    return TrainResult(final, history, net)


def write_history(path, history):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "chunk", "loss"])
        for epoch, chunk, loss in history:
            w.writerow([epoch, chunk, repr(loss)])
    tmp.replace(path)


# --- inference -------------------------------------------------------------

def embed_frames(net: EmbeddingNet, frames: np.ndarray, chunk_frames: int = 100,
                 overlap: float = 0.5) -> np.ndarray:
    """Embed a (T, F) sequence in overlapping chunks, averaging where they overlap.

    Returns (T*F, K) unit rows (zero rows where every covering chunk gave zero).
    """
    T, F = frames.shape
    K = net.embed_dim
    if T <= chunk_frames:
        return net.embed(frames)
    acc = np.zeros((T, F, K))
    starts = chunk_starts(T, chunk_frames, overlap)
    if starts[-1] + chunk_frames < T:
        starts.append(T - chunk_frames)
    batch = np.stack([frames[s:s + chunk_frames] for s in starts])
    theta, _ = net.forward(batch)
    for s, th in zip(starts, theta):
        acc[s:s + chunk_frames] += th
    norm = np.linalg.norm(acc, axis=-1, keepdims=True)
    acc = np.where(norm > 1e-12, acc / np.where(norm > 1e-12, norm, 1.0), 0.0)
    return acc.reshape(T * F, K)


def embed_spectrogram(net: EmbeddingNet, X: Spectrogram, chunk_frames: int = 100,
                      overlap: float = 0.5) -> np.ndarray:
    return embed_frames(net, log_magnitude(X, INPUT_FLOOR_DB), chunk_frames, overlap)


def load_dataset_spec(path) -> DatasetSpec:
    """Dataset spec from JSON: ``{"wav": [...]} `` or ``{"synthetic": {...}}`` plus options."""
    cfg = json.loads(Path(path).read_text())
    if "wav" in cfg:
        pool = wav_pool(cfg["wav"])
    else:
        pool = synthetic_pool(**cfg.get("synthetic", {}))
    stft_cfg = StftConfig(**cfg.get("stft", {}))
    keys = ("min_mix", "max_mix", "mixtures_per_epoch", "floor_db", "seed", "clip_seconds",
            "noise_snr_db", "noise_snr_range", "noise_probability", "label_noise")
    return DatasetSpec(pool, stft=stft_cfg, **{k: cfg[k] for k in keys if k in cfg})
