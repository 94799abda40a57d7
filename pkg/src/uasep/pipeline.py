"""End-to-end separation: STFT, features or embeddings, K-means, masks, ISTFT."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .clustering import ClusterAssignment, kmeans
from .errors import ConfigurationError, ParameterError
from .features import FeatureConfig, energy_weights, features_multi_channel
from .masking import BinaryMask, apply_mask, masks_from_assignment
from .metrics import similarity_matrix
from .signals import TimeSignal, normalize, read_wav, write_wav
from .tfr import Spectrogram, StftConfig, dump_spectrogram, istft, stft, write_spectrogram_pgm

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    method: str = "classic"
    k_clusters: Union[int, str] = "auto"
    n_sources: Optional[int] = None
    checkpoint: Optional[str] = None
    seed: int = 0
    floor_db: float = -40.0
    features: FeatureConfig = field(default_factory=FeatureConfig)
    output_dir: Optional[str] = None
    kmeans_init: str = "k-means++"
    normalize_input: bool = False

    def __post_init__(self):
        if self.method not in ("classic", "deep"):
            raise ParameterError(f"method must be 'classic' or 'deep', got {self.method!r}")
        if self.k_clusters != "auto" and int(self.k_clusters) < 1:
            raise ParameterError(f"k_clusters must be >= 1, got {self.k_clusters}")

    def resolve_k(self) -> int:
        if self.k_clusters == "auto":
            if self.n_sources is None:
                raise ConfigurationError("k_clusters='auto' needs n_sources")
            return int(self.n_sources)
        return int(self.k_clusters)


@dataclass
class SeparationResult:
    estimates: list
    masks: list
    mixture_spec: Spectrogram
    assignment: ClusterAssignment
    weights: np.ndarray

    def drop(self, index: int) -> "SeparationResult":
        keep = [i for i in range(len(self.estimates)) if i != index]
        return SeparationResult([self.estimates[i] for i in keep], [self.masks[i] for i in keep],
                                self.mixture_spec, self.assignment, self.weights)


def _as_observations(mixture) -> list[TimeSignal]:
    if isinstance(mixture, (str, Path)):
        return [read_wav(mixture)]
    if isinstance(mixture, TimeSignal):
        return [mixture]
    obs = list(mixture)
    if not obs:
        raise ParameterError("no observations given")
    return [read_wav(o) if isinstance(o, (str, Path)) else o for o in obs]


def cluster_and_mask(rows, weights, X_ref: Spectrogram, k: int, seed, init="k-means++"):
    T, F = X_ref.shape
    assign = kmeans(rows, weights, k, seed=seed, init=init)
    masks = masks_from_assignment(assign, T, F)
    estimates = [istft(apply_mask(M, X_ref)) for M in masks]
    return assign, masks, estimates


def separate(mixture, cfg: PipelineConfig, net=None) -> SeparationResult:
    """Run the online separation chain on one mixture.

    ``mixture`` is a :class:`TimeSignal`, a WAV path, or a sequence of
    observations (multi-sensor; the classic path needs at least two). The
    deep path uses the reference channel only and needs ``net`` or
    ``cfg.checkpoint``.
    """
    obs = _as_observations(mixture)
    # the network was trained on peak-normalized mixtures, so the deep path always normalizes
    if cfg.normalize_input or cfg.method == "deep":
        obs = [normalize(o) for o in obs]
    k = cfg.resolve_k()
    ref = cfg.features.ref_channel
    if not 0 <= ref < len(obs):
        raise ParameterError(f"ref_channel {ref} out of range for {len(obs)} observations")
    specs = [stft(o, cfg.stft) for o in obs]
    X_ref = specs[ref]
    T, F = X_ref.shape

    if cfg.method == "classic":
        if len(specs) < 2:
            if k != 1:
                raise ConfigurationError(
                    "classic features need at least two observations for k > 1")
            rows = np.ones((T * F, 1))
            weights = energy_weights(np.abs(X_ref.bins), cfg.floor_db)
        else:
            fm = features_multi_channel(specs, cfg.features)
            rows, weights = fm.rows, fm.weights
    else:
        from .embednet import load_checkpoint
        from .training import embed_spectrogram

        if net is None:
            if cfg.checkpoint is None:
                raise ConfigurationError("deep method requires a checkpoint")
            net = load_checkpoint(cfg.checkpoint)
        if net.freq_bins != F:
            raise ConfigurationError(
                f"checkpoint expects F={net.freq_bins} bins but the STFT gives F={F}")
        rows = embed_spectrogram(net, X_ref)
        weights = energy_weights(np.abs(X_ref.bins), cfg.floor_db)

    if weights.sum() == 0:
        weights = np.ones_like(weights)
    assign, masks, estimates = cluster_and_mask(rows, weights, X_ref, k, cfg.seed,
                                                cfg.kmeans_init)
    result = SeparationResult(estimates, masks, X_ref, assign, weights)
    if cfg.output_dir:
        write_outputs(result, cfg.output_dir)
    return result


def discard_noise_cluster(result: SeparationResult,
                          references: Optional[Sequence] = None) -> SeparationResult:
    """Drop the cluster least like any reference, or the weakest one without references."""
    if references is not None:
        xi = similarity_matrix(result.estimates, references)
        worst = int(np.argmin(xi.max(axis=1)))
    else:
        energies = [float(np.sum(e.samples ** 2)) for e in result.estimates]
        worst = int(np.argmin(energies))
    return result.drop(worst)


def write_outputs(result: SeparationResult, outdir):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (est, M) in enumerate(zip(result.estimates, result.masks)):
        write_wav(out / f"estimate_{i}.wav", est, bit_depth=32)
        M.to_pgm(out / f"mask_{i}.pgm")
        dump_spectrogram(out / f"estimate_{i}.uaspec", apply_mask(M, result.mixture_spec))
    dump_spectrogram(out / "mixture.uaspec", result.mixture_spec)
    write_spectrogram_pgm(out / "mixture.pgm", result.mixture_spec)
