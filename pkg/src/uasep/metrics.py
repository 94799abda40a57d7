"""Separation quality: preserved-signal ratio, masked SIR and similarity."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError, UndefinedMetricError
from .masking import BinaryMask
from .signals import TimeSignal
from .tfr import Spectrogram

# finite stand-in for an infinite ratio in plots
PLOT_CAP = 1e12
MAX_EXHAUSTIVE = 8


def _energy(a) -> float:
    return float(np.sum(np.abs(a) ** 2))


def _bins(X):
    return X.bins if isinstance(X, Spectrogram) else np.asarray(X)


def _cells(M):
    return M.cells if isinstance(M, BinaryMask) else np.asarray(M)


def _check(M, X):
    if M.shape != X.shape:
        raise ParameterError(f"mask shape {M.shape} does not match {X.shape}")


def psr(M: BinaryMask, X_k: Spectrogram) -> float:
    """Fraction of the target's T-F energy kept by the mask."""
    m, x = _cells(M), _bins(X_k)
    _check(m, x)
    total = _energy(x)
    if total <= 0:
        raise UndefinedMetricError("PSR undefined for a silent reference")
    return _energy(m * x) / total


def sir_mask(M: BinaryMask, X_k: Spectrogram, V_k: Spectrogram) -> float:
    """Target over interference energy passing the same mask; ``inf`` if none passes."""
    m, x, v = _cells(M), _bins(X_k), _bins(V_k)
    _check(m, x)
    _check(m, v)
    den = _energy(m * v)
    if den == 0:
        return math.inf
    return _energy(m * x) / den


def to_db(ratio: float) -> float:
    if ratio == 0:
        return -math.inf
    if math.isinf(ratio):
        return math.inf
    return 10 * math.log10(ratio)


def input_sir(X_k: Spectrogram, V_k: Spectrogram) -> float:
    """Unmasked target-to-interference energy ratio in dB."""
    x, v = _bins(X_k), _bins(V_k)
    _check(x, v)
    ex, ev = _energy(x), _energy(v)
    if ev == 0:
        return math.inf
    return to_db(ex / ev)


def _samples(s):
    return s.samples if isinstance(s, TimeSignal) else np.asarray(s, dtype=np.float64)


def similarity(y, x) -> float:
    """Absolute normalized correlation of two equal-length waveforms."""
    a, b = _samples(y), _samples(x)
    if a.shape != b.shape:
        raise ParameterError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    ea, eb = float(a @ a), float(b @ b)
    if ea <= 0 or eb <= 0:
        raise UndefinedMetricError("similarity undefined for a silent signal")
    return min(abs(float(a @ b)) / math.sqrt(ea * eb), 1.0)


def fit_length(y: np.ndarray, n: int) -> np.ndarray:
    if y.shape[0] >= n:
        return y[:n]
    return np.pad(y, (0, n - y.shape[0]))


def similarity_matrix(estimates, references, edge: int = 0) -> np.ndarray:
    """``xi[i, j]`` compares estimate ``i`` with reference ``j``."""
    refs = [_samples(r) for r in references]
    n = refs[0].shape[0]
    sl = slice(edge, n - edge) if 0 < 2 * edge < n else slice(None)
    ests = [fit_length(_samples(e), n)[sl] for e in estimates]
    refs = [r[sl] for r in refs]
    xi = np.zeros((len(ests), len(refs)))
    for i, e in enumerate(ests):
        for j, r in enumerate(refs):
            try:
                xi[i, j] = similarity(e, r)
            except UndefinedMetricError:
                xi[i, j] = 0.0
    return xi


def best_permutation(score: np.ndarray) -> tuple[int, ...]:
    """Estimate index for each reference maximizing the summed score (exhaustive)."""
    m = score.shape[1]
    if score.shape[0] != m:
        raise ParameterError(f"need a square score matrix, got {score.shape}")
    if m > MAX_EXHAUSTIVE:
        raise ParameterError(f"exhaustive alignment limited to {MAX_EXHAUSTIVE} sources, got {m}")
    best, best_perm = -np.inf, tuple(range(m))
    for perm in itertools.permutations(range(m)):
        s = sum(score[perm[j], j] for j in range(m))
        if s > best + 1e-12:
            best, best_perm = s, perm
    return best_perm


@dataclass
class SeparationReport:
    xi_matrix: np.ndarray
    permutation: tuple
    xi: list
    psr: list = field(default_factory=list)
    sir_m: list = field(default_factory=list)
    sir_in_db: list = field(default_factory=list)
    sir_out_db: list = field(default_factory=list)
    sir_gain_db: list = field(default_factory=list)

    @property
    def n_sources(self) -> int:
        return len(self.xi)

    @property
    def mean_xi(self) -> float:
        return float(np.mean(self.xi))

    @property
    def mean_psr(self) -> float:
        return float(np.mean(self.psr)) if self.psr else math.nan

    @property
    def mean_sir_m(self) -> float:
        return float(np.mean(self.sir_m)) if self.sir_m else math.nan

    def rows(self) -> list[dict]:
        out = []
        for j in range(self.n_sources):
            get = lambda seq: seq[j] if seq else math.nan  # noqa: E731
            out.append({
                "source": j,
                "psr": get(self.psr),
                "sir_m": get(self.sir_m),
                "sir_in_db": get(self.sir_in_db),
                "sir_out_db": get(self.sir_out_db),
                "sir_gain_db": get(self.sir_gain_db),
                "xi": self.xi[j],
            })
        return out

    def to_csv(self, path):
        write_rows_csv(path, self.rows(),
                       ["source", "psr", "sir_m", "sir_in_db", "sir_out_db", "sir_gain_db", "xi"])

    def to_dict(self) -> dict:
        return {
            "permutation": list(self.permutation),
            "xi_matrix": self.xi_matrix.tolist(),
            "sources": self.rows(),
            "mean_xi": self.mean_xi,
            "mean_psr": self.mean_psr,
            "mean_sir_m": self.mean_sir_m,
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(jsonable(self.to_dict()), indent=2) + "\n")


def fmt_value(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(round(v, 10))
    return str(v)


def jsonable(obj):
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return fmt_value(v) if not math.isfinite(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def plot_value(v: float) -> float:
    return min(v, PLOT_CAP)


def write_rows_csv(path, rows: Sequence[dict], columns: Sequence[str]):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt_value(row.get(c, "")) for c in columns])
    tmp.replace(path)


def align_and_report(estimates: Sequence, references: Sequence,
                     masks: Optional[Sequence[BinaryMask]] = None,
                     source_specs: Optional[Sequence[Spectrogram]] = None,
                     edge: int = 0) -> SeparationReport:
    """Pair estimates with references by maximum total similarity and score them.

    With masks and per-source spectrograms the report also carries PSR, the
    masked SIR and input/output SIR in dB; the interference for reference
    ``j`` is the sum of all other source spectrograms.
    """
    if len(estimates) != len(references):
        raise ParameterError(f"{len(estimates)} estimates for {len(references)} references")
    if masks is not None and len(masks) != len(estimates):
        raise ParameterError(f"{len(masks)} masks for {len(estimates)} estimates")
    xi_mat = similarity_matrix(estimates, references, edge)
    perm = best_permutation(xi_mat)
    m = len(references)
    report = SeparationReport(xi_mat, perm, [float(xi_mat[perm[j], j]) for j in range(m)])
    if masks is None or source_specs is None:
        return report
    if len(source_specs) != m:
        raise ParameterError(f"{len(source_specs)} source spectrograms for {m} references")
    total = sum(S.bins for S in source_specs)
    for j in range(m):
        M = masks[perm[j]]
        X = source_specs[j].bins
        V = total - X
        ratio = sir_mask(M, X, V)
        s_in = input_sir(X, V)
        s_out = to_db(ratio)
        report.psr.append(psr(M, X))
        report.sir_m.append(ratio)
        report.sir_in_db.append(s_in)
        report.sir_out_db.append(s_out)
        report.sir_gain_db.append(_gain(s_out, s_in))
    return report


def _gain(out_db: float, in_db: float) -> float:
    if math.isinf(out_db) and math.isinf(in_db) and (out_db > 0) == (in_db > 0):
        return math.nan
    return out_db - in_db
