"""Recurrent embedding networks for deep-clustering masks, written on numpy.

A network maps a (T, F) log-magnitude sequence to a unit-norm K-vector per
T-F bin. Three recurrent bodies are available: a tanh RNN, a peephole LSTM,
and a bidirectional peephole LSTM. Gradients are computed by explicit
backpropagation through time.

Weight matrices follow the ``W @ x`` convention: input weights have shape
(hidden, input_dim). Peephole weights are per-unit vectors.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, ParameterError

ARCHITECTURES = ("rnn", "lstm", "bilstm")
LSTM_GATES = ("i", "f", "c", "o")
NORM_EPS = 1e-12
_MAGIC = b"UANET1"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    momentum: float = 0.9
    l2: float = 1e-6
    dropout_input: float = 0.2
    dropout_hidden: float = 0.5
    epochs: int = 30
    chunk_frames: int = 100
    chunk_overlap: float = 0.5
    seed: int = 0
    batch_size: int = 8
    # divide each chunk's loss by (weighted rows)^2 before differentiating
    normalize_loss: bool = False
    clip_norm: Optional[float] = None

    def __post_init__(self):
        for name in ("learning_rate", "momentum", "l2"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        for name in ("dropout_input", "dropout_hidden"):
            r = getattr(self, name)
            if not 0 <= r < 1:
                raise ParameterError(f"{name} must lie in [0, 1), got {r}")
        if not 0 <= self.chunk_overlap < 1:
            raise ParameterError(f"chunk_overlap must lie in [0, 1), got {self.chunk_overlap}")
        if self.chunk_frames < 1 or self.batch_size < 1:
            raise ParameterError("chunk_frames and batch_size must be positive")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- building blocks -------------------------------------------------------

def dropout_mask(shape, rate: float, rng) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate: float, seed=None, training: bool = True):
    if not training or rate == 0:
        return np.array(x, copy=True)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    return x * dropout_mask(x.shape, rate, rng)


def lstm_cell_forward(x_t, h_prev, c_prev, p: dict):
    """One peephole LSTM step for a single direction.

    ``p`` holds W_x{i,f,c,o}, W_h{i,f,c,o}, w_c{i,f,o} and b_{i,f,c,o}.
    Returns ``(h_t, c_t, cache)``.
    """
    a_i = x_t @ p["W_xi"].T + h_prev @ p["W_hi"].T + p["w_ci"] * c_prev + p["b_i"]
    a_f = x_t @ p["W_xf"].T + h_prev @ p["W_hf"].T + p["w_cf"] * c_prev + p["b_f"]
    a_c = x_t @ p["W_xc"].T + h_prev @ p["W_hc"].T + p["b_c"]
    i, f, g = sigmoid(a_i), sigmoid(a_f), np.tanh(a_c)
    c_t = f * c_prev + i * g
    a_o = x_t @ p["W_xo"].T + h_prev @ p["W_ho"].T + p["w_co"] * c_t + p["b_o"]
    o = sigmoid(a_o)
    tc = np.tanh(c_t)
    h_t = o * tc
    cache = {"i": i, "f": f, "g": g, "o": o, "c": c_t, "tc": tc,
             "c_prev": c_prev, "h_prev": h_prev,
             "a_i": a_i, "a_f": a_f, "a_c": a_c, "a_o": a_o}
    return h_t, c_t, cache


def _stack_lstm(p):
    Wx = np.concatenate([p[f"W_x{g}"] for g in LSTM_GATES], axis=0)
    Wh = np.concatenate([p[f"W_h{g}"] for g in LSTM_GATES], axis=0)
    b = np.concatenate([p[f"b_{g}"] for g in LSTM_GATES])
    return Wx, Wh, b


def _lstm_sequence(x, p):
    """Run one LSTM direction over x of shape (B, T, D), left to right."""
    B, T, _ = x.shape
    H = p["b_i"].shape[0]
    Wx, Wh, b = _stack_lstm(p)
    xw = x @ Wx.T + b
    w_ci, w_cf, w_co = p["w_ci"], p["w_cf"], p["w_co"]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    gates = np.empty((T, 4, B, H))
    cs = np.empty((T + 1, B, H))
    tcs = np.empty((T, B, H))
    hprev = np.empty((T, B, H))
    cs[0] = c
    for t in range(T):
        hprev[t] = h
        a = xw[:, t] + h @ Wh.T
        i = sigmoid(a[:, :H] + w_ci * c)
        f = sigmoid(a[:, H:2 * H] + w_cf * c)
        g = np.tanh(a[:, 2 * H:3 * H])
        c = f * c + i * g
        o = sigmoid(a[:, 3 * H:] + w_co * c)
        tc = np.tanh(c)
        h = o * tc
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, g, o
        cs[t + 1] = c
        tcs[t] = tc
        hs[:, t] = h
    return hs, {"x": x, "gates": gates, "cs": cs, "tcs": tcs, "hprev": hprev}


def _lstm_sequence_backward(dhs, cache, p):
    x, gates, cs, tcs, hprev = (cache[k] for k in ("x", "gates", "cs", "tcs", "hprev"))
    B, T, H = dhs.shape
    Wx, Wh, _ = _stack_lstm(p)
    w_ci, w_cf, w_co = p["w_ci"], p["w_cf"], p["w_co"]
    da_all = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dw_ci = np.zeros(H)
    dw_cf = np.zeros(H)
    dw_co = np.zeros(H)
    dWh = np.zeros_like(Wh)
    for t in range(T - 1, -1, -1):
        i, f, g, o = gates[t]
        c, c_prev, tc = cs[t + 1], cs[t], tcs[t]
        dh = dhs[:, t] + dh_next
        da_o = dh * tc * o * (1 - o)
        dc = dh * o * (1 - tc * tc) + dc_next + da_o * w_co
        da_i = dc * g * i * (1 - i)
        da_f = dc * c_prev * f * (1 - f)
        da_c = dc * i * (1 - g * g)
        dc_next = dc * f + da_i * w_ci + da_f * w_cf
        dw_ci += np.sum(da_i * c_prev, axis=0)
        dw_cf += np.sum(da_f * c_prev, axis=0)
        dw_co += np.sum(da_o * c, axis=0)
        da = np.concatenate([da_i, da_f, da_c, da_o], axis=1)
        da_all[:, t] = da
        dWh += da.T @ hprev[t]
        dh_next = da @ Wh
    flat = da_all.reshape(B * T, 4 * H)
    dWx = flat.T @ x.reshape(B * T, -1)
    db = flat.sum(axis=0)
    dx = da_all @ Wx
    grads = {"w_ci": dw_ci, "w_cf": dw_cf, "w_co": dw_co}
    for k, gname in enumerate(LSTM_GATES):
        sl = slice(k * H, (k + 1) * H)
        grads[f"W_x{gname}"] = dWx[sl]
        grads[f"W_h{gname}"] = dWh[sl]
        grads[f"b_{gname}"] = db[sl]
    return dx, grads


def _rnn_sequence(x, p):
    B, T, _ = x.shape
    H = p["b_h"].shape[0]
    xw = x @ p["W_xh"].T + p["b_h"]
    Wh = p["W_hh"]
    h = np.zeros((B, H))
    hs = np.empty((B, T, H))
    for t in range(T):
        h = np.tanh(xw[:, t] + h @ Wh.T)
        hs[:, t] = h
    return hs, {"x": x, "hs": hs}


def _rnn_sequence_backward(dhs, cache, p):
    x, hs = cache["x"], cache["hs"]
    B, T, H = dhs.shape
    Wh = p["W_hh"]
    da_all = np.empty((B, T, H))
    dh_next = np.zeros((B, H))
    dWh = np.zeros_like(Wh)
    for t in range(T - 1, -1, -1):
        h = hs[:, t]
        da = (dhs[:, t] + dh_next) * (1 - h * h)
        da_all[:, t] = da
        if t > 0:
            dWh += da.T @ hs[:, t - 1]
        dh_next = da @ Wh
    flat = da_all.reshape(B * T, H)
    return da_all @ p["W_xh"], {
        "W_xh": flat.T @ x.reshape(B * T, -1),
        "W_hh": dWh,
        "b_h": flat.sum(axis=0),
    }


# --- affinity loss ---------------------------------------------------------

def _weighted(theta, Y, weights):
    theta = np.asarray(theta, dtype=np.float64)
    if hasattr(Y, "onehot"):
        if weights is None:
            weights = Y.weights
        Y = Y.onehot
    Y = np.asarray(Y, dtype=np.float64)
    if theta.shape[0] != Y.shape[0]:
        raise ParameterError(f"{theta.shape[0]} embedding rows for {Y.shape[0]} label rows")
    if weights is None:
        return theta, Y, None
    w = np.asarray(weights, dtype=np.float64)[:, None]
    return theta * w, Y * w, w


def dc_loss(theta, Y, weights=None) -> float:
    """Affinity loss ``||V V^T - Y Y^T||_F^2`` via the low-rank expansion."""
    V, Yw, _ = _weighted(theta, Y, weights)
    vv = V.T @ V
    vy = V.T @ Yw
    yy = Yw.T @ Yw
    return float(np.sum(vv * vv) - 2 * np.sum(vy * vy) + np.sum(yy * yy))


def dc_loss_dense(theta, Y, weights=None) -> float:
    """Same loss from the explicit (N, N) affinity matrices; for small checks only."""
    V, Yw, _ = _weighted(theta, Y, weights)
    D = V @ V.T - Yw @ Yw.T
    return float(np.sum(D * D))


def dc_loss_grad(theta, Y, weights=None) -> np.ndarray:
    V, Yw, w = _weighted(theta, Y, weights)
    g = 4 * (V @ (V.T @ V) - Yw @ (Yw.T @ V))
    return g * w if w is not None else g


# --- the network -----------------------------------------------------------

def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class EmbeddingNet:
    """Recurrent embedding model with an explicit, ordered parameter dict."""

    def __init__(self, architecture: str = "bilstm", freq_bins: int = 129, hidden: int = 64,
                 embed_dim: int = 10, layers: int = 1, combine: str = "concat",
                 output_activation: str = "relu", seed: int = 0):
        if architecture not in ARCHITECTURES:
            raise ParameterError(f"architecture must be one of {ARCHITECTURES}")
        if combine not in ("concat", "sum"):
            raise ParameterError(f"combine must be 'concat' or 'sum', got {combine!r}")
        if output_activation not in ("relu", "tanh"):
            raise ParameterError(f"output_activation must be 'relu' or 'tanh'")
        if min(freq_bins, hidden, embed_dim, layers) < 1:
            raise ParameterError("dimensions must be positive")
        self.architecture = architecture
        self.freq_bins = freq_bins
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.layers = layers
        self.combine = combine
        self.output_activation = output_activation
        self.seed = seed
        self.epoch = 0
        self.input_mean = np.zeros(freq_bins)
        self.input_std = np.ones(freq_bins)
        self.params: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(seed))

    # shapes ---------------------------------------------------------------
    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.architecture == "bilstm" else ("fwd",)

    @property
    def layer_out_dim(self) -> int:
        if self.architecture == "bilstm" and self.combine == "concat":
            return 2 * self.hidden
        return self.hidden

    def layer_in_dim(self, layer: int) -> int:
        return self.freq_bins if layer == 0 else self.layer_out_dim

    def param_shapes(self) -> dict[str, tuple]:
        H = self.hidden
        shapes = {}
        for layer in range(self.layers):
            D = self.layer_in_dim(layer)
            for d in self.directions:
                pre = f"l{layer}.{d}."
                if self.architecture == "rnn":
                    shapes[pre + "W_xh"] = (H, D)
                    shapes[pre + "W_hh"] = (H, H)
                    shapes[pre + "b_h"] = (H,)
                    continue
                for g in LSTM_GATES:
                    shapes[pre + f"W_x{g}"] = (H, D)
                    shapes[pre + f"W_h{g}"] = (H, H)
                    if g != "c":
                        shapes[pre + f"w_c{g}"] = (H,)
                    shapes[pre + f"b_{g}"] = (H,)
        shapes["dense.W"] = (self.freq_bins * self.embed_dim, self.layer_out_dim)
        shapes["dense.b"] = (self.freq_bins * self.embed_dim,)
        return shapes

    def _init_params(self, rng):
        for name, shape in self.param_shapes().items():
            fan_in = shape[1] if len(shape) == 2 else self.hidden
            if name == "dense.b" or name == "dense.W":
                fan_in = self.layer_out_dim
            self.params[name] = _uniform(rng, shape, fan_in)

    def check_shapes(self):
        expected = self.param_shapes()
        if set(expected) != set(self.params):
            missing = set(expected) ^ set(self.params)
            raise ConfigurationError(f"parameter set mismatch: {sorted(missing)}")
        for name, shape in expected.items():
            arr = self.params[name]
            if arr.shape != shape:
                raise ConfigurationError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} contains non-finite values")

    def _group(self, layer, direction):
        pre = f"l{layer}.{direction}."
        return {k[len(pre):]: v for k, v in self.params.items() if k.startswith(pre)}

    def copy(self) -> "EmbeddingNet":
        twin = EmbeddingNet.__new__(EmbeddingNet)
        twin.__dict__.update(self.__dict__)
        twin.params = {k: v.copy() for k, v in self.params.items()}
        twin.input_mean = self.input_mean.copy()
        twin.input_std = self.input_std.copy()
        return twin

    def reversed_twin(self) -> "EmbeddingNet":
        """Bidirectional net with the two directions swapped.

        Fed a time-reversed input it produces the time-reversed output of
        the original network; concatenation halves are reordered to match.
        """
        if self.architecture != "bilstm":
            raise ParameterError("only a bilstm has two directions to swap")
        twin = self.copy()
        for layer in range(self.layers):
            for name in list(self._group(layer, "fwd")):
                a, b = f"l{layer}.fwd.{name}", f"l{layer}.bwd.{name}"
                twin.params[a], twin.params[b] = self.params[b].copy(), self.params[a].copy()
        if self.combine == "concat":
            H = self.hidden

            def swap_cols(W):
                return np.concatenate([W[:, H:], W[:, :H]], axis=1)

            for layer in range(1, self.layers):
                for d in self.directions:
                    for name in list(twin._group(layer, d)):
                        if name.startswith("W_x"):
                            key = f"l{layer}.{d}.{name}"
                            twin.params[key] = swap_cols(twin.params[key])
            twin.params["dense.W"] = swap_cols(twin.params["dense.W"])
        return twin

    # forward --------------------------------------------------------------
    def forward(self, frames, training: bool = False, rng=None, cfg: Optional[TrainConfig] = None):
        """Embed ``frames`` of shape (T, F) or (B, T, F); returns (B, T, F, K) and a cache."""
        x = np.asarray(frames, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[-1] != self.freq_bins:
            raise ConfigurationError(
                f"network expects F={self.freq_bins} bins, input has {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("input frames contain NaN or Inf")
        B, T, F = x.shape
        p_in = cfg.dropout_input if (training and cfg) else 0.0
        p_hid = cfg.dropout_hidden if (training and cfg) else 0.0
        if training and rng is None:
            rng = np.random.default_rng(0)
        cache = {"shape": (B, T, F), "layers": []}
        h = (x - self.input_mean) / self.input_std
        mask = dropout_mask(h.shape, p_in, rng) if p_in > 0 else None
        cache["in_mask"] = mask
        if mask is not None:
            h = h * mask
        for layer in range(self.layers):
            outs, caches = [], []
            for d in self.directions:
                p = self._group(layer, d)
                inp = h if d == "fwd" else h[:, ::-1]
                run = _rnn_sequence if self.architecture == "rnn" else _lstm_sequence
                hs, c = run(inp, p)
                outs.append(hs if d == "fwd" else hs[:, ::-1])
                caches.append(c)
            if len(outs) == 1:
                h = outs[0]
            elif self.combine == "concat":
                h = np.concatenate(outs, axis=2)
            else:
                h = outs[0] + outs[1]
            mask = dropout_mask(h.shape, p_hid, rng) if p_hid > 0 else None
            if mask is not None:
                h = h * mask
            cache["layers"].append({"dirs": caches, "mask": mask})
        cache["h_last"] = h
        z = h @ self.params["dense.W"].T + self.params["dense.b"]
        u = np.maximum(z, 0.0) if self.output_activation == "relu" else np.tanh(z)
        u = u.reshape(B, T, F, self.embed_dim)
        norm = np.sqrt(np.sum(u * u, axis=-1, keepdims=True))
        live = norm >= NORM_EPS
        theta = np.where(live, u / np.where(live, norm, 1.0), 0.0)
        cache.update(z=z, u=u, norm=norm, live=live, theta=theta)
        return theta, cache

    def embed(self, frames) -> np.ndarray:
        """(T, F) frames to (T*F, K) embedding rows, row index ``t * F + f``."""
        theta, _ = self.forward(frames)
        return theta[0].reshape(-1, self.embed_dim)

    # backward -------------------------------------------------------------
    def backward(self, cache, d_theta) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter given dL/dtheta."""
        B, T, F = cache["shape"]
        K = self.embed_dim
        theta, norm, live = cache["theta"], cache["norm"], cache["live"]
        d_theta = np.asarray(d_theta, dtype=np.float64).reshape(B, T, F, K)
        radial = np.sum(theta * d_theta, axis=-1, keepdims=True)
        du = np.where(live, (d_theta - theta * radial) / np.where(live, norm, 1.0), 0.0)
        du = du.reshape(B, T, F * K)
        z = cache["z"]
        if self.output_activation == "relu":
            dz = du * (z > 0)
        else:
            dz = du * (1 - np.tanh(z) ** 2)
        h = cache["h_last"]
        grads = {
            "dense.W": dz.reshape(-1, F * K).T @ h.reshape(B * T, -1),
            "dense.b": dz.reshape(-1, F * K).sum(axis=0),
        }
        dh = dz @ self.params["dense.W"]
        H = self.hidden
        for layer in range(self.layers - 1, -1, -1):
            lc = cache["layers"][layer]
            if lc["mask"] is not None:
                dh = dh * lc["mask"]
            if len(self.directions) == 1:
                d_outs = [dh]
            elif self.combine == "concat":
                d_outs = [dh[:, :, :H], dh[:, :, H:]]
            else:
                d_outs = [dh, dh]
            dx = 0.0
            for d, d_out, c in zip(self.directions, d_outs, lc["dirs"]):
                p = self._group(layer, d)
                back = _rnn_sequence_backward if self.architecture == "rnn" else _lstm_sequence_backward
                if d == "fwd":
                    dxi, g = back(d_out, c, p)
                else:
                    dxi, g = back(d_out[:, ::-1], c, p)
                    dxi = dxi[:, ::-1]
                dx = dx + dxi
                for k, v in g.items():
                    grads[f"l{layer}.{d}.{k}"] = v
            dh = dx
        return {k: grads[k] for k in self.params}

    def loss_and_grads(self, frames, labels: Sequence, training: bool = False, rng=None,
                       cfg: Optional[TrainConfig] = None, normalize: bool = False):
        """Summed affinity loss over a batch and its parameter gradients.

        ``labels[b]`` is the LabelMatrix of chunk ``b``; chunks may differ in
        source count. Returns ``(total_loss, grads, per_chunk_normalized)``.
        """
        theta, cache = self.forward(frames, training=training, rng=rng, cfg=cfg)
        B, T, F, K = theta.shape
        if len(labels) != B:
            raise ParameterError(f"{len(labels)} label matrices for a batch of {B}")
        d_theta = np.zeros_like(theta)
        total = 0.0
        per_chunk = []
        for b, Y in enumerate(labels):
            rows = theta[b].reshape(T * F, K)
            loss = dc_loss(rows, Y)
            n_eff = max(float(np.sum(Y.weights > 0)), 1.0)
            scale = 1.0 / n_eff ** 2 if normalize else 1.0
            total += scale * loss
            per_chunk.append(loss / n_eff ** 2)
            d_theta[b] = (scale * dc_loss_grad(rows, Y)).reshape(T, F, K)
        return total, self.backward(cache, d_theta), per_chunk

    # persistence ----------------------------------------------------------
    def header(self, extra: Optional[dict] = None) -> dict:
        h = {
            "architecture": self.architecture,
            "freq_bins": self.freq_bins,
            "hidden": self.hidden,
            "embed_dim": self.embed_dim,
            "layers": self.layers,
            "combine": self.combine,
            "output_activation": self.output_activation,
            "seed": self.seed,
            "epoch": self.epoch,
        }
        if extra:
            h.update(extra)
        return h

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"norm.mean": self.input_mean, "norm.std": self.input_std}
        out.update(self.params)
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.tensors().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def checksums(self) -> dict[str, str]:
        return {name: hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()[:16]
                for name, arr in self.tensors().items()}


def sgd_step(params: dict, grads: dict, cfg: TrainConfig, velocity: dict) -> dict:
    """Momentum SGD with L2 decay: ``v = mu v - lr (g + l2 w); w += v`` (in place)."""
    scale = 1.0
    if cfg.clip_norm is not None:
        gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if gnorm > cfg.clip_norm:
            scale = cfg.clip_norm / gnorm
    for name, w in params.items():
        g = grads[name] * scale
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = cfg.momentum * v - cfg.learning_rate * (g + cfg.l2 * w)
        velocity[name] = v
        w += v
    return params


def save_checkpoint(path, net: EmbeddingNet, extra: Optional[dict] = None):
    """``UANET1`` magic, u32 header length, JSON header, little-endian float64 tensors."""
    tensors = net.tensors()
    header = net.header(extra)
    header["tensors"] = [[name, list(arr.shape)] for name, arr in tensors.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in tensors.values())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_MAGIC + struct.pack("<I", len(blob)) + blob + body)
    tmp.replace(path)


def read_checkpoint_header(path) -> dict:
    raw = Path(path).read_bytes()
    return _parse_header(raw, path)[0]


def _parse_header(raw, path):
    if raw[:len(_MAGIC)] != _MAGIC or len(raw) < len(_MAGIC) + 4:
        raise FormatError(f"{path}: not a UANET1 checkpoint")
    (n,) = struct.unpack("<I", raw[len(_MAGIC):len(_MAGIC) + 4])
    start = len(_MAGIC) + 4
    try:
        header = json.loads(raw[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    return header, start + n


def load_checkpoint(path) -> EmbeddingNet:
    raw = Path(path).read_bytes()
    header, offset = _parse_header(raw, path)
    try:
        net = EmbeddingNet(header["architecture"], header["freq_bins"], header["hidden"],
                           header["embed_dim"], header["layers"], header["combine"],
                           header["output_activation"], header["seed"])
    except KeyError as exc:
        raise FormatError(f"{path}: checkpoint header lacks {exc}") from exc
    net.epoch = header.get("epoch", 0)
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        end = offset + 8 * size
        if end > len(raw):
            raise FormatError(f"{path}: truncated tensor {name}")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
        if name == "norm.mean":
            net.input_mean = arr
        elif name == "norm.std":
            net.input_std = arr
        else:
            net.params[name] = arr
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    net.check_shapes()
    return net
