"""Acceptance criteria 1-9, one PASS/FAIL line each.

Run with pytest (``pytest tests/test_acceptance.py -v -s``) or directly
(``python tests/test_acceptance.py``). The deep-path criteria train the
rnn, lstm and bilstm desk models once per session; set
``UASEP_ACCEPTANCE_MODELS`` to a directory to keep and reuse them.
"""

import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from uasep.embednet import EmbeddingNet, dc_loss, dc_loss_dense
from uasep.experiments import (DESK, lfm_condition, model_factory, run_fig9, run_fig10,
                               run_fig11, run_table4, table4_gate)
from uasep.masking import BinaryMask, LabelMatrix
from uasep.metrics import align_and_report, psr, similarity, sir_mask
from uasep.signals import TimeSignal
from uasep.tfr import Spectrogram, StftConfig, istft, stft

SEEDS = list(range(10))
RESULTS: dict = {}


def report(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line, flush=True)
    return passed


# --- criteria ----------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    worst = 0.0
    cases = [(8000, StftConfig(32, 8, "hann")),
             (50000, StftConfig.from_samples(512, 128, 50000, "hamming"))]
    for fs, cfg in cases:
        for seed in range(5):
            x = np.random.default_rng(seed).standard_normal(fs)
            y = istft(stft(TimeSignal(x, fs), cfg)).samples
            n = cfg.frame_len(fs)
            a, b = y[n:-n], x[n:-n]
            worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(b))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 5
    return report(1, ok, f"worst interior rel error {worst:.2e}, {elapsed:.2f} s")


def criterion_2():
    t0 = time.perf_counter()
    rep = lfm_condition(math.inf, 0)
    elapsed = time.perf_counter() - t0
    ok = rep.mean_xi >= 0.90 and rep.mean_psr >= 0.90 and elapsed < 60
    return report(2, ok, f"mean xi {rep.mean_xi:.4f}, mean PSR {rep.mean_psr:.4f}, "
                         f"{elapsed:.1f} s")


def criterion_3():
    t0 = time.perf_counter()
    result = run_table4(SEEDS)
    ok, d = table4_gate(result.summary)
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 600
    return report(3, ok, f"largest xi drop {d['largest_xi_drop']:.4f}, largest PSR drop "
                         f"{d['largest_psr_drop']:.4f}, SIR_M clean/0 dB "
                         f"{d['sir_m_ratio_clean_vs_lowest_snr']:.1f}x, {elapsed:.0f} s")


def criterion_4():
    rng = np.random.default_rng(0)
    ok = True
    worst = 0.0
    for C in (4, 3):
        Y = np.eye(C)[rng.integers(0, C, 50)]
        ok &= dc_loss(Y, Y) == 0.0
        for _ in range(20):
            V = rng.standard_normal((50, 4))
            Yc = np.eye(C)[rng.integers(0, C, 50)]
            P = np.eye(C)[rng.permutation(C)]
            ok &= dc_loss(V, Yc @ P) == dc_loss(V, Yc)
            a, b = dc_loss(V, Yc), dc_loss_dense(V, Yc)
            worst = max(worst, abs(a - b) / abs(b))
    ok = bool(ok) and worst < 1e-8
    return report(4, ok, f"zero and permutation checks exact, expanded vs direct {worst:.1e}")


def _numeric_grad(f, p, h=1e-5):
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        up = f()
        p[idx] = old - h
        down = f()
        p[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def criterion_5():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    F, H, K, T = 6, 5, 3, 4
    net = EmbeddingNet("bilstm", F, H, K, 1, seed=1)
    frames = rng.standard_normal((1, T, F))
    c = rng.integers(0, 2, T * F)
    labels = [LabelMatrix(np.eye(2)[c], np.ones(T * F))]
    _, grads, _ = net.loss_and_grads(frames, labels)
    worst = 0.0
    for name, p in net.params.items():
        num = _numeric_grad(lambda: net.loss_and_grads(frames, labels)[0], p)
        scale = max(np.linalg.norm(num), np.linalg.norm(grads[name]), 1e-12)
        worst = max(worst, np.linalg.norm(num - grads[name]) / scale)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 120
    return report(5, ok, f"{len(net.params)} tensors, worst rel error {worst:.1e}, "
                         f"{elapsed:.1f} s")


def criterion_6(models):
    t0 = time.perf_counter()
    result = run_fig9(models, SEEDS, DESK)
    d = result.details
    elapsed = time.perf_counter() - t0
    ok = result.passed
    return report(6, ok, f"trained xi {d['trained_xi']:.4f} vs random init "
                         f"{d['random_init_xi']:.4f} (two sources, 40 dB), {elapsed:.0f} s "
                         f"after training")


def criterion_7(models):
    result = run_fig10(models, SEEDS, DESK)
    d = result.details
    return report(7, result.passed, f"mean xi k=m {d['xi_k_m']:.4f}, k=m+1 {d['xi_k_m1']:.4f}, "
                                    f"margin {d['margin']:+.4f}")


def criterion_8(models):
    result = run_fig11(models, SEEDS, DESK)
    sir = result.details["mean_sir_m_db"]
    raw = {row["architecture"]: row["sir_m_mean"] for row in result.summary
           if row["snr_db"] == "all"}
    order = "holds" if result.details["full_ordering_holds"] else "does not hold"
    return report(8, result.passed,
                  "mean SIR_M dB " + ", ".join(f"{a} {sir[a]:.2f}" for a in sir)
                  + "; linear " + ", ".join(f"{a} {raw[a]:.0f}" for a in raw)
                  + f"; full ordering {order}")


def criterion_9():
    t0 = time.perf_counter()
    ok = True
    X = np.zeros((4, 5), dtype=complex)
    X[1:3, 2] = 3.0
    sup = np.zeros((4, 5))
    sup[:, 1:4] = 1
    ok &= psr(BinaryMask(sup), Spectrogram(X, 8, 2, 8000)) == 1.0
    rng = np.random.default_rng(0)
    y, x = rng.standard_normal(256), rng.standard_normal(256)
    for a in (-7.5, 1e-3, 2.0, 1e3):
        ok &= abs(similarity(a * y, x) - similarity(y, x)) < 1e-12
    T = np.zeros((2, 4), dtype=complex)
    V = np.zeros((2, 4), dtype=complex)
    T[:, :2] = 1
    V[:, 2:] = 1
    masks = [BinaryMask(np.abs(T) > 0), BinaryMask(np.abs(V) > 0)]
    specs = [Spectrogram(T, 6, 2, 8000), Spectrogram(V, 6, 2, 8000)]
    ok &= sir_mask(masks[0], specs[0], specs[1]) == math.inf
    t = np.arange(64)
    refs = [TimeSignal(np.sin(t), 8000), TimeSignal(np.cos(3 * t), 8000)]
    rep = align_and_report(refs, refs, masks, specs)
    ok &= rep.sir_m == [math.inf, math.inf] and rep.mean_sir_m == math.inf
    ok &= rep.sir_gain_db == [math.inf, math.inf]
    elapsed = time.perf_counter() - t0
    ok = bool(ok) and elapsed < 1
    return report(9, ok, f"PSR superset, xi scale invariance, SIR inf propagation, "
                         f"{elapsed * 1000:.0f} ms")


# --- pytest wiring -----------------------------------------------------------

def _models_dir(tmp_root):
    env = os.environ.get("UASEP_ACCEPTANCE_MODELS")
    return Path(env) if env else Path(tmp_root)


@pytest.fixture(scope="module")
def desk_models(tmp_path_factory):
    """Desk-scale rnn, lstm and bilstm trained for 30 epochs, shared by 6-8."""
    return model_factory(DESK, seed=0, cache_dir=_models_dir(tmp_path_factory.mktemp("models")))


@pytest.fixture
def show(capsys):
    with capsys.disabled():
        yield


def test_criterion_1_stft_round_trip(show):
    assert criterion_1()


def test_criterion_2_lfm_no_noise(show):
    assert criterion_2()


@pytest.mark.slow
def test_criterion_3_table4_trend(show):
    assert criterion_3()


def test_criterion_4_loss_identities(show):
    assert criterion_4()


def test_criterion_5_bptt_gradients(show):
    assert criterion_5()


@pytest.mark.slow
def test_criterion_6_desk_learning(desk_models, show):
    assert criterion_6(desk_models)


@pytest.mark.slow
def test_criterion_7_noise_cluster(desk_models, show):
    assert criterion_7(desk_models)


@pytest.mark.slow
def test_criterion_8_architecture_ordering(desk_models, show):
    assert criterion_8(desk_models)


def test_criterion_9_metric_units(show):
    assert criterion_9()


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        models = model_factory(DESK, seed=0, cache_dir=_models_dir(tmp))
        checks = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                  lambda: criterion_6(models), lambda: criterion_7(models),
                  lambda: criterion_8(models), criterion_9]
        results = [bool(check()) for check in checks]
    print(f"{sum(results)}/{len(results)} criteria passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
