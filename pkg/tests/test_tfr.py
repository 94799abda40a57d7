import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uasep.errors import ConfigurationError, FormatError, ParameterError
from uasep.masking import BinaryMask, apply_mask
from uasep.signals import TimeSignal
from uasep.tfr import (Spectrogram, StftConfig, WINDOW_KINDS, check_cola, dump_spectrogram,
                       istft, load_spectrogram, log_magnitude, ola_gain, read_pgm, stft,
                       write_magnitude_csv, write_spectrogram_pgm)


def _noise(n, fs=8000, seed=0):
    return TimeSignal(np.random.default_rng(seed).standard_normal(n), fs)


def _rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_full_scale_frame_sizes_at_44k1():
    cfg = StftConfig(32, 8)
    assert cfg.frame_len(44100) == 1411
    assert cfg.hop(44100) == 353
    S = stft(_noise(44100, 44100), cfg)
    assert S.n_bins == 706


def test_zero_signal_zero_spectrogram():
    S = stft(TimeSignal(np.zeros(4000), 8000), StftConfig())
    assert np.all(S.bins == 0)
    assert np.all(istft(S).samples == 0)


def test_bin_centred_sinusoid_rect_window():
    fs, n = 8000, 256
    k = 20
    t = np.arange(4 * fs) / fs
    x = TimeSignal(np.cos(2 * np.pi * k * fs / n * t), fs)
    S = stft(x, StftConfig.from_samples(n, 64, fs, "rect"))
    # interior frames are fully inside the signal
    mag = np.abs(S.bins[10:-10])
    leak = np.delete(mag, k, axis=1).max(axis=1)
    assert np.all(20 * np.log10(leak / mag[:, k]) < -60)
    # direct DFT of one frame as the oracle
    frame = x.samples[10 * 64 - (n - 64):10 * 64 - (n - 64) + n]
    direct = np.array([np.sum(frame * np.exp(-2j * np.pi * f * np.arange(n) / n))
                       for f in range(n // 2 + 1)])
    np.testing.assert_allclose(S.bins[10], direct, atol=1e-9)


@pytest.mark.parametrize("kind", WINDOW_KINDS)
@pytest.mark.parametrize("fs", [8000, 44100])
def test_round_trip_every_window(kind, fs):
    x = _noise(fs // 2, fs, seed=3)
    S = stft(x, StftConfig(32, 8, kind))
    if fs == 44100 and kind in ("hamming", "rect"):
        # 1411/353 is not an exact quarter hop; only the Hann family stays near-COLA
        with pytest.raises(ConfigurationError):
            istft(S)
        return
    y = istft(S)
    assert len(y) == len(x)
    assert _rel_err(y.samples, x.samples) < 1e-6


def test_round_trip_512_preset():
    fs = 50000
    x = _noise(fs, fs, seed=4)
    y = istft(stft(x, StftConfig.from_samples(512, 128, fs, "hamming")))
    assert _rel_err(y.samples, x.samples) < 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(300, 3000))
def test_round_trip_property(seed, n):
    x = _noise(n, 8000, seed)
    y = istft(stft(x, StftConfig()))
    assert _rel_err(y.samples, x.samples) < 1e-6


def test_all_ones_mask_equals_plain_round_trip():
    S = stft(_noise(3000), StftConfig())
    ones = BinaryMask(np.ones(S.shape))
    np.testing.assert_array_equal(istft(apply_mask(ones, S)).samples, istft(S).samples)


def test_non_cola_window_rejected():
    # Hamming at 25% overlap is far from constant overlap-add
    with pytest.raises(ConfigurationError):
        check_cola("hamming", 512, 384)
    S = stft(_noise(4000, 50000), StftConfig.from_samples(512, 384, 50000, "hamming"))
    with pytest.raises(ConfigurationError):
        istft(S)


def test_ola_gain_hann():
    assert ola_gain("hann", 256, 64) == pytest.approx(2.0)
    assert ola_gain("sqrt_hann", 1411, 353) == pytest.approx(0.5 * 1411 / 353)
    assert ola_gain("hamming", 512, 128) == pytest.approx(2.16)


def test_short_signal_rejected():
    with pytest.raises(ParameterError):
        stft(TimeSignal(np.ones(100), 8000), StftConfig())


def test_config_validation():
    with pytest.raises(ParameterError):
        StftConfig(8, 8)
    with pytest.raises(ParameterError):
        StftConfig(32, 8, "kaiser")


def test_linearity():
    cfg = StftConfig()
    x, y = _noise(2000, seed=1), _noise(2000, seed=2)
    a, b = 1.7, -0.4
    lhs = stft(TimeSignal(a * x.samples + b * y.samples, 8000), cfg).bins
    rhs = a * stft(x, cfg).bins + b * stft(y, cfg).bins
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-9


def test_energy_ratio_stable_across_inputs():
    cfg = StftConfig()
    ratios = []
    for seed in range(5):
        x = _noise(16000, seed=seed)
        ratios.append(stft(x, cfg).energy() / np.sum(x.samples ** 2))
    ratios = np.array(ratios)
    assert np.ptp(ratios) / ratios.mean() < 0.01


def test_log_magnitude_values():
    S = Spectrogram(np.array([[1.0, 0.0, 10.0]]), 4, 2, 8000)
    np.testing.assert_allclose(log_magnitude(S, -120), [[0.0, -120.0, 20.0]])


def test_dump_load_roundtrip(tmp_path):
    S = stft(_noise(3000), StftConfig(window_kind="sqrt_hann"))
    dump_spectrogram(tmp_path / "s.uaspec", S)
    raw = (tmp_path / "s.uaspec").read_bytes()
    assert raw[:7] == b"UASPEC1"
    assert len(raw) == 7 + 5 * 4 + 1 + S.n_frames * S.n_bins * 8
    L = load_spectrogram(tmp_path / "s.uaspec")
    assert L.shape == S.shape and L.window_kind == "sqrt_hann"
    assert (L.frame_len, L.hop, L.sample_rate) == (S.frame_len, S.hop, S.sample_rate)
    np.testing.assert_allclose(L.bins, S.bins.astype(np.complex64))


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOTASPEC")
    with pytest.raises(FormatError):
        load_spectrogram(tmp_path / "bad")
    S = stft(_noise(3000), StftConfig())
    dump_spectrogram(tmp_path / "s", S)
    (tmp_path / "t").write_bytes((tmp_path / "s").read_bytes()[:-3])
    with pytest.raises(FormatError):
        load_spectrogram(tmp_path / "t")


def test_figure_exports(tmp_path):
    S = stft(_noise(3000), StftConfig())
    write_spectrogram_pgm(tmp_path / "s.pgm", S)
    img = read_pgm(tmp_path / "s.pgm")
    assert img.shape == (S.n_bins, S.n_frames)
    write_magnitude_csv(tmp_path / "m.csv", S)
    mag = np.loadtxt(tmp_path / "m.csv", delimiter=",")
    np.testing.assert_allclose(mag, np.abs(S.bins), rtol=1e-8)
