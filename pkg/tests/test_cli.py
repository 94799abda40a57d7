import json
import subprocess
import sys

import numpy as np
import pytest

from uasep.cli import main

TINY_DATASET = {"synthetic": {"n_per_family": 2, "duration": 0.5}, "max_mix": 2,
                "mixtures_per_epoch": 2, "clip_seconds": 0.5}


@pytest.fixture
def lfm_dir(tmp_path):
    out = tmp_path / "gen"
    assert main(["gen", "--preset", "lfm3", "--outdir", str(out)]) == 0
    return out


def test_gen_writes_sources_and_mixtures(lfm_dir):
    names = sorted(p.name for p in lfm_dir.iterdir())
    assert names == ["mixing_matrix.csv", "mixture_0.wav", "mixture_1.wav",
                     "source_0.wav", "source_1.wav", "source_2.wav"]
    assert np.loadtxt(lfm_dir / "mixing_matrix.csv", delimiter=",").shape == (2, 3)


def test_eval_identity_has_unit_diagonal(lfm_dir, tmp_path, capsys):
    srcs = [str(lfm_dir / f"source_{i}.wav") for i in range(3)]
    out = tmp_path / "rep.csv"
    assert main(["eval", "--estimates", *srcs, "--references", *srcs, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "permutation [0, 1, 2]" in text
    data = json.loads(out.with_suffix(".json").read_text())
    np.testing.assert_allclose([s["xi"] for s in data["sources"]], 1.0)


def test_separate_lfm_with_references(lfm_dir, tmp_path):
    out = tmp_path / "sep"
    argv = ["separate", str(lfm_dir / "mixture_0.wav"), str(lfm_dir / "mixture_1.wav"),
            "--frame-len", "512", "--hop", "128", "--window", "hamming",
            "--references", *[str(lfm_dir / f"source_{i}.wav") for i in range(3)],
            "--outdir", str(out)]
    assert main(argv) == 0
    assert (out / "estimate_2.wav").exists()
    data = json.loads((out / "report.json").read_text())
    assert min(s["xi"] for s in data["sources"]) > 0.9


def test_train_zero_epochs_matches_init_only(tmp_path):
    ds = tmp_path / "ds.json"
    ds.write_text(json.dumps(TINY_DATASET))
    common = ["--dataset", str(ds), "--arch", "rnn", "--hidden", "6", "--embed-dim", "3",
              "--layers", "1", "--seed", "3"]
    assert main(["train", *common, "--epochs", "0", "--outdir", str(tmp_path / "a")]) == 0
    assert main(["train", *common, "--init-only", "--outdir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "final.uanet").read_bytes()
    b = (tmp_path / "b" / "final.uanet").read_bytes()
    assert a == b


def test_exit_codes(tmp_path, lfm_dir):
    assert main(["experiment", "no_such_preset"]) == 2
    assert main(["separate", str(tmp_path / "missing.wav"), "--k", "1"]) == 3
    assert main(["gen", "--bogus"]) == 2
    assert main([]) == 2
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav file at all")
    assert main(["eval", "--estimates", str(bad), "--references", str(bad)]) == 3
    # one channel with k > 1 is a configuration problem
    assert main(["separate", str(lfm_dir / "mixture_0.wav"), "--k", "2",
                 "--outdir", str(tmp_path / "o")]) == 2


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n-obs": 3, "outdir": str(tmp_path / "g")}))
    assert main(["gen", "--config", str(cfg)]) == 0
    assert (tmp_path / "g" / "mixture_2.wav").exists()
    assert '"n_obs": 3' in capsys.readouterr().out
    # explicit flags beat config values
    assert main(["gen", "--config", str(cfg), "--n-obs", "2",
                 "--outdir", str(tmp_path / "h")]) == 0
    assert not (tmp_path / "h" / "mixture_2.wav").exists()
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert main(["gen", "--config", str(cfg)]) == 2


def test_seed_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("UASEP_SEED", "11")
    assert main(["gen", "--outdir", str(tmp_path / "a")]) == 0
    assert '"seed": 11' in capsys.readouterr().out
    assert main(["gen", "--outdir", str(tmp_path / "b"), "--seed", "11"]) == 0
    assert (tmp_path / "a" / "mixture_0.wav").read_bytes() == \
        (tmp_path / "b" / "mixture_0.wav").read_bytes()


def test_experiment_csv_byte_identical(tmp_path):
    for name in ("a", "b"):
        rc = main(["experiment", "table4", "--n-seeds", "1", "--outdir", str(tmp_path / name)])
        assert rc in (0, 4)
    for f in ("conditions.csv", "summary.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "uasep.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "0.1.0" in res.stdout
