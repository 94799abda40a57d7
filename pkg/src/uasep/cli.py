"""Command line entry point: ``uasep <gen|separate|train|eval|experiment>``.

Every subcommand accepts ``--seed`` (default ``$UASEP_SEED`` or 0) and
``--config FILE.json`` whose keys override the flag defaults, and prints
the effective configuration before running.

Exit codes: 0 success, 2 usage or configuration error, 3 data or format
error, 4 acceptance-gate failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConfigurationError, DegenerateInputError, FormatError, ParameterError,
                     TrainingDivergedError, UndefinedMetricError)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA, EXIT_GATE = 0, 1, 2, 3, 4
GEN_PRESETS = ("lfm3", "synthetic")

logger = logging.getLogger("uasep")


def _env_seed() -> int:
    raw = os.environ.get("UASEP_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"UASEP_SEED must be an integer, got {raw!r}") from None


def _snr(text: str) -> float:
    if text.lower() in ("inf", "none", "clean"):
        return math.inf
    return float(text)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: $UASEP_SEED or 0)")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON file whose keys override flag defaults")
    p.add_argument("-v", "--verbose", action="store_true")


def _stft_flags(p: argparse.ArgumentParser):
    p.add_argument("--frame-ms", type=float, default=32.0)
    p.add_argument("--hop-ms", type=float, default=8.0)
    p.add_argument("--frame-len", type=int, default=None,
                   help="frame length in samples (overrides --frame-ms)")
    p.add_argument("--hop", type=int, default=None, help="hop in samples (overrides --hop-ms)")
    p.add_argument("--window", default="hann",
                   choices=("hann", "sqrt_hann", "hamming", "rect"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uasep", description="Binary time-frequency masking and deep-embedding separation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="synthesize sources and mixtures as WAV files")
    g.add_argument("--preset", default="lfm3", choices=GEN_PRESETS)
    g.add_argument("--outdir", type=Path, default=Path("gen_out"))
    g.add_argument("--snr", type=_snr, default=math.inf, help="dB, or 'inf' for no noise")
    g.add_argument("--n-obs", type=int, default=2, help="observations for the lfm3 preset")
    g.add_argument("--n-sources", type=int, default=3, help="sources for the synthetic preset")
    g.add_argument("--sample-rate", type=int, default=8000, help="synthetic preset only")
    g.add_argument("--bit-depth", type=int, default=32, choices=(16, 32))
    _common(g)

    s = sub.add_parser("separate", help="separate one mixture (one WAV per sensor)")
    s.add_argument("inputs", nargs="+", type=Path)
    s.add_argument("--method", default="classic", choices=("classic", "deep"))
    s.add_argument("--k", default="auto", help="cluster count or 'auto' (= --n-sources)")
    s.add_argument("--n-sources", type=int, default=None)
    s.add_argument("--noise-cluster", action="store_true",
                   help="use one extra cluster and drop the noise-like estimate")
    s.add_argument("--checkpoint", type=Path, default=None)
    s.add_argument("--references", nargs="*", type=Path, default=None,
                   help="source WAVs; writes report.csv/report.json")
    s.add_argument("--floor-db", type=float, default=-40.0)
    s.add_argument("--d-max", type=float, default=1.0)
    s.add_argument("--sound-speed", type=float, default=1500.0)
    s.add_argument("--outdir", type=Path, default=Path("separate_out"))
    _stft_flags(s)
    _common(s)

    t = sub.add_parser("train", help="train an embedding network")
    t.add_argument("--dataset", type=Path, default=None,
                   help="dataset JSON (default: built-in synthetic pool)")
    t.add_argument("--arch", default="bilstm", choices=("rnn", "lstm", "bilstm"))
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--init-only", action="store_true", help="write the initial network and stop")
    t.add_argument("--hidden", type=int, default=None)
    t.add_argument("--embed-dim", type=int, default=None)
    t.add_argument("--layers", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--paper-scale", action="store_true")
    t.add_argument("--outdir", type=Path, default=Path("train_out"))
    _common(t)

    e = sub.add_parser("eval", help="score estimate WAVs against reference WAVs")
    e.add_argument("--estimates", nargs="+", type=Path, required=True)
    e.add_argument("--references", nargs="+", type=Path, required=True)
    e.add_argument("--edge", type=int, default=0, help="samples excluded at each end")
    e.add_argument("--out", type=Path, default=None, help="report path (.csv; .json alongside)")
    _common(e)

    x = sub.add_parser("experiment", help="run an experiment preset")
    x.add_argument("preset", help="table4, table5, table6, fig9, fig10 or fig11")
    x.add_argument("--outdir", type=Path, default=None)
    x.add_argument("--n-seeds", type=int, default=10)
    x.add_argument("--epochs", type=int, default=None)
    x.add_argument("--models-dir", type=Path, default=None,
                   help="cache of trained networks shared between presets")
    x.add_argument("--paper-scale", action="store_true")
    _common(x)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse twice so keys from ``--config`` act as defaults under explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            parser.error(f"config {args.config} is not valid JSON: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        for action in sub._actions:
            if action.dest in cfg and action.type is not None and cfg[action.dest] is not None:
                v = cfg[action.dest]
                cfg[action.dest] = [action.type(i) for i in v] if isinstance(v, list) \
                    else action.type(v) if action.type in (Path, _snr) else v
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = _env_seed()
    return args


def _effective(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, list):
            v = [str(i) if isinstance(i, Path) else i for i in v]
        elif isinstance(v, float) and math.isinf(v):
            v = "inf"
        out[k] = v
    return out


def _stft_config(args, sample_rate: int):
    from .tfr import StftConfig
    if args.frame_len is not None or args.hop is not None:
        frame_len = args.frame_len or StftConfig(args.frame_ms).frame_len(sample_rate)
        hop = args.hop or StftConfig(args.frame_ms, args.hop_ms).hop(sample_rate)
        return StftConfig.from_samples(frame_len, hop, sample_rate, args.window)
    return StftConfig(args.frame_ms, args.hop_ms, args.window)


# --- subcommands -----------------------------------------------------------

def cmd_gen(args) -> int:
    from .signals import MixSpec, TimeSignal, mix, random_mixing_matrix, write_wav
    out = args.outdir
    out.mkdir(parents=True, exist_ok=True)
    if args.preset == "lfm3":
        from .experiments import lfm_sources
        sources = lfm_sources()
        A = random_mixing_matrix(args.n_obs, len(sources), args.seed)
        observations = mix(sources, MixSpec(mixing_matrix=A, noise_snr_db=args.snr),
                           seed=args.seed)
        np.savetxt(out / "mixing_matrix.csv", A, delimiter=",", fmt="%.17g")
    else:
        from .experiments import DESK, benchmark_case
        scale = replace(DESK, sample_rate=args.sample_rate)
        case = benchmark_case(scale, args.n_sources, args.snr, args.seed)
        sources = case.references
        observations = case.observations
    for i, s in enumerate(sources):
        write_wav(out / f"source_{i}.wav", s, args.bit_depth)
    for i, o in enumerate(observations):
        # 16-bit output needs headroom after mixing
        peak = float(np.max(np.abs(o.samples)))
        o = o if args.bit_depth == 32 or peak <= 1 else TimeSignal(o.samples / peak,
                                                                     o.sample_rate)
        write_wav(out / f"mixture_{i}.wav", o, args.bit_depth)
    print(f"wrote {len(sources)} sources and {len(observations)} mixtures to {out}")
    return EXIT_OK


def cmd_separate(args) -> int:
    from .features import FeatureConfig
    from .metrics import align_and_report
    from .pipeline import PipelineConfig, discard_noise_cluster, separate
    from .signals import read_wav
    from .tfr import stft
    obs = [read_wav(p) for p in args.inputs]
    fs = obs[0].sample_rate
    n_sources = args.n_sources
    if n_sources is None and args.references:
        n_sources = len(args.references)
    k = args.k if args.k == "auto" else int(args.k)
    if args.noise_cluster:
        base = n_sources if k == "auto" else k
        if base is None:
            raise ConfigurationError("--noise-cluster needs --n-sources, --k or --references")
        k = base + 1
    stft_cfg = _stft_config(args, fs)
    cfg = PipelineConfig(stft=stft_cfg, method=args.method, k_clusters=k, n_sources=n_sources,
                         checkpoint=str(args.checkpoint) if args.checkpoint else None,
                         seed=args.seed, floor_db=args.floor_db,
                         features=FeatureConfig(d_max=args.d_max, sound_speed=args.sound_speed,
                                                floor_db=args.floor_db))
    refs = [read_wav(p) for p in args.references] if args.references else None
    res = separate(obs if len(obs) > 1 else obs[0], cfg)
    if args.noise_cluster:
        res = discard_noise_cluster(res, refs)
    from .pipeline import write_outputs
    write_outputs(res, args.outdir)
    print(f"wrote {len(res.estimates)} estimates to {args.outdir}")
    if refs:
        specs = [stft(r, stft_cfg) for r in refs]
        rep = align_and_report(res.estimates, refs, res.masks, specs)
        rep.to_csv(args.outdir / "report.csv")
        rep.to_json(args.outdir / "report.json")
        _print_report(rep)
    return EXIT_OK


def cmd_train(args) -> int:
    from .embednet import save_checkpoint
    from .experiments import DESK, PAPER, training_spec
    from .training import _checkpoint_extra, init_network, load_dataset_spec, train
    scale = PAPER if args.paper_scale else DESK
    cfg = replace(scale.train, seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if args.lr is not None:
        cfg = replace(cfg, learning_rate=args.lr)
    if args.init_only:
        cfg = replace(cfg, epochs=0)
    spec = load_dataset_spec(args.dataset) if args.dataset else training_spec(scale, args.seed)
    hidden = args.hidden or scale.hidden
    embed_dim = args.embed_dim or scale.embed_dim
    layers = args.layers or scale.layers
    args.outdir.mkdir(parents=True, exist_ok=True)
    if args.init_only:
        net = init_network(spec, cfg, args.arch, hidden, embed_dim, layers)
        path = args.outdir / "final.uanet"
        save_checkpoint(path, net, _checkpoint_extra(spec, cfg))
        print(f"wrote initial network to {path}")
        return EXIT_OK
    res = train(spec, cfg, args.arch, args.outdir, hidden=hidden, embed_dim=embed_dim,
                layers=layers)
    means = res.epoch_means()
    if means:
        print(f"final epoch mean loss {means[-1]:.6f}")
    print(f"wrote {res.checkpoint}")
    return EXIT_OK


def _print_report(rep):
    print("source  xi       psr      sir_m")
    for row in rep.rows():
        print(f"{row['source']:<7d} {row['xi']:.4f}   {row['psr']:.4f}   {row['sir_m']:.4g}")
    print(f"mean xi {rep.mean_xi:.4f}  permutation {list(rep.permutation)}")


def cmd_eval(args) -> int:
    from .metrics import align_and_report
    from .signals import read_wav
    est = [read_wav(p) for p in args.estimates]
    refs = [read_wav(p) for p in args.references]
    rep = align_and_report(est, refs, edge=args.edge)
    print("xi matrix (rows: estimates, columns: references)")
    for row in rep.xi_matrix:
        print("  " + "  ".join(f"{v:.4f}" for v in row))
    print(f"permutation {list(rep.permutation)}  mean xi {rep.mean_xi:.4f}")
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        rep.to_csv(args.out)
        rep.to_json(args.out.with_suffix(".json"))
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiments import DESK, PAPER, PRESETS, run_preset
    if args.preset not in PRESETS:
        print(f"uasep experiment: unknown preset {args.preset!r}; "
              f"choose from {', '.join(PRESETS)}", file=sys.stderr)
        return EXIT_USAGE
    outdir = args.outdir or Path("experiments") / args.preset
    result = run_preset(args.preset, outdir, seed=args.seed, n_seeds=args.n_seeds,
                        scale=PAPER if args.paper_scale else DESK, epochs=args.epochs,
                        models_dir=args.models_dir)
    for row in result.summary:
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in row.items()))
    status = "PASS" if result.passed else "FAIL"
    print(f"gate [{result.gate}]: {status}")
    return EXIT_OK if result.passed else EXIT_GATE


COMMANDS = {"gen": cmd_gen, "separate": cmd_separate, "train": cmd_train, "eval": cmd_eval,
            "experiment": cmd_experiment}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ParameterError as exc:
        print(f"uasep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    print("effective config: " + json.dumps(_effective(args), sort_keys=True))
    try:
        return COMMANDS[args.command](args)
    except (ParameterError, ConfigurationError) as exc:
        print(f"uasep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DegenerateInputError, UndefinedMetricError, FileNotFoundError) as exc:
        print(f"uasep: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"uasep: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
