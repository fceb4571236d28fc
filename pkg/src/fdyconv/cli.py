"""Command-line interface.

Subcommands: featurize, infer, verify, gradcheck, bench, eval, train-toy.
Reports are plain `key=value` lines. Exit codes: 0 success, 1 a
verification/metric gate failed, 2 usage or I/O error. Flags override
entries from an optional flat key=value config file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import frontend, model as model_mod, postprocess, serialization, suites
from .errors import ConfigError, DecodeError, ShapeError, WeightFileError

DTYPES = {"f32": np.float32, "f64": np.float64}

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _emit(key, value):
    print(f"{key}={value}")


def _read_config_file(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _apply_config_file(args):
    if not getattr(args, "config", None):
        return
    file_cfg = _read_config_file(args.config)
    for key, value in file_cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            continue
        # flags win: only fill values the command line left at default
        if attr in args._explicit:
            continue
        current = getattr(args, attr)
        if isinstance(current, int):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        setattr(args, attr, value)


class _TrackingParser(argparse.ArgumentParser):
    """Records which destinations were set explicitly on the command line."""

    def parse_args(self, argv=None, namespace=None):
        args = super().parse_args(argv, namespace)
        explicit = set()
        argv = sys.argv[1:] if argv is None else argv
        for action in self._actions:
            for opt in action.option_strings:
                if any(a == opt or a.startswith(opt + "=") for a in argv):
                    explicit.add(action.dest)
        args._explicit = explicit
        return args


def _default_labels(n):
    return [f"class{idx}" for idx in range(n)]


def cmd_featurize(args):
    cfg = frontend.MelConfig()
    inputs = []
    for raw in args.inputs:
        p = Path(raw)
        if p.is_dir():
            inputs.extend(sorted(p.glob("*.wav")))
        else:
            inputs.append(p)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not inputs:
        print("warning: no input files", file=sys.stderr)
        return EXIT_OK
    status = EXIT_OK
    for p in sorted(inputs):
        try:
            clip = frontend.load_wav(p)
            feats = frontend.featurize_clip(clip, cfg).astype(DTYPES[args.dtype])
        except (DecodeError, ConfigError, ShapeError, OSError) as exc:
            print(f"error: {p}: {exc}", file=sys.stderr)
            status = EXIT_USAGE
            continue
        out_path = out_dir / (p.stem + ".tf")
        serialization.save_tensor(out_path, feats, name="logmel")
        _emit("file", out_path)
        _emit("shape", "x".join(str(s) for s in feats.shape))
    return status


def cmd_verify(args):
    results = suites.run_verify(args.seed, args.trials, DTYPES[args.dtype], fault=args.inject_fault or None)
    all_ok = True
    for r in results:
        _emit("suite", r.name)
        _emit("max_error", f"{r.max_error:.3e}")
        _emit("bound", f"{r.bound:.3e}")
        _emit("pass", str(r.passed).lower())
        if r.detail:
            _emit("detail", r.detail)
        if not r.passed:
            all_ok = False
            _emit("first_failure", f"{r.name} seed={args.seed}")
    return EXIT_OK if all_ok else EXIT_FAIL


def cmd_gradcheck(args):
    worst = suites.gradcheck_fdy(seed=args.seed)
    overall = 0.0
    for group, err in worst.items():
        _emit(f"rel_error.{group}", f"{err:.3e}")
        overall = max(overall, err)
    _emit("worst_rel_error", f"{overall:.3e}")
    _emit("bound", "1e-3")
    _emit("pass", str(overall < 1e-3).lower())
    return EXIT_OK if overall < 1e-3 else EXIT_FAIL


def cmd_bench(args):
    times = suites.run_bench(preset=args.preset, repeats=args.repeats, seed=args.seed, dtype=DTYPES[args.dtype])
    for path_name, seconds in times.items():
        _emit(f"median_seconds.{path_name}", f"{seconds:.6f}")
    ratio = times["efficient"] / times["naive"]
    _emit("efficient_over_naive", f"{ratio:.4f}")
    if ratio > 0.5:
        print("warning: efficient/naive ratio above 0.5 (hardware-dependent)", file=sys.stderr)
    return EXIT_OK


def cmd_infer(args):
    cfg = model_mod.default_config()
    mdl = model_mod.build_model(cfg, seed=args.seed, dtype=DTYPES[args.dtype])
    if args.weights:
        try:
            model_mod.load_weights(mdl, args.weights)
        except (WeightFileError, OSError) as exc:
            print(f"error: {args.weights}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    labels = _default_labels(cfg.class_count)
    feature_paths = []
    for raw in args.features:
        p = Path(raw)
        if p.is_dir():
            feature_paths.extend(sorted(p.glob("*.tf")))
        else:
            feature_paths.append(p)
    events = []
    for p in sorted(feature_paths):
        try:
            feats = serialization.load_tensor(p).astype(DTYPES[args.dtype])
        except (WeightFileError, OSError) as exc:
            print(f"error: {p}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        scores = mdl.forward(feats[None, None, :, :])[0]
        # clip duration maps onto the output frame grid
        hop = (frontend.MelConfig().hop_length / frontend.MelConfig().sample_rate) * feats.shape[1] / scores.shape[1]
        post = postprocess.PostConfig(threshold=args.threshold, frame_hop_seconds=hop)
        events.extend(postprocess.apply_postprocessing(scores, labels, post, p.stem))
    postprocess.write_events_tsv(args.out, events)
    _emit("events", len(events))
    _emit("out", args.out)
    return EXIT_OK


def cmd_eval(args):
    try:
        ref = postprocess.read_events_tsv(args.ref)
        hyp = postprocess.read_events_tsv(args.hyp)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cb_per_class, cb_macro = postprocess.collar_f1(ref, hyp)
    ib_per_class, ib_macro = postprocess.intersection_f1(ref, hyp)
    for lab in sorted(cb_per_class):
        _emit(f"cb_f1.{lab}", f"{cb_per_class[lab]:.4f}")
    for lab in sorted(ib_per_class):
        _emit(f"ib_f1.{lab}", f"{ib_per_class[lab]:.4f}")
    _emit("macro_cb_f1", f"{cb_macro:.4f}")
    _emit("macro_ib_f1", f"{ib_macro:.4f}")
    return EXIT_OK


def cmd_train_toy(args):
    if args.preset != "band":
        print(f"error: unknown preset {args.preset!r}", file=sys.stderr)
        return EXIT_USAGE
    cfg = model_mod.band_config()
    mdl = model_mod.build_model(cfg, seed=args.seed)
    dataset = model_mod.make_band_dataset(64, seed=args.seed)
    trace = model_mod.toy_train(mdl, dataset, steps=args.steps, lr=args.lr)
    acc = model_mod.accuracy(mdl, dataset)
    _emit("params", model_mod.param_count(mdl))
    _emit("steps", args.steps)
    _emit("loss_first", f"{trace[0]:.6f}")
    _emit("loss_last", f"{trace[-1]:.6f}")
    _emit("train_accuracy", f"{acc:.4f}")
    if args.out:
        serialization.save_tensor(args.out, np.asarray(trace), name="loss_trace")
        _emit("out", args.out)
    return EXIT_OK


def build_parser():
    parser = _TrackingParser(prog="fdy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file; flags win")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--dtype", choices=sorted(DTYPES), default="f32")

    p = sub.add_parser("featurize", help="WAV -> log-mel TensorFiles")
    common(p)
    p.add_argument("inputs", nargs="+", help="WAV files or directories")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("verify", help="run the property suites")
    common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--inject-fault", choices=["skip-softmax-norm"], default=None, help="fault injection harness")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="time the execution paths")
    common(p)
    p.add_argument("--preset", choices=sorted(suites.BENCH_PRESETS), default="default")
    p.add_argument("--repeats", type=int, default=20)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("infer", help="features -> events TSV")
    common(p)
    p.add_argument("features", nargs="+", help="TensorFiles or directories")
    p.add_argument("--weights", help="WeightFile to load")
    p.add_argument("--out", required=True, help="output events TSV")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score hypothesis events against references")
    common(p)
    p.add_argument("ref", help="reference events TSV")
    p.add_argument("hyp", help="hypothesis events TSV")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("train-toy", help="train the mini FDY model on a synthetic task")
    common(p)
    p.add_argument("--preset", default="band")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--out", help="optional loss-trace TensorFile")
    p.set_defaults(fn=cmd_train_toy)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args)
        return args.fn(args)
    except (ConfigError, ShapeError, DecodeError, WeightFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
