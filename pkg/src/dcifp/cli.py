"""Command-line entry point: ``dcifp <subcommand> ...``.

Every run writes a JSON manifest (parameters, seeds, SHA-256 of inputs and
outputs, timing). ``dcifp replay MANIFEST`` re-executes the recorded
command and checks that every output is byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import sys
import time
from contextlib import redirect_stdout
from pathlib import Path

from . import __version__

log = logging.getLogger("dcifp")

GRADCHECK_TOL = 1e-4


class CliError(Exception):
    """Validation failure reported with exit code 1."""


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _window_list(text: str) -> list[int]:
    """``20:160:20`` (inclusive range) or ``20,40,100``."""
    try:
        if ":" in text:
            lo, hi, step = (int(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            return list(range(lo, hi + 1, step))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad window list {text!r}") from None


def _hex(text: str) -> int:
    try:
        v = int(text, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad hex RNTI {text!r}") from None
    if not 0 <= v <= 0xFFFF:
        raise argparse.ArgumentTypeError("RNTI must fit in 16 bits")
    return v


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


class _Run:
    """Collects inputs, outputs and seeds for the manifest."""

    def __init__(self):
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.seeds: dict[str, int] = {}

    def read(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise CliError(f"no such file: {path}")
        self.inputs.append(str(path))
        return p

    def write(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(path))
        return p


# -- subcommands --------------------------------------------------------------

def _profiles(args, run):
    from .synth import builtin_profiles, load_profiles
    if getattr(args, "profiles", None):
        return load_profiles(run.read(args.profiles))
    return builtin_profiles()


def cmd_profiles(args, run):
    from .synth import builtin_profiles, save_profiles
    save_profiles(builtin_profiles(), run.write(args.out))


def cmd_gen(args, run):
    from .synth import generate, generate_cell, round_robin_cell
    from .trace import write_trace
    profiles = _profiles(args, run)
    run.seeds["seed"] = args.seed
    if args.cell:
        tr = generate_cell(round_robin_cell(args.cell, profiles, args.rnti), args.duration,
                           args.seed)
    else:
        if args.app not in profiles:
            raise CliError(f"unknown app {args.app!r}; known: {', '.join(profiles)}")
        tr = generate(profiles[args.app], args.duration, args.rnti, args.seed)
    write_trace(tr, run.write(args.out))
    print(f"{len(tr)} records written to {args.out}")


def cmd_capture(args, run):
    from .capture import CaptureConfig, apply_capture, estimate_capture_ratio
    from .trace import read_trace, write_trace
    run.seeds["seed"] = args.seed
    tr = read_trace(run.read(args.input))
    cfg = CaptureConfig(args.prob, args.seed, args.jitter_ms, args.burst_loss)
    out = apply_capture(tr, cfg)
    write_trace(out, run.write(args.output))
    ratio = estimate_capture_ratio(tr, out) if len(tr) else 0.0
    print(f"kept {len(out)} of {len(tr)} records (ratio {ratio:.4f})")


def cmd_dataset(args, run):
    from .features import build_dataset, write_dataset
    from .trace import read_trace
    traces = [read_trace(run.read(p)) for p in args.traces]
    samples = build_dataset(traces, args.window, args.stride, args.burst_gap_ms)
    if args.max_per_class is not None:
        import numpy as np
        from .metrics import cap_per_class
        run.seeds["seed"] = args.seed
        samples = cap_per_class(samples, args.max_per_class, np.random.default_rng(args.seed))
    write_dataset(samples, run.write(args.out),
                  {"stride": args.stride or args.window, "burst_gap_ms": args.burst_gap_ms})
    counts: dict = {}
    for s in samples:
        counts[s.label] = counts.get(s.label, 0) + 1
    print(f"{len(samples)} windows: " + ", ".join(f"{k}={v}" for k, v in sorted(
        counts.items(), key=lambda kv: str(kv[0]))))


def _train_config(args):
    from .cnn import TrainConfig
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.lr, optimizer=args.optimizer, seed=args.seed,
                       validation_fraction=args.val_fraction, dtype=args.dtype,
                       class_order=tuple(args.classes.split(",")) if args.classes else None)


def cmd_train(args, run):
    from .cnn import save_model, train
    from .features import read_dataset
    run.seeds["seed"] = args.seed
    ds = read_dataset(run.read(args.dataset))
    bundle = train(ds, _train_config(args))
    save_model(bundle, run.write(args.out))
    m = bundle.train_meta
    print(f"trained W={bundle.W} on {m['n_train']} windows; "
          f"validation accuracy {m['val_accuracy'][m['selected_epoch'] - 1]:.4f} "
          f"(epoch {m['selected_epoch']})")


def cmd_eval(args, run):
    from .cnn import load_model
    from .features import read_dataset
    from .metrics import evaluate
    bundle = load_model(run.read(args.model))
    ds = read_dataset(run.read(args.dataset))
    if not ds:
        raise CliError("dataset is empty")
    rep = evaluate(bundle, ds)
    run.write(args.report).write_text(rep.to_kv(), encoding="utf-8")
    print(rep.to_table(), end="")


def cmd_sweep(args, run):
    from .cnn import TrainConfig, save_model
    from .experiments import sweep_experiment
    from .metrics import sweep_csv, sweep_table
    out = Path(args.out_dir)
    run.seeds["seed"] = args.seed
    cfg = TrainConfig(epochs=args.epochs, dtype=args.dtype, seed=args.seed)
    res = sweep_experiment(args.windows, args.capture, args.at_100, args.test_per_class,
                           cfg, args.seed, _profiles(args, run),
                           progress=lambda W, r: log.info("W=%d accuracy %.4f", W, r.accuracy))
    for W, rep in res.results:
        run.write(out / f"report_W{W}.txt").write_text(rep.to_kv(), encoding="utf-8")
        if args.save_models:
            save_model(res.models[W], run.write(out / f"model_W{W}.bin"))
    table = sweep_table(res.results)
    run.write(out / "summary.txt").write_text(table, encoding="utf-8")
    run.write(out / "summary.csv").write_text(sweep_csv(res.results), encoding="utf-8")
    print(table, end="")


def _latency_text(table) -> str:
    apps = list(table)
    windows = list(next(iter(table.values()))) if table else []
    w = max([len(a) for a in apps] + [10])
    lines = [f"{'App':<{w}}" + "".join(f"  {'W=' + str(W):>9}" for W in windows)]
    for a in apps:
        cells = []
        for W in windows:
            s = table[a][W]
            cells.append(f"  {'n/a':>9}" if s.empty else f"  {s.mean_s:9.2f}")
        lines.append(f"{a:<{w}}" + "".join(cells))
    return "\n".join(lines) + "\n"


def cmd_latency(args, run):
    from .experiments import latency_experiment
    from .metrics import classification_latency, latency_csv
    from .trace import read_trace
    if args.traces:
        traces = [read_trace(run.read(p)) for p in args.traces]
        table = {}
        for i, tr in enumerate(traces):
            name = tr.meta.label or Path(args.traces[i]).stem
            table[name] = {W: classification_latency(tr, W, args.trials) for W in args.windows}
    else:
        run.seeds["seed"] = args.seed
        profiles = _profiles(args, run)
        per_w = {W: latency_experiment(W, args.capture, args.trials, args.seed, profiles)
                 for W in args.windows}
        table = {a: {W: per_w[W][a] for W in args.windows} for a in profiles}
    if args.out:
        run.write(args.out).write_text(latency_csv(table), encoding="utf-8")
    print(_latency_text(table), end="")


def cmd_scan(args, run):
    from .attacks import cell_scan, track_target
    from .cnn import load_model
    from .trace import read_trace
    bundle = load_model(run.read(args.model))
    tr = read_trace(run.read(args.trace))
    if args.window is not None and args.window != bundle.W:
        raise CliError(f"--window {args.window} does not match the model's W={bundle.W}")
    if args.rnti is not None:
        rep = track_target(tr, args.rnti, bundle, args.window, args.min_confidence,
                           smooth_windows=args.smooth_windows)
    else:
        rep = cell_scan(tr, bundle, args.window, args.min_confidence,
                        smooth_windows=args.smooth_windows)
    text = rep.to_text()
    run.write(args.out).write_text(text, encoding="utf-8")
    for r in rep.rntis:
        secs = rep.label_seconds(r)
        top = max(secs, key=secs.get) if secs else "-"
        print(f"{r:04X}: {len(rep.timelines.get(r, []))} segments, mostly {top}")
    for r in rep.not_seen:
        print(f"{r:04X}: not seen")


def cmd_inject(args, run):
    from .attacks import inject_signature, load_signature
    from .trace import read_trace, write_trace
    run.seeds["seed"] = args.seed
    spec = load_signature(run.read(args.spec))
    tr = read_trace(run.read(args.trace))
    out = inject_signature(tr, args.rnti, spec, args.t0_ms, args.seed, args.capture_estimate)
    write_trace(out, run.write(args.out))
    print(f"injected {len(out) - len(tr)} records for {args.rnti:04X}")


def cmd_signature(args, run):
    from .attacks import SignatureSpec, save_signature
    save_signature(SignatureSpec(), run.write(args.out))


def cmd_hunt(args, run):
    from .attacks import detect_target, load_signature
    from .trace import read_trace
    spec = load_signature(run.read(args.spec))
    tr = read_trace(run.read(args.trace))
    res = detect_target(tr, spec, args.t0_ms)
    text = res.to_text()
    if args.out:
        run.write(args.out).write_text(text, encoding="utf-8")
    if res.unique_target is not None:
        print(f"target RNTI {res.unique_target:04X}")
    else:
        print(f"no unique target ({len(res.full_matches)} full-pattern matches)")


def cmd_gradcheck(args, run):
    from .cnn import build_model, numeric_grad_check
    run.seeds["seed"] = args.seed
    res = numeric_grad_check(build_model(args.window, 3, args.classes), args.seed)
    lines = [f"W={args.window}", f"max_rel_error={res.max_rel_error:.3e}",
             f"n_checked={res.n_checked}"]
    lines += [f"{k}={v:.3e}" for k, v in res.per_param.items()]
    text = "\n".join(lines) + "\n"
    if args.out:
        run.write(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    if not res.max_rel_error < GRADCHECK_TOL:
        raise CliError(f"max relative error {res.max_rel_error:.3e} >= {GRADCHECK_TOL}")


def cmd_replay(args, run):
    man = json.loads(run.read(args.manifest).read_text(encoding="utf-8"))
    if man.get("tool") != "dcifp":
        raise CliError("not a dcifp manifest")
    again = args.manifest + ".replay.json"
    code = main(man["argv"], manifest_path=again)
    if code != man.get("exit_code", 0):
        raise CliError(f"replay exited with {code}, recorded {man.get('exit_code')}")
    bad = [p for p, d in man["outputs"].items() if not Path(p).is_file() or _sha256(p) != d]
    for p in man["outputs"]:
        print(f"{'MISMATCH' if p in bad else 'ok':8s} {p}")
    new = json.loads(Path(again).read_text(encoding="utf-8"))
    if new["stdout_sha256"] != man["stdout_sha256"]:
        bad.append("<stdout>")
        print("MISMATCH <stdout>")
    if bad:
        raise CliError(f"{len(bad)} output(s) differ from the manifest")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcifp", description="App fingerprinting from sniffed 5G downlink control information.",
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--version", action="version", version=f"dcifp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--manifest", help="manifest path (default: next to the first output)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        sp.set_defaults(func=fn)
        return sp

    def train_flags(sp, epochs=30, dtype="float64"):
        sp.add_argument("--epochs", type=int, default=epochs, help="training epochs")
        sp.add_argument("--dtype", choices=("float64", "float32"), default=dtype,
                        help="training precision")

    sp = add("profiles", cmd_profiles, "write the built-in app profiles as an editable INI file")
    sp.add_argument("--out", required=True, help="output INI path")

    sp = add("gen", cmd_gen, "generate a ground-truth DCI trace")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--app", help="app profile name, e.g. Netflix")
    g.add_argument("--cell", type=int, metavar="N", help="N UEs with round-robin app profiles")
    sp.add_argument("--duration", type=float, required=True, help="trace length in seconds")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--rnti", type=_hex, default=0x4601, help="RNTI (hex); first RNTI for --cell")
    sp.add_argument("--profiles", help="profile INI file (default: built-in profiles)")
    sp.add_argument("--out", required=True, help="output trace path")

    sp = add("capture", cmd_capture, "simulate lossy over-the-air capture of a trace")
    sp.add_argument("--prob", type=float, required=True, help="per-record capture probability")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--jitter-ms", type=int, default=0, help="max absolute timestamp jitter")
    sp.add_argument("--burst-loss", type=_pair, default=None, metavar="G2B,B2G",
                    help="two-state loss model transition probabilities (default: off)")
    sp.add_argument("input", help="input trace")
    sp.add_argument("output", help="output trace")

    sp = add("dataset", cmd_dataset, "cut captured traces into labelled feature windows")
    sp.add_argument("--window", type=int, required=True, help="DCI instances per window")
    sp.add_argument("--stride", type=int, default=None, help="window stride (default: window)")
    sp.add_argument("--burst-gap-ms", type=float, default=1000.0,
                    help="gap separating bursts for the single-burst window filter")
    sp.add_argument("--max-per-class", type=int, default=None,
                    help="random cap on windows per label")
    sp.add_argument("--seed", type=int, default=0, help="seed for --max-per-class sampling")
    sp.add_argument("--out", required=True, help="output dataset path")
    sp.add_argument("traces", nargs="+", help="labelled trace files")

    sp = add("train", cmd_train, "train the window classifier")
    sp.add_argument("--dataset", required=True, help="dataset file")
    sp.add_argument("--out", required=True, help="output model file")
    train_flags(sp)
    sp.add_argument("--batch-size", type=int, default=64, help="mini-batch size")
    sp.add_argument("--lr", type=float, default=1e-3, help="learning rate")
    sp.add_argument("--optimizer", choices=("adam", "sgd"), default="adam", help="optimizer")
    sp.add_argument("--val-fraction", type=float, default=0.1, help="validation hold-out share")
    sp.add_argument("--classes", default=None, help="comma-separated class order")
    sp.add_argument("--seed", type=int, default=0, help="random seed")

    sp = add("eval", cmd_eval, "evaluate a model on a dataset")
    sp.add_argument("--model", required=True, help="model file")
    sp.add_argument("--dataset", required=True, help="dataset file")
    sp.add_argument("--report", required=True, help="key=value report output")

    sp = add("sweep", cmd_sweep, "train and evaluate one model per window size on synthetic data")
    sp.add_argument("--windows", type=_window_list, default=list(range(20, 161, 20)),
                    help="lo:hi:step or comma list")
    sp.add_argument("--capture", type=float, default=0.05, help="capture probability")
    sp.add_argument("--at-100", type=int, default=1000,
                    help="training windows per class at W<=100 (scaled by 100/W above)")
    sp.add_argument("--test-per-class", type=int, default=300, help="test windows per class")
    train_flags(sp, epochs=15, dtype="float32")
    sp.add_argument("--seed", type=int, default=1, help="master seed")
    sp.add_argument("--profiles", help="profile INI file (default: built-in profiles)")
    sp.add_argument("--save-models", action="store_true", help="also write model_W*.bin")
    sp.add_argument("--out-dir", required=True, help="directory for reports and summary")

    sp = add("latency", cmd_latency, "time needed to fill a window, per app")
    sp.add_argument("--windows", type=_window_list, default=[40], help="lo:hi:step or comma list")
    sp.add_argument("--trials", type=int, default=100, help="windows averaged per app")
    sp.add_argument("--capture", type=float, default=0.05,
                    help="capture probability for synthetic traces")
    sp.add_argument("--seed", type=int, default=7, help="master seed for synthetic traces")
    sp.add_argument("--profiles", help="profile INI file (default: built-in profiles)")
    sp.add_argument("--out", help="CSV output")
    sp.add_argument("traces", nargs="*", help="captured traces (default: synthesize)")

    sp = add("scan", cmd_scan, "per-RNTI app timeline of a captured cell trace")
    sp.add_argument("--model", required=True, help="model file")
    sp.add_argument("--trace", required=True, help="captured trace")
    sp.add_argument("--window", type=int, default=None, help="expected model window size")
    sp.add_argument("--min-confidence", type=float, default=0.5,
                    help="drop window predictions below this probability")
    sp.add_argument("--smooth-windows", type=int, default=15,
                    help="majority-vote span over neighbouring window labels (1 = off)")
    sp.add_argument("--rnti", type=_hex, default=None, help="track a single RNTI (hex)")
    sp.add_argument("--out", required=True, help="report output")

    sp = add("signature", cmd_signature, "write the default signature spec file")
    sp.add_argument("--out", required=True, help="output path")

    sp = add("inject", cmd_inject, "add a target's signature bursts to a ground-truth trace")
    sp.add_argument("--spec", required=True, help="signature spec file")
    sp.add_argument("--trace", required=True, help="ground-truth cell trace")
    sp.add_argument("--rnti", type=_hex, required=True, help="target RNTI (hex)")
    sp.add_argument("--t0-ms", type=int, required=True, help="time of the first burst")
    sp.add_argument("--capture-estimate", type=float, default=None,
                    help="expected capture ratio; bursts are scaled up by its inverse")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--out", required=True, help="output trace")

    sp = add("hunt", cmd_hunt, "find the RNTI that carries a signature")
    sp.add_argument("--spec", required=True, help="signature spec file")
    sp.add_argument("--trace", required=True, help="captured trace")
    sp.add_argument("--t0-ms", type=int, required=True, help="time of the first burst")
    sp.add_argument("--out", help="report output")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the CNN gradients")
    sp.add_argument("--window", type=int, default=20, help="window size of the checked model")
    sp.add_argument("--classes", type=int, default=8, help="number of output classes")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--out", help="result output")

    sp = add("replay", cmd_replay, "re-run a manifest and compare output digests")
    sp.add_argument("manifest", help="manifest JSON written by an earlier run")
    return p


def _manifest_path(args, run) -> Path:
    if args.manifest:
        return Path(args.manifest)
    if args.command == "sweep":
        return Path(args.out_dir) / "manifest.json"
    if run.outputs:
        return Path(run.outputs[0] + ".manifest.json")
    return Path(f"{args.command}.manifest.json")


def main(argv: list[str] | None = None, manifest_path: str | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    if manifest_path is not None:
        args.manifest = manifest_path
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(asctime)s %(name)s %(message)s")
    run = _Run()
    t0 = time.time()
    buf = io.StringIO()
    code = 0
    try:
        with redirect_stdout(buf):
            args.func(args, run)
    except (CliError, ValueError, OSError) as e:
        print(f"dcifp {args.command}: error: {e}", file=sys.stderr)
        code = 1
    finally:
        sys.stdout.write(buf.getvalue())
    if args.command != "replay":
        params = {k: v for k, v in vars(args).items() if k not in ("func",)}
        manifest = dict(
            tool="dcifp", version=__version__, subcommand=args.command, argv=argv,
            params=json.loads(json.dumps(params, default=str)), seeds=run.seeds,
            inputs={p: _sha256(p) for p in run.inputs if Path(p).is_file()},
            outputs={p: _sha256(p) for p in run.outputs if Path(p).is_file()},
            stdout_sha256=hashlib.sha256(buf.getvalue().encode()).hexdigest(),
            timing_s=round(time.time() - t0, 3), exit_code=code)
        mp = _manifest_path(args, run)
        mp.parent.mkdir(parents=True, exist_ok=True)
        mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return code


if __name__ == "__main__":
    sys.exit(main())
