"""Command-line entry point: ``dsobf <command> ...``.

Exit codes: 0 success, 1 invalid arguments, 2 pipeline error.  Data goes to
stdout, diagnostics to stderr.

Dataset arguments accept three forms: ``IMAGES,LABELS`` (explicit IDX
pair), a directory holding the raw MNIST training files, or a prefix ``P``
naming ``P-images.idx`` and ``P-labels.idx``.  Outputs always use the
prefix form.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data, harness, pol, rng
from .errors import ObfuscationError
from .metrics import fnorm
from .nn import checkpoint
from .nn.model import evaluate, init_model, preset
from .nn.optim import Optimizer
from .nn.train import TrainConfig, train
from .obfuscation import ObfuscationSpec, obfuscate, reconstruct_by_averaging
from .sampler import SamplingSpec, draw


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _num(s: str) -> str:
    return format(float(s), ".17g")


def _out(value) -> None:
    print(_num(value) if isinstance(value, float) else value)


def _nonneg(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"{s} must be >= 0")
    return v


def _unit(s):
    v = float(s)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"{s} must lie in [0, 1]")
    return v


def _pos_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{s} must be >= 1")
    return v


def _int_list(s):
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a comma-separated integer list") from None


def _seed(s):
    v = int(s, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def dataset_paths(arg: str) -> tuple[Path, Path]:
    if "," in arg:
        img, lab = arg.split(",", 1)
        return Path(img), Path(lab)
    p = Path(arg)
    if p.is_dir():
        return p / "train-images-idx3-ubyte", p / "train-labels-idx1-ubyte"
    return Path(f"{arg}-images.idx"), Path(f"{arg}-labels.idx")


def load_dataset(arg: str) -> data.Dataset:
    img, lab = dataset_paths(arg)
    return data.load_idx(img, lab)


def save_dataset(ds: data.Dataset, prefix: str) -> None:
    data.save_idx(ds, f"{prefix}-images.idx", f"{prefix}-labels.idx")


def _add_train_flags(p):
    p.add_argument("--preset", default="desk-mlp", choices=["desk-mlp", "desk-cnn", "paper-cnn"],
                   help="model architecture")
    p.add_argument("--epochs", type=int, default=15, help="training epochs")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate")
    p.add_argument("--batch", type=_pos_int, default=128, help="batch size")
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"], help="update rule")
    p.add_argument("--seed", type=_seed, required=True, help="seed for initial weights and batch order")


def _train_config(args, **kw) -> TrainConfig:
    if args.epochs < 0 or not args.lr > 0:
        raise UsageError("--epochs must be >= 0 and --lr > 0")
    return TrainConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch,
                       optimizer=Optimizer(args.optimizer), seed=args.seed, **kw)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="dsobf", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="per-epoch log lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="draw an S-X-Y-Z training set", formatter_class=fmt)
    p.add_argument("--x", type=float, required=True, help="label degree X")
    p.add_argument("--y", type=float, default=1.0, help="label overlap ratio Y (used with --counterpart)")
    p.add_argument("--z", type=float, required=True, help="per-label sampling ratio Z")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--labels", type=_int_list, default=None, help="pin the covered labels, e.g. 0,1,2,3,4")
    p.add_argument("--counterpart", type=_int_list, default=None,
                   help="anchor label set; draw labels overlapping it by floor(C*X*Y)")
    p.add_argument("pool")
    p.add_argument("out")

    p = sub.add_parser("obfuscate", help="add Gaussian noise to features", formatter_class=fmt)
    p.add_argument("--sigma", type=_nonneg, required=True, help="noise standard deviation")
    p.add_argument("--r", type=_unit, default=1.0, help="proportion of obfuscated rows")
    p.add_argument("--clip", action="store_true", help="clamp outputs to [0, 1]")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("input")
    p.add_argument("out")

    p = sub.add_parser("train", help="train a model from seeded initial weights", formatter_class=fmt)
    _add_train_flags(p)
    p.add_argument("dataset")
    p.add_argument("out", help="checkpoint file to write")

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset", formatter_class=fmt)
    p.add_argument("checkpoint")
    p.add_argument("dataset")

    p = sub.add_parser("fnorm", help="F-norm distance between two checkpoints", formatter_class=fmt)
    p.add_argument("a")
    p.add_argument("b")

    p = sub.add_parser("pol", help="Proof-of-Learning prover / verifier", formatter_class=fmt)
    pol_sub = p.add_subparsers(dest="pol_command", required=True, parser_class=_Parser)
    q = pol_sub.add_parser("prove", help="train with checkpoints and write a transcript", formatter_class=fmt)
    _add_train_flags(q)
    q.add_argument("--k", type=_pos_int, default=10, help="steps between checkpoints")
    q.add_argument("dataset")
    q.add_argument("out", help="transcript file to write")
    for name, helptext in (("verify", "replay segments against the committed dataset"),
                           ("spoof", "replay segments against another dataset, ignoring the commitment")):
        q = pol_sub.add_parser(name, help=helptext, formatter_class=fmt)
        q.add_argument("--threshold", type=_nonneg, default=0.0, help="accept iff every segment D <= this")
        q.add_argument("--segments", type=_int_list, default=None, help="segment indices (default: all)")
        q.add_argument("transcript")
        q.add_argument("dataset")

    p = sub.add_parser("attack", help="privacy attacks", formatter_class=fmt)
    att = p.add_subparsers(dest="attack_command", required=True, parser_class=_Parser)
    q = att.add_parser("average", help="average repeated disclosures and report MSE", formatter_class=fmt)
    q.add_argument("--reference", required=True, help="raw dataset the MSE is measured against")
    q.add_argument("--out", default=None, help="write the averaged estimate to this prefix")
    q.add_argument("disclosures", nargs="+")

    p = sub.add_parser("exp", help="desk-scale experiments", formatter_class=fmt)
    ex = p.add_subparsers(dest="exp_command", required=True, parser_class=_Parser)
    q = ex.add_parser("run", help="run an experiment config (JSON)", formatter_class=fmt)
    q.add_argument("--seed", type=_seed, action="append", default=None,
                   help="override the config's seed list (repeatable)")
    q.add_argument("--output", default=None, help="CSV path (default: the config's output field)")
    q.add_argument("config", help="config file or shipped preset name: " + ", ".join(harness.PRESET_NAMES))
    q = ex.add_parser("preset", help="print a shipped preset config", formatter_class=fmt)
    q.add_argument("name", choices=harness.PRESET_NAMES)
    return parser


# -------------------------------------------------------------- commands


def cmd_sample(args):
    try:
        spec = SamplingSpec(args.x, args.y, args.z, args.seed, args.labels)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    pool = load_dataset(args.pool)
    ds, labels = draw(pool, spec, counterpart_of=args.counterpart)
    save_dataset(ds, args.out)
    print(json.dumps({"spec": str(spec), "labels": list(labels), "n": len(ds)}))


def cmd_obfuscate(args):
    ds = load_dataset(args.input)
    out = obfuscate(ds, ObfuscationSpec(args.sigma, args.r, args.clip, args.seed))
    save_dataset(out, args.out)


def cmd_train(args):
    cfg = _train_config(args)
    ds = load_dataset(args.dataset)
    init = init_model(preset(args.preset, ds.shape, ds.num_classes), rng.derive_stream(args.seed, "init"))
    final, _ = train(init, ds, cfg)
    checkpoint.save(final, args.out)


def cmd_eval(args):
    _out(evaluate(checkpoint.load(args.checkpoint), load_dataset(args.dataset)))


def cmd_fnorm(args):
    _out(fnorm(checkpoint.load(args.a), checkpoint.load(args.b)))


def cmd_pol(args):
    if args.pol_command == "prove":
        cfg = _train_config(args)
        ds = load_dataset(args.dataset)
        init = init_model(preset(args.preset, ds.shape, ds.num_classes), rng.derive_stream(args.seed, "init"))
        _, transcript = pol.prove(init, ds, cfg, args.k)
        pol.save(transcript, args.out)
        print(json.dumps({"checkpoints": transcript.steps(),
                          "commitment": transcript.dataset_commitment.hex()}))
        return
    transcript = pol.load(args.transcript)
    ds = load_dataset(args.dataset)
    if args.pol_command == "verify":
        verdict = pol.verify(transcript, ds, args.segments, args.threshold)
    else:
        _, verdict = pol.spoof_trial(transcript, ds, args.threshold, args.segments)
    out = verdict.to_json()
    out["distances"] = [float(_num(d)) for d in out["distances"]]
    print(json.dumps(out))


def cmd_attack(args):
    ref = load_dataset(args.reference)
    est, mse = reconstruct_by_averaging((load_dataset(d) for d in args.disclosures), ref)
    if args.out:
        save_dataset(est, args.out)
    _out(mse)


def cmd_exp(args):
    if args.exp_command == "preset":
        print(json.dumps(harness.preset_config(args.name).to_dict(), indent=2, sort_keys=True))
        return
    if args.config in harness.PRESET_NAMES and not Path(args.config).exists():
        config = harness.preset_config(args.config)
    else:
        config = harness.load_config(args.config)
    if args.seed:
        config = harness.ExperimentConfig.from_dict({**config.to_dict(), "seeds": args.seed})
    out = args.output or config.output
    if not out:
        raise UsageError("no output path: pass --output or set 'output' in the config")
    harness.run(config, out)
    print(out)


COMMANDS = {"sample": cmd_sample, "obfuscate": cmd_obfuscate, "train": cmd_train, "eval": cmd_eval,
            "fnorm": cmd_fnorm, "pol": cmd_pol, "attack": cmd_attack, "exp": cmd_exp}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc).splitlines()[0], file=sys.stderr)
        return 1
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dsobf: {exc}".splitlines()[0], file=sys.stderr)
        return 1
    except harness.ConfigError as exc:
        print(f"ConfigError: {exc}".splitlines()[0], file=sys.stderr)
        return 1
    except (ObfuscationError, OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
