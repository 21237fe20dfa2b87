"""Command line entry point: ``spikeattack <subcommand> ...``.

Every subcommand accepts ``--config FILE.json``; keys are option names
(dashes or underscores) and explicit flags override them. All randomness
derives from ``--seed``.

Exit codes: 0 success, 2 usage or config error, 3 unreadable or malformed
input, 4 precondition failure (e.g. sample already misclassified),
5 a check or attack reported failure, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction

import numpy as np

from ..coding import aggregate_events, binarize_frames, encode_direct, encode_poisson, normalize_counts, read_events
from ..linf import AttackConfig
from ..sda import PreconditionError, SdaConfig
from ..snn import UnsupportedLayerError, build_preset, load_model, save_model
from ..surrogate import SurrogateSpec
from ..tensor import FormatError, load_tensor, save_tensor
from .datasets import load_dataset, make_dataset, model_input, save_dataset
from .evaluate import AttackSpec, evaluate_attack
from .oracles import GuardExceeded, bruteforce_sparse_oracle, gradcheck_oracle, mc_zeroth_order_oracle
from .train import TrainConfig, TrainingDiverged, train_minimal

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INPUT, EXIT_PRECONDITION, EXIT_FAILED = 0, 1, 2, 3, 4, 5

log = logging.getLogger("spikeattack")


class ConfigError(ValueError):
    pass


def _number(text):
    """Accept ``0.03`` or ``8/255``."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _sg(text):
    try:
        return SurrogateSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _attack_options(p):
    p.add_argument("--method", choices=["fgsm", "pgd", "sda"], default="pgd")
    p.add_argument("--eps", type=_number, default=8 / 255)
    p.add_argument("--alpha", type=_number, default=None)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--loss", choices=["ce", "cw"], default="ce")
    p.add_argument("--sg", type=_sg, default=SurrogateSpec.pdsg(), help="e.g. pdsg, pdsg,b_coeff=0, atan:2")
    p.add_argument("--random-start", action="store_true")
    p.add_argument("--k-init", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--no-reduce", action="store_true")


def _attack_spec(a):
    linf = AttackConfig(eps=a.eps, alpha=a.alpha, steps=a.steps, loss=a.loss, sg=a.sg,
                        random_start=a.random_start, seed=a.seed)
    sparse = SdaConfig(k_init=a.k_init, max_iters=a.max_iters, sg=a.sg, reduce=not a.no_reduce)
    return AttackSpec(a.method, linf, sparse)


def build_parser():
    parser = argparse.ArgumentParser(prog="spikeattack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--seed", type=int, default=0, help="root seed")
        return p

    p = add("train", "train a desk-scale victim on a synthetic dataset")
    p.add_argument("--dataset", choices=["blobs", "bars"], default="blobs")
    p.add_argument("--n", type=int, default=600, help="samples to generate")
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--arch", choices=["dense", "conv"], default="conv")
    p.add_argument("--timesteps", type=int, default=4, help="for static images; frames keep their own T")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--sg", type=_sg, default=SurrogateSpec.atan(2.0))
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--save-test", help="directory for the held-out split")

    p = add("encode", "turn events or images into model-ready tensors")
    p.add_argument("--events", help="SNNE event file")
    p.add_argument("--image", help="SNNT image tensor (C, H, W)")
    p.add_argument("--timesteps", type=int, default=5)
    p.add_argument("--coding", choices=["direct", "poisson"], default="direct")
    p.add_argument("--frames", choices=["binary", "counts", "normalized"], default="binary")
    p.add_argument("--out", required=True)

    p = add("attack", "attack single samples and print JSON records")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="dataset directory (x.snnt, y.snnt)")
    p.add_argument("--index", type=int, nargs="+", default=[0])
    _attack_options(p)

    p = add("eval", "run the attack protocol over correctly classified samples")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--thresholds", type=int, nargs="*", default=[])
    p.add_argument("--records", help="write per-sample JSON lines here")
    p.add_argument("--timing", action="store_true", help="include wall-clock in the JSON summary")
    _attack_options(p)

    p = add("gradcheck", "finite-difference check of the input gradient (soft mode, float64)")
    p.add_argument("--model", help="model file; default is a fresh conv preset on 8x8 input")
    p.add_argument("--temp", type=float, default=0.1)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--coords", type=int, default=None, help="random subset size; default all")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--mutate-reset", action="store_true", help="flip the reset-path sign (should fail)")

    p = add("oracle", "Monte-Carlo surrogate check or brute-force sparse minimum")
    p.add_argument("kind", choices=["mc", "bruteforce"])
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--u", type=float, nargs="+", default=[1.0])
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--max-flips", type=int, default=3)
    return parser, sub


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _load_config(path, subparser, command):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r} for {command}")
        if dest in ("eps", "alpha") and isinstance(value, str):
            value = _number(value)
        elif dest == "sg" and isinstance(value, str):
            value = _sg(value)
        defaults[dest] = value
        actions[dest].required = False  # satisfied by the config file
    subparser.set_defaults(**defaults)


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    path = _config_path(argv)
    command = next((a for a in argv if a in sub.choices), None)
    if path and command:
        try:
            _load_config(path, sub.choices[command], command)
        except argparse.ArgumentTypeError as exc:
            raise ConfigError(str(exc)) from exc
    return parser.parse_args(argv)


def _load_sample(a, index):
    m = load_model(a.model)
    ds = load_dataset(a.data)
    if not 0 <= index < len(ds):
        raise IndexError(f"sample index {index} out of range")
    return m, model_input(ds.x[index], m.timesteps), int(ds.y[index])


def cmd_train(a):
    ds = make_dataset(a.dataset, a.n, seed=a.seed)
    train, test = ds.split(int(round(a.n * a.train_fraction)))
    cfg = TrainConfig(epochs=a.epochs, lr=a.lr, momentum=a.momentum, batch_size=a.batch_size,
                      seed=a.seed, timesteps=a.timesteps, sg=a.sg)
    res = train_minimal(a.arch, train, cfg, test)
    save_model(res.model, a.out)
    if a.save_test:
        save_dataset(test, a.save_test)
    print(json.dumps({"train_accuracy": res.train_accuracy, "test_accuracy": res.test_accuracy,
                      "final_loss": res.epoch_losses[-1]}))
    return EXIT_OK


def cmd_encode(a):
    if bool(a.events) == bool(a.image):
        raise ConfigError("give exactly one of --events or --image")
    if a.events:
        frames = aggregate_events(read_events(a.events), a.timesteps)
        if a.frames == "binary":
            frames = binarize_frames(frames)
        elif a.frames == "normalized":
            frames, _ = normalize_counts(frames)
        out = frames
    else:
        img = load_tensor(a.image)
        if a.coding == "direct":
            out = encode_direct(img, a.timesteps)
        else:
            out = encode_poisson(img, a.timesteps, a.seed)
    save_tensor(np.asarray(out, dtype=np.float32), a.out)
    print(json.dumps({"shape": list(out.shape), "out": a.out}))
    return EXIT_OK


def cmd_attack(a):
    spec = _attack_spec(a)
    any_failed = False
    for index in a.index:
        m, x, y = _load_sample(a, index)
        res = spec.run(m, x, y)
        print(json.dumps(res.record(sample_id=index)))
        any_failed |= not res.success
    return EXIT_FAILED if any_failed else EXIT_OK


def cmd_eval(a):
    m = load_model(a.model)
    ds = load_dataset(a.data)
    report = evaluate_attack(m, ds, _attack_spec(a), budget=a.budget, seed=a.seed, thresholds=a.thresholds)
    print(report.table())
    print(report.to_json(include_timing=a.timing))
    if a.records:
        with open(a.records, "w") as fh:
            for rec in report.records:
                fh.write(json.dumps(rec) + "\n")
    return EXIT_OK


def cmd_gradcheck(a):
    rng = np.random.default_rng(a.seed)
    if a.model:
        m = load_model(a.model)
    else:
        m = build_preset("conv", (1, 8, 8), 2, 4, seed=a.seed)
    x = rng.uniform(0, 1, (m.timesteps,) + m.input_shape)
    rep = gradcheck_oracle(m, x, temp=a.temp, h=a.h, n_coords=a.coords, seed=a.seed,
                           mutate_reset=a.mutate_reset)
    ok = rep.max_rel_error < a.tolerance
    print(json.dumps({"max_rel_error": rep.max_rel_error, "coords": rep.coords, "pass": ok}))
    return EXIT_OK if ok else EXIT_FAILED


def cmd_oracle(a):
    if a.kind == "mc":
        rows = mc_zeroth_order_oracle(a.u, a.sigma, a.samples, a.seed)
        ok = True
        for r in rows:
            within = r.z_score <= 3
            ok &= within
            print(json.dumps({"u": r.u, "estimate": r.estimate, "stderr": r.stderr,
                              "closed_form": r.closed_form, "within_3se": within}))
        return EXIT_OK if ok else EXIT_FAILED
    if not (a.model and a.data):
        raise ConfigError("bruteforce needs --model and --data")
    m, x, y = _load_sample(a, a.index)
    best = bruteforce_sparse_oracle(m, x, y, a.max_flips)
    print(json.dumps({"sample": a.index, "min_l0": best}))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "encode": cmd_encode, "attack": cmd_attack, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "oracle": cmd_oracle}


def main(argv=None):
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GuardExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, UnsupportedLayerError, OSError, IndexError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
