"""Command-line interface: ``lipnet1d {synth,train,certify,attack,eval,export}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  ``certify`` exits 0
exactly when the certificate passes.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

from . import data
from .certify import DEFAULT_TOLERANCE, certify_network, product_bound
from .errors import FormatError, LipNetError
from .network import (MODES, Model, ModelConfig, accuracy, from_document, load, reference_config, save,
                      theta_export, verify_theta)
from .robustness import AttackConfig, empirical_lipschitz_lb, robust_accuracy_curve, write_curve_csv
from .train import TrainConfig, train


class UsageError(Exception):
    pass


def _positive(kind):
    def conv(s):
        try:
            v = kind(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {s!r}") from None
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive: {s!r}")
        return v
    return conv


def _nonneg_int(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value: {s!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {s!r}")
    return v


def _nonneg_float(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float value: {s!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {s!r}")
    return v


def _eps_list(s):
    try:
        vals = [float(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid epsilon list: {s!r}") from None
    if not vals or any(not v >= 0 for v in vals):
        raise argparse.ArgumentTypeError("epsilon list must be non-empty and >= 0")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="lipnet1d", description="Lipschitz-bounded 1D CNNs")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic 5-class CSV")
    s.add_argument("--n", type=_positive(int), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model; writes model JSON and history CSV")
    t.add_argument("--config", help="model config JSON (flags override its values)")
    t.add_argument("--train-csv", required=True)
    t.add_argument("--test-csv", help="held-out CSV; default: stratified half of --train-csv")
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--rho", type=_positive(float))
    t.add_argument("--eps", type=_positive(float), help="Gramian slack")
    t.add_argument("--gamma", type=_nonneg_float, default=0.0, help="L2 weight (l2 mode)")
    t.add_argument("--epochs", type=_nonneg_int, default=30)
    t.add_argument("--batch-size", type=_positive(int), default=10)
    t.add_argument("--lr", type=_nonneg_float, default=1e-3)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--checkpoint-every", type=_nonneg_int, default=0, help="epochs between certified checkpoints")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="model JSON path")
    t.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    t.add_argument("--plot", action="store_true", help="also render the history as PNG")

    c = sub.add_parser("certify", help="check the LMIs of a lip-mode model")
    c.add_argument("--model", required=True)
    c.add_argument("--tolerance", type=_positive(float), default=DEFAULT_TOLERANCE)
    c.add_argument("--out", help="certificate JSON path (default: <model>.cert.json)")

    a = sub.add_parser("attack", help="L2 PGD robustness curve")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--eps-list", type=_eps_list, required=True)
    a.add_argument("--steps", type=_positive(int), default=40)
    a.add_argument("--restarts", type=_positive(int), default=1)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True, help="curve CSV path")
    a.add_argument("--plot", action="store_true", help="also render the curve as PNG")

    e = sub.add_parser("eval", help="clean accuracy and empirical Lipschitz lower bound")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--iters", type=_nonneg_int, default=20)
    e.add_argument("--seed", type=int, default=0)

    x = sub.add_parser("export", help="dump materialized kernels, weights and biases")
    x.add_argument("--model", required=True)
    x.add_argument("--out", required=True)
    return p


def _load_config(args):
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config: invalid JSON ({exc})") from None
        cfg = ModelConfig.from_dict(doc.get("config", doc) if isinstance(doc, dict) else doc)
    else:
        cfg = reference_config()
    overrides = {k: v for k, v in (("mode", args.mode), ("rho", args.rho), ("eps", args.eps)) if v is not None}
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = ModelConfig.from_dict(d)
    return cfg


def cmd_synth(args):
    data.write_csv(data.synth(args.n, args.seed), args.out)
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    raw = data.load_csv(args.train_csv)
    if args.test_csv:
        tr_raw, te_raw = raw, data.load_csv(args.test_csv)
    else:
        tr_raw, te_raw = data.split(raw, 0.5, args.seed)
    if tr_raw.signals.shape[1:] != (cfg.input_channels, cfg.input_length):
        raise UsageError(f"data shape {tr_raw.signals.shape[1:]} does not match config "
                         f"({cfg.input_channels}, {cfg.input_length})")
    stats = data.fit_normalization(tr_raw)
    tr, te = data.normalize(tr_raw, stats), data.normalize(te_raw, stats)
    model = Model.init(cfg, args.seed)
    model.normalization = stats
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       optimizer=args.optimizer, l2_gamma=args.gamma, seed=args.seed,
                       checkpoint_every=args.checkpoint_every)
    out = Path(args.out)

    def checkpoint(epoch, m, cert):
        if cert is not None and not cert.passed:
            raise LipNetError(f"certificate failed at epoch {epoch}: min eigenvalue {cert.worst_min_eig:.3e}")
        save(m, out.with_name(f"{out.stem}.epoch{epoch}{out.suffix}"))

    model, hist = train(model, tr, tcfg, te, checkpoint)
    save(model, out)
    hist_path = Path(args.history) if args.history else out.with_suffix(".history.csv")
    hist.write_csv(hist_path)
    if hist.rows:
        last = hist.rows[-1]
        print(f"epochs={last['epoch']} train_loss={last['train_loss']:.6f} "
              f"train_acc={last['train_acc']:.4f} test_acc={last['test_acc']:.4f}")
    if args.plot:
        from .plotting import plot_history

        print(f"figure: {plot_history(hist_path)}")
    return 0


def cmd_certify(args):
    try:
        doc = json.loads(Path(args.model).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"$: invalid JSON ({exc})") from None
    model = from_document(doc, verify=False)
    # the stored weights must be the ones the free variables produce
    verify_theta(model, doc.get("theta"), DEFAULT_TOLERANCE)
    cert = certify_network(model, args.tolerance)
    text = json.dumps(cert.to_json(), indent=2)
    print(text)
    out = Path(args.out) if args.out else Path(args.model).with_suffix(".cert.json")
    out.write_text(text + "\n")
    return 0 if cert.passed else 1


def _model_data(args):
    model = load(args.model)
    ds = data.load_csv(args.data)
    ds = data.Dataset(model.preprocess(ds.signals), ds.labels, ds.class_names)
    return model, ds


def cmd_attack(args):
    model, ds = _model_data(args)
    curve = robust_accuracy_curve(model, ds, args.eps_list,
                                  AttackConfig(0.0, args.steps, None, args.restarts, args.seed))
    write_curve_csv(curve, args.out)
    for eps, acc in curve:
        print(f"{eps:g},{acc!r}")
    if args.plot:
        from .plotting import plot_curves

        print(f"figure: {plot_curves([args.out], Path(args.out).with_suffix('.png'))}")
    return 0


def cmd_eval(args):
    model, ds = _model_data(args)
    acc = accuracy(model, ds.signals, ds.labels)
    lb = empirical_lipschitz_lb(model, ds, args.iters, args.seed)
    print(f"accuracy={acc!r}")
    print(f"lipschitz_lb={lb!r}")
    if model.config.mode == "lip":
        print(f"rho_effective={certify_network(model).rho_effective!r}")
    else:
        print(f"product_bound={product_bound(model)!r}")
    return 0


def cmd_export(args):
    model = load(args.model)
    doc = {"config": model.config.to_dict(), "normalization": model.normalization, "layers": theta_export(model)}
    Path(args.out).write_text(json.dumps(doc) + "\n")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "certify": cmd_certify,
            "attack": cmd_attack, "eval": cmd_eval, "export": cmd_export}


def _thread_limit():
    n = os.environ.get("LIPNET1D_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        k = int(n)
    except ValueError:
        raise UsageError(f"LIPNET1D_THREADS must be an integer, got {n!r}") from None
    if k < 1:
        raise UsageError("LIPNET1D_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(k)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"lipnet1d {args.command}: {exc}", file=sys.stderr)
        return 2
    except (LipNetError, ValueError, OSError, RuntimeError) as exc:
        print(f"lipnet1d {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
