"""Command-line driver.

Subcommands: train-teacher, serve-teacher, distill, evaluate, sweep,
dump-mixup.  Configs are JSON files; command-line flags override file
values, and every command prints its fully resolved configuration on one
line so a run can be reproduced from the log alone.

Exit codes: 0 success, 2 input/config error, 3 transport error, 4 format
error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import data, nn, selection, service, teacher as teacher_mod
from .distill import DistillConfig, distill
from .errors import FormatError, InputError, TransportError
from .mixup import LambdaGrid, synthesize
from .nn import TrainConfig

RUN_ROOT_ENV = "MIXDISTILL_RUN_ROOT"


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e


def _build_dataset(desc, fallback_seed_shift=0):
    """Dataset descriptor: {"kind": "blobs", ...} or {"kind": "idx", ...}."""
    if not isinstance(desc, dict) or "kind" not in desc:
        raise InputError(f"dataset descriptor must be an object with a 'kind': {desc}")
    kind = desc["kind"]
    if kind == "blobs":
        return data.synth_blobs(
            num_classes=desc.get("num_classes", 3),
            per_class=desc.get("per_class", 200),
            image_side=desc.get("image_side", 8),
            seed=desc.get("seed", 0) + fallback_seed_shift,
            noise=desc.get("noise", 0.05),
        )
    if kind == "idx":
        return data.load_idx(desc["images"], desc.get("labels"),
                             num_classes=desc.get("num_classes", 10))
    raise InputError(f"unknown dataset kind {kind!r}")


def _train_config(raw):
    defaults = {"learning_rate": 0.2, "momentum": 0.9, "epochs": 30,
                "batch_size": 32, "seed": 0}
    defaults.update(raw or {})
    return TrainConfig(**defaults)


def _print_resolved(command, payload):
    print(f"resolved-config {command}: {json.dumps(payload, sort_keys=True)}")


def cmd_train_teacher(args):
    raw = _load_json(args.config)
    for key in ("dataset", "layers"):
        if key not in raw:
            raise InputError(f"train-teacher config needs a {key!r} entry")
    cfg = _train_config(raw.get("train"))
    _print_resolved("train-teacher", {"config": raw, "out": args.out})

    train_ds = _build_dataset(raw["dataset"])
    test_ds = _build_dataset(raw["test"]) if "test" in raw else _build_dataset(
        raw["dataset"], fallback_seed_shift=1)
    if train_ds.labels is None:
        raise InputError("teacher training needs a labeled dataset")

    spec = nn.NetworkSpec(input_shape=train_ds.image_shape,
                          layers=tuple(raw["layers"]),
                          num_classes=train_ds.num_classes)
    onehot = np.zeros((len(train_ds), train_ds.num_classes))
    onehot[np.arange(len(train_ds)), train_ds.labels] = 1.0
    model, history = nn.train(spec, train_ds.images, onehot, cfg)
    acc = nn.evaluate(model, test_ds.images, test_ds.labels)
    nn.save_model(model, args.out)
    print(f"teacher test accuracy: {acc:.4f} (final train loss {history[-1]:.4f})")
    print(f"checkpoint written to {args.out}")


def cmd_serve_teacher(args):
    cfg = service.ServiceConfig(bind=args.bind, checkpoint=args.checkpoint,
                                max_batch=args.max_batch, log_path=args.log)
    _print_resolved("serve-teacher", {"bind": cfg.bind, "checkpoint": cfg.checkpoint,
                                      "max_batch": cfg.max_batch, "log": cfg.log_path})
    service.serve(cfg)


def _resolve_distill(raw, args):
    d = dict(raw.get("distill", {}))
    for attr, key in (("n", "n"), ("rounds", "rounds"), ("k", "k_per_round"),
                      ("selector", "selector"), ("seed", "seed")):
        val = getattr(args, attr, None)
        if val is not None:
            d[key] = val
    grid = LambdaGrid(tuple(d["grid"])) if "grid" in d else LambdaGrid()
    cfg = DistillConfig(
        n=d.get("n", 100),
        rounds=d.get("rounds", 1),
        k_per_round=d.get("k_per_round", 100),
        student_layers=tuple(raw["student"]),
        train=_train_config(raw.get("train")),
        selector=d.get("selector", "active_mixup"),
        label_mode=d.get("label_mode", "soft"),
        grid=grid,
        pair_cap=d.get("pair_cap"),
        seed=d.get("seed", 0),
        early_stop=d.get("early_stop", False),
    )
    return cfg


def _open_teacher(args):
    if (args.local is None) == (args.remote is None):
        raise InputError("specify exactly one of --local or --remote")
    if args.local:
        return teacher_mod.LocalTeacher(nn.load_model(args.local))
    return teacher_mod.RemoteTeacher(args.remote)


def _run_dir(args):
    if os.path.isabs(args.out) or args.out.startswith("."):
        return args.out
    return os.path.join(os.environ.get(RUN_ROOT_ENV, "."), args.out)


def cmd_distill(args):
    raw = _load_json(args.config)
    if "dataset" not in raw or "student" not in raw:
        raise InputError("distill config needs 'dataset' and 'student' entries")
    cfg = _resolve_distill(raw, args)
    run_dir = _run_dir(args)
    _print_resolved("distill", {"config": cfg.to_json(), "dataset": raw["dataset"],
                                "pool": raw.get("pool", "in_domain"),
                                "out": run_dir, "resume": args.resume})

    source = _build_dataset(raw["dataset"])
    test_ds = _build_dataset(raw["test"]) if "test" in raw else _build_dataset(
        raw["dataset"], fallback_seed_shift=1)
    if test_ds.labels is None:
        raise InputError("the test dataset must carry labels")
    X = data.sample_unlabeled(source, cfg.n, cfg.seed)

    pool_desc = raw.get("pool", "in_domain")
    pool_ds = None if pool_desc == "in_domain" else _build_dataset(pool_desc)

    t = _open_teacher(args)
    model, metrics, ledger = distill(t, X, test_ds, cfg, pool_dataset=pool_ds,
                                     run_dir=run_dir, resume=args.resume)
    for m in metrics:
        print(f"round {m.round}: queries={m.queries} labeled={m.labeled} "
              f"accuracy={m.accuracy:.4f} success_rate={m.success_rate:.4f}")
    print(f"total teacher queries: {ledger.total}")
    print(f"run directory: {run_dir}")


def cmd_evaluate(args):
    raw = _load_json(args.config)
    test_ds = _build_dataset(raw["test"] if "test" in raw else raw["dataset"],
                             fallback_seed_shift=0 if "test" in raw else 1)
    if test_ds.labels is None:
        raise InputError("evaluation needs a labeled dataset")
    _print_resolved("evaluate", {"checkpoint": args.checkpoint, "config": raw})
    model = nn.load_model(args.checkpoint)
    acc = nn.evaluate(model, test_ds.images, test_ds.labels)
    print(f"accuracy: {acc:.4f}")


def cmd_sweep(args):
    raw = _load_json(args.config)
    for key in ("base", "n_values", "budgets", "seeds"):
        if key not in raw:
            raise InputError(f"sweep config needs a {key!r} entry")
    if sorted(raw["budgets"]) != list(raw["budgets"]):
        raise InputError("budgets must be sorted ascending")
    base = raw["base"]
    _print_resolved("sweep", {"config": raw, "out": args.out})

    t = _open_teacher(args)
    source = _build_dataset(base["dataset"])
    test_ds = _build_dataset(base["test"]) if "test" in base else _build_dataset(
        base["dataset"], fallback_seed_shift=1)

    rows = []
    for n in raw["n_values"]:
        for budget in raw["budgets"]:
            for seed in raw["seeds"]:
                over = dict(base.get("distill", {}),
                            n=n, seed=seed,
                            rounds=0 if budget == 0 else 1,
                            k_per_round=max(budget, 1))
                cfg = DistillConfig(
                    n=n, rounds=over["rounds"], k_per_round=over["k_per_round"],
                    student_layers=tuple(base["student"]),
                    train=_train_config(dict(base.get("train", {}), seed=seed)),
                    selector=over.get("selector", "active_mixup"),
                    label_mode=over.get("label_mode", "soft"),
                    pair_cap=over.get("pair_cap"), seed=seed)
                X = data.sample_unlabeled(source, n, seed)
                _, metrics, _ = distill(t, X, test_ds, cfg)
                final = metrics[-1]
                rows.append((n, budget, seed, final.accuracy, final.success_rate))
                print(f"n={n} budget={budget} seed={seed} "
                      f"accuracy={final.accuracy:.4f}")

    with open(args.out, "w") as f:
        f.write("n,budget,seed,accuracy,success_rate\n")
        for n, budget, seed, acc, sr in rows:
            f.write(f"{n},{budget},{seed},{acc:.6f},{sr:.6f}\n")
    _report_monotonicity(rows, raw["n_values"], raw["budgets"])
    print(f"sweep written to {args.out}")


def _report_monotonicity(rows, n_values, budgets, tolerance=0.01):
    """Mean accuracy should not drop by more than the tolerance along either axis."""
    mean = {}
    for n in n_values:
        for b in budgets:
            accs = [r[3] for r in rows if r[0] == n and r[1] == b]
            mean[(n, b)] = sum(accs) / len(accs)
    ok = True
    for n in n_values:
        for lo, hi in zip(budgets, budgets[1:]):
            if mean[(n, hi)] < mean[(n, lo)] - tolerance:
                print(f"monotonicity violation: n={n}, budget {lo}->{hi}: "
                      f"{mean[(n, lo)]:.4f} -> {mean[(n, hi)]:.4f}")
                ok = False
    for b in budgets:
        for lo, hi in zip(n_values, n_values[1:]):
            if mean[(hi, b)] < mean[(lo, b)] - tolerance:
                print(f"monotonicity violation: budget={b}, n {lo}->{hi}: "
                      f"{mean[(lo, b)]:.4f} -> {mean[(hi, b)]:.4f}")
                ok = False
    print(f"monotonicity: {'ok' if ok else 'violated'} (tolerance {tolerance} accuracy)")


def cmd_dump_mixup(args):
    sel_path = os.path.join(args.run_dir, "selections", f"round_{args.round}.json")
    if not os.path.exists(sel_path):
        raise InputError(f"run has no selection log for round {args.round}: {sel_path}")
    sel = _load_json(sel_path)
    _print_resolved("dump-mixup", {"run_dir": args.run_dir, "round": args.round,
                                   "count": args.count, "out": args.out})
    state_path = os.path.join(args.run_dir, "checkpoints", "state.npz")
    with np.load(state_path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        pool_images = archive["pool_images"]
        labeled_labels = archive["labeled_labels"]

    # teacher labels for this round, in selection order
    round_rows = [k for k, p in enumerate(meta["provenance"])
                  if isinstance(p, dict) and p.get("round") == args.round]

    os.makedirs(args.out, exist_ok=True)
    entries = sorted(sel["chosen"], key=lambda c: (c["score"] is None, c["score"]))
    count = min(args.count, len(entries))
    images, notes = [], []
    for rank in range(count):
        c = entries[rank]
        img = synthesize(pool_images[c["i"]], pool_images[c["j"]], c["lambda"])
        label_row = labeled_labels[round_rows[sel["chosen"].index(c)]]
        top3 = np.argsort(-label_row)[:3]
        top = " ".join(f"class{int(k)}:{label_row[k]:.4f}" for k in top3)
        images.append(img)
        notes.append(f"pair=({c['i']},{c['j']}) lambda={c['lambda']} "
                     f"score={c['score']} top3=[{top}]")
    if images:
        data.dump_grid(images, notes, os.path.join(args.out, "lowest_confidence"))

    if entries and count > 0:
        # lambda series for the single lowest-confidence pair
        c = entries[0]
        grid = LambdaGrid(tuple(meta["grid"]))
        series = [synthesize(pool_images[c["i"]], pool_images[c["j"]], lam)
                  for lam in grid.values]
        series_notes = [f"pair=({c['i']},{c['j']}) lambda={lam}" for lam in grid.values]
        data.dump_grid(series, series_notes, os.path.join(args.out, "lambda_series"))
    print(f"wrote {count} candidate images to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="mixdistill")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train a teacher checkpoint on a labeled dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("serve-teacher", help="serve a checkpoint over HTTP")
    p.add_argument("--bind", default="127.0.0.1:8300")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-batch", type=int, default=1024)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_serve_teacher)

    p = sub.add_parser("distill", help="run the distillation loop")
    p.add_argument("--config", required=True)
    p.add_argument("--local", help="path to a local teacher checkpoint")
    p.add_argument("--remote", help="URL of a served teacher")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--selector", choices=selection.SELECTORS)
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="real-images x synthetic-budget grid of runs")
    p.add_argument("--config", required=True)
    p.add_argument("--local", help="path to a local teacher checkpoint")
    p.add_argument("--remote", help="URL of a served teacher")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-mixup", help="write selected mixup images for inspection")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_mixup)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TransportError as e:
        print(f"transport error: {e}", file=sys.stderr)
        return 3
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
