"""End-to-end distillation loop.

Query the teacher on the small unlabeled set, train an initial student, then
iterate: select low-confidence candidates from the mixup pool, query the
teacher for their soft labels, merge, retrain from scratch, shrink the pool.
Per-round metrics and a resumable run checkpoint are written when a run
directory is given.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn, selection, teacher as teacher_mod
from .data import Dataset
from .errors import FormatError, InputError
from .mixup import CandidatePool, LambdaGrid, build_pool, materialize, remove_pairs
from .nn import TrainConfig
from .teacher import QueryLedger

RUN_CHECKPOINT_VERSION = 1
METRICS_HEADER = "round,queries,labeled,accuracy,success_rate"


@dataclass
class DistillConfig:
    n: int
    rounds: int
    k_per_round: int
    student_layers: tuple
    train: TrainConfig
    selector: str = "active_mixup"
    label_mode: str = "soft"
    grid: LambdaGrid = field(default_factory=LambdaGrid)
    pair_cap: int | None = None
    seed: int = 0
    early_stop: bool = False

    def __post_init__(self):
        if self.rounds < 0:
            raise InputError("rounds must be >= 0")
        if self.rounds > 0 and self.k_per_round < 1:
            raise InputError("k_per_round must be >= 1 when rounds > 0")
        if self.selector not in selection.SELECTORS:
            raise InputError(f"unknown selector {self.selector!r}")
        if self.label_mode not in ("soft", "hard"):
            raise InputError(f"unknown label_mode {self.label_mode!r}")

    def to_json(self):
        return {
            "n": self.n,
            "rounds": self.rounds,
            "k_per_round": self.k_per_round,
            "student_layers": list(self.student_layers),
            "selector": self.selector,
            "label_mode": self.label_mode,
            "grid": list(self.grid.values),
            "pair_cap": self.pair_cap,
            "seed": self.seed,
            "early_stop": self.early_stop,
            "train": {
                "learning_rate": self.train.learning_rate,
                "momentum": self.train.momentum,
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "seed": self.train.seed,
                "warm_start": self.train.warm_start,
            },
        }

    @classmethod
    def from_json(cls, payload):
        payload = dict(payload)
        train = TrainConfig(**payload.pop("train"))
        grid = LambdaGrid(tuple(payload.pop("grid")))
        payload["student_layers"] = tuple(payload["student_layers"])
        return cls(train=train, grid=grid, **payload)

    def digest(self):
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass
class LabeledSet:
    """Teacher-labeled training material with per-item provenance."""

    images: np.ndarray
    labels: np.ndarray  # (N, K) soft labels
    provenance: list    # dicts: {"kind": "original"} or {"round", "i", "j", "lambda"}

    def merge(self, images, labels, provenance):
        return LabeledSet(
            images=np.concatenate([self.images, images]),
            labels=np.concatenate([self.labels, labels]),
            provenance=self.provenance + provenance,
        )


@dataclass
class RoundMetrics:
    round: int
    queries: int
    labeled: int
    accuracy: float
    success_rate: float


def success_rate(student_acc, teacher_acc):
    if teacher_acc <= 0:
        raise InputError("teacher accuracy must be positive")
    return student_acc / teacher_acc


def _to_targets(soft_labels, label_mode):
    if label_mode == "soft":
        return soft_labels
    hard = teacher_mod.to_hard(soft_labels)
    onehot = np.zeros_like(soft_labels)
    onehot[np.arange(len(hard)), hard] = 1.0
    return onehot


def _round_seed(seed, t):
    # independent per-round stream for the random-search selector
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), t]).generate_state(1)[0])


def _select(model, pool, cfg, t):
    if cfg.selector == "active_mixup":
        return selection.select_active(model, pool, cfg.k_per_round)
    if cfg.selector == "random_search":
        return selection.select_random(pool, cfg.k_per_round, _round_seed(cfg.seed, t))
    return selection.select_vanilla(model, pool, cfg.k_per_round)


def _metrics_line(m):
    return f"{m.round},{m.queries},{m.labeled},{m.accuracy:.6f},{m.success_rate:.6f}"


def write_metrics_csv(metrics, path):
    with open(path, "w") as f:
        f.write(METRICS_HEADER + "\n")
        for m in metrics:
            f.write(_metrics_line(m) + "\n")


class RunDir:
    """Run directory layout: config.json, metrics.csv, selections/, checkpoints/."""

    def __init__(self, root):
        self.root = root
        os.makedirs(os.path.join(root, "selections"), exist_ok=True)
        os.makedirs(os.path.join(root, "checkpoints"), exist_ok=True)

    def write_config(self, cfg):
        with open(os.path.join(self.root, "config.json"), "w") as f:
            json.dump(cfg.to_json(), f, indent=2)

    def write_selection(self, t, result):
        payload = dict(result.to_json(), round=t)
        with open(os.path.join(self.root, "selections", f"round_{t}.json"), "w") as f:
            json.dump(payload, f)

    def checkpoint_path(self):
        return os.path.join(self.root, "checkpoints", "state.npz")

    def finish(self, model, metrics):
        write_metrics_csv(metrics, os.path.join(self.root, "metrics.csv"))
        nn.save_model(model, os.path.join(self.root, "final_model.json"))


def checkpoint_save(state, path):
    """Serialize mid-run state so the run can resume bit-identically."""
    cfg, next_round, labeled, pool, ledger, metrics = state
    meta = {
        "version": RUN_CHECKPOINT_VERSION,
        "cfg": cfg.to_json(),
        "cfg_digest": cfg.digest(),
        "next_round": next_round,
        "provenance": labeled.provenance,
        "ledger": ledger.to_json(),
        "grid": list(pool.grid.values),
        "pool_name": pool.source.name,
        "pool_num_classes": pool.source.num_classes,
        "metrics": [vars(m) for m in metrics],
    }
    tmp = path + ".tmp.npz"
    np.savez(
        tmp,
        meta=json.dumps(meta),
        labeled_images=labeled.images,
        labeled_labels=labeled.labels,
        pool_images=pool.source.images,
        pool_pairs=pool.pairs,
        pool_removed=pool.removed,
    )
    os.replace(tmp, path)


def checkpoint_resume(path, cfg):
    """Load a run checkpoint; refuses to resume under a different config."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            labeled_images = archive["labeled_images"]
            labeled_labels = archive["labeled_labels"]
            pool_images = archive["pool_images"]
            pool_pairs = archive["pool_pairs"]
            pool_removed = archive["pool_removed"]
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read run checkpoint {path}: {e}") from e
    if meta.get("version") != RUN_CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version")
    if meta["cfg_digest"] != cfg.digest():
        raise FormatError(f"{path}: checkpoint was produced under a different config")
    labeled = LabeledSet(images=labeled_images, labels=labeled_labels,
                         provenance=meta["provenance"])
    pool = CandidatePool(
        source=Dataset(images=pool_images, labels=None, name=meta["pool_name"],
                       num_classes=meta["pool_num_classes"]),
        pairs=pool_pairs, grid=LambdaGrid(tuple(meta["grid"])), removed=pool_removed)
    ledger = QueryLedger.from_json(meta["ledger"])
    metrics = [RoundMetrics(**m) for m in meta["metrics"]]
    return meta["next_round"], labeled, pool, ledger, metrics


def distill(teacher, X, test, cfg, pool_dataset=None, run_dir=None, resume=False):
    """Run the full loop; returns (final student, metrics, ledger).

    ``pool_dataset`` switches the candidate pool to out-of-domain images;
    by default the pool is built from X itself.
    """
    if X.labels is not None:
        X = Dataset(images=X.images, labels=None, name=X.name, num_classes=X.num_classes)
    if test.labels is None:
        raise InputError("test dataset must carry hard labels")
    if teacher.num_classes != test.num_classes:
        raise InputError("teacher and test set disagree on the number of classes")

    spec = nn.NetworkSpec(input_shape=X.image_shape, layers=cfg.student_layers,
                          num_classes=teacher.num_classes)
    rd = RunDir(run_dir) if run_dir else None
    if rd:
        rd.write_config(cfg)

    # teacher reference accuracy for the success-rate metric; measured outside
    # the query budget (evaluation is not part of the distillation transcript)
    teacher_probs = teacher.predict(test.images)
    teacher_acc = float(np.mean(teacher_mod.to_hard(teacher_probs) == test.labels))

    start_round = 0
    metrics = []
    if resume:
        if rd is None:
            raise InputError("resume requires a run directory")
        start_round, labeled, pool, ledger, metrics = checkpoint_resume(
            rd.checkpoint_path(), cfg)
        model, _ = nn.train(spec, labeled.images, _to_targets(labeled.labels, cfg.label_mode),
                            cfg.train)
    else:
        ledger = QueryLedger()
        y0 = teacher_mod.query(teacher, X.images, ledger, round_index=0)
        labeled = LabeledSet(images=X.images, labels=y0,
                             provenance=[{"kind": "original"}] * len(X))
        model, _ = nn.train(spec, labeled.images, _to_targets(labeled.labels, cfg.label_mode),
                            cfg.train)
        acc = nn.evaluate(model, test.images, test.labels)
        metrics.append(RoundMetrics(round=0, queries=ledger.total, labeled=len(labeled.images),
                                    accuracy=acc, success_rate=success_rate(acc, teacher_acc)))
        pool = build_pool(X if pool_dataset is None else pool_dataset,
                          grid=cfg.grid, pair_cap=cfg.pair_cap,
                          seed=cfg.seed)
        start_round = 1
        if rd:
            checkpoint_save((cfg, start_round, labeled, pool, ledger, metrics),
                            rd.checkpoint_path())

    plateau = 0
    for t in range(start_round, cfg.rounds + 1):
        result = _select(model, pool, cfg, t)
        if not result.chosen:
            break  # pool exhausted before the round budget; stop early
        if rd:
            rd.write_selection(t, result)
        images = materialize(pool.source, result.chosen)
        labels = teacher_mod.query(teacher, images, ledger, round_index=t)
        provenance = [
            {"round": t, "i": c.pair[0], "j": c.pair[1], "lambda": c.lam}
            for c in result.chosen
        ]
        labeled = labeled.merge(images, labels, provenance)
        model, _ = nn.train(spec, labeled.images, _to_targets(labeled.labels, cfg.label_mode),
                            cfg.train)
        # vanilla_al may pick several lambdas from one pair; removal is at
        # pair granularity either way
        pool = remove_pairs(pool, sorted({c.pair for c in result.chosen}))
        acc = nn.evaluate(model, test.images, test.labels)
        metrics.append(RoundMetrics(round=t, queries=ledger.total, labeled=len(labeled.images),
                                    accuracy=acc, success_rate=success_rate(acc, teacher_acc)))
        if rd:
            checkpoint_save((cfg, t + 1, labeled, pool, ledger, metrics),
                            rd.checkpoint_path())
        if cfg.early_stop:
            if len(metrics) >= 2 and metrics[-1].accuracy - metrics[-2].accuracy <= 0.001:
                plateau += 1
            else:
                plateau = 0
            if plateau >= 2:
                break

    if rd:
        rd.finish(model, metrics)
    return model, metrics, ledger
