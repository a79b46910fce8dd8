import json
import os

import numpy as np
import pytest

from mixdistill import data, distill, nn
from mixdistill.distill import (DistillConfig, LabeledSet, RoundMetrics,
                                checkpoint_resume, success_rate, write_metrics_csv)
from mixdistill.errors import FormatError, InputError
from mixdistill.nn import TrainConfig
from mixdistill.teacher import LocalTeacher


def blob_world(seed=0, num_classes=3, side=8):
    """Unlabeled transfer set + labeled test set from the same task."""
    X = data.sample_unlabeled(data.synth_blobs(num_classes, 8, side, seed=seed + 50), 18,
                              seed=seed)
    test = data.synth_blobs(num_classes, 40, side, seed=seed + 100)
    return X, test


def small_cfg(**over):
    base = dict(
        n=18, rounds=2, k_per_round=4,
        student_layers=("flatten", "dense:3"),
        train=TrainConfig(learning_rate=0.2, momentum=0.9, epochs=10,
                          batch_size=16, seed=0),
        seed=0,
    )
    base.update(over)
    return DistillConfig(**base)


def test_config_validation():
    with pytest.raises(InputError):
        small_cfg(rounds=-1)
    with pytest.raises(InputError):
        small_cfg(k_per_round=0)
    with pytest.raises(InputError):
        small_cfg(selector="greedy")
    with pytest.raises(InputError):
        small_cfg(label_mode="fuzzy")


def test_config_json_round_trip_preserves_digest():
    cfg = small_cfg(pair_cap=100, label_mode="hard", early_stop=True)
    back = DistillConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_success_rate():
    assert success_rate(0.5, 1.0) == 0.5
    assert success_rate(0.98, 0.98) == 1.0
    with pytest.raises(InputError):
        success_rate(0.5, 0.0)


def test_zero_rounds_spends_exactly_n_queries(blob_teacher):
    model, _ = blob_teacher
    X, test = blob_world()
    _, metrics, ledger = distill.distill(LocalTeacher(model), X, test,
                                         small_cfg(rounds=0))
    assert ledger.total == 18
    assert ledger.per_round == [(0, 18)]
    assert len(metrics) == 1
    assert metrics[0].labeled == 18


def test_query_accounting_identity(blob_teacher):
    model, _ = blob_teacher
    X, test = blob_world()
    cfg = small_cfg(rounds=3, k_per_round=4)
    _, metrics, ledger = distill.distill(LocalTeacher(model), X, test, cfg)
    # n + sum of per-round batches, and labeled-set growth mirrors the ledger
    assert ledger.total == 18 + 3 * 4
    assert [c for _, c in ledger.per_round] == [18, 4, 4, 4]
    assert [m.labeled for m in metrics] == [18, 22, 26, 30]
    assert [m.queries for m in metrics] == [18, 22, 26, 30]


def test_determinism_metrics_csv_byte_identical(blob_teacher, tmp_path):
    model, _ = blob_teacher
    X, test = blob_world()
    cfg = small_cfg(rounds=2)
    outs = []
    for name in ("a", "b"):
        _, metrics, _ = distill.distill(LocalTeacher(model), X, test, cfg)
        path = tmp_path / f"{name}.csv"
        write_metrics_csv(metrics, path)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"round,queries,labeled,accuracy,success_rate\n")


def test_provenance_partitions_labeled_set(blob_teacher):
    model, _ = blob_teacher
    X, test = blob_world()
    cfg = small_cfg(rounds=2, k_per_round=5)
    run = {}

    class Spy(LocalTeacher):
        def predict(self, images):
            run.setdefault("calls", []).append(len(images))
            return super().predict(images)

    _, metrics, ledger = distill.distill(Spy(model), X, test, cfg)
    # re-run with a run dir to inspect provenance via the checkpoint
    assert ledger.total == 18 + 10


def test_run_dir_artifacts_and_provenance(blob_teacher, tmp_path):
    model, _ = blob_teacher
    X, test = blob_world()
    cfg = small_cfg(rounds=2, k_per_round=5)
    root = tmp_path / "run"
    distill.distill(LocalTeacher(model), X, test, cfg, run_dir=str(root))

    assert (root / "config.json").exists()
    assert (root / "metrics.csv").exists()
    assert (root / "final_model.json").exists()
    assert (root / "selections" / "round_1.json").exists()
    assert (root / "selections" / "round_2.json").exists()

    _, labeled, pool, ledger, metrics = checkpoint_resume(
        str(root / "checkpoints" / "state.npz"), cfg)
    kinds = [p.get("kind", "mixup") for p in labeled.provenance]
    assert kinds[:18] == ["original"] * 18
    assert kinds[18:] == ["mixup"] * 10
    rounds = [p["round"] for p in labeled.provenance[18:]]
    assert rounds == [1] * 5 + [2] * 5
    # every synthesized row reproduces from its provenance record
    for row, p in zip(labeled.images[18:], labeled.provenance[18:]):
        want = p["lambda"] * X.images[p["i"]] + (1 - p["lambda"]) * X.images[p["j"]]
        np.testing.assert_allclose(row, want, atol=1e-15)
    # removed pairs equal the selected pairs
    assert len(pool.removed) == len({(p["i"], p["j"]) for p in labeled.provenance[18:]})


def test_resume_bisimulates_uninterrupted_run(blob_teacher, tmp_path):
    model, _ = blob_teacher
    X, test = blob_world()
    cfg = small_cfg(rounds=3)

    straight = tmp_path / "straight"
    _, m_straight, l_straight = distill.distill(LocalTeacher(model), X, test, cfg,
                                                run_dir=str(straight))

    # interrupted run: stop after round 1 by truncating rounds, then resume
    # the full config from the saved state
    broken = tmp_path / "broken"
    cfg_short = small_cfg(rounds=3)
    rd = distill.RunDir(str(broken))
    # produce a checkpoint mid-run: run rounds 0..1 manually via a 1-round stand-in
    # sharing the digest-relevant config is required, so instead interrupt by
    # copying the straight run's post-round-1 state is not available; rerun and
    # stop via monkeypatched query failure after round 1
    calls = {"n": 0}
    real_query = distill.teacher_mod.query

    def flaky_query(t, images, ledger, round_index=0):
        if round_index == 2:
            raise RuntimeError("simulated outage")
        return real_query(t, images, ledger, round_index)

    distill.teacher_mod.query = flaky_query
    try:
        with pytest.raises(RuntimeError):
            distill.distill(LocalTeacher(model), X, test, cfg_short, run_dir=str(broken))
    finally:
        distill.teacher_mod.query = real_query

    _, m_resumed, l_resumed = distill.distill(LocalTeacher(model), X, test, cfg_short,
                                              run_dir=str(broken), resume=True)

    assert [vars(m) for m in m_resumed] == [vars(m) for m in m_straight]
    assert l_resumed.to_json() == l_straight.to_json()
    assert ((broken / "metrics.csv").read_bytes()
            == (straight / "metrics.csv").read_bytes())
    assert ((broken / "final_model.json").read_bytes()
            == (straight / "final_model.json").read_bytes())


def test_resume_refuses_mutated_config(blob_teacher, tmp_path):
    model, _ = blob_teacher
    X, test = blob_world()
    cfg = small_cfg(rounds=1)
    root = tmp_path / "run"
    distill.distill(LocalTeacher(model), X, test, cfg, run_dir=str(root))
    mutated = small_cfg(rounds=1, k_per_round=5)
    with pytest.raises(FormatError, match="different config"):
        distill.distill(LocalTeacher(model), X, test, mutated,
                        run_dir=str(root), resume=True)


def test_out_of_domain_pool(blob_teacher):
    model, _ = blob_teacher
    X, test = blob_world()
    # pool images drawn from a different synthesis seed: out-of-domain source
    other = data.sample_unlabeled(data.synth_blobs(3, 8, 8, seed=777), 12, seed=1)
    cfg = small_cfg(rounds=2, k_per_round=3)
    _, metrics, ledger = distill.distill(LocalTeacher(model), X, test, cfg,
                                         pool_dataset=other)
    assert ledger.total == 18 + 6
    assert len(metrics) == 3


def test_random_search_uses_midpoint_lambda_only(blob_teacher, tmp_path):
    model, _ = blob_teacher
    X, test = blob_world()
    cfg = small_cfg(rounds=2, selector="random_search")
    root = tmp_path / "run"
    distill.distill(LocalTeacher(model), X, test, cfg, run_dir=str(root))
    for t in (1, 2):
        sel = json.loads((root / "selections" / f"round_{t}.json").read_text())
        assert sel["selector"] == "random_search"
        assert all(c["lambda"] == 0.5 for c in sel["chosen"])
        assert all(c["score"] is None for c in sel["chosen"])


def test_vanilla_selector_completes_with_pair_removal(blob_teacher):
    model, _ = blob_teacher
    X, test = blob_world()
    cfg = small_cfg(rounds=2, selector="vanilla_al", k_per_round=6)
    _, metrics, ledger = distill.distill(LocalTeacher(model), X, test, cfg)
    assert ledger.total == 18 + 12
    assert len(metrics) == 3


def test_pool_exhaustion_stops_early(blob_teacher):
    model, _ = blob_teacher
    X, test = blob_world()
    tiny_pool = data.sample_unlabeled(X, 3, seed=0)  # 3 pairs total
    cfg = small_cfg(rounds=5, k_per_round=2)
    _, metrics, ledger = distill.distill(LocalTeacher(model), X, test, cfg,
                                         pool_dataset=tiny_pool)
    # 3 pairs support one 2-pair round plus one 1-pair round, then exhaustion
    assert ledger.total == 18 + 2 + 1
    assert len(metrics) == 3


def test_distill_rejects_unlabeled_test(blob_teacher):
    model, _ = blob_teacher
    X, test = blob_world()
    bare = data.Dataset(images=test.images, labels=None, name="t", num_classes=3)
    with pytest.raises(InputError):
        distill.distill(LocalTeacher(model), X, bare, small_cfg())
