import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsss import kernels
from nsss.errors import DivergenceDetected, InvalidArgument
from nsss.modules import ACTION_GROUP, ENTITY_GROUP, entity_forward, init_params
from nsss.synthetic import generate_synthetic_corpus
from nsss.trainer import (Arm, MetricsLog, TrainConfig, build_vocab, entity_cases, layouts_for, pretrain_action,
                          pretrain_entity, run_ablation, sample_negatives, train)

TINY = dict(d=8, h=8, n_max=128, entity_epochs=2, action_epochs=2, e2e_epochs=2, learning_rate=0.05)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(4, 30)


def fresh(corpus, cfg):
    return init_params(build_vocab(corpus), cfg.d, cfg.h, cfg.n_max, cfg.seed)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 3e-4 and cfg.lr("end_to_end") == 3e-4
        assert TrainConfig(e2e_lr=0.1).lr("end_to_end") == 0.1

    @pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(negative_ratio=-1), dict(patience=0),
                                     dict(hard_negative_fraction=1.5), dict(holdout_fraction=1.0)])
    def test_rejects(self, bad):
        with pytest.raises(InvalidArgument):
            TrainConfig(**bad)

    def test_round_trip(self):
        cfg = TrainConfig(seed=3, d=16)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(InvalidArgument):
            TrainConfig.from_dict({"warmup": 3})


class TestNegatives:
    @given(st.integers(0, 1000), st.floats(0.1, 4.0))
    @settings(max_examples=40)
    def test_never_own_snippet(self, seed, ratio):
        c = generate_synthetic_corpus(1, 12)
        pairs = layouts_for(c.queries)
        negs = sample_negatives(pairs, c.snippet_ids, ratio, np.random.default_rng(seed))
        assert all(sid != q.paired_snippet_id for q, _, sid in negs)

    def test_ratio_one_balances(self, corpus):
        pairs = layouts_for(corpus.queries)
        negs = sample_negatives(pairs, corpus.snippet_ids, 1.0, np.random.default_rng(0))
        assert len(negs) == len(pairs)

    def test_hard_pool_used(self, corpus):
        pairs = layouts_for(corpus.queries)
        target = corpus.snippet_ids[0]
        hard = {q.id: [q.paired_snippet_id, target] for q, _ in pairs}
        negs = sample_negatives(pairs, corpus.snippet_ids, 2.0, np.random.default_rng(0), hard, 1.0)
        assert all(sid == target for q, _, sid in negs if q.paired_snippet_id != target)


class TestPhases:
    def test_deterministic(self, corpus):
        cfg = TrainConfig(seed=2, **TINY)
        a, b = train(corpus, cfg), train(corpus, cfg)
        for k in a.tensors:
            assert np.array_equal(a[k], b[k])

    def test_action_pretrain_freezes_entity(self, corpus):
        cfg = TrainConfig(seed=0, **TINY)
        start = pretrain_entity(corpus, fresh(corpus, cfg), cfg)
        after = pretrain_action(corpus, start.copy(), cfg)
        for k in start.names(ENTITY_GROUP):
            assert np.array_equal(start[k], after[k])
        assert any(not np.array_equal(start[k], after[k]) for k in start.names(ACTION_GROUP))

    def test_entity_loss_decreases(self, corpus):
        log = MetricsLog()
        cfg = TrainConfig(seed=0, **{**TINY, "entity_epochs": 5})
        pretrain_entity(corpus, fresh(corpus, cfg), cfg, metrics=log)
        losses = [r["loss"] for r in log.rows]
        assert losses[-1] < losses[0]

    def test_metrics_log_schema(self, corpus, tmp_path):
        path = tmp_path / "m.jsonl"
        log = MetricsLog(path)
        train(corpus, TrainConfig(seed=0, **TINY), metrics=log)
        log.close()
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert rows and all(set(r) == {"phase", "epoch", "loss", "val_loss"} for r in rows)
        assert [r["phase"] for r in rows][0] == "entity_pretrain" and rows[-1]["phase"] == "end_to_end"

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, corpus):
        cfg = TrainConfig(seed=0, **{**TINY, "learning_rate": 1e300})
        with pytest.raises(DivergenceDetected):
            train(corpus, cfg)

    def test_clip_norm_keeps_finite(self, corpus):
        cfg = TrainConfig(seed=0, clip_norm=1.0, **{**TINY, "learning_rate": 5.0})
        assert train(corpus, cfg).all_finite()

    @pytest.mark.parametrize("arm", list(Arm))
    def test_arms_run(self, arm):
        c = generate_synthetic_corpus(0, 110)
        from nsss.evaluation import EvalConfig
        out = run_ablation(arm, c, TrainConfig(seed=0, **{**TINY, "e2e_epochs": 1}), EvalConfig(num_distractors=20, k_rerank=5))
        assert out["arm"] == arm.value and 0.0 <= out["mrr"] <= out["upper_bound_mrr"] + 1e-9


# measured once for this exact configuration; the kernel backends sum in a
# different order and 30 epochs of SGD carry that into the third decimal
GAP_SEED0 = {"numba": 0.691554, "numpy": 0.711967}


def test_entity_pretraining_separates_labels():
    """On 50 pairs, trained entity scores sit higher on weakly labelled tokens."""
    c = generate_synthetic_corpus(0, 50)
    cfg = TrainConfig(seed=0, d=16, h=32, n_max=128, entity_lr=1.0, entity_epochs=30, patience=100)
    params = pretrain_entity(c, fresh(c, cfg), cfg)
    on, off = [], []
    for case in entity_cases(c, 0):
        e = entity_forward(case.phrase, case.snippet, params)
        on.extend(e[case.labels == 1])
        off.extend(e[case.labels == 0])
    gap = np.mean(on) - np.mean(off)
    assert gap >= 0.2
    assert gap == pytest.approx(GAP_SEED0[kernels.BACKEND], abs=1e-4)


def test_action_pretraining_loss_decreases(corpus):
    log = MetricsLog()
    cfg = TrainConfig(seed=0, **{**TINY, "action_epochs": 5, "action_lr": 0.2, "patience": 100})
    pretrain_action(corpus, fresh(corpus, cfg), cfg, metrics=log)
    losses = [r["loss"] for r in log.rows]
    assert losses[-1] < losses[0]
