"""Smoke tests for the python bindings: corpus generation, the metric
primitives, parameter accounting, and a miniature end-to-end pipeline."""

import json
import math

import pytest

import styleadapt as sa


def test_corpus_roundtrip(tmp_path):
    schema = sa.default_schema()
    corpus = sa.generate_synthetic_corpus(schema, sa.TemplateBank.builtin(), 240, 7)
    assert len(corpus.train) == 216
    assert len(corpus.dev) == 12
    assert len(corpus.test) == 12

    sa.save_corpus(corpus, str(tmp_path / "corpus"), "jsonl")
    loaded = sa.load_corpus(str(tmp_path / "corpus"), "jsonl")
    assert len(loaded.train) == len(corpus.train)
    assert loaded.train[0].text() == corpus.train[0].text()
    assert loaded.train[0].labels == corpus.train[0].labels

    vocab = sa.build_vocabulary(corpus, 1)
    assert vocab.size() > 4
    ids = vocab.encode(["the", "committee", "definitely-not-a-word"])
    assert ids[-1] == 3  # <unk>
    assert vocab.decode(ids[:2]) == ["the", "committee"]


def test_schema_and_plan():
    schema = sa.default_schema()
    assert schema.attribute_of_value("past") == "tense"
    plan = sa.CompositionPlan.parse(
        "Stack(Parallel(future,past,present),Parallel(passive,active))"
    )
    plan.validate(schema)
    assert str(plan) == "Stack(Parallel(future,past,present),Parallel(passive,active))"
    with pytest.raises(sa.ConfigError):
        sa.CompositionPlan.parse("Parallel(future").validate(schema)


def test_adapter_param_accounting():
    assert sa.count_adapter_params(64, 1024, 24) == 3_171_840
    assert sa.count_adapter_params(1, 1, 1) == 4
    ratio = 100.0 * sa.count_adapter_params(64, 1024, 24) / 406_000_000
    assert round(ratio, 2) == 0.78


def test_g_score_matches_published_rows():
    assert abs(sa.g_score([90.1], 0.91, 8.2) - 2.15) <= 0.02
    assert abs(sa.g_score([96.9, 81.9], 0.96, 4.7) - 2.63) <= 0.02
    assert abs(sa.g_score([90.1, 88.2], 0.86, 20.9) - 1.54) <= 0.02
    assert sa.g_score([100.0], 1.0, 1.0) == pytest.approx(100.0 ** (1.0 / 3.0))
    with pytest.raises(sa.NumericError):
        sa.g_score([90.0], 0.9, 0.0)


def test_backbone_determinism_and_content_score():
    cfg = sa.BackboneConfig()
    cfg.encoder_layers = 1
    cfg.decoder_layers = 1
    cfg.hidden_dim = 16
    cfg.heads = 2
    cfg.ffn_dim = 24
    cfg.max_len = 12
    cfg.vocab_size = 13
    a = sa.build_backbone(cfg, 3)
    b = sa.build_backbone(cfg, 3)
    assert a.checksum() == b.checksum()
    assert a.param_count() == cfg.param_count()

    a.set_frozen(True)
    assert a.frozen()
    assert sa.content_score(a, [4, 5, 6], [4, 5, 6]) == pytest.approx(1.0)


def test_mini_pipeline(tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps(
            {
                "seed": 99,
                "workdir": str(tmp_path / "run"),
                "corpus": {"count": 240},
                "backbone": {
                    "encoder_layers": 1,
                    "decoder_layers": 1,
                    "hidden_dim": 32,
                    "heads": 4,
                    "ffn_dim": 48,
                    "pretrain": {"epochs": 6, "lr": 3e-3},
                },
                "adapters": {"bottleneck_dim": 8},
                "classifier": {"embed_dim": 16, "filters_per_width": 8, "epochs": 3},
                "lm": {
                    "layers": 1,
                    "hidden_dim": 16,
                    "heads": 2,
                    "ffn_dim": 24,
                    "epochs": 2,
                },
                "training": {
                    "lambda": 0.9,
                    "epochs": 1,
                    "batch_size": 16,
                    "samples_per_stream": 1,
                    "probe_size": 4,
                    "seed": 5,
                },
            }
        )
    )
    cfg = sa.RunConfig.load(str(config_path))
    pipe = sa.Pipeline(cfg, sa.resolve_workdir("", cfg))

    corpus = pipe.gen_data()
    assert len(corpus.train) > 0

    stats = pipe.pretrain_aux()
    assert stats["dev_token_accuracy"] > 0.5

    result = pipe.train_adapters()
    assert result["backbone_checksum_unchanged"]
    assert result["adapters_changed"]

    report = pipe.evaluate()
    assert set(report["acc_by_attribute"]) == {"tense", "voice"}
    assert 0.0 <= report["bs"] <= 1.0
    assert report["ppl"] > 0.0
    assert report["g"] > 0.0

    outputs = pipe.transfer("the committee reviews the report")
    assert len(outputs) == 5
    assignments = {tuple(o["assignment"].items()) for o in outputs}
    assert len(assignments) == 5

    one = pipe.transfer(
        "the committee reviews the report",
        "Stack(Parallel(future,past,present),Parallel(passive,active))",
        "tense=future,voice=passive",
    )
    assert len(one) == 1
    assert one[0]["assignment"] == {"tense": "future", "voice": "passive"}

    with pytest.raises(sa.StageOrderError):
        sa.Pipeline(cfg, str(tmp_path / "empty")).train_adapters()
