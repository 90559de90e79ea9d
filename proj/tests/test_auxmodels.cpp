#include "doctest.h"

#include "styleadapt/auxmodels.hpp"
#include "styleadapt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace styleadapt;

namespace {

struct AuxFixture {
    CorpusSplit corpus;
    Vocabulary vocab;

    AuxFixture() {
        corpus = generate_synthetic_corpus(default_schema(), TemplateBank::builtin(), 600, 7);
        vocab = build_vocabulary(corpus, 1);
    }

    ClassifierConfig quick_classifier() const {
        ClassifierConfig c;
        c.embed_dim = 24;
        c.filters_per_width = 16;
        c.epochs = 4;
        c.lr = 2e-3;
        return c;
    }
};

}  // namespace

TEST_CASE("classifier output is a distribution and batch-order invariant") {
    AuxFixture f;
    AttributeClassifier cls = build_classifier(f.quick_classifier(), "voice",
                                               f.corpus.schema.attribute("voice").values,
                                               f.vocab.size(), 3);
    CHECK(cls.values.size() == 2);  // binary attribute -> length-2 distribution

    std::vector<int> ids = f.vocab.encode(f.corpus.train[0].tokens);
    Eigen::VectorXd p1 = cls.classify(ids);
    CHECK(p1.size() == 2);
    CHECK(p1.sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p1.minCoeff() >= 0.0);

    // Same tokens classify identically regardless of surrounding calls.
    (void)cls.classify(f.vocab.encode(f.corpus.train[1].tokens));
    Eigen::VectorXd p2 = cls.classify(ids);
    CHECK((p1 - p2).norm() == 0.0);

    CHECK_THROWS_AS((void)cls.classify({}), DataError);
    CHECK(cls.log_prob(ids, 0) == doctest::Approx(std::log(p1(0))).epsilon(1e-9));
}

TEST_CASE("short sentences are padded up to the widest filter") {
    AuxFixture f;
    AttributeClassifier cls = build_classifier(f.quick_classifier(), "tense",
                                               f.corpus.schema.attribute("tense").values,
                                               f.vocab.size(), 5);
    CHECK_NOTHROW((void)cls.classify({4}));
    CHECK_NOTHROW((void)cls.classify({4, 5}));
}

TEST_CASE("classifier training: determinism, gate, and freezing") {
    AuxFixture f;
    AttributeClassifier a =
        train_classifier(f.corpus, "tense", f.quick_classifier(), f.vocab, 11);
    AttributeClassifier b =
        train_classifier(f.corpus, "tense", f.quick_classifier(), f.vocab, 11);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.held_out_accuracy == b.held_out_accuracy);

    AttributeClassifier c =
        train_classifier(f.corpus, "tense", f.quick_classifier(), f.vocab, 12);
    CHECK(a.checksum() != c.checksum());

    // The synthetic grammar carries unambiguous surface cues.
    CHECK(a.held_out_accuracy >= 0.95);
    for (const auto& p : a.parameters()) CHECK_FALSE(p->requires_grad);

    // Held-out argmax agrees with the gold label on at least 95% of dev.
    long hits = 0;
    for (const auto& s : f.corpus.dev) {
        Eigen::VectorXd probs = a.classify(f.vocab.encode(s.tokens));
        int arg;
        probs.maxCoeff(&arg);
        if (a.values[static_cast<std::size_t>(arg)] == s.labels.at("tense")) ++hits;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(f.corpus.dev.size()) >= 0.95);
}

TEST_CASE("single-class corpus raises a coverage error") {
    AuxFixture f;
    CorpusSplit pruned = f.corpus;
    pruned.train.erase(std::remove_if(pruned.train.begin(), pruned.train.end(),
                                      [](const LabeledSentence& s) {
                                          return s.labels.at("tense") != "past";
                                      }),
                       pruned.train.end());
    try {
        train_classifier(pruned, "tense", f.quick_classifier(), f.vocab, 1);
        FAIL("expected coverage error");
    } catch (const DataError& e) {
        CHECK(std::string(e.code()) == "classifier/coverage");
    }
}

TEST_CASE("classifier checkpoints round trip with attribute and vocab hash") {
    AuxFixture f;
    AttributeClassifier cls =
        train_classifier(f.corpus, "voice", f.quick_classifier(), f.vocab, 21);
    std::string path =
        (std::filesystem::temp_directory_path() / "styleadapt_cls.ckpt").string();
    Checkpoint ckpt = cls.to_checkpoint(f.vocab);
    ckpt.save(path);
    AttributeClassifier r = AttributeClassifier::from_checkpoint(Checkpoint::load(path, "classifier"));
    CHECK(r.attribute == "voice");
    CHECK(r.vocab_hash == f.vocab.hash());
    CHECK(r.checksum() == cls.checksum());
    CHECK(r.held_out_accuracy == cls.held_out_accuracy);
    std::vector<int> ids = f.vocab.encode(f.corpus.test[0].tokens);
    CHECK((r.classify(ids) - cls.classify(ids)).norm() == 0.0);
}

TEST_CASE("uniform-random untrained LM has perplexity V") {
    AuxFixture f;
    LmConfig cfg;
    cfg.layers = 1;
    cfg.hidden_dim = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 24;
    cfg.max_len = 16;
    FluencyLM lm = build_fluency_lm(cfg, f.vocab.size(), 3);
    lm.out_w->val.setZero();
    lm.out_b->val.setZero();
    std::vector<int> ids = f.vocab.encode(f.corpus.train[0].tokens);
    CHECK(lm.perplexity(ids) ==
          doctest::Approx(static_cast<double>(f.vocab.size())).epsilon(1e-9));
}

TEST_CASE("single-token sentence perplexity follows the definition") {
    LmConfig cfg;
    cfg.layers = 1;
    cfg.hidden_dim = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 24;
    cfg.max_len = 8;
    FluencyLM lm = build_fluency_lm(cfg, 11, 5);
    std::vector<int> single{4};
    auto [nll, count] = lm.sequence_nll(single);
    CHECK(count == 2);  // the token and <eos>
    CHECK(lm.perplexity(single) == doctest::Approx(std::exp(nll / 2.0)).epsilon(1e-12));
    CHECK(lm.perplexity(single) > 0.0);
    CHECK_THROWS_AS((void)lm.perplexity({}), DataError);
}

TEST_CASE("trained LM prefers real sentences over shuffled ones") {
    AuxFixture f;
    LmConfig cfg;
    cfg.layers = 1;
    cfg.hidden_dim = 32;
    cfg.heads = 4;
    cfg.ffn_dim = 64;
    cfg.max_len = static_cast<int>(f.corpus.max_sentence_tokens()) + 4;
    cfg.epochs = 8;
    cfg.lr = 3e-3;
    FluencyLM lm = train_fluency_lm(f.corpus, cfg, f.vocab, 17);

    double real_better = 0, total = 0;
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        const auto& s = f.corpus.train[static_cast<std::size_t>(i)];
        std::vector<int> ids = f.vocab.encode(s.tokens);
        std::vector<int> shuffled = ids;
        rng.shuffle(shuffled);
        if (shuffled == ids) continue;
        ++total;
        if (lm.perplexity(ids) < lm.perplexity(shuffled)) ++real_better;
    }
    CHECK(real_better / total > 0.8);

    // Frozen after training.
    for (const auto& p : lm.parameters()) CHECK_FALSE(p->requires_grad);

    // Perplexity is a per-sentence quantity: invariant under batch context.
    std::vector<int> ids = f.vocab.encode(f.corpus.dev[0].tokens);
    double solo = lm.perplexity(ids);
    (void)lm.perplexity(f.vocab.encode(f.corpus.dev[1].tokens));
    CHECK(lm.perplexity(ids) == solo);
}

TEST_CASE("LM training is deterministic and checkpoints round trip") {
    AuxFixture f;
    LmConfig cfg;
    cfg.layers = 1;
    cfg.hidden_dim = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 24;
    cfg.max_len = static_cast<int>(f.corpus.max_sentence_tokens()) + 4;
    cfg.epochs = 2;
    FluencyLM a = train_fluency_lm(f.corpus, cfg, f.vocab, 23);
    FluencyLM b = train_fluency_lm(f.corpus, cfg, f.vocab, 23);
    CHECK(a.checksum() == b.checksum());

    std::string path = (std::filesystem::temp_directory_path() / "styleadapt_lm.ckpt").string();
    a.to_checkpoint(f.vocab).save(path);
    FluencyLM r = FluencyLM::from_checkpoint(Checkpoint::load(path, "lm"));
    CHECK(r.checksum() == a.checksum());
    std::vector<int> ids = f.vocab.encode(f.corpus.test[0].tokens);
    CHECK(r.perplexity(ids) == a.perplexity(ids));
}
