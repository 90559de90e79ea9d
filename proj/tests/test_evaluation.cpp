#include "doctest.h"

#include "styleadapt/errors.hpp"
#include "styleadapt/evaluation.hpp"
#include "styleadapt/training.hpp"

#include "support/published_rows.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace styleadapt;

namespace {

struct EvalFixture {
    CorpusSplit corpus;
    Vocabulary vocab;
    BackboneModel backbone;
    AdapterConfig acfg;
    AttributeSchema schema = default_schema();

    EvalFixture() {
        corpus = generate_synthetic_corpus(schema, TemplateBank::builtin(), 240, 53);
        vocab = build_vocabulary(corpus, 1);
        BackboneConfig cfg;
        cfg.encoder_layers = 1;
        cfg.decoder_layers = 1;
        cfg.hidden_dim = 16;
        cfg.heads = 2;
        cfg.ffn_dim = 24;
        cfg.max_len = static_cast<int>(corpus.max_sentence_tokens()) + 4;
        cfg.vocab_size = vocab.size();
        backbone = build_backbone(cfg, 71);
        backbone.set_frozen(true);
        acfg.bottleneck_dim = 4;
        acfg.hidden_dim = 16;
        acfg.num_layers = 2;
    }

    std::vector<AdapterBank> zero_banks() const {
        std::vector<AdapterBank> out;
        std::uint64_t seed = 10;
        for (const auto& v : {"future", "past", "present", "passive", "active"}) {
            out.push_back(build_adapter_bank(acfg, v, seed++));
        }
        return out;
    }

    std::map<std::string, AttributeClassifier> eval_classifiers() const {
        ClassifierConfig cc;
        cc.embed_dim = 16;
        cc.filters_per_width = 8;
        cc.epochs = 3;
        cc.lr = 2e-3;
        std::map<std::string, AttributeClassifier> out;
        out.emplace("tense", train_classifier(corpus, "tense", cc, vocab, 81));
        out.emplace("voice", train_classifier(corpus, "voice", cc, vocab, 82));
        return out;
    }

    FluencyLM lm() const {
        LmConfig lc;
        lc.layers = 1;
        lc.hidden_dim = 16;
        lc.heads = 2;
        lc.ffn_dim = 24;
        lc.max_len = backbone.config.max_len;
        lc.epochs = 2;
        return train_fluency_lm(corpus, lc, vocab, 83);
    }
};

}  // namespace

TEST_CASE("g-score reproduces every published table row within 0.02") {
    for (const auto& row : styleadapt_tests::published_rows()) {
        INFO("acc0=", row.acc[0], " bs=", row.bs, " ppl=", row.ppl, " expected g=", row.g);
        CHECK(std::fabs(g_score(row.acc, row.bs, row.ppl) - row.g) <= 0.02);
    }
}

TEST_CASE("g-score analytic values and domain errors") {
    CHECK(g_score({100.0}, 1.0, 1.0) == doctest::Approx(4.6416).epsilon(1e-3));
    CHECK(g_score({90.1}, 0.91, 8.2) == doctest::Approx(2.15).epsilon(1e-2));
    // Multiple accuracies enter through their mean.
    CHECK(g_score({96.9, 81.9}, 0.96, 4.7) ==
          doctest::Approx(g_score({(96.9 + 81.9) / 2.0}, 0.96, 4.7)).epsilon(1e-12));
    CHECK_THROWS_AS((void)g_score({90.0}, 0.9, 0.0), NumericError);
    CHECK_THROWS_AS((void)g_score({90.0}, 0.9, -2.0), NumericError);
    CHECK_THROWS_AS((void)g_score({}, 0.9, 1.0), ContractError);
}

TEST_CASE("transfer accuracy counts classifier agreement in percent") {
    EvalFixture f;
    auto classifiers = f.eval_classifiers();
    const auto& tense = classifiers.at("tense");

    // Manual count oracle over a probe set with known classifier decisions.
    std::vector<ClassifiedOutput> outputs;
    long manual_hits = 0;
    for (int i = 0; i < 10; ++i) {
        const auto& s = f.corpus.test[static_cast<std::size_t>(i)];
        std::vector<int> ids = f.vocab.encode(s.tokens);
        Eigen::VectorXd probs = tense.classify(ids);
        int arg;
        probs.maxCoeff(&arg);
        std::string target = s.labels.at("tense");
        if (tense.values[static_cast<std::size_t>(arg)] == target) ++manual_hits;
        outputs.push_back({ids, target});
    }
    double expected = 100.0 * static_cast<double>(manual_hits) / 10.0;
    CHECK(transfer_accuracy(tense, outputs) == doctest::Approx(expected).epsilon(1e-12));

    // Forced all-correct and 9-of-10 cases.
    std::vector<ClassifiedOutput> all = outputs;
    for (auto& o : all) {
        Eigen::VectorXd probs = tense.classify(o.token_ids);
        int arg;
        probs.maxCoeff(&arg);
        o.target_value = tense.values[static_cast<std::size_t>(arg)];
    }
    CHECK(transfer_accuracy(tense, all) == 100.0);
    all[3].target_value = all[3].target_value == "past" ? "future" : "past";
    CHECK(transfer_accuracy(tense, all) == 90.0);

    CHECK_THROWS_AS((void)transfer_accuracy(tense, {}), DataError);
}

TEST_CASE("content score: self-match, orthogonal construction, and oracle recompute") {
    EvalFixture f;
    TokenEmbedder enc_embed = encoder_embedder(f.backbone);

    std::vector<int> sentence = f.vocab.encode(f.corpus.train[0].tokens);
    CHECK(content_score(enc_embed, sentence, sentence) == doctest::Approx(1.0).epsilon(1e-12));

    // Disjoint vocabularies under orthogonalized embeddings score zero.
    TokenEmbedder orthogonal = [](const std::vector<int>& ids) {
        Matrix m = Matrix::Zero(static_cast<long>(ids.size()), 32);
        for (std::size_t i = 0; i < ids.size(); ++i) m(static_cast<long>(i), ids[i]) = 1.0;
        return m;
    };
    CHECK(content_score(orthogonal, {4, 5, 6}, {7, 8}) == 0.0);
    CHECK(content_score(orthogonal, {4, 5}, {4, 5}) == 1.0);

    // Random pair equals an independent quadratic-time recomputation.
    std::vector<int> a = f.vocab.encode(f.corpus.train[1].tokens);
    std::vector<int> b = f.vocab.encode(f.corpus.train[2].tokens);
    double got = content_score(enc_embed, a, b);
    Matrix ea = enc_embed(a), eb = enc_embed(b);
    auto cos = [](const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& y) {
        double nx = x.norm(), ny = y.norm();
        return nx == 0.0 || ny == 0.0 ? 0.0 : std::max(0.0, x.dot(y) / (nx * ny));
    };
    double precision = 0.0;
    for (long i = 0; i < eb.rows(); ++i) {
        double best = 0.0;
        for (long j = 0; j < ea.rows(); ++j) best = std::max(best, cos(eb.row(i), ea.row(j)));
        precision += best;
    }
    precision /= static_cast<double>(eb.rows());
    double recall = 0.0;
    for (long j = 0; j < ea.rows(); ++j) {
        double best = 0.0;
        for (long i = 0; i < eb.rows(); ++i) best = std::max(best, cos(eb.row(i), ea.row(j)));
        recall += best;
    }
    recall /= static_cast<double>(ea.rows());
    double expected = 2.0 * precision * recall / (precision + recall);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);

    CHECK_THROWS_AS((void)content_score(enc_embed, {}, sentence), DataError);
}

TEST_CASE("evaluate: identity model, recompute stability, single-stream agreement") {
    EvalFixture f;
    auto classifiers = f.eval_classifiers();
    FluencyLM lm = f.lm();
    EvalConfig ec;
    ec.batch_size = 8;

    CompositionPlan plan =
        CompositionPlan::parse("Parallel(future,past,present,passive,active)");
    AdaptedModel model = inject_adapters(f.backbone, f.zero_banks(), plan, f.schema);
    EvalReport report = evaluate(model, f.corpus, classifiers, lm, f.backbone, f.vocab, ec);

    CHECK(report.pair_count > 0);
    CHECK(report.acc_by_attribute.count("tense"));
    CHECK(report.acc_by_attribute.count("voice"));
    CHECK(report.bs_mean >= 0.0);
    CHECK(report.bs_mean <= 1.0);
    CHECK(report.ppl_mean > 0.0);
    CHECK(report.g > 0.0);
    for (const auto& [attr, acc] : report.acc_by_attribute) {
        CHECK(acc >= 0.0);
        CHECK(acc <= 100.0);
    }

    // Independent recomputation of the identity model's aggregates: outputs
    // equal what streams_to_outputs yields, so score them directly.
    {
        auto streams = model.parallel_streams();
        Rng rng(0);
        const auto& test = f.corpus.test;
        TokenEmbedder embed = encoder_embedder(f.backbone);
        double bs_sum = 0.0;
        long n = 0;
        std::map<std::string, std::pair<long, long>> attr_counts;  // hits, total
        for (std::size_t start = 0; start < test.size(); start += 8) {
            std::size_t end = std::min(test.size(), start + 8);
            std::vector<std::vector<int>> rows;
            for (std::size_t i = start; i < end; ++i) {
                auto ids = f.vocab.encode(test[i].tokens);
                ids.push_back(Vocabulary::kEos);
                rows.push_back(std::move(ids));
            }
            auto outs = streams_to_outputs(model, rows, streams, DecodeMode::Greedy,
                                           f.backbone.config.max_len - 1, rng);
            for (const auto& out : outs) {
                const auto& [attr, value] = *out.assignment.begin();
                const auto& sent = test[start + static_cast<std::size_t>(out.input_index)];
                if (sent.labels.at(attr) == value) continue;
                ++n;
                auto src = f.vocab.encode(sent.tokens);
                bs_sum += out.token_ids.empty() ? 0.0
                                                : content_score(embed, src, out.token_ids);
                auto& [hits, total] = attr_counts[attr];
                ++total;
                if (!out.token_ids.empty()) {
                    Eigen::VectorXd probs = classifiers.at(attr).classify(out.token_ids);
                    int arg;
                    probs.maxCoeff(&arg);
                    if (classifiers.at(attr).values[static_cast<std::size_t>(arg)] == value) {
                        ++hits;
                    }
                }
            }
        }
        CHECK(n == report.pair_count);
        CHECK(report.bs_mean == doctest::Approx(bs_sum / static_cast<double>(n)).epsilon(1e-9));
        for (const auto& [attr, counts] : attr_counts) {
            double acc = 100.0 * static_cast<double>(counts.first) /
                         static_cast<double>(counts.second);
            CHECK(report.acc_by_attribute.at(attr) == doctest::Approx(acc).epsilon(1e-9));
        }
    }

    // Serialized rows reproduce the aggregates exactly.
    std::string path =
        (std::filesystem::temp_directory_path() / "styleadapt_report.jsonl").string();
    report.save_jsonl(path);
    EvalReport re = EvalReport::load_jsonl(path);
    CHECK(re.pair_count == report.pair_count);
    CHECK(re.bs_mean == doctest::Approx(report.bs_mean).epsilon(1e-12));
    CHECK(re.ppl_mean == doctest::Approx(report.ppl_mean).epsilon(1e-12));
    CHECK(re.g == doctest::Approx(report.g).epsilon(1e-12));
    for (const auto& [attr, acc] : report.acc_by_attribute) {
        CHECK(re.acc_by_attribute.at(attr) == doctest::Approx(acc).epsilon(1e-12));
    }

    // A single-value Parallel plan reproduces the matching stream's rows.
    {
        std::vector<AdapterBank> one;
        one.push_back(f.zero_banks()[1]);  // "past"
        AdaptedModel single = inject_adapters(f.backbone, one,
                                              CompositionPlan::parse("Parallel(past)"), f.schema);
        EvalReport sr = evaluate(single, f.corpus, classifiers, lm, f.backbone, f.vocab, ec);
        std::vector<const EvalRow*> full_past;
        for (const auto& row : report.rows) {
            if (row.directive.count("tense") && row.directive.at("tense") == "past") {
                full_past.push_back(&row);
            }
        }
        REQUIRE(sr.rows.size() == full_past.size());
        for (std::size_t i = 0; i < sr.rows.size(); ++i) {
            CHECK(sr.rows[i].source == full_past[i]->source);
            CHECK(sr.rows[i].output == full_past[i]->output);
            CHECK(sr.rows[i].bs == doctest::Approx(full_past[i]->bs).epsilon(1e-9));
            CHECK(sr.rows[i].predictions.at("tense").first ==
                  full_past[i]->predictions.at("tense").first);
        }
    }
}

TEST_CASE("evaluate under a Stack plan scores compositional directives") {
    EvalFixture f;
    auto classifiers = f.eval_classifiers();
    FluencyLM lm = f.lm();
    EvalConfig ec;
    ec.batch_size = 8;

    CompositionPlan plan =
        CompositionPlan::parse("Stack(Parallel(future,past,present),Parallel(passive,active))");
    AdaptedModel model = inject_adapters(f.backbone, f.zero_banks(), plan, f.schema);
    EvalReport report = evaluate(model, f.corpus, classifiers, lm, f.backbone, f.vocab, ec);

    CHECK(report.joint_accuracy >= 0.0);
    // Each test sentence admits 2 tense alternatives x 1 voice alternative.
    CHECK(report.pair_count == static_cast<long>(f.corpus.test.size()) * 2);
    for (const auto& row : report.rows) {
        CHECK(row.directive.size() == 2);
    }

    std::string path =
        (std::filesystem::temp_directory_path() / "styleadapt_stack_report.jsonl").string();
    report.save_jsonl(path);
    EvalReport re = EvalReport::load_jsonl(path);
    CHECK(re.joint_accuracy == doctest::Approx(report.joint_accuracy).epsilon(1e-12));

    // CSV aggregate row carries the metric columns.
    std::string csv =
        (std::filesystem::temp_directory_path() / "styleadapt_report.csv").string();
    report.save_csv(csv, {"tense", "voice"});
    std::ifstream in(csv);
    std::string header, data;
    std::getline(in, header);
    std::getline(in, data);
    CHECK(header == "plan,acc_tense,acc_voice,bs,ppl,g,joint_acc");
    CHECK(data.find("Stack(") == 0);
}

TEST_CASE("token-weighted perplexity aggregation is exposed as an option") {
    std::vector<EvalRow> rows(2);
    rows[0].directive = {{"tense", "past"}};
    rows[0].predictions["tense"] = {"past", 0.9};
    rows[0].ppl = std::exp(1.0);
    rows[0].nll = 2.0;
    rows[0].token_count = 2;
    rows[1].directive = {{"tense", "future"}};
    rows[1].predictions["tense"] = {"past", 0.2};
    rows[1].ppl = std::exp(2.0);
    rows[1].nll = 8.0;
    rows[1].token_count = 4;

    EvalReport sentence_mean = EvalReport::recompute(rows, false, "Parallel(past)");
    CHECK(sentence_mean.ppl_mean ==
          doctest::Approx((std::exp(1.0) + std::exp(2.0)) / 2.0).epsilon(1e-12));
    EvalReport token_weighted = EvalReport::recompute(rows, true, "Parallel(past)");
    CHECK(token_weighted.ppl_mean == doctest::Approx(std::exp(10.0 / 6.0)).epsilon(1e-12));
    CHECK(sentence_mean.acc_by_attribute.at("tense") == 50.0);
}
