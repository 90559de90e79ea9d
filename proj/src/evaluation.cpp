#include "styleadapt/evaluation.hpp"

#include "styleadapt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace styleadapt {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

double g_score(const std::vector<double>& acc_percent, double bs, double ppl) {
    if (acc_percent.empty()) {
        throw ContractError("gscore/empty", "g_score needs at least one accuracy");
    }
    if (ppl <= 0.0) {
        throw NumericError("gscore/domain", "perplexity must be positive, got " +
                                                std::to_string(ppl));
    }
    double acc = 0.0;
    for (double a : acc_percent) acc += a;
    acc /= static_cast<double>(acc_percent.size());
    return std::cbrt(acc * bs / ppl);
}

TokenEmbedder encoder_embedder(const BackboneModel& backbone) {
    const BackboneModel* model = &backbone;
    return [model](const std::vector<int>& tokens) -> Matrix {
        NoGradGuard no_grad;
        std::vector<int> row = tokens;
        row.push_back(Vocabulary::kEos);
        HiddenStates enc = encode(*model, {row});
        // Content tokens only; the <eos> position is dropped.
        return enc.states->val.topRows(static_cast<long>(tokens.size()));
    };
}

namespace {

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

}  // namespace

double content_score(const TokenEmbedder& embed, const std::vector<int>& source,
                     const std::vector<int>& output) {
    if (source.empty() || output.empty()) {
        throw DataError("content/empty-input", "content score needs non-empty sentences");
    }
    Matrix src = embed(source);
    Matrix out = embed(output);
    Matrix sim(out.rows(), src.rows());
    for (long i = 0; i < out.rows(); ++i) {
        for (long j = 0; j < src.rows(); ++j) {
            sim(i, j) = std::max(0.0, cosine(out.row(i), src.row(j)));
        }
    }
    double precision = sim.rowwise().maxCoeff().mean();
    double recall = sim.colwise().maxCoeff().mean();
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double transfer_accuracy(const AttributeClassifier& classifier,
                         const std::vector<ClassifiedOutput>& outputs) {
    if (outputs.empty()) {
        throw DataError("eval/empty-input", "transfer accuracy of an empty output set");
    }
    long hits = 0;
    for (const auto& out : outputs) {
        if (out.token_ids.empty()) continue;  // counted as a miss
        Eigen::VectorXd probs = classifier.classify(out.token_ids);
        int arg;
        probs.maxCoeff(&arg);
        if (classifier.values[static_cast<std::size_t>(arg)] == out.target_value) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(outputs.size());
}

ordered_json EvalConfig::to_json() const {
    return ordered_json{{"token_weighted_ppl", token_weighted_ppl},
                        {"max_new_tokens", max_new_tokens},
                        {"batch_size", batch_size}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
    EvalConfig c;
    c.token_weighted_ppl = j.value("token_weighted_ppl", c.token_weighted_ppl);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.batch_size = j.value("batch_size", c.batch_size);
    return c;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

EvalReport EvalReport::recompute(const std::vector<EvalRow>& rows, bool token_weighted_ppl,
                                 const std::string& plan_text) {
    EvalReport r;
    r.rows = rows;
    r.token_weighted_ppl = token_weighted_ppl;
    r.plan_text = plan_text;
    r.pair_count = static_cast<long>(rows.size());

    std::map<std::string, long> attr_hits, attr_total, stream_hits, stream_total;
    long joint_hits = 0, joint_total = 0;
    double bs_sum = 0.0, ppl_sum = 0.0, nll_sum = 0.0;
    long token_sum = 0;
    for (const auto& row : rows) {
        bool all_correct = true;
        for (const auto& [attr, target] : row.directive) {
            auto it = row.predictions.find(attr);
            bool correct = it != row.predictions.end() && it->second.first == target;
            ++attr_total[attr];
            ++stream_total[target];
            if (correct) {
                ++attr_hits[attr];
                ++stream_hits[target];
            }
            all_correct &= correct;
        }
        if (row.directive.size() > 1) {
            ++joint_total;
            if (all_correct) ++joint_hits;
        }
        bs_sum += row.bs;
        ppl_sum += row.ppl;
        nll_sum += row.nll;
        token_sum += row.token_count;
    }
    for (const auto& [attr, total] : attr_total) {
        r.acc_by_attribute[attr] =
            100.0 * static_cast<double>(attr_hits[attr]) / static_cast<double>(total);
    }
    for (const auto& [value, total] : stream_total) {
        r.acc_by_stream[value] =
            100.0 * static_cast<double>(stream_hits[value]) / static_cast<double>(total);
    }
    if (joint_total > 0) {
        r.joint_accuracy = 100.0 * static_cast<double>(joint_hits) /
                           static_cast<double>(joint_total);
    }
    if (!rows.empty()) {
        r.bs_mean = bs_sum / static_cast<double>(rows.size());
        r.ppl_mean = token_weighted_ppl && token_sum > 0
                         ? std::exp(nll_sum / static_cast<double>(token_sum))
                         : ppl_sum / static_cast<double>(rows.size());
        std::vector<double> accs;
        for (const auto& [attr, acc] : r.acc_by_attribute) accs.push_back(acc);
        r.g = g_score(accs, r.bs_mean, r.ppl_mean);
    }
    return r;
}

ordered_json EvalReport::aggregate_json() const {
    ordered_json agg;
    agg["plan"] = plan_text;
    ordered_json acc = ordered_json::object();
    for (const auto& [attr, a] : acc_by_attribute) acc[attr] = a;
    agg["acc_by_attribute"] = acc;
    ordered_json st = ordered_json::object();
    for (const auto& [value, a] : acc_by_stream) st[value] = a;
    agg["acc_by_stream"] = st;
    if (joint_accuracy >= 0.0) agg["joint_accuracy"] = joint_accuracy;
    agg["bs"] = bs_mean;
    agg["ppl"] = ppl_mean;
    agg["g"] = g;
    agg["pairs"] = pair_count;
    agg["ppl_aggregation"] = token_weighted_ppl ? "token-weighted" : "sentence-mean";
    // Both metrics are in-artifact stand-ins, not the published external models.
    agg["content_metric"] = "frozen-encoder greedy-match F1 (BERTscore proxy)";
    agg["fluency_metric"] = "in-artifact causal LM perplexity (GPT-2 proxy)";
    return agg;
}

void EvalReport::save_jsonl(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("eval/io", "cannot write report '" + path + "'");
    for (const auto& row : rows) {
        ordered_json j;
        j["source"] = row.source;
        ordered_json d = ordered_json::object();
        for (const auto& [attr, v] : row.directive) d[attr] = v;
        j["directive"] = d;
        j["output"] = row.output;
        ordered_json preds = ordered_json::object();
        for (const auto& [attr, p] : row.predictions) {
            preds[attr] = ordered_json{{"argmax", p.first}, {"prob", p.second}};
        }
        j["predictions"] = preds;
        j["bs"] = row.bs;
        j["ppl"] = row.ppl;
        j["nll"] = row.nll;
        j["tokens"] = row.token_count;
        out << j.dump() << "\n";
    }
    ordered_json footer;
    footer["aggregate"] = aggregate_json();
    out << footer.dump() << "\n";
}

EvalReport EvalReport::load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("eval/io", "cannot read report '" + path + "'");
    std::vector<EvalRow> rows;
    std::string plan_text;
    bool token_weighted = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (j.contains("aggregate")) {
            plan_text = j["aggregate"].value("plan", "");
            token_weighted = j["aggregate"].value("ppl_aggregation", "") == "token-weighted";
            continue;
        }
        EvalRow row;
        row.source = j.at("source").get<std::string>();
        for (const auto& [attr, v] : j.at("directive").items()) {
            row.directive[attr] = v.get<std::string>();
        }
        row.output = j.at("output").get<std::string>();
        for (const auto& [attr, p] : j.at("predictions").items()) {
            row.predictions[attr] = {p.at("argmax").get<std::string>(),
                                     p.at("prob").get<double>()};
        }
        row.bs = j.at("bs").get<double>();
        row.ppl = j.at("ppl").get<double>();
        row.nll = j.value("nll", 0.0);
        row.token_count = j.value("tokens", 0L);
        rows.push_back(std::move(row));
    }
    return recompute(rows, token_weighted, plan_text);
}

void EvalReport::save_csv(const std::string& path,
                          const std::vector<std::string>& attribute_order) const {
    std::ofstream out(path);
    if (!out) throw DataError("eval/io", "cannot write csv '" + path + "'");
    out << "plan";
    for (const auto& attr : attribute_order) out << ",acc_" << attr;
    out << ",bs,ppl,g";
    if (joint_accuracy >= 0.0) out << ",joint_acc";
    out << "\n";
    out << plan_text;
    out.setf(std::ios::fixed);
    out.precision(4);
    for (const auto& attr : attribute_order) {
        auto it = acc_by_attribute.find(attr);
        out << "," << (it == acc_by_attribute.end() ? 0.0 : it->second);
    }
    out << "," << bs_mean << "," << ppl_mean << "," << g;
    if (joint_accuracy >= 0.0) out << "," << joint_accuracy;
    out << "\n";
}

// ---------------------------------------------------------------------------
// Protocol
// ---------------------------------------------------------------------------

namespace {

std::vector<int> with_eos(const std::vector<int>& ids) {
    std::vector<int> row = ids;
    row.push_back(Vocabulary::kEos);
    return row;
}

EvalRow make_row(const LabeledSentence& sentence, const std::map<std::string, std::string>& directive,
                 const std::vector<int>& output_ids, const Vocabulary& vocab,
                 const std::map<std::string, AttributeClassifier>& classifiers,
                 const FluencyLM& lm, const TokenEmbedder& embed,
                 const std::vector<int>& source_ids) {
    EvalRow row;
    row.source = sentence.text();
    row.directive = directive;
    std::vector<std::string> out_tokens = vocab.decode(output_ids);
    std::string text;
    for (std::size_t i = 0; i < out_tokens.size(); ++i) {
        if (i) text += ' ';
        text += out_tokens[i];
    }
    row.output = text;
    for (const auto& [attr, target] : directive) {
        const auto& cls = classifiers.at(attr);
        if (output_ids.empty()) {
            row.predictions[attr] = {"", 0.0};
            continue;
        }
        Eigen::VectorXd probs = cls.classify(output_ids);
        int arg;
        probs.maxCoeff(&arg);
        row.predictions[attr] = {cls.values[static_cast<std::size_t>(arg)],
                                 probs(cls.value_index(target))};
    }
    if (output_ids.empty()) {
        row.bs = 0.0;
    } else {
        row.bs = content_score(embed, source_ids, output_ids);
    }
    auto [nll, count] = lm.sequence_nll(output_ids);
    row.nll = nll;
    row.token_count = count;
    row.ppl = std::exp(nll / static_cast<double>(count));
    return row;
}

}  // namespace

EvalReport evaluate(const AdaptedModel& model, const CorpusSplit& corpus,
                    const std::map<std::string, AttributeClassifier>& classifiers,
                    const FluencyLM& lm, const BackboneModel& content_encoder,
                    const Vocabulary& vocab, const EvalConfig& config) {
    const auto& test = corpus.test.empty() ? corpus.dev : corpus.test;
    if (test.empty()) throw DataError("eval/empty-split", "no held-out sentences to evaluate");
    for (const auto& attr : model.schema().attributes) {
        auto it = classifiers.find(attr.name);
        if (it == classifiers.end()) {
            throw ConfigError("eval/missing-classifier",
                              "no classifier for attribute '" + attr.name + "'");
        }
        if (it->second.vocab_hash != vocab.hash() || lm.vocab_hash != vocab.hash()) {
            throw DataError("vocab/hash-mismatch",
                            "evaluation models disagree with the corpus vocabulary");
        }
    }
    int max_new = config.max_new_tokens > 0 ? config.max_new_tokens
                                            : model.backbone().config.max_len - 1;
    TokenEmbedder embed = encoder_embedder(content_encoder);
    Rng rng(0);  // greedy decoding consumes no randomness
    std::vector<EvalRow> rows;

    std::vector<std::vector<int>> ids;
    ids.reserve(test.size());
    for (const auto& s : test) ids.push_back(vocab.encode(s.tokens));

    if (model.plan().mode == CompositionPlan::Mode::Parallel) {
        std::vector<StreamSpec> streams = model.parallel_streams();
        for (std::size_t start = 0; start < test.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end =
                std::min(test.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<std::vector<int>> batch_rows;
            for (std::size_t i = start; i < end; ++i) batch_rows.push_back(with_eos(ids[i]));
            auto outputs = streams_to_outputs(model, batch_rows, streams, DecodeMode::Greedy,
                                              max_new, rng);
            for (const auto& out : outputs) {
                std::size_t i = start + static_cast<std::size_t>(out.input_index);
                const auto& sentence = test[i];
                bool is_transfer = false;
                for (const auto& [attr, value] : out.assignment) {
                    if (sentence.labels.at(attr) != value) is_transfer = true;
                }
                if (!is_transfer) continue;
                rows.push_back(make_row(sentence, out.assignment, out.token_ids, vocab,
                                        classifiers, lm, embed, ids[i]));
            }
        }
    } else {
        // Compositional editing: every directive whose values all differ from
        // the source labels, so each output must change every attribute.
        std::vector<std::map<std::string, std::string>> directives{{}};
        for (const auto& group : model.plan().stack_groups) {
            std::string attr = model.schema().attribute_of_value(group.front());
            std::vector<std::map<std::string, std::string>> next;
            for (const auto& base : directives) {
                for (const auto& v : group) {
                    auto d = base;
                    d[attr] = v;
                    next.push_back(std::move(d));
                }
            }
            directives = std::move(next);
        }
        for (const auto& directive : directives) {
            std::vector<std::size_t> applicable;
            for (std::size_t i = 0; i < test.size(); ++i) {
                bool all_differ = true;
                for (const auto& [attr, value] : directive) {
                    all_differ &= (test[i].labels.at(attr) != value);
                }
                if (all_differ) applicable.push_back(i);
            }
            if (applicable.empty()) continue;
            TransferDirective td;
            td.targets = directive;
            std::vector<StreamSpec> streams = model.stack_streams(td);
            for (std::size_t start = 0; start < applicable.size();
                 start += static_cast<std::size_t>(config.batch_size)) {
                std::size_t end = std::min(applicable.size(),
                                           start + static_cast<std::size_t>(config.batch_size));
                std::vector<std::vector<int>> batch_rows;
                for (std::size_t bi = start; bi < end; ++bi) {
                    batch_rows.push_back(with_eos(ids[applicable[bi]]));
                }
                auto outputs = streams_to_outputs(model, batch_rows, streams, DecodeMode::Greedy,
                                                  max_new, rng);
                for (const auto& out : outputs) {
                    std::size_t i = applicable[start + static_cast<std::size_t>(out.input_index)];
                    rows.push_back(make_row(test[i], directive, out.token_ids, vocab, classifiers,
                                            lm, embed, ids[i]));
                }
            }
        }
    }
    return EvalReport::recompute(rows, config.token_weighted_ppl, model.plan().to_string());
}

}  // namespace styleadapt
