#pragma once

#include "styleadapt/auxmodels.hpp"
#include "styleadapt/composition.hpp"
#include "styleadapt/corpus.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace styleadapt {

// (mean(acc_percent) * bs / ppl)^(1/3); perplexity enters inverted. Accuracy
// stays in percent, matching the published protocol.
double g_score(const std::vector<double>& acc_percent, double bs, double ppl);

// Maps token ids to contextual embedding rows.
using TokenEmbedder = std::function<Matrix(const std::vector<int>&)>;

// Content scoring runs on the frozen backbone encoder's states (our stand-in
// for an external embedding model).
TokenEmbedder encoder_embedder(const BackboneModel& backbone);

// Greedy token-matching F1 over cosine similarities (clamped at 0):
// precision aligns output tokens to source, recall the reverse.
double content_score(const TokenEmbedder& embed, const std::vector<int>& source,
                     const std::vector<int>& output);

struct ClassifiedOutput {
    std::vector<int> token_ids;
    std::string target_value;
};

// Fraction of outputs whose classifier argmax equals the target, in percent.
double transfer_accuracy(const AttributeClassifier& classifier,
                         const std::vector<ClassifiedOutput>& outputs);

struct EvalConfig {
    bool token_weighted_ppl = false;  // default: mean of per-sentence PPL
    int max_new_tokens = 0;           // 0 -> backbone max_len - 1
    long batch_size = 16;

    nlohmann::ordered_json to_json() const;
    static EvalConfig from_json(const nlohmann::json& j);
};

struct EvalRow {
    std::string source;
    std::map<std::string, std::string> directive;
    std::string output;
    // attribute -> (argmax value, probability of the directive target)
    std::map<std::string, std::pair<std::string, double>> predictions;
    double bs = 0.0;
    double ppl = 0.0;
    double nll = 0.0;
    long token_count = 0;
};

struct EvalReport {
    std::map<std::string, double> acc_by_attribute;  // percent, transfer pairs only
    std::map<std::string, double> acc_by_stream;     // target value -> percent
    double joint_accuracy = -1.0;                    // multi-attribute directives only
    double bs_mean = 0.0;
    double ppl_mean = 0.0;
    double g = 0.0;
    long pair_count = 0;
    bool token_weighted_ppl = false;
    std::string plan_text;
    std::vector<EvalRow> rows;

    nlohmann::ordered_json aggregate_json() const;
    void save_jsonl(const std::string& path) const;                // rows + footer aggregate
    void save_csv(const std::string& path,
                  const std::vector<std::string>& attribute_order) const;

    // Rebuilds every aggregate from per-row records alone.
    static EvalReport recompute(const std::vector<EvalRow>& rows, bool token_weighted_ppl,
                                const std::string& plan_text);
    static EvalReport load_jsonl(const std::string& path);
};

// Full automatic-evaluation protocol over the test split. Parallel plans
// evaluate every transfer stream; Stack plans evaluate every directive that
// changes all of the plan's attributes (compositional editing).
EvalReport evaluate(const AdaptedModel& model, const CorpusSplit& corpus,
                    const std::map<std::string, AttributeClassifier>& classifiers,
                    const FluencyLM& lm, const BackboneModel& content_encoder,
                    const Vocabulary& vocab, const EvalConfig& config);

}  // namespace styleadapt
