#pragma once

#include "styleadapt/checkpoint.hpp"
#include "styleadapt/corpus.hpp"
#include "styleadapt/tensor.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace styleadapt {

// ---------------------------------------------------------------------------
// TextCNN attribute classifier: embedding, convolutions of several widths,
// max-over-time pooling, linear head with softmax over the attribute's value
// set. One (frozen) instance per attribute guides the policy gradient;
// separately seeded instances score the evaluation.
// ---------------------------------------------------------------------------
struct ClassifierConfig {
    int embed_dim = 48;
    std::vector<int> filter_widths = {2, 3, 4};
    int filters_per_width = 32;
    int epochs = 6;
    long batch_size = 32;
    double lr = 1e-3;
    double clip_norm = 1.0;

    nlohmann::ordered_json to_json() const;
    static ClassifierConfig from_json(const nlohmann::json& j);
};

class AttributeClassifier {
public:
    std::string attribute;
    std::vector<std::string> values;
    ClassifierConfig config;
    std::uint64_t vocab_hash = 0;
    double held_out_accuracy = 0.0;

    Tensor embedding;                 // vocab x embed_dim
    std::vector<Tensor> conv_w;       // per width: (width*embed_dim) x filters
    std::vector<Tensor> conv_b;       // per width: 1 x filters
    Tensor head_w, head_b;

    std::vector<Tensor> parameters() const;
    std::uint64_t checksum() const;
    void set_frozen(bool frozen);

    int value_index(const std::string& value) const;

    // Probability distribution over the value set. Deterministic; errors on
    // an empty token sequence.
    Eigen::VectorXd classify(const std::vector<int>& token_ids) const;
    double log_prob(const std::vector<int>& token_ids, int value_idx) const;

    // Differentiable forward used by training only.
    Tensor logits(const std::vector<int>& token_ids) const;

    Checkpoint to_checkpoint(const Vocabulary& vocab) const;
    static AttributeClassifier from_checkpoint(const Checkpoint& ckpt);
};

AttributeClassifier build_classifier(const ClassifierConfig& config, const std::string& attribute,
                                     const std::vector<std::string>& values, int vocab_size,
                                     std::uint64_t seed);

// Trains on the train split, reports held-out accuracy on dev (test as
// fallback), freezes the result. Errors when the train labels do not cover
// every value of the attribute.
AttributeClassifier train_classifier(const CorpusSplit& corpus, const std::string& attribute,
                                     const ClassifierConfig& config, const Vocabulary& vocab,
                                     std::uint64_t seed, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Fluency language model: a small causal transformer over the shared
// vocabulary, the in-artifact stand-in for an external perplexity scorer.
// ---------------------------------------------------------------------------
struct LmConfig {
    int layers = 2;
    int hidden_dim = 64;
    int heads = 4;
    int ffn_dim = 128;
    int max_len = 24;
    int epochs = 10;
    long batch_size = 32;
    double lr = 1e-3;
    double clip_norm = 1.0;

    nlohmann::ordered_json to_json() const;
    static LmConfig from_json(const nlohmann::json& j);
};

struct LmLayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

class FluencyLM {
public:
    LmConfig config;
    std::uint64_t vocab_hash = 0;
    int vocab_size = 0;

    Tensor embedding;
    Matrix positional;
    std::vector<LmLayerParams> layers;
    Tensor final_ln_g, final_ln_b;
    Tensor out_w, out_b;

    std::vector<Tensor> parameters() const;
    std::uint64_t checksum() const;
    void set_frozen(bool frozen);

    // exp(mean per-token NLL including <eos>); errors on empty input.
    double perplexity(const std::vector<int>& token_ids) const;
    // Total NLL and token count (content tokens + <eos>), for token-weighted
    // aggregation and for scoring possibly-empty generated outputs.
    std::pair<double, long> sequence_nll(const std::vector<int>& token_ids) const;

    Checkpoint to_checkpoint(const Vocabulary& vocab) const;
    static FluencyLM from_checkpoint(const Checkpoint& ckpt);
};

FluencyLM build_fluency_lm(const LmConfig& config, int vocab_size, std::uint64_t seed);

FluencyLM train_fluency_lm(const CorpusSplit& corpus, const LmConfig& config,
                           const Vocabulary& vocab, std::uint64_t seed,
                           std::ostream* log = nullptr);

}  // namespace styleadapt
