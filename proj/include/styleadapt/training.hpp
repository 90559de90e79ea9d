#pragma once

#include "styleadapt/auxmodels.hpp"
#include "styleadapt/composition.hpp"
#include "styleadapt/corpus.hpp"

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace styleadapt {

struct TrainingConfig {
    double lambda_weight = 0.95;  // joint loss balance, in [0,1]
    double lr = 1e-3;
    long batch_size = 16;
    int epochs = 10;
    int samples_per_stream = 2;
    double baseline_decay = 0.99;
    bool use_baseline = true;
    double clip_norm = 1.0;
    int max_sample_len = 0;  // 0 -> backbone max_len - 1
    int probe_size = 32;     // dev sentences probed for per-stream accuracy
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

// One joint-loss record. l_cls holds the policy-gradient surrogate (the
// value whose gradient is the REINFORCE estimator; its sign is arbitrary
// once the baseline is subtracted). l_cls_estimate is the Monte-Carlo value
// of the classification loss itself (-mean reward, non-negative).
struct LossBreakdown {
    double l_rec = 0.0;
    double l_cls = 0.0;
    double l = 0.0;
    double l_cls_estimate = 0.0;
    std::map<std::string, double> stream_rec;  // value -> mean reconstruction loss
    std::map<std::string, double> stream_cls;  // value -> surrogate
};

struct SampledSequence {
    std::vector<int> token_ids;
    std::vector<double> step_logprobs;
    int stream_id = 0;
    bool ended_with_eos = false;
};

// ---------------------------------------------------------------------------
// Loss operations
// ---------------------------------------------------------------------------

// Mean per-token teacher-forced NLL of the sentence under its own stream.
// The stream's assignment must match the sentence's labels.
Tensor reconstruction_loss(const AdaptedModel& model, const StreamSpec& stream,
                           const LabeledSentence& sentence, const Vocabulary& vocab);

struct ClassificationLoss {
    Tensor surrogate;            // scalar; gradient = REINFORCE estimator
    double mean_reward = 0.0;    // mean log P_D(y_t | x')
    std::vector<SampledSequence> samples;
};

// Policy-gradient classification loss for one transfer pair: samples
// sequences from the stream's decoder, rewards them with the frozen
// classifier, and builds -mean_s (r_s - baseline) * sum_t log P(x'_t) with
// the reward treated as a constant.
ClassificationLoss classification_loss(const AdaptedModel& model, const StreamSpec& stream,
                                       const AttributeClassifier& classifier,
                                       const LabeledSentence& sentence, const Vocabulary& vocab,
                                       const TrainingConfig& config, Rng& rng, double baseline);

// (1 - lambda) * l_rec + lambda * l_cls; lambda outside [0,1] is a config error.
double joint_loss(double l_rec, double l_cls, double lambda_weight);

// REINFORCE surrogate for externally supplied sampled sequences and
// advantages: mean_s advantage_s * NLL(sample_s). Exposed so estimator
// oracles can weight enumerated paths explicitly.
Tensor reinforce_surrogate(const AdaptedModel& model, const StreamSpec& stream,
                           const std::vector<std::vector<int>>& encoder_rows,
                           const std::vector<SampledSequence>& samples,
                           const std::vector<double>& advantages, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Joint training loop
// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<LossBreakdown> epoch_losses;
    std::vector<std::map<std::string, double>> epoch_probe_accuracy;  // value -> acc
    std::vector<double> epoch_probe_content;  // mean content score on the probe
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
    std::uint64_t adapter_checksum_before = 0;
    std::uint64_t adapter_checksum_after = 0;
};

// Adapter-only optimization of the model's banks under a Parallel plan:
// matching streams accrue reconstruction loss, the others policy-gradient
// classification loss toward their own value. Stack plans are rejected; the
// backbone must be frozen. train_log receives line-delimited JSON records.
TrainResult train(AdaptedModel& model, const CorpusSplit& corpus,
                  const std::map<std::string, AttributeClassifier>& classifiers,
                  const TrainingConfig& config, const Vocabulary& vocab,
                  std::ostream* train_log = nullptr, std::ostream* progress = nullptr);

}  // namespace styleadapt
