#pragma once

#include "styleadapt/checkpoint.hpp"
#include "styleadapt/corpus.hpp"
#include "styleadapt/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace styleadapt {

struct BackboneConfig {
    int encoder_layers = 2;
    int decoder_layers = 2;
    int hidden_dim = 64;
    int heads = 4;
    int ffn_dim = 128;
    int max_len = 24;
    int vocab_size = 0;

    void validate() const;
    long param_count() const;  // closed form over the layer formulas
    int total_layers() const { return encoder_layers + decoder_layers; }

    nlohmann::ordered_json to_json() const;
    static BackboneConfig from_json(const nlohmann::json& j);
};

// Flattened (batch*time, hidden) activations plus the (batch, time) key mask.
struct HiddenStates {
    Tensor states;
    Matrix mask;
    long batch = 0;
    long time = 0;
};

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderLayerParams {
    Tensor ln1_g, ln1_b;
    AttentionParams attn;
    Tensor ln2_g, ln2_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct DecoderLayerParams {
    Tensor ln1_g, ln1_b;
    AttentionParams self_attn;
    Tensor ln2_g, ln2_b;
    AttentionParams cross_attn;
    Tensor ln3_g, ln3_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Invoked on the output of each transformer layer. `layer` is global:
// encoder layers first, then decoder layers. The hook may change the row
// count (stream replication) as long as it updates batch and mask to match.
using LayerHook = std::function<Tensor(int layer, Tensor h, long& batch, Matrix& mask)>;

class BackboneModel {
public:
    BackboneConfig config;
    Tensor embedding;  // vocab x d, scaled by sqrt(d) at lookup
    Matrix positional;  // max_len x d, sinusoidal, not a parameter
    std::vector<EncoderLayerParams> encoder_layers;
    std::vector<DecoderLayerParams> decoder_layers;
    Tensor enc_ln_g, enc_ln_b;
    Tensor dec_ln_g, dec_ln_b;
    Tensor out_w, out_b;

    std::vector<Tensor> parameters() const;
    long param_count() const;
    bool frozen() const { return frozen_; }
    void set_frozen(bool frozen);
    std::uint64_t checksum() const;

    Checkpoint to_checkpoint(const Vocabulary& vocab) const;
    static BackboneModel from_checkpoint(const Checkpoint& ckpt);

private:
    bool frozen_ = false;
};

BackboneModel build_backbone(const BackboneConfig& config, std::uint64_t seed);

// Encoder forward. Rows are token id sequences (already EOS-terminated by
// the caller's convention); they are padded to a common length internally.
HiddenStates encode(const BackboneModel& model, const std::vector<std::vector<int>>& rows,
                    const LayerHook& hook = nullptr);

// Teacher-forced decoder forward. Each prefix must begin with <bos>. Returns
// next-token logits, shape (batch * prefix_len, vocab).
Tensor decode(const BackboneModel& model, const HiddenStates& enc,
              const std::vector<std::vector<int>>& prefixes, const LayerHook& hook = nullptr,
              long* out_time = nullptr);

enum class DecodeMode { Greedy, Sample };

struct GeneratedSequence {
    std::vector<int> tokens;  // content tokens, <bos>/<eos> stripped
    bool ended_with_eos = false;
    std::vector<double> step_logprobs;  // one per emitted step, incl. the <eos> step
};

// Autoregressive generation, one output per encoder stream row. Sampling
// draws from the untempered model distribution; rng is only touched in
// Sample mode.
std::vector<GeneratedSequence> generate(const BackboneModel& model, const HiddenStates& enc,
                                        DecodeMode mode, int max_new_tokens, Rng& rng,
                                        const LayerHook& hook = nullptr);

// Per-sequence teacher-forced negative log-likelihood of `targets` given the
// encoder states: decoder input is <bos> + target, prediction includes the
// closing <eos> unless include_eos disables it for that row (sampled
// sequences that ran into the length cap never emitted one). Returns
// (batch, 1); mean per token when mean_per_token.
Tensor sequence_nll(const BackboneModel& model, const HiddenStates& enc,
                    const std::vector<std::vector<int>>& targets, bool mean_per_token,
                    const LayerHook& hook = nullptr, double label_smoothing = 0.0,
                    const std::vector<bool>* include_eos = nullptr);

// ---------------------------------------------------------------------------
// Denoising pretraining: teaches the backbone to reconstruct corpus sentences
// from locally corrupted copies, standing in for a large pretrained
// denoising autoencoder. The backbone is trained once here and frozen for
// all adapter work.
// ---------------------------------------------------------------------------
struct BackbonePretrainConfig {
    int epochs = 30;
    long batch_size = 32;
    double lr = 3e-3;
    double replace_prob = 0.1;
    double drop_prob = 0.1;
    double clean_fraction = 0.2;
    double label_smoothing = 0.1;
    double clip_norm = 1.0;

    nlohmann::ordered_json to_json() const;
    static BackbonePretrainConfig from_json(const nlohmann::json& j);
};

struct PretrainStats {
    double final_train_loss = 0.0;
    double dev_token_accuracy = 0.0;  // teacher-forced, clean input
};

PretrainStats pretrain_backbone(BackboneModel& model, const CorpusSplit& corpus,
                                const Vocabulary& vocab, const BackbonePretrainConfig& config,
                                std::uint64_t seed, std::ostream* log = nullptr);

// Sinusoidal table used by every sequence model in the project.
Matrix sinusoidal_positions(long max_len, long dim);

}  // namespace styleadapt
