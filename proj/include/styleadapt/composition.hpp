#pragma once

#include "styleadapt/adapters.hpp"
#include "styleadapt/backbone.hpp"
#include "styleadapt/corpus.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace styleadapt {

// ---------------------------------------------------------------------------
// Composition plans. Textual form mirrors the user-facing notation:
//   Parallel(future,past,present,passive,active)
//   Stack(Parallel(future,past,present),Parallel(passive,active))
// ---------------------------------------------------------------------------
struct CompositionPlan {
    enum class Mode { Parallel, Stack };
    Mode mode = Mode::Parallel;
    std::vector<std::string> parallel_values;              // Parallel mode
    std::vector<std::vector<std::string>> stack_groups;    // Stack mode

    static CompositionPlan parse(const std::string& text);
    std::string to_string() const;

    // Parallel: every value resolves uniquely, no duplicates. Stack: each
    // group covers exactly one attribute's full value set, no attribute twice.
    void validate(const AttributeSchema& schema) const;

    // Every attribute value referenced anywhere in the plan, in plan order.
    std::vector<std::string> referenced_values() const;
};

// Target assignment for inference: attribute -> desired value.
struct TransferDirective {
    std::map<std::string, std::string> targets;

    void validate(const AttributeSchema& schema) const;
    static TransferDirective parse(const std::string& text, const AttributeSchema& schema);
    std::string to_string() const;
};

// One routed stream: its attribute-value assignment and the bank indices its
// hidden states pass through (in order) at every layer.
struct StreamSpec {
    std::map<std::string, std::string> assignment;
    std::vector<int> bank_chain;
};

// Replicated per-stream hidden states, stream-major over the batch axis:
// row ((k*batch + b)*time + t) belongs to stream k, input b.
struct StreamState {
    Tensor states;
    Matrix mask;   // (streams*batch) x time
    long streams = 0;
    long batch = 0;
    long time = 0;
};

// ---------------------------------------------------------------------------
// AdaptedModel: a frozen backbone plus adapter banks plus a plan.
// ---------------------------------------------------------------------------
class AdaptedModel {
public:
    AdaptedModel(const BackboneModel& backbone, std::vector<AdapterBank> banks,
                 CompositionPlan plan, AttributeSchema schema);

    const BackboneModel& backbone() const { return *backbone_; }
    const CompositionPlan& plan() const { return plan_; }
    const AttributeSchema& schema() const { return schema_; }
    const std::vector<AdapterBank>& banks() const { return banks_; }
    int bank_index(const std::string& value) const;  // -1 when absent

    std::vector<Tensor> adapter_parameters() const;
    long trainable_param_count() const;
    std::uint64_t adapter_checksum() const;

    // Stream sets for the three routing modes.
    std::vector<StreamSpec> parallel_streams() const;
    std::vector<StreamSpec> stack_streams(const TransferDirective& directive) const;
    std::vector<StreamSpec> stack_all_combinations() const;
    // Dispatches on plan mode; Stack requires a directive unless all_combinations.
    std::vector<StreamSpec> streams_for(const std::optional<TransferDirective>& directive,
                                        bool all_combinations = false) const;

    // Encoder pass with replication to streams.size() streams at layer 0.
    HiddenStates encode_streams(const std::vector<std::vector<int>>& rows,
                                const std::vector<StreamSpec>& streams) const;
    Tensor decode_streams(const HiddenStates& enc, const std::vector<std::vector<int>>& prefixes,
                          const std::vector<StreamSpec>& streams, long* out_time = nullptr) const;
    std::vector<GeneratedSequence> generate_streams(const HiddenStates& enc, DecodeMode mode,
                                                    int max_new_tokens, Rng& rng,
                                                    const std::vector<StreamSpec>& streams) const;
    Tensor sequence_nll_streams(const HiddenStates& enc,
                                const std::vector<std::vector<int>>& targets, bool mean_per_token,
                                const std::vector<StreamSpec>& streams,
                                const std::vector<bool>* include_eos = nullptr) const;

    LayerHook make_hook(const std::vector<StreamSpec>& streams) const;

private:
    const BackboneModel* backbone_;
    std::vector<AdapterBank> banks_;
    CompositionPlan plan_;
    AttributeSchema schema_;
};

// Validates wiring (bank count per layer, hidden dims, plan/bank coverage)
// and returns the adapted model. Backbone parameters are never copied.
AdaptedModel inject_adapters(const BackboneModel& backbone, std::vector<AdapterBank> banks,
                             const CompositionPlan& plan, const AttributeSchema& schema);

// One generated output tagged with its stream's value assignment.
struct TaggedOutput {
    std::map<std::string, std::string> assignment;
    long input_index = 0;
    std::vector<int> token_ids;
};

// Full transfer pass: encode + per-stream decode, one tagged output per
// (stream, input) pair, stream-major order.
std::vector<TaggedOutput> streams_to_outputs(const AdaptedModel& model,
                                             const std::vector<std::vector<int>>& rows,
                                             const std::vector<StreamSpec>& streams,
                                             DecodeMode mode, int max_new_tokens, Rng& rng);

// ---------------------------------------------------------------------------
// Single-layer routing primitives. The model hook composes these across
// layers; they are exposed for direct contract checks.
// ---------------------------------------------------------------------------
StreamState route_layer(const std::vector<StreamSpec>& streams,
                        const std::vector<AdapterBank>& banks, int layer_index,
                        const StreamState& input);

// Parallel routing at one layer: replicates at layer 0, distributes after.
StreamState parallel_forward(int layer_index, const StreamState& input,
                             const std::vector<AdapterBank>& banks);

// Stack routing at one layer for a targeted directive or all combinations.
StreamState stack_forward(int layer_index, const StreamState& input, const CompositionPlan& plan,
                          const std::vector<AdapterBank>& banks, const AttributeSchema& schema,
                          const std::optional<TransferDirective>& directive);

}  // namespace styleadapt
