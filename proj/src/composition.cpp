#include "styleadapt/composition.hpp"

#include "styleadapt/errors.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace styleadapt {

// ---------------------------------------------------------------------------
// Plan parsing
// ---------------------------------------------------------------------------

namespace {

struct PlanParser {
    const std::string& text;
    std::size_t pos = 0;

    explicit PlanParser(const std::string& t) : text(t) {}

    [[noreturn]] void fail(const std::string& message) const {
        throw ConfigError("plan/parse", "plan parse error at position " + std::to_string(pos) +
                                            ": " + message);
    }

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    bool consume(char c) {
        skip_ws();
        if (pos < text.size() && text[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }

    std::string identifier() {
        skip_ws();
        std::size_t start = pos;
        while (pos < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_' ||
                text[pos] == '-')) {
            ++pos;
        }
        if (pos == start) fail("expected a name");
        std::string word = text.substr(start, pos - start);
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        return word;
    }

    std::vector<std::string> value_list() {
        if (!consume('(')) fail("expected '('");
        std::vector<std::string> values;
        skip_ws();
        if (consume(')')) return values;
        while (true) {
            values.push_back(identifier());
            if (consume(')')) break;
            if (!consume(',')) fail("expected ',' or ')'");
        }
        return values;
    }

    CompositionPlan plan() {
        std::string head = identifier();
        CompositionPlan p;
        if (head == "parallel") {
            p.mode = CompositionPlan::Mode::Parallel;
            p.parallel_values = value_list();
        } else if (head == "stack") {
            p.mode = CompositionPlan::Mode::Stack;
            if (!consume('(')) fail("expected '('");
            while (true) {
                std::string inner = identifier();
                if (inner != "parallel") fail("Stack groups must be Parallel(...)");
                p.stack_groups.push_back(value_list());
                if (consume(')')) break;
                if (!consume(',')) fail("expected ',' or ')'");
            }
            if (p.stack_groups.empty()) fail("Stack needs at least one group");
        } else {
            fail("expected Parallel or Stack");
        }
        skip_ws();
        if (pos != text.size()) fail("trailing characters");
        return p;
    }
};

}  // namespace

CompositionPlan CompositionPlan::parse(const std::string& text) {
    PlanParser parser(text);
    return parser.plan();
}

std::string CompositionPlan::to_string() const {
    auto join = [](const std::vector<std::string>& vs) {
        std::string out;
        for (std::size_t i = 0; i < vs.size(); ++i) {
            if (i) out += ",";
            out += vs[i];
        }
        return out;
    };
    if (mode == Mode::Parallel) return "Parallel(" + join(parallel_values) + ")";
    std::string out = "Stack(";
    for (std::size_t i = 0; i < stack_groups.size(); ++i) {
        if (i) out += ",";
        out += "Parallel(" + join(stack_groups[i]) + ")";
    }
    return out + ")";
}

void CompositionPlan::validate(const AttributeSchema& schema) const {
    if (mode == Mode::Parallel) {
        std::set<std::string> seen;
        for (const auto& v : parallel_values) {
            schema.attribute_of_value(v);  // throws on unknown/ambiguous
            if (!seen.insert(v).second) {
                throw ConfigError("plan/duplicate", "value '" + v + "' repeated in plan");
            }
        }
        return;
    }
    std::set<std::string> attrs_seen;
    for (const auto& group : stack_groups) {
        if (group.empty()) throw ConfigError("plan/empty-group", "empty Parallel group in Stack");
        std::string attr = schema.attribute_of_value(group.front());
        for (const auto& v : group) {
            if (schema.attribute_of_value(v) != attr) {
                throw ConfigError("plan/mixed-group",
                                  "Stack group mixes values of different attributes");
            }
        }
        std::set<std::string> group_set(group.begin(), group.end());
        const auto& values = schema.attribute(attr).values;
        if (group_set.size() != group.size() ||
            group_set != std::set<std::string>(values.begin(), values.end())) {
            throw ConfigError("plan/group-coverage", "Stack group for '" + attr +
                                                         "' must cover its value set exactly");
        }
        if (!attrs_seen.insert(attr).second) {
            throw ConfigError("plan/attribute-repeated",
                              "attribute '" + attr + "' appears in two Stack groups");
        }
    }
}

std::vector<std::string> CompositionPlan::referenced_values() const {
    if (mode == Mode::Parallel) return parallel_values;
    std::vector<std::string> out;
    for (const auto& g : stack_groups) out.insert(out.end(), g.begin(), g.end());
    return out;
}

// ---------------------------------------------------------------------------
// Transfer directives
// ---------------------------------------------------------------------------

void TransferDirective::validate(const AttributeSchema& schema) const {
    for (const auto& [attr, value] : targets) {
        if (schema.attribute_index(attr) < 0) {
            throw ConfigError("directive/unknown-attribute", "unknown attribute '" + attr + "'");
        }
        if (!schema.has_value(attr, value)) {
            throw ConfigError("directive/unknown-value",
                              "'" + value + "' is not a value of '" + attr + "'");
        }
    }
}

TransferDirective TransferDirective::parse(const std::string& text,
                                           const AttributeSchema& schema) {
    TransferDirective d;
    std::string cur;
    auto flush = [&](const std::string& part) {
        if (part.empty()) return;
        auto eq = part.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("directive/parse", "expected attr=value in '" + part + "'");
        }
        std::string attr = part.substr(0, eq);
        std::string value = part.substr(eq + 1);
        if (d.targets.count(attr)) {
            throw ConfigError("directive/duplicate", "attribute '" + attr + "' assigned twice");
        }
        d.targets[attr] = value;
    };
    for (char c : text) {
        if (c == ',') {
            flush(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    flush(cur);
    d.validate(schema);
    return d;
}

std::string TransferDirective::to_string() const {
    std::string out;
    for (const auto& [attr, value] : targets) {
        if (!out.empty()) out += ",";
        out += attr + "=" + value;
    }
    return out;
}

// ---------------------------------------------------------------------------
// AdaptedModel
// ---------------------------------------------------------------------------

namespace {

int bank_index_in(const std::vector<AdapterBank>& banks, const std::string& value) {
    for (std::size_t i = 0; i < banks.size(); ++i) {
        if (banks[i].value == value) return static_cast<int>(i);
    }
    throw ContractError("adapter/wiring", "no bank supplied for value '" + value + "'");
}

}  // namespace

AdaptedModel::AdaptedModel(const BackboneModel& backbone, std::vector<AdapterBank> banks,
                           CompositionPlan plan, AttributeSchema schema)
    : backbone_(&backbone), banks_(std::move(banks)), plan_(std::move(plan)),
      schema_(std::move(schema)) {}

int AdaptedModel::bank_index(const std::string& value) const {
    for (std::size_t i = 0; i < banks_.size(); ++i) {
        if (banks_[i].value == value) return static_cast<int>(i);
    }
    return -1;
}

std::vector<Tensor> AdaptedModel::adapter_parameters() const {
    std::vector<Tensor> out;
    for (const auto& b : banks_) {
        auto p = b.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

long AdaptedModel::trainable_param_count() const {
    long n = 0;
    for (const auto& p : adapter_parameters()) n += p->val.size();
    return n;
}

std::uint64_t AdaptedModel::adapter_checksum() const {
    return params_checksum(adapter_parameters());
}

AdaptedModel inject_adapters(const BackboneModel& backbone, std::vector<AdapterBank> banks,
                             const CompositionPlan& plan, const AttributeSchema& schema) {
    plan.validate(schema);
    std::set<std::string> bank_values;
    for (const auto& b : banks) {
        if (!bank_values.insert(b.value).second) {
            throw ContractError("adapter/wiring", "duplicate bank for value '" + b.value + "'");
        }
        if (static_cast<int>(b.layers.size()) != backbone.config.total_layers()) {
            throw ContractError("adapter/wiring",
                                "bank '" + b.value + "' has " + std::to_string(b.layers.size()) +
                                    " layers, backbone has " +
                                    std::to_string(backbone.config.total_layers()));
        }
        for (const auto& l : b.layers) {
            if (l.w_down->rows() != backbone.config.hidden_dim) {
                throw ContractError("adapter/wiring", "bank '" + b.value +
                                                          "' hidden dim does not match backbone");
            }
        }
    }
    for (const auto& v : plan.referenced_values()) {
        if (!bank_values.count(v)) {
            throw ContractError("adapter/wiring",
                                "plan references bank '" + v + "' but it was not supplied");
        }
    }
    return AdaptedModel(backbone, std::move(banks), plan, schema);
}

std::vector<StreamSpec> AdaptedModel::parallel_streams() const {
    if (plan_.mode != CompositionPlan::Mode::Parallel) {
        throw ContractError("plan/mode", "parallel_streams on a Stack plan");
    }
    std::vector<StreamSpec> streams;
    if (plan_.parallel_values.empty()) {
        streams.push_back({});  // vacuous injection: one pass-through stream
        return streams;
    }
    for (const auto& v : plan_.parallel_values) {
        StreamSpec s;
        s.assignment[schema_.attribute_of_value(v)] = v;
        s.bank_chain.push_back(bank_index_in(banks_, v));
        streams.push_back(std::move(s));
    }
    return streams;
}

namespace {

std::vector<StreamSpec> compile_stack_targeted(const CompositionPlan& plan,
                                               const AttributeSchema& schema,
                                               const std::vector<AdapterBank>& banks,
                                               const TransferDirective& directive) {
    directive.validate(schema);
    std::set<std::string> plan_attrs;
    for (const auto& g : plan.stack_groups) plan_attrs.insert(schema.attribute_of_value(g.front()));
    for (const auto& [attr, value] : directive.targets) {
        if (!plan_attrs.count(attr)) {
            throw ConfigError("directive/attribute-not-in-plan",
                              "directive names attribute '" + attr + "' absent from plan");
        }
    }
    StreamSpec s;
    for (const auto& group : plan.stack_groups) {
        std::string attr = schema.attribute_of_value(group.front());
        auto it = directive.targets.find(attr);
        if (it == directive.targets.end()) {
            throw ConfigError("directive/missing-attribute",
                              "directive does not assign attribute '" + attr + "'");
        }
        s.assignment[attr] = it->second;
        s.bank_chain.push_back(bank_index_in(banks, it->second));
    }
    return {s};
}

std::vector<StreamSpec> compile_stack_all(const CompositionPlan& plan,
                                          const AttributeSchema& schema,
                                          const std::vector<AdapterBank>& banks) {
    std::vector<StreamSpec> streams{{}};
    for (const auto& group : plan.stack_groups) {
        std::string attr = schema.attribute_of_value(group.front());
        std::vector<StreamSpec> next;
        for (const auto& base : streams) {
            for (const auto& v : group) {
                StreamSpec s = base;
                s.assignment[attr] = v;
                s.bank_chain.push_back(bank_index_in(banks, v));
                next.push_back(std::move(s));
            }
        }
        streams = std::move(next);
    }
    return streams;
}

}  // namespace

std::vector<StreamSpec> AdaptedModel::stack_streams(const TransferDirective& directive) const {
    if (plan_.mode != CompositionPlan::Mode::Stack) {
        throw ContractError("plan/mode", "stack_streams on a Parallel plan");
    }
    return compile_stack_targeted(plan_, schema_, banks_, directive);
}

std::vector<StreamSpec> AdaptedModel::stack_all_combinations() const {
    if (plan_.mode != CompositionPlan::Mode::Stack) {
        throw ContractError("plan/mode", "stack_all_combinations on a Parallel plan");
    }
    return compile_stack_all(plan_, schema_, banks_);
}

std::vector<StreamSpec> AdaptedModel::streams_for(
    const std::optional<TransferDirective>& directive, bool all_combinations) const {
    if (plan_.mode == CompositionPlan::Mode::Parallel) return parallel_streams();
    if (all_combinations) return stack_all_combinations();
    if (!directive) {
        throw ContractError("plan/mode", "Stack plan needs a directive or all-combinations mode");
    }
    return stack_streams(*directive);
}

LayerHook AdaptedModel::make_hook(const std::vector<StreamSpec>& streams) const {
    if (streams.empty()) throw ContractError("plan/streams", "no streams to route");
    const std::vector<AdapterBank>* banks = &banks_;
    return [banks, &streams](int layer, Tensor h, long& batch, Matrix& mask) -> Tensor {
        long k = static_cast<long>(streams.size());
        if (layer == 0) {
            // Replication: the first transformer layer's output fans out to
            // one copy per stream, each through its own adapter chain.
            std::vector<Tensor> parts;
            parts.reserve(static_cast<std::size_t>(k));
            for (const auto& stream : streams) {
                Tensor s = h;
                for (int bi : stream.bank_chain) {
                    s = adapter_forward((*banks)[static_cast<std::size_t>(bi)].layers[0], s);
                }
                parts.push_back(std::move(s));
            }
            Tensor out = k == 1 ? parts.front() : vconcat(parts);
            if (k > 1) {
                Matrix tiled(mask.rows() * k, mask.cols());
                for (long i = 0; i < k; ++i) tiled.middleRows(i * mask.rows(), mask.rows()) = mask;
                mask = std::move(tiled);
                batch *= k;
            }
            return out;
        }
        // Distribution: stream rows stay with the bank of the same value.
        long rows_per_stream = h->rows() / k;
        bool any_adapter = false;
        for (const auto& s : streams) any_adapter |= !s.bank_chain.empty();
        if (!any_adapter) return h;
        std::vector<Tensor> parts;
        parts.reserve(static_cast<std::size_t>(k));
        for (long ki = 0; ki < k; ++ki) {
            Tensor s = k == 1 ? h : slice_rows(h, ki * rows_per_stream, rows_per_stream);
            for (int bi : streams[static_cast<std::size_t>(ki)].bank_chain) {
                s = adapter_forward(
                    (*banks)[static_cast<std::size_t>(bi)].layers[static_cast<std::size_t>(layer)],
                    s);
            }
            parts.push_back(std::move(s));
        }
        return k == 1 ? parts.front() : vconcat(parts);
    };
}

HiddenStates AdaptedModel::encode_streams(const std::vector<std::vector<int>>& rows,
                                          const std::vector<StreamSpec>& streams) const {
    // The hook captures `streams` by reference; keep it alive for the call.
    LayerHook hook = make_hook(streams);
    return encode(*backbone_, rows, hook);
}

Tensor AdaptedModel::decode_streams(const HiddenStates& enc,
                                    const std::vector<std::vector<int>>& prefixes,
                                    const std::vector<StreamSpec>& streams, long* out_time) const {
    LayerHook hook = make_hook(streams);
    // Decoder hooks never replicate: layer indices there are all > 0.
    return decode(*backbone_, enc, prefixes, hook, out_time);
}

std::vector<GeneratedSequence> AdaptedModel::generate_streams(
    const HiddenStates& enc, DecodeMode mode, int max_new_tokens, Rng& rng,
    const std::vector<StreamSpec>& streams) const {
    LayerHook hook = make_hook(streams);
    return generate(*backbone_, enc, mode, max_new_tokens, rng, hook);
}

Tensor AdaptedModel::sequence_nll_streams(const HiddenStates& enc,
                                          const std::vector<std::vector<int>>& targets,
                                          bool mean_per_token,
                                          const std::vector<StreamSpec>& streams,
                                          const std::vector<bool>* include_eos) const {
    LayerHook hook = make_hook(streams);
    return sequence_nll(*backbone_, enc, targets, mean_per_token, hook, 0.0, include_eos);
}

std::vector<TaggedOutput> streams_to_outputs(const AdaptedModel& model,
                                             const std::vector<std::vector<int>>& rows,
                                             const std::vector<StreamSpec>& streams,
                                             DecodeMode mode, int max_new_tokens, Rng& rng) {
    NoGradGuard no_grad;
    HiddenStates enc = model.encode_streams(rows, streams);
    auto generated = model.generate_streams(enc, mode, max_new_tokens, rng, streams);
    long b = static_cast<long>(rows.size());
    std::vector<TaggedOutput> out;
    out.reserve(generated.size());
    for (long k = 0; k < static_cast<long>(streams.size()); ++k) {
        for (long i = 0; i < b; ++i) {
            TaggedOutput t;
            t.assignment = streams[static_cast<std::size_t>(k)].assignment;
            t.input_index = i;
            t.token_ids = generated[static_cast<std::size_t>(k * b + i)].tokens;
            out.push_back(std::move(t));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Single-layer routing primitives
// ---------------------------------------------------------------------------

StreamState route_layer(const std::vector<StreamSpec>& streams,
                        const std::vector<AdapterBank>& banks, int layer_index,
                        const StreamState& input) {
    long k = static_cast<long>(streams.size());
    if (k == 0) throw ContractError("plan/streams", "no streams");
    StreamState out;
    out.batch = input.batch;
    out.time = input.time;
    out.streams = k;
    if (layer_index == 0) {
        if (input.streams != 1) {
            throw ContractError("composition/routing",
                                "layer 0 expects unreplicated input (1 stream)");
        }
        std::vector<Tensor> parts;
        for (const auto& stream : streams) {
            Tensor s = input.states;
            for (int bi : stream.bank_chain) {
                s = adapter_forward(banks[static_cast<std::size_t>(bi)].layers[0], s);
            }
            parts.push_back(std::move(s));
        }
        out.states = k == 1 ? parts.front() : vconcat(parts);
        Matrix tiled(input.mask.rows() * k, input.mask.cols());
        for (long i = 0; i < k; ++i) {
            tiled.middleRows(i * input.mask.rows(), input.mask.rows()) = input.mask;
        }
        out.mask = std::move(tiled);
        return out;
    }
    if (input.streams != k) {
        throw ContractError("composition/routing",
                            "stream count " + std::to_string(input.streams) +
                                " does not match bank routing (" + std::to_string(k) + ")");
    }
    long rows_per_stream = input.states->rows() / k;
    std::vector<Tensor> parts;
    for (long ki = 0; ki < k; ++ki) {
        Tensor s = k == 1 ? input.states : slice_rows(input.states, ki * rows_per_stream,
                                                      rows_per_stream);
        for (int bi : streams[static_cast<std::size_t>(ki)].bank_chain) {
            s = adapter_forward(
                banks[static_cast<std::size_t>(bi)].layers[static_cast<std::size_t>(layer_index)],
                s);
        }
        parts.push_back(std::move(s));
    }
    out.states = k == 1 ? parts.front() : vconcat(parts);
    out.mask = input.mask;
    return out;
}

namespace {

std::vector<StreamSpec> specs_from_banks(const std::vector<AdapterBank>& banks) {
    std::vector<StreamSpec> streams;
    for (std::size_t i = 0; i < banks.size(); ++i) {
        StreamSpec s;
        s.assignment["value"] = banks[i].value;
        s.bank_chain.push_back(static_cast<int>(i));
        streams.push_back(std::move(s));
    }
    return streams;
}

}  // namespace

StreamState parallel_forward(int layer_index, const StreamState& input,
                             const std::vector<AdapterBank>& banks) {
    if (banks.empty()) throw ContractError("composition/routing", "parallel_forward: no banks");
    return route_layer(specs_from_banks(banks), banks, layer_index, input);
}

StreamState stack_forward(int layer_index, const StreamState& input, const CompositionPlan& plan,
                          const std::vector<AdapterBank>& banks, const AttributeSchema& schema,
                          const std::optional<TransferDirective>& directive) {
    if (plan.mode != CompositionPlan::Mode::Stack) {
        throw ContractError("plan/mode", "stack_forward requires a Stack plan");
    }
    plan.validate(schema);
    std::vector<StreamSpec> streams = directive ? compile_stack_targeted(plan, schema, banks,
                                                                         *directive)
                                                : compile_stack_all(plan, schema, banks);
    return route_layer(streams, banks, layer_index, input);
}

}  // namespace styleadapt
