#include "styleadapt/adapters.hpp"

#include "styleadapt/errors.hpp"

#include <cmath>

namespace styleadapt {

using ordered_json = nlohmann::ordered_json;

void AdapterConfig::validate() const {
    if (bottleneck_dim < 1) throw ConfigError("adapter/bottleneck", "H_d must be >= 1");
    if (hidden_dim < 1) throw ConfigError("adapter/hidden", "H_u must be >= 1");
    if (num_layers < 1) throw ConfigError("adapter/layers", "num_layers must be >= 1");
}

ordered_json AdapterConfig::to_json() const {
    return ordered_json{{"bottleneck_dim", bottleneck_dim},
                        {"hidden_dim", hidden_dim},
                        {"num_layers", num_layers},
                        {"random_up_init", random_up_init}};
}

AdapterConfig AdapterConfig::from_json(const nlohmann::json& j) {
    AdapterConfig c;
    c.bottleneck_dim = j.at("bottleneck_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.random_up_init = j.value("random_up_init", false);
    return c;
}

long count_adapter_params(const AdapterConfig& config) {
    config.validate();
    long hu = config.hidden_dim, hd = config.bottleneck_dim;
    return static_cast<long>(config.num_layers) * (2 * hu * hd + hd + hu);
}

Tensor adapter_forward(const AdapterLayer& layer, const Tensor& h) {
    if (h->cols() != layer.w_down->rows()) {
        throw ContractError("adapter/shape", "hidden dim " + std::to_string(h->cols()) +
                                                 " does not match adapter H_u " +
                                                 std::to_string(layer.w_down->rows()));
    }
    return add(h, linear(relu(linear(h, layer.w_down, layer.b_down)), layer.w_up, layer.b_up));
}

AdapterBank build_adapter_bank(const AdapterConfig& config, const std::string& value,
                               std::uint64_t seed) {
    config.validate();
    Rng rng = Rng(seed).derive("adapter/" + value);
    AdapterBank bank;
    bank.value = value;
    long hu = config.hidden_dim, hd = config.bottleneck_dim;
    for (int li = 0; li < config.num_layers; ++li) {
        std::string p = value + "/layer" + std::to_string(li);
        AdapterLayer layer;
        layer.w_down = parameter(init_xavier(hu, hd, rng), p + "/w_down");
        layer.b_down = parameter(Matrix::Zero(1, hd), p + "/b_down");
        if (config.random_up_init) {
            layer.w_up = parameter(init_xavier(hd, hu, rng), p + "/w_up");
        } else {
            layer.w_up = parameter(Matrix::Zero(hd, hu), p + "/w_up");
        }
        layer.b_up = parameter(Matrix::Zero(1, hu), p + "/b_up");
        bank.layers.push_back(std::move(layer));
    }
    return bank;
}

std::vector<Tensor> AdapterBank::parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) out.insert(out.end(), {l.w_down, l.b_down, l.w_up, l.b_up});
    return out;
}

std::uint64_t AdapterBank::checksum() const { return params_checksum(parameters()); }

long AdapterBank::param_count() const {
    long n = 0;
    for (const auto& p : parameters()) n += p->val.size();
    return n;
}

Checkpoint banks_to_checkpoint(const std::vector<AdapterBank>& banks, const AdapterConfig& config,
                               const std::vector<std::string>& vocab, std::uint64_t vocab_hash) {
    Checkpoint ckpt;
    ckpt.kind = "adapters";
    ckpt.config = config.to_json();
    ordered_json values = ordered_json::array();
    for (const auto& b : banks) values.push_back(b.value);
    ckpt.config["values"] = values;
    ckpt.vocab = vocab;
    ckpt.vocab_hash = vocab_hash;
    for (const auto& b : banks) {
        for (const auto& p : b.parameters()) ckpt.add(p->name, p->val);
    }
    return ckpt;
}

std::vector<AdapterBank> banks_from_checkpoint(const Checkpoint& ckpt, AdapterConfig* out_config) {
    AdapterConfig config = AdapterConfig::from_json(ckpt.config);
    std::vector<AdapterBank> banks;
    for (const auto& value : ckpt.config.at("values")) {
        AdapterBank bank = build_adapter_bank(config, value.get<std::string>(), 0);
        for (const auto& p : bank.parameters()) p->val = ckpt.get(p->name);
        banks.push_back(std::move(bank));
    }
    if (out_config) *out_config = config;
    return banks;
}

}  // namespace styleadapt
