#pragma once

#include "styleadapt/checkpoint.hpp"
#include "styleadapt/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace styleadapt {

struct AdapterConfig {
    int bottleneck_dim = 16;  // H_d
    int hidden_dim = 64;      // H_u, must equal the backbone hidden size
    int num_layers = 4;       // one adapter per transformer layer
    // Up-projections start at zero so a fresh bank is the identity map.
    // Random initialization is kept behind this switch.
    bool random_up_init = false;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static AdapterConfig from_json(const nlohmann::json& j);
};

// Down-projection, ReLU, up-projection, skip connection.
struct AdapterLayer {
    Tensor w_down;  // H_u x H_d
    Tensor b_down;  // 1 x H_d
    Tensor w_up;    // H_d x H_u
    Tensor b_up;    // 1 x H_u
};

// One adapter per backbone layer, all dedicated to a single attribute value.
// Layers never share parameters.
struct AdapterBank {
    std::string value;
    std::vector<AdapterLayer> layers;

    std::vector<Tensor> parameters() const;
    std::uint64_t checksum() const;
    long param_count() const;
};

// output = h + UpProj(relu(DownProj(h)))
Tensor adapter_forward(const AdapterLayer& layer, const Tensor& h);

// num_layers * (2 * H_u * H_d + H_d + H_u)
long count_adapter_params(const AdapterConfig& config);

AdapterBank build_adapter_bank(const AdapterConfig& config, const std::string& value,
                               std::uint64_t seed);

// Bank checkpoints are independent of backbone checkpoints; arrays are keyed
// (attribute-value, layer-index, parameter-name).
Checkpoint banks_to_checkpoint(const std::vector<AdapterBank>& banks, const AdapterConfig& config,
                               const std::vector<std::string>& vocab, std::uint64_t vocab_hash);
std::vector<AdapterBank> banks_from_checkpoint(const Checkpoint& ckpt, AdapterConfig* out_config);

}  // namespace styleadapt
