#pragma once

#include "styleadapt/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace styleadapt {

// Self-describing model container: a msgpack document holding a version tag,
// a kind tag, a free-form config block, the vocabulary (with hash), and named
// float64 parameter arrays. One format for backbones, adapter banks,
// classifiers, and language models.
struct Checkpoint {
    static constexpr int kVersion = 1;

    std::string kind;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::vector<std::string> vocab;
    std::uint64_t vocab_hash = 0;
    std::vector<std::pair<std::string, Matrix>> params;

    void add(const std::string& name, const Matrix& value);
    bool has(const std::string& name) const;
    const Matrix& get(const std::string& name) const;

    void save(const std::string& path) const;
    // expected_kind empty -> accept any kind.
    static Checkpoint load(const std::string& path, const std::string& expected_kind = "");
};

}  // namespace styleadapt
