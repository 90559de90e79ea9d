#include "styleadapt/checkpoint.hpp"

#include "styleadapt/errors.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace styleadapt {

using ordered_json = nlohmann::ordered_json;

void Checkpoint::add(const std::string& name, const Matrix& value) {
    if (has(name)) throw ContractError("checkpoint/duplicate", "duplicate array '" + name + "'");
    params.emplace_back(name, value);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, m] : params) {
        if (n == name) return true;
    }
    return false;
}

const Matrix& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, m] : params) {
        if (n == name) return m;
    }
    throw DataError("checkpoint/missing-array", "checkpoint lacks array '" + name + "'");
}

void Checkpoint::save(const std::string& path) const {
    ordered_json j;
    j["format"] = "styleadapt-checkpoint";
    j["version"] = kVersion;
    j["kind"] = kind;
    j["config"] = config;
    j["vocab"] = vocab;
    j["vocab_hash"] = vocab_hash;
    ordered_json arrays = ordered_json::array();
    for (const auto& [name, m] : params) {
        ordered_json ja;
        ja["name"] = name;
        ja["rows"] = m.rows();
        ja["cols"] = m.cols();
        std::vector<std::uint8_t> bytes(sizeof(double) * static_cast<std::size_t>(m.size()));
        std::memcpy(bytes.data(), m.data(), bytes.size());
        ja["data"] = ordered_json::binary(std::move(bytes));
        arrays.push_back(std::move(ja));
    }
    j["params"] = std::move(arrays);

    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::vector<std::uint8_t> packed = ordered_json::to_msgpack(j);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint/io", "cannot write checkpoint '" + path + "'");
    out.write(reinterpret_cast<const char*>(packed.data()),
              static_cast<std::streamsize>(packed.size()));
}

Checkpoint Checkpoint::load(const std::string& path, const std::string& expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StageOrderError("checkpoint/missing",
                              "missing checkpoint '" + path + "' (run the producing stage first)");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    ordered_json j;
    try {
        j = ordered_json::from_msgpack(bytes);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint/corrupt", path + ": " + e.what());
    }
    if (!j.contains("format") || j["format"] != "styleadapt-checkpoint") {
        throw DataError("checkpoint/format", path + ": not a styleadapt checkpoint");
    }
    if (!j.contains("version")) {
        throw DataError("checkpoint/version", path + ": missing version tag");
    }
    if (j["version"].get<int>() != kVersion) {
        throw DataError("checkpoint/version",
                        path + ": unsupported version " + j["version"].dump());
    }
    Checkpoint ckpt;
    ckpt.kind = j.at("kind").get<std::string>();
    if (!expected_kind.empty() && ckpt.kind != expected_kind) {
        throw DataError("checkpoint/kind", path + ": expected kind '" + expected_kind +
                                               "', found '" + ckpt.kind + "'");
    }
    ckpt.config = j.at("config");
    ckpt.vocab = j.at("vocab").get<std::vector<std::string>>();
    ckpt.vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
    for (const auto& ja : j.at("params")) {
        long rows = ja.at("rows").get<long>();
        long cols = ja.at("cols").get<long>();
        const auto& bin = ja.at("data").get_binary();
        if (bin.size() != sizeof(double) * static_cast<std::size_t>(rows * cols)) {
            throw DataError("checkpoint/corrupt",
                            path + ": array '" + ja.at("name").get<std::string>() +
                                "' has wrong byte count");
        }
        Matrix m(rows, cols);
        std::memcpy(m.data(), bin.data(), bin.size());
        ckpt.params.emplace_back(ja.at("name").get<std::string>(), std::move(m));
    }
    return ckpt;
}

}  // namespace styleadapt
