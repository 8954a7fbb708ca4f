#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "oovx/adapter.hpp"
#include "oovx/model.hpp"
#include "json.hpp"

// Checkpoint directory layout: manifest.json (config, vocabulary path,
// name -> element-count table) plus one raw little-endian float32 file per
// named parameter, row-major.

namespace oovx {

void write_f32_file(const std::filesystem::path& path, const std::vector<float>& data);
std::vector<float> read_f32_file(const std::filesystem::path& path, std::size_t expected);

// Atomic text write: temp file + rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

namespace detail {

template <class T>
void write_param_file(const std::filesystem::path& path, const std::vector<T>& v) {
    std::vector<float> f(v.begin(), v.end());
    write_f32_file(path, f);
}

template <class T>
void read_param_file(const std::filesystem::path& path, std::vector<T>& v) {
    auto f = read_f32_file(path, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(f[i]);
}

}  // namespace detail

inline nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"char_embed_dim", c.char_embed_dim}, {"hidden_dim", c.hidden_dim},
            {"kernel_width", c.kernel_width},     {"lstm_layers", c.lstm_layers},
            {"vocab_size", c.vocab_size},         {"max_word_bytes", c.max_word_bytes}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.char_embed_dim = j.at("char_embed_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.kernel_width = j.at("kernel_width").get<int>();
    c.lstm_layers = j.at("lstm_layers").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_word_bytes = j.at("max_word_bytes").get<int>();
    return c;
}

template <class T>
void save_model_checkpoint(const std::filesystem::path& dir, const ModelParams<T>& params,
                           const ModelConfig& cfg, const std::string& vocab_path) {
    std::filesystem::create_directories(dir);
    nlohmann::json shapes = nlohmann::json::object();
    params.visit([&](const std::string& name, const std::vector<T>& v) {
        shapes[name] = v.size();
        detail::write_param_file(dir / (name + ".bin"), v);
    });
    nlohmann::json manifest{{"model_config", model_config_json(cfg)},
                            {"vocabulary", vocab_path},
                            {"parameters", shapes}};
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct LoadedModel {
    ModelConfig config;
    ModelParams<float> params;
    std::string vocab_path;
};

LoadedModel load_model_checkpoint(const std::filesystem::path& dir);

template <class T>
void save_adapter_checkpoint(const std::filesystem::path& dir, const AdapterParams<T>& params,
                             const AdapterConfig& cfg) {
    std::filesystem::create_directories(dir);
    nlohmann::json shapes = nlohmann::json::object();
    params.visit([&](const std::string& name, const std::vector<T>& v) {
        shapes[name] = v.size();
        detail::write_param_file(dir / (name + ".bin"), v);
    });
    nlohmann::json manifest{{"adapter_config",
                             {{"hidden_dims", cfg.hidden_dims},
                              {"init_sigma", cfg.init_sigma},
                              {"io_dim", cfg.io_dim}}},
                            {"parameters", shapes}};
    write_text_atomic(dir / "adapter_manifest.json", manifest.dump(2) + "\n");
}

struct LoadedAdapter {
    AdapterConfig config;
    AdapterParams<float> params;
};

LoadedAdapter load_adapter_checkpoint(const std::filesystem::path& dir);

}  // namespace oovx
