#include "oovx/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace oovx {

namespace {

static_assert(sizeof(float) == 4);

// Serialize little-endian regardless of host order.
void to_le(const float* src, std::size_t n, std::vector<unsigned char>& out) {
    out.resize(n * 4);
    std::memcpy(out.data(), src, n * 4);
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < n; ++i) {
            std::swap(out[4 * i], out[4 * i + 3]);
            std::swap(out[4 * i + 1], out[4 * i + 2]);
        }
    }
}

void from_le(const std::vector<unsigned char>& in, float* dst, std::size_t n) {
    std::vector<unsigned char> buf = in;
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < n; ++i) {
            std::swap(buf[4 * i], buf[4 * i + 3]);
            std::swap(buf[4 * i + 1], buf[4 * i + 2]);
        }
    }
    std::memcpy(dst, buf.data(), n * 4);
}

}  // namespace

void write_f32_file(const std::filesystem::path& path, const std::vector<float>& data) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        std::vector<unsigned char> buf;
        to_le(data.data(), data.size(), buf);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<float> read_f32_file(const std::filesystem::path& path, std::size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<unsigned char> buf(expected * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw std::runtime_error("truncated parameter file " + path.string());
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("parameter file larger than expected: " + path.string());
    std::vector<float> data(expected);
    from_le(buf, data.data(), expected);
    return data;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << content;
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

LoadedModel load_model_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("missing manifest.json in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(in);
    LoadedModel loaded;
    loaded.config = model_config_from_json(manifest.at("model_config"));
    loaded.vocab_path = manifest.value("vocabulary", "");
    loaded.params = make_model_params<float>(loaded.config);
    const auto& shapes = manifest.at("parameters");
    loaded.params.visit([&](const std::string& name, std::vector<float>& v) {
        if (!shapes.contains(name) || shapes[name].get<std::size_t>() != v.size())
            throw std::runtime_error("checkpoint parameter mismatch: " + name);
        detail::read_param_file(dir / (name + ".bin"), v);
    });
    return loaded;
}

LoadedAdapter load_adapter_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "adapter_manifest.json");
    if (!in) throw std::runtime_error("missing adapter_manifest.json in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(in);
    LoadedAdapter loaded;
    const auto& jc = manifest.at("adapter_config");
    loaded.config.hidden_dims = jc.at("hidden_dims").get<std::vector<int>>();
    loaded.config.init_sigma = jc.at("init_sigma").get<double>();
    loaded.config.io_dim = jc.at("io_dim").get<int>();
    loaded.params = init_adapter<float>(loaded.config, 0);
    const auto& shapes = manifest.at("parameters");
    loaded.params.visit([&](const std::string& name, std::vector<float>& v) {
        if (!shapes.contains(name) || shapes[name].get<std::size_t>() != v.size())
            throw std::runtime_error("adapter checkpoint parameter mismatch: " + name);
        detail::read_param_file(dir / (name + ".bin"), v);
    });
    return loaded;
}

}  // namespace oovx
