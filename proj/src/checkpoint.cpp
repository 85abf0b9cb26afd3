#include "met/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace met {

static_assert(std::endian::native == std::endian::little, "checkpoints are written in host byte order");

using nlohmann::json;

json model_config_json(const ModelConfig& c) {
    return {
        {"d_t", c.d_t},
        {"d_p", c.d_p},
        {"num_layers", c.num_layers},
        {"num_heads", c.num_heads},
        {"ff_multiplier", c.ff_multiplier},
        {"head_hidden", c.head_hidden},
        {"num_classes", c.num_classes},
        {"eigen_count", c.eigen_count},
        {"max_clusters", c.max_clusters},
        {"dropout", c.dropout},
        {"use_coords", c.use_coords},
        {"use_normals", c.use_normals},
        {"use_laplacian", c.use_laplacian},
        {"use_cluster_stream", c.use_cluster_stream},
        {"tc_sum", c.tc_sum},
    };
}

ModelConfig model_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    const json reference = model_config_json(ModelConfig{});
    for (const auto& [k, v] : j.items())
        if (!reference.contains(k)) throw ConfigError("unknown model config key '" + k + "'");
    ModelConfig c;
    try {
        c.d_t = j.at("d_t").get<int>();
        c.d_p = j.at("d_p").get<int>();
        c.num_layers = j.at("num_layers").get<int>();
        c.num_heads = j.at("num_heads").get<int>();
        c.ff_multiplier = j.at("ff_multiplier").get<int>();
        c.head_hidden = j.at("head_hidden").get<int>();
        c.num_classes = j.at("num_classes").get<int>();
        c.eigen_count = j.at("eigen_count").get<int>();
        c.max_clusters = j.at("max_clusters").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.use_coords = j.at("use_coords").get<bool>();
        c.use_normals = j.at("use_normals").get<bool>();
        c.use_laplacian = j.at("use_laplacian").get<bool>();
        c.use_cluster_stream = j.at("use_cluster_stream").get<bool>();
        c.tc_sum = j.at("tc_sum").get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const MetModel<Scalar>& model, const json& extra) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    json params = json::array();
    std::vector<float> flat;
    flat.reserve(model.parameters().scalar_count());
    for (const auto& entry : model.parameters()) {
        params.push_back({{"name", entry.name},
                          {"shape", {entry.value.rows(), entry.value.cols()}},
                          {"offset", flat.size() * sizeof(float)}});
        // row-major storage, same as the tensor type
        for (Eigen::Index i = 0; i < entry.value.size(); ++i) flat.push_back(static_cast<float>(entry.value.data()[i]));
    }
    {
        std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(float)));
        if (!out) throw DataError("failed to write " + (dir / "params.bin").string());
    }
    const json manifest = {
        {"format_version", kCheckpointFormatVersion},
        {"dtype", "f32"},
        {"model", model_config_json(model.config())},
        {"parameters", params},
        {"run", extra},
    };
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw DataError("failed to write " + (dir / "manifest.json").string());
}

template <typename Scalar>
MetModel<Scalar> load_checkpoint(const std::filesystem::path& dir, json* extra) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw DataError("cannot open " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format_version", -1) != kCheckpointFormatVersion)
        throw DataError("unsupported checkpoint format version " + manifest.value("format_version", json()).dump());
    MetModel<Scalar> model(model_config_from_json(manifest.at("model")));

    std::ifstream bf(dir / "params.bin", std::ios::binary);
    if (!bf) throw DataError("cannot open " + (dir / "params.bin").string());
    const std::string bytes{std::istreambuf_iterator<char>(bf), std::istreambuf_iterator<char>()};

    std::set<std::string> seen;
    try {
        for (const auto& p : manifest.at("parameters")) {
            const auto name = p.at("name").get<std::string>();
            auto& value = model.parameters()[model.parameters().index(name)].value;
            const auto shape = p.at("shape").get<std::vector<Eigen::Index>>();
            if (shape.size() != 2 || shape[0] != value.rows() || shape[1] != value.cols())
                throw DataError("parameter '" + name + "' has shape " + p.at("shape").dump() + ", expected [" +
                                std::to_string(value.rows()) + "," + std::to_string(value.cols()) + "]");
            const auto offset = p.at("offset").get<std::size_t>();
            const auto size = static_cast<std::size_t>(value.size()) * sizeof(float);
            if (offset > bytes.size() || size > bytes.size() - offset)
                throw DataError("parameter '" + name + "' runs past the end of params.bin");
            std::vector<float> buf(static_cast<std::size_t>(value.size()));
            std::memcpy(buf.data(), bytes.data() + offset, size);
            for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = static_cast<Scalar>(buf[static_cast<std::size_t>(i)]);
            seen.insert(name);
        }
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint does not match its model config: ") + e.what());
    }
    for (const auto& entry : model.parameters())
        if (!seen.count(entry.name)) throw DataError("checkpoint lacks parameter '" + entry.name + "'");
    if (extra) *extra = manifest.value("run", json::object());
    return model;
}

template void save_checkpoint<float>(const std::filesystem::path&, const MetModel<float>&, const json&);
template void save_checkpoint<double>(const std::filesystem::path&, const MetModel<double>&, const json&);
template MetModel<float> load_checkpoint<float>(const std::filesystem::path&, json*);
template MetModel<double> load_checkpoint<double>(const std::filesystem::path&, json*);

}  // namespace met
