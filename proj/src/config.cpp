#include "met/config.hpp"

#include <cstdint>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace met {
namespace {

using nlohmann::json;

template <typename T>
T convert(const std::string& name, const json& v) {
    auto bad = [&](const char* want) { return ConfigError("config key '" + name + "' expects " + want + ", got " + v.dump()); };
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw bad("a boolean");
        return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) throw bad("a nonnegative integer");
        return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw bad("an integer");
        return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw bad("a number");
        return v.get<T>();
    } else {
        static_assert(std::is_same_v<T, std::string>);
        if (!v.is_string()) throw bad("a string");
        return v.get<std::string>();
    }
}

// `ref` maps a (const or mutable) RunConfig to the field.
template <typename Ref>
ConfigKey key(std::string name, std::string provenance, std::string help, Ref ref) {
    using T = std::remove_cvref_t<decltype(ref(std::declval<RunConfig&>()))>;
    ConfigKey k;
    k.name = name;
    k.provenance = std::move(provenance);
    k.help = std::move(help);
    k.get = [ref](const RunConfig& c) { return json(ref(c)); };
    k.set = [ref, name](RunConfig& c, const json& v) { ref(c) = convert<T>(name, v); };
    return k;
}

const char* kPublished = "published";

std::vector<ConfigKey> make_keys() {
    std::vector<ConfigKey> keys;
    auto add = [&](ConfigKey k) { keys.push_back(std::move(k)); };

    add(key("preprocess.simplify", "", "run QEM simplification", [](auto& c) -> auto& { return c.preprocess.simplify; }));
    add(key("preprocess.target_vertices", kPublished, "vertex budget after simplification",
            [](auto& c) -> auto& { return c.preprocess.target_vertices; }));
    add(key("preprocess.target_faces", kPublished, "face count after padding (0 disables padding)",
            [](auto& c) -> auto& { return c.preprocess.target_faces; }));
    add(key("preprocess.eigen_count", "", "Laplacian eigenvectors per face (E)",
            [](auto& c) -> auto& { return c.preprocess.eigen_count; }));
    add(key("preprocess.lambda", kPublished, "clusters = max(1, floor(V / lambda))",
            [](auto& c) -> auto& { return c.preprocess.lambda; }));
    add(key("preprocess.merge_eps", "", "duplicate-vertex merge distance", [](auto& c) -> auto& { return c.preprocess.merge_eps; }));
    add(key("preprocess.zero_tol", "", "eigenvalues below this count as zero modes",
            [](auto& c) -> auto& { return c.preprocess.zero_tol; }));
    {
        ConfigKey k;
        k.name = "preprocess.cluster_features";
        k.help = "Ward input: \"centroid\" or \"full\" feature rows";
        k.get = [](const RunConfig& c) {
            return json(c.preprocess.cluster_features == ClusterFeatures::Centroid ? "centroid" : "full");
        };
        k.set = [](RunConfig& c, const json& v) {
            const auto s = convert<std::string>("preprocess.cluster_features", v);
            if (s == "centroid")
                c.preprocess.cluster_features = ClusterFeatures::Centroid;
            else if (s == "full")
                c.preprocess.cluster_features = ClusterFeatures::Full;
            else
                throw ConfigError("preprocess.cluster_features must be \"centroid\" or \"full\", got \"" + s + "\"");
        };
        add(std::move(k));
    }
    add(key("preprocess.dense_threshold", "", "dense eigensolver up to this many faces",
            [](auto& c) -> auto& { return c.preprocess.eigen.dense_threshold; }));
    add(key("preprocess.max_restarts", "", "iterative eigensolver restart limit",
            [](auto& c) -> auto& { return c.preprocess.eigen.max_restarts; }));

    add(key("model.d_t", kPublished, "triangle token width", [](auto& c) -> auto& { return c.model.d_t; }));
    add(key("model.d_p", kPublished, "cluster token width", [](auto& c) -> auto& { return c.model.d_p; }));
    add(key("model.num_layers", "", "transformer layers", [](auto& c) -> auto& { return c.model.num_layers; }));
    add(key("model.num_heads", "", "attention heads", [](auto& c) -> auto& { return c.model.num_heads; }));
    add(key("model.ff_multiplier", "", "feedforward hidden width / token width",
            [](auto& c) -> auto& { return c.model.ff_multiplier; }));
    add(key("model.head_hidden", "", "classifier hidden width (0 = d_t)", [](auto& c) -> auto& { return c.model.head_hidden; }));
    add(key("model.max_clusters", "", "cluster embedding rows; must exceed clusters + 1",
            [](auto& c) -> auto& { return c.model.max_clusters; }));
    add(key("model.dropout", kPublished, "dropout probability", [](auto& c) -> auto& { return c.model.dropout; }));
    add(key("model.use_coords", "", "feed vertex coordinates", [](auto& c) -> auto& { return c.model.use_coords; }));
    add(key("model.use_normals", "", "feed face normals", [](auto& c) -> auto& { return c.model.use_normals; }));
    add(key("model.use_laplacian", "", "feed Laplacian eigenvectors", [](auto& c) -> auto& { return c.model.use_laplacian; }));
    add(key("model.use_cluster_stream", "", "cluster tokens with CT/TC/SA_p",
            [](auto& c) -> auto& { return c.model.use_cluster_stream; }));
    add(key("model.tc_sum", "", "TC sums cluster tokens instead of averaging", [](auto& c) -> auto& { return c.model.tc_sum; }));

    add(key("train.lr", kPublished, "AdamW learning rate", [](auto& c) -> auto& { return c.train.optimizer.lr; }));
    add(key("train.weight_decay", kPublished, "decoupled weight decay", [](auto& c) -> auto& { return c.train.optimizer.weight_decay; }));
    add(key("train.beta1", "", "AdamW first-moment decay", [](auto& c) -> auto& { return c.train.optimizer.beta1; }));
    add(key("train.beta2", "", "AdamW second-moment decay", [](auto& c) -> auto& { return c.train.optimizer.beta2; }));
    add(key("train.eps", "", "AdamW epsilon", [](auto& c) -> auto& { return c.train.optimizer.eps; }));
    add(key("train.batch_size", kPublished, "meshes per step", [](auto& c) -> auto& { return c.train.batch_size; }));
    add(key("train.max_steps", "", "optimizer steps", [](auto& c) -> auto& { return c.train.max_steps; }));
    add(key("train.seed", "", "seed for init, split, shuffles, dropout, augmentation", [](auto& c) -> auto& { return c.train.seed; }));
    add(key("train.validation_fraction", kPublished, "held-out share of the training set",
            [](auto& c) -> auto& { return c.train.validation_fraction; }));
    add(key("train.eval_every", "", "steps between validation events", [](auto& c) -> auto& { return c.train.eval_every; }));
    add(key("train.threads", "", "worker threads per batch (results do not depend on it)",
            [](auto& c) -> auto& { return c.train.threads; }));
    add(key("train.augment", "", "random similarity transforms while training",
            [](auto& c) -> auto& { return c.train.augment.enabled; }));
    add(key("train.scale_min", "", "augmentation scale lower bound", [](auto& c) -> auto& { return c.train.augment.scale_min; }));
    add(key("train.scale_max", "", "augmentation scale upper bound", [](auto& c) -> auto& { return c.train.augment.scale_max; }));
    add(key("train.translate", "", "augmentation translation bound per axis",
            [](auto& c) -> auto& { return c.train.augment.translate; }));
    add(key("train.rotate", "", "uniform random rotations", [](auto& c) -> auto& { return c.train.augment.rotate; }));
    add(key("train.flip_eigen_signs", "", "random eigenvector sign flips",
            [](auto& c) -> auto& { return c.train.augment.flip_eigen_signs; }));
    return keys;
}

const ConfigKey& find_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return k;
    throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = make_keys();
    return keys;
}

json to_json(const RunConfig& cfg) {
    json out = json::object();
    for (const auto& k : config_keys()) {
        const auto dot = k.name.find('.');
        out[k.name.substr(0, dot)][k.name.substr(dot + 1)] = k.get(cfg);
    }
    return out;
}

json section_json(const RunConfig& cfg, const std::string& section) {
    const json all = to_json(cfg);
    if (!all.contains(section)) throw ConfigError("unknown config section '" + section + "'");
    return all.at(section);
}

void set_key(RunConfig& cfg, const std::string& name, const json& value) { find_key(name).set(cfg, value); }

RunConfig apply_json(RunConfig base, const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> sections{"preprocess", "model", "train"};
    for (const auto& [section, body] : j.items()) {
        if (!sections.count(section)) throw ConfigError("unknown config section '" + section + "'");
        if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
        for (const auto& [name, value] : body.items()) set_key(base, section + "." + name, value);
    }
    return base;
}

std::string describe_keys(const RunConfig& defaults) {
    std::size_t width = 0;
    for (const auto& k : config_keys()) width = std::max(width, k.name.size());
    std::ostringstream out;
    for (const auto& k : config_keys()) {
        out << "  " << std::left << std::setw(static_cast<int>(width) + 2) << k.name << std::setw(12) << k.get(defaults).dump()
            << std::setw(11) << (k.provenance.empty() ? "default" : k.provenance) << k.help << "\n";
    }
    return out.str();
}

}  // namespace met
