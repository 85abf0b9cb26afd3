#include "met/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "met/checkpoint.hpp"
#include "met/sample_io.hpp"

namespace met::cli {

using nlohmann::json;

namespace {

enum class Level { Error = 0, Warn, Info, Debug };

Level log_level() {
    const char* env = std::getenv("MET_LOG_LEVEL");
    const std::string v = env ? env : "info";
    if (v == "error") return Level::Error;
    if (v == "warn") return Level::Warn;
    if (v == "debug") return Level::Debug;
    return Level::Info;
}

void log(Level level, const std::string& msg) {
    static std::mutex lock;
    if (level > log_level()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::lock_guard<std::mutex> g(lock);
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw DataError("cannot write " + p.string());
}

json parse_json_file(const fs::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::exception& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::set<std::string>& extensions) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && extensions.count(e.path().extension().string())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

fs::path find_labels(const fs::path& label_dir, const std::string& stem) {
    for (const char* ext : {".txt", ".seg"}) {
        const fs::path p = label_dir / (stem + ext);
        if (fs::exists(p)) return p;
    }
    throw DataError("no label file for '" + stem + "' in " + label_dir.string());
}

std::vector<SampleRecord> load_samples(const fs::path& dir) {
    std::vector<SampleRecord> out;
    for (const auto& p : sorted_files(dir, {".sample"})) out.push_back(read_sample(p));
    if (out.empty()) throw DataError("no .sample files in " + dir.string());
    for (const auto& r : out) {
        if (r.sample.eigen_count != out.front().sample.eigen_count)
            throw DataError("samples disagree on eigen_count (" + std::to_string(r.sample.eigen_count) + " vs " +
                            std::to_string(out.front().sample.eigen_count) + ")");
        if (r.sample.labels.num_classes != out.front().sample.labels.num_classes)
            throw DataError("samples disagree on the class count; preprocess them together");
    }
    return out;
}

std::vector<Sample> just_samples(const std::vector<SampleRecord>& recs) {
    std::vector<Sample> out;
    for (const auto& r : recs) out.push_back(r.sample);
    return out;
}

json metrics_json(const Metrics& m) {
    return {{"area_accuracy", m.area_accuracy},
            {"per_class_accuracy", m.per_class_accuracy},
            {"mean_loss", m.mean_loss},
            {"total_area", m.total_area}};
}

}  // namespace

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kConfigError;
    if (dynamic_cast<const NumericalError*>(&e)) return kNumericalError;
    return kDataError;
}

Rgb diverging_color(double x, double lo, double hi) {
    const double t = hi > lo ? std::clamp((x - lo) / (hi - lo), 0.0, 1.0) : 0.5;
    auto byte = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
    if (t < 0.5) return {byte(2 * t), byte(2 * t), 255};
    return {255, byte(2 - 2 * t), byte(2 - 2 * t)};
}

int cmd_preprocess(const fs::path& in_dir, const fs::path& out_dir, const RunConfig& cfg, std::ostream& out) {
    const auto shapes = sorted_files(in_dir / "shapes", {".off", ".obj"});
    if (shapes.empty()) throw DataError("no meshes in " + (in_dir / "shapes").string());

    std::map<std::string, std::string> split;  // stem -> subdirectory
    if (fs::exists(in_dir / "split.json")) {
        const json j = parse_json_file(in_dir / "split.json");
        if (!j.is_object()) throw ConfigError("split.json must be an object of stem lists");
        for (const auto& [part, stems] : j.items()) {
            if (!stems.is_array()) throw ConfigError("split.json entry '" + part + "' must be a list");
            for (const auto& s : stems) split[s.get<std::string>()] = part;
        }
    }

    // class ids are assigned over the whole dataset, in ascending raw-label order
    LabelMap labels;
    {
        std::set<long> raw;
        for (const auto& shape : shapes) {
            fs::path lp;
            try {
                lp = find_labels(in_dir / "labels", shape.stem().string());
                load_mesh(shape.string());  // meshes that fail later must not add classes
            } catch (const std::exception&) {
                continue;
            }
            std::istringstream in(read_text(lp));
            std::string line;
            while (std::getline(in, line)) {
                try {
                    std::size_t used = 0;
                    const long v = std::stol(line, &used);
                    raw.insert(v);
                } catch (const std::exception&) {
                }
            }
        }
        for (long r : raw) labels.map(r);
    }
    const json cfg_echo = section_json(cfg, "preprocess");

    struct Row {
        std::string stem, status;
        int faces = 0, real = 0, clusters = 0, eigen = 0;
        bool ok = false;
    };
    std::vector<Row> rows(shapes.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next++;
            if (i >= shapes.size()) return;
            Row& row = rows[i];
            row.stem = shapes[i].stem().string();
            try {
                const Mesh mesh = load_mesh(shapes[i].string());
                LabelMap local = labels;
                std::istringstream lin(read_text(find_labels(in_dir / "labels", row.stem)));
                const LabelVec lv = parse_face_labels(lin, mesh.num_faces(), &local);
                if (local.size() != labels.size()) throw DataError("label file holds an unreadable class id");
                bool incomplete = false;
                SampleRecord rec{build_sample(mesh, lv, cfg.preprocess, &incomplete), cfg_echo, labels.raw_labels()};
                rec.sample.name = row.stem;
                if (incomplete) log(Level::Warn, row.stem + ": simplification stopped above the vertex target");
                fs::path dir = out_dir;
                if (auto it = split.find(row.stem); it != split.end()) dir /= it->second;
                fs::create_directories(dir);
                write_sample(dir / (row.stem + ".sample"), rec);
                row.faces = rec.sample.num_faces();
                row.real = rec.sample.num_real();
                row.clusters = rec.sample.num_clusters;
                row.eigen = static_cast<int>(rec.sample.eigenvalues.size());
                row.ok = true;
                row.status = incomplete ? "ok (above vertex target)" : "ok";
            } catch (const std::exception& e) {
                row.status = std::string("FAILED: ") + e.what();
                log(Level::Error, row.stem + ": " + e.what());
            }
        }
    };
    const unsigned n_threads = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), static_cast<unsigned>(shapes.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    int failures = 0;
    out << std::left << std::setw(24) << "mesh" << std::right << std::setw(8) << "faces" << std::setw(8) << "real"
        << std::setw(10) << "clusters" << std::setw(7) << "eigen" << "  status\n";
    for (const auto& r : rows) {
        failures += r.ok ? 0 : 1;
        out << std::left << std::setw(24) << r.stem << std::right << std::setw(8) << r.faces << std::setw(8) << r.real
            << std::setw(10) << r.clusters << std::setw(7) << r.eigen << "  " << r.status << "\n";
    }
    out << (rows.size() - static_cast<std::size_t>(failures)) << " of " << rows.size() << " meshes written to "
        << out_dir.string() << "\n";
    return failures;
}

void cmd_train(const fs::path& samples_dir, const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    const auto recs = load_samples(samples_dir);
    const auto data = just_samples(recs);
    ModelConfig mc = cfg.model;
    mc.eigen_count = data.front().eigen_count;
    mc.num_classes = data.front().labels.num_classes;
    mc.validate();

    fs::create_directories(out_dir);
    std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
    const json run = {{"preprocess", recs.front().config},
                      {"train", section_json(cfg, "train")},
                      {"raw_labels", recs.front().raw_labels},
                      {"samples", data.size()}};

    log(Level::Info, "training on " + std::to_string(data.size()) + " samples, " + std::to_string(mc.num_classes) +
                         " classes, E=" + std::to_string(mc.eigen_count));
    TrainResult<float> result = [&] {
        try {
            return train<float>(data, mc, cfg.train, [&](const MetricsRecord& r) {
                json line = {{"step", r.step}, {"loss", r.loss}, {"train_accuracy", r.train_accuracy}};
                line["validation_accuracy"] = r.validation_accuracy ? json(*r.validation_accuracy) : json(nullptr);
                metrics << line.dump() << "\n" << std::flush;
                log(Level::Info, line.dump());
            });
        } catch (const NumericalError& e) {
            write_text(out_dir / "diagnostics.json",
                       json{{"error", e.what()}, {"model", model_config_json(mc)}, {"run", run}}.dump(2) + "\n");
            throw;
        }
    }();
    save_checkpoint(out_dir, result.best, run);
    const Metrics final_train = evaluate(result.best, data, result.train_indices);
    out << json{{"checkpoint", out_dir.string()},
                {"steps", cfg.train.max_steps},
                {"train_accuracy", final_train.area_accuracy},
                {"train_samples", result.train_indices.size()},
                {"validation_samples", result.validation_indices.size()}}
               .dump()
        << "\n";
}

json cmd_eval(const fs::path& samples_dir, const fs::path& checkpoint) {
    const MetModel<float> model = load_checkpoint<float>(checkpoint);
    const auto recs = load_samples(samples_dir);
    const auto& s = recs.front().sample;
    if (s.labels.num_classes != model.config().num_classes)
        throw ConfigError("samples have num_classes=" + std::to_string(s.labels.num_classes) +
                          " but the checkpoint has num_classes=" + std::to_string(model.config().num_classes));
    if (s.eigen_count != model.config().eigen_count)
        throw ConfigError("samples have eigen_count=" + std::to_string(s.eigen_count) +
                          " but the checkpoint has eigen_count=" + std::to_string(model.config().eigen_count));
    json j = metrics_json(evaluate(model, just_samples(recs)));
    j["samples"] = recs.size();
    return j;
}

json cmd_segment(const fs::path& mesh_path, const fs::path& checkpoint, const fs::path& out_ply, const fs::path& labels_path) {
    json run;
    const MetModel<float> model = load_checkpoint<float>(checkpoint, &run);
    RunConfig rc;
    if (run.contains("preprocess")) rc = apply_json(rc, json{{"preprocess", run.at("preprocess")}});
    const Mesh mesh = load_mesh(mesh_path.string());

    LabelVec truth{std::vector<int>(mesh.num_faces(), 0), model.config().num_classes};
    if (!labels_path.empty()) {
        LabelMap map;
        for (const auto& raw : run.value("raw_labels", std::vector<long>{})) map.map(raw);
        const int known = map.size();
        std::istringstream in(read_text(labels_path));
        truth = parse_face_labels(in, mesh.num_faces(), known > 0 ? &map : nullptr);
        if (known > 0 && map.size() != known) throw DataError("label file holds a class the checkpoint never saw");
        truth.num_classes = model.config().num_classes;
    }
    const Sample s = build_sample(mesh, truth, rc.preprocess);
    const auto scores = model.forward(model.bind(false), ModelInput<float>::from_sample(s, model.config()));
    const auto pred = argmax_rows(scores.value().cast<double>());

    LabelVec predicted{{pred.begin(), pred.begin() + s.num_real()}, model.config().num_classes};
    write_text(out_ply, write_ply_colored(s.mesh, predicted, make_palette(static_cast<std::size_t>(model.config().num_classes))));
    json j = {{"output", out_ply.string()}, {"faces", s.num_real()}};
    if (!labels_path.empty()) j["area_accuracy"] = area_accuracy(pred, s.labels.labels, s.face_areas, s.real_mask);
    return j;
}

json cmd_inspect(const fs::path& mesh_path, const RunConfig& cfg, const fs::path& out_dir, int eigenvectors) {
    if (eigenvectors < 0) throw ConfigError("eigenvector count must be nonnegative");
    const Mesh mesh = load_mesh(mesh_path.string());
    PreprocessConfig pc = cfg.preprocess;
    pc.target_faces = 0;
    pc.eigen_count = std::max(pc.eigen_count, eigenvectors);
    const Sample s = build_sample(mesh, LabelVec{std::vector<int>(mesh.num_faces(), 0), 1}, pc);
    fs::create_directories(out_dir);

    const int shown = std::min<int>(eigenvectors, static_cast<int>(s.eigenvalues.size()));
    for (int k = 0; k < shown; ++k) {
        const Eigen::VectorXd v = s.features.col(12 + k);
        std::vector<Rgb> colors;
        for (Eigen::Index i = 0; i < v.size(); ++i) colors.push_back(diverging_color(v[i], v.minCoeff(), v.maxCoeff()));
        write_text(out_dir / ("eigen_" + std::to_string(k + 1) + ".ply"), write_ply_face_colors(s.mesh, colors));
    }
    write_text(out_dir / "clusters.ply",
               write_ply_colored(s.mesh, LabelVec{s.cluster_ids, s.num_clusters}, make_palette(static_cast<std::size_t>(s.num_clusters))));

    std::vector<double> eig(s.eigenvalues.data(), s.eigenvalues.data() + shown);
    const json stats = {{"mesh", mesh_path.filename().string()},
                        {"vertices", s.mesh.num_vertices()},
                        {"faces", s.mesh.num_faces()},
                        {"clusters", s.num_clusters},
                        {"lambda", pc.lambda},
                        {"dual_components", s.adjacency.edge_component_count()},
                        {"eigenvalues", eig},
                        {"colormap", "blue-white-red, linear over [min, max] of each eigenvector"}};
    write_text(out_dir / "stats.json", stats.dump(2) + "\n");
    return stats;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mesh segmentation with a two-stream mesh transformer."};
    app.require_subcommand(1);
    app.footer("Config keys (JSON file layout {\"preprocess\": {...}, \"model\": {...}, \"train\": {...}};\n"
               "'published' marks values reported for the original method, 'default' values chosen here):\n" +
               describe_keys() +
               "\nExit codes: 0 success, 1 data error, 2 config error, 3 numerical failure.\n"
               "Log verbosity: MET_LOG_LEVEL=error|warn|info|debug (default info).");

    std::string config_path;
    std::vector<std::string> sets, ablations;
    std::optional<double> lambda, lr;
    std::optional<int> eigen_count, d_t, d_p, layers, heads, steps, batch;
    std::optional<std::uint64_t> seed;

    auto add_config_flags = [&](CLI::App* sub, bool model_flags) {
        sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--set", sets, "override any key: --set model.d_t=64 (value parsed as JSON)");
        sub->add_option("--lambda", lambda, "preprocess.lambda");
        sub->add_option("--eigen-count", eigen_count, "preprocess.eigen_count");
        sub->add_option("--seed", seed, "train.seed");
        if (!model_flags) return;
        sub->add_option("--d-t", d_t, "model.d_t");
        sub->add_option("--d-p", d_p, "model.d_p");
        sub->add_option("--layers", layers, "model.num_layers");
        sub->add_option("--heads", heads, "model.num_heads");
        sub->add_option("--steps", steps, "train.max_steps");
        sub->add_option("--batch-size", batch, "train.batch_size");
        sub->add_option("--lr", lr, "train.lr");
        sub->add_option("--ablate", ablations, "drop a component (repeatable)")
            ->check(CLI::IsMember({"no-coords", "no-normals", "no-laplacian", "cluster-modules"}));
    };

    fs::path in_dir, out_dir, samples_dir, checkpoint, mesh_path, out_path, labels_path;
    int eigenvectors = 3;

    auto* pre = app.add_subcommand("preprocess", "mesh + label directory -> sample files");
    pre->add_option("input", in_dir, "directory with shapes/ and labels/")->required();
    pre->add_option("output", out_dir, "output directory")->required();
    add_config_flags(pre, false);

    auto* tr = app.add_subcommand("train", "train on preprocessed samples");
    tr->add_option("samples", samples_dir, "directory of .sample files")->required();
    tr->add_option("checkpoint", out_dir, "output checkpoint directory")->required();
    add_config_flags(tr, true);

    auto* ev = app.add_subcommand("eval", "area-weighted accuracy of a checkpoint, printed as JSON");
    ev->add_option("samples", samples_dir, "directory of .sample files")->required();
    ev->add_option("checkpoint", checkpoint, "checkpoint directory")->required();

    auto* seg = app.add_subcommand("segment", "segment one mesh into a face-colored PLY");
    seg->add_option("mesh", mesh_path, "OFF, OBJ or PLY mesh")->required();
    seg->add_option("checkpoint", checkpoint, "checkpoint directory")->required();
    seg->add_option("output", out_path, "output PLY")->required();
    seg->add_option("--labels", labels_path, "ground-truth labels, to report accuracy");

    auto* ins = app.add_subcommand("inspect", "eigenvector and cluster visualizations");
    ins->add_option("mesh", mesh_path, "OFF, OBJ or PLY mesh")->required();
    ins->add_option("output", out_dir, "output directory")->required();
    ins->add_option("--eigenvectors", eigenvectors, "eigenvectors to render")->capture_default_str();
    add_config_flags(ins, false);

    std::vector<std::string> argv_store{"met"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = apply_json(cfg, parse_json_file(config_path));
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            json value;
            try {
                value = json::parse(s.substr(eq + 1));
            } catch (const json::exception&) {
                value = s.substr(eq + 1);
            }
            set_key(cfg, s.substr(0, eq), value);
        }
        if (lambda) cfg.preprocess.lambda = *lambda;
        if (eigen_count) cfg.preprocess.eigen_count = *eigen_count;
        if (seed) cfg.train.seed = *seed;
        if (d_t) cfg.model.d_t = *d_t;
        if (d_p) cfg.model.d_p = *d_p;
        if (layers) cfg.model.num_layers = *layers;
        if (heads) cfg.model.num_heads = *heads;
        if (steps) cfg.train.max_steps = *steps;
        if (batch) cfg.train.batch_size = *batch;
        if (lr) cfg.train.optimizer.lr = *lr;
        for (const auto& a : ablations) {
            if (a == "no-coords") cfg.model.use_coords = false;
            if (a == "no-normals") cfg.model.use_normals = false;
            if (a == "no-laplacian") cfg.model.use_laplacian = false;
            if (a == "cluster-modules") cfg.model.use_cluster_stream = false;
        }
        if (cfg.preprocess.lambda <= 0) throw ConfigError("lambda must be positive");
        if (cfg.preprocess.eigen_count < 1) throw ConfigError("eigen_count must be at least 1");
        cfg.train.validate();

        if (*pre) return cmd_preprocess(in_dir, out_dir, cfg, out) == 0 ? kOk : kDataError;
        if (*tr) cmd_train(samples_dir, cfg, out_dir, out);
        if (*ev) out << cmd_eval(samples_dir, checkpoint).dump(2) << "\n";
        if (*seg) out << cmd_segment(mesh_path, checkpoint, out_path, labels_path).dump() << "\n";
        if (*ins) out << cmd_inspect(mesh_path, cfg, out_dir, eigenvectors).dump() << "\n";
        return kOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code(e);
    }
}

}  // namespace met::cli
