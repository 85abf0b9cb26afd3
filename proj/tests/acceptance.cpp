// One PASS/FAIL line per acceptance criterion. Pass criterion numbers to run
// a subset; the exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "json.hpp"
#include "met/checkpoint.hpp"
#include "met/cli.hpp"
#include "met/clustering.hpp"
#include "met/mesh_io.hpp"
#include "met/spectral.hpp"
#include "met/train.hpp"
#include "support.hpp"

using namespace met;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(3) << v;
    return s.str();
}

double projector_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a * a.transpose() - b * b.transpose()).cwiseAbs().maxCoeff();
}

/// Largest projector gap over groups of numerically equal eigenvalues fully
/// inside the first k.
double worst_projector_gap(const Eigen::VectorXd& ref_values, const Eigen::MatrixXd& ref_vectors,
                           const Eigen::MatrixXd& got, int k) {
    double worst = 0;
    const int n = static_cast<int>(ref_values.size());
    int start = 0;
    while (start < k) {
        int end = start + 1;
        while (end < n && ref_values[end] - ref_values[end - 1] < 1e-6) ++end;
        if (end <= k)
            worst = std::max(worst, projector_gap(got.middleCols(start, end - start), ref_vectors.middleCols(start, end - start)));
        start = end;
    }
    return worst;
}

std::vector<Mesh> spectral_meshes() {
    std::mt19937_64 rng(20241);
    std::vector<Mesh> out;
    std::uniform_int_distribution<int> rings(3, 5), segments(3, 7);
    std::uniform_real_distribution<double> axis(0.5, 2.0);
    // mostly open patches, every fourth a closed ellipsoid
    for (int i = 0; i < 200; ++i)
        out.push_back(i % 4 == 3 ? synth::uv_sphere(rings(rng), segments(rng), axis(rng), axis(rng), axis(rng))
                                 : synth::random_patch(rng, 64));
    return out;
}

Outcome spectral_oracle() {
    double value_err = 0, proj_err = 0, krylov_value_err = 0, krylov_proj_err = 0;
    int biggest = 0;
    for (const Mesh& m : spectral_meshes()) {
        const auto L = normalized_laplacian(build_dual_adjacency(m));
        const int n = L.size();
        biggest = std::max(biggest, n);
        const auto [values, vectors] = oracle::jacobi_eigen(Eigen::MatrixXd(L.matrix));
        const auto full = smallest_eigenpairs(L, n);
        value_err = std::max(value_err, (full.values - values).cwiseAbs().maxCoeff());
        proj_err = std::max(proj_err, worst_projector_gap(values, vectors, full.vectors, n));
        // the iterative path on the same matrices
        EigenSolverOptions opts;
        opts.dense_threshold = 0;
        const int k = std::min(n, 8);
        const auto part = smallest_eigenpairs(L, k, opts);
        krylov_value_err = std::max(krylov_value_err, (part.values - values.head(k)).cwiseAbs().maxCoeff());
        krylov_proj_err = std::max(krylov_proj_err, worst_projector_gap(values, vectors, part.vectors, k));
    }
    const auto k4 = smallest_eigenpairs(normalized_laplacian(build_dual_adjacency(synth::tetrahedron())), 4);
    const Eigen::Vector4d want(0, 4.0 / 3, 4.0 / 3, 4.0 / 3);
    const double k4_err = (k4.values - want).cwiseAbs().maxCoeff();
    Outcome o;
    o.pass = value_err <= 1e-7 && proj_err <= 1e-6 && krylov_value_err <= 1e-7 && krylov_proj_err <= 1e-6 && k4_err <= 1e-8;
    o.detail = "200 meshes (N <= " + std::to_string(biggest) + "), eigenvalue err " + fmt(value_err) + ", projector err " +
               fmt(proj_err) + "; iterative path " + fmt(krylov_value_err) + " / " + fmt(krylov_proj_err) + "; K4 err " +
               fmt(k4_err);
    return o;
}

Outcome laplacian_structure() {
    std::vector<Mesh> meshes = spectral_meshes();
    std::mt19937_64 rng(5);
    meshes.push_back(synth::tetrahedron());
    meshes.push_back(synth::icosphere42());
    meshes.push_back(synth::uv_sphere(10, 12));
    meshes.push_back(synth::grid(6, 5, rng));
    {
        // three separate pieces, one of them a lone triangle
        Mesh m = synth::tetrahedron();
        const Mesh g = synth::grid(3, 2, rng);
        const int base = static_cast<int>(m.num_vertices());
        for (const auto& v : g.vertices) m.vertices.push_back(v + Vec3(5, 0, 0));
        for (const auto& f : g.faces) m.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
        const int b2 = static_cast<int>(m.num_vertices());
        m.vertices.push_back({9, 0, 0});
        m.vertices.push_back({10, 0, 0});
        m.vertices.push_back({9, 1, 0});
        m.faces.push_back({b2, b2 + 1, b2 + 2});
        meshes.push_back(m);
    }
    int bad_range = 0, bad_count = 0;
    double lo = 0, hi = 0;
    for (const Mesh& m : meshes) {
        const auto adj = build_dual_adjacency(m);
        const auto e = smallest_eigenpairs(normalized_laplacian(adj), adj.size());
        lo = std::min(lo, e.values.minCoeff());
        hi = std::max(hi, e.values.maxCoeff());
        if (e.values.minCoeff() < -1e-8 || e.values.maxCoeff() > 2 + 1e-8) ++bad_range;
        int zeros = 0;
        for (Eigen::Index i = 0; i < e.values.size(); ++i) zeros += std::abs(e.values[i]) < 1e-8;
        if (zeros != oracle::edge_components(oracle::dual_adjacency(m))) ++bad_count;
    }
    Outcome o;
    o.pass = bad_range == 0 && bad_count == 0;
    o.detail = std::to_string(meshes.size()) + " meshes, spectrum within [" + fmt(lo) + ", " + fmt(hi) + "], " +
               std::to_string(bad_range) + " out of range, " + std::to_string(bad_count) + " zero-mode count mismatches";
    return o;
}

Outcome ward_oracle() {
    std::mt19937_64 rng(777);
    std::uniform_int_distribution<int> size(1, 8), dim(1, 4);
    int mismatches = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = size(rng), d = dim(rng);
        Eigen::MatrixXd p(n, d);
        std::normal_distribution<double> normal;
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = normal(rng);
        // a few sets with exact ties
        if (trial % 10 == 0)
            for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = std::round(p.data()[i]);
        const auto adj = synth::random_connected(n, rng);
        const int M = 1 + static_cast<int>(rng() % n);
        const auto got = ward_constrained(p, adj, M);
        const auto [want, steps] = oracle::ward_bruteforce(p, adj.dense(), M);
        bool same = got.merges.size() == steps.size() && synth::groups(got.clusters) == want;
        for (std::size_t s = 0; same && s < steps.size(); ++s)
            same = got.merges[s].first == steps[s].first && got.merges[s].second == steps[s].second;
        mismatches += same ? 0 : 1;
    }
    return {mismatches == 0, "500 point sets, " + std::to_string(mismatches) + " merge sequences differ from the oracle"};
}

Outcome autodiff() {
    std::mt19937_64 rng(404);
    double worst_op = 0;
    std::string worst_name;
    for (const auto& r : gradcheck::check_all_ops(rng, 100))
        if (r.error > worst_op) worst_op = r.error, worst_name = r.name;

    // a 20-face sample from real geometry, and a hand-built one
    PreprocessConfig pc;
    pc.simplify = false;
    pc.target_faces = 0;
    pc.eigen_count = 4;
    pc.lambda = 3;
    const Mesh m = synth::uv_sphere(3, 5);  // 20 faces
    const Sample mesh_sample = build_sample(m, synth::hemisphere_labels(m), pc);
    const Sample hand = synth::handmade_sample(20, 4, 3, rng);
    double worst_model = 0;
    for (const Sample* s : {&mesh_sample, &hand})
        for (bool cluster_stream : {true, false}) {
            auto cfg = synth::small_model(4, s->labels.num_classes);
            cfg.use_cluster_stream = cluster_stream;
            worst_model = std::max(worst_model, gradcheck::model_gradient_error(*s, cfg, 50, rng));
        }
    Outcome o;
    o.pass = worst_op <= 1e-4 && worst_model <= 1e-3 && mesh_sample.num_faces() == 20;
    o.detail = "ops worst rel err " + fmt(worst_op) + " (" + worst_name + "), full model on 20 faces " + fmt(worst_model);
    return o;
}

Sample sphere_sample(int rings, int segments, int eigen_count, int target_faces) {
    PreprocessConfig pc;
    pc.simplify = false;
    pc.target_faces = target_faces;
    pc.eigen_count = eigen_count;
    const Mesh m = synth::uv_sphere(rings, segments);
    return build_sample(m, synth::hemisphere_labels(m), pc);
}

Outcome permutation() {
    const Sample s = sphere_sample(8, 10, 8, 0);
    auto cfg = synth::small_model(8, 2);
    cfg.d_t = cfg.d_p = 16;
    cfg.num_heads = 4;
    cfg.max_clusters = s.num_clusters;
    MetModel<double> model(cfg, 55);
    const Eigen::MatrixXd base = model.predict(s);
    std::mt19937_64 rng(56);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> perm(static_cast<std::size_t>(s.num_faces()));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const Eigen::MatrixXd out = model.predict(synth::permute_sample(s, perm));
        for (int i = 0; i < s.num_faces(); ++i) worst = std::max(worst, (out.row(i) - base.row(perm[i])).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-6, "20 permutations of " + std::to_string(s.num_faces()) + " faces, max abs deviation " + fmt(worst)};
}

Outcome padding() {
    const Sample s = sphere_sample(8, 10, 8, 0);
    const Sample padded = pad_sample(s, s.num_faces() + 50);
    auto cfg = synth::small_model(8, 2);
    cfg.d_t = cfg.d_p = 16;
    cfg.num_heads = 4;
    cfg.max_clusters = padded.num_clusters;
    double worst = 0;
    bool exact = true;
    for (std::uint64_t seed : {61u, 62u, 63u}) {
        MetModel<double> model(cfg, seed);
        const Eigen::MatrixXd a = model.predict(s), b = model.predict(padded);
        worst = std::max(worst, (b.topRows(s.num_faces()) - a).cwiseAbs().maxCoeff());
        const Metrics ma = evaluate(model, {s}), mb = evaluate(model, {padded});
        exact = exact && ma.area_accuracy == mb.area_accuracy && ma.mean_loss == mb.mean_loss;
        MetModel<float> fmodel(cfg, seed);
        const Metrics fa = evaluate(fmodel, {s}), fb = evaluate(fmodel, {padded});
        exact = exact && fa.area_accuracy == fb.area_accuracy && fa.mean_loss == fb.mean_loss;
    }
    return {worst <= 1e-6 && exact, "50 padding faces: max real-score change " + fmt(worst) +
                                         (exact ? ", loss and accuracy identical" : ", loss or accuracy changed")};
}

// --- learning checks through the command line -------------------------------

fs::path work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "met_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

void spit(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (out_text) *out_text = out.str();
    if (code != 0) std::cerr << err.str();
    return code;
}

/// Four hemisphere-labelled spheres of roughly 200 faces, preprocessed once.
fs::path overfit_samples() {
    static const fs::path samples = [] {
        const fs::path data = work_dir() / "spheres";
        const std::vector<std::array<int, 2>> shapes{{10, 12}, {10, 14}, {8, 12}, {10, 10}};
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            const Mesh m = synth::uv_sphere(shapes[i][0], shapes[i][1]);
            const auto l = synth::hemisphere_labels(m);
            std::ostringstream labels;
            for (int y : l.labels) labels << y + 1 << "\n";
            const std::string stem = "sphere" + std::to_string(i);
            spit(data / "shapes" / (stem + ".off"), write_off(m));
            spit(data / "labels" / (stem + ".txt"), labels.str());
        }
        const fs::path out = work_dir() / "sphere_samples";
        if (run_cli({"preprocess", data.string(), out.string(), "--eigen-count", "8", "--set", "preprocess.target_faces=256"}) != 0)
            throw std::runtime_error("preprocessing the overfit set failed");
        return out;
    }();
    return samples;
}

std::vector<std::string> overfit_args(const fs::path& ckpt, int steps) {
    return {"train", overfit_samples().string(), ckpt.string(), "--d-t", "64", "--d-p", "64", "--layers", "2",
            "--heads", "4", "--steps", std::to_string(steps), "--batch-size", "4", "--lr", "5e-4", "--seed", "7",
            "--set", "train.validation_fraction=0", "--set", "train.augment=false", "--set", "train.eval_every=25"};
}

double final_accuracy(const fs::path& ckpt) {
    std::string out;
    if (run_cli({"eval", overfit_samples().string(), ckpt.string()}, &out) != 0) return -1;
    return json::parse(out).at("area_accuracy").get<double>();
}

Outcome overfit() {
    const fs::path ckpt = work_dir() / "overfit";
    if (run_cli(overfit_args(ckpt, 500)) != 0) return {false, "training failed"};
    const double acc = final_accuracy(ckpt);

    // determinism: a second run of the same prefix reproduces the log and the weights
    const fs::path a = work_dir() / "repeat_a", b = work_dir() / "repeat_b";
    const bool ran = run_cli(overfit_args(a, 50)) == 0 && run_cli(overfit_args(b, 50)) == 0;
    const bool same = ran && slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl") &&
                      slurp(a / "params.bin") == slurp(b / "params.bin");
    std::istringstream log(slurp(a / "metrics.jsonl"));
    std::string first, second;
    std::getline(log, first);
    std::getline(log, second);
    const bool decreasing = ran && json::parse(second).at("loss").get<double>() < json::parse(first).at("loss").get<double>();

    // segmenting a training mesh recovers the labels
    std::string seg;
    const fs::path data = work_dir() / "spheres";
    run_cli({"segment", (data / "shapes" / "sphere0.off").string(), ckpt.string(), (work_dir() / "sphere0.ply").string(),
             "--labels", (data / "labels" / "sphere0.txt").string()},
            &seg);
    const double seg_acc = seg.empty() ? -1 : json::parse(seg).at("area_accuracy").get<double>();

    Outcome o;
    o.pass = acc >= 0.99 && same && decreasing && seg_acc >= 0.99;
    o.detail = "500 steps: training area accuracy " + fmt(acc) + ", segment accuracy " + fmt(seg_acc) +
               (decreasing ? ", loss falling" : ", loss NOT falling") +
               (same ? ", repeat run bit-identical" : ", repeat run differs");
    return o;
}

Outcome ablation() {
    const fs::path ckpt = work_dir() / "ablated";
    auto args = overfit_args(ckpt, 500);
    args.insert(args.end(), {"--ablate", "cluster-modules"});
    if (run_cli(args) != 0) return {false, "training failed"};
    const json manifest = json::parse(slurp(ckpt / "manifest.json"));
    const bool recorded = manifest.at("model").at("use_cluster_stream") == false;
    const double acc = final_accuracy(ckpt);
    return {acc >= 0.90 && recorded, "without cluster modules: training area accuracy " + fmt(acc) +
                                         (recorded ? ", manifest records the ablation" : ", ablation missing from manifest")};
}

Outcome round_trips() {
    std::mt19937_64 rng(909);
    std::uniform_real_distribution<double> u(-1000, 1000);
    int bad = 0, meshes = 0;
    auto nine_digits = [](double v) {
        std::ostringstream s;
        s.precision(9);
        s << v;
        return std::stod(s.str());
    };
    for (int trial = 0; trial < 50; ++trial) {
        Mesh m = synth::random_patch(rng, 40);
        for (auto& v : m.vertices) v = Vec3(u(rng), u(rng) * 1e-4, u(rng) * 1e4);
        std::ostringstream obj;
        obj.precision(17);
        for (const auto& v : m.vertices) obj << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
        for (const auto& f : m.faces) obj << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
        for (const Mesh& parsed : {parse_off(write_off(m)), parse_obj(obj.str())}) {
            ++meshes;
            const LabelVec zero{std::vector<int>(parsed.num_faces(), 0), 1};
            const Mesh back = parse_ply(write_ply_colored(parsed, zero, make_palette(1)));
            bool ok = back.faces == m.faces && back.num_vertices() == m.num_vertices();
            for (std::size_t i = 0; ok && i < m.num_vertices(); ++i)
                for (int k = 0; k < 3; ++k) ok = ok && back.vertices[i][k] == nine_digits(m.vertices[i][k]);
            bad += ok ? 0 : 1;
        }
    }

    // checkpoint: float model, saved and reloaded, evaluates bit-identically
    const fs::path dir = work_dir() / "roundtrip_ckpt";
    const Sample s = sphere_sample(6, 8, 4, 96);
    auto cfg = synth::small_model(4, 2);
    cfg.max_clusters = s.num_clusters;
    MetModel<float> model(cfg, 91);
    save_checkpoint(dir, model);
    const MetModel<float> back = load_checkpoint<float>(dir);
    const bool scores_same = back.predict(s) == model.predict(s);
    const Metrics a = evaluate(model, {s}), b = evaluate(back, {s});
    const bool metrics_same = a.area_accuracy == b.area_accuracy && a.mean_loss == b.mean_loss;
    return {bad == 0 && scores_same && metrics_same,
            std::to_string(meshes) + " OFF/OBJ -> PLY round trips, " + std::to_string(bad) + " mismatches; checkpoint eval " +
                (scores_same && metrics_same ? "bit-identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
        {"spectral oracle", spectral_oracle},     {"Laplacian structure", laplacian_structure},
        {"Ward oracle", ward_oracle},             {"autodiff finite differences", autodiff},
        {"permutation equivariance", permutation}, {"padding invariance", padding},
        {"overfit learning check", overfit},       {"cluster-modules ablation", ablation},
        {"format round trips", round_trips},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(number)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failed += o.pass ? 0 : 1;
        std::cout << "criterion " << number << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
                  << o.detail << " [" << std::fixed << std::setprecision(1) << secs << " s]" << std::defaultfloat
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
