#include "met/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Geometry>

#include "met/error.hpp"

namespace met {

int Sample::num_real() const {
    return static_cast<int>(std::count(real_mask.begin(), real_mask.end(), 1));
}

void Sample::validate() const {
    const int n = num_faces();
    auto fail = [&](const std::string& what) { throw DataError("sample '" + name + "': " + what); };
    if (features.cols() != 12 + eigen_count) fail("feature width is not 12 + E");
    if (adjacency.size() != n || static_cast<int>(cluster_ids.size()) != n ||
        static_cast<int>(labels.labels.size()) != n || face_areas.size() != n || area_weights.size() != n ||
        static_cast<int>(real_mask.size()) != n)
        fail("per-face arrays disagree in length");
    const int real = num_real();
    for (int i = 0; i < n; ++i) {
        const bool is_real = real_mask[i] != 0;
        if (is_real != (i < real)) fail("padding faces must follow the real faces");
        if (cluster_ids[i] < 0 || cluster_ids[i] >= num_clusters) fail("cluster id out of range");
        const int l = labels.labels[i];
        if (is_real && (l < 0 || l >= labels.num_classes)) fail("label out of range");
        if (!is_real && l != kIgnoreLabel) fail("padding face carries a label");
        if (!is_real && (area_weights[i] != 0.0 || face_areas[i] != 0.0)) fail("padding face has area");
        if (!is_real && (adjacency.degree(i) != 0 || !features.row(i).isZero(0))) fail("padding face is not isolated");
        if (is_real) {
            if (features.row(i).head(9).cwiseAbs().maxCoeff() > 1.0) fail("coordinates outside [-1, 1]");
            if (std::abs(features.row(i).segment(9, 3).norm() - 1.0) > 1e-6) fail("normal is not unit length");
        }
    }
    if (real > 0 && std::abs(area_weights.sum() - 1.0) > 1e-9) fail("area weights do not sum to 1");
}

std::vector<Vec3> compute_normals(const Mesh& mesh) {
    std::vector<Vec3> out;
    out.reserve(mesh.faces.size());
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        const auto& f = mesh.faces[i];
        const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        const Vec3 n = e1.cross(e2);
        const double len = n.norm();
        const double scale = std::max(e1.squaredNorm(), e2.squaredNorm());
        if (!(len > 1e-14 * scale) || !(len > 0)) throw DataError("zero-area face " + std::to_string(i));
        out.push_back(n / len);
    }
    return out;
}

std::vector<double> face_areas(const Mesh& mesh) {
    std::vector<double> out;
    out.reserve(mesh.faces.size());
    for (const auto& f : mesh.faces)
        out.push_back(0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm());
    return out;
}

Mesh standardize_coords(const Mesh& mesh) {
    if (mesh.vertices.empty()) throw DataError("cannot standardize an empty mesh");
    Vec3 lo = mesh.vertices.front(), hi = lo;
    for (const auto& v : mesh.vertices) lo = lo.cwiseMin(v), hi = hi.cwiseMax(v);
    const double extent = (hi - lo).maxCoeff();
    if (!(extent > 0)) throw DataError("degenerate bounding box: all vertices coincide");
    const Vec3 center = 0.5 * (lo + hi);
    const double scale = 2.0 / extent;
    Eigen::Index axis = 0;
    (hi - lo).maxCoeff(&axis);
    Mesh out = mesh;
    for (auto& v : out.vertices) {
        const Vec3 raw = v;
        v = ((v - center) * scale).cwiseMax(-1.0).cwiseMin(1.0);
        // rounding can leave the extremes a hair inside
        if (raw[axis] == hi[axis]) v[axis] = 1.0;
        if (raw[axis] == lo[axis]) v[axis] = -1.0;
    }
    return out;
}

namespace {

std::vector<Vec3> centroids(const Mesh& mesh) {
    std::vector<Vec3> out;
    out.reserve(mesh.faces.size());
    for (const auto& f : mesh.faces)
        out.push_back((mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0);
    return out;
}

int nearest(const std::vector<Vec3>& pts, const Vec3& q) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = (pts[i] - q).squaredNorm();
        if (d < best_d) best_d = d, best = static_cast<int>(i);
    }
    return best;
}

}  // namespace

LabelVec transfer_labels(const Mesh& original, const LabelVec& labels, const Mesh& simplified) {
    const auto src = centroids(original);
    const auto dst = centroids(simplified);
    std::vector<std::vector<int>> votes(dst.size(), std::vector<int>(static_cast<std::size_t>(labels.num_classes), 0));
    for (std::size_t i = 0; i < src.size(); ++i) ++votes[nearest(dst, src[i])][labels.labels[i]];
    LabelVec out;
    out.num_classes = labels.num_classes;
    out.labels.resize(dst.size());
    for (std::size_t j = 0; j < dst.size(); ++j) {
        const auto& v = votes[j];
        const auto best = std::max_element(v.begin(), v.end());  // first max = smallest class
        if (*best > 0)
            out.labels[j] = static_cast<int>(best - v.begin());
        else
            out.labels[j] = labels.labels[nearest(src, dst[j])];
    }
    return out;
}

Sample pad_sample(const Sample& sample, int target_faces) {
    const int n = sample.num_faces();
    if (target_faces < n)
        throw DataError("padding target " + std::to_string(target_faces) + " is below the face count " + std::to_string(n));
    if (target_faces == n) return sample;
    const bool already_padded = sample.num_real() < n;
    Sample out = sample;
    const int pad_id = already_padded ? sample.num_clusters - 1 : sample.num_clusters;
    out.num_clusters = pad_id + 1;
    out.features.conservativeResize(target_faces, Eigen::NoChange);
    out.features.bottomRows(target_faces - n).setZero();
    out.adjacency = AdjacencyMatrix(target_faces, sample.adjacency.edges());
    out.cluster_ids.resize(static_cast<std::size_t>(target_faces), pad_id);
    out.labels.labels.resize(static_cast<std::size_t>(target_faces), kIgnoreLabel);
    out.face_areas.conservativeResize(target_faces);
    out.face_areas.tail(target_faces - n).setZero();
    out.area_weights.conservativeResize(target_faces);
    out.area_weights.tail(target_faces - n).setZero();
    out.real_mask.resize(static_cast<std::size_t>(target_faces), 0);
    return out;
}

Sample build_sample(const Mesh& input, const LabelVec& input_labels, const PreprocessConfig& cfg,
                    bool* simplification_incomplete) {
    input.validate();
    if (input_labels.labels.size() != input.faces.size())
        throw DataError("label count mismatch: " + std::to_string(input_labels.labels.size()) + " labels for " +
                        std::to_string(input.faces.size()) + " faces");
    if (cfg.eigen_count < 1) throw ConfigError("eigen_count must be at least 1");

    std::vector<int> kept;
    Mesh mesh = merge_duplicate_vertices(input, cfg.merge_eps, kept);
    LabelVec labels;
    labels.num_classes = input_labels.num_classes;
    for (int f : kept) labels.labels.push_back(input_labels.labels[f]);
    if (mesh.faces.empty()) throw DataError("mesh has no faces after merging duplicate vertices");

    if (simplification_incomplete) *simplification_incomplete = false;
    if (cfg.simplify && static_cast<int>(mesh.num_vertices()) > cfg.target_vertices) {
        SimplifyResult simplified = simplify_qem(mesh, cfg.target_vertices);
        if (simplification_incomplete) *simplification_incomplete = !simplified.reached_target;
        labels = transfer_labels(mesh, labels, simplified.mesh);
        mesh = std::move(simplified.mesh);
    }

    mesh = standardize_coords(mesh);
    mesh.normals = compute_normals(mesh);

    const int n = static_cast<int>(mesh.num_faces());
    const int E = cfg.eigen_count;
    Sample s;
    s.eigen_count = E;
    s.adjacency = build_dual_adjacency(mesh);
    const LaplacianMatrix L = normalized_laplacian(s.adjacency);
    const SpectralFeatures spectral = laplacian_positional_features(L, E, cfg.zero_tol, cfg.eigen);
    s.eigenvalues = spectral.eigenvalues;

    s.features.resize(n, 12 + E);
    for (int i = 0; i < n; ++i) {
        const auto& f = mesh.faces[i];
        for (int k = 0; k < 3; ++k) s.features.row(i).segment<3>(3 * k) = mesh.vertices[f[k]].transpose();
        s.features.row(i).segment<3>(9) = mesh.normals[i].transpose();
        s.features.row(i).tail(E) = spectral.features.row(i);
    }

    Eigen::MatrixXd points;
    if (cfg.cluster_features == ClusterFeatures::Centroid) {
        points.resize(n, 3);
        const auto c = centroids(mesh);
        for (int i = 0; i < n; ++i) points.row(i) = c[i].transpose();
    } else {
        points = s.features;
    }
    const int M = std::min(n, cluster_count(static_cast<int>(mesh.num_vertices()), cfg.lambda));
    const WardResult ward = ward_constrained(points, s.adjacency, M);
    s.cluster_ids = ward.clusters.assignment;
    s.num_clusters = ward.clusters.num_clusters;

    const auto areas = face_areas(mesh);
    s.face_areas = Eigen::Map<const Eigen::VectorXd>(areas.data(), n);
    const double total = s.face_areas.sum();
    if (!(total > 0)) throw DataError("mesh has zero total area");
    s.area_weights = s.face_areas / total;
    s.labels = labels;
    s.real_mask.assign(static_cast<std::size_t>(n), 1);
    s.mesh = std::move(mesh);

    return cfg.target_faces > 0 ? pad_sample(s, cfg.target_faces) : s;
}

}  // namespace met
