#pragma once

// Independent reference implementations and synthetic data for the tests.
// Nothing here calls into the code under test except for plain data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "met/clustering.hpp"
#include "met/mesh_io.hpp"
#include "met/model.hpp"
#include "met/preprocess.hpp"

namespace oracle {

/// Cyclic Jacobi rotations on a dense symmetric matrix. Returns ascending
/// eigenvalues and matching orthonormal eigenvector columns.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> jacobi_eigen(Eigen::MatrixXd a, double tol = 1e-15) {
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= tol * std::max(1.0, a.norm())) break;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) < a(y, y); });
    Eigen::VectorXd values(n);
    Eigen::MatrixXd vectors(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        values[i] = a(order[i], order[i]);
        vectors.col(i) = v.col(order[i]);
    }
    return {values, vectors};
}

/// Dense L = I - D^{-1/2} A D^{-1/2} straight from the definition.
inline Eigen::MatrixXd dense_laplacian(const Eigen::MatrixXd& adjacency) {
    const Eigen::Index n = adjacency.rows();
    Eigen::VectorXd inv_sqrt(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = adjacency.row(i).sum();
        inv_sqrt[i] = d > 0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    return Eigen::MatrixXd::Identity(n, n) - inv_sqrt.asDiagonal() * adjacency * inv_sqrt.asDiagonal();
}

/// Face pairs sharing two vertices, by brute force over all pairs.
inline Eigen::MatrixXd dual_adjacency(const met::Mesh& mesh) {
    const auto n = static_cast<Eigen::Index>(mesh.faces.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            int shared = 0;
            for (int x : mesh.faces[i])
                for (int y : mesh.faces[j]) shared += x == y;
            if (shared >= 2) a(i, j) = a(j, i) = 1.0;
        }
    return a;
}

/// Connected components (with >= 1 edge) of a dense adjacency, by flood fill.
inline int edge_components(const Eigen::MatrixXd& a) {
    const Eigen::Index n = a.rows();
    std::vector<int> seen(static_cast<std::size_t>(n), 0);
    int count = 0;
    for (Eigen::Index s = 0; s < n; ++s) {
        if (seen[s] || a.row(s).sum() == 0) continue;
        ++count;
        std::vector<Eigen::Index> stack{s};
        seen[s] = 1;
        while (!stack.empty()) {
            const auto u = stack.back();
            stack.pop_back();
            for (Eigen::Index v = 0; v < n; ++v)
                if (a(u, v) != 0 && !seen[v]) seen[v] = 1, stack.push_back(v);
        }
    }
    return count;
}

struct WardStep {
    int first, second;  // smallest member of each merged cluster
    double cost;
};

/// Greedy constrained Ward that recomputes every cluster mean and every
/// pairwise increase from the member lists at each step.
inline std::pair<std::vector<std::vector<int>>, std::vector<WardStep>> ward_bruteforce(const Eigen::MatrixXd& points,
                                                                                      const Eigen::MatrixXd& adjacency,
                                                                                      int M) {
    std::vector<std::vector<int>> clusters;
    for (Eigen::Index i = 0; i < points.rows(); ++i) clusters.push_back({static_cast<int>(i)});
    std::vector<WardStep> steps;
    auto mean = [&](const std::vector<int>& c) {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(points.cols());
        for (int i : c) m += points.row(i).transpose();
        return Eigen::VectorXd(m / static_cast<double>(c.size()));
    };
    auto linked = [&](const std::vector<int>& x, const std::vector<int>& y) {
        for (int i : x)
            for (int j : y)
                if (adjacency(i, j) != 0) return true;
        return false;
    };
    while (static_cast<int>(clusters.size()) > M) {
        auto search = [&](bool need_link) {
            std::tuple<double, int, int> best{std::numeric_limits<double>::infinity(), -1, -1};
            for (std::size_t x = 0; x < clusters.size(); ++x)
                for (std::size_t y = x + 1; y < clusters.size(); ++y) {
                    if (need_link && !linked(clusters[x], clusters[y])) continue;
                    const double nx = static_cast<double>(clusters[x].size()), ny = static_cast<double>(clusters[y].size());
                    const double d = nx * ny / (nx + ny) * (mean(clusters[x]) - mean(clusters[y])).squaredNorm();
                    const int kx = *std::min_element(clusters[x].begin(), clusters[x].end());
                    const int ky = *std::min_element(clusters[y].begin(), clusters[y].end());
                    const std::tuple<double, int, int> cand{d, std::min(kx, ky), std::max(kx, ky)};
                    if (cand < best) best = cand;
                }
            return best;
        };
        auto best = search(true);
        if (std::get<1>(best) < 0) best = search(false);
        const auto [cost, ka, kb] = best;
        auto find = [&](int key) {
            return std::find_if(clusters.begin(), clusters.end(), [&](const auto& c) {
                return *std::min_element(c.begin(), c.end()) == key;
            });
        };
        auto ia = find(ka);
        auto ib = find(kb);
        ia->insert(ia->end(), ib->begin(), ib->end());
        clusters.erase(ib);
        steps.push_back({ka, kb, cost});
    }
    for (auto& c : clusters) std::sort(c.begin(), c.end());
    std::sort(clusters.begin(), clusters.end());
    return {clusters, steps};
}

/// Central finite-difference gradient of a scalar function of a matrix.
inline Eigen::MatrixXd numeric_gradient(const std::function<double(const Eigen::MatrixXd&)>& f, Eigen::MatrixXd x,
                                        double h = 1e-6) {
    Eigen::MatrixXd g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        const double step = h * std::max(1.0, std::abs(keep));
        x.data()[i] = keep + step;
        const double up = f(x);
        x.data()[i] = keep - step;
        const double down = f(x);
        x.data()[i] = keep;
        g.data()[i] = (up - down) / (2 * step);
    }
    return g;
}

/// max |a - b| / max(|a|, |b|, floor), elementwise.
inline double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-3) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), floor});
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / denom);
    }
    return worst;
}

}  // namespace oracle

namespace synth {

inline met::Mesh tetrahedron() {
    met::Mesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    m.faces = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}};
    return m;
}

/// Latitude-longitude sphere; `rings` latitude bands (poles are fans).
/// Faces are wound outward.
inline met::Mesh uv_sphere(int rings, int segments, double rx = 1, double ry = 1, double rz = 1) {
    met::Mesh m;
    m.vertices.push_back({0, 0, rz});
    for (int r = 1; r < rings; ++r) {
        const double theta = std::numbers::pi * r / rings;
        for (int s = 0; s < segments; ++s) {
            const double phi = 2 * std::numbers::pi * s / segments;
            m.vertices.push_back({rx * std::sin(theta) * std::cos(phi), ry * std::sin(theta) * std::sin(phi), rz * std::cos(theta)});
        }
    }
    const int south = static_cast<int>(m.vertices.size());
    m.vertices.push_back({0, 0, -rz});
    auto at = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
    for (int s = 0; s < segments; ++s) m.faces.push_back({0, at(1, s), at(1, s + 1)});
    for (int r = 1; r + 1 < rings; ++r)
        for (int s = 0; s < segments; ++s) {
            m.faces.push_back({at(r, s), at(r + 1, s), at(r + 1, s + 1)});
            m.faces.push_back({at(r, s), at(r + 1, s + 1), at(r, s + 1)});
        }
    for (int s = 0; s < segments; ++s) m.faces.push_back({south, at(rings - 1, s + 1), at(rings - 1, s)});
    return m;
}

/// Class 1 for faces whose centroid lies above z = 0.
inline met::LabelVec hemisphere_labels(const met::Mesh& m) {
    met::LabelVec l;
    l.num_classes = 2;
    for (const auto& f : m.faces) {
        const double z = (m.vertices[f[0]].z() + m.vertices[f[1]].z() + m.vertices[f[2]].z()) / 3.0;
        l.labels.push_back(z > 0 ? 1 : 0);
    }
    return l;
}

/// Regular (w x h) grid of squares split into triangles, with jittered heights.
inline met::Mesh grid(int w, int h, std::mt19937_64& rng, double jitter = 0.1) {
    std::uniform_real_distribution<double> u(-jitter, jitter);
    met::Mesh m;
    for (int y = 0; y <= h; ++y)
        for (int x = 0; x <= w; ++x) m.vertices.push_back({double(x), double(y), u(rng)});
    auto at = [&](int x, int y) { return y * (w + 1) + x; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            m.faces.push_back({at(x, y), at(x + 1, y), at(x + 1, y + 1)});
            m.faces.push_back({at(x, y), at(x + 1, y + 1), at(x, y + 1)});
        }
    return m;
}

/// Random small mesh: a random subset of a jittered grid's faces, possibly
/// disconnected, with unused vertices dropped.
inline met::Mesh random_patch(std::mt19937_64& rng, int max_faces) {
    std::uniform_int_distribution<int> dim(1, 6);
    met::Mesh full;
    do full = grid(dim(rng), dim(rng), rng, 0.3);
    while (full.faces.size() < 2);
    std::vector<met::Face> keep;
    std::bernoulli_distribution take(0.8);
    for (const auto& f : full.faces)
        if (take(rng) && static_cast<int>(keep.size()) < max_faces) keep.push_back(f);
    if (keep.empty()) keep.push_back(full.faces.front());
    std::vector<int> remap(full.vertices.size(), -1);
    met::Mesh out;
    for (auto f : keep) {
        for (int& v : f) {
            if (remap[v] < 0) remap[v] = static_cast<int>(out.vertices.size()), out.vertices.push_back(full.vertices[v]);
            v = remap[v];
        }
        out.faces.push_back(f);
    }
    return out;
}

/// Icosahedron subdivided once and projected to the unit sphere (42 vertices).
inline met::Mesh icosphere42() {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    met::Mesh m;
    m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                  {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    std::vector<met::Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                                    {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                                    {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
        const auto key = std::minmax(a, b);
        if (auto it = mid.find(key); it != mid.end()) return it->second;
        m.vertices.push_back((m.vertices[a] + m.vertices[b]) / 2.0);
        return mid[key] = static_cast<int>(m.vertices.size()) - 1;
    };
    for (const auto& f : faces) {
        const int a = midpoint(f[0], f[1]), b = midpoint(f[1], f[2]), c = midpoint(f[2], f[0]);
        m.faces.push_back({f[0], a, c});
        m.faces.push_back({f[1], b, a});
        m.faces.push_back({f[2], c, b});
        m.faces.push_back({a, b, c});
    }
    for (auto& v : m.vertices) v.normalize();
    return m;
}

/// Undirected edge -> incident face count.
inline std::map<std::pair<int, int>, int> edge_face_counts(const met::Mesh& m) {
    std::map<std::pair<int, int>, int> count;
    for (const auto& f : m.faces)
        for (int k = 0; k < 3; ++k) ++count[std::minmax(f[k], f[(k + 1) % 3])];
    return count;
}

/// A small sample assembled by hand: random features, a ring-plus-chords
/// adjacency, contiguous clusters of size <= 3 and random labels.
inline met::Sample handmade_sample(int n, int eigen_count, int num_classes, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 0.5);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);
    met::Sample s;
    s.name = "handmade";
    s.eigen_count = eigen_count;
    s.features.resize(n, 12 + eigen_count);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 9; ++k) s.features(i, k) = std::tanh(normal(rng));
        Eigen::Vector3d nrm(normal(rng), normal(rng), normal(rng));
        s.features.row(i).segment<3>(9) = nrm.normalized().transpose();
        for (int k = 0; k < eigen_count; ++k) s.features(i, 12 + k) = normal(rng);
    }
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
    for (int i = 0; i + 5 < n; i += 4) edges.emplace_back(i, i + 5);
    s.adjacency = met::AdjacencyMatrix(n, edges);
    for (int i = 0; i < n; ++i) s.cluster_ids.push_back(i / 3);
    s.num_clusters = (n + 2) / 3;
    s.labels.num_classes = num_classes;
    for (int i = 0; i < n; ++i) s.labels.labels.push_back(cls(rng));
    std::uniform_real_distribution<double> area(0.5, 2.0);
    s.face_areas.resize(n);
    for (int i = 0; i < n; ++i) s.face_areas[i] = area(rng);
    s.area_weights = s.face_areas / s.face_areas.sum();
    s.real_mask.assign(static_cast<std::size_t>(n), 1);
    s.eigenvalues = Eigen::VectorXd::LinSpaced(eigen_count, 0.1, 1.0);
    return s;
}

/// Applies the face permutation new_row -> old_row = perm[new_row] to every
/// per-face field; cluster ids keep their values.
inline met::Sample permute_sample(const met::Sample& s, const std::vector<int>& perm) {
    const int n = s.num_faces();
    std::vector<int> where(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) where[perm[i]] = i;
    met::Sample out = s;
    std::vector<std::pair<int, int>> edges;
    for (const auto& [a, b] : s.adjacency.edges()) edges.emplace_back(where[a], where[b]);
    out.adjacency = met::AdjacencyMatrix(n, edges);
    for (int i = 0; i < n; ++i) {
        out.features.row(i) = s.features.row(perm[i]);
        out.cluster_ids[i] = s.cluster_ids[perm[i]];
        out.labels.labels[i] = s.labels.labels[perm[i]];
        out.face_areas[i] = s.face_areas[perm[i]];
        out.area_weights[i] = s.area_weights[perm[i]];
        out.real_mask[i] = s.real_mask[perm[i]];
    }
    return out;
}

/// Reduced model for tests.
inline met::ModelConfig small_model(int eigen_count, int num_classes, int layers = 2) {
    met::ModelConfig cfg;
    cfg.d_t = 8;
    cfg.d_p = 12;
    cfg.num_layers = layers;
    cfg.num_heads = 2;
    cfg.ff_multiplier = 2;
    cfg.num_classes = num_classes;
    cfg.eigen_count = eigen_count;
    cfg.max_clusters = 32;
    cfg.dropout = 0.1;
    return cfg;
}

/// Random spanning tree plus a few extra edges.
inline met::AdjacencyMatrix random_connected(int n, std::mt19937_64& rng) {
    std::vector<std::pair<int, int>> e;
    for (int i = 1; i < n; ++i) e.emplace_back(static_cast<int>(rng() % i), i);
    for (int k = 0; k < n / 2; ++k) {
        const int a = static_cast<int>(rng() % n), b = static_cast<int>(rng() % n);
        if (a != b) e.emplace_back(std::min(a, b), std::max(a, b));
    }
    return met::AdjacencyMatrix(n, e);
}

/// Member lists, sorted, for comparing partitions.
inline std::vector<std::vector<int>> groups(const met::ClusterAssignment& c) {
    std::vector<std::vector<int>> g(static_cast<std::size_t>(c.num_clusters));
    for (std::size_t i = 0; i < c.assignment.size(); ++i) g[c.assignment[i]].push_back(static_cast<int>(i));
    std::sort(g.begin(), g.end());
    return g;
}

}  // namespace synth
