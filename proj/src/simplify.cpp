#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <tuple>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "met/error.hpp"
#include "met/preprocess.hpp"

namespace met {

namespace {

using Quadric = Eigen::Matrix4d;

// Boundary edges get a perpendicular constraint plane with this weight
// relative to the face planes.
constexpr double kBoundaryWeight = 100.0;

Quadric plane_quadric(const Vec3& normal, const Vec3& point, double weight) {
    Eigen::Vector4d p(normal.x(), normal.y(), normal.z(), -normal.dot(point));
    return weight * p * p.transpose();
}

class Simplifier {
public:
    explicit Simplifier(const Mesh& mesh)
        : pos_(mesh.vertices), faces_(mesh.faces), face_alive_(mesh.faces.size(), 1),
          vert_faces_(mesh.vertices.size()), quadric_(mesh.vertices.size(), Quadric::Zero()),
          version_(mesh.vertices.size(), 0) {
        for (int f = 0; f < static_cast<int>(faces_.size()); ++f)
            for (int v : faces_[f]) vert_faces_[v].push_back(f);
        for (std::size_t v = 0; v < pos_.size(); ++v)
            if (!vert_faces_[v].empty()) ++alive_vertices_;

        for (const auto& f : faces_) {
            const Vec3 n = (pos_[f[1]] - pos_[f[0]]).cross(pos_[f[2]] - pos_[f[0]]);
            const double len = n.norm();
            if (len <= 0) continue;
            const Quadric q = plane_quadric(n / len, pos_[f[0]], 0.5 * len);
            for (int v : f) quadric_[v] += q;
        }

        std::map<std::pair<int, int>, std::vector<int>> edge_faces;
        for (int f = 0; f < static_cast<int>(faces_.size()); ++f)
            for (int k = 0; k < 3; ++k) {
                const int a = faces_[f][k], b = faces_[f][(k + 1) % 3];
                edge_faces[std::minmax(a, b)].push_back(f);
            }
        boundary_.assign(pos_.size(), 0);
        for (const auto& [e, fs] : edge_faces) {
            if (fs.size() != 1) continue;
            const auto& f = faces_[fs[0]];
            const Vec3 n = (pos_[f[1]] - pos_[f[0]]).cross(pos_[f[2]] - pos_[f[0]]);
            const Vec3 dir = pos_[e.second] - pos_[e.first];
            Vec3 side = dir.cross(n);
            const double len = side.norm();
            boundary_[e.first] = boundary_[e.second] = 1;
            if (len <= 0) continue;
            const Quadric q = plane_quadric(side / len, pos_[e.first], kBoundaryWeight * dir.squaredNorm());
            quadric_[e.first] += q;
            quadric_[e.second] += q;
        }
        for (const auto& [e, fs] : edge_faces) push(e.first, e.second);
    }

    bool run(int target) {
        while (alive_vertices_ > target) {
            if (heap_.empty()) return false;
            const Candidate c = heap_.top();
            heap_.pop();
            if (version_[c.u] != c.vu || version_[c.v] != c.vv) continue;
            if (!legal(c.u, c.v, c.target)) continue;
            collapse(c.u, c.v, c.target);
        }
        return true;
    }

    Mesh result() const {
        Mesh out;
        std::vector<int> remap(pos_.size(), -1);
        for (std::size_t f = 0; f < faces_.size(); ++f) {
            if (!face_alive_[f]) continue;
            for (int v : faces_[f]) remap[v] = 0;
        }
        for (std::size_t v = 0; v < pos_.size(); ++v)
            if (remap[v] == 0) {
                remap[v] = static_cast<int>(out.vertices.size());
                out.vertices.push_back(pos_[v]);
            }
        for (std::size_t f = 0; f < faces_.size(); ++f)
            if (face_alive_[f]) out.faces.push_back({remap[faces_[f][0]], remap[faces_[f][1]], remap[faces_[f][2]]});
        return out;
    }

private:
    struct Candidate {
        double cost;
        int u, v;
        unsigned vu, vv;
        Vec3 target;
        bool operator>(const Candidate& o) const { return std::tie(cost, u, v) > std::tie(o.cost, o.u, o.v); }
    };

    void push(int u, int v) {
        if (u > v) std::swap(u, v);
        const Quadric q = quadric_[u] + quadric_[v];
        auto cost_at = [&](const Vec3& p) {
            const Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
            return std::max(0.0, h.dot(q * h));
        };
        Eigen::Matrix3d a = q.topLeftCorner<3, 3>();
        const Eigen::Vector3d b = -q.topRightCorner<3, 1>();
        Vec3 best = 0.5 * (pos_[u] + pos_[v]);
        double best_cost = cost_at(best);
        Eigen::FullPivLU<Eigen::Matrix3d> lu(a);
        const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
        lu.setThreshold(1e-10);
        if (lu.isInvertible() && std::abs(lu.determinant()) > 1e-12 * scale * scale * scale) {
            const Vec3 opt = lu.solve(b);
            const double c = cost_at(opt);
            // keep the optimum near the edge to avoid spikes on flat regions
            const double reach = (pos_[u] - pos_[v]).norm() * 2.0;
            if (c <= best_cost && (opt - best).norm() <= reach) best = opt, best_cost = c;
        }
        for (const Vec3& p : {pos_[u], pos_[v]}) {
            const double c = cost_at(p);
            if (c < best_cost) best = p, best_cost = c;
        }
        heap_.push({best_cost, u, v, version_[u], version_[v], best});
    }

    std::vector<int> neighbors(int v) const {
        std::vector<int> out;
        for (int f : vert_faces_[v])
            for (int w : faces_[f])
                if (w != v) out.push_back(w);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    bool legal(int u, int v, const Vec3& p) const {
        // link condition
        std::vector<int> shared_faces;
        for (int f : vert_faces_[u])
            if (std::find(faces_[f].begin(), faces_[f].end(), v) != faces_[f].end()) shared_faces.push_back(f);
        if (shared_faces.empty()) return false;
        const auto nu = neighbors(u), nv = neighbors(v);
        std::vector<int> common;
        std::set_intersection(nu.begin(), nu.end(), nv.begin(), nv.end(), std::back_inserter(common));
        if (common.size() != shared_faces.size()) return false;
        if (shared_faces.size() == 2 && boundary_[u] && boundary_[v]) return false;
        if (shared_faces.size() > 2) return false;

        // no flipped or degenerate faces after the move
        for (int w : {u, v}) {
            for (int f : vert_faces_[w]) {
                if (std::find(shared_faces.begin(), shared_faces.end(), f) != shared_faces.end()) continue;
                const auto& t = faces_[f];
                std::array<Vec3, 3> before{pos_[t[0]], pos_[t[1]], pos_[t[2]]};
                std::array<Vec3, 3> after = before;
                for (int k = 0; k < 3; ++k)
                    if (t[k] == w) after[k] = p;
                const Vec3 n0 = (before[1] - before[0]).cross(before[2] - before[0]);
                const Vec3 n1 = (after[1] - after[0]).cross(after[2] - after[0]);
                if (n1.norm() <= 1e-12 * std::max(n0.norm(), 1e-300)) return false;
                if (n0.dot(n1) < 0) return false;
            }
        }

        // no duplicate triangles
        for (int fv : vert_faces_[v]) {
            if (std::find(shared_faces.begin(), shared_faces.end(), fv) != shared_faces.end()) continue;
            Face moved = faces_[fv];
            for (int& x : moved)
                if (x == v) x = u;
            std::sort(moved.begin(), moved.end());
            for (int fu : vert_faces_[u]) {
                Face t = faces_[fu];
                std::sort(t.begin(), t.end());
                if (t == moved) return false;
            }
        }
        return true;
    }

    void collapse(int u, int v, const Vec3& p) {
        pos_[u] = p;
        quadric_[u] += quadric_[v];
        boundary_[u] = boundary_[u] || boundary_[v];
        std::vector<int> kept;
        for (int f : vert_faces_[u]) {
            if (std::find(faces_[f].begin(), faces_[f].end(), v) != faces_[f].end()) {
                face_alive_[f] = 0;
                continue;
            }
            kept.push_back(f);
        }
        for (int f : vert_faces_[v]) {
            if (!face_alive_[f]) continue;
            for (int& x : faces_[f])
                if (x == v) x = u;
            kept.push_back(f);
        }
        // drop dead faces from the opposite vertices' lists
        for (int f : vert_faces_[v])
            if (!face_alive_[f])
                for (int w : faces_[f]) {
                    if (w == u || w == v) continue;
                    auto& lst = vert_faces_[w];
                    lst.erase(std::remove(lst.begin(), lst.end(), f), lst.end());
                }
        std::sort(kept.begin(), kept.end());
        vert_faces_[u] = std::move(kept);
        vert_faces_[v].clear();
        ++version_[u];
        ++version_[v];
        --alive_vertices_;
        for (int w : neighbors(u)) {
            ++version_[w];
            for (int x : neighbors(w)) push(w, x);
        }
    }

    std::vector<Vec3> pos_;
    std::vector<Face> faces_;
    std::vector<char> face_alive_;
    std::vector<std::vector<int>> vert_faces_;
    std::vector<Quadric> quadric_;
    std::vector<unsigned> version_;
    std::vector<char> boundary_;
    int alive_vertices_ = 0;
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap_;
};

}  // namespace

SimplifyResult simplify_qem(const Mesh& mesh, int target_vertices) {
    if (target_vertices < 4) throw ConfigError("simplification target must be at least 4 vertices");
    if (static_cast<int>(mesh.num_vertices()) <= target_vertices) return {mesh, true};
    Simplifier s(mesh);
    const bool reached = s.run(target_vertices);
    return {s.result(), reached};
}

}  // namespace met
