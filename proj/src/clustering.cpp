#include "met/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <tuple>

#include "met/error.hpp"

namespace met {

Eigen::MatrixXd ClusterAssignment::one_hot() const {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(assignment.size()), num_clusters);
    for (std::size_t i = 0; i < assignment.size(); ++i) j(static_cast<Eigen::Index>(i), assignment[i]) = 1.0;
    return j;
}

std::vector<int> ClusterAssignment::sizes() const {
    std::vector<int> s(static_cast<std::size_t>(num_clusters), 0);
    for (int id : assignment) ++s[id];
    return s;
}

int cluster_count(int num_vertices, double lambda) {
    if (num_vertices < 1) throw ConfigError("vertex count must be positive");
    if (!(lambda > 0)) throw ConfigError("lambda must be positive");
    return std::max(1, static_cast<int>(std::floor(num_vertices / lambda)));
}

ClusterAssignment canonicalize(const std::vector<int>& raw_ids) {
    ClusterAssignment out;
    out.assignment.resize(raw_ids.size());
    std::map<int, int> relabel;
    for (std::size_t i = 0; i < raw_ids.size(); ++i) {
        auto [it, inserted] = relabel.try_emplace(raw_ids[i], static_cast<int>(relabel.size()));
        out.assignment[i] = it->second;
    }
    out.num_clusters = static_cast<int>(relabel.size());
    return out;
}

namespace {

struct Candidate {
    double cost;
    int a, b;  // cluster keys, a < b
    unsigned version_a, version_b;

    // min-heap on (cost, a, b)
    bool operator>(const Candidate& o) const { return std::tie(cost, a, b) > std::tie(o.cost, o.a, o.b); }
};

}  // namespace

WardResult ward_constrained(const Eigen::MatrixXd& points, const AdjacencyMatrix& adj, int M) {
    const int n = static_cast<int>(points.rows());
    if (adj.size() != n) throw DataError("adjacency size does not match point count");
    if (M < 1 || M > std::max(n, 1)) throw ConfigError("cluster count " + std::to_string(M) + " outside [1, " + std::to_string(n) + "]");

    // Clusters are keyed by their smallest member index; a merge keeps the
    // smaller key. Sums are kept instead of means.
    std::vector<Eigen::VectorXd> sum(static_cast<std::size_t>(n));
    std::vector<double> size(static_cast<std::size_t>(n), 1.0);
    std::vector<unsigned> version(static_cast<std::size_t>(n), 0);
    std::vector<char> alive(static_cast<std::size_t>(n), 1);
    std::vector<int> owner(static_cast<std::size_t>(n));
    std::vector<std::vector<int>> members(static_cast<std::size_t>(n));
    std::vector<std::set<int>> links(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        sum[i] = points.row(i).transpose();
        owner[i] = i;
        members[i] = {i};
    }
    for (const auto& [i, j] : adj.edges()) links[i].insert(j), links[j].insert(i);

    auto cost_of = [&](int a, int b) {
        return ward_cost(size[a], sum[a] / size[a], size[b], sum[b] / size[b]);
    };

    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap;
    auto push = [&](int a, int b) {
        if (a > b) std::swap(a, b);
        heap.push({cost_of(a, b), a, b, version[a], version[b]});
    };
    for (const auto& [i, j] : adj.edges()) push(i, j);

    WardResult result;
    int count = n;
    while (count > M) {
        int a = -1, b = -1;
        double cost = 0.0;
        bool connected = true;
        while (!heap.empty()) {
            const Candidate c = heap.top();
            heap.pop();
            if (!alive[c.a] || !alive[c.b] || c.version_a != version[c.a] || c.version_b != version[c.b]) continue;
            a = c.a, b = c.b, cost = c.cost;
            break;
        }
        if (a < 0) {
            // no linked pair left: cheapest unlinked pair
            connected = false;
            double best = std::numeric_limits<double>::infinity();
            for (int x = 0; x < n; ++x) {
                if (!alive[x]) continue;
                for (int y = x + 1; y < n; ++y) {
                    if (!alive[y]) continue;
                    const double cxy = cost_of(x, y);
                    if (cxy < best) best = cxy, a = x, b = y;
                }
            }
            cost = best;
        }

        // merge b into a (a < b)
        sum[a] += sum[b];
        size[a] += size[b];
        alive[b] = 0;
        ++version[a];
        for (int m : members[b]) owner[m] = a;
        members[a].insert(members[a].end(), members[b].begin(), members[b].end());
        members[b].clear();
        links[a].erase(b);
        for (int nb : links[b]) {
            if (nb == a) continue;
            links[nb].erase(b);
            links[nb].insert(a);
            links[a].insert(nb);
        }
        links[b].clear();
        for (int nb : links[a]) push(a, nb);
        result.merges.push_back({a, b, cost, connected});
        --count;
    }

    result.clusters = canonicalize(owner);
    return result;
}

Eigen::MatrixXd co_membership(const ClusterAssignment& clusters) {
    const auto n = static_cast<Eigen::Index>(clusters.assignment.size());
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            c(i, j) = clusters.assignment[i] == clusters.assignment[j] ? 1.0 : 0.0;
    return c;
}

}  // namespace met
