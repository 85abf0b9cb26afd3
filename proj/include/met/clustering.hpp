#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

#include "met/spectral.hpp"

namespace met {

/// Cluster id per triangle, canonical: ids ascend with each cluster's
/// smallest member index.
struct ClusterAssignment {
    std::vector<int> assignment;
    int num_clusters = 0;

    /// N x M one-hot view.
    Eigen::MatrixXd one_hot() const;
    std::vector<int> sizes() const;
};

/// One agglomeration step: the clusters represented by their smallest member
/// index, `first < second`.
struct Merge {
    int first = 0;
    int second = 0;
    double cost = 0.0;
    bool connected = true;
    bool operator==(const Merge&) const = default;
};

struct WardResult {
    ClusterAssignment clusters;
    std::vector<Merge> merges;
};

/// M = max(1, floor(V / lambda)).
int cluster_count(int num_vertices, double lambda);

/// Ward increase |a||b|/(|a|+|b|) * ||mu_a - mu_b||^2.
inline double ward_cost(double size_a, const Eigen::VectorXd& mean_a, double size_b, const Eigen::VectorXd& mean_b) {
    return size_a * size_b / (size_a + size_b) * (mean_a - mean_b).squaredNorm();
}

/// Greedy connectivity-constrained Ward agglomeration down to M clusters.
/// Only clusters linked by an adjacency edge may merge; when none remain
/// the cheapest unlinked pair merges. Ties go to the lexicographically
/// smallest (min-member) pair.
WardResult ward_constrained(const Eigen::MatrixXd& points, const AdjacencyMatrix& adj, int M);

/// C = J J^T as a dense 0/1 matrix.
Eigen::MatrixXd co_membership(const ClusterAssignment& clusters);

/// Relabel ids so they ascend with each cluster's smallest member.
ClusterAssignment canonicalize(const std::vector<int>& raw_ids);

}  // namespace met
