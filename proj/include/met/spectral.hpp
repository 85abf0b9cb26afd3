#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "met/mesh_io.hpp"

namespace met {

/// Symmetric binary adjacency stored as sorted (i < j) index pairs plus
/// per-node sorted neighbor lists.
class AdjacencyMatrix {
public:
    AdjacencyMatrix() = default;
    explicit AdjacencyMatrix(int n) : neighbors_(static_cast<std::size_t>(n)) {}
    AdjacencyMatrix(int n, std::vector<std::pair<int, int>> edges);

    int size() const { return static_cast<int>(neighbors_.size()); }
    const std::vector<std::pair<int, int>>& edges() const { return edges_; }
    const std::vector<int>& neighbors(int i) const { return neighbors_[static_cast<std::size_t>(i)]; }
    int degree(int i) const { return static_cast<int>(neighbors(i).size()); }
    bool contains(int i, int j) const;

    Eigen::MatrixXd dense() const;

    /// Component id per node (ascending by smallest member) and the count.
    std::pair<std::vector<int>, int> components() const;

    /// Number of connected components that contain at least one edge.
    int edge_component_count() const;

private:
    std::vector<std::pair<int, int>> edges_;
    std::vector<std::vector<int>> neighbors_;
};

/// L = I - D^{-1/2} A D^{-1/2}; D^{-1/2} is taken as 0 on isolated nodes.
struct LaplacianMatrix {
    Eigen::SparseMatrix<double> matrix;
    Eigen::VectorXd degree;

    int size() const { return static_cast<int>(matrix.rows()); }
    double frobenius_norm() const { return matrix.norm(); }
};

struct EigenPairs {
    Eigen::VectorXd values;   // ascending
    Eigen::MatrixXd vectors;  // orthonormal columns
};

struct EigenSolverOptions {
    /// Dense symmetric solve at or below this size, shift-invert block Krylov above.
    int dense_threshold = 512;
    int max_restarts = 300;
    double shift = -1e-2;
    unsigned seed = 0x5eed;
};

struct SpectralFeatures {
    Eigen::MatrixXd features;     // N x E
    Eigen::VectorXd eigenvalues;  // the E (or fewer) nonzero eigenvalues used
    Eigen::MatrixXd zero_modes;   // eigenvectors discarded as eigenvalue < tol
};

/// Dual-graph adjacency: faces are linked iff they share an undirected vertex
/// pair. An edge shared by more than two faces links every incident pair.
AdjacencyMatrix build_dual_adjacency(const Mesh& mesh);

LaplacianMatrix normalized_laplacian(const AdjacencyMatrix& adj);

/// The k algebraically smallest eigenpairs. Residuals are within
/// 1e-8 * ||L||_F; throws NumericalError with the achieved residual otherwise.
EigenPairs smallest_eigenpairs(const LaplacianMatrix& L, int k, const EigenSolverOptions& opts = {});

/// Eigenvectors with the E smallest eigenvalues above `tol`, sign-canonical
/// (largest-magnitude entry positive, lowest index on ties) and zero-padded
/// to E columns.
SpectralFeatures laplacian_positional_features(const LaplacianMatrix& L, int E, double tol = 1e-8,
                                               const EigenSolverOptions& opts = {});

/// Flip the sign of each column so its largest-magnitude entry is positive.
void canonicalize_signs(Eigen::MatrixXd& columns);

}  // namespace met
