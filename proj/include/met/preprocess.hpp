#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "met/clustering.hpp"
#include "met/mesh_io.hpp"
#include "met/spectral.hpp"

namespace met {

/// Label carried by padding faces; ignored by the loss and the metrics.
inline constexpr int kIgnoreLabel = -1;

enum class ClusterFeatures { Centroid, Full };

struct PreprocessConfig {
    bool simplify = true;
    int target_vertices = 1200;
    int target_faces = 2412;
    int eigen_count = 16;
    double lambda = 8.0;
    double merge_eps = 1e-8;
    double zero_tol = 1e-8;
    ClusterFeatures cluster_features = ClusterFeatures::Centroid;
    EigenSolverOptions eigen;
};

/// Fixed-size training unit. Rows [0, num_real) are mesh faces, the rest padding.
struct Sample {
    /// N x (12 + E): three vertex positions, unit normal, Laplacian features.
    Eigen::MatrixXd features;
    AdjacencyMatrix adjacency;
    /// Row-wise one-hot J stored as ids; padding faces share id num_clusters - 1.
    std::vector<int> cluster_ids;
    int num_clusters = 0;
    LabelVec labels;
    Eigen::VectorXd face_areas;    // standardized units, 0 on padding
    Eigen::VectorXd area_weights;  // face_areas normalized over real faces
    std::vector<char> real_mask;
    int eigen_count = 0;
    Eigen::VectorXd eigenvalues;
    /// The simplified, standardized mesh the real rows were computed from.
    Mesh mesh;
    std::string name;

    int num_faces() const { return static_cast<int>(features.rows()); }
    int num_real() const;
    ClusterAssignment clusters() const { return {cluster_ids, num_clusters}; }
    Eigen::MatrixXd co_membership() const { return met::co_membership(clusters()); }

    /// Throws DataError when a structural invariant is violated.
    void validate() const;
};

struct SimplifyResult {
    Mesh mesh;
    bool reached_target = true;
};

/// Unit normals from the given winding; throws DataError naming a zero-area face.
std::vector<Vec3> compute_normals(const Mesh& mesh);

std::vector<double> face_areas(const Mesh& mesh);

/// Greedy quadric-error edge collapse down to at most `target_vertices`.
/// Collapses that flip an incident face or break the link condition are
/// skipped; `reached_target` is false when legal collapses ran out.
SimplifyResult simplify_qem(const Mesh& mesh, int target_vertices);

/// Uniform scale and translation mapping the longest bounding-box axis onto
/// [-1, 1], centered on the box center.
Mesh standardize_coords(const Mesh& mesh);

/// Append `target_faces - N` isolated padding faces with zero features,
/// their own cluster and the ignore label.
Sample pad_sample(const Sample& sample, int target_faces);

/// Majority label of the original faces whose centroids are nearest to each
/// simplified face; ties to the smallest class. Faces receiving no original
/// take the label of the nearest original face.
LabelVec transfer_labels(const Mesh& original, const LabelVec& labels, const Mesh& simplified);

/// merge -> simplify -> standardize -> normals -> spectral -> clustering -> pad.
Sample build_sample(const Mesh& mesh, const LabelVec& labels, const PreprocessConfig& cfg,
                    bool* simplification_incomplete = nullptr);

}  // namespace met
