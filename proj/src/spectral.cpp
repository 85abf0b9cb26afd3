#include "met/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "met/error.hpp"

namespace met {

AdjacencyMatrix::AdjacencyMatrix(int n, std::vector<std::pair<int, int>> edges)
    : neighbors_(static_cast<std::size_t>(n)) {
    for (auto& [i, j] : edges) {
        if (i == j) throw DataError("adjacency cannot contain self loops");
        if (i > j) std::swap(i, j);
        if (i < 0 || j >= n) throw DataError("adjacency index out of range");
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    edges_ = std::move(edges);
    for (const auto& [i, j] : edges_) {
        neighbors_[i].push_back(j);
        neighbors_[j].push_back(i);
    }
    for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());
}

bool AdjacencyMatrix::contains(int i, int j) const {
    const auto& nb = neighbors(i);
    return std::binary_search(nb.begin(), nb.end(), j);
}

Eigen::MatrixXd AdjacencyMatrix::dense() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(size(), size());
    for (const auto& [i, j] : edges_) a(i, j) = a(j, i) = 1.0;
    return a;
}

std::pair<std::vector<int>, int> AdjacencyMatrix::components() const {
    std::vector<int> comp(neighbors_.size(), -1);
    int count = 0;
    std::vector<int> stack;
    for (int s = 0; s < size(); ++s) {
        if (comp[s] >= 0) continue;
        comp[s] = count;
        stack.push_back(s);
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (int v : neighbors(u))
                if (comp[v] < 0) comp[v] = count, stack.push_back(v);
        }
        ++count;
    }
    return {comp, count};
}

int AdjacencyMatrix::edge_component_count() const {
    const auto [comp, count] = components();
    std::vector<char> has_edge(static_cast<std::size_t>(count), 0);
    for (int i = 0; i < size(); ++i)
        if (degree(i) > 0) has_edge[comp[i]] = 1;
    return static_cast<int>(std::count(has_edge.begin(), has_edge.end(), 1));
}

AdjacencyMatrix build_dual_adjacency(const Mesh& mesh) {
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
        const auto& t = mesh.faces[f];
        for (int k = 0; k < 3; ++k) {
            int a = t[k], b = t[(k + 1) % 3];
            if (a > b) std::swap(a, b);
            edge_faces[{a, b}].push_back(f);
        }
    }
    std::vector<std::pair<int, int>> pairs;
    for (const auto& [edge, faces] : edge_faces)
        for (std::size_t x = 0; x < faces.size(); ++x)
            for (std::size_t y = x + 1; y < faces.size(); ++y)
                if (faces[x] != faces[y]) pairs.emplace_back(faces[x], faces[y]);
    return AdjacencyMatrix(static_cast<int>(mesh.faces.size()), std::move(pairs));
}

LaplacianMatrix normalized_laplacian(const AdjacencyMatrix& adj) {
    const int n = adj.size();
    LaplacianMatrix L;
    L.degree.resize(n);
    Eigen::VectorXd inv_sqrt(n);
    for (int i = 0; i < n; ++i) {
        L.degree[i] = adj.degree(i);
        inv_sqrt[i] = adj.degree(i) > 0 ? 1.0 / std::sqrt(static_cast<double>(adj.degree(i))) : 0.0;
    }
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) + 2 * adj.edges().size());
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
    for (const auto& [i, j] : adj.edges()) {
        const double w = -inv_sqrt[i] * inv_sqrt[j];
        trip.emplace_back(i, j, w);
        trip.emplace_back(j, i, w);
    }
    L.matrix.resize(n, n);
    L.matrix.setFromTriplets(trip.begin(), trip.end());
    return L;
}

namespace {

double max_residual(const LaplacianMatrix& L, const Eigen::VectorXd& values, const Eigen::MatrixXd& vectors) {
    if (vectors.cols() == 0) return 0.0;
    const Eigen::MatrixXd r = L.matrix * vectors - vectors * values.asDiagonal();
    return r.colwise().norm().maxCoeff();
}

EigenPairs dense_smallest(const LaplacianMatrix& L, int k) {
    const Eigen::MatrixXd dense = Eigen::MatrixXd(L.matrix);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    if (es.info() != Eigen::Success) throw NumericalError("dense symmetric eigensolver failed");
    return {es.eigenvalues().head(k), es.eigenvectors().leftCols(k)};
}

/// Orthonormalize the columns of `w` against `basis` (two classical
/// Gram-Schmidt passes) and among themselves; columns that vanish are dropped.
Eigen::MatrixXd orthonormalize_block(const Eigen::MatrixXd& basis, Eigen::MatrixXd w) {
    for (int pass = 0; pass < 2; ++pass)
        if (basis.cols() > 0) w -= basis * (basis.transpose() * w);
    Eigen::MatrixXd out(w.rows(), w.cols());
    int kept = 0;
    for (int c = 0; c < w.cols(); ++c) {
        Eigen::VectorXd v = w.col(c);
        const double before = v.norm();
        for (int pass = 0; pass < 2; ++pass) {
            if (basis.cols() > 0) v -= basis * (basis.transpose() * v);
            for (int j = 0; j < kept; ++j) v -= out.col(j).dot(v) * out.col(j);
        }
        const double after = v.norm();
        if (after <= 1e-10 * std::max(before, 1e-300) || after < 1e-300) continue;
        out.col(kept++) = v / after;
    }
    return out.leftCols(kept);
}

/// Block Krylov iteration on (L - shift I)^{-1} with full reorthogonalization
/// and Rayleigh-Ritz extraction on L itself, restarted from the wanted Ritz
/// vectors.
EigenPairs krylov_smallest(const LaplacianMatrix& L, int k, const EigenSolverOptions& opts, double tol) {
    const int n = L.size();
    const int block = std::min(n, k + 6);
    const int max_dim = std::min(n, std::max(4 * block, k + 40));

    Eigen::SparseMatrix<double> shifted = L.matrix;
    for (int i = 0; i < n; ++i) shifted.coeffRef(i, i) -= opts.shift;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(shifted);
    if (solver.info() != Eigen::Success) throw NumericalError("shifted Laplacian factorization failed");

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd start(n, block);
    for (int c = 0; c < block; ++c)
        for (int r = 0; r < n; ++r) start(r, c) = normal(rng);

    double achieved = 0.0;
    for (int restart = 0; restart < opts.max_restarts; ++restart) {
        Eigen::MatrixXd basis = orthonormalize_block(Eigen::MatrixXd(n, 0), start);
        Eigen::MatrixXd last = basis;
        while (basis.cols() < max_dim && last.cols() > 0) {
            Eigen::MatrixXd next = solver.solve(last);
            next = orthonormalize_block(basis, next);
            const int room = max_dim - static_cast<int>(basis.cols());
            if (next.cols() > room) next.conservativeResize(Eigen::NoChange, room);
            Eigen::MatrixXd grown(n, basis.cols() + next.cols());
            grown << basis, next;
            basis.swap(grown);
            last = next;
        }
        if (basis.cols() < k) {
            // Krylov space exhausted below k; refill with fresh directions.
            Eigen::MatrixXd extra(n, k);
            for (int c = 0; c < k; ++c)
                for (int r = 0; r < n; ++r) extra(r, c) = normal(rng);
            extra = orthonormalize_block(basis, extra);
            Eigen::MatrixXd grown(n, basis.cols() + extra.cols());
            grown << basis, extra;
            basis.swap(grown);
        }

        const Eigen::MatrixXd lv = L.matrix * basis;
        Eigen::MatrixXd projected = basis.transpose() * lv;
        projected = 0.5 * (projected + projected.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(projected);
        if (es.info() != Eigen::Success) throw NumericalError("projected eigenproblem failed");

        const int keep = std::min<int>(block, static_cast<int>(basis.cols()));
        const Eigen::MatrixXd ritz = basis * es.eigenvectors().leftCols(keep);
        const Eigen::VectorXd theta = es.eigenvalues().head(keep);
        const Eigen::MatrixXd residual =
            lv * es.eigenvectors().leftCols(k) - ritz.leftCols(k) * theta.head(k).asDiagonal();
        achieved = residual.colwise().norm().maxCoeff();
        if (achieved <= tol) return {theta.head(k), ritz.leftCols(k)};
        start = ritz;
    }
    throw NumericalError("iterative eigensolver did not converge, residual " + std::to_string(achieved));
}

}  // namespace

EigenPairs smallest_eigenpairs(const LaplacianMatrix& L, int k, const EigenSolverOptions& opts) {
    const int n = L.size();
    if (k < 0 || k > n) throw DataError("requested " + std::to_string(k) + " eigenpairs of a " + std::to_string(n) + "x" +
                                        std::to_string(n) + " matrix");
    if (k == 0) return {Eigen::VectorXd(0), Eigen::MatrixXd(n, 0)};
    const double tol = 1e-8 * L.frobenius_norm();

    EigenPairs out;
    if (n <= opts.dense_threshold)
        out = dense_smallest(L, k);
    else
        out = krylov_smallest(L, k, opts, 0.5 * tol);

    const double res = max_residual(L, out.values, out.vectors);
    if (res > tol) throw NumericalError("eigenpair residual " + std::to_string(res) + " exceeds tolerance");
    return out;
}

void canonicalize_signs(Eigen::MatrixXd& columns) {
    for (Eigen::Index c = 0; c < columns.cols(); ++c) {
        Eigen::Index best = 0;
        double mag = -1.0;
        for (Eigen::Index r = 0; r < columns.rows(); ++r)
            if (std::abs(columns(r, c)) > mag) mag = std::abs(columns(r, c)), best = r;
        if (columns.rows() > 0 && columns(best, c) < 0) columns.col(c) *= -1.0;
    }
}

SpectralFeatures laplacian_positional_features(const LaplacianMatrix& L, int E, double tol,
                                               const EigenSolverOptions& opts) {
    if (E < 1) throw ConfigError("eigen count must be at least 1");
    const int n = L.size();

    // zero modes: one per connected component that has an edge
    std::vector<std::pair<int, int>> edges;
    for (int col = 0; col < L.matrix.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(L.matrix, col); it; ++it)
            if (it.row() < it.col() && it.value() != 0.0) edges.emplace_back(static_cast<int>(it.row()), col);
    const int zeros = AdjacencyMatrix(n, std::move(edges)).edge_component_count();

    const EigenPairs pairs = smallest_eigenpairs(L, std::min(n, zeros + E), opts);

    SpectralFeatures out;
    out.features = Eigen::MatrixXd::Zero(n, E);
    std::vector<int> used, discarded;
    for (int i = 0; i < pairs.values.size(); ++i) {
        if (pairs.values[i] < tol)
            discarded.push_back(i);
        else if (static_cast<int>(used.size()) < E)
            used.push_back(i);
    }
    out.eigenvalues.resize(static_cast<Eigen::Index>(used.size()));
    for (std::size_t c = 0; c < used.size(); ++c) {
        out.features.col(static_cast<Eigen::Index>(c)) = pairs.vectors.col(used[c]);
        out.eigenvalues[static_cast<Eigen::Index>(c)] = pairs.values[used[c]];
    }
    Eigen::MatrixXd head = out.features.leftCols(static_cast<Eigen::Index>(used.size()));
    canonicalize_signs(head);
    out.features.leftCols(static_cast<Eigen::Index>(used.size())) = head;

    out.zero_modes.resize(n, static_cast<Eigen::Index>(discarded.size()));
    for (std::size_t c = 0; c < discarded.size(); ++c)
        out.zero_modes.col(static_cast<Eigen::Index>(c)) = pairs.vectors.col(discarded[c]);
    return out;
}

}  // namespace met
