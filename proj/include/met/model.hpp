#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "met/error.hpp"
#include "met/preprocess.hpp"
#include "met/tensor.hpp"

namespace met {

struct ModelConfig {
    int d_t = 512;
    int d_p = 1024;
    int num_layers = 4;
    int num_heads = 8;
    int ff_multiplier = 4;
    int head_hidden = 0;  // 0 means d_t
    int num_classes = 2;
    int eigen_count = 16;
    int max_clusters = 256;
    double dropout = 0.1;
    bool use_coords = true;
    bool use_normals = true;
    bool use_laplacian = true;
    bool use_cluster_stream = true;
    bool tc_sum = false;  // literal C P instead of the cluster average

    int feature_width() const { return 12 + eigen_count; }
    int head_width() const { return head_hidden > 0 ? head_hidden : d_t; }

    void validate() const {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError(what);
        };
        need(d_t > 0 && d_p > 0, "token widths must be positive");
        need(num_heads > 0 && d_t % num_heads == 0 && d_p % num_heads == 0,
             "d_t (" + std::to_string(d_t) + ") and d_p (" + std::to_string(d_p) + ") must be divisible by the head count (" +
                 std::to_string(num_heads) + ")");
        need(num_layers >= 0, "layer count must be nonnegative");
        need(ff_multiplier > 0, "feedforward multiplier must be positive");
        need(num_classes > 0, "class count must be positive");
        need(eigen_count >= 1, "eigen count must be at least 1");
        need(max_clusters >= 1, "cluster table must have at least one row");
        need(dropout >= 0 && dropout < 1, "dropout must lie in [0, 1)");
    }
};

/// Named parameter matrices in a fixed registration order.
template <typename Scalar>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Matrix<Scalar> value;
    };

    std::size_t add(std::string name, Matrix<Scalar> value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(value)});
        return entries_.size() - 1;
    }

    std::size_t size() const { return entries_.size(); }
    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }
    std::size_t index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::vector<Matrix<Scalar>*> pointers() {
        std::vector<Matrix<Scalar>*> out;
        for (auto& e : entries_) out.push_back(&e.value);
        return out;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Additive attention masks (0 allowed, -inf blocked) and the cluster
/// averaging matrix for one sample.
template <typename Scalar>
struct AttentionMasks {
    Matrix<Scalar> adjacency;  // from A + I
    Matrix<Scalar> cluster;    // from C
    Matrix<Scalar> cluster_average;
    Matrix<Scalar> real;  // real rows see real rows, padding sees padding; empty without padding

    static AttentionMasks from_sample(const Sample& s, bool tc_sum = false) {
        const Eigen::Index n = s.num_faces();
        const Scalar blocked = -std::numeric_limits<Scalar>::infinity();
        AttentionMasks m;
        m.adjacency = Matrix<Scalar>::Constant(n, n, blocked);
        for (Eigen::Index i = 0; i < n; ++i) m.adjacency(i, i) = 0;
        for (const auto& [i, j] : s.adjacency.edges()) m.adjacency(i, j) = m.adjacency(j, i) = 0;

        std::vector<int> counts(static_cast<std::size_t>(s.num_clusters), 0);
        for (int id : s.cluster_ids) ++counts[id];
        m.cluster = Matrix<Scalar>::Constant(n, n, blocked);
        m.cluster_average = Matrix<Scalar>::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                if (s.cluster_ids[i] == s.cluster_ids[j]) {
                    m.cluster(i, j) = 0;
                    m.cluster_average(i, j) = tc_sum ? Scalar(1) : Scalar(1) / Scalar(counts[s.cluster_ids[i]]);
                }

        if (s.num_real() < n) {
            m.real.resize(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) m.real(i, j) = s.real_mask[i] == s.real_mask[j] ? Scalar(0) : blocked;
        }
        return m;
    }
};

/// Everything the network reads from a sample, in the network's precision.
template <typename Scalar>
struct ModelInput {
    Matrix<Scalar> features;
    std::vector<int> cluster_ids;
    AttentionMasks<Scalar> masks;

    static ModelInput from_sample(const Sample& s, const ModelConfig& cfg) {
        if (s.features.cols() != cfg.feature_width())
            throw ConfigError("sample feature width " + std::to_string(s.features.cols()) +
                              " does not match model width " + std::to_string(cfg.feature_width()));
        if (s.num_clusters > cfg.max_clusters)
            throw ConfigError("sample has " + std::to_string(s.num_clusters) + " clusters but the embedding table holds " +
                              std::to_string(cfg.max_clusters));
        ModelInput in;
        in.features = s.features.cast<Scalar>();
        if (!cfg.use_coords) in.features.leftCols(9).setZero();
        if (!cfg.use_normals) in.features.middleCols(9, 3).setZero();
        if (!cfg.use_laplacian) in.features.rightCols(cfg.eigen_count).setZero();
        in.cluster_ids = s.cluster_ids;
        in.masks = AttentionMasks<Scalar>::from_sample(s, cfg.tc_sum);
        return in;
    }
};

/// Parameters bound as graph leaves for one forward pass, plus the
/// dropout state.
template <typename Scalar>
class Binding {
public:
    Binding(const ParameterSet<Scalar>& params, bool record_grad, bool training, double p, std::mt19937_64* rng)
        : training_(training), p_(p), rng_(rng) {
        leaves_.reserve(params.size());
        for (const auto& e : params) leaves_.push_back(Tensor<Scalar>::view(e.value, record_grad));
        if (training_ && p_ > 0 && !rng_) throw ConfigError("training-mode dropout needs a random generator");
    }

    const Tensor<Scalar>& operator[](std::size_t i) const { return leaves_[i]; }
    const std::vector<Tensor<Scalar>>& leaves() const { return leaves_; }

    Tensor<Scalar> drop(const Tensor<Scalar>& x) const {
        if (!training_ || p_ == 0) return x;
        return dropout(x, p_, true, *rng_);
    }

private:
    std::vector<Tensor<Scalar>> leaves_;
    bool training_;
    double p_;
    std::mt19937_64* rng_;
};

struct LinearIds {
    std::size_t weight, bias;
};
struct NormIds {
    std::size_t gamma, beta;
};
struct AttentionIds {
    std::size_t wq, wk, wv, wo;
};
struct FeedForwardIds {
    NormIds norm;
    LinearIds hidden, out;
};
struct LayerIds {
    NormIds tc_norm;
    LinearIds tc_ff;
    NormIds sa_t_norm;
    AttentionIds sa_t;
    NormIds ct_norm;
    AttentionIds ct;
    NormIds sa_p_norm;
    AttentionIds sa_p;
    FeedForwardIds residual_t, residual_p;
};

template <typename Scalar>
Tensor<Scalar> linear(const Binding<Scalar>& b, const LinearIds& ids, const Tensor<Scalar>& x) {
    return add_row(matmul(x, b[ids.weight]), b[ids.bias]);
}

template <typename Scalar>
Tensor<Scalar> norm(const Binding<Scalar>& b, const NormIds& ids, const Tensor<Scalar>& x) {
    return layer_norm(x, b[ids.gamma], b[ids.beta]);
}

/// concat_i softmax((Q Wq_i)(K Wk_i)^T / sqrt(d_head) + mask) (V Wv_i), then W_O.
/// Head i uses columns [i d_head, (i+1) d_head) of the projections.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Binding<Scalar>& b, const AttentionIds& ids, const Tensor<Scalar>& queries,
                                    const Tensor<Scalar>& keys, const Tensor<Scalar>& values,
                                    const Matrix<Scalar>& mask, int heads) {
    const Tensor<Scalar> q = matmul(queries, b[ids.wq]);
    const Tensor<Scalar> k = matmul(keys, b[ids.wk]);
    const Tensor<Scalar> v = matmul(values, b[ids.wv]);
    if (q.cols() % heads != 0) throw ShapeError("attention width " + q.shape() + " not divisible by head count");
    const Eigen::Index dh = q.cols() / heads;
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    std::vector<Tensor<Scalar>> outputs;
    outputs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const auto qh = slice_cols(q, h * dh, dh);
        const auto kh = slice_cols(k, h * dh, dh);
        const auto vh = slice_cols(v, h * dh, dh);
        const auto weights = masked_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
        outputs.push_back(matmul(weights, vh));
    }
    return matmul(heads == 1 ? outputs.front() : concat_cols(outputs), b[ids.wo]);
}

/// The two-stream mesh transformer.
template <typename Scalar>
class MetModel {
public:
    struct Tokens {
        Tensor<Scalar> triangles;  // N x d_t
        Tensor<Scalar> clusters;   // N x d_p
    };

    explicit MetModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const int dt = cfg_.d_t, dp = cfg_.d_p;
        embed_t_ = add_linear("embed_t", cfg_.feature_width(), dt, rng);
        {
            std::normal_distribution<double> normal(0.0, 0.02);
            Matrix<Scalar> table(cfg_.max_clusters, dp);
            for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = Scalar(normal(rng));
            embed_p_ = params_.add("embed_p.table", std::move(table));
        }
        for (int l = 0; l < cfg_.num_layers; ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            LayerIds ids;
            ids.tc_norm = add_norm(p + "tc.norm", dt);
            ids.tc_ff = add_linear(p + "tc.ff", dp, dt, rng);
            ids.sa_t_norm = add_norm(p + "sa_t.norm", dt);
            ids.sa_t = add_attention(p + "sa_t", dt, dt, dt, rng);
            ids.ct_norm = add_norm(p + "ct.norm", dp);
            ids.ct = add_attention(p + "ct", dp, dt, dp, rng);
            ids.sa_p_norm = add_norm(p + "sa_p.norm", dp);
            ids.sa_p = add_attention(p + "sa_p", dp, dp, dp, rng);
            ids.residual_t = add_feedforward(p + "residual_t", dt, rng);
            ids.residual_p = add_feedforward(p + "residual_p", dp, rng);
            layers_.push_back(ids);
        }
        head_hidden_ = add_linear("head.hidden", dt, cfg_.head_width(), rng);
        head_out_ = add_linear("head.out", cfg_.head_width(), cfg_.num_classes, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterSet<Scalar>& parameters() { return params_; }
    const ParameterSet<Scalar>& parameters() const { return params_; }
    const std::vector<LayerIds>& layers() const { return layers_; }

    Binding<Scalar> bind(bool record_grad, bool training = false, std::mt19937_64* rng = nullptr) const {
        return Binding<Scalar>(params_, record_grad, training, cfg_.dropout, rng);
    }

    Tensor<Scalar> embed_triangles(const Binding<Scalar>& b, const Tensor<Scalar>& features) const {
        if (features.cols() != cfg_.feature_width())
            throw ShapeError("embed_triangles: feature width " + std::to_string(features.cols()) + ", expected " +
                             std::to_string(cfg_.feature_width()));
        return b.drop(relu(linear(b, embed_t_, features)));
    }

    Tensor<Scalar> embed_clusters(const Binding<Scalar>& b, const std::vector<int>& ids) const {
        return embedding_lookup(b[embed_p_], ids);
    }

    /// PLN -> adjacency-masked self attention -> + E.
    Tensor<Scalar> sa_triangles(const Binding<Scalar>& b, const LayerIds& ids, const Tensor<Scalar>& e,
                                const AttentionMasks<Scalar>& masks) const {
        const auto en = norm(b, ids.sa_t_norm, e);
        return add(b.drop(multi_head_attention(b, ids.sa_t, en, en, en, masks.adjacency, cfg_.num_heads)), e);
    }

    /// PLN -> self attention over all real rows -> + P.
    Tensor<Scalar> sa_clusters(const Binding<Scalar>& b, const LayerIds& ids, const Tensor<Scalar>& p,
                               const AttentionMasks<Scalar>& masks) const {
        const auto pn = norm(b, ids.sa_p_norm, p);
        return add(b.drop(multi_head_attention(b, ids.sa_p, pn, pn, pn, masks.real, cfg_.num_heads)), p);
    }

    /// Queries from PLN(P), keys and values from raw E, same-cluster mask, + P.
    Tensor<Scalar> ct_update(const Binding<Scalar>& b, const LayerIds& ids, const Tensor<Scalar>& e,
                             const Tensor<Scalar>& p, const AttentionMasks<Scalar>& masks) const {
        const auto pn = norm(b, ids.ct_norm, p);
        return add(b.drop(multi_head_attention(b, ids.ct, pn, e, e, masks.cluster, cfg_.num_heads)), p);
    }

    /// PLN(E) + FF_TC(C_avg P); the residual is the normalized E.
    Tensor<Scalar> tc_update(const Binding<Scalar>& b, const LayerIds& ids, const Tensor<Scalar>& e,
                             const Tensor<Scalar>& p, const AttentionMasks<Scalar>& masks) const {
        const auto en = norm(b, ids.tc_norm, e);
        const auto averaged = matmul(Tensor<Scalar>::view(masks.cluster_average, false), p);
        return add(en, b.drop(relu(linear(b, ids.tc_ff, averaged))));
    }

    /// PLN -> Linear -> ReLU -> Linear -> + S.
    Tensor<Scalar> residual_ff(const Binding<Scalar>& b, const FeedForwardIds& ids, const Tensor<Scalar>& s) const {
        const auto sn = norm(b, ids.norm, s);
        return add(b.drop(linear(b, ids.out, relu(linear(b, ids.hidden, sn)))), s);
    }

    /// Both streams read the same layer input.
    Tokens met_layer(const Binding<Scalar>& b, const LayerIds& ids, const Tokens& in,
                     const AttentionMasks<Scalar>& masks) const {
        if (!cfg_.use_cluster_stream)
            return {residual_ff(b, ids.residual_t, sa_triangles(b, ids, in.triangles, masks)), in.clusters};
        const auto tc = tc_update(b, ids, in.triangles, in.clusters, masks);
        const auto ct = ct_update(b, ids, in.triangles, in.clusters, masks);
        return {residual_ff(b, ids.residual_t, sa_triangles(b, ids, tc, masks)),
                residual_ff(b, ids.residual_p, sa_clusters(b, ids, ct, masks))};
    }

    Tensor<Scalar> head(const Binding<Scalar>& b, const Tensor<Scalar>& e) const {
        return linear(b, head_out_, b.drop(relu(linear(b, head_hidden_, e))));
    }

    /// N x num_classes scores.
    Tensor<Scalar> forward(const Binding<Scalar>& b, const ModelInput<Scalar>& in) const {
        const auto features = Tensor<Scalar>::view(in.features, false);
        Tokens t{embed_triangles(b, features), embed_clusters(b, in.cluster_ids)};
        for (const auto& ids : layers_) t = met_layer(b, ids, t, in.masks);
        return head(b, t.triangles);
    }

    /// Eval-mode scores without recording a graph.
    Matrix<Scalar> predict(const ModelInput<Scalar>& in) const { return forward(bind(false), in).value(); }
    Matrix<Scalar> predict(const Sample& s) const { return predict(ModelInput<Scalar>::from_sample(s, cfg_)); }

private:
    Matrix<Scalar> uniform(int rows, int cols, std::mt19937_64& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Matrix<Scalar> m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(dist(rng));
        return m;
    }

    LinearIds add_linear(const std::string& name, int in, int out, std::mt19937_64& rng) {
        LinearIds ids;
        ids.weight = params_.add(name + ".weight", uniform(in, out, rng));
        ids.bias = params_.add(name + ".bias", Matrix<Scalar>::Zero(1, out));
        return ids;
    }

    NormIds add_norm(const std::string& name, int width) {
        return {params_.add(name + ".gamma", Matrix<Scalar>::Ones(1, width)),
                params_.add(name + ".beta", Matrix<Scalar>::Zero(1, width))};
    }

    AttentionIds add_attention(const std::string& name, int query_width, int kv_width, int d, std::mt19937_64& rng) {
        AttentionIds ids;
        ids.wq = params_.add(name + ".wq", uniform(query_width, d, rng));
        ids.wk = params_.add(name + ".wk", uniform(kv_width, d, rng));
        ids.wv = params_.add(name + ".wv", uniform(kv_width, d, rng));
        ids.wo = params_.add(name + ".wo", uniform(d, d, rng));
        return ids;
    }

    FeedForwardIds add_feedforward(const std::string& name, int width, std::mt19937_64& rng) {
        FeedForwardIds ids;
        ids.norm = add_norm(name + ".norm", width);
        ids.hidden = add_linear(name + ".hidden", width, width * cfg_.ff_multiplier, rng);
        ids.out = add_linear(name + ".out", width * cfg_.ff_multiplier, width, rng);
        return ids;
    }

    ModelConfig cfg_;
    ParameterSet<Scalar> params_;
    LinearIds embed_t_{};
    std::size_t embed_p_ = 0;
    std::vector<LayerIds> layers_;
    LinearIds head_hidden_{}, head_out_{};
};

}  // namespace met
