#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <mutex>
#include <thread>
#include <vector>

#include <Eigen/Geometry>

#include "met/error.hpp"
#include "met/model.hpp"
#include "met/optim.hpp"

namespace met {

struct AugmentConfig {
    bool enabled = true;
    double scale_min = 0.9;
    double scale_max = 1.1;
    double translate = 0.1;
    bool rotate = true;
    bool flip_eigen_signs = false;
};

struct TrainConfig {
    AdamWConfig optimizer;
    int batch_size = 12;
    int max_steps = 1000;
    std::uint64_t seed = 0;
    double validation_fraction = 0.06;
    int eval_every = 50;
    int threads = 1;
    AugmentConfig augment;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (!(validation_fraction >= 0 && validation_fraction < 1)) throw ConfigError("validation_fraction must lie in [0, 1)");
        if (max_steps < 0) throw ConfigError("max_steps must be nonnegative");
        if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
        if (threads < 1) throw ConfigError("threads must be at least 1");
        if (augment.scale_min <= 0 || augment.scale_max < augment.scale_min) throw ConfigError("invalid augmentation scale range");
    }
};

struct Metrics {
    double area_accuracy = 0.0;
    std::vector<double> per_class_accuracy;  // NaN for classes with no area
    double mean_loss = 0.0;
    double total_area = 0.0;
};

/// One record of the metrics log.
struct MetricsRecord {
    int step = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    std::optional<double> validation_accuracy;
};

/// w_i = area_i / sum of real areas; exactly 0 on padding.
Eigen::VectorXd area_weights(const Eigen::VectorXd& areas, const std::vector<char>& real_mask);

/// Correct real area over total real area.
double area_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth, const Eigen::VectorXd& areas,
                     const std::vector<char>& real_mask);

/// Uniform random rotation, uniform scale and per-axis translation of the
/// coordinate blocks; normals rotate only. Topology, clusters and Laplacian
/// features are untouched (signs optionally flipped per column).
Sample augment(const Sample& sample, std::mt19937_64& rng, const AugmentConfig& cfg = {});

/// Applies a given similarity transform to the feature blocks, restandardizing
/// when a coordinate leaves [-1, 1].
Sample transform_sample(const Sample& sample, const Eigen::Matrix3d& rotation, double scale,
                        const Eigen::Vector3d& translation);

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores);

template <typename Scalar>
Tensor<Scalar> weighted_cross_entropy(const Tensor<Scalar>& scores, const std::vector<int>& labels,
                                      const Eigen::VectorXd& weights) {
    for (int l : labels)
        if (l >= scores.cols())
            throw ConfigError("label " + std::to_string(l) + " >= class count " + std::to_string(scores.cols()));
    return weighted_nll(log_softmax(scores), labels, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(weights.cast<Scalar>()));
}

/// Deterministic generator for (seed, step, slot).
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t slot) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                      static_cast<std::uint32_t>(slot), static_cast<std::uint32_t>(slot >> 32)};
    return std::mt19937_64(seq);
}

/// Splits indices [0, n) into (train, validation) from the seed.
std::pair<std::vector<int>, std::vector<int>> split_dataset(int n, double validation_fraction, std::uint64_t seed);

template <typename Scalar>
Metrics evaluate(const MetModel<Scalar>& model, const std::vector<Sample>& data, const std::vector<int>& indices) {
    const int K = model.config().num_classes;
    Metrics m;
    std::vector<double> class_total(static_cast<std::size_t>(K), 0.0), class_correct(static_cast<std::size_t>(K), 0.0);
    double correct = 0.0, loss = 0.0;
    for (int idx : indices) {
        const Sample& s = data[static_cast<std::size_t>(idx)];
        if (s.labels.num_classes > K)
            throw ConfigError("samples have " + std::to_string(s.labels.num_classes) + " classes but the model predicts " +
                              std::to_string(K));
        const auto in = ModelInput<Scalar>::from_sample(s, model.config());
        const auto scores = model.forward(model.bind(false), in);
        loss += static_cast<double>(weighted_cross_entropy(scores, s.labels.labels, s.area_weights).item());
        const auto pred = argmax_rows(scores.value().template cast<double>());
        for (int i = 0; i < s.num_faces(); ++i) {
            if (!s.real_mask[i]) continue;
            const int y = s.labels.labels[i];
            const double a = s.face_areas[i];
            m.total_area += a;
            class_total[y] += a;
            if (pred[i] == y) correct += a, class_correct[y] += a;
        }
    }
    if (!indices.empty() && !(m.total_area > 0)) throw DataError("evaluation set has zero total area");
    m.area_accuracy = indices.empty() ? 0.0 : correct / m.total_area;
    m.mean_loss = indices.empty() ? 0.0 : loss / static_cast<double>(indices.size());
    for (int c = 0; c < K; ++c)
        m.per_class_accuracy.push_back(class_total[c] > 0 ? class_correct[c] / class_total[c] : std::nan(""));
    return m;
}

template <typename Scalar>
Metrics evaluate(const MetModel<Scalar>& model, const std::vector<Sample>& data) {
    std::vector<int> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    return evaluate(model, data, all);
}

template <typename Scalar>
struct TrainResult {
    MetModel<Scalar> best;
    MetModel<Scalar> last;
    std::vector<MetricsRecord> log;
    std::vector<double> step_losses;
    std::vector<int> train_indices, validation_indices;
};

/// Per-sample loss and gradients.
template <typename Scalar>
struct SampleGrad {
    double loss = 0.0;
    std::vector<Matrix<Scalar>> grads;
};

template <typename Scalar>
SampleGrad<Scalar> sample_gradient(const MetModel<Scalar>& model, const Sample& sample, std::mt19937_64& rng,
                                   bool training) {
    const auto in = ModelInput<Scalar>::from_sample(sample, model.config());
    const auto binding = model.bind(true, training, &rng);
    const auto loss = weighted_cross_entropy(model.forward(binding, in), sample.labels.labels, sample.area_weights);
    backward(loss);
    SampleGrad<Scalar> out;
    out.loss = static_cast<double>(loss.item());
    for (const auto& leaf : binding.leaves()) out.grads.push_back(leaf.grad());
    return out;
}

/// Mini-batch AdamW training. Batch gradients are the mean of per-sample
/// gradients summed in batch order; every random stream derives from
/// (seed, step, slot), so results do not depend on the thread count.
/// `on_record` sees every metrics record as it is produced.
template <typename Scalar>
TrainResult<Scalar> train(const std::vector<Sample>& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                          const std::function<void(const MetricsRecord&)>& on_record = {}) {
    cfg.validate();
    if (data.empty()) throw DataError("training set is empty");
    for (const auto& s : data)
        if (s.labels.num_classes > model_cfg.num_classes)
            throw ConfigError("samples have " + std::to_string(s.labels.num_classes) + " classes but the model predicts " +
                              std::to_string(model_cfg.num_classes));

    auto [train_idx, val_idx] = split_dataset(static_cast<int>(data.size()), cfg.validation_fraction, cfg.seed);
    MetModel<Scalar> model(model_cfg, cfg.seed);
    TrainResult<Scalar> result{model, model, {}, {}, train_idx, val_idx};
    OptimState<Scalar> state;
    std::optional<double> best_val;
    double window_loss = 0.0;
    int window_steps = 0;

    std::vector<int> order;
    std::size_t cursor = 0;
    std::uint64_t epoch = 0;
    auto next_batch = [&]() {
        std::vector<int> batch;
        const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train_idx.size());
        while (batch.size() < want) {
            if (cursor == order.size()) {
                order = train_idx;
                auto rng = stream_rng(cfg.seed, epoch++, 0xE90C);
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        return batch;
    };

    for (int step = 1; step <= cfg.max_steps; ++step) {
        const auto batch = next_batch();
        std::vector<SampleGrad<Scalar>> parts(batch.size());
        auto work = [&](std::size_t slot) {
            auto rng = stream_rng(cfg.seed, static_cast<std::uint64_t>(step), slot + 1);
            const Sample& src = data[static_cast<std::size_t>(batch[slot])];
            if (cfg.augment.enabled)
                parts[slot] = sample_gradient(model, augment(src, rng, cfg.augment), rng, true);
            else
                parts[slot] = sample_gradient(model, src, rng, true);
        };
        if (cfg.threads > 1 && batch.size() > 1) {
            std::vector<std::thread> pool;
            std::size_t next = 0;
            std::mutex lock;
            for (int t = 0; t < std::min<int>(cfg.threads, static_cast<int>(batch.size())); ++t)
                pool.emplace_back([&]() {
                    for (;;) {
                        std::size_t slot;
                        {
                            std::lock_guard<std::mutex> g(lock);
                            if (next == batch.size()) return;
                            slot = next++;
                        }
                        work(slot);
                    }
                });
            for (auto& th : pool) th.join();
        } else {
            for (std::size_t slot = 0; slot < batch.size(); ++slot) work(slot);
        }

        double loss = 0.0;
        std::vector<Matrix<Scalar>> grads = parts.front().grads;
        for (std::size_t slot = 0; slot < parts.size(); ++slot) {
            loss += parts[slot].loss;
            if (slot > 0)
                for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += parts[slot].grads[i];
        }
        loss /= static_cast<double>(parts.size());
        for (auto& g : grads) g /= static_cast<Scalar>(parts.size());
        if (!std::isfinite(loss)) throw NumericalError("non-finite training loss at step " + std::to_string(step));

        adamw_step(model.parameters().pointers(), grads, state, cfg.optimizer);
        result.step_losses.push_back(loss);
        window_loss += loss;
        ++window_steps;

        if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
            MetricsRecord rec;
            rec.step = step;
            rec.loss = window_loss / window_steps;
            rec.train_accuracy = evaluate(model, data, train_idx).area_accuracy;
            if (!val_idx.empty()) rec.validation_accuracy = evaluate(model, data, val_idx).area_accuracy;
            window_loss = 0.0;
            window_steps = 0;
            const double score = rec.validation_accuracy.value_or(rec.train_accuracy);
            if (!best_val || score > *best_val) {
                best_val = score;
                result.best = model;
            }
            result.log.push_back(rec);
            if (on_record) on_record(rec);
        }
    }
    result.last = model;
    if (!best_val) result.best = model;
    return result;
}

}  // namespace met
