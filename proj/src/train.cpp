#include "met/train.hpp"

#include <algorithm>
#include <numbers>

namespace met {

Eigen::VectorXd area_weights(const Eigen::VectorXd& areas, const std::vector<char>& real_mask) {
    if (static_cast<std::size_t>(areas.size()) != real_mask.size()) throw DataError("area and mask lengths differ");
    double total = 0.0;
    for (Eigen::Index i = 0; i < areas.size(); ++i) {
        if (areas[i] < 0) throw DataError("negative face area");
        if (real_mask[i]) total += areas[i];
    }
    if (!(total > 0)) throw DataError("total face area is zero");
    Eigen::VectorXd w = Eigen::VectorXd::Zero(areas.size());
    for (Eigen::Index i = 0; i < areas.size(); ++i)
        if (real_mask[i]) w[i] = areas[i] / total;
    return w;
}

double area_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth, const Eigen::VectorXd& areas,
                     const std::vector<char>& real_mask) {
    const auto n = predicted.size();
    if (truth.size() != n || static_cast<std::size_t>(areas.size()) != n || real_mask.size() != n)
        throw DataError("area_accuracy: inputs differ in length");
    double correct = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!real_mask[i]) continue;
        total += areas[static_cast<Eigen::Index>(i)];
        if (predicted[i] == truth[i]) correct += areas[static_cast<Eigen::Index>(i)];
    }
    if (!(total > 0)) throw DataError("area_accuracy: total area is zero");
    return correct / total;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        scores.row(i).maxCoeff(&best);
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

Sample transform_sample(const Sample& sample, const Eigen::Matrix3d& rotation, double scale,
                        const Eigen::Vector3d& translation) {
    Sample out = sample;
    auto& T = out.features;
    double extreme = 0.0;
    for (int i = 0; i < out.num_faces(); ++i) {
        if (!out.real_mask[i]) continue;
        for (int k = 0; k < 3; ++k) {
            const Eigen::Vector3d v = T.row(i).segment<3>(3 * k).transpose();
            const Eigen::Vector3d moved = scale * (rotation * v) + translation;
            T.row(i).segment<3>(3 * k) = moved.transpose();
            extreme = std::max(extreme, moved.cwiseAbs().maxCoeff());
        }
        const Eigen::Vector3d n = T.row(i).segment<3>(9).transpose();
        T.row(i).segment<3>(9) = (rotation * n).transpose();
    }
    if (extreme > 1.0) {
        Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
        Eigen::Vector3d hi = -lo;
        for (int i = 0; i < out.num_faces(); ++i) {
            if (!out.real_mask[i]) continue;
            for (int k = 0; k < 3; ++k) {
                const Eigen::Vector3d v = T.row(i).segment<3>(3 * k).transpose();
                lo = lo.cwiseMin(v);
                hi = hi.cwiseMax(v);
            }
        }
        const Eigen::Vector3d center = 0.5 * (lo + hi);
        const double s = 2.0 / (hi - lo).maxCoeff();
        for (int i = 0; i < out.num_faces(); ++i) {
            if (!out.real_mask[i]) continue;
            for (int k = 0; k < 3; ++k) {
                const Eigen::Vector3d v = T.row(i).segment<3>(3 * k).transpose();
                T.row(i).segment<3>(3 * k) = ((v - center) * s).cwiseMax(-1.0).cwiseMin(1.0).transpose();
            }
        }
    }
    return out;
}

Sample augment(const Sample& sample, std::mt19937_64& rng, const AugmentConfig& cfg) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    if (cfg.rotate) {
        // uniform unit quaternion
        const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
        const double two_pi = 2.0 * std::numbers::pi;
        const Eigen::Quaterniond q(std::sqrt(u1) * std::cos(two_pi * u3), std::sqrt(1 - u1) * std::sin(two_pi * u2),
                                   std::sqrt(1 - u1) * std::cos(two_pi * u2), std::sqrt(u1) * std::sin(two_pi * u3));
        rotation = q.normalized().toRotationMatrix();
    }
    const double scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng);
    Eigen::Vector3d translation;
    for (int k = 0; k < 3; ++k) translation[k] = cfg.translate * (2.0 * unit(rng) - 1.0);
    Sample out = transform_sample(sample, rotation, scale, translation);
    if (cfg.flip_eigen_signs)
        for (int c = 0; c < out.eigen_count; ++c)
            if (unit(rng) < 0.5) out.features.col(12 + c) *= -1.0;
    return out;
}

std::pair<std::vector<int>, std::vector<int>> split_dataset(int n, double validation_fraction, std::uint64_t seed) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto rng = stream_rng(seed, 0, 0x5B17);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * n));
    std::vector<int> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<int> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val.begin(), val.end());
    std::sort(tr.begin(), tr.end());
    return {tr, val};
}

}  // namespace met
