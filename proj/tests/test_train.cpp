#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "met/train.hpp"
#include "support.hpp"

using namespace met;
using T = Tensor<double>;
using M = Matrix<double>;

namespace {

Sample sphere_sample(int rings, int segments, int eigen_count, const std::string& name = "sphere") {
    PreprocessConfig cfg;
    cfg.simplify = false;
    cfg.target_faces = 0;
    cfg.eigen_count = eigen_count;
    cfg.lambda = 4;
    const Mesh m = synth::uv_sphere(rings, segments);
    Sample s = build_sample(m, synth::hemisphere_labels(m), cfg);
    s.name = name;
    return s;
}

TrainConfig quick_train(int steps) {
    TrainConfig t;
    t.max_steps = steps;
    t.batch_size = 2;
    t.validation_fraction = 0;
    t.eval_every = 5;
    t.seed = 21;
    t.optimizer.lr = 5e-3;
    return t;
}

}  // namespace

TEST_CASE("area weights") {
    Eigen::VectorXd w = area_weights(Eigen::Vector2d(1, 3), {1, 1});
    CHECK(w[0] == 0.25);
    CHECK(w[1] == 0.75);
    w = area_weights(Eigen::Vector4d(2, 2, 2, 2), {1, 1, 1, 1});
    CHECK(w == Eigen::Vector4d::Constant(0.25));
    w = area_weights(Eigen::Vector3d(1, 1, 5), {1, 1, 0});
    CHECK(w[2] == 0.0);
    CHECK(w[0] == 0.5);
    CHECK_THROWS_AS(area_weights(Eigen::Vector2d(0, 0), {1, 1}), DataError);
    CHECK_THROWS_AS(area_weights(Eigen::Vector2d(0, 4), {1, 0}), DataError);
}

TEST_CASE("weighted cross entropy") {
    const Eigen::VectorXd w = Eigen::Vector2d(0.25, 0.75);
    CHECK(weighted_cross_entropy(T::constant(M::Zero(2, 2)), {0, 1}, w).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(weighted_cross_entropy(T::constant(M::Zero(2, 2)), {1, 1}, w).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));

    M confident(2, 2);
    confident << 20, 0, 0, 20;
    CHECK(weighted_cross_entropy(T::constant(confident), {0, 1}, w).item() <= 1e-6);

    M s(2, 3);
    s << 0.3, -1, 2, 5, 1, -4;
    const Eigen::VectorXd w10 = Eigen::Vector2d(1, 0);
    const double a = weighted_cross_entropy(T::constant(s), {2, 0}, w10).item();
    s.row(1) << -9, 30, 2;
    CHECK(weighted_cross_entropy(T::constant(s), {2, 0}, w10).item() == a);

    // ignored rows contribute nothing
    CHECK(weighted_cross_entropy(T::constant(s), {2, kIgnoreLabel}, w).item() ==
          weighted_cross_entropy(T::constant(M(s.topRows(1))), {2}, Eigen::VectorXd::Constant(1, 0.25)).item());
    CHECK_THROWS_AS(weighted_cross_entropy(T::constant(s), {3, 0}, w), ConfigError);
}

TEST_CASE("area accuracy") {
    CHECK(area_accuracy({0, 1}, {0, 0}, Eigen::Vector2d(1, 3), {1, 1}) == 0.25);
    CHECK(area_accuracy({0, 1, 1}, {0, 1, 1}, Eigen::Vector3d(1, 3, 2), {1, 1, 1}) == 1.0);
    CHECK(area_accuracy({0, 1, 0}, {0, 1, kIgnoreLabel}, Eigen::Vector3d(1, 3, 0), {1, 1, 0}) == 1.0);
    CHECK_THROWS_AS(area_accuracy({0}, {0}, Eigen::VectorXd::Zero(1), {1}), DataError);

    // relabeling predictions and truth consistently changes nothing
    std::mt19937_64 rng(2);
    std::vector<int> p(30), t(30);
    Eigen::VectorXd a(30);
    for (int i = 0; i < 30; ++i) p[i] = int(rng() % 4), t[i] = int(rng() % 4), a[i] = 0.1 + double(rng() % 100) / 10;
    const std::vector<int> perm{2, 0, 3, 1};
    std::vector<int> pp(30), tt(30);
    for (int i = 0; i < 30; ++i) pp[i] = perm[p[i]], tt[i] = perm[t[i]];
    const std::vector<char> mask(30, 1);
    const double acc = area_accuracy(p, t, a, mask);
    CHECK(acc >= 0);
    CHECK(acc <= 1);
    CHECK(area_accuracy(pp, tt, a, mask) == acc);
}

TEST_CASE("augmentation") {
    const Sample s = sphere_sample(6, 8, 4);
    const Sample same = transform_sample(s, Eigen::Matrix3d::Identity(), 1.0, Eigen::Vector3d::Zero());
    CHECK(same.features == s.features);

    Sample up = s;
    up.features.row(0).segment<3>(9) = Eigen::RowVector3d(0, 0, 1);
    const Eigen::Matrix3d rz = Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const Sample turned = transform_sample(up, rz, 1.0, Eigen::Vector3d::Zero());
    CHECK((turned.features.row(0).segment<3>(9) - Eigen::RowVector3d(0, 0, 1)).norm() < 1e-15);

    std::mt19937_64 rng(3);
    AugmentConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        cfg.flip_eigen_signs = trial % 2 == 1;
        const Sample a = augment(s, rng, cfg);
        CHECK(a.adjacency.edges() == s.adjacency.edges());
        CHECK(a.cluster_ids == s.cluster_ids);
        CHECK(a.num_clusters == s.num_clusters);
        CHECK(a.labels.labels == s.labels.labels);
        CHECK(a.area_weights == s.area_weights);
        CHECK(a.features.leftCols(9).cwiseAbs().maxCoeff() <= 1.0);
        CHECK(a.features.rightCols(4).cwiseAbs() == s.features.rightCols(4).cwiseAbs());
        if (!cfg.flip_eigen_signs) CHECK(a.features.rightCols(4) == s.features.rightCols(4));
        for (int i = 0; i < a.num_faces(); ++i)
            CHECK(std::abs(a.features.row(i).segment<3>(9).norm() - 1) < 1e-12);
    }
}

TEST_CASE("dataset split") {
    const auto [train, val] = split_dataset(100, 0.06, 5);
    CHECK(val.size() == 6);
    CHECK(train.size() == 94);
    CHECK(split_dataset(100, 0.06, 5) == split_dataset(100, 0.06, 5));
    CHECK(split_dataset(100, 0.06, 5).second != split_dataset(100, 0.06, 6).second);
    CHECK(split_dataset(3, 0.0, 1).second.empty());
}

TEST_CASE("evaluation pools area and checks the class count") {
    std::mt19937_64 rng(4);
    Sample s = synth::handmade_sample(10, 2, 2, rng);
    for (int i = 0; i < 10; ++i) {
        s.labels.labels[i] = i < 4 ? 0 : 1;
        s.face_areas[i] = 1.0;
    }
    s.area_weights = s.face_areas / 10.0;
    auto cfg = synth::small_model(2, 2);
    MetModel<double> model(cfg, 5);
    auto& params = model.parameters();
    params[params.index("head.out.weight")].value.setZero();
    params[params.index("head.out.bias")].value << 1.0, 0.0;
    const Metrics m = evaluate(model, {s});
    CHECK(m.area_accuracy == doctest::Approx(0.40).epsilon(1e-15));
    CHECK(m.per_class_accuracy[0] == 1.0);
    CHECK(m.per_class_accuracy[1] == 0.0);

    // pooled over meshes by area, not averaged per mesh
    Sample big = s;
    big.face_areas *= 3.0;
    for (int i = 0; i < 10; ++i) big.labels.labels[i] = 0;
    CHECK(evaluate(model, {s, big}).area_accuracy == doctest::Approx((4.0 + 30.0) / 40.0).epsilon(1e-15));

    Sample three = s;
    three.labels.num_classes = 3;
    CHECK_THROWS_AS(evaluate(model, {three}), ConfigError);
}

TEST_CASE("training is reproducible and independent of thread count") {
    std::vector<Sample> data{sphere_sample(4, 6, 3, "a"), sphere_sample(4, 8, 3, "b"), sphere_sample(5, 6, 3, "c")};
    auto cfg = synth::small_model(3, 2);
    cfg.max_clusters = 64;
    TrainConfig t = quick_train(10);
    const auto r1 = train<double>(data, cfg, t);
    const auto r2 = train<double>(data, cfg, t);
    t.threads = 3;
    const auto r3 = train<double>(data, cfg, t);
    CHECK(r1.step_losses == r2.step_losses);
    CHECK(r1.step_losses == r3.step_losses);
    for (std::size_t i = 0; i < r1.last.parameters().size(); ++i)
        CHECK(r1.last.parameters()[i].value == r3.last.parameters()[i].value);
    CHECK(r1.log.size() == 2);
    t.seed = 22;
    CHECK(train<double>(data, cfg, t).step_losses != r1.step_losses);
}

TEST_CASE("training reduces the loss and lr = 0 freezes the model") {
    std::vector<Sample> data{sphere_sample(5, 8, 4, "a"), sphere_sample(6, 8, 4, "b")};
    auto cfg = synth::small_model(4, 2);
    cfg.max_clusters = 64;
    cfg.dropout = 0;
    TrainConfig t = quick_train(60);
    t.augment.enabled = false;
    const auto r = train<double>(data, cfg, t);
    const auto mean = [&](std::size_t from, std::size_t count) {
        double s = 0;
        for (std::size_t i = from; i < from + count; ++i) s += r.step_losses[i];
        return s / double(count);
    };
    CHECK(mean(50, 10) < mean(0, 10));
    const double final_acc = evaluate(r.last, data).area_accuracy;
    CHECK(final_acc >= 0.0);
    CHECK(r.log.back().train_accuracy == doctest::Approx(final_acc).epsilon(1e-12));

    t.optimizer.lr = 0;
    t.max_steps = 3;
    const auto frozen = train<double>(data, cfg, t);
    MetModel<double> init(cfg, t.seed);
    for (std::size_t i = 0; i < init.parameters().size(); ++i)
        CHECK(frozen.last.parameters()[i].value == init.parameters()[i].value);
}

TEST_CASE("training rejects bad configurations") {
    std::vector<Sample> data{sphere_sample(4, 6, 3)};
    auto cfg = synth::small_model(3, 2);
    cfg.max_clusters = 64;
    TrainConfig t = quick_train(1);
    t.batch_size = 0;
    CHECK_THROWS_AS(train<double>(data, cfg, t), ConfigError);
    t = quick_train(1);
    t.validation_fraction = 1.0;
    CHECK_THROWS_AS(train<double>(data, cfg, t), ConfigError);
    CHECK_THROWS_AS(train<double>({}, cfg, quick_train(1)), DataError);
    cfg.num_classes = 1;
    CHECK_THROWS_AS(train<double>(data, cfg, quick_train(1)), ConfigError);
}
