#include "cageadv/geometry.hpp"
#include "cageadv/io.hpp"
#include "cageadv/nn.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace cageadv;
namespace t = cageadv::testing;

namespace {

Points3d random_cloud(std::mt19937_64& rng, Eigen::Index n) {
    return t::uniform_cube(n, rng, 0.8);
}

double& param(ClassifierModel& m, std::size_t layer, Eigen::Index k) {
    DenseLayer& l = m.layers[layer];
    return k < l.weight.size() ? l.weight.data()[k] : l.bias.data()[k - l.weight.size()];
}

double grad_at(const ModelGradients& g, std::size_t layer, Eigen::Index k) {
    const DenseLayer& l = g[layer];
    return k < l.weight.size() ? l.weight.data()[k] : l.bias.data()[k - l.weight.size()];
}

double batch_loss(const ClassifierModel& m, std::span<const PointCloud> batch) {
    double sum = 0.0;
    for (const auto& s : batch) sum += cross_entropy(forward(m, s.points), *s.label);
    return sum / static_cast<double>(batch.size());
}

std::vector<PointCloud> two_class_toy(int per_class, std::uint64_t seed) {
    std::vector<PointCloud> out;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < per_class; ++i) {
        for (int c = 0; c < 2; ++c) {
            const auto shape = c == 0 ? ShapeClass::Sphere : ShapeClass::Cube;
            Points3d p = sample_surface(shape, 256, rng) * t::random_rotation(rng).transpose();
            out.push_back({normalize<double>(p).points, c});
        }
    }
    return out;
}

}  // namespace

TEST_CASE("logits are invariant to point order") {
    const ClassifierModel m(8, 3);
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        Points3d p = random_cloud(rng, 200);
        const Eigen::VectorXd base = forward(m, p);
        std::vector<Eigen::Index> perm(200);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Points3d q(200, 3);
        for (Eigen::Index i = 0; i < 200; ++i) q.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
        CHECK((forward(m, q) - base).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("duplicating a point leaves the logits unchanged") {
    const ClassifierModel m(8, 4);
    std::mt19937_64 rng(2);
    const Points3d p = random_cloud(rng, 100);
    Points3d q(101, 3);
    q.topRows(100) = p;
    q.row(100) = p.row(17);
    CHECK((forward(m, q) - forward(m, p)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("input gradient matches central differences") {
    const ClassifierModel m(8, 5);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    const Points3d p = random_cloud(rng, 128);
    const Eigen::VectorXd up = Eigen::VectorXd::Random(8);
    const Points3d grad = backward_input(m, p, up);
    auto f = [&](const Points3d& x) { return up.dot(forward(m, x)); };
    int checked = 0;
    int redrawn = 0;
    while (checked < 50) {
        Points3d d(128, 3);
        for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = g(rng);
        // Skip directions that cross a rectifier or pooling switch within the step.
        const double wide = t::directional_fd(f, p, d, 1e-6);
        const double narrow = t::directional_fd(f, p, d, 2.5e-7);
        if (t::relative_error(wide, narrow) > 1e-5) {
            ++redrawn;
            continue;
        }
        const double an = (grad.array() * d.array()).sum();
        CHECK(std::abs(wide - an) <= 1e-4 * std::max(1.0, std::abs(an)));
        ++checked;
    }
    CHECK(redrawn <= 10);
}

TEST_CASE("parameter gradient matches central differences") {
    ClassifierModel m(8, 6);
    std::mt19937_64 rng(4);
    std::vector<PointCloud> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({random_cloud(rng, 64), i % 8});
    const BatchGradient bg = backward_params(m, batch);
    CHECK(bg.loss == doctest::Approx(batch_loss(m, batch)).epsilon(1e-12));
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t layer = static_cast<std::size_t>(trial % 4);
        const Eigen::Index total = m.layers[layer].weight.size() + m.layers[layer].bias.size();
        const Eigen::Index k = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(total));
        const double saved = param(m, layer, k);
        param(m, layer, k) = saved + h;
        const double up = batch_loss(m, batch);
        param(m, layer, k) = saved - h;
        const double down = batch_loss(m, batch);
        param(m, layer, k) = saved;
        const double fd = (up - down) / (2 * h);
        const double an = grad_at(bg.grad, layer, k);
        INFO("layer ", layer, " index ", k);
        CHECK(std::abs(fd - an) <= 1e-4 * std::max(1e-2, std::abs(an)));
    }
}

TEST_CASE("a batch of one sample repeated gives that sample's gradient") {
    const ClassifierModel m(8, 7);
    std::mt19937_64 rng(5);
    const PointCloud s{random_cloud(rng, 64), 3};
    const std::vector<PointCloud> one{s};
    const std::vector<PointCloud> twice{s, s};
    const BatchGradient a = backward_params(m, one);
    const BatchGradient b = backward_params(m, twice);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK((a.grad[l].weight - b.grad[l].weight).cwiseAbs().maxCoeff() <= 1e-14);
        CHECK((a.grad[l].bias - b.grad[l].bias).cwiseAbs().maxCoeff() <= 1e-14);
    }
}

TEST_CASE("cross entropy") {
    Eigen::VectorXd logits = Eigen::VectorXd::Zero(8);
    Eigen::VectorXd grad;
    CHECK(cross_entropy(logits, 2, &grad) == doctest::Approx(std::log(8.0)));
    CHECK(grad.sum() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(grad[2] == doctest::Approx(1.0 / 8 - 1.0));
    logits << 1000, 0, 0, 0, 0, 0, 0, 0;
    CHECK(std::isfinite(cross_entropy(logits, 1)));
    CHECK(cross_entropy(logits, 0) == doctest::Approx(0.0));
}

TEST_CASE("model save and load is bitwise exact") {
    const auto dir = t::scratch_dir("nn_io");
    const ClassifierModel m(8, 8);
    save_model(dir / "m.bin", m);
    const ClassifierModel r = load_model(dir / "m.bin");
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(r.layers[l].weight == m.layers[l].weight);
        CHECK(r.layers[l].bias == m.layers[l].bias);
    }
    std::mt19937_64 rng(6);
    const Points3d p = random_cloud(rng, 50);
    CHECK(forward(r, p) == forward(m, p));

    std::filesystem::resize_file(dir / "m.bin", std::filesystem::file_size(dir / "m.bin") / 2);
    CHECK_THROWS_AS(load_model(dir / "m.bin"), FormatError);

    io::write_ply(dir / "x.ply", p);
    CHECK_THROWS_AS(load_model(dir / "x.ply"), FormatError);
}

TEST_CASE("dataset split") {
    const DatasetSplit s = split_dataset(100, 0.8, 3);
    CHECK(s.train.size() == 80);
    CHECK(s.test.size() == 20);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 100; ++i) CHECK(all[i] == i);
    CHECK(split_dataset(100, 0.8, 3).test == s.test);
    const DatasetSplit tiny = split_dataset(2, 0.99, 1);
    CHECK(tiny.train.size() == 1);
    CHECK(tiny.test.size() == 1);
}

TEST_CASE("two-class toy problem is learned within five epochs") {
    const auto data = two_class_toy(200, 9);
    ClassifierModel m(2, 10);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 11;
    const TrainReport report = train(m, data, cfg);
    CHECK(report.epochs.size() == 5);
    CHECK(report.final_test_accuracy() >= 0.99);
    const DatasetSplit split = split_dataset(data.size(), cfg.train_fraction, cfg.seed);
    CHECK(accuracy(m, data, split.test) == doctest::Approx(report.final_test_accuracy()));
}

TEST_CASE("training is deterministic") {
    const auto data = two_class_toy(8, 12);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 13;
    ClassifierModel a(2, 14);
    ClassifierModel b(2, 14);
    const TrainReport ra = train(a, data, cfg);
    const TrainReport rb = train(b, data, cfg);
    for (std::size_t l = 0; l < 4; ++l) CHECK(a.layers[l].weight == b.layers[l].weight);
    CHECK(ra.epochs.back().train_loss == rb.epochs.back().train_loss);
}

TEST_CASE("training rejects single-class data") {
    std::mt19937_64 rng(7);
    std::vector<PointCloud> data{{random_cloud(rng, 32), 0}, {random_cloud(rng, 32), 0}};
    ClassifierModel m(2, 1);
    CHECK_THROWS_AS(train(m, data, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("synthetic dataset layout") {
    const SynthDataset d = generate_synth(5, 3, 512);
    CHECK(d.samples.size() == 3 * kShapeClassCount);
    CHECK(d.class_names.size() == kShapeClassCount);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        const auto& s = d.samples[i];
        CHECK(s.points.rows() == 512);
        CHECK(*s.label == static_cast<int>(i % kShapeClassCount));
        CHECK(s.points.colwise().mean().norm() <= 1e-9);
        CHECK(s.points.rowwise().norm().maxCoeff() == doctest::Approx(1.0));
    }
    const SynthDataset again = generate_synth(5, 3, 512);
    CHECK(again.samples[7].points == d.samples[7].points);
    CHECK(generate_synth(6, 1, 512).samples[0].points != d.samples[0].points);
}

TEST_CASE("sphere samples lie on the unit sphere") {
    std::mt19937_64 rng(8);
    const Points3d p = sample_surface(ShapeClass::Sphere, 1000, rng);
    CHECK((p.rowwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-12);
    CHECK(p.colwise().mean().norm() < 0.1);
    const Points3d cube = sample_surface(ShapeClass::Cube, 1000, rng);
    CHECK((cube.cwiseAbs().rowwise().maxCoeff().array() - 1.0).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("epoch-mean training loss mostly decreases on the synthetic set") {
    const SynthDataset d = generate_synth(3, 12, 256);
    ClassifierModel m(kShapeClassCount, 2);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 16;
    cfg.seed = 4;
    const TrainReport r = train(m, d.samples, cfg);
    int rises = 0;
    for (std::size_t e = 1; e < r.epochs.size(); ++e) {
        if (r.epochs[e].train_loss > r.epochs[e - 1].train_loss) ++rises;
    }
    CHECK(rises <= 2);
    CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
}
