#include "cageadv/nn.hpp"

#include "cageadv/adam.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace cageadv {

namespace {

constexpr char kMagic[6] = {'P', 'C', 'N', 'E', 'T', '1'};

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

}  // namespace

ClassifierModel::ClassifierModel(int num_classes, std::uint64_t seed) {
    if (num_classes < 2) {
        throw std::invalid_argument("classifier needs at least two classes");
    }
    const std::array<std::pair<int, int>, 4> shapes = {
        {{kHidden1, 3}, {kHidden2, kHidden1}, {kHead, kHidden2}, {num_classes, kHead}}};
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto [out, in] = shapes[l];
        const double bound = std::sqrt(6.0 / in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        layers[l].weight.resize(out, in);
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index c = 0; c < in; ++c) {
                layers[l].weight(r, c) = dist(rng);
            }
        }
        layers[l].bias = Eigen::VectorXd::Zero(out);
    }
}

ForwardTrace forward_trace(const ClassifierModel& model, const Points3d& points) {
    const auto& L = model.layers;
    ForwardTrace t;
    t.pre1.noalias() = points * L[0].weight.transpose();
    t.pre1.rowwise() += L[0].bias.transpose();
    t.act1 = relu(t.pre1);
    t.pre2.noalias() = t.act1 * L[1].weight.transpose();
    t.pre2.rowwise() += L[1].bias.transpose();

    const Eigen::Index features = t.pre2.cols();
    t.pooled.resize(features);
    t.argmax.assign(static_cast<std::size_t>(features), 0);
    for (Eigen::Index c = 0; c < features; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        Eigen::Index arg = 0;
        for (Eigen::Index i = 0; i < t.pre2.rows(); ++i) {
            const double v = std::max(t.pre2(i, c), 0.0);
            if (v > best) {
                best = v;
                arg = i;
            }
        }
        t.pooled[c] = best;
        t.argmax[static_cast<std::size_t>(c)] = arg;
    }

    t.pre3 = L[2].weight * t.pooled + L[2].bias;
    t.act3 = t.pre3.cwiseMax(0.0);
    t.logits = L[3].weight * t.act3 + L[3].bias;
    return t;
}

Eigen::VectorXd forward(const ClassifierModel& model, const Points3d& points) {
    return forward_trace(model, points).logits;
}

int predict(const ClassifierModel& model, const Points3d& points) {
    Eigen::Index arg = 0;
    forward(model, points).maxCoeff(&arg);
    return static_cast<int>(arg);
}

namespace {

/// Backpropagates dLoss/dLogits through the network. Parameter gradients are
/// accumulated into `grad` when given; the input gradient is written to
/// `grad_input` when given.
void backward(const ClassifierModel& model, const ForwardTrace& t, const Points3d& points,
              const Eigen::VectorXd& upstream, ModelGradients* grad, Points3d* grad_input) {
    const auto& L = model.layers;
    const Eigen::VectorXd d_act3 = L[3].weight.transpose() * upstream;
    const Eigen::VectorXd d_pre3 = (t.pre3.array() > 0.0).select(d_act3, 0.0);
    const Eigen::VectorXd d_pooled = L[2].weight.transpose() * d_pre3;
    if (grad) {
        (*grad)[3].weight.noalias() += upstream * t.act3.transpose();
        (*grad)[3].bias += upstream;
        (*grad)[2].weight.noalias() += d_pre3 * t.pooled.transpose();
        (*grad)[2].bias += d_pre3;
    }

    // Only the pooling winners receive gradient; work on that row subset.
    std::vector<Eigen::Index> rows(t.argmax);
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    const auto r = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index features = t.pre2.cols();

    Eigen::MatrixXd d_pre2 = Eigen::MatrixXd::Zero(r, features);
    for (Eigen::Index c = 0; c < features; ++c) {
        const Eigen::Index i = t.argmax[static_cast<std::size_t>(c)];
        if (t.pre2(i, c) > 0.0) {
            const auto slot = std::lower_bound(rows.begin(), rows.end(), i) - rows.begin();
            d_pre2(slot, c) += d_pooled[c];
        }
    }
    Eigen::MatrixXd act1_r(r, t.act1.cols());
    Eigen::MatrixXd pre1_r(r, t.pre1.cols());
    Eigen::MatrixXd x_r(r, 3);
    for (Eigen::Index k = 0; k < r; ++k) {
        act1_r.row(k) = t.act1.row(rows[static_cast<std::size_t>(k)]);
        pre1_r.row(k) = t.pre1.row(rows[static_cast<std::size_t>(k)]);
        x_r.row(k) = points.row(rows[static_cast<std::size_t>(k)]);
    }
    const Eigen::MatrixXd d_act1 = d_pre2 * L[1].weight;
    const Eigen::MatrixXd d_pre1 = (pre1_r.array() > 0.0).select(d_act1, 0.0);
    if (grad) {
        (*grad)[1].weight.noalias() += d_pre2.transpose() * act1_r;
        (*grad)[1].bias += d_pre2.colwise().sum().transpose();
        (*grad)[0].weight.noalias() += d_pre1.transpose() * x_r;
        (*grad)[0].bias += d_pre1.colwise().sum().transpose();
    }
    if (grad_input) {
        grad_input->setZero(points.rows(), 3);
        const Eigen::MatrixXd d_x = d_pre1 * L[0].weight;
        for (Eigen::Index k = 0; k < r; ++k) {
            grad_input->row(rows[static_cast<std::size_t>(k)]) = d_x.row(k);
        }
    }
}

ModelGradients zero_like(const ClassifierModel& model) {
    ModelGradients g;
    for (std::size_t l = 0; l < g.size(); ++l) {
        g[l].weight = Eigen::MatrixXd::Zero(model.layers[l].weight.rows(), model.layers[l].weight.cols());
        g[l].bias = Eigen::VectorXd::Zero(model.layers[l].bias.size());
    }
    return g;
}

}  // namespace

Points3d backward_input(const ClassifierModel& model, const ForwardTrace& trace,
                        const Points3d& points, const Eigen::VectorXd& upstream) {
    Points3d grad;
    backward(model, trace, points, upstream, nullptr, &grad);
    return grad;
}

Points3d backward_input(const ClassifierModel& model, const Points3d& points,
                        const Eigen::VectorXd& upstream) {
    return backward_input(model, forward_trace(model, points), points, upstream);
}

double cross_entropy(const Eigen::VectorXd& logits, int label, Eigen::VectorXd* grad) {
    const double peak = logits.maxCoeff();
    const Eigen::VectorXd e = (logits.array() - peak).exp();
    const double total = e.sum();
    if (grad) {
        *grad = e / total;
        (*grad)[label] -= 1.0;
    }
    return std::log(total) - (logits[label] - peak);
}

BatchGradient backward_params(const ClassifierModel& model, std::span<const PointCloud> batch) {
    BatchGradient out;
    out.grad = zero_like(model);
    if (batch.empty()) {
        throw std::invalid_argument("backward_params: empty batch");
    }
    for (const auto& sample : batch) {
        if (!sample.label) {
            throw std::invalid_argument("backward_params: unlabelled sample");
        }
        const ForwardTrace t = forward_trace(model, sample.points);
        Eigen::VectorXd dz;
        out.loss += cross_entropy(t.logits, *sample.label, &dz);
        Eigen::Index arg = 0;
        t.logits.maxCoeff(&arg);
        out.correct += static_cast<int>(arg) == *sample.label ? 1 : 0;
        backward(model, t, sample.points, dz, &out.grad, nullptr);
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    out.loss *= scale;
    for (auto& layer : out.grad) {
        layer.weight *= scale;
        layer.bias *= scale;
    }
    return out;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || !(step_size > 0.0)) {
        throw std::invalid_argument("train config: epochs, batch size and step size must be positive");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train config: split fraction must lie in (0, 1)");
    }
}

DatasetSplit split_dataset(std::size_t count, double train_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
    if (count >= 2) {
        n_train = std::clamp<std::size_t>(n_train, 1, count - 1);
    }
    DatasetSplit split;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

double accuracy(const ClassifierModel& model, std::span<const PointCloud> samples,
                std::span<const std::size_t> subset) {
    if (subset.empty()) {
        return 0.0;
    }
    int correct = 0;
    for (const std::size_t i : subset) {
        correct += predict(model, samples[i].points) == samples[i].label.value_or(-1) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(subset.size());
}

TrainReport train(ClassifierModel& model, std::span<const PointCloud> samples,
                  const TrainConfig& config, const std::function<void(const EpochStats&)>& on_epoch) {
    config.validate();
    int max_label = -1;
    int min_label = std::numeric_limits<int>::max();
    for (const auto& s : samples) {
        if (!s.label) {
            throw std::invalid_argument("train: unlabelled sample");
        }
        max_label = std::max(max_label, *s.label);
        min_label = std::min(min_label, *s.label);
    }
    if (samples.empty() || max_label == min_label) {
        throw std::invalid_argument("train: dataset needs at least two classes");
    }
    if (max_label >= model.num_classes()) {
        throw std::invalid_argument("train: label exceeds model class count");
    }

    const DatasetSplit split = split_dataset(samples.size(), config.train_fraction, config.seed);
    std::vector<Adam> weight_opt;
    std::vector<Adam> bias_opt;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        weight_opt.emplace_back(config.step_size);
        bias_opt.emplace_back(config.step_size);
    }

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order = split.train;
    std::vector<PointCloud> batch;
    TrainReport report;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            batch.clear();
            for (std::size_t k = start; k < stop; ++k) {
                batch.push_back(samples[order[k]]);
            }
            BatchGradient g = backward_params(model, batch);
            if (!std::isfinite(g.loss)) {
                throw TrainingDivergedError(fmt::format(
                    "training diverged at epoch {} batch {}: loss {}", epoch, start / batch.size(), g.loss));
            }
            loss_sum += g.loss * static_cast<double>(batch.size());
            correct += g.correct;
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                weight_opt[l].step(model.layers[l].weight, g.grad[l].weight);
                bias_opt[l].step(model.layers[l].bias, g.grad[l].bias);
            }
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        stats.test_accuracy = accuracy(model, samples, split.test);
        report.epochs.push_back(stats);
        if (on_epoch) {
            on_epoch(stats);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw FormatError("truncated model file " + path.string());
    }
    return v;
}

}  // namespace

void save_model(const std::filesystem::path& path, const ClassifierModel& model) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out.write(kMagic, sizeof kMagic);
    put<std::uint64_t>(out, model.layers.size());
    for (const auto& layer : model.layers) {
        put<std::uint64_t>(out, static_cast<std::uint64_t>(layer.weight.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(layer.weight.cols()));
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
                put(out, layer.weight(r, c));
            }
        }
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
            put(out, layer.bias[r]);
        }
    }
}

ClassifierModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    char magic[sizeof kMagic] = {};
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw FormatError(path.string() + ": not a PCNET1 model file");
    }
    const auto count = get<std::uint64_t>(in, path);
    if (count != 4) {
        throw FormatError(fmt::format("{}: expected 4 layers, found {}", path.string(), count));
    }
    ClassifierModel model;
    const std::array<std::uint64_t, 4> in_dims = {3, ClassifierModel::kHidden1,
                                                  ClassifierModel::kHidden2, ClassifierModel::kHead};
    const std::array<std::uint64_t, 3> out_dims = {ClassifierModel::kHidden1,
                                                   ClassifierModel::kHidden2, ClassifierModel::kHead};
    for (std::size_t l = 0; l < 4; ++l) {
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        const bool rows_ok = l < 3 ? rows == out_dims[l] : (rows >= 2 && rows <= 4096);
        if (!rows_ok || cols != in_dims[l]) {
            throw FormatError(fmt::format("{}: layer {} has unexpected shape {}x{}", path.string(), l,
                                          rows, cols));
        }
        auto& layer = model.layers[l];
        layer.weight.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
                layer.weight(r, c) = get<double>(in, path);
            }
        }
        layer.bias.resize(static_cast<Eigen::Index>(rows));
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
            layer.bias[r] = get<double>(in, path);
        }
        if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
            throw FormatError(fmt::format("{}: layer {} has non-finite weights", path.string(), l));
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after model");
    }
    return model;
}

}  // namespace cageadv
