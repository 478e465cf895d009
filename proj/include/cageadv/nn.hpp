#pragma once

#include "cageadv/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cageadv {

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
};

/// Point classifier: shared per-point MLP 3->64->128 with rectifiers, a
/// feature-wise max over points, and a 128->64->Z head.
struct ClassifierModel {
    static constexpr int kHidden1 = 64;
    static constexpr int kHidden2 = 128;
    static constexpr int kHead = 64;

    std::array<DenseLayer, 4> layers;

    ClassifierModel() = default;
    /// He-uniform initialization, zero biases.
    ClassifierModel(int num_classes, std::uint64_t seed);

    [[nodiscard]] int num_classes() const { return static_cast<int>(layers[3].bias.size()); }
};

/// Intermediate activations kept for the backward passes.
struct ForwardTrace {
    Eigen::MatrixXd pre1;  // N x 64
    Eigen::MatrixXd act1;
    Eigen::MatrixXd pre2;  // N x 128
    Eigen::VectorXd pooled;
    std::vector<Eigen::Index> argmax;  // point feeding each pooled feature
    Eigen::VectorXd pre3;
    Eigen::VectorXd act3;
    Eigen::VectorXd logits;
};

ForwardTrace forward_trace(const ClassifierModel& model, const Points3d& points);
Eigen::VectorXd forward(const ClassifierModel& model, const Points3d& points);
int predict(const ClassifierModel& model, const Points3d& points);

/// Gradient of upstream . logits with respect to the input coordinates.
/// Pooling routes each feature's gradient to its lowest-index maximizer.
Points3d backward_input(const ClassifierModel& model, const Points3d& points,
                        const Eigen::VectorXd& upstream);
Points3d backward_input(const ClassifierModel& model, const ForwardTrace& trace,
                        const Points3d& points, const Eigen::VectorXd& upstream);

using ModelGradients = std::array<DenseLayer, 4>;

struct BatchGradient {
    double loss = 0.0;  // mean cross-entropy
    int correct = 0;
    ModelGradients grad;
};

/// Mean cross-entropy over a labelled batch and its parameter gradient.
BatchGradient backward_params(const ClassifierModel& model, std::span<const PointCloud> batch);

/// Softmax cross-entropy of logits against `label`; writes dLoss/dLogits.
double cross_entropy(const Eigen::VectorXd& logits, int label, Eigen::VectorXd* grad = nullptr);

// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double step_size = 1e-3;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    [[nodiscard]] double final_test_accuracy() const {
        return epochs.empty() ? 0.0 : epochs.back().test_accuracy;
    }
};

class TrainingDivergedError : public Error {
public:
    using Error::Error;
};

struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Deterministic shuffled split; at least one sample lands on each side when
/// the dataset has two or more samples.
DatasetSplit split_dataset(std::size_t count, double train_fraction, std::uint64_t seed);

double accuracy(const ClassifierModel& model, std::span<const PointCloud> samples,
                std::span<const std::size_t> subset);

/// Adam on mean cross-entropy over the training split of `samples`.
TrainReport train(ClassifierModel& model, std::span<const PointCloud> samples,
                  const TrainConfig& config,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

// ---------------------------------------------------------------------------

void save_model(const std::filesystem::path& path, const ClassifierModel& model);
ClassifierModel load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

enum class ShapeClass : int {
    Sphere = 0,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    PlaneCross,
    Capsule,
};

inline constexpr int kShapeClassCount = 8;
const std::array<std::string, kShapeClassCount>& shape_class_names();

/// Area-uniform samples on the analytic surface, canonical pose, no noise.
Points3d sample_surface(ShapeClass shape, Eigen::Index count, std::mt19937_64& rng);

struct SynthDataset {
    std::vector<PointCloud> samples;  // labels set
    std::vector<std::string> class_names;
};

/// n_per_class samples of each class, interleaved by class. Every sample is
/// randomly rotated, jittered (sigma 0.01) and normalized.
SynthDataset generate_synth(std::uint64_t seed, int n_per_class, Eigen::Index points = 1024);

}  // namespace cageadv
