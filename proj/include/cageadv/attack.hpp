#pragma once

#include "cageadv/mvc.hpp"
#include "cageadv/nn.hpp"
#include "cageadv/types.hpp"

#include <cstdint>
#include <string>

namespace cageadv {

enum class MisLoss { Margin, NegativeCrossEntropy };

struct LossValue {
    double value = 0.0;
    Eigen::VectorXd grad;  // d value / d logits
};

/// Misclassification loss on logits for true label y.
/// Margin: max(z_y - max_{j != y} z_j, -kappa). NCE: log softmax(z)_y.
LossValue loss_mis(const Eigen::VectorXd& logits, int y, MisLoss kind, double kappa = 0.0);

/// Symmetric mean squared nearest-neighbour distance.
double chamfer(const Points3d& a, const Points3d& b);

/// Chamfer distance with its gradient with respect to `a`, nearest
/// neighbours frozen at the current positions.
double chamfer(const Points3d& a, const Points3d& b, Points3d* grad_a);

double hausdorff(const Points3d& a, const Points3d& b);

struct AttackConfig {
    double lambda1 = 1.0;
    int iterations = 200;
    double step_size = 0.01;
    MisLoss loss = MisLoss::Margin;
    double kappa = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AttackResult {
    Points3d adversarial;
    bool success = false;
    int predicted = -1;
    int iterations = 0;
    double l_mis = 0.0;
    double d_i = 0.0;
    Points3d cage_offsets;  // cage attack only
    Points3d displacement;  // adversarial - original

    [[nodiscard]] Eigen::VectorXd displacement_norms() const {
        return displacement.rowwise().norm();
    }
};

class AttackDivergedError : public Error {
public:
    using Error::Error;
};

/// Adam over cage-vertex offsets minimizing L_mis(f(deform(C + dC))) +
/// lambda1 * chamfer(P, deform(C + dC)). Stops at the first misclassified
/// iterate.
AttackResult cage_attack(const ClassifierModel& model, const PointCloud& cloud, int y,
                         const TriMesh& cage, const CoordinateMatrix& coords,
                         const AttackConfig& config);

/// Iterative fast gradient method: steps of length step_size along the
/// Frobenius-normalized input gradient of L_mis, no geometric regularizer.
AttackResult ifgm_attack(const ClassifierModel& model, const PointCloud& cloud, int y,
                         const AttackConfig& config);

}  // namespace cageadv
