#include "cageadv/attack.hpp"

#include "cageadv/adam.hpp"
#include "cageadv/knn.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cageadv {

LossValue loss_mis(const Eigen::VectorXd& logits, int y, MisLoss kind, double kappa) {
    const Eigen::Index z = logits.size();
    if (y < 0 || y >= z) {
        throw std::invalid_argument("loss_mis: label out of range");
    }
    LossValue out;
    out.grad = Eigen::VectorXd::Zero(z);
    if (kind == MisLoss::Margin) {
        Eigen::Index other = -1;
        for (Eigen::Index j = 0; j < z; ++j) {
            if (j != y && (other < 0 || logits[j] > logits[other])) {
                other = j;
            }
        }
        const double margin = logits[y] - logits[other];
        if (margin > -kappa) {
            out.value = margin;
            out.grad[y] = 1.0;
            out.grad[other] = -1.0;
        } else {
            out.value = -kappa;
        }
        return out;
    }
    Eigen::VectorXd ce_grad;
    out.value = -cross_entropy(logits, y, &ce_grad);
    out.grad = -ce_grad;
    return out;
}

namespace {

/// For every row of `from`, the index of its nearest row in `to` and the
/// squared distance.
void nearest(const Points3d& from, const KnnIndex& to, std::vector<Eigen::Index>& idx,
             Eigen::VectorXd& d2) {
    idx.resize(static_cast<std::size_t>(from.rows()));
    d2.resize(from.rows());
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
        const KnnResult r = to.query(from.row(i).transpose(), 1);
        idx[static_cast<std::size_t>(i)] = r.indices[0];
        d2[i] = r.distances[0] * r.distances[0];
    }
}

}  // namespace

double chamfer(const Points3d& a, const Points3d& b, Points3d* grad_a) {
    if (a.rows() == 0 || b.rows() == 0) {
        throw std::invalid_argument("chamfer: empty point set");
    }
    const KnnIndex index_a(a);
    const KnnIndex index_b(b);
    std::vector<Eigen::Index> ab;
    std::vector<Eigen::Index> ba;
    Eigen::VectorXd d_ab;
    Eigen::VectorXd d_ba;
    nearest(a, index_b, ab, d_ab);
    nearest(b, index_a, ba, d_ba);
    const double na = static_cast<double>(a.rows());
    const double nb = static_cast<double>(b.rows());
    if (grad_a) {
        grad_a->setZero(a.rows(), 3);
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            grad_a->row(i) += 2.0 / na * (a.row(i) - b.row(ab[static_cast<std::size_t>(i)]));
        }
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const Eigen::Index i = ba[static_cast<std::size_t>(j)];
            grad_a->row(i) += 2.0 / nb * (a.row(i) - b.row(j));
        }
    }
    return d_ab.sum() / na + d_ba.sum() / nb;
}

double chamfer(const Points3d& a, const Points3d& b) { return chamfer(a, b, nullptr); }

double hausdorff(const Points3d& a, const Points3d& b) {
    if (a.rows() == 0 || b.rows() == 0) {
        throw std::invalid_argument("hausdorff: empty point set");
    }
    const KnnIndex index_a(a);
    const KnnIndex index_b(b);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        worst = std::max(worst, index_b.query(a.row(i).transpose(), 1).distances[0]);
    }
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
        worst = std::max(worst, index_a.query(b.row(j).transpose(), 1).distances[0]);
    }
    return worst;
}

void AttackConfig::validate() const {
    if (lambda1 < 0.0) {
        throw std::invalid_argument("attack config: lambda1 must be non-negative");
    }
    if (iterations < 1) {
        throw std::invalid_argument("attack config: iterations must be at least 1");
    }
    if (!(step_size >= 0.0) || kappa < 0.0) {
        throw std::invalid_argument("attack config: step size and kappa must be non-negative");
    }
}

namespace {

bool is_success(const Eigen::VectorXd& logits, int y, double kappa, int* predicted) {
    Eigen::Index arg = 0;
    logits.maxCoeff(&arg);
    *predicted = static_cast<int>(arg);
    if (arg == y) {
        return false;
    }
    double other = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.size(); ++j) {
        if (j != y) {
            other = std::max(other, logits[j]);
        }
    }
    return logits[y] - other <= -kappa;
}

void check_finite(double value, const char* attack, int iteration) {
    if (!std::isfinite(value)) {
        throw AttackDivergedError(
            fmt::format("{} attack: non-finite objective at iteration {}", attack, iteration));
    }
}

}  // namespace

AttackResult cage_attack(const ClassifierModel& model, const PointCloud& cloud, int y,
                         const TriMesh& cage, const CoordinateMatrix& coords,
                         const AttackConfig& config) {
    config.validate();
    if (coords.point_count() != cloud.size() || coords.vertex_count() != cage.vertex_count()) {
        throw std::invalid_argument("cage_attack: coordinates do not match cloud and cage");
    }
    const Points3d reference = deform(coords, cage.vertices);
    Points3d offsets = Points3d::Zero(cage.vertex_count(), 3);
    Adam adam(config.step_size);

    AttackResult result;
    for (int it = 0; it < config.iterations; ++it) {
        const Points3d current = deform(coords, cage.vertices + offsets);
        const ForwardTrace trace = forward_trace(model, current);
        const LossValue mis = loss_mis(trace.logits, y, config.loss, config.kappa);
        Points3d grad_chamfer;
        const double d_i = chamfer(current, reference, &grad_chamfer);
        check_finite(mis.value + config.lambda1 * d_i, "cage", it);

        int predicted = -1;
        const bool success = is_success(trace.logits, y, config.kappa, &predicted);
        result.adversarial = current;
        result.cage_offsets = offsets;
        result.success = success;
        result.predicted = predicted;
        result.iterations = it + 1;
        result.l_mis = mis.value;
        result.d_i = d_i;
        if (success) {
            break;
        }

        const Points3d grad_points =
            backward_input(model, trace, current, mis.grad) + config.lambda1 * grad_chamfer;
        const Points3d grad_offsets = pullback_gradient(coords, grad_points);
        adam.step(offsets, grad_offsets);
    }
    result.displacement = result.adversarial - cloud.points;
    return result;
}

AttackResult ifgm_attack(const ClassifierModel& model, const PointCloud& cloud, int y,
                         const AttackConfig& config) {
    config.validate();
    Points3d current = cloud.points;
    AttackResult result;
    for (int it = 0; it < config.iterations; ++it) {
        const ForwardTrace trace = forward_trace(model, current);
        const LossValue mis = loss_mis(trace.logits, y, config.loss, config.kappa);
        check_finite(mis.value, "ifgm", it);

        int predicted = -1;
        result.success = is_success(trace.logits, y, config.kappa, &predicted);
        result.predicted = predicted;
        result.iterations = it + 1;
        result.l_mis = mis.value;
        result.adversarial = current;
        if (result.success) {
            break;
        }
        const Points3d grad = backward_input(model, trace, current, mis.grad);
        const double norm = grad.norm();
        if (!(norm > 0.0)) {
            break;
        }
        current -= config.step_size / norm * grad;
    }
    result.d_i = chamfer(result.adversarial, cloud.points);
    result.displacement = result.adversarial - cloud.points;
    return result;
}

}  // namespace cageadv
