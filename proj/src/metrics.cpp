#include "cageadv/metrics.hpp"

#include "cageadv/attack.hpp"
#include "cageadv/geometry.hpp"
#include "cageadv/knn.hpp"

#include <cmath>
#include <stdexcept>

namespace cageadv {

namespace {

std::vector<Eigen::Index> nearest_in(const Points3d& from, const KnnIndex& to) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(from.rows()));
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
        idx[static_cast<std::size_t>(i)] = to.query(from.row(i).transpose(), 1).indices[0];
    }
    return idx;
}

/// Standard deviation of `values` over each point's k-neighbourhood
/// (point included).
Eigen::VectorXd local_std(const Points3d& points, const Eigen::VectorXd& values, int k) {
    const KnnIndex index(points);
    Eigen::VectorXd out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const KnnResult nn = index.query(points.row(i).transpose(), k);
        double mean = 0.0;
        for (const auto j : nn.indices) {
            mean += values[j];
        }
        mean /= static_cast<double>(nn.indices.size());
        double var = 0.0;
        for (const auto j : nn.indices) {
            var += (values[j] - mean) * (values[j] - mean);
        }
        out[i] = std::sqrt(var / static_cast<double>(nn.indices.size()));
    }
    return out;
}

Points3d laplacian_offsets(const Points3d& points, int k) {
    const KnnIndex index(points);
    Points3d delta(points.rows(), 3);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const KnnResult nn = index.query_excluding(i, k);
        Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
        for (const auto j : nn.indices) {
            mean += points.row(j);
        }
        delta.row(i) = points.row(i) - mean / static_cast<double>(nn.indices.size());
    }
    return delta;
}

}  // namespace

double metric_knn(const Points3d& adversarial, int k) {
    if (adversarial.rows() <= k) {
        throw std::invalid_argument("metric_knn: need more than k points");
    }
    const KnnIndex index(adversarial);
    double total = 0.0;
    for (Eigen::Index i = 0; i < adversarial.rows(); ++i) {
        const KnnResult nn = index.query_excluding(i, k);
        double s = 0.0;
        for (const double d : nn.distances) {
            s += d;
        }
        total += s / static_cast<double>(nn.distances.size());
    }
    return total / static_cast<double>(adversarial.rows());
}

double metric_curv(const Points3d& source, const Points3d& adversarial, int k) {
    const Eigen::VectorXd cs = estimate_curvature(source, k);
    const Eigen::VectorXd ca = estimate_curvature(adversarial, k);
    const auto nn = nearest_in(adversarial, KnnIndex(source));
    double total = 0.0;
    for (Eigen::Index i = 0; i < adversarial.rows(); ++i) {
        total += std::abs(ca[i] - cs[nn[static_cast<std::size_t>(i)]]);
    }
    return total / static_cast<double>(adversarial.rows());
}

double metric_csd(const Points3d& source, const Points3d& adversarial, int k) {
    const Eigen::VectorXd ss = local_std(source, estimate_curvature(source, k), k);
    const Eigen::VectorXd sa = local_std(adversarial, estimate_curvature(adversarial, k), k);
    const auto nn = nearest_in(adversarial, KnnIndex(source));
    double total = 0.0;
    for (Eigen::Index i = 0; i < adversarial.rows(); ++i) {
        total += std::abs(sa[i] - ss[nn[static_cast<std::size_t>(i)]]);
    }
    return total / static_cast<double>(adversarial.rows());
}

double metric_uni(const Points3d& adversarial, int balls, double radius_fraction,
                  std::uint64_t seed) {
    const Eigen::Index n = adversarial.rows();
    if (n < balls || balls < 1) {
        throw std::invalid_argument("metric_uni: need at least as many points as balls");
    }
    double diameter2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        diameter2 = std::max(diameter2, (adversarial.rowwise() - adversarial.row(i)).rowwise()
                                            .squaredNorm()
                                            .maxCoeff());
    }
    const double radius = radius_fraction * std::sqrt(diameter2);
    const double expected = static_cast<double>(n) * radius_fraction * radius_fraction;

    const auto seeds = farthest_point_sampling(adversarial, balls, seed);
    double total = 0.0;
    for (const auto s : seeds) {
        std::vector<Eigen::Index> members;
        for (Eigen::Index i = 0; i < n; ++i) {
            if ((adversarial.row(i) - adversarial.row(s)).norm() <= radius) {
                members.push_back(i);
            }
        }
        const auto count = static_cast<double>(members.size());
        const double imbalance = (count - expected) * (count - expected) / expected;
        double clutter = 0.0;
        if (members.size() >= 2) {
            const double ideal = std::sqrt(2.0 * M_PI * radius * radius / (count * std::sqrt(3.0)));
            for (const auto i : members) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto j : members) {
                    if (j != i) {
                        best = std::min(best, (adversarial.row(i) - adversarial.row(j)).norm());
                    }
                }
                clutter += (best - ideal) * (best - ideal) / ideal;
            }
            clutter /= count;
        }
        total += imbalance + clutter;
    }
    return total / static_cast<double>(seeds.size());
}

double metric_lap(const Points3d& source, const Points3d& adversarial, int k) {
    if (source.rows() != adversarial.rows()) {
        throw std::invalid_argument("metric_lap: clouds must have the same size");
    }
    const Points3d ds = laplacian_offsets(source, k);
    const Points3d da = laplacian_offsets(adversarial, k);
    return (da - ds).rowwise().norm().mean();
}

MetricReport measure(const Points3d& source, const Points3d& adversarial,
                     const MetricParams& params) {
    MetricReport r;
    r.csd = metric_csd(source, adversarial, params.csd_k);
    r.curv = metric_curv(source, adversarial, params.curv_k);
    r.uni = metric_uni(adversarial, params.uni_balls, params.uni_radius, params.seed);
    r.knn = metric_knn(adversarial, params.knn_k);
    r.lap = metric_lap(source, adversarial, params.lap_k);
    return r;
}

double asr(std::span<const AttackResult> results) {
    if (results.empty()) {
        throw std::invalid_argument("asr: no results");
    }
    std::size_t hits = 0;
    for (const auto& r : results) {
        hits += r.success ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

}  // namespace cageadv
