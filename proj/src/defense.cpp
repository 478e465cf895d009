#include "cageadv/defense.hpp"

#include "cageadv/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cageadv {

void DefenseConfig::validate() const {
    if (srs_drop < 0 || sor_k < 1 || !(sor_alpha > 0.0)) {
        throw std::invalid_argument("defense config: drop >= 0, k >= 1 and alpha > 0 required");
    }
}

PointCloud srs(const PointCloud& cloud, int drop, std::uint64_t seed) {
    const Eigen::Index n = cloud.size();
    if (drop < 0 || drop >= n) {
        throw std::invalid_argument("srs: drop count must be in [0, N)");
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first `drop` slots hold the removed points.
    for (Eigen::Index i = 0; i < drop; ++i) {
        std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<Eigen::Index> keep(order.begin() + drop, order.end());
    std::sort(keep.begin(), keep.end());
    PointCloud out{Points3d(static_cast<Eigen::Index>(keep.size()), 3), cloud.label};
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.points.row(static_cast<Eigen::Index>(k)) = cloud.points.row(keep[k]);
    }
    return out;
}

PointCloud sor(const PointCloud& cloud, int k, double alpha) {
    const Eigen::Index n = cloud.size();
    if (n <= k) {
        throw std::invalid_argument("sor: need more than k points");
    }
    const KnnIndex index(cloud.points);
    Eigen::VectorXd mean_dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const KnnResult nn = index.query_excluding(i, k);
        mean_dist[i] = std::accumulate(nn.distances.begin(), nn.distances.end(), 0.0) /
                       static_cast<double>(nn.distances.size());
    }
    const double mu = mean_dist.mean();
    const double sigma = std::sqrt((mean_dist.array() - mu).square().mean());
    const double threshold = mu + alpha * sigma;

    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(mean_dist[i] > threshold)) {
            keep.push_back(i);
        }
    }
    PointCloud out{Points3d(static_cast<Eigen::Index>(keep.size()), 3), cloud.label};
    for (std::size_t s = 0; s < keep.size(); ++s) {
        out.points.row(static_cast<Eigen::Index>(s)) = cloud.points.row(keep[s]);
    }
    return out;
}

double evaluate_under_defense(const ClassifierModel& model, std::span<const DefenseCase> cases,
                              const Defense& defense) {
    if (cases.empty()) {
        throw std::invalid_argument("evaluate_under_defense: no cases");
    }
    std::size_t fooled = 0;
    for (std::size_t s = 0; s < cases.size(); ++s) {
        const PointCloud purified = defense(PointCloud{*cases[s].adversarial, cases[s].label}, s);
        fooled += predict(model, purified.points) != cases[s].label ? 1 : 0;
    }
    return static_cast<double>(fooled) / static_cast<double>(cases.size());
}

}  // namespace cageadv
