#pragma once

#include "cageadv/nn.hpp"
#include "cageadv/types.hpp"

#include <cstdint>
#include <functional>
#include <span>

namespace cageadv {

struct DefenseConfig {
    int srs_drop = 500;
    int sor_k = 2;
    double sor_alpha = 1.1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Simple random sampling: removes `drop` uniformly chosen points. Survivors
/// keep their values and relative order.
PointCloud srs(const PointCloud& cloud, int drop, std::uint64_t seed);

/// Statistical outlier removal: drops points whose mean distance to their k
/// nearest neighbours exceeds mean + alpha * std over the cloud.
PointCloud sor(const PointCloud& cloud, int k, double alpha);

using Defense = std::function<PointCloud(const PointCloud&, std::size_t sample)>;

/// One adversarial cloud with its true label.
struct DefenseCase {
    const Points3d* adversarial;
    int label;
};

/// Attack success rate after purifying every adversarial cloud.
double evaluate_under_defense(const ClassifierModel& model, std::span<const DefenseCase> cases,
                              const Defense& defense);

}  // namespace cageadv
