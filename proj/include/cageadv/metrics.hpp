#pragma once

#include "cageadv/types.hpp"

#include <cstdint>
#include <span>
#include <string>

namespace cageadv {

struct AttackResult;

struct MetricParams {
    int knn_k = 5;
    int curv_k = 16;
    int csd_k = 16;
    int lap_k = 8;
    int uni_balls = 32;
    double uni_radius = 0.1;  // fraction of the cloud diameter
    std::uint64_t seed = 0;
};

/// Naturalness of an adversarial cloud against its source. Pairwise metrics
/// vanish for identical clouds; `uni` is absolute.
struct MetricReport {
    double asr = 0.0;
    double csd = 0.0;
    double curv = 0.0;
    double uni = 0.0;
    double knn = 0.0;
    double lap = 0.0;
};

/// Mean over points of the mean distance to their k nearest neighbours.
double metric_knn(const Points3d& adversarial, int k = 5);

/// Mean |curvature(p') - curvature(nearest source point)|.
double metric_curv(const Points3d& source, const Points3d& adversarial, int k = 16);

/// Mean |std of curvature around p' - std of curvature around its nearest
/// source point|, neighbourhoods of size k in each cloud.
double metric_csd(const Points3d& source, const Points3d& adversarial, int k = 16);

/// Mean over FPS-seeded balls of radius r * diameter of the chi-square count
/// imbalance (expected count N * r^2) plus the normalized squared deviation
/// of in-ball nearest-neighbour spacing from the hexagonal ideal.
double metric_uni(const Points3d& adversarial, int balls = 32, double radius_fraction = 0.1,
                  std::uint64_t seed = 0);

/// Mean |delta'_i - delta_i| with delta = p - mean of its k nearest
/// neighbours; requires row correspondence.
double metric_lap(const Points3d& source, const Points3d& adversarial, int k = 8);

/// All five naturalness metrics for one pair (asr left at 0).
MetricReport measure(const Points3d& source, const Points3d& adversarial,
                     const MetricParams& params = {});

double asr(std::span<const AttackResult> results);

/// Display scaling used in tables: csd in 1e-1, curv and knn in 1e-3 units.
struct MetricScale {
    static constexpr double csd = 1e-1;
    static constexpr double curv = 1e-3;
    static constexpr double knn = 1e-3;
};

}  // namespace cageadv
