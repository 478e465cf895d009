#pragma once

#include "cageadv/types.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace cageadv::testing {

inline Points3d uniform_cube(Eigen::Index n, std::mt19937_64& rng, double half = 1.0) {
    std::uniform_real_distribution<double> u(-half, half);
    Points3d p(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        p.row(i) << u(rng), u(rng), u(rng);
    }
    return p;
}

inline Points3d uniform_sphere(Eigen::Index n, std::mt19937_64& rng, double radius = 1.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    Points3d p(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec3d v(g(rng), g(rng), g(rng));
        p.row(i) = radius * v.normalized().transpose();
    }
    return p;
}

/// Random point of the open unit ball scaled by `radius`.
inline Vec3d inside_ball(std::mt19937_64& rng, double radius) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec3d v;
    do {
        v = Vec3d(u(rng), u(rng), u(rng));
    } while (v.squaredNorm() >= 1.0);
    return radius * v;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
    q.normalize();
    return q.toRotationMatrix();
}

/// Exhaustive k-NN with the (distance, index) order.
inline std::vector<std::pair<double, Eigen::Index>> brute_knn(const Points3d& pts, const Vec3d& q,
                                                              Eigen::Index k, Eigen::Index skip = -1) {
    std::vector<std::pair<double, Eigen::Index>> all;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        if (i != skip) {
            all.emplace_back((pts.row(i).transpose() - q).norm(), i);
        }
    }
    std::sort(all.begin(), all.end());
    all.resize(static_cast<std::size_t>(std::min<Eigen::Index>(k, static_cast<Eigen::Index>(all.size()))));
    return all;
}

inline double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Central difference of f along direction d at x.
template <typename F, typename M>
double directional_fd(F&& f, const M& x, const M& d, double h) {
    return (f(M(x + h * d)) - f(M(x - h * d))) / (2.0 * h);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cageadv_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace cageadv::testing
