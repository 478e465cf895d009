#pragma once

#include "cageadv/types.hpp"

#include <filesystem>

namespace cageadv {

/// Mean value coordinates of a point cloud with respect to a closed cage:
/// row i holds the weights that reproduce point i from the cage vertices.
struct CoordinateMatrix {
    Eigen::MatrixXd weights;  // N x m

    [[nodiscard]] Eigen::Index point_count() const { return weights.rows(); }
    [[nodiscard]] Eigen::Index vertex_count() const { return weights.cols(); }

    /// Share of entries that are negative (non-convex cages produce some).
    [[nodiscard]] double negative_fraction() const;
};

/// Mean value coordinates of `p` for a closed, outward-oriented triangle
/// cage (Ju, Schaefer and Warren). Points on a face get the barycentric
/// coordinates of that face and points within 1e-10 of a vertex get an
/// indicator row. Throws OutsideCageError when `p` lies outside.
Eigen::VectorXd compute_mvc(const TriMesh& cage, const Vec3d& p);

/// Binds every point; throws OutsideCageError carrying the first offending
/// point index.
CoordinateMatrix bind(const TriMesh& cage, const PointCloud& cloud);

/// Points reproduced from (possibly moved) cage vertices.
inline Points3d deform(const CoordinateMatrix& coords, const Points3d& vertices) {
    return coords.weights * vertices;
}

/// Adjoint of deform: maps a gradient on points to a gradient on cage vertices.
inline Points3d pullback_gradient(const CoordinateMatrix& coords, const Points3d& grad_points) {
    return coords.weights.transpose() * grad_points;
}

void save_coordinates(const std::filesystem::path& path, const CoordinateMatrix& coords);
CoordinateMatrix load_coordinates(const std::filesystem::path& path);

}  // namespace cageadv
