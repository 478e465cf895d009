#pragma once

#include "cageadv/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace cageadv {

// ---------------------------------------------------------------------------
// Normalization

template <typename Scalar>
struct Normalized {
    Points<Scalar> points;
    Vec3<Scalar> center;  // subtracted centroid
    Scalar scale;         // divisor applied after centering
};

/// Centers the points on their centroid and scales them into the unit ball.
/// Throws DegenerateInputError if fewer than 4 points are given or all
/// points coincide.
template <typename Scalar>
Normalized<Scalar> normalize(const Points<Scalar>& points) {
    if (points.rows() < 4) {
        throw DegenerateInputError("normalize: need at least 4 points");
    }
    if (!points.allFinite()) {
        throw DegenerateInputError("normalize: non-finite coordinates");
    }
    const Vec3<Scalar> center = points.colwise().mean().transpose();
    Points<Scalar> centered = points.rowwise() - center.transpose();
    const Scalar scale = centered.rowwise().norm().maxCoeff();
    if (!(scale > Scalar(1e-12))) {
        throw DegenerateInputError("normalize: all points coincide");
    }
    return {centered / scale, center, scale};
}

inline PointCloud normalize(const PointCloud& cloud) {
    return {normalize<double>(cloud.points).points, cloud.label};
}

// ---------------------------------------------------------------------------
// Point / triangle distance

template <typename Scalar>
struct TriangleProjection {
    Scalar squared_distance;
    Vec3<Scalar> closest;
    Vec3<Scalar> barycentric;  // weights of (a, b, c) giving `closest`

    [[nodiscard]] Scalar distance() const { return std::sqrt(squared_distance); }
};

namespace detail {

template <typename Scalar>
TriangleProjection<Scalar> project_segment(const Vec3<Scalar>& p, const Vec3<Scalar>& a,
                                           const Vec3<Scalar>& b) {
    const Vec3<Scalar> ab = b - a;
    const Scalar len2 = ab.squaredNorm();
    Scalar t = len2 > Scalar(0) ? (p - a).dot(ab) / len2 : Scalar(0);
    t = std::clamp(t, Scalar(0), Scalar(1));
    const Vec3<Scalar> q = a + t * ab;
    return {(p - q).squaredNorm(), q, Vec3<Scalar>(Scalar(1) - t, t, Scalar(0))};
}

}  // namespace detail

/// Exact closest point on the closed triangle (a, b, c) by Voronoi-region
/// classification. Triangles with area below 1e-12 are treated as the union
/// of their edges.
template <typename Scalar>
TriangleProjection<Scalar> point_triangle_distance(const Vec3<Scalar>& p, const Vec3<Scalar>& a,
                                                   const Vec3<Scalar>& b,
                                                   const Vec3<Scalar>& c) {
    const Vec3<Scalar> ab = b - a;
    const Vec3<Scalar> ac = c - a;
    if (Scalar(0.5) * ab.cross(ac).norm() <= Scalar(1e-12)) {
        auto best = detail::project_segment<Scalar>(p, a, b);
        auto bc = detail::project_segment<Scalar>(p, b, c);
        auto ca = detail::project_segment<Scalar>(p, c, a);
        if (bc.squared_distance < best.squared_distance) {
            best = {bc.squared_distance, bc.closest,
                    Vec3<Scalar>(Scalar(0), bc.barycentric[0], bc.barycentric[1])};
        }
        if (ca.squared_distance < best.squared_distance) {
            best = {ca.squared_distance, ca.closest,
                    Vec3<Scalar>(ca.barycentric[1], Scalar(0), ca.barycentric[0])};
        }
        return best;
    }

    auto make = [&](Scalar u, Scalar v, Scalar w) {
        const Vec3<Scalar> q = u * a + v * b + w * c;
        return TriangleProjection<Scalar>{(p - q).squaredNorm(), q, Vec3<Scalar>(u, v, w)};
    };

    const Vec3<Scalar> ap = p - a;
    const Scalar d1 = ab.dot(ap);
    const Scalar d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) {
        return make(1, 0, 0);
    }
    const Vec3<Scalar> bp = p - b;
    const Scalar d3 = ab.dot(bp);
    const Scalar d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) {
        return make(0, 1, 0);
    }
    const Scalar vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        const Scalar v = d1 / (d1 - d3);
        return make(1 - v, v, 0);
    }
    const Vec3<Scalar> cp = p - c;
    const Scalar d5 = ab.dot(cp);
    const Scalar d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) {
        return make(0, 0, 1);
    }
    const Scalar vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) {
        const Scalar w = d2 / (d2 - d6);
        return make(1 - w, 0, w);
    }
    const Scalar va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        const Scalar w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return make(0, 1 - w, w);
    }
    const Scalar denom = Scalar(1) / (va + vb + vc);
    const Scalar v = vb * denom;
    const Scalar w = vc * denom;
    return make(1 - v - w, v, w);
}

// ---------------------------------------------------------------------------
// Curvature

/// Surface variation lambda0 / (lambda0 + lambda1 + lambda2) of the
/// covariance of a neighbourhood; 0 when the covariance vanishes.
template <typename Scalar>
Scalar surface_variation(const Points<Scalar>& neighborhood) {
    const Vec3<Scalar> mean = neighborhood.colwise().mean().transpose();
    const Points<Scalar> centered = neighborhood.rowwise() - mean.transpose();
    const Eigen::Matrix<Scalar, 3, 3> cov =
        (centered.transpose() * centered) / Scalar(neighborhood.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, 3, 3>> solver(cov,
                                                                     Eigen::EigenvaluesOnly);
    const Vec3<Scalar> ev = solver.eigenvalues().cwiseMax(Scalar(0));
    const Scalar total = ev.sum();
    if (!(total > Scalar(0))) {
        return Scalar(0);
    }
    return ev[0] / total;
}

/// Per-point surface variation over each point's k-neighbourhood (the point
/// itself included). Values lie in [0, 1/3].
Eigen::VectorXd estimate_curvature(const Points3d& points, int k = 16);

// ---------------------------------------------------------------------------
// Meshes

struct MeshReport {
    bool closed = false;
    bool manifold = false;
    bool oriented = false;
    bool valid = false;
    Eigen::Index vertices = 0;
    Eigen::Index edges = 0;
    Eigen::Index faces = 0;
    Eigen::Index euler = 0;
    double signed_volume = 0.0;
    std::vector<std::string> issues;
};

/// Checks closedness, edge/vertex manifoldness, winding consistency,
/// Euler characteristic and signed volume. `valid` requires all of them with
/// chi = 2 and positive volume.
MeshReport mesh_validate(const TriMesh& mesh);

double signed_volume(const TriMesh& mesh);
Eigen::VectorXd face_areas(const TriMesh& mesh);
double surface_area(const TriMesh& mesh);

/// Area-weighted unit vertex normals.
Points3d vertex_normals(const TriMesh& mesh);

/// Generalized winding number: ~1 inside a closed outward-oriented mesh,
/// ~0 outside.
double winding_number(const TriMesh& mesh, const Vec3d& p);

/// True if two faces that share no vertex intersect.
bool has_self_intersections(const TriMesh& mesh);

/// Distance from p to the mesh surface (brute force over faces).
double distance_to_mesh(const TriMesh& mesh, const Vec3d& p);

/// Sorted, de-duplicated 1-ring neighbours of every vertex.
std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh);

// ---------------------------------------------------------------------------
// Sampling

/// Greedy max-min selection of `count` indices. The first index is drawn from
/// a generator seeded with `seed`; ties pick the lowest index.
std::vector<Eigen::Index> farthest_point_sampling(const Points3d& points, Eigen::Index count,
                                                  std::uint64_t seed);

}  // namespace cageadv
