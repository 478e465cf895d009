#pragma once

#include "cageadv/geometry.hpp"
#include "cageadv/types.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace cageadv {

struct CageBuildConfig {
    int icosphere_level = 1;
    double margin = 1.05;
    double density_weight = 0.25;       // lambda_d
    double subdivision_fraction = 0.2;  // share of tetras split, highest scores first
    double area_weight = 10.0;          // lambda_a
    double laplacian_weight = 100.0;    // lambda_l
    int iterations = 2000;
    double step_size = 5e-3;
    int curvature_k = 16;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;
};

/// Unit icosphere: a regular icosahedron refined `level` times 1->4 with the
/// new vertices projected onto the sphere.
TriMesh icosphere(int level);

/// Icosphere around the cloud centroid, scaled so that every face plane
/// keeps a distance of at least margin * (max point norm) from the center.
TriMesh init_sphere_cage(const PointCloud& cloud, const CageBuildConfig& config);

/// One tetra (center, face) per cage face and the tetra owning each point.
struct TetraPartition {
    Vec3d center = Vec3d::Zero();
    Faces tetras;
    std::vector<int> assignment;

    [[nodiscard]] std::vector<Eigen::Index> counts() const;
};

/// Assigns each point to the tetra whose cone strictly contains it; points on
/// cone boundaries go to the tetra with the nearest centroid. Throws
/// GeometryError if the cage is not star-shaped around `center`.
TetraPartition partition_points(const TriMesh& cage, const PointCloud& cloud,
                                const Vec3d& center = Vec3d::Zero());

struct SubdivisionScore {
    Eigen::VectorXd curvature;    // min-max normalized mean curvature
    Eigen::VectorXd density;      // min-max normalized share of points
    Eigen::VectorXd raw_density;  // count / N, sums to 1
    Eigen::VectorXd combined;     // curvature + density_weight * density
    std::vector<Eigen::Index> counts;
};

SubdivisionScore score_tetras(const TetraPartition& partition, const Eigen::VectorXd& curvature,
                              double density_weight);

/// Faces whose combined score is among the top `fraction` (and positive) are
/// split 1->4; neighbours are closed with green splits. Constant scores
/// leave the mesh untouched.
TriMesh subdivide(const TriMesh& cage, const SubdivisionScore& score, double fraction);

/// Red-green refinement of an explicit face selection.
TriMesh subdivide_faces(const TriMesh& cage, const std::vector<bool>& flagged);

// ---------------------------------------------------------------------------
// Vertex optimization

struct CageLoss {
    double dist = 0.0;      // sum of squared point-to-cage distances
    double var_area = 0.0;  // population variance of face areas
    double lap = 0.0;       // uniform Laplacian energy
    double total = 0.0;
};

/// Fitting objective over the vertex positions of a fixed cage topology.
/// Keeps the nearest face of every point from the previous evaluation as a
/// warm start, so repeated evaluations along an optimization path are cheap.
class CageObjective {
public:
    CageObjective(const TriMesh& cage, Points3d cloud, const CageBuildConfig& config);

    CageLoss evaluate(const Points3d& vertices, Points3d* gradient = nullptr);

    double distance_term(const Points3d& vertices, Points3d* gradient = nullptr);
    double area_variance_term(const Points3d& vertices, Points3d* gradient = nullptr) const;
    double laplacian_term(const Points3d& vertices, Points3d* gradient = nullptr) const;

private:
    Faces faces_;
    Points3d cloud_;
    std::vector<std::vector<int>> rings_;
    std::vector<Eigen::Index> nearest_;
    double area_weight_;
    double laplacian_weight_;
};

struct OptimizeResult {
    TriMesh cage;
    std::vector<CageLoss> log;  // loss at the start of each iteration
    CageLoss initial;
    CageLoss best;
    Eigen::Index best_iteration = 0;
};

/// Adam descent on the fitting objective for config.iterations steps. The
/// returned cage is the lowest-loss iterate with positive signed volume.
OptimizeResult optimize_vertices(const TriMesh& cage, const PointCloud& cloud,
                                 const CageBuildConfig& config,
                                 const std::function<void(Eigen::Index, const CageLoss&)>& on_iteration = {});

/// Makes `candidate` hold every point inside with `clearance` while staying
/// valid and free of self-intersections. Tries local outward pushes of the
/// violated faces first, then uniform normal offsets, then blends towards
/// `fallback` (same topology), then `fallback` itself.
TriMesh enclose(const TriMesh& candidate, const TriMesh& fallback, const Points3d& cloud,
                double clearance = 1e-3);

struct CageVariant {
    bool subdivide = true;
    bool optimize = true;
};

struct CageBuild {
    TriMesh initial;
    TriMesh subdivided;
    TriMesh optimized;  // final cage; equals `subdivided` when optimization is off
    std::vector<CageLoss> log;
    SubdivisionScore score;
};

CageBuild build_cage(const PointCloud& cloud, const CageBuildConfig& config,
                     CageVariant variant = {});

}  // namespace cageadv
