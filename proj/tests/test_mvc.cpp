#include "cageadv/cage.hpp"
#include "cageadv/mvc.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace cageadv;
namespace t = cageadv::testing;

namespace {

TriMesh regular_tetrahedron() {
    TriMesh m;
    m.vertices.resize(4, 3);
    m.vertices << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
    m.faces.resize(4, 3);
    m.faces << 0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2;
    if (signed_volume(m) < 0) m.faces.col(1).swap(m.faces.col(2));
    return m;
}

PointCloud interior_points(std::mt19937_64& rng, Eigen::Index n, double radius) {
    PointCloud c{Points3d(n, 3), {}};
    for (Eigen::Index i = 0; i < n; ++i) c.points.row(i) = t::inside_ball(rng, radius).transpose();
    return c;
}

/// Random affine map with a well-conditioned linear part.
std::pair<Eigen::Matrix3d, Vec3d> random_affine(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) += u(rng);
    return {a, Vec3d(u(rng), u(rng), u(rng)) * 4.0};
}

}  // namespace

TEST_CASE("regular tetrahedron centroid gets equal weights") {
    const TriMesh tet = regular_tetrahedron();
    const Eigen::VectorXd w = compute_mvc(tet, Vec3d::Zero());
    REQUIRE(w.size() == 4);
    for (int j = 0; j < 4; ++j) CHECK(w[j] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("inside a tetrahedron the coordinates are barycentric") {
    // Mean value coordinates have linear precision, and a tetrahedron has a
    // unique affine combination reproducing each point.
    const TriMesh tet = regular_tetrahedron();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::Vector4d b(u(rng), u(rng), u(rng), u(rng));
        b /= b.sum();
        const Vec3d p = tet.vertices.transpose() * b;
        const Eigen::VectorXd w = compute_mvc(tet, p);
        CHECK((w - Eigen::VectorXd(b)).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("cage vertices and face points") {
    const TriMesh cage = icosphere(1);
    for (Eigen::Index v = 0; v < cage.vertex_count(); ++v) {
        const Eigen::VectorXd w = compute_mvc(cage, cage.vertices.row(v).transpose());
        Eigen::VectorXd e = Eigen::VectorXd::Zero(cage.vertex_count());
        e[v] = 1.0;
        CHECK((w - e).cwiseAbs().maxCoeff() <= 1e-12);
    }
    const Vec3d a = cage.vertices.row(cage.faces(3, 0)).transpose();
    const Vec3d b = cage.vertices.row(cage.faces(3, 1)).transpose();
    const Vec3d c = cage.vertices.row(cage.faces(3, 2)).transpose();
    const Vec3d p = 0.2 * a + 0.3 * b + 0.5 * c;
    const Eigen::VectorXd w = compute_mvc(cage, p);
    CHECK(w[cage.faces(3, 0)] == doctest::Approx(0.2));
    CHECK(w[cage.faces(3, 1)] == doctest::Approx(0.3));
    CHECK(w[cage.faces(3, 2)] == doctest::Approx(0.5));
    CHECK(w.sum() == doctest::Approx(1.0));
}

TEST_CASE("partition of unity and reproduction on random interior points") {
    const TriMesh cage = icosphere(1);
    std::mt19937_64 rng(8);
    const PointCloud cloud = interior_points(rng, 100, 0.9);
    const CoordinateMatrix coords = bind(cage, cloud);
    CHECK(coords.point_count() == 100);
    CHECK(coords.vertex_count() == 42);
    CHECK((coords.weights.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
    CHECK((deform(coords, cage.vertices) - cloud.points).rowwise().norm().maxCoeff() <= 1e-6);
    // A convex cage gives non-negative coordinates.
    CHECK(coords.negative_fraction() == 0.0);
}

TEST_CASE("binding commutes with vertex relabelling") {
    const TriMesh cage = icosphere(1);
    std::mt19937_64 rng(9);
    const PointCloud cloud = interior_points(rng, 30, 0.8);
    std::vector<int> perm(static_cast<std::size_t>(cage.vertex_count()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    TriMesh relabelled = cage;
    for (Eigen::Index v = 0; v < cage.vertex_count(); ++v)
        relabelled.vertices.row(perm[static_cast<std::size_t>(v)]) = cage.vertices.row(v);
    for (Eigen::Index f = 0; f < cage.face_count(); ++f)
        for (int k = 0; k < 3; ++k) relabelled.faces(f, k) = perm[static_cast<std::size_t>(cage.faces(f, k))];
    const CoordinateMatrix a = bind(cage, cloud);
    const CoordinateMatrix b = bind(relabelled, cloud);
    for (Eigen::Index v = 0; v < cage.vertex_count(); ++v) {
        CHECK((a.weights.col(v) - b.weights.col(perm[static_cast<std::size_t>(v)])).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("deformation: identity, translation and affine precision") {
    const TriMesh cage = icosphere(1);
    std::mt19937_64 rng(10);
    const PointCloud cloud = interior_points(rng, 200, 0.85);
    const CoordinateMatrix coords = bind(cage, cloud);
    CHECK((deform(coords, cage.vertices) - cloud.points).cwiseAbs().maxCoeff() <= 1e-9);

    const Eigen::RowVector3d shift(0.3, -1.2, 2.0);
    const Points3d moved = cage.vertices.rowwise() + shift;
    CHECK(((deform(coords, moved).rowwise() - shift) - cloud.points).cwiseAbs().maxCoeff() <= 1e-9);

    for (int trial = 0; trial < 20; ++trial) {
        const auto [a, b] = random_affine(rng);
        const Points3d cage_mapped = (cage.vertices * a.transpose()).rowwise() + b.transpose();
        const Points3d cloud_mapped = (cloud.points * a.transpose()).rowwise() + b.transpose();
        CHECK((deform(coords, cage_mapped) - cloud_mapped).rowwise().norm().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("coordinates are invariant under a similarity of cage and point") {
    const TriMesh cage = icosphere(1);
    std::mt19937_64 rng(11);
    const PointCloud cloud = interior_points(rng, 40, 0.9);
    const Eigen::Matrix3d r = t::random_rotation(rng);
    const Vec3d shift(1, 2, 3);
    TriMesh moved = cage;
    moved.vertices = ((2.5 * cage.vertices) * r.transpose()).rowwise() + shift.transpose();
    PointCloud cloud_moved{((2.5 * cloud.points) * r.transpose()).rowwise() + shift.transpose(), {}};
    CHECK((bind(cage, cloud).weights - bind(moved, cloud_moved).weights).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("pullback is the adjoint of deform") {
    const TriMesh cage = icosphere(1);
    std::mt19937_64 rng(12);
    const CoordinateMatrix coords = bind(cage, interior_points(rng, 64, 0.9));
    for (int trial = 0; trial < 20; ++trial) {
        const Points3d dv = Points3d::Random(cage.vertex_count(), 3);
        const Points3d gp = Points3d::Random(64, 3);
        const double lhs = (deform(coords, dv).array() * gp.array()).sum();
        const double rhs = (dv.array() * pullback_gradient(coords, gp).array()).sum();
        CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("pullback matches a finite difference through deform") {
    const TriMesh cage = icosphere(1);
    std::mt19937_64 rng(13);
    const PointCloud cloud = interior_points(rng, 50, 0.9);
    const CoordinateMatrix coords = bind(cage, cloud);
    const Points3d target = Points3d::Random(50, 3);
    // L(V) = sum of squared distances from deformed points to fixed targets.
    auto loss = [&](const Points3d& v) { return (deform(coords, v) - target).squaredNorm(); };
    const Points3d grad = pullback_gradient(coords, 2.0 * (deform(coords, cage.vertices) - target));
    for (int trial = 0; trial < 10; ++trial) {
        const Points3d d = Points3d::Random(cage.vertex_count(), 3);
        const double fd = t::directional_fd(loss, cage.vertices, d, 1e-6);
        CHECK(t::relative_error(fd, (grad.array() * d.array()).sum()) <= 1e-6);
    }
}

TEST_CASE("points outside the cage are rejected with their index") {
    const TriMesh cage = icosphere(1);
    PointCloud cloud{Points3d::Zero(5, 3), {}};
    cloud.points.row(3) << 1.5, 0.0, 0.0;
    try {
        bind(cage, cloud);
        FAIL("expected OutsideCageError");
    } catch (const OutsideCageError& e) {
        CHECK(e.index() == 3);
    }
    CHECK_THROWS_AS(compute_mvc(cage, Vec3d(0, 0, 2)), OutsideCageError);
}

TEST_CASE("coordinates survive a save and load bit for bit") {
    const auto dir = t::scratch_dir("mvc_io");
    const TriMesh cage = icosphere(1);
    std::mt19937_64 rng(14);
    const CoordinateMatrix coords = bind(cage, interior_points(rng, 33, 0.9));
    save_coordinates(dir / "c.bin", coords);
    CHECK(load_coordinates(dir / "c.bin").weights == coords.weights);
}

TEST_CASE("cages from the builder bind a synthetic cloud") {
    CageBuildConfig cfg;
    cfg.iterations = 100;
    std::mt19937_64 rng(15);
    PointCloud cloud{t::uniform_sphere(300, rng, 0.8), {}};
    cloud.points.col(2) *= 0.5;
    const CageBuild build = build_cage(cloud, cfg);
    const CoordinateMatrix coords = bind(build.optimized, cloud);
    CHECK((coords.weights.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
    CHECK((deform(coords, build.optimized.vertices) - cloud.points).rowwise().norm().maxCoeff() <= 1e-5);
}
