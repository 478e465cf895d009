#include "cageadv/mvc.hpp"

#include "cageadv/io.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace cageadv {

namespace {

constexpr double kVertexEps = 1e-10;
constexpr double kFaceEps = 1e-8;
constexpr double kDegenerateEps = 1e-10;

double safe_asin(double x) { return std::asin(std::clamp(x, -1.0, 1.0)); }

}  // namespace

double CoordinateMatrix::negative_fraction() const {
    if (weights.size() == 0) {
        return 0.0;
    }
    return static_cast<double>((weights.array() < 0.0).count()) /
           static_cast<double>(weights.size());
}

Eigen::VectorXd compute_mvc(const TriMesh& cage, const Vec3d& p) {
    const Eigen::Index m = cage.vertex_count();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m);

    Eigen::VectorXd dist(m);
    Points3d unit(m, 3);
    for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::RowVector3d d = cage.vertices.row(j) - p.transpose();
        dist[j] = d.norm();
        if (dist[j] < kVertexEps) {
            w[j] = 1.0;
            return w;
        }
        unit.row(j) = d / dist[j];
    }

    double solid_angle = 0.0;
    for (Eigen::Index f = 0; f < cage.face_count(); ++f) {
        const int idx[3] = {cage.faces(f, 0), cage.faces(f, 1), cage.faces(f, 2)};
        Vec3d u[3];
        for (int c = 0; c < 3; ++c) {
            u[c] = unit.row(idx[c]).transpose();
        }

        double theta[3];
        for (int c = 0; c < 3; ++c) {
            theta[c] = 2.0 * safe_asin((u[(c + 1) % 3] - u[(c + 2) % 3]).norm() / 2.0);
        }
        const double h = (theta[0] + theta[1] + theta[2]) / 2.0;

        const double det = u[0].dot(u[1].cross(u[2]));
        const double den = 1.0 + u[0].dot(u[1]) + u[1].dot(u[2]) + u[2].dot(u[0]);
        solid_angle += 2.0 * std::atan2(det, den);

        if (M_PI - h < kFaceEps) {
            // p lies on this face: plain barycentric interpolation.
            Eigen::VectorXd bary = Eigen::VectorXd::Zero(m);
            double total = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double b = std::sin(theta[c]) * dist[idx[(c + 1) % 3]] * dist[idx[(c + 2) % 3]];
                bary[idx[c]] += b;
                total += b;
            }
            return bary / total;
        }

        const double sign = det < 0.0 ? -1.0 : 1.0;
        double cs[3];
        double sn[3];
        bool skip = false;
        for (int c = 0; c < 3; ++c) {
            cs[c] = (2.0 * std::sin(h) * std::sin(h - theta[c])) /
                        (std::sin(theta[(c + 1) % 3]) * std::sin(theta[(c + 2) % 3])) -
                    1.0;
            sn[c] = sign * std::sqrt(std::max(0.0, 1.0 - cs[c] * cs[c]));
            skip = skip || std::abs(sn[c]) <= kDegenerateEps;
        }
        if (skip) {
            continue;
        }
        for (int c = 0; c < 3; ++c) {
            const int b = (c + 1) % 3;
            const int e = (c + 2) % 3;
            w[idx[c]] += (theta[c] - cs[b] * theta[e] - cs[e] * theta[b]) /
                         (dist[idx[c]] * std::sin(theta[b]) * sn[e]);
        }
    }

    if (solid_angle / (4.0 * M_PI) < 0.5) {
        throw OutsideCageError("point lies outside the cage", -1);
    }
    return w / w.sum();
}

CoordinateMatrix bind(const TriMesh& cage, const PointCloud& cloud) {
    CoordinateMatrix coords;
    coords.weights.resize(cloud.size(), cage.vertex_count());
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        try {
            coords.weights.row(i) = compute_mvc(cage, cloud.points.row(i).transpose()).transpose();
        } catch (const OutsideCageError&) {
            throw OutsideCageError("point " + std::to_string(i) + " lies outside the cage", i);
        }
    }
    return coords;
}

void save_coordinates(const std::filesystem::path& path, const CoordinateMatrix& coords) {
    io::write_matrix(path, coords.weights);
}

CoordinateMatrix load_coordinates(const std::filesystem::path& path) {
    return CoordinateMatrix{io::read_matrix(path)};
}

}  // namespace cageadv
