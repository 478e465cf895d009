#include "cageadv/cage.hpp"

#include "cageadv/adam.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <utility>

namespace cageadv {

void CageBuildConfig::validate() const {
    if (icosphere_level < 0 || icosphere_level > 6) {
        throw std::invalid_argument("icosphere level must be in [0, 6]");
    }
    if (!(margin > 1.0)) {
        throw std::invalid_argument("enclosure margin must exceed 1");
    }
    if (!(subdivision_fraction > 0.0 && subdivision_fraction <= 1.0)) {
        throw std::invalid_argument("subdivision fraction must lie in (0, 1]");
    }
    if (density_weight < 0.0 || area_weight < 0.0 || laplacian_weight < 0.0) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
    if (iterations < 0 || !(step_size >= 0.0) || curvature_k < 3) {
        throw std::invalid_argument("bad optimizer settings");
    }
}

// ---------------------------------------------------------------------------

TriMesh icosphere(int level) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    TriMesh mesh;
    mesh.vertices.resize(12, 3);
    mesh.vertices << -1, t, 0, 1, t, 0, -1, -t, 0, 1, -t, 0,  //
        0, -1, t, 0, 1, t, 0, -1, -t, 0, 1, -t,               //
        t, 0, -1, t, 0, 1, -t, 0, -1, -t, 0, 1;
    mesh.vertices.rowwise().normalize();
    mesh.faces.resize(20, 3);
    mesh.faces << 0, 11, 5, 0, 5, 1, 0, 1, 7, 0, 7, 10, 0, 10, 11,  //
        1, 5, 9, 5, 11, 4, 11, 10, 2, 10, 7, 6, 7, 1, 8,            //
        3, 9, 4, 3, 4, 2, 3, 2, 6, 3, 6, 8, 3, 8, 9,                //
        4, 9, 5, 2, 4, 11, 6, 2, 10, 8, 6, 7, 9, 8, 1;
    for (int l = 0; l < level; ++l) {
        mesh = subdivide_faces(mesh, std::vector<bool>(static_cast<std::size_t>(mesh.face_count()), true));
        mesh.vertices.rowwise().normalize();
    }
    return mesh;
}

TriMesh init_sphere_cage(const PointCloud& cloud, const CageBuildConfig& config) {
    config.validate();
    TriMesh cage = icosphere(config.icosphere_level);
    const Vec3d center = cloud.points.colwise().mean().transpose();
    const double reach = (cloud.points.rowwise() - center.transpose()).rowwise().norm().maxCoeff();

    double inradius = std::numeric_limits<double>::infinity();
    for (Eigen::Index f = 0; f < cage.face_count(); ++f) {
        const Vec3d a = cage.vertices.row(cage.faces(f, 0)).transpose();
        const Vec3d b = cage.vertices.row(cage.faces(f, 1)).transpose();
        const Vec3d c = cage.vertices.row(cage.faces(f, 2)).transpose();
        inradius = std::min(inradius, a.dot((b - a).cross(c - a).normalized()));
    }
    cage.vertices *= config.margin * reach / inradius;
    cage.vertices.rowwise() += center.transpose();
    return cage;
}

// ---------------------------------------------------------------------------

std::vector<Eigen::Index> TetraPartition::counts() const {
    std::vector<Eigen::Index> c(static_cast<std::size_t>(tetras.rows()), 0);
    for (const int t : assignment) {
        ++c[static_cast<std::size_t>(t)];
    }
    return c;
}

TetraPartition partition_points(const TriMesh& cage, const PointCloud& cloud, const Vec3d& center) {
    const Eigen::Index n = cage.face_count();
    std::vector<Eigen::Matrix3d> inverse(static_cast<std::size_t>(n));
    Points3d centroids(n, 3);
    for (Eigen::Index f = 0; f < n; ++f) {
        Eigen::Matrix3d m;
        for (int c = 0; c < 3; ++c) {
            m.col(c) = cage.vertices.row(cage.faces(f, c)).transpose() - center;
        }
        if (!(m.determinant() > 0.0)) {
            throw GeometryError("cage is not star-shaped around the partition center (face " +
                                std::to_string(f) + ")");
        }
        inverse[static_cast<std::size_t>(f)] = m.inverse();
        centroids.row(f) = (center + m.col(0) + m.col(1) + m.col(2) + 3.0 * center).transpose() / 4.0;
    }

    TetraPartition partition;
    partition.center = center;
    partition.tetras = cage.faces;
    partition.assignment.assign(static_cast<std::size_t>(cloud.size()), -1);
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        const Vec3d p = cloud.points.row(i).transpose();
        const Vec3d rel = p - center;
        int owner = -1;
        for (Eigen::Index f = 0; f < n && owner < 0; ++f) {
            const Vec3d coeff = inverse[static_cast<std::size_t>(f)] * rel;
            if ((coeff.array() > 0.0).all()) {
                owner = static_cast<int>(f);
            }
        }
        if (owner < 0) {
            Eigen::Index nearest = 0;
            (centroids.rowwise() - p.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
            owner = static_cast<int>(nearest);
        }
        partition.assignment[static_cast<std::size_t>(i)] = owner;
    }
    return partition;
}

namespace {

Eigen::VectorXd min_max(const Eigen::VectorXd& v) {
    if (v.size() == 0) {
        return v;
    }
    const double lo = v.minCoeff();
    const double hi = v.maxCoeff();
    if (!(hi > lo)) {
        return Eigen::VectorXd::Zero(v.size());
    }
    return (v.array() - lo) / (hi - lo);
}

}  // namespace

SubdivisionScore score_tetras(const TetraPartition& partition, const Eigen::VectorXd& curvature,
                              double density_weight) {
    const Eigen::Index n = partition.tetras.rows();
    const auto total = static_cast<double>(partition.assignment.size());
    SubdivisionScore score;
    score.counts = partition.counts();
    Eigen::VectorXd curv_sum = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < partition.assignment.size(); ++i) {
        curv_sum[partition.assignment[i]] += curvature[static_cast<Eigen::Index>(i)];
    }
    Eigen::VectorXd mean_curv = Eigen::VectorXd::Zero(n);
    score.raw_density = Eigen::VectorXd::Zero(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const auto c = static_cast<double>(score.counts[static_cast<std::size_t>(t)]);
        if (c > 0) {
            mean_curv[t] = curv_sum[t] / c;
            score.raw_density[t] = c / total;
        }
    }
    score.curvature = min_max(mean_curv);
    score.density = min_max(score.raw_density);
    score.combined = score.curvature + density_weight * score.density;
    return score;
}

TriMesh subdivide(const TriMesh& cage, const SubdivisionScore& score, double fraction) {
    const Eigen::Index n = cage.face_count();
    std::vector<bool> flagged(static_cast<std::size_t>(n), false);
    if (score.combined.size() != n || n == 0 || !(score.combined.maxCoeff() > score.combined.minCoeff())) {
        return cage;
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return score.combined[a] > score.combined[b];
    });
    const auto quota = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    for (std::size_t k = 0; k < quota && k < order.size(); ++k) {
        if (score.combined[order[k]] > 0.0) {
            flagged[static_cast<std::size_t>(order[k])] = true;
        }
    }
    return subdivide_faces(cage, flagged);
}

TriMesh subdivide_faces(const TriMesh& cage, const std::vector<bool>& flagged) {
    std::vector<double> extra;  // new midpoint coordinates, flattened
    std::map<std::pair<int, int>, int> midpoint;
    const auto nv = static_cast<int>(cage.vertex_count());
    auto key = [](int u, int v) { return std::make_pair(std::min(u, v), std::max(u, v)); };

    for (Eigen::Index f = 0; f < cage.face_count(); ++f) {
        if (!flagged[static_cast<std::size_t>(f)]) {
            continue;
        }
        for (int e = 0; e < 3; ++e) {
            const int u = cage.faces(f, e);
            const int v = cage.faces(f, (e + 1) % 3);
            if (midpoint.emplace(key(u, v), nv + static_cast<int>(extra.size() / 3)).second) {
                const Eigen::RowVector3d mid = 0.5 * (cage.vertices.row(u) + cage.vertices.row(v));
                extra.insert(extra.end(), {mid[0], mid[1], mid[2]});
            }
        }
    }

    auto mid_of = [&](int u, int v) {
        const auto it = midpoint.find(key(u, v));
        return it == midpoint.end() ? -1 : it->second;
    };

    std::vector<std::array<int, 3>> out;
    out.reserve(static_cast<std::size_t>(cage.face_count()) * 2);
    TriMesh result;
    result.vertices.resize(nv + static_cast<Eigen::Index>(extra.size() / 3), 3);
    result.vertices.topRows(nv) = cage.vertices;
    for (std::size_t k = 0; k < extra.size() / 3; ++k) {
        result.vertices.row(nv + static_cast<Eigen::Index>(k)) << extra[3 * k], extra[3 * k + 1],
            extra[3 * k + 2];
    }

    for (Eigen::Index f = 0; f < cage.face_count(); ++f) {
        int v[3] = {cage.faces(f, 0), cage.faces(f, 1), cage.faces(f, 2)};
        int m[3] = {mid_of(v[0], v[1]), mid_of(v[1], v[2]), mid_of(v[2], v[0])};
        const int split = (m[0] >= 0) + (m[1] >= 0) + (m[2] >= 0);
        if (split == 0) {
            out.push_back({v[0], v[1], v[2]});
        } else if (split == 3) {
            out.push_back({v[0], m[0], m[2]});
            out.push_back({v[1], m[1], m[0]});
            out.push_back({v[2], m[2], m[1]});
            out.push_back({m[0], m[1], m[2]});
        } else if (split == 1) {
            // Rotate so the split edge is (v0, v1).
            int r = m[0] >= 0 ? 0 : m[1] >= 0 ? 1 : 2;
            const int a = v[r];
            const int b = v[(r + 1) % 3];
            const int c = v[(r + 2) % 3];
            const int mab = m[r];
            out.push_back({a, mab, c});
            out.push_back({mab, b, c});
        } else {
            // Rotate so the unsplit edge is (v2, v0).
            int r = m[2] < 0 ? 0 : m[0] < 0 ? 1 : 2;
            const int a = v[r];
            const int b = v[(r + 1) % 3];
            const int c = v[(r + 2) % 3];
            const int mab = m[r];
            const int mbc = m[(r + 1) % 3];
            out.push_back({mab, b, mbc});
            const double d_a = (result.vertices.row(a) - result.vertices.row(mbc)).squaredNorm();
            const double d_c = (result.vertices.row(c) - result.vertices.row(mab)).squaredNorm();
            if (d_a <= d_c) {
                out.push_back({a, mab, mbc});
                out.push_back({a, mbc, c});
            } else {
                out.push_back({a, mab, c});
                out.push_back({mab, mbc, c});
            }
        }
    }

    result.faces.resize(static_cast<Eigen::Index>(out.size()), 3);
    for (std::size_t k = 0; k < out.size(); ++k) {
        result.faces.row(static_cast<Eigen::Index>(k)) << out[k][0], out[k][1], out[k][2];
    }
    return result;
}

// ---------------------------------------------------------------------------

CageObjective::CageObjective(const TriMesh& cage, Points3d cloud, const CageBuildConfig& config)
    : faces_(cage.faces),
      cloud_(std::move(cloud)),
      rings_(vertex_neighbors(cage)),
      nearest_(static_cast<std::size_t>(cloud_.rows()), 0),
      area_weight_(config.area_weight),
      laplacian_weight_(config.laplacian_weight) {}

CageLoss CageObjective::evaluate(const Points3d& vertices, Points3d* gradient) {
    Points3d g_dist;
    Points3d g_area;
    Points3d g_lap;
    CageLoss loss;
    loss.dist = distance_term(vertices, gradient ? &g_dist : nullptr);
    loss.var_area = area_variance_term(vertices, gradient ? &g_area : nullptr);
    loss.lap = laplacian_term(vertices, gradient ? &g_lap : nullptr);
    loss.total = loss.dist + area_weight_ * loss.var_area + laplacian_weight_ * loss.lap;
    if (gradient) {
        *gradient = g_dist + area_weight_ * g_area + laplacian_weight_ * g_lap;
    }
    return loss;
}

double CageObjective::distance_term(const Points3d& vertices, Points3d* gradient) {
    const Eigen::Index n = faces_.rows();
    Points3d centroid(n, 3);
    Eigen::VectorXd radius(n);
    for (Eigen::Index f = 0; f < n; ++f) {
        const Eigen::RowVector3d c =
            (vertices.row(faces_(f, 0)) + vertices.row(faces_(f, 1)) + vertices.row(faces_(f, 2))) / 3.0;
        centroid.row(f) = c;
        radius[f] = std::max({(vertices.row(faces_(f, 0)) - c).norm(),
                              (vertices.row(faces_(f, 1)) - c).norm(),
                              (vertices.row(faces_(f, 2)) - c).norm()});
    }
    auto project = [&](const Vec3d& p, Eigen::Index f) {
        return point_triangle_distance<double>(p, vertices.row(faces_(f, 0)).transpose(),
                                               vertices.row(faces_(f, 1)).transpose(),
                                               vertices.row(faces_(f, 2)).transpose());
    };

    if (gradient) {
        gradient->setZero(vertices.rows(), 3);
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < cloud_.rows(); ++i) {
        const Vec3d p = cloud_.row(i).transpose();
        Eigen::Index best_face = nearest_[static_cast<std::size_t>(i)];
        auto best = project(p, best_face);
        for (Eigen::Index f = 0; f < n; ++f) {
            if (f == nearest_[static_cast<std::size_t>(i)]) {
                continue;
            }
            const double lb = (centroid.row(f) - p.transpose()).norm() - radius[f];
            if (lb > 0.0 && lb * lb >= best.squared_distance) {
                continue;
            }
            const auto cand = project(p, f);
            if (cand.squared_distance < best.squared_distance) {
                best = cand;
                best_face = f;
            }
        }
        nearest_[static_cast<std::size_t>(i)] = best_face;
        total += best.squared_distance;
        if (gradient) {
            const Vec3d r = p - best.closest;
            for (int c = 0; c < 3; ++c) {
                gradient->row(faces_(best_face, c)) -= 2.0 * best.barycentric[c] * r.transpose();
            }
        }
    }
    return total;
}

double CageObjective::area_variance_term(const Points3d& vertices, Points3d* gradient) const {
    const Eigen::Index n = faces_.rows();
    Eigen::VectorXd area(n);
    Points3d unit_normal(n, 3);
    for (Eigen::Index f = 0; f < n; ++f) {
        const Vec3d a = vertices.row(faces_(f, 0)).transpose();
        const Vec3d cr = (vertices.row(faces_(f, 1)).transpose() - a)
                             .cross(vertices.row(faces_(f, 2)).transpose() - a);
        const double len = cr.norm();
        area[f] = 0.5 * len;
        unit_normal.row(f) = len > 0.0 ? Eigen::RowVector3d(cr.transpose() / len)
                                       : Eigen::RowVector3d::Zero();
    }
    const double mean = area.mean();
    const double var = (area.array() - mean).square().mean();
    if (gradient) {
        gradient->setZero(vertices.rows(), 3);
        for (Eigen::Index f = 0; f < n; ++f) {
            const double dvar = 2.0 * (area[f] - mean) / static_cast<double>(n);
            const Vec3d nh = unit_normal.row(f).transpose();
            for (int c = 0; c < 3; ++c) {
                const Vec3d next = vertices.row(faces_(f, (c + 1) % 3)).transpose();
                const Vec3d prev = vertices.row(faces_(f, (c + 2) % 3)).transpose();
                gradient->row(faces_(f, c)) += (dvar * 0.5 * nh.cross(prev - next)).transpose();
            }
        }
    }
    return var;
}

double CageObjective::laplacian_term(const Points3d& vertices, Points3d* gradient) const {
    if (gradient) {
        gradient->setZero(vertices.rows(), 3);
    }
    double energy = 0.0;
    for (std::size_t j = 0; j < rings_.size(); ++j) {
        const auto& ring = rings_[j];
        if (ring.empty()) {
            continue;
        }
        Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
        for (const int k : ring) {
            mean += vertices.row(k);
        }
        mean /= static_cast<double>(ring.size());
        const Eigen::RowVector3d delta = vertices.row(static_cast<Eigen::Index>(j)) - mean;
        energy += delta.squaredNorm();
        if (gradient) {
            gradient->row(static_cast<Eigen::Index>(j)) += 2.0 * delta;
            for (const int k : ring) {
                gradient->row(k) -= 2.0 * delta / static_cast<double>(ring.size());
            }
        }
    }
    return energy;
}

OptimizeResult optimize_vertices(const TriMesh& cage, const PointCloud& cloud,
                                 const CageBuildConfig& config,
                                 const std::function<void(Eigen::Index, const CageLoss&)>& on_iteration) {
    config.validate();
    CageObjective objective(cage, cloud.points, config);
    Adam adam(config.step_size);

    OptimizeResult result;
    result.log.reserve(static_cast<std::size_t>(config.iterations));
    Points3d vertices = cage.vertices;
    Points3d best_vertices = vertices;
    Points3d gradient;

    for (int it = 0; it <= config.iterations; ++it) {
        const bool last = it == config.iterations;
        const CageLoss loss = objective.evaluate(vertices, last ? nullptr : &gradient);
        if (!std::isfinite(loss.total)) {
            break;
        }
        if (it == 0) {
            result.initial = loss;
            result.best = loss;
        } else if (loss.total < result.best.total &&
                   signed_volume(TriMesh{vertices, cage.faces}) > 0.0) {
            result.best = loss;
            result.best_iteration = it;
            best_vertices = vertices;
        }
        if (last) {
            break;
        }
        result.log.push_back(loss);
        if (on_iteration) {
            on_iteration(it, loss);
        }
        adam.step(vertices, gradient);
    }

    result.cage = TriMesh{best_vertices, cage.faces};
    if (!mesh_validate(result.cage).valid) {
        result.cage = cage;
        result.best = result.initial;
        result.best_iteration = 0;
    }
    return result;
}

namespace {

bool encloses(const TriMesh& mesh, const Points3d& cloud, double clearance) {
    if (!mesh_validate(mesh).valid || has_self_intersections(mesh)) {
        return false;
    }
    for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
        const Vec3d p = cloud.row(i).transpose();
        if (distance_to_mesh(mesh, p) < clearance || winding_number(mesh, p) < 0.5) {
            return false;
        }
    }
    return true;
}

/// Moves the corners of every face a violating point projects onto outward
/// along their vertex normals, round after round, until all points sit inside
/// with `clearance`. Gives up on an invalid or self-intersecting mesh.
std::optional<TriMesh> push_out(const TriMesh& candidate, const Points3d& cloud, double clearance,
                                int rounds = 60) {
    TriMesh mesh = candidate;
    for (int round = 0; round < rounds; ++round) {
        if (!mesh_validate(mesh).valid || has_self_intersections(mesh)) {
            return std::nullopt;
        }
        const Points3d normals = vertex_normals(mesh);
        Eigen::VectorXd push = Eigen::VectorXd::Zero(mesh.vertex_count());
        bool clean = true;
        for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
            const Vec3d p = cloud.row(i).transpose();
            double best = std::numeric_limits<double>::infinity();
            Eigen::Index face = 0;
            for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
                const double d2 = point_triangle_distance<double>(p, mesh.vertices.row(mesh.faces(f, 0)).transpose(),
                                                                  mesh.vertices.row(mesh.faces(f, 1)).transpose(),
                                                                  mesh.vertices.row(mesh.faces(f, 2)).transpose())
                                      .squared_distance;
                if (d2 < best) {
                    best = d2;
                    face = f;
                }
            }
            const double d = std::sqrt(best);
            const bool inside = winding_number(mesh, p) >= 0.5;
            if (inside && d >= clearance) {
                continue;
            }
            clean = false;
            const double need = 1.25 * (inside ? clearance - d : d + clearance) + 0.25 * clearance;
            for (int a = 0; a < 3; ++a) {
                push[mesh.faces(face, a)] = std::max(push[mesh.faces(face, a)], need);
            }
        }
        if (clean) {
            return mesh;
        }
        mesh.vertices += push.asDiagonal() * normals;
    }
    return std::nullopt;
}

}  // namespace

TriMesh enclose(const TriMesh& candidate, const TriMesh& fallback, const Points3d& cloud,
                double clearance) {
    if (auto pushed = push_out(candidate, cloud, clearance)) {
        return *pushed;
    }
    const Points3d normals = vertex_normals(candidate);
    for (const double offset : {0.005, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3}) {
        TriMesh mesh{candidate.vertices + offset * normals, candidate.faces};
        if (encloses(mesh, cloud, clearance)) {
            return mesh;
        }
    }
    if (fallback.faces != candidate.faces) {
        throw GeometryError("enclose: fallback cage must share the candidate topology");
    }
    for (const double t : {0.25, 0.5, 0.75}) {
        TriMesh mesh{(1.0 - t) * candidate.vertices + t * fallback.vertices, candidate.faces};
        if (encloses(mesh, cloud, clearance)) {
            return mesh;
        }
    }
    if (!encloses(fallback, cloud, 0.0)) {
        throw GeometryError("enclose: fallback cage does not contain the cloud");
    }
    return fallback;
}

CageBuild build_cage(const PointCloud& cloud, const CageBuildConfig& config, CageVariant variant) {
    config.validate();
    CageBuild build;
    build.initial = init_sphere_cage(cloud, config);
    build.subdivided = build.initial;
    if (variant.subdivide) {
        const Vec3d center = cloud.points.colwise().mean().transpose();
        const TetraPartition partition = partition_points(build.initial, cloud, center);
        build.score = score_tetras(partition, estimate_curvature(cloud.points, config.curvature_k),
                                   config.density_weight);
        build.subdivided = subdivide(build.initial, build.score, config.subdivision_fraction);
    }
    build.optimized = build.subdivided;
    if (variant.optimize) {
        OptimizeResult opt = optimize_vertices(build.subdivided, cloud, config);
        build.log = std::move(opt.log);
        build.optimized = enclose(opt.cage, build.subdivided, cloud.points);
    }
    return build;
}

}  // namespace cageadv
