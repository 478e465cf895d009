#include "cageadv/geometry.hpp"

#include "cageadv/knn.hpp"

#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <utility>

namespace cageadv {

Eigen::VectorXd estimate_curvature(const Points3d& points, int k) {
    const Eigen::Index n = points.rows();
    Eigen::VectorXd curvature = Eigen::VectorXd::Zero(n);
    if (n == 0) {
        return curvature;
    }
    const KnnIndex index(points);
    Points3d hood(std::min<Eigen::Index>(k, n), 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const KnnResult nn = index.query(points.row(i).transpose(), k);
        hood.resize(static_cast<Eigen::Index>(nn.indices.size()), 3);
        for (std::size_t j = 0; j < nn.indices.size(); ++j) {
            hood.row(static_cast<Eigen::Index>(j)) = points.row(nn.indices[j]);
        }
        curvature[i] = surface_variation<double>(hood);
    }
    return curvature;
}

namespace {

Vec3d corner(const TriMesh& mesh, Eigen::Index f, int c) {
    return mesh.vertices.row(mesh.faces(f, c)).transpose();
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            x = parent[static_cast<std::size_t>(x)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        }
        return x;
    }
    void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

bool segment_hits_triangle(const Vec3d& q0, const Vec3d& q1, const Vec3d& a, const Vec3d& b,
                           const Vec3d& c) {
    const Vec3d dir = q1 - q0;
    const Vec3d e1 = b - a;
    const Vec3d e2 = c - a;
    const Vec3d h = dir.cross(e2);
    const double det = e1.dot(h);
    if (std::abs(det) < 1e-15) {
        return false;
    }
    const double inv = 1.0 / det;
    const Vec3d s = q0 - a;
    const double u = inv * s.dot(h);
    if (u < 0.0 || u > 1.0) {
        return false;
    }
    const Vec3d q = s.cross(e1);
    const double v = inv * dir.dot(q);
    if (v < 0.0 || u + v > 1.0) {
        return false;
    }
    const double t = inv * e2.dot(q);
    return t >= 0.0 && t <= 1.0;
}

}  // namespace

MeshReport mesh_validate(const TriMesh& mesh) {
    MeshReport report;
    report.vertices = mesh.vertex_count();
    report.faces = mesh.face_count();
    const auto nv = static_cast<int>(mesh.vertex_count());

    if (mesh.face_count() == 0) {
        report.issues.emplace_back("mesh has no faces");
        return report;
    }
    if (mesh.faces.minCoeff() < 0 || mesh.faces.maxCoeff() >= nv) {
        report.issues.emplace_back("face index out of range");
        return report;
    }

    bool degenerate = false;
    std::map<std::pair<int, int>, int> undirected;
    std::map<std::pair<int, int>, int> directed;
    std::vector<std::vector<Eigen::Index>> incident(static_cast<std::size_t>(nv));
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        const int a = mesh.faces(f, 0);
        const int b = mesh.faces(f, 1);
        const int c = mesh.faces(f, 2);
        if (a == b || b == c || c == a) {
            degenerate = true;
            continue;
        }
        for (int e = 0; e < 3; ++e) {
            const int u = mesh.faces(f, e);
            const int v = mesh.faces(f, (e + 1) % 3);
            ++undirected[{std::min(u, v), std::max(u, v)}];
            ++directed[{u, v}];
            incident[static_cast<std::size_t>(u)].push_back(f);
        }
    }
    if (degenerate) {
        report.issues.emplace_back("face with repeated vertex");
    }

    report.edges = static_cast<Eigen::Index>(undirected.size());
    report.euler = report.vertices - report.edges + report.faces;

    bool closed = true;
    bool edge_manifold = true;
    for (const auto& [edge, count] : undirected) {
        closed = closed && count == 2;
        edge_manifold = edge_manifold && count <= 2;
    }
    if (!closed) {
        report.issues.emplace_back("boundary or non-manifold edges present");
    }
    if (!edge_manifold) {
        report.issues.emplace_back("edge shared by more than two faces");
    }

    bool oriented = true;
    for (const auto& [edge, count] : directed) {
        if (count > 1) {
            oriented = false;
        }
    }
    if (!oriented) {
        report.issues.emplace_back("inconsistent face winding");
    }

    bool fans = true;
    for (int v = 0; v < nv; ++v) {
        const auto& faces = incident[static_cast<std::size_t>(v)];
        if (faces.empty()) {
            report.issues.emplace_back("isolated vertex " + std::to_string(v));
            fans = false;
            continue;
        }
        UnionFind uf(faces.size());
        std::map<int, int> seen;  // opposite vertex -> local face slot
        for (std::size_t s = 0; s < faces.size(); ++s) {
            for (int c = 0; c < 3; ++c) {
                const int w = mesh.faces(faces[s], c);
                if (w == v) {
                    continue;
                }
                auto [it, inserted] = seen.emplace(w, static_cast<int>(s));
                if (!inserted) {
                    uf.unite(it->second, static_cast<int>(s));
                }
            }
        }
        const int root = uf.find(0);
        for (std::size_t s = 1; s < faces.size(); ++s) {
            if (uf.find(static_cast<int>(s)) != root) {
                report.issues.emplace_back("non-manifold vertex " + std::to_string(v));
                fans = false;
                break;
            }
        }
    }

    report.closed = closed;
    report.manifold = edge_manifold && fans && !degenerate;
    report.oriented = oriented;
    report.signed_volume = signed_volume(mesh);
    if (report.euler != 2) {
        report.issues.emplace_back("Euler characteristic " + std::to_string(report.euler) +
                                   " != 2");
    }
    if (!(report.signed_volume > 0.0)) {
        report.issues.emplace_back("non-positive signed volume");
    }
    report.valid = report.closed && report.manifold && report.oriented && report.euler == 2 &&
                   report.signed_volume > 0.0;
    return report;
}

double signed_volume(const TriMesh& mesh) {
    double volume = 0.0;
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        volume += corner(mesh, f, 0).dot(corner(mesh, f, 1).cross(corner(mesh, f, 2)));
    }
    return volume / 6.0;
}

Eigen::VectorXd face_areas(const TriMesh& mesh) {
    Eigen::VectorXd areas(mesh.face_count());
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        const Vec3d a = corner(mesh, f, 0);
        areas[f] = 0.5 * (corner(mesh, f, 1) - a).cross(corner(mesh, f, 2) - a).norm();
    }
    return areas;
}

double surface_area(const TriMesh& mesh) { return face_areas(mesh).sum(); }

Points3d vertex_normals(const TriMesh& mesh) {
    Points3d normals = Points3d::Zero(mesh.vertex_count(), 3);
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        const Vec3d a = corner(mesh, f, 0);
        const Vec3d n = (corner(mesh, f, 1) - a).cross(corner(mesh, f, 2) - a);
        for (int c = 0; c < 3; ++c) {
            normals.row(mesh.faces(f, c)) += n.transpose();
        }
    }
    for (Eigen::Index v = 0; v < normals.rows(); ++v) {
        const double len = normals.row(v).norm();
        if (len > 0.0) {
            normals.row(v) /= len;
        }
    }
    return normals;
}

double winding_number(const TriMesh& mesh, const Vec3d& p) {
    double total = 0.0;
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        const Vec3d a = corner(mesh, f, 0) - p;
        const Vec3d b = corner(mesh, f, 1) - p;
        const Vec3d c = corner(mesh, f, 2) - p;
        const double la = a.norm();
        const double lb = b.norm();
        const double lc = c.norm();
        const double det = a.dot(b.cross(c));
        const double den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
        total += 2.0 * std::atan2(det, den);
    }
    return total / (4.0 * M_PI);
}

bool has_self_intersections(const TriMesh& mesh) {
    const Eigen::Index n = mesh.face_count();
    std::vector<Vec3d> lo(static_cast<std::size_t>(n));
    std::vector<Vec3d> hi(static_cast<std::size_t>(n));
    for (Eigen::Index f = 0; f < n; ++f) {
        lo[static_cast<std::size_t>(f)] = corner(mesh, f, 0).cwiseMin(corner(mesh, f, 1)).cwiseMin(corner(mesh, f, 2));
        hi[static_cast<std::size_t>(f)] = corner(mesh, f, 0).cwiseMax(corner(mesh, f, 1)).cwiseMax(corner(mesh, f, 2));
    }
    for (Eigen::Index f = 0; f < n; ++f) {
        for (Eigen::Index g = f + 1; g < n; ++g) {
            bool shared = false;
            for (int i = 0; i < 3 && !shared; ++i) {
                for (int j = 0; j < 3; ++j) {
                    shared = shared || mesh.faces(f, i) == mesh.faces(g, j);
                }
            }
            if (shared) {
                continue;
            }
            const auto fs = static_cast<std::size_t>(f);
            const auto gs = static_cast<std::size_t>(g);
            if ((hi[fs].array() < lo[gs].array()).any() || (hi[gs].array() < lo[fs].array()).any()) {
                continue;
            }
            for (int e = 0; e < 3; ++e) {
                if (segment_hits_triangle(corner(mesh, f, e), corner(mesh, f, (e + 1) % 3),
                                          corner(mesh, g, 0), corner(mesh, g, 1),
                                          corner(mesh, g, 2)) ||
                    segment_hits_triangle(corner(mesh, g, e), corner(mesh, g, (e + 1) % 3),
                                          corner(mesh, f, 0), corner(mesh, f, 1),
                                          corner(mesh, f, 2))) {
                    return true;
                }
            }
        }
    }
    return false;
}

double distance_to_mesh(const TriMesh& mesh, const Vec3d& p) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        best = std::min(best, point_triangle_distance<double>(p, corner(mesh, f, 0),
                                                              corner(mesh, f, 1),
                                                              corner(mesh, f, 2))
                                  .squared_distance);
    }
    return std::sqrt(best);
}

std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh) {
    std::vector<std::vector<int>> rings(static_cast<std::size_t>(mesh.vertex_count()));
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        for (int c = 0; c < 3; ++c) {
            auto& ring = rings[static_cast<std::size_t>(mesh.faces(f, c))];
            ring.push_back(mesh.faces(f, (c + 1) % 3));
            ring.push_back(mesh.faces(f, (c + 2) % 3));
        }
    }
    for (auto& ring : rings) {
        std::sort(ring.begin(), ring.end());
        ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
    }
    return rings;
}

std::vector<Eigen::Index> farthest_point_sampling(const Points3d& points, Eigen::Index count,
                                                  std::uint64_t seed) {
    const Eigen::Index n = points.rows();
    count = std::min(count, n);
    std::vector<Eigen::Index> picked;
    if (count <= 0) {
        return picked;
    }
    picked.reserve(static_cast<std::size_t>(count));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    Eigen::Index current = first(rng);
    Eigen::VectorXd min_d2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    for (Eigen::Index s = 0; s < count; ++s) {
        picked.push_back(current);
        min_d2[current] = -1.0;
        const Eigen::RowVector3d c = points.row(current);
        Eigen::Index next = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d2 = (points.row(i) - c).squaredNorm();
            min_d2[i] = std::min(min_d2[i], d2);
            if (min_d2[i] > best) {
                best = min_d2[i];
                next = i;
            }
        }
        current = next;
    }
    return picked;
}

}  // namespace cageadv
