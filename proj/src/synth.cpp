#include "cageadv/geometry.hpp"
#include "cageadv/nn.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace cageadv {

const std::array<std::string, kShapeClassCount>& shape_class_names() {
    static const std::array<std::string, kShapeClassCount> names = {
        "sphere", "cube", "cylinder", "cone", "torus", "pyramid", "plane-cross", "capsule"};
    return names;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3d on_unit_sphere(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3d v;
    do {
        v = Vec3d(n(rng), n(rng), n(rng));
    } while (v.norm() < 1e-12);
    return v.normalized();
}

Vec3d on_triangle(Rng& rng, const Vec3d& a, const Vec3d& b, const Vec3d& c) {
    const double r1 = std::sqrt(uniform(rng));
    const double r2 = uniform(rng);
    return (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
}

/// Picks a part index with probability proportional to its area.
std::size_t pick(Rng& rng, std::initializer_list<double> areas) {
    double total = 0.0;
    for (const double a : areas) {
        total += a;
    }
    double u = uniform(rng, 0.0, total);
    std::size_t k = 0;
    for (const double a : areas) {
        if (u < a) {
            return k;
        }
        u -= a;
        ++k;
    }
    return areas.size() - 1;
}

Vec3d on_disk(Rng& rng, double radius, double z) {
    const double r = radius * std::sqrt(uniform(rng));
    const double t = uniform(rng, 0.0, 2.0 * M_PI);
    return {r * std::cos(t), r * std::sin(t), z};
}

Vec3d sample_point(ShapeClass shape, Rng& rng) {
    switch (shape) {
        case ShapeClass::Sphere:
            return on_unit_sphere(rng);
        case ShapeClass::Cube: {
            const auto face = static_cast<int>(uniform(rng, 0.0, 6.0)) % 6;
            Vec3d p(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
            p[face / 2] = face % 2 == 0 ? -1.0 : 1.0;
            return p;
        }
        case ShapeClass::Cylinder: {
            const double r = 0.5;
            const double h = 1.6;
            switch (pick(rng, {2.0 * M_PI * r * h, M_PI * r * r, M_PI * r * r})) {
                case 0: {
                    const double t = uniform(rng, 0.0, 2.0 * M_PI);
                    return {r * std::cos(t), r * std::sin(t), uniform(rng, -h / 2, h / 2)};
                }
                case 1:
                    return on_disk(rng, r, -h / 2);
                default:
                    return on_disk(rng, r, h / 2);
            }
        }
        case ShapeClass::Cone: {
            const double r = 0.7;
            const double h = 1.4;
            const double slant = std::hypot(r, h);
            if (pick(rng, {M_PI * r * slant, M_PI * r * r}) == 0) {
                const double s = std::sqrt(uniform(rng));
                const double t = uniform(rng, 0.0, 2.0 * M_PI);
                return {s * r * std::cos(t), s * r * std::sin(t), h / 2 - s * h};
            }
            return on_disk(rng, r, -h / 2);
        }
        case ShapeClass::Torus: {
            const double big = 0.7;
            const double small = 0.25;
            while (true) {
                const double u = uniform(rng, 0.0, 2.0 * M_PI);
                const double v = uniform(rng, 0.0, 2.0 * M_PI);
                if (uniform(rng) * (big + small) <= big + small * std::cos(v)) {
                    return {(big + small * std::cos(v)) * std::cos(u),
                            (big + small * std::cos(v)) * std::sin(u), small * std::sin(v)};
                }
            }
        }
        case ShapeClass::Pyramid: {
            const double s = 0.7;
            const Vec3d apex(0.0, 0.0, 0.9);
            const Vec3d b[4] = {{-s, -s, -0.5}, {s, -s, -0.5}, {s, s, -0.5}, {-s, s, -0.5}};
            const double side = 0.5 * (b[1] - b[0]).cross(apex - b[0]).norm();
            const std::size_t part = pick(rng, {side, side, side, side, 4.0 * s * s});
            if (part < 4) {
                return on_triangle(rng, b[part], b[(part + 1) % 4], apex);
            }
            return {uniform(rng, -s, s), uniform(rng, -s, s), -0.5};
        }
        case ShapeClass::PlaneCross: {
            const double a = uniform(rng, -1, 1);
            const double c = uniform(rng, -1, 1);
            return uniform(rng) < 0.5 ? Vec3d(a, 0.0, c) : Vec3d(0.0, a, c);
        }
        case ShapeClass::Capsule: {
            const double r = 0.35;
            const double half = 0.6;
            if (pick(rng, {2.0 * M_PI * r * 2.0 * half, 4.0 * M_PI * r * r}) == 0) {
                const double t = uniform(rng, 0.0, 2.0 * M_PI);
                return {r * std::cos(t), r * std::sin(t), uniform(rng, -half, half)};
            }
            Vec3d p = r * on_unit_sphere(rng);
            p.z() += p.z() >= 0.0 ? half : -half;
            return p;
        }
    }
    return Vec3d::Zero();
}

Eigen::Matrix3d random_rotation(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

}  // namespace

Points3d sample_surface(ShapeClass shape, Eigen::Index count, std::mt19937_64& rng) {
    Points3d pts(count, 3);
    for (Eigen::Index i = 0; i < count; ++i) {
        pts.row(i) = sample_point(shape, rng).transpose();
    }
    return pts;
}

SynthDataset generate_synth(std::uint64_t seed, int n_per_class, Eigen::Index points) {
    if (n_per_class < 1) {
        throw std::invalid_argument("generate_synth: n_per_class must be positive");
    }
    SynthDataset data;
    data.class_names.assign(shape_class_names().begin(), shape_class_names().end());
    data.samples.reserve(static_cast<std::size_t>(n_per_class) * kShapeClassCount);
    std::normal_distribution<double> jitter(0.0, 0.01);
    for (int i = 0; i < n_per_class; ++i) {
        for (int c = 0; c < kShapeClassCount; ++c) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(i)};
            Rng rng(seq);
            Points3d pts = sample_surface(static_cast<ShapeClass>(c), points, rng);
            pts = pts * random_rotation(rng).transpose();
            for (Eigen::Index k = 0; k < pts.size(); ++k) {
                pts.data()[k] += jitter(rng);
            }
            data.samples.push_back({normalize<double>(pts).points, c});
        }
    }
    return data;
}

}  // namespace cageadv
