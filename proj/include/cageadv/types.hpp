#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace cageadv {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

/// N x 3 point matrix, one point per row.
template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;

using Vec3d = Vec3<double>;
using Points3d = Points<double>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3>;

struct PointCloud {
    Points3d points;
    std::optional<int> label;

    [[nodiscard]] Eigen::Index size() const { return points.rows(); }
};

/// Closed triangle mesh; faces index into `vertices` and are wound
/// counter-clockwise when seen from outside.
struct TriMesh {
    Points3d vertices;
    Faces faces;

    [[nodiscard]] Eigen::Index vertex_count() const { return vertices.rows(); }
    [[nodiscard]] Eigen::Index face_count() const { return faces.rows(); }
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input that cannot be processed at all (coincident points, empty clouds).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Malformed or mismatched file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Mesh that violates a geometric precondition (not closed, not star-shaped).
class GeometryError : public Error {
public:
    using Error::Error;
};

class OutsideCageError : public Error {
public:
    OutsideCageError(const std::string& what, Eigen::Index index)
        : Error(what), index_(index) {}

    [[nodiscard]] Eigen::Index index() const { return index_; }

private:
    Eigen::Index index_;
};

}  // namespace cageadv
