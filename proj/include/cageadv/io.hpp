#pragma once

#include "cageadv/types.hpp"

#include <filesystem>

namespace cageadv::io {

/// One "x y z" triple per line; blank lines and '#' comments are skipped.
Points3d read_xyz(const std::filesystem::path& path);
void write_xyz(const std::filesystem::path& path, const Points3d& points);

/// Binary little-endian PLY with float32 x/y/z. The reader also accepts
/// double-precision and extra vertex properties.
Points3d read_ply(const std::filesystem::path& path);
void write_ply(const std::filesystem::path& path, const Points3d& points);

/// Dispatches on the extension (.xyz/.txt or .ply).
Points3d read_points(const std::filesystem::path& path);

/// ASCII OBJ, `v` and `f` records only, 1-based indices.
TriMesh read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const TriMesh& mesh);

/// Row-major float64 matrix dump: rows and cols as uint64 little-endian,
/// then rows*cols values.
void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& matrix);
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);

}  // namespace cageadv::io
