#pragma once

#include "cageadv/types.hpp"

#include <vector>

namespace cageadv {

struct KnnResult {
    std::vector<Eigen::Index> indices;
    std::vector<double> distances;
};

/// Exact k-nearest-neighbour search over a fixed point set, backed by a
/// kd-tree with bounding boxes per node.
///
/// Results are ordered by (distance, index): equidistant points come back
/// lowest index first, so a query returns exactly what an exhaustive scan
/// with the same tie rule would return.
class KnnIndex {
public:
    explicit KnnIndex(Points3d points, int leaf_size = 8);

    [[nodiscard]] KnnResult query(const Vec3d& p, Eigen::Index k) const;

    /// k nearest neighbours of point `i` of the indexed set, excluding `i`.
    [[nodiscard]] KnnResult query_excluding(Eigen::Index i, Eigen::Index k) const;

    [[nodiscard]] Eigen::Index size() const { return points_.rows(); }
    [[nodiscard]] const Points3d& points() const { return points_; }

private:
    struct Node {
        Eigen::Index begin = 0;
        Eigen::Index end = 0;
        int axis = -1;
        double split = 0.0;
        int left = -1;
        int right = -1;
        Vec3d lo;
        Vec3d hi;
    };

    int build(Eigen::Index begin, Eigen::Index end);

    Points3d points_;
    std::vector<Eigen::Index> order_;
    std::vector<Node> nodes_;
    int leaf_size_;
};

inline KnnResult knn_query(const KnnIndex& index, const Vec3d& p, Eigen::Index k) {
    return index.query(p, k);
}

}  // namespace cageadv
