#include "cageadv/knn.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <utility>

namespace cageadv {

namespace {

using Candidate = std::pair<double, Eigen::Index>;

double squared_distance(const Points3d& pts, Eigen::Index i, const Vec3d& p) {
    const double dx = pts(i, 0) - p.x();
    const double dy = pts(i, 1) - p.y();
    const double dz = pts(i, 2) - p.z();
    return dx * dx + dy * dy + dz * dz;
}

double box_squared_distance(const Vec3d& lo, const Vec3d& hi, const Vec3d& p) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
        double d = 0.0;
        if (p[a] < lo[a]) {
            d = lo[a] - p[a];
        } else if (p[a] > hi[a]) {
            d = p[a] - hi[a];
        }
        d2 += d * d;
    }
    return d2;
}

}  // namespace

KnnIndex::KnnIndex(Points3d points, int leaf_size)
    : points_(std::move(points)), leaf_size_(std::max(1, leaf_size)) {
    order_.resize(static_cast<std::size_t>(points_.rows()));
    for (Eigen::Index i = 0; i < points_.rows(); ++i) {
        order_[static_cast<std::size_t>(i)] = i;
    }
    if (points_.rows() > 0) {
        nodes_.reserve(static_cast<std::size_t>(2 * points_.rows() / leaf_size_ + 2));
        build(0, points_.rows());
    }
}

int KnnIndex::build(Eigen::Index begin, Eigen::Index end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = points_.row(order_[static_cast<std::size_t>(begin)]).transpose();
    node.hi = node.lo;
    for (Eigen::Index k = begin; k < end; ++k) {
        const Vec3d q = points_.row(order_[static_cast<std::size_t>(k)]).transpose();
        node.lo = node.lo.cwiseMin(q);
        node.hi = node.hi.cwiseMax(q);
    }

    if (end - begin > leaf_size_) {
        Eigen::Index axis = 0;
        (node.hi - node.lo).maxCoeff(&axis);
        const Eigen::Index mid = begin + (end - begin) / 2;
        auto first = order_.begin() + begin;
        std::nth_element(first, order_.begin() + mid, order_.begin() + end,
                         [&](Eigen::Index a, Eigen::Index b) {
                             return points_(a, axis) < points_(b, axis);
                         });
        node.axis = static_cast<int>(axis);
        node.split = points_(order_[static_cast<std::size_t>(mid)], axis);
        node.left = build(begin, mid);
        node.right = build(mid, end);
    }
    nodes_[static_cast<std::size_t>(id)] = node;
    return id;
}

KnnResult KnnIndex::query(const Vec3d& p, Eigen::Index k) const {
    KnnResult out;
    k = std::min(k, points_.rows());
    if (k <= 0 || nodes_.empty()) {
        return out;
    }

    // Max-heap on (d2, index): the top is the current worst candidate.
    std::priority_queue<Candidate> heap;
    auto visit = [&](auto&& self, int id) -> void {
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        if (static_cast<Eigen::Index>(heap.size()) == k &&
            box_squared_distance(node.lo, node.hi, p) > heap.top().first) {
            return;
        }
        if (node.axis < 0) {
            for (Eigen::Index s = node.begin; s < node.end; ++s) {
                const Eigen::Index i = order_[static_cast<std::size_t>(s)];
                const Candidate c{squared_distance(points_, i, p), i};
                if (static_cast<Eigen::Index>(heap.size()) < k) {
                    heap.push(c);
                } else if (c < heap.top()) {
                    heap.pop();
                    heap.push(c);
                }
            }
            return;
        }
        const bool left_first = p[node.axis] < node.split;
        self(self, left_first ? node.left : node.right);
        self(self, left_first ? node.right : node.left);
    };
    visit(visit, 0);

    std::vector<Candidate> sorted;
    sorted.reserve(heap.size());
    while (!heap.empty()) {
        sorted.push_back(heap.top());
        heap.pop();
    }
    std::reverse(sorted.begin(), sorted.end());
    out.indices.reserve(sorted.size());
    out.distances.reserve(sorted.size());
    for (const auto& [d2, i] : sorted) {
        out.indices.push_back(i);
        out.distances.push_back(std::sqrt(d2));
    }
    return out;
}

KnnResult KnnIndex::query_excluding(Eigen::Index i, Eigen::Index k) const {
    KnnResult r = query(points_.row(i).transpose(), k + 1);
    const auto it = std::find(r.indices.begin(), r.indices.end(), i);
    const auto drop = it != r.indices.end() ? it - r.indices.begin()
                                            : static_cast<std::ptrdiff_t>(r.indices.size()) - 1;
    if (drop >= 0 && !r.indices.empty()) {
        r.indices.erase(r.indices.begin() + drop);
        r.distances.erase(r.distances.begin() + drop);
    }
    if (static_cast<Eigen::Index>(r.indices.size()) > k) {
        r.indices.resize(static_cast<std::size_t>(k));
        r.distances.resize(static_cast<std::size_t>(k));
    }
    return r;
}

}  // namespace cageadv
