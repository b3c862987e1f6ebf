#pragma once

// Exact nearest-neighbor index over 3D points. Queries return the minimum
// squared Euclidean distance; per-pair distances are computed with the same
// expression a brute-force scan would use, so results match it exactly.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "coligen/core.hpp"

namespace coligen::kdtree {

struct Point3 {
  double x = 0, y = 0, z = 0;
};

inline double squared_distance(const Point3& a, const Point3& b) {
  double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

class KdTree {
 public:
  explicit KdTree(std::vector<Point3> points) : pts_(std::move(points)) {
    if (pts_.empty()) throw InputError("kdtree: empty point set");
    idx_.resize(pts_.size());
    for (std::size_t i = 0; i < pts_.size(); ++i) idx_[i] = i;
    nodes_.reserve(2 * pts_.size());
    root_ = build(0, pts_.size(), 0);
  }

  std::size_t size() const { return pts_.size(); }

  double nearest_squared(const Point3& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(root_, q, best);
    return best;
  }

 private:
  struct Node {
    int left = -1, right = -1;
    std::size_t begin = 0, end = 0;  // leaf range into idx_
    double split = 0;
    int axis = -1;  // -1 marks a leaf
  };

  static constexpr std::size_t kLeafSize = 16;

  double coord(std::size_t i, int axis) const {
    const Point3& p = pts_[idx_[i]];
    return axis == 0 ? p.x : axis == 1 ? p.y : p.z;
  }

  int build(std::size_t begin, std::size_t end, int depth) {
    Node n;
    if (end - begin <= kLeafSize) {
      n.begin = begin;
      n.end = end;
      nodes_.push_back(n);
      return static_cast<int>(nodes_.size() - 1);
    }
    int axis = depth % 3;
    std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(begin),
                     idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       const Point3& pa = pts_[a];
                       const Point3& pb = pts_[b];
                       double ca = axis == 0 ? pa.x : axis == 1 ? pa.y : pa.z;
                       double cb = axis == 0 ? pb.x : axis == 1 ? pb.y : pb.z;
                       return ca < cb;
                     });
    n.axis = axis;
    n.split = coord(mid, axis);
    int self = static_cast<int>(nodes_.size());
    nodes_.push_back(n);
    int l = build(begin, mid, depth + 1);
    int r = build(mid, end, depth + 1);
    nodes_[static_cast<std::size_t>(self)].left = l;
    nodes_[static_cast<std::size_t>(self)].right = r;
    return self;
  }

  void search(int node_id, const Point3& q, double& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(node_id)];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i)
        best = std::min(best, squared_distance(q, pts_[idx_[i]]));
      return;
    }
    double qc = n.axis == 0 ? q.x : n.axis == 1 ? q.y : q.z;
    double diff = qc - n.split;
    int near = diff < 0 ? n.left : n.right;
    int far = diff < 0 ? n.right : n.left;
    search(near, q, best);
    if (diff * diff < best) search(far, q, best);
  }

  std::vector<Point3> pts_;
  std::vector<std::size_t> idx_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace coligen::kdtree
