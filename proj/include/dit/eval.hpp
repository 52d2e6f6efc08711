#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "dit/common.hpp"
#include "dit/inference.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Exact nearest neighbor: k-d tree with bounding-box pruning
// ---------------------------------------------------------------------------

class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points) : points_(points) {
    if (points_.empty())
      throw DitError(Errc::invalid_arg, "KdTree: empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(points_.size());
    root_ = build(0, static_cast<int>(points_.size()));
  }

  // squared distance and index of the exact nearest neighbor
  std::pair<double, int> nearest(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    int best_idx = -1;
    search(root_, q, best, best_idx);
    return {best, best_idx};
  }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1, right = -1;
  };

  int build(int lo, int hi) {
    if (lo >= hi) return -1;
    // split on the widest axis
    Vec3 mn = points_[order_[lo]], mx = mn;
    for (int i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(points_[order_[i]]);
      mx = mx.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    int mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid,
                     order_.begin() + hi, [&](int a, int b) {
                       return points_[a][axis] < points_[b][axis];
                     });
    Node n;
    n.point = order_[mid];
    n.axis = axis;
    int self = static_cast<int>(nodes_.size());
    nodes_.push_back(n);
    int left = build(lo, mid);
    int right = build(mid + 1, hi);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void search(int node, const Vec3& q, double& best, int& best_idx) const {
    if (node < 0) return;
    const Node& n = nodes_[node];
    double d2 = (points_[n.point] - q).squaredNorm();
    if (d2 < best || (d2 == best && n.point < best_idx)) {
      best = d2;
      best_idx = n.point;
    }
    double diff = q[n.axis] - points_[n.point][n.axis];
    int near = diff < 0 ? n.left : n.right;
    int far = diff < 0 ? n.right : n.left;
    search(near, q, best, best_idx);
    if (diff * diff <= best) search(far, q, best, best_idx);
  }

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

inline std::pair<double, int> nearest_brute(const std::vector<Vec3>& pts,
                                            const Vec3& q) {
  double best = std::numeric_limits<double>::infinity();
  int idx = -1;
  for (size_t i = 0; i < pts.size(); ++i) {
    double d2 = (pts[i] - q).squaredNorm();
    if (d2 < best) {
      best = d2;
      idx = static_cast<int>(i);
    }
  }
  return {best, idx};
}

// ---------------------------------------------------------------------------
// Chamfer distance: symmetric sum of mean squared nearest-neighbor distances
// (reported x1e3 at the CLI layer)
// ---------------------------------------------------------------------------

inline double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty())
    throw DitError(Errc::invalid_arg, "chamfer: empty point cloud");
  KdTree tree_a(a), tree_b(b);
  double ab = 0.0, ba = 0.0;
  for (const auto& p : a) ab += tree_b.nearest(p).first;
  for (const auto& p : b) ba += tree_a.nearest(p).first;
  return ab / a.size() + ba / b.size();
}

inline double chamfer_brute(const std::vector<Vec3>& a,
                            const std::vector<Vec3>& b) {
  if (a.empty() || b.empty())
    throw DitError(Errc::invalid_arg, "chamfer: empty point cloud");
  double ab = 0.0, ba = 0.0;
  for (const auto& p : a) ab += nearest_brute(b, p).first;
  for (const auto& p : b) ba += nearest_brute(a, p).first;
  return ab / a.size() + ba / b.size();
}

// ---------------------------------------------------------------------------
// Approximate EMD: seeded subsample + exact assignment (Hungarian, O(n^3))
// ---------------------------------------------------------------------------

// Minimum-cost perfect matching on a square cost matrix; returns the
// assignment column for each row.
inline std::vector<int> solve_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw DitError(Errc::invalid_arg, "assignment: non-square cost");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

// Mean matched Euclidean distance over a seeded uniform subsample of both
// clouds, with the exact optimal assignment.
inline double emd_approx(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                         int subsample, uint64_t seed = 0) {
  if (static_cast<int>(a.size()) < subsample ||
      static_cast<int>(b.size()) < subsample)
    throw DitError(Errc::invalid_arg, "emd_approx: fewer points than subsample");
  auto pick = [&](const std::vector<Vec3>& src, uint64_t stream) {
    std::vector<int> idx(src.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, stream));
    rng.shuffle(idx);
    std::vector<Vec3> out;
    out.reserve(subsample);
    for (int i = 0; i < subsample; ++i) out.push_back(src[idx[i]]);
    return out;
  };
  auto sa = pick(a, 1), sb = pick(b, 2);
  Mat cost(subsample, subsample);
  for (int i = 0; i < subsample; ++i)
    for (int j = 0; j < subsample; ++j) cost(i, j) = (sa[i] - sb[j]).norm();
  auto assignment = solve_assignment(cost);
  double total = 0.0;
  for (int i = 0; i < subsample; ++i) total += cost(i, assignment[i]);
  return total / subsample;
}

// ---------------------------------------------------------------------------
// Keypoints: transfer via correspondence, PCK, correspondence error
// ---------------------------------------------------------------------------

struct Keypoint {
  int label = 0;
  Vec3 point;
};

using KeypointSet = std::vector<Keypoint>;

inline KeypointSet keypoint_transfer(const DitModel& model,
                                     const KeypointSet& annotated,
                                     const Vec& source_code,
                                     const Vec& target_code,
                                     const std::vector<Vec3>& target_pool) {
  auto warped = warp_pool(model, target_code, target_pool);
  KeypointSet out;
  out.reserve(annotated.size());
  for (const auto& kp : annotated) {
    auto res = correspond(model, kp.point, source_code, target_code,
                          target_pool, &warped);
    out.push_back({kp.label, res.target_point});
  }
  return out;
}

// Fraction of labels within `threshold` of ground truth; label sets must match.
inline double pck(const KeypointSet& predicted, const KeypointSet& ground_truth,
                  double threshold) {
  if (predicted.size() != ground_truth.size())
    throw DitError(Errc::mismatch, "pck: label sets differ in size");
  auto find = [&](int label) -> const Vec3& {
    for (const auto& kp : ground_truth)
      if (kp.label == label) return kp.point;
    throw DitError(Errc::mismatch,
                   "pck: label " + std::to_string(label) + " missing in ground truth");
  };
  int hits = 0;
  for (const auto& kp : predicted)
    if ((kp.point - find(kp.label)).norm() <= threshold) ++hits;
  return predicted.empty() ? 0.0 : static_cast<double>(hits) / predicted.size();
}

// Mean Euclidean distance between predicted and true corresponded points.
inline double correspondence_error(
    const std::vector<std::pair<Vec3, Vec3>>& tracked) {
  if (tracked.empty())
    throw DitError(Errc::invalid_arg, "correspondence_error: empty list");
  double total = 0.0;
  for (const auto& [pred, truth] : tracked) total += (pred - truth).norm();
  return total / tracked.size();
}

}  // namespace dit
