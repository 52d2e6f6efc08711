#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "dit/eval.hpp"

using namespace dit;

namespace {

std::vector<Vec3> random_cloud(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(rng.unit_ball());
  return out;
}

double assignment_cost(const Mat& cost, const std::vector<int>& assign) {
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(assign.size()); ++i)
    total += cost(i, assign[i]);
  return total;
}

// exhaustive minimum over all permutations
double brute_assignment(const Mat& cost) {
  int n = static_cast<int>(cost.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, assignment_cost(cost, perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.latent_dim = 4;
  m.hidden = 8;
  m.warp_steps = 4;
  m.template_width = 8;
  m.template_hidden_layers = 2;
  return m;
}

}  // namespace

TEST_CASE("chamfer: identities and the hand case") {
  auto a = random_cloud(50, 1);
  CHECK(chamfer(a, a) == 0.0);

  std::vector<Vec3> p = {Vec3(0, 0, 0)}, q = {Vec3(0.1, 0, 0)};
  CHECK(chamfer(p, q) == Catch::Approx(0.02).epsilon(1e-14));

  auto b = random_cloud(60, 2);
  CHECK(chamfer(a, b) == Catch::Approx(chamfer(b, a)).epsilon(1e-14));
  CHECK(chamfer(a, b) >= 0.0);

  CHECK_THROWS_AS(chamfer({}, a), DitError);
  CHECK_THROWS_AS(chamfer(a, {}), DitError);
}

TEST_CASE("chamfer: k-d tree equals brute force exactly on n = 500") {
  auto a = random_cloud(500, 3);
  auto b = random_cloud(500, 4);
  CHECK(chamfer(a, b) == chamfer_brute(a, b));
}

TEST_CASE("kd tree: nearest matches brute force with tie discipline") {
  auto pts = random_cloud(500, 5);
  // add exact duplicates to force ties
  pts[100] = pts[7];
  pts[499] = pts[250];
  KdTree tree(pts);
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    Vec3 q = rng.unit_ball();
    auto [kd_d, kd_i] = tree.nearest(q);
    auto [bf_d, bf_i] = nearest_brute(pts, q);
    CHECK(kd_d == bf_d);
    CHECK(kd_i == bf_i);
  }
  // querying a stored point returns it
  auto [d, i] = tree.nearest(pts[42]);
  CHECK(d == 0.0);
  CHECK(pts[i] == pts[42]);

  CHECK_THROWS_AS(KdTree(std::vector<Vec3>{}), DitError);
}

TEST_CASE("solve_assignment: hand cases and exhaustive oracle") {
  Mat c2(2, 2);
  c2 << 1.0, 5.0,
        5.0, 1.0;
  auto a2 = solve_assignment(c2);
  CHECK(a2 == std::vector<int>({0, 1}));

  Mat c2b(2, 2);
  c2b << 5.0, 1.0,
         1.0, 5.0;
  CHECK(solve_assignment(c2b) == std::vector<int>({1, 0}));

  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Mat c(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) c(i, j) = rng.uniform(0, 10);
    auto assign = solve_assignment(c);
    // valid permutation
    std::vector<int> sorted = assign;
    std::sort(sorted.begin(), sorted.end());
    for (int j = 0; j < 6; ++j) CHECK(sorted[j] == j);
    CHECK(assignment_cost(c, assign) ==
          Catch::Approx(brute_assignment(c)).epsilon(1e-12));
  }

  Mat bad(2, 3);
  bad.setZero();
  CHECK_THROWS_AS(solve_assignment(bad), DitError);
}

TEST_CASE("emd_approx: identical clouds, hand case, rigid invariance") {
  auto a = random_cloud(40, 8);
  CHECK(emd_approx(a, a, 40, 9) == Catch::Approx(0.0).margin(1e-14));

  std::vector<Vec3> p = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  std::vector<Vec3> q = {Vec3(0.1, 0, 0), Vec3(0.9, 0, 0)};
  CHECK(emd_approx(p, p, 2, 1) == Catch::Approx(0.0).margin(1e-14));
  CHECK(emd_approx(p, q, 2, 1) == Catch::Approx(0.1).epsilon(1e-12));

  // rigid motion applied to both clouds leaves the value unchanged
  auto b = random_cloud(40, 10);
  double base = emd_approx(a, b, 30, 11);
  Eigen::AngleAxisd rot(0.83, Vec3(1, 2, -1).normalized());
  Vec3 shift(0.4, -0.7, 0.2);
  auto move = [&](std::vector<Vec3> v) {
    for (auto& x : v) x = rot * x + shift;
    return v;
  };
  double moved = emd_approx(move(a), move(b), 30, 11);
  CHECK(moved == Catch::Approx(base).margin(1e-9));
  CHECK(base >= 0.0);

  CHECK_THROWS_AS(emd_approx(p, q, 3, 1), DitError);
}

TEST_CASE("emd_approx: full-set subsample equals the exhaustive optimum") {
  auto a = random_cloud(5, 12);
  auto b = random_cloud(5, 13);
  Mat cost(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) cost(i, j) = (a[i] - b[j]).norm();
  // subsampling 5 of 5 is a permutation of each cloud; the optimal matching
  // cost is permutation-invariant
  CHECK(emd_approx(a, b, 5, 14) ==
        Catch::Approx(brute_assignment(cost) / 5.0).epsilon(1e-12));
}

TEST_CASE("pck: hand cases, monotonicity, label handling") {
  KeypointSet gt = {{0, Vec3(0, 0, 0)},
                    {1, Vec3(1, 0, 0)},
                    {2, Vec3(0, 1, 0)},
                    {3, Vec3(0, 0, 1)}};
  CHECK(pck(gt, gt, 1e-9) == 1.0);

  KeypointSet pred = {{0, Vec3(0.005, 0, 0)},   // within 0.01
                      {1, Vec3(1.5, 0, 0)},
                      {2, Vec3(0, 1.5, 0)},
                      {3, Vec3(0, 0, 1.5)}};
  CHECK(pck(pred, gt, 0.01) == 0.25);
  CHECK(pck(pred, gt, 0.02) >= pck(pred, gt, 0.01));
  CHECK(pck(pred, gt, 10.0) == 1.0);

  // ground truth order must not matter
  KeypointSet shuffled = {gt[2], gt[0], gt[3], gt[1]};
  CHECK(pck(pred, shuffled, 0.01) == 0.25);

  KeypointSet short_set = {gt[0]};
  CHECK_THROWS_AS(pck(pred, short_set, 0.01), DitError);
  KeypointSet wrong_label = {{7, Vec3(0, 0, 0)}, gt[1], gt[2], gt[3]};
  CHECK_THROWS_AS(pck(wrong_label, gt, 0.01), DitError);
}

TEST_CASE("correspondence_error: hand cases and recomputation") {
  std::vector<std::pair<Vec3, Vec3>> perfect = {
      {Vec3(0.1, 0.2, 0.3), Vec3(0.1, 0.2, 0.3)}};
  CHECK(correspondence_error(perfect) == 0.0);

  std::vector<std::pair<Vec3, Vec3>> one = {{Vec3(0.2, 0, 0), Vec3(0, 0, 0)}};
  CHECK(correspondence_error(one) == Catch::Approx(0.2).epsilon(1e-14));

  Rng rng(15);
  std::vector<std::pair<Vec3, Vec3>> tracked;
  double expect = 0.0;
  for (int i = 0; i < 17; ++i) {
    Vec3 a = rng.unit_ball(), b = rng.unit_ball();
    tracked.emplace_back(a, b);
    expect += (a - b).norm();
  }
  expect /= tracked.size();
  CHECK(correspondence_error(tracked) == Catch::Approx(expect).epsilon(1e-13));

  CHECK_THROWS_AS(correspondence_error({}), DitError);
}

TEST_CASE("keypoint_transfer: identity warp behaves as nearest-neighbor transfer") {
  Rng rng(16);
  DitModel model(tiny_model());
  model.init(rng);
  model.warp_net.head.weight.value.setZero();
  model.warp_net.head.bias.value.setZero();
  Vec ca = Vec::Zero(4), cb = Vec::Ones(4);

  KeypointSet annotated = {{0, Vec3(0.5, 0, 0)}, {1, Vec3(0, 0.5, 0)}};
  std::vector<Vec3> pool = {Vec3(0.48, 0.01, 0), Vec3(-0.5, 0, 0),
                            Vec3(0.01, 0.52, 0), Vec3(0, -0.5, 0)};
  auto out = keypoint_transfer(model, annotated, ca, cb, pool);
  REQUIRE(out.size() == 2);
  CHECK(out[0].label == 0);
  CHECK(out[0].point == pool[0]);
  CHECK(out[1].label == 1);
  CHECK(out[1].point == pool[2]);

  // same shape with the keypoints inside the pool: identical set
  std::vector<Vec3> self_pool = pool;
  self_pool.push_back(annotated[0].point);
  self_pool.push_back(annotated[1].point);
  auto same = keypoint_transfer(model, annotated, ca, ca, self_pool);
  CHECK(same[0].point == annotated[0].point);
  CHECK(same[1].point == annotated[1].point);
}
