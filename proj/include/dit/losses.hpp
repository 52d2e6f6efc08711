#pragma once

#include <map>
#include <optional>
#include <type_traits>
#include <vector>

#include "dit/geometry.hpp"
#include "dit/model.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Curriculum per-sample loss
// ---------------------------------------------------------------------------

struct CurriculumParams {
  double eps = 0.0;     // surface error tolerance
  double lambda = 0.0;  // hard-example weight, in [0, 1)
  double delta = 0.1;   // TSDF clamp bound

  void validate() const {
    if (eps < 0 || lambda < 0 || lambda >= 1 || delta <= 0)
      throw DitError(Errc::invalid_arg, "invalid curriculum parameters");
  }
};

namespace detail {
inline double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }
}

// epsilon-tolerant, sign-weighted clamp-L1. Collapses to plain clamp-L1 at
// (eps, lambda) = (0, 0).
inline double curriculum_loss(double f, double s, const CurriculumParams& p) {
  double cf = clamp_tsdf(f, p.delta);
  double cs = clamp_tsdf(s, p.delta);
  double w = 1.0 + p.lambda * detail::sgn(s) * detail::sgn(s - f);
  return w * std::max(std::abs(cf - cs) - p.eps, 0.0);
}

// dL/df (subgradient at kinks).
inline double curriculum_loss_grad(double f, double s, const CurriculumParams& p) {
  double cf = clamp_tsdf(f, p.delta);
  double cs = clamp_tsdf(s, p.delta);
  if (std::abs(cf - cs) - p.eps <= 0) return 0.0;
  if (std::abs(f) >= p.delta) return 0.0;  // clamp saturated
  double w = 1.0 + p.lambda * detail::sgn(s) * detail::sgn(s - f);
  return w * detail::sgn(cf - cs);
}

// ---------------------------------------------------------------------------
// Progressive multi-step reconstruction loss
// ---------------------------------------------------------------------------

// step -> parameters; default follows the every-other-step schedule
// (0.025/0 at 2, 0.01/0.1 at 4, 0.0025/0.2 at 6, 0/0.5 at 8).
using LossSchedule = std::map<int, CurriculumParams>;

inline LossSchedule default_loss_schedule(double delta = 0.1) {
  return {{2, {0.025, 0.0, delta}},
          {4, {0.01, 0.1, delta}},
          {6, {0.0025, 0.2, delta}},
          {8, {0.0, 0.5, delta}}};
}

// Mean over samples, summed over supervised step levels. `sdf_at` maps a
// canonical-space position to the predicted signed distance.
template <typename SdfFn>
  requires std::is_invocable_r_v<double, SdfFn&, const Vec3&>
double progressive_recon_loss(SdfFn&& sdf_at,
                              const std::vector<WarpTrajectory>& trajectories,
                              const std::vector<double>& gt,
                              const LossSchedule& schedule) {
  if (trajectories.size() != gt.size())
    throw DitError(Errc::mismatch, "progressive_recon_loss: size mismatch");
  if (trajectories.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [step, params] : schedule) {
    params.validate();
    double level = 0.0;
    for (size_t i = 0; i < trajectories.size(); ++i) {
      if (step < 0 || step >= static_cast<int>(trajectories[i].positions.size()))
        throw DitError(Errc::invalid_arg,
                       "progressive_recon_loss: trajectory missing step " +
                           std::to_string(step));
      double f = sdf_at(trajectories[i].positions[step]);
      level += curriculum_loss(f, gt[i], params);
    }
    total += level / static_cast<double>(trajectories.size());
  }
  return total;
}

inline double progressive_recon_loss(const TemplateNet& net,
                                     const std::vector<WarpTrajectory>& trajectories,
                                     const std::vector<double>& gt,
                                     const LossSchedule& schedule) {
  return progressive_recon_loss(
      [&](const Vec3& p) { return template_forward(net, Mat(p))(0, 0); },
      trajectories, gt, schedule);
}

// ---------------------------------------------------------------------------
// Warp regularizers and code prior
// ---------------------------------------------------------------------------

inline double huber(double x, double delta_h) {
  if (delta_h <= 0) throw DitError(Errc::invalid_arg, "huber: delta_h must be > 0");
  return x <= delta_h ? x * x / (2.0 * delta_h) : x - 0.5 * delta_h;
}

inline double huber_grad(double x, double delta_h) {
  return x <= delta_h ? x / delta_h : 1.0;
}

// Mean Huber penalty on the total displacement p^(S) - p^(0).
inline double pointwise_reg(const std::vector<WarpTrajectory>& trajectories,
                            double delta_h) {
  if (trajectories.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : trajectories)
    total += huber((t.positions.back() - t.positions.front()).norm(), delta_h);
  return total / static_cast<double>(trajectories.size());
}

// Relative-distortion hinge over point pairs; coincident pairs are skipped.
inline double pointpair_reg(const std::vector<Vec3>& points,
                            const std::vector<Vec3>& shifts,
                            const std::vector<std::pair<int, int>>& pairs,
                            double eps_pp) {
  if (points.size() != shifts.size())
    throw DitError(Errc::mismatch, "pointpair_reg: size mismatch");
  double total = 0.0;
  int used = 0;
  for (const auto& [i, j] : pairs) {
    double dist = (points[i] - points[j]).norm();
    if (dist < 1e-12) continue;
    total += std::max((shifts[i] - shifts[j]).norm() / dist - eps_pp, 0.0);
    ++used;
  }
  return used > 0 ? total / used : 0.0;
}

// (1/sigma^2) sum_k ||c_k||^2 over the given codes (columns).
inline double code_reg(const Mat& codes, double sigma) {
  if (sigma <= 0) throw DitError(Errc::invalid_arg, "code_reg: sigma must be > 0");
  return codes.squaredNorm() / (sigma * sigma);
}

struct RegWeights {
  double lambda_pw = 5e-4;
  double lambda_pp = 1e-3;
  double eps_pp = 0.5;
  double delta_h = 0.25;
  double sigma = 100.0;
};

struct LossBreakdown {
  std::map<int, double> recon;  // per supervised step level
  double pointwise = 0.0;
  double pointpair = 0.0;
  double code = 0.0;
  double template_sup = 0.0;
  double total = 0.0;

  double recon_total() const {
    double t = 0;
    for (const auto& [_, v] : recon) t += v;
    return t;
  }
};

// Combined objective for one batch of trajectories belonging to one or more
// shapes; pairs index into `trajectories`.
inline LossBreakdown total_loss(const TemplateNet& net,
                                const std::vector<WarpTrajectory>& trajectories,
                                const std::vector<double>& gt,
                                const std::vector<std::pair<int, int>>& pairs,
                                const Mat& batch_codes,
                                const RegWeights& weights,
                                const LossSchedule& schedule) {
  LossBreakdown out;
  for (const auto& [step, params] : schedule) {
    LossSchedule single{{step, params}};
    out.recon[step] = progressive_recon_loss(net, trajectories, gt, single);
  }
  out.pointwise = pointwise_reg(trajectories, weights.delta_h);
  std::vector<Vec3> points, shifts;
  points.reserve(trajectories.size());
  for (const auto& t : trajectories) {
    points.push_back(t.positions.front());
    shifts.push_back(t.positions.back() - t.positions.front());
  }
  out.pointpair = pointpair_reg(points, shifts, pairs, weights.eps_pp);
  out.code = code_reg(batch_codes, weights.sigma);
  out.total = out.recon_total() + weights.lambda_pw * out.pointwise +
              weights.lambda_pp * out.pointpair + out.code;
  return out;
}

// ---------------------------------------------------------------------------
// Optional extension losses
// ---------------------------------------------------------------------------

// L1 fit of the bare template to a user-specified SDF sample set.
inline double template_supervision_loss(const TemplateNet& net,
                                        const SampleSet& samples) {
  if (samples.samples.empty())
    throw DitError(Errc::invalid_arg, "template_supervision_loss: empty samples");
  double total = 0.0;
  for (const auto& s : samples.samples)
    total += std::abs(template_forward(net, Mat(s.point))(0, 0) - s.sdf);
  return total;
}

struct CorrespondencePair {
  int shape_a = 0, shape_b = 0;
  Vec3 point_a, point_b;
};

// Squared canonical-space distance over annotated cross-shape pairs.
inline double correspondence_loss(const DitModel& model,
                                  const std::vector<CorrespondencePair>& pairs,
                                  const std::map<int, Vec>& codes) {
  double total = 0.0;
  for (const auto& pr : pairs) {
    auto a = codes.find(pr.shape_a);
    auto b = codes.find(pr.shape_b);
    if (a == codes.end() || b == codes.end())
      throw DitError(Errc::invalid_arg, "correspondence_loss: unknown shape id");
    total += (model.canonical_position(pr.point_a, a->second) -
              model.canonical_position(pr.point_b, b->second))
                 .squaredNorm();
  }
  return total;
}

}  // namespace dit
