#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "dit/common.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Shape specifications (analytic ground-truth SDFs)
// ---------------------------------------------------------------------------

struct ShapeSpec {
  enum class Kind { Sphere, Box, Ellipsoid, Capsule, Union };

  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  Vec3 euler = Vec3::Zero();  // xyz intrinsic rotation of the local frame
  double radius = 0.0;        // sphere, capsule
  Vec3 half_extents = Vec3::Zero();  // box
  Vec3 radii = Vec3::Zero();         // ellipsoid
  double half_length = 0.0;          // capsule axis half length (local z)
  std::vector<ShapeSpec> members;    // union

  static ShapeSpec sphere(double r, const Vec3& c = Vec3::Zero()) {
    ShapeSpec s;
    s.kind = Kind::Sphere;
    s.radius = r;
    s.center = c;
    return s;
  }
  static ShapeSpec box(const Vec3& he, const Vec3& c = Vec3::Zero(),
                       const Vec3& euler = Vec3::Zero()) {
    ShapeSpec s;
    s.kind = Kind::Box;
    s.half_extents = he;
    s.center = c;
    s.euler = euler;
    return s;
  }
  static ShapeSpec ellipsoid(const Vec3& r, const Vec3& c = Vec3::Zero(),
                             const Vec3& euler = Vec3::Zero()) {
    ShapeSpec s;
    s.kind = Kind::Ellipsoid;
    s.radii = r;
    s.center = c;
    s.euler = euler;
    return s;
  }
  static ShapeSpec capsule(double r, double hl, const Vec3& c = Vec3::Zero(),
                           const Vec3& euler = Vec3::Zero()) {
    ShapeSpec s;
    s.kind = Kind::Capsule;
    s.radius = r;
    s.half_length = hl;
    s.center = c;
    s.euler = euler;
    return s;
  }
  static ShapeSpec union_of(std::vector<ShapeSpec> members) {
    ShapeSpec s;
    s.kind = Kind::Union;
    s.members = std::move(members);
    return s;
  }
};

inline Eigen::Matrix3d euler_xyz_rotation(const Vec3& e) {
  Eigen::Matrix3d r;
  r = Eigen::AngleAxisd(e.z(), Vec3::UnitZ()) *
      Eigen::AngleAxisd(e.y(), Vec3::UnitY()) *
      Eigen::AngleAxisd(e.x(), Vec3::UnitX());
  return r;
}

inline void validate_shape_spec(const ShapeSpec& s) {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  switch (s.kind) {
    case ShapeSpec::Kind::Sphere:
      if (!positive(s.radius))
        throw DitError(Errc::invalid_arg, "sphere radius must be > 0");
      break;
    case ShapeSpec::Kind::Box:
      if (!(positive(s.half_extents.x()) && positive(s.half_extents.y()) &&
            positive(s.half_extents.z())))
        throw DitError(Errc::invalid_arg, "box half extents must be > 0");
      break;
    case ShapeSpec::Kind::Ellipsoid:
      if (!(positive(s.radii.x()) && positive(s.radii.y()) &&
            positive(s.radii.z())))
        throw DitError(Errc::invalid_arg, "ellipsoid radii must be > 0");
      break;
    case ShapeSpec::Kind::Capsule:
      if (!positive(s.radius) || !positive(s.half_length))
        throw DitError(Errc::invalid_arg, "capsule radius/half length must be > 0");
      break;
    case ShapeSpec::Kind::Union:
      if (s.members.empty())
        throw DitError(Errc::invalid_arg, "union must have members");
      for (const auto& m : s.members) validate_shape_spec(m);
      break;
    default:
      throw DitError(Errc::invalid_arg, "unknown shape kind");
  }
}

namespace detail {

inline double sdf_sphere(const Vec3& p, double r) { return p.norm() - r; }

inline double sdf_box(const Vec3& p, const Vec3& he) {
  Vec3 q = p.cwiseAbs() - he;
  Vec3 qpos = q.cwiseMax(0.0);
  double outside = qpos.norm();
  double inside = std::min(std::max({q.x(), q.y(), q.z()}), 0.0);
  return outside + inside;
}

inline double sdf_capsule(const Vec3& p, double r, double hl) {
  Vec3 q = p;
  q.z() -= std::clamp(q.z(), -hl, hl);
  return q.norm() - r;
}

// Exact point-to-ellipsoid distance: the nearest surface point has
// x_i = r_i^2 p_i / (t + r_i^2) for the root t of
//   F(t) = sum_i (r_i p_i / (t + r_i^2))^2 - 1 = 0,
// which is monotone decreasing on (-min r_i^2, inf). Solved by bisection.
inline double sdf_ellipsoid(const Vec3& p_in, const Vec3& r) {
  Vec3 p = p_in;
  double inside_metric =
      (p.array() / r.array()).matrix().squaredNorm();  // <1 inside
  // Degenerate center query: nearest point lies along the smallest axis.
  if (p.cwiseAbs().maxCoeff() < 1e-14) return -r.minCoeff();
  // Perturb exact-zero components off the symmetry planes so F stays smooth;
  // distance is continuous so the error is of the same order.
  for (int i = 0; i < 3; ++i)
    if (std::abs(p[i]) < 1e-12) p[i] = 1e-12;

  double rmin2 = r.cwiseProduct(r).minCoeff();
  double lo = -rmin2;
  double hi = r.maxCoeff() * (p.norm() + r.maxCoeff());
  auto f = [&](double t) {
    double s = 0;
    for (int i = 0; i < 3; ++i) {
      double d = r[i] * p[i] / (t + r[i] * r[i]);
      s += d * d;
    }
    return s - 1.0;
  };
  while (f(hi) > 0) hi *= 2.0;
  // F(lo+) = +inf; bisect.
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (f(mid) > 0)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-15 * (1.0 + std::abs(hi))) break;
  }
  double t = 0.5 * (lo + hi);
  Vec3 x;
  for (int i = 0; i < 3; ++i) x[i] = r[i] * r[i] * p[i] / (t + r[i] * r[i]);
  double d = (x - p).norm();
  return inside_metric < 1.0 ? -d : d;
}

}  // namespace detail

// Exact signed distance for primitives; min over members for unions
// (exact outside, a conservative bound inside overlaps).
inline double analytic_sdf(const ShapeSpec& s, const Vec3& p) {
  Vec3 q = p - s.center;
  if (s.euler.squaredNorm() > 0)
    q = euler_xyz_rotation(s.euler).transpose() * q;
  switch (s.kind) {
    case ShapeSpec::Kind::Sphere:
      return detail::sdf_sphere(q, s.radius);
    case ShapeSpec::Kind::Box:
      return detail::sdf_box(q, s.half_extents);
    case ShapeSpec::Kind::Ellipsoid:
      return detail::sdf_ellipsoid(q, s.radii);
    case ShapeSpec::Kind::Capsule:
      return detail::sdf_capsule(q, s.radius, s.half_length);
    case ShapeSpec::Kind::Union: {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& m : s.members) best = std::min(best, analytic_sdf(m, q));
      return best;
    }
  }
  throw DitError(Errc::invalid_arg, "unknown shape kind");
}

inline double clamp_tsdf(double s, double delta) {
  if (delta <= 0) throw DitError(Errc::invalid_arg, "clamp_tsdf: delta must be > 0");
  return std::min(delta, std::max(-delta, s));
}

// f32 quantization of a truncated value; the clamp bound is rounded toward
// zero so |result| <= delta still holds after the narrowing cast.
inline float quantize_tsdf_f32(double s, double delta) {
  float df = static_cast<float>(round_to_f32(delta));
  if (static_cast<double>(df) > delta) df = std::nextafter(df, 0.0f);
  float sv = static_cast<float>(round_to_f32(clamp_tsdf(s, delta)));
  return std::min(df, std::max(-df, sv));
}

// ---------------------------------------------------------------------------
// Surface sampling
// ---------------------------------------------------------------------------

inline double surface_area(const ShapeSpec& s) {
  switch (s.kind) {
    case ShapeSpec::Kind::Sphere:
      return 4.0 * M_PI * s.radius * s.radius;
    case ShapeSpec::Kind::Box: {
      const Vec3& h = s.half_extents;
      return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.z() * h.x());
    }
    case ShapeSpec::Kind::Ellipsoid: {
      // Thomsen approximation, adequate for sampling weights.
      const double pp = 1.6075;
      const Vec3& r = s.radii;
      double ap = std::pow(r.x(), pp), bp = std::pow(r.y(), pp),
             cp = std::pow(r.z(), pp);
      return 4.0 * M_PI * std::pow((ap * bp + bp * cp + cp * ap) / 3.0, 1.0 / pp);
    }
    case ShapeSpec::Kind::Capsule:
      return 2.0 * M_PI * s.radius * (2.0 * s.half_length) +
             4.0 * M_PI * s.radius * s.radius;
    case ShapeSpec::Kind::Union: {
      double a = 0;
      for (const auto& m : s.members) a += surface_area(m);
      return a;
    }
  }
  return 0;
}

namespace detail {

inline Vec3 surface_point_local(const ShapeSpec& s, Rng& rng);

inline Vec3 surface_point_union(const ShapeSpec& s, Rng& rng) {
  std::vector<double> cum;
  double total = 0;
  for (const auto& m : s.members) {
    total += surface_area(m);
    cum.push_back(total);
  }
  for (int attempt = 0; attempt < 10000; ++attempt) {
    double u = rng.uniform() * total;
    size_t idx = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (idx >= s.members.size()) idx = s.members.size() - 1;
    const ShapeSpec& m = s.members[idx];
    Vec3 p_local = surface_point_local(m, rng);
    Vec3 p = m.center + (m.euler.squaredNorm() > 0
                             ? Vec3(euler_xyz_rotation(m.euler) * p_local)
                             : p_local);
    // Reject member-surface points swallowed by another member.
    double sd = std::numeric_limits<double>::infinity();
    for (const auto& o : s.members) sd = std::min(sd, analytic_sdf(o, p));
    if (sd > -1e-9) return p;
  }
  throw DitError(Errc::numeric, "union surface sampling failed to converge");
}

inline Vec3 surface_point_local(const ShapeSpec& s, Rng& rng) {
  switch (s.kind) {
    case ShapeSpec::Kind::Sphere:
      return s.radius * rng.unit_sphere();
    case ShapeSpec::Kind::Box: {
      const Vec3& h = s.half_extents;
      double areas[3] = {h.y() * h.z(), h.z() * h.x(), h.x() * h.y()};
      double total = areas[0] + areas[1] + areas[2];
      double u = rng.uniform() * total;
      int axis = u < areas[0] ? 0 : (u < areas[0] + areas[1] ? 1 : 2);
      double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      Vec3 p;
      p[axis] = sign * h[axis];
      int a = (axis + 1) % 3, b = (axis + 2) % 3;
      p[a] = rng.uniform(-h[a], h[a]);
      p[b] = rng.uniform(-h[b], h[b]);
      return p;
    }
    case ShapeSpec::Kind::Ellipsoid: {
      // Rejection sampling; acceptance weight is the area element of the
      // sphere-to-ellipsoid map.
      const Vec3& r = s.radii;
      double mmax = std::max({r.y() * r.z(), r.x() * r.z(), r.x() * r.y()});
      for (;;) {
        Vec3 u = rng.unit_sphere();
        double m = std::sqrt(std::pow(r.y() * r.z() * u.x(), 2) +
                             std::pow(r.x() * r.z() * u.y(), 2) +
                             std::pow(r.x() * r.y() * u.z(), 2));
        if (rng.uniform() * mmax <= m) return Vec3(r.array() * u.array());
      }
    }
    case ShapeSpec::Kind::Capsule: {
      double side = 2.0 * M_PI * s.radius * 2.0 * s.half_length;
      double caps = 4.0 * M_PI * s.radius * s.radius;
      if (rng.uniform() * (side + caps) < side) {
        double theta = rng.uniform(0, 2.0 * M_PI);
        double z = rng.uniform(-s.half_length, s.half_length);
        return Vec3(s.radius * std::cos(theta), s.radius * std::sin(theta), z);
      }
      Vec3 d = s.radius * rng.unit_sphere();
      d.z() += d.z() >= 0 ? s.half_length : -s.half_length;
      return d;
    }
    case ShapeSpec::Kind::Union:
      return surface_point_union(s, rng);
  }
  throw DitError(Errc::invalid_arg, "unknown shape kind");
}

}  // namespace detail

inline Vec3 surface_point(const ShapeSpec& s, Rng& rng) {
  Vec3 p = detail::surface_point_local(s, rng);
  if (s.euler.squaredNorm() > 0) p = euler_xyz_rotation(s.euler) * p;
  return p + s.center;
}

inline std::vector<Vec3> sample_surface_points(const ShapeSpec& s, int n,
                                               uint64_t seed) {
  validate_shape_spec(s);
  Rng rng(derive_seed(seed, 0xabcdULL));
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) pts.push_back(surface_point(s, rng));
  return pts;
}

// ---------------------------------------------------------------------------
// SDF sample sets
// ---------------------------------------------------------------------------

struct SdfSample {
  Vec3 point;
  double sdf;  // truncated signed distance, negative inside
};

struct SampleSet {
  int shape_id = 0;
  int n_surface = 0;
  int n_uniform = 0;
  std::vector<SdfSample> samples;
};

// Generates the DeepSDF-style training set for one shape: near-surface
// samples at two perturbation scales (sigma and sigma/10, half each) plus
// uniform samples in the unit ball. Points and values are quantized to f32
// so the persisted file reproduces the in-memory set bit-exactly.
inline SampleSet sample_sdf(const ShapeSpec& spec, int n_surface, int n_uniform,
                            double noise_sigma, double delta, uint64_t seed,
                            int shape_id = 0) {
  if (n_surface <= 0 || n_uniform <= 0)
    throw DitError(Errc::invalid_arg, "sample_sdf: counts must be > 0");
  if (delta <= 0) throw DitError(Errc::invalid_arg, "sample_sdf: delta must be > 0");
  validate_shape_spec(spec);

  Rng rng(derive_seed(seed, static_cast<uint64_t>(shape_id)));
  SampleSet set;
  set.shape_id = shape_id;
  set.n_surface = n_surface;
  set.n_uniform = n_uniform;
  set.samples.reserve(n_surface + n_uniform);

  auto push = [&](const Vec3& p) {
    Vec3 q(round_to_f32(p.x()), round_to_f32(p.y()), round_to_f32(p.z()));
    double s = quantize_tsdf_f32(analytic_sdf(spec, q), delta);
    set.samples.push_back({q, s});
  };

  int half = n_surface / 2;
  for (int i = 0; i < n_surface; ++i) {
    double sigma = i < half ? noise_sigma : noise_sigma * 0.1;
    Vec3 p = surface_point(spec, rng) + sigma * rng.gaussian3();
    push(p);
  }
  for (int i = 0; i < n_uniform; ++i) push(rng.unit_ball());
  return set;
}

// ---------------------------------------------------------------------------
// Meshes
// ---------------------------------------------------------------------------

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return vertices.empty() || triangles.empty(); }
};

struct NormalizeResult {
  Mesh mesh;
  double scale;
  Vec3 offset;
};

// Centers on the bounding-box midpoint and scales the farthest vertex to
// radius 1/1.03. Idempotent: a normalized mesh maps to itself.
inline NormalizeResult normalize_mesh(const Mesh& mesh) {
  if (mesh.vertices.empty())
    throw DitError(Errc::invalid_arg, "normalize_mesh: empty mesh");
  Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  Vec3 offset = 0.5 * (lo + hi);
  double max_norm = 0;
  for (const auto& v : mesh.vertices)
    max_norm = std::max(max_norm, (v - offset).norm());
  if (max_norm <= 0)
    throw DitError(Errc::invalid_arg, "normalize_mesh: degenerate mesh");
  double scale = (1.0 / 1.03) / max_norm;
  NormalizeResult out;
  out.offset = offset;
  out.scale = scale;
  out.mesh.triangles = mesh.triangles;
  out.mesh.vertices.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices)
    out.mesh.vertices.push_back((v - offset) * scale);
  return out;
}

inline double triangle_area(const Mesh& m, int t) {
  const Vec3& a = m.vertices[m.triangles[t][0]];
  const Vec3& b = m.vertices[m.triangles[t][1]];
  const Vec3& c = m.vertices[m.triangles[t][2]];
  return 0.5 * (b - a).cross(c - a).norm();
}

// Area-weighted uniform surface sampling of a triangle mesh.
inline std::vector<Vec3> sample_mesh_surface(const Mesh& m, int n,
                                             uint64_t seed) {
  if (m.empty()) throw DitError(Errc::invalid_arg, "sample_mesh_surface: empty mesh");
  std::vector<double> cum(m.triangles.size());
  double total = 0;
  for (size_t t = 0; t < m.triangles.size(); ++t) {
    total += triangle_area(m, static_cast<int>(t));
    cum[t] = total;
  }
  if (total <= 0)
    throw DitError(Errc::invalid_arg, "sample_mesh_surface: zero-area mesh");
  Rng rng(derive_seed(seed, 0x51f00dULL));
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    size_t t = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (t >= m.triangles.size()) t = m.triangles.size() - 1;
    double r1 = std::sqrt(rng.uniform());
    double r2 = rng.uniform();
    const Vec3& a = m.vertices[m.triangles[t][0]];
    const Vec3& b = m.vertices[m.triangles[t][1]];
    const Vec3& c = m.vertices[m.triangles[t][2]];
    pts.push_back((1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c);
  }
  return pts;
}

}  // namespace dit
