#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <unordered_map>

#include "dit/geometry.hpp"
#include "dit/losses.hpp"
#include "dit/mc_tables.hpp"
#include "dit/model.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Grid sampling
// ---------------------------------------------------------------------------

struct GridField {
  int res = 0;                 // corners per axis
  double lo = -1.0, hi = 1.0;  // axis-aligned cube bounds
  std::vector<double> values;  // res^3, x-major then y then z

  double spacing() const { return (hi - lo) / (res - 1); }
  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(x) * res + y) * res + z;
  }
  Vec3 position(int x, int y, int z) const {
    double h = spacing();
    return Vec3(lo + x * h, lo + y * h, lo + z * h);
  }
};

// Evaluates an arbitrary scalar field on the grid; batched in chunks and
// parallel over chunks (read-only on the field closure).
inline GridField evaluate_grid(
    const std::function<Mat(const Mat&)>& field_batch, int res,
    double lo = -1.0, double hi = 1.0, int threads = 1,
    int chunk = 32 * 32 * 32) {
  if (res < 2) throw DitError(Errc::invalid_arg, "grid resolution must be >= 2");
  GridField grid;
  grid.res = res;
  grid.lo = lo;
  grid.hi = hi;
  size_t total = static_cast<size_t>(res) * res * res;
  grid.values.resize(total);

  auto run_chunk = [&](size_t begin, size_t end) {
    Mat pts(3, static_cast<Eigen::Index>(end - begin));
    double h = grid.spacing();
    for (size_t i = begin; i < end; ++i) {
      size_t z = i % res, y = (i / res) % res, x = i / res / res;
      pts.col(static_cast<Eigen::Index>(i - begin)) =
          Vec3(lo + x * h, lo + y * h, lo + z * h);
    }
    Mat out = field_batch(pts);
    for (size_t i = begin; i < end; ++i)
      grid.values[i] = out(0, static_cast<Eigen::Index>(i - begin));
  };

  std::vector<std::pair<size_t, size_t>> chunks;
  for (size_t b = 0; b < total; b += chunk)
    chunks.emplace_back(b, std::min(total, b + chunk));
  int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(chunks.size())));
  if (n_threads == 1) {
    for (auto [b, e] : chunks) run_chunk(b, e);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          size_t i = next.fetch_add(1);
          if (i >= chunks.size()) return;
          run_chunk(chunks[i].first, chunks[i].second);
        }
      });
    for (auto& th : pool) th.join();
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Marching cubes (256-case table, linear edge interpolation, deduplicated
// vertices keyed by grid edge)
// ---------------------------------------------------------------------------

struct ExtractionResult {
  Mesh mesh;
  bool empty = false;  // no zero crossing anywhere
};

inline ExtractionResult marching_cubes(const GridField& grid, double iso = 0.0) {
  ExtractionResult out;
  const int res = grid.res;
  const double h = grid.spacing();

  auto value = [&](int x, int y, int z) {
    double v = grid.values[grid.index(x, y, z)] - iso;
    // nudge exact zeros so every crossing is strict and no vertex lands
    // exactly on a corner (avoids degenerate triangles)
    return v == 0.0 ? 1e-12 : v;
  };

  // global edge key: base corner linear index * 3 + axis
  auto edge_key = [&](int x, int y, int z, int axis) {
    return (static_cast<uint64_t>(grid.index(x, y, z)) << 2) |
           static_cast<uint64_t>(axis);
  };
  std::unordered_map<uint64_t, int> edge_vertex;

  auto vertex_on_edge = [&](int cx, int cy, int cz, int edge) {
    const int* ca = mc::kCornerOffsets[mc::kEdgeCorners[edge][0]];
    const int* cb = mc::kCornerOffsets[mc::kEdgeCorners[edge][1]];
    int ax = cx + ca[0], ay = cy + ca[1], az = cz + ca[2];
    int bx = cx + cb[0], by = cy + cb[1], bz = cz + cb[2];
    // canonical orientation: base corner is the lexicographically smaller one
    if (std::tie(bx, by, bz) < std::tie(ax, ay, az)) {
      std::swap(ax, bx);
      std::swap(ay, by);
      std::swap(az, bz);
    }
    int axis = (bx - ax) ? 0 : ((by - ay) ? 1 : 2);
    uint64_t key = edge_key(ax, ay, az, axis);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    double va = value(ax, ay, az), vb = value(bx, by, bz);
    double t = va / (va - vb);
    t = std::clamp(t, 0.0, 1.0);
    Vec3 pa = grid.position(ax, ay, az);
    Vec3 dir = Vec3::Zero();
    dir[axis] = h;
    out.mesh.vertices.push_back(pa + t * dir);
    int idx = static_cast<int>(out.mesh.vertices.size()) - 1;
    edge_vertex.emplace(key, idx);
    return idx;
  };

  for (int x = 0; x + 1 < res; ++x) {
    for (int y = 0; y + 1 < res; ++y) {
      for (int z = 0; z + 1 < res; ++z) {
        int cube_index = 0;
        for (int c = 0; c < 8; ++c) {
          const int* o = mc::kCornerOffsets[c];
          if (value(x + o[0], y + o[1], z + o[2]) < 0.0) cube_index |= 1 << c;
        }
        const int8_t* tris = mc::kTriTable[cube_index];
        for (int t = 0; tris[t] != -1; t += 3) {
          int a = vertex_on_edge(x, y, z, tris[t]);
          int b = vertex_on_edge(x, y, z, tris[t + 1]);
          int c = vertex_on_edge(x, y, z, tris[t + 2]);
          if (a != b && b != c && a != c)
            out.mesh.triangles.push_back({a, b, c});
        }
      }
    }
  }
  out.empty = out.mesh.triangles.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Mesh extraction from the model
// ---------------------------------------------------------------------------

inline ExtractionResult extract_mesh(const DitModel& model, const Vec& code,
                                     int resolution, int steps = -1,
                                     int threads = 1) {
  if (steps < 0) steps = model.config.warp_steps;
  int s = steps;
  auto field = [&model, &code, s](const Mat& pts) {
    return model.forward_sdf_batch(pts, code, s);
  };
  GridField grid = evaluate_grid(field, resolution, -1.0, 1.0, threads);
  return marching_cubes(grid, 0.0);
}

inline ExtractionResult extract_template_mesh(const DitModel& model,
                                              int resolution, int threads = 1) {
  auto field = [&model](const Mat& pts) {
    return template_forward(model.template_net, pts);
  };
  GridField grid = evaluate_grid(field, resolution, -1.0, 1.0, threads);
  return marching_cubes(grid, 0.0);
}

// ---------------------------------------------------------------------------
// Latent inference for unseen shapes (test-time optimization; network frozen)
// ---------------------------------------------------------------------------

struct InferLatentOptions {
  long iterations = 800;
  double lr = 5e-3;
  int batch = 512;
  double sigma = 100.0;  // code prior scale
  double delta = 0.1;
  double init_std = 0.01;
  uint64_t seed = 0;
};

inline Vec infer_latent(const DitModel& model, const SampleSet& samples,
                        const InferLatentOptions& opt = {}) {
  if (samples.samples.empty())
    throw DitError(Errc::invalid_arg, "infer_latent: empty samples");
  const int d = model.config.latent_dim;
  const int steps = model.config.warp_steps;
  Rng rng(derive_seed(opt.seed, 0x1afe2ULL));
  Vec code(d);
  for (int i = 0; i < d; ++i) code[i] = opt.init_std * rng.gaussian();

  DitModel local = model;  // gradient buffers only; values never change
  CurriculumParams final_params{0.0, 0.0, opt.delta};
  Vec m = Vec::Zero(d), v = Vec::Zero(d);
  AdamConfig adam;
  adam.lr = opt.lr;

  for (long iter = 0; iter < opt.iterations; ++iter) {
    int b = std::min<int>(opt.batch, static_cast<int>(samples.samples.size()));
    Mat p0(3, b);
    std::vector<double> gt(b);
    for (int i = 0; i < b; ++i) {
      const SdfSample& s = samples.samples[rng.uniform_int(
          static_cast<int>(samples.samples.size()))];
      p0.col(i) = s.point;
      gt[i] = s.sdf;
    }
    WarpBatchCache warp_cache;
    warp_forward(local.warp_net, code, p0, steps, warp_cache);
    TemplateCache tcache;
    Mat f = template_forward(local.template_net, warp_cache.p[steps], &tcache);
    Mat df(1, b);
    for (int i = 0; i < b; ++i)
      df(0, i) = curriculum_loss_grad(f(0, i), gt[i], final_params) / b;
    for (auto* p : local.params()) p->zero_grad();
    std::vector<Mat> d_p(steps + 1, Mat::Zero(3, b));
    d_p[steps] = template_backward(local.template_net, tcache, df);
    Vec g = warp_backward(local.warp_net, warp_cache, d_p);
    g += (2.0 / (opt.sigma * opt.sigma)) * code;

    m = adam.beta1 * m + (1.0 - adam.beta1) * g;
    v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
    double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(iter + 1));
    double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(iter + 1));
    code.array() -=
        adam.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + adam.eps);
  }
  return code;
}

// ---------------------------------------------------------------------------
// Latent interpolation and correspondence queries
// ---------------------------------------------------------------------------

inline Vec interpolate_codes(const Vec& c1, const Vec& c2, double t) {
  if (c1.size() != c2.size())
    throw DitError(Errc::mismatch, "interpolate_codes: dimension mismatch");
  if (t < 0.0 || t > 1.0)
    throw DitError(Errc::invalid_arg, "interpolate_codes: t must be in [0,1]");
  return (1.0 - t) * c1 + t * c2;
}

struct CorrespondenceResult {
  Vec3 target_point;
  int pool_index = -1;
  double canonical_distance = 0.0;
};

// Warps the whole pool once into canonical space.
inline std::vector<Vec3> warp_pool(const DitModel& model, const Vec& code,
                                   const std::vector<Vec3>& pool) {
  std::vector<Vec3> out(pool.size());
  const int chunk = 4096;
  for (size_t base = 0; base < pool.size(); base += chunk) {
    size_t n = std::min<size_t>(chunk, pool.size() - base);
    Mat pts(3, static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) pts.col(static_cast<Eigen::Index>(i)) = pool[base + i];
    WarpBatchCache cache;
    warp_forward(model.warp_net, code, pts, model.config.warp_steps, cache);
    for (size_t i = 0; i < n; ++i)
      out[base + i] = Vec3(cache.p.back().col(static_cast<Eigen::Index>(i)));
  }
  return out;
}

// Nearest neighbor in canonical space; ties broken by lowest pool index
// (strict < keeps the earliest minimum).
inline CorrespondenceResult correspond(const DitModel& model,
                                       const Vec3& source_point,
                                       const Vec& source_code,
                                       const Vec& target_code,
                                       const std::vector<Vec3>& target_pool,
                                       const std::vector<Vec3>* warped_pool = nullptr) {
  if (target_pool.empty())
    throw DitError(Errc::invalid_arg, "correspond: empty target pool");
  Vec3 canonical = model.canonical_position(source_point, source_code);
  std::vector<Vec3> warped_local;
  if (!warped_pool) {
    warped_local = warp_pool(model, target_code, target_pool);
    warped_pool = &warped_local;
  }
  CorrespondenceResult best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < warped_pool->size(); ++i) {
    double d2 = ((*warped_pool)[i] - canonical).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.pool_index = static_cast<int>(i);
    }
  }
  best.target_point = target_pool[best.pool_index];
  best.canonical_distance = std::sqrt(best_d2);
  return best;
}

}  // namespace dit
