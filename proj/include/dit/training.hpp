#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <vector>

#include "dit/io.hpp"
#include "dit/losses.hpp"
#include "dit/model.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Latent table (auto-decoder codes, one per training shape)
// ---------------------------------------------------------------------------

struct LatentTable {
  Mat codes;  // dim x K
  std::vector<int> ids;
  double init_std = 0.01;
  // Per-code Adam state so codes outside a batch stay bit-untouched.
  Mat adam_m, adam_v;
  std::vector<long> adam_t;

  int dim() const { return static_cast<int>(codes.rows()); }
  int count() const { return static_cast<int>(codes.cols()); }

  int index_of(int shape_id) const {
    for (size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == shape_id) return static_cast<int>(i);
    throw DitError(Errc::invalid_arg,
                   "unknown shape id " + std::to_string(shape_id));
  }

  Vec code_for(int shape_id) const { return codes.col(index_of(shape_id)); }
};

inline LatentTable init_latents(int k, int dim, double std_dev, uint64_t seed) {
  if (k <= 0 || dim <= 0)
    throw DitError(Errc::invalid_arg, "init_latents: K and dim must be > 0");
  LatentTable t;
  t.init_std = std_dev;
  t.codes = Mat(dim, k);
  Rng rng(derive_seed(seed, 0x1a7e47ULL));
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < dim; ++i) t.codes(i, j) = std_dev * rng.gaussian();
  t.ids.resize(k);
  for (int j = 0; j < k; ++j) t.ids[j] = j;
  t.adam_m = Mat::Zero(dim, k);
  t.adam_v = Mat::Zero(dim, k);
  t.adam_t.assign(k, 0);
  return t;
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  long iterations = 2000;
  int shapes_per_batch = 8;
  int points_per_shape = 512;
  double lr_net = 5e-4;
  double lr_code = 1e-3;
  double delta = 0.1;
  double latent_init_std = 0.01;
  LossSchedule schedule = default_loss_schedule();
  RegWeights reg;
  uint64_t seed = 0;
  long checkpoint_every = 500;
  long log_every = 10;
  int threads = 1;
  bool template_supervision = false;
  std::string template_samples_path;
  double lambda_temp = 1.0;
  ModelConfig model;

  void validate() const {
    if (iterations < 0 || shapes_per_batch <= 0 || points_per_shape <= 0)
      throw DitError(Errc::config, "train config: counts must be positive");
    for (const auto& [step, p] : schedule) {
      if (step < 1 || step > model.warp_steps)
        throw DitError(Errc::config, "train config: supervised step out of range");
      p.validate();
    }
  }
};

inline json train_config_to_json(const TrainConfig& c) {
  json j;
  j["iterations"] = c.iterations;
  j["shapes_per_batch"] = c.shapes_per_batch;
  j["points_per_shape"] = c.points_per_shape;
  j["lr_net"] = c.lr_net;
  j["lr_code"] = c.lr_code;
  j["delta"] = c.delta;
  j["latent_init_std"] = c.latent_init_std;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["threads"] = c.threads;
  j["template_supervision"] = c.template_supervision;
  j["template_samples_path"] = c.template_samples_path;
  j["lambda_temp"] = c.lambda_temp;
  j["schedule"] = json::array();
  for (const auto& [step, p] : c.schedule)
    j["schedule"].push_back({{"step", step}, {"eps", p.eps}, {"lambda", p.lambda}});
  j["reg"] = {{"lambda_pw", c.reg.lambda_pw}, {"lambda_pp", c.reg.lambda_pp},
              {"eps_pp", c.reg.eps_pp},       {"delta_h", c.reg.delta_h},
              {"sigma", c.reg.sigma}};
  j["model"] = {{"latent_dim", c.model.latent_dim},
                {"hidden", c.model.hidden},
                {"warp_steps", c.model.warp_steps},
                {"template_width", c.model.template_width},
                {"template_hidden_layers", c.model.template_hidden_layers}};
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    auto get = [&](const char* key, auto def) {
      using T = decltype(def);
      return j.contains(key) ? j.at(key).get<T>() : def;
    };
    c.iterations = get("iterations", c.iterations);
    c.shapes_per_batch = get("shapes_per_batch", c.shapes_per_batch);
    c.points_per_shape = get("points_per_shape", c.points_per_shape);
    c.lr_net = get("lr_net", c.lr_net);
    c.lr_code = get("lr_code", c.lr_code);
    c.delta = get("delta", c.delta);
    c.latent_init_std = get("latent_init_std", c.latent_init_std);
    c.seed = get("seed", c.seed);
    c.checkpoint_every = get("checkpoint_every", c.checkpoint_every);
    c.log_every = get("log_every", c.log_every);
    c.threads = get("threads", c.threads);
    c.template_supervision = get("template_supervision", c.template_supervision);
    c.template_samples_path =
        get("template_samples_path", c.template_samples_path);
    c.lambda_temp = get("lambda_temp", c.lambda_temp);
    if (j.contains("schedule")) {
      c.schedule.clear();
      for (const auto& e : j.at("schedule"))
        c.schedule[e.at("step").get<int>()] = {e.at("eps").get<double>(),
                                               e.at("lambda").get<double>(),
                                               c.delta};
    } else {
      c.schedule = default_loss_schedule(c.delta);
    }
    if (j.contains("reg")) {
      const auto& r = j.at("reg");
      c.reg.lambda_pw = r.value("lambda_pw", c.reg.lambda_pw);
      c.reg.lambda_pp = r.value("lambda_pp", c.reg.lambda_pp);
      c.reg.eps_pp = r.value("eps_pp", c.reg.eps_pp);
      c.reg.delta_h = r.value("delta_h", c.reg.delta_h);
      c.reg.sigma = r.value("sigma", c.reg.sigma);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.latent_dim = m.value("latent_dim", c.model.latent_dim);
      c.model.hidden = m.value("hidden", c.model.hidden);
      c.model.warp_steps = m.value("warp_steps", c.model.warp_steps);
      c.model.template_width = m.value("template_width", c.model.template_width);
      c.model.template_hidden_layers =
          m.value("template_hidden_layers", c.model.template_hidden_layers);
    }
  } catch (const json::exception& e) {
    throw DitError(Errc::config, std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  auto f = detail::open_in(path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DitError(Errc::config, "malformed JSON in " + path + ": " + e.what());
  }
  return train_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Checkpoints ("DITC"): hyperparameters, config echo, named f64 blocks
// (parameters + Adam moments), then the latent table with its Adam state.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_block(std::ostream& os, const std::string& name, const Mat& m) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<uint32_t>(os, 2);
  write_pod<uint64_t>(os, static_cast<uint64_t>(m.rows()));
  write_pod<uint64_t>(os, static_cast<uint64_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline std::pair<std::string, Mat> read_block(std::istream& is) {
  auto name_len = read_pod<uint32_t>(is, "block name length");
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  auto rank = read_pod<uint32_t>(is, "block rank");
  if (rank != 2) throw DitError(Errc::io, "unexpected block rank");
  auto rows = read_pod<uint64_t>(is, "block rows");
  auto cols = read_pod<uint64_t>(is, "block cols");
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw DitError(Errc::io, "truncated checkpoint block " + name);
  return {name, std::move(m)};
}

}  // namespace detail

struct Checkpoint {
  ModelConfig model_config;
  long iteration = 0;
  std::string config_echo;  // JSON text of the TrainConfig used
  DitModel model;
  LatentTable table;
  std::vector<AdamState> net_adam;  // aligned with model.params() order
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  auto f = detail::open_out(path, true);
  f.write("DITC", 4);
  detail::write_pod<uint32_t>(f, kCheckpointVersion);
  detail::write_pod<uint32_t>(f, static_cast<uint32_t>(ck.model_config.latent_dim));
  detail::write_pod<uint32_t>(f, static_cast<uint32_t>(ck.model_config.hidden));
  detail::write_pod<uint32_t>(f, static_cast<uint32_t>(ck.model_config.warp_steps));
  detail::write_pod<uint32_t>(f, static_cast<uint32_t>(ck.model_config.template_width));
  detail::write_pod<uint32_t>(f,
                              static_cast<uint32_t>(ck.model_config.template_hidden_layers));
  detail::write_pod<uint64_t>(f, static_cast<uint64_t>(ck.iteration));
  detail::write_pod<uint32_t>(f, static_cast<uint32_t>(ck.config_echo.size()));
  f.write(ck.config_echo.data(),
          static_cast<std::streamsize>(ck.config_echo.size()));

  auto params = const_cast<DitModel&>(ck.model).params();
  bool with_adam = ck.net_adam.size() == params.size();
  detail::write_pod<uint32_t>(
      f, static_cast<uint32_t>(params.size() * (with_adam ? 3 : 1)));
  for (size_t i = 0; i < params.size(); ++i) {
    detail::write_block(f, params[i]->name, params[i]->value);
    if (with_adam) {
      detail::write_block(f, "adam.m." + params[i]->name, ck.net_adam[i].m);
      detail::write_block(f, "adam.v." + params[i]->name, ck.net_adam[i].v);
    }
  }
  detail::write_pod<uint64_t>(
      f, with_adam && !ck.net_adam.empty()
             ? static_cast<uint64_t>(ck.net_adam[0].step)
             : 0);

  // latent table
  detail::write_pod<uint32_t>(f, static_cast<uint32_t>(ck.table.count()));
  detail::write_pod<uint32_t>(f, static_cast<uint32_t>(ck.table.dim()));
  detail::write_pod<double>(f, ck.table.init_std);
  for (int k = 0; k < ck.table.count(); ++k) {
    detail::write_pod<int32_t>(f, ck.table.ids[k]);
    f.write(reinterpret_cast<const char*>(ck.table.codes.col(k).data()),
            static_cast<std::streamsize>(sizeof(double) * ck.table.dim()));
    f.write(reinterpret_cast<const char*>(ck.table.adam_m.col(k).data()),
            static_cast<std::streamsize>(sizeof(double) * ck.table.dim()));
    f.write(reinterpret_cast<const char*>(ck.table.adam_v.col(k).data()),
            static_cast<std::streamsize>(sizeof(double) * ck.table.dim()));
    detail::write_pod<uint64_t>(f, static_cast<uint64_t>(ck.table.adam_t[k]));
  }
  if (!f) throw DitError(Errc::io, "failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto f = detail::open_in(path, true);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "DITC", 4) != 0)
    throw DitError(Errc::io, "bad magic in checkpoint: " + path);
  auto version = detail::read_pod<uint32_t>(f, "version");
  if (version != kCheckpointVersion)
    throw DitError(Errc::mismatch, "unsupported checkpoint version: " + path);

  Checkpoint ck;
  ck.model_config.latent_dim = detail::read_pod<uint32_t>(f, "latent_dim");
  ck.model_config.hidden = detail::read_pod<uint32_t>(f, "hidden");
  ck.model_config.warp_steps = detail::read_pod<uint32_t>(f, "warp_steps");
  ck.model_config.template_width = detail::read_pod<uint32_t>(f, "template_width");
  ck.model_config.template_hidden_layers =
      detail::read_pod<uint32_t>(f, "template_hidden_layers");
  ck.iteration = static_cast<long>(detail::read_pod<uint64_t>(f, "iteration"));
  auto cfg_len = detail::read_pod<uint32_t>(f, "config length");
  ck.config_echo.resize(cfg_len);
  f.read(ck.config_echo.data(), cfg_len);

  ck.model = DitModel(ck.model_config);
  auto params = ck.model.params();
  std::map<std::string, Mat> blocks;
  auto n_blocks = detail::read_pod<uint32_t>(f, "block count");
  for (uint32_t i = 0; i < n_blocks; ++i) {
    auto [name, m] = detail::read_block(f);
    blocks.emplace(std::move(name), std::move(m));
  }
  auto adam_step_count = detail::read_pod<uint64_t>(f, "adam step count");
  bool with_adam = blocks.count("adam.m." + params[0]->name) > 0;
  for (auto* p : params) {
    auto it = blocks.find(p->name);
    if (it == blocks.end())
      throw DitError(Errc::mismatch, "checkpoint missing block " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw DitError(Errc::mismatch, "checkpoint block shape mismatch: " + p->name);
    p->value = it->second;
    if (with_adam) {
      AdamState s;
      s.m = blocks.at("adam.m." + p->name);
      s.v = blocks.at("adam.v." + p->name);
      s.step = static_cast<long>(adam_step_count);
      ck.net_adam.push_back(std::move(s));
    }
  }

  auto k = detail::read_pod<uint32_t>(f, "latent count");
  auto dim = detail::read_pod<uint32_t>(f, "latent dim");
  if (static_cast<int>(dim) != ck.model_config.latent_dim)
    throw DitError(Errc::mismatch, "latent table dim mismatch in " + path);
  ck.table.init_std = detail::read_pod<double>(f, "latent init std");
  ck.table.codes = Mat(dim, k);
  ck.table.adam_m = Mat(dim, k);
  ck.table.adam_v = Mat(dim, k);
  ck.table.ids.resize(k);
  ck.table.adam_t.resize(k);
  for (uint32_t i = 0; i < k; ++i) {
    ck.table.ids[i] = detail::read_pod<int32_t>(f, "latent id");
    f.read(reinterpret_cast<char*>(ck.table.codes.col(i).data()),
           sizeof(double) * dim);
    f.read(reinterpret_cast<char*>(ck.table.adam_m.col(i).data()),
           sizeof(double) * dim);
    f.read(reinterpret_cast<char*>(ck.table.adam_v.col(i).data()),
           sizeof(double) * dim);
    ck.table.adam_t[i] = static_cast<long>(detail::read_pod<uint64_t>(f, "latent t"));
    if (!f) throw DitError(Errc::io, "truncated latent table in " + path);
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

namespace detail {

struct ShapeJob {
  int table_index = 0;
  Mat p0;                  // 3 x B
  std::vector<double> gt;  // B
  std::vector<std::pair<int, int>> pairs;
};

struct ShapeResult {
  std::vector<Mat> param_grads;
  Vec code_grad;
  std::map<int, double> recon_sums;  // unscaled sums of curriculum terms
  double pw_sum = 0.0;               // unscaled Huber sum
  double pp_mean = 0.0;              // per-shape pair mean
};

// Forward/backward for one shape's point batch. Loss scaling: recon and
// pointwise terms are means over all samples in the full batch
// (inv_kb_b = 1/(K_batch * B)); the pair term is the mean over this shape's
// pairs averaged across shapes (inv_k = 1/K_batch).
inline ShapeResult run_shape_job(const DitModel& master, const Vec& code,
                                 const ShapeJob& job, const TrainConfig& cfg,
                                 double inv_kb_b, double inv_k) {
  DitModel local = master;  // isolated gradient accumulators
  for (auto* p : local.params()) p->zero_grad();

  const int b = static_cast<int>(job.p0.cols());
  const int steps = cfg.model.warp_steps;
  WarpBatchCache warp_cache;
  warp_forward(local.warp_net, code, job.p0, steps, warp_cache);

  ShapeResult res;
  std::vector<Mat> d_p(steps + 1, Mat::Zero(3, b));

  // progressive reconstruction at the supervised steps
  for (const auto& [step, params] : cfg.schedule) {
    TemplateCache tcache;
    Mat f = template_forward(local.template_net, warp_cache.p[step], &tcache);
    Mat df(1, b);
    double sum = 0.0;
    for (int col = 0; col < b; ++col) {
      sum += curriculum_loss(f(0, col), job.gt[col], params);
      df(0, col) =
          curriculum_loss_grad(f(0, col), job.gt[col], params) * inv_kb_b;
    }
    res.recon_sums[step] = sum;
    d_p[step] += template_backward(local.template_net, tcache, df);
  }

  // point-wise displacement penalty
  const Mat shift = warp_cache.p[steps] - warp_cache.p[0];
  for (int col = 0; col < b; ++col) {
    double x = shift.col(col).norm();
    res.pw_sum += huber(x, cfg.reg.delta_h);
    if (x > 1e-15)
      d_p[steps].col(col) += (cfg.reg.lambda_pw * inv_kb_b *
                              huber_grad(x, cfg.reg.delta_h) / x) *
                             shift.col(col);
  }

  // point-pair distortion penalty; pair count fixed before gradients so the
  // per-pair coefficient is final
  int used_pairs = 0;
  for (const auto& [i, j] : job.pairs)
    if ((job.p0.col(i) - job.p0.col(j)).norm() >= 1e-12) ++used_pairs;
  if (used_pairs > 0) {
    double coef = cfg.reg.lambda_pp * inv_k / used_pairs;
    double pp_sum = 0.0;
    for (const auto& [i, j] : job.pairs) {
      double dist = (job.p0.col(i) - job.p0.col(j)).norm();
      if (dist < 1e-12) continue;
      Eigen::Vector3d u = shift.col(i) - shift.col(j);
      double un = u.norm();
      double t = un / dist - cfg.reg.eps_pp;
      if (t <= 0) continue;
      pp_sum += t;
      if (un > 1e-15) {
        d_p[steps].col(i) += (coef / (un * dist)) * u;
        d_p[steps].col(j) -= (coef / (un * dist)) * u;
      }
    }
    res.pp_mean = pp_sum / used_pairs;
  }

  res.param_grads.clear();
  res.code_grad = warp_backward(local.warp_net, warp_cache, d_p);
  for (auto* p : local.params()) res.param_grads.push_back(p->grad);
  return res;
}

}  // namespace detail

inline LossBreakdown train_step(DitModel& model, LatentTable& table,
                                const std::vector<SampleSet>& dataset,
                                Optimizer& net_opt, const AdamConfig& code_adam,
                                const TrainConfig& cfg, long iter,
                                const SampleSet* template_samples = nullptr) {
  if (dataset.empty())
    throw DitError(Errc::invalid_arg, "train_step: empty dataset");
  Rng rng(derive_seed(cfg.seed, 0x5eedULL + static_cast<uint64_t>(iter)));

  const int k_total = static_cast<int>(dataset.size());
  const int k_batch = std::min(cfg.shapes_per_batch, k_total);
  const int b = cfg.points_per_shape;
  const double inv_kb_b = 1.0 / (static_cast<double>(k_batch) * b);
  const double inv_k = 1.0 / static_cast<double>(k_batch);

  // batch selection, fixed order, before any parallel work
  std::vector<int> shape_order(k_total);
  for (int i = 0; i < k_total; ++i) shape_order[i] = i;
  rng.shuffle(shape_order);
  shape_order.resize(k_batch);

  std::vector<detail::ShapeJob> jobs(k_batch);
  for (int s = 0; s < k_batch; ++s) {
    const SampleSet& set = dataset[shape_order[s]];
    if (set.samples.empty())
      throw DitError(Errc::invalid_arg, "train_step: shape with no samples");
    detail::ShapeJob& job = jobs[s];
    job.table_index = table.index_of(set.shape_id);
    job.p0 = Mat(3, b);
    job.gt.resize(b);
    for (int col = 0; col < b; ++col) {
      const SdfSample& smp =
          set.samples[rng.uniform_int(static_cast<int>(set.samples.size()))];
      job.p0.col(col) = smp.point;
      job.gt[col] = smp.sdf;
    }
    std::vector<int> perm(b);
    for (int i = 0; i < b; ++i) perm[i] = i;
    rng.shuffle(perm);
    for (int i = 0; i < b; ++i)
      if (perm[i] != i) job.pairs.emplace_back(i, perm[i]);
  }

  // run shape jobs (parallel, merged in shape order)
  std::vector<detail::ShapeResult> results(k_batch);
  auto run_range = [&](int lo, int hi) {
    for (int s = lo; s < hi; ++s) {
      const Vec code = table.codes.col(jobs[s].table_index);
      results[s] =
          detail::run_shape_job(model, code, jobs[s], cfg, inv_kb_b, inv_k);
    }
  };
  int n_threads = std::max(1, std::min(cfg.threads, k_batch));
  if (n_threads == 1) {
    run_range(0, k_batch);
  } else {
    std::vector<std::thread> pool;
    int chunk = (k_batch + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      int lo = t * chunk, hi = std::min(k_batch, lo + chunk);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  // merge gradients deterministically
  auto params = model.params();
  for (auto* p : params) p->zero_grad();
  LossBreakdown out;
  for (int s = 0; s < k_batch; ++s) {
    for (size_t i = 0; i < params.size(); ++i)
      params[i]->grad += results[s].param_grads[i];
    for (const auto& [step, sum] : results[s].recon_sums)
      out.recon[step] += sum * inv_kb_b;
    out.pointwise += results[s].pw_sum * inv_kb_b;
    out.pointpair += results[s].pp_mean * inv_k;
  }

  // code prior over the batch codes
  for (int s = 0; s < k_batch; ++s) {
    const Vec c = table.codes.col(jobs[s].table_index);
    out.code += c.squaredNorm() / (cfg.reg.sigma * cfg.reg.sigma);
    results[s].code_grad += (2.0 / (cfg.reg.sigma * cfg.reg.sigma)) * c;
  }

  // optional user-defined template supervision
  if (cfg.template_supervision && template_samples) {
    const auto& all = template_samples->samples;
    if (all.empty())
      throw DitError(Errc::invalid_arg, "template supervision: empty samples");
    int nb = std::min<int>(512, static_cast<int>(all.size()));
    Mat pts(3, nb);
    std::vector<double> sdf(nb);
    for (int i = 0; i < nb; ++i) {
      const SdfSample& smp = all[rng.uniform_int(static_cast<int>(all.size()))];
      pts.col(i) = smp.point;
      sdf[i] = smp.sdf;
    }
    TemplateCache tcache;
    Mat f = template_forward(model.template_net, pts, &tcache);
    Mat df(1, nb);
    double sum = 0.0;
    for (int i = 0; i < nb; ++i) {
      sum += std::abs(f(0, i) - sdf[i]);
      df(0, i) = cfg.lambda_temp * detail::sgn(f(0, i) - sdf[i]) / nb;
    }
    out.template_sup = sum / nb;
    template_backward(model.template_net, tcache, df);
  }

  out.total = out.recon_total() + cfg.reg.lambda_pw * out.pointwise +
              cfg.reg.lambda_pp * out.pointpair + out.code +
              (cfg.template_supervision ? cfg.lambda_temp * out.template_sup : 0.0);
  if (!std::isfinite(out.total)) {
    std::string diag = "NaN/inf loss at iteration " + std::to_string(iter) +
                       " (recon=" + std::to_string(out.recon_total()) +
                       " pw=" + std::to_string(out.pointwise) +
                       " pp=" + std::to_string(out.pointpair) +
                       " code=" + std::to_string(out.code) + ")";
    throw DitError(Errc::numeric, diag);
  }

  // optimizer: one step on network params, one on the batch codes
  net_opt.step(params);
  for (int s = 0; s < k_batch; ++s) {
    int idx = jobs[s].table_index;
    table.adam_t[idx] += 1;
    auto m = table.adam_m.col(idx);
    auto v = table.adam_v.col(idx);
    const Vec& g = results[s].code_grad;
    m = code_adam.beta1 * m + (1.0 - code_adam.beta1) * g;
    v = code_adam.beta2 * v +
        (1.0 - code_adam.beta2) * g.cwiseProduct(g);
    double bc1 = 1.0 - std::pow(code_adam.beta1, table.adam_t[idx]);
    double bc2 = 1.0 - std::pow(code_adam.beta2, table.adam_t[idx]);
    table.codes.col(idx).array() -=
        code_adam.lr * (m.array() / bc1) /
        ((v.array() / bc2).sqrt() + code_adam.eps);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::string checkpoint_path;
  std::string loss_csv_path;
  LossBreakdown final_loss;
};

inline TrainResult train(DitModel& model, LatentTable& table,
                         Optimizer& net_opt,
                         const std::vector<SampleSet>& dataset,
                         const TrainConfig& cfg, const std::string& out_dir,
                         long start_iter = 0, bool quiet = false) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  AdamConfig code_adam;
  code_adam.lr = cfg.lr_code;

  SampleSet template_samples;
  if (cfg.template_supervision) {
    if (cfg.template_samples_path.empty())
      throw DitError(Errc::config, "template_supervision needs template_samples_path");
    auto sets = load_sample_sets(cfg.template_samples_path);
    if (sets.empty())
      throw DitError(Errc::config, "template samples file is empty: " +
                                        cfg.template_samples_path);
    template_samples = sets[0];
  }

  std::string csv_path = out_dir + "/loss.csv";
  std::ofstream csv;
  if (start_iter == 0) {
    csv.open(csv_path);
    csv << "iteration";
    for (const auto& [step, _] : cfg.schedule) csv << ",recon_s" << step;
    csv << ",pointwise,pointpair,code";
    if (cfg.template_supervision) csv << ",template";
    csv << ",total\n";
  } else {
    csv.open(csv_path, std::ios::app);
  }
  if (!csv) throw DitError(Errc::io, "cannot open " + csv_path);

  std::string config_echo = train_config_to_json(cfg).dump();
  LossBreakdown last;
  for (long iter = start_iter; iter < cfg.iterations; ++iter) {
    last = train_step(model, table, dataset, net_opt, code_adam, cfg, iter,
                      cfg.template_supervision ? &template_samples : nullptr);
    bool log_now = cfg.log_every > 0 &&
                   (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations);
    if (log_now) {
      csv << iter;
      for (const auto& [step, v] : last.recon) csv << "," << v;
      csv << "," << last.pointwise << "," << last.pointpair << "," << last.code;
      if (cfg.template_supervision) csv << "," << last.template_sup;
      csv << "," << last.total << "\n";
      if (!quiet) {
        std::cout << "iter " << iter << " total " << last.total << " recon "
                  << last.recon_total() << " pw " << last.pointwise << " pp "
                  << last.pointpair << " code " << last.code << "\n";
      }
    }
    bool save_now = (cfg.checkpoint_every > 0 &&
                     (iter + 1) % cfg.checkpoint_every == 0) ||
                    iter + 1 == cfg.iterations;
    if (save_now) {
      Checkpoint ck;
      ck.model_config = cfg.model;
      ck.iteration = iter + 1;
      ck.config_echo = config_echo;
      ck.model = model;
      ck.table = table;
      ck.net_adam = net_opt.states;
      save_checkpoint(ck, out_dir + "/checkpoint.ditc");
    }
  }
  csv.flush();
  return {out_dir + "/checkpoint.ditc", csv_path, last};
}

}  // namespace dit
