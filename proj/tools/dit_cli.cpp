#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dit/eval.hpp"
#include "dit/inference.hpp"
#include "dit/io.hpp"
#include "dit/training.hpp"

namespace fs = std::filesystem;
using namespace dit;

namespace {

// Relative inputs that don't exist locally fall back to DIT_DATA_DIR.
std::string resolve_input(const std::string& path) {
  if (path.empty() || fs::exists(path)) return path;
  if (fs::path(path).is_absolute()) return path;
  const char* base = std::getenv("DIT_DATA_DIR");
  if (!base) return path;
  fs::path candidate = fs::path(base) / path;
  return fs::exists(candidate) ? candidate.string() : path;
}

Checkpoint load_checkpoint_arg(const std::string& path) {
  return load_checkpoint(resolve_input(path));
}

std::vector<Vec3> mesh_vertex_pool(const Mesh& mesh) {
  if (mesh.vertices.empty())
    throw DitError(Errc::numeric, "extracted mesh is empty; cannot build a pool");
  return mesh.vertices;
}

KeypointSet load_keypoints_csv(const std::string& path) {
  auto f = detail::open_in(path);
  KeypointSet out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("label", 0) == 0) continue;
    Keypoint kp;
    double x, y, z;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &kp.label, &x, &y, &z) != 4)
      throw DitError(Errc::config, "bad keypoint row in " + path + ": " + line);
    kp.point = Vec3(x, y, z);
    out.push_back(kp);
  }
  if (out.empty()) throw DitError(Errc::config, "no keypoints in " + path);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_gen_data(const std::string& shapes_path, const std::string& out_path,
                 int n_surface, int n_uniform, double noise, double delta,
                 uint64_t seed) {
  auto specs = load_shape_specs(resolve_input(shapes_path));
  if (specs.empty()) throw DitError(Errc::config, "no shapes in " + shapes_path);
  std::vector<SampleSet> sets;
  sets.reserve(specs.size());
  for (size_t k = 0; k < specs.size(); ++k)
    sets.push_back(sample_sdf(specs[k], n_surface, n_uniform, noise, delta,
                              derive_seed(seed, k), static_cast<int>(k)));
  save_sample_sets(sets, out_path);
  std::cout << "wrote " << sets.size() << " shapes ("
            << (n_surface + n_uniform) << " samples each) to " << out_path
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, bool resume, int seed_override,
              int threads_override) {
  TrainConfig cfg = load_train_config(resolve_input(config_path));
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  if (threads_override > 0) cfg.threads = threads_override;
  auto dataset = load_sample_sets(resolve_input(data_path));
  if (dataset.empty()) throw DitError(Errc::config, "empty dataset: " + data_path);

  DitModel model(cfg.model);
  LatentTable table;
  long start_iter = 0;
  Optimizer opt({}, AdamConfig{cfg.lr_net});

  std::string ck_path = out_dir + "/checkpoint.ditc";
  if (resume && fs::exists(ck_path)) {
    Checkpoint ck = load_checkpoint(ck_path);
    if (!(ck.model_config == cfg.model))
      throw DitError(Errc::mismatch,
                     "checkpoint hyperparameters disagree with the config");
    model = std::move(ck.model);
    table = std::move(ck.table);
    start_iter = ck.iteration;
    opt = Optimizer(model.params(), AdamConfig{cfg.lr_net});
    if (!ck.net_adam.empty()) opt.states = std::move(ck.net_adam);
  } else {
    Rng rng(derive_seed(cfg.seed, 0x0d17ULL));
    model.init(rng);
    table = init_latents(static_cast<int>(dataset.size()), cfg.model.latent_dim,
                         cfg.latent_init_std, cfg.seed);
    for (size_t k = 0; k < dataset.size(); ++k)
      table.ids[k] = dataset[k].shape_id;
    opt = Optimizer(model.params(), AdamConfig{cfg.lr_net});
  }

  auto res = train(model, table, opt, dataset, cfg, out_dir, start_iter);
  std::cout << "final total loss " << res.final_loss.total << "; checkpoint "
            << res.checkpoint_path << "\n";
  return 0;
}

int cmd_reconstruct(const std::string& ck_path, int shape_id,
                    const std::string& samples_path, int sample_index,
                    int resolution, long iterations, double lr, uint64_t seed,
                    int threads, const std::string& out_path) {
  Checkpoint ck = load_checkpoint_arg(ck_path);
  Vec code;
  if (!samples_path.empty()) {
    auto sets = load_sample_sets(resolve_input(samples_path));
    if (sample_index < 0 || sample_index >= static_cast<int>(sets.size()))
      throw DitError(Errc::invalid_arg, "sample index out of range");
    InferLatentOptions opt;
    opt.iterations = iterations;
    opt.lr = lr;
    opt.seed = seed;
    code = infer_latent(ck.model, sets[sample_index], opt);
  } else {
    code = ck.table.code_for(shape_id);
  }
  auto res = extract_mesh(ck.model, code, resolution, -1, threads);
  if (res.empty)
    std::cerr << "warning: no zero crossing; wrote an empty mesh\n";
  write_obj(res.mesh, out_path);
  std::cout << "wrote " << res.mesh.vertices.size() << " vertices, "
            << res.mesh.triangles.size() << " triangles to " << out_path << "\n";
  return 0;
}

int cmd_template(const std::string& ck_path, int resolution, int threads,
                 const std::string& out_path) {
  Checkpoint ck = load_checkpoint_arg(ck_path);
  auto res = extract_template_mesh(ck.model, resolution, threads);
  if (res.empty)
    std::cerr << "warning: no zero crossing; wrote an empty mesh\n";
  write_obj(res.mesh, out_path);
  std::cout << "wrote " << res.mesh.vertices.size() << " vertices, "
            << res.mesh.triangles.size() << " triangles to " << out_path << "\n";
  return 0;
}

int cmd_interp(const std::string& ck_path, int id1, int id2, int steps,
               int resolution, int threads, const std::string& out_dir) {
  if (steps < 1) throw DitError(Errc::invalid_arg, "interp: steps must be >= 1");
  Checkpoint ck = load_checkpoint_arg(ck_path);
  Vec c1 = ck.table.code_for(id1), c2 = ck.table.code_for(id2);
  fs::create_directories(out_dir);
  for (int i = 0; i <= steps; ++i) {
    double t = static_cast<double>(i) / steps;
    Vec c = interpolate_codes(c1, c2, t);
    auto res = extract_mesh(ck.model, c, resolution, -1, threads);
    char name[64];
    std::snprintf(name, sizeof(name), "interp_%03d.obj", i);
    write_obj(res.mesh, out_dir + "/" + name);
    std::cout << "t=" << t << " -> " << name << " ("
              << res.mesh.vertices.size() << " vertices)\n";
  }
  return 0;
}

int cmd_correspond(const std::string& ck_path, int source_id, int target_id,
                   const std::string& keypoints_path, int dense_count,
                   int pool_resolution, uint64_t seed,
                   const std::string& out_path) {
  Checkpoint ck = load_checkpoint_arg(ck_path);
  Vec cs = ck.table.code_for(source_id), ct = ck.table.code_for(target_id);

  std::vector<Vec3> sources;
  if (!keypoints_path.empty()) {
    for (const auto& kp : load_keypoints_csv(resolve_input(keypoints_path)))
      sources.push_back(kp.point);
  } else {
    auto src_mesh = extract_mesh(ck.model, cs, pool_resolution);
    auto verts = mesh_vertex_pool(src_mesh.mesh);
    Rng rng(derive_seed(seed, 0xc0deULL));
    std::vector<int> order(verts.size());
    for (size_t i = 0; i < verts.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    int n = std::min<int>(dense_count, static_cast<int>(verts.size()));
    for (int i = 0; i < n; ++i) sources.push_back(verts[order[i]]);
  }

  auto target_mesh = extract_mesh(ck.model, ct, pool_resolution);
  auto pool = mesh_vertex_pool(target_mesh.mesh);
  auto warped = warp_pool(ck.model, ct, pool);

  auto f = detail::open_out(out_path);
  f << "source_x,source_y,source_z,target_x,target_y,target_z,canonical_distance\n";
  for (const auto& p : sources) {
    auto res = correspond(ck.model, p, cs, ct, pool, &warped);
    f << p.x() << "," << p.y() << "," << p.z() << "," << res.target_point.x()
      << "," << res.target_point.y() << "," << res.target_point.z() << ","
      << res.canonical_distance << "\n";
  }
  std::cout << "wrote " << sources.size() << " correspondences to " << out_path
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ck_path, const std::string& shapes_path,
             const std::string& metrics_csv, int resolution, int surface_samples,
             int emd_subsample, uint64_t seed, int threads,
             const std::string& out_path) {
  Checkpoint ck = load_checkpoint_arg(ck_path);
  auto specs = load_shape_specs(resolve_input(shapes_path));
  if (specs.empty()) throw DitError(Errc::config, "no shapes in " + shapes_path);

  bool want_chamfer = metrics_csv.find("chamfer") != std::string::npos;
  bool want_emd = metrics_csv.find("emd") != std::string::npos;
  if (!want_chamfer && !want_emd)
    throw DitError(Errc::config, "metrics must include chamfer and/or emd");

  json report;
  report["shapes"] = json::array();
  std::vector<double> chamfers, emds;
  for (size_t k = 0; k < specs.size(); ++k) {
    int shape_id = static_cast<int>(k);
    Vec code = ck.table.code_for(shape_id);
    auto mesh = extract_mesh(ck.model, code, resolution, -1, threads);
    if (mesh.empty)
      throw DitError(Errc::numeric, "empty reconstruction for shape " +
                                        std::to_string(shape_id));
    auto predicted = sample_mesh_surface(mesh.mesh, surface_samples,
                                         derive_seed(seed, 2 * k));
    auto truth = sample_surface_points(specs[k], surface_samples,
                                       derive_seed(seed, 2 * k + 1));
    json row;
    row["shape_id"] = shape_id;
    if (want_chamfer) {
      double c = chamfer(predicted, truth) * 1e3;
      chamfers.push_back(c);
      row["chamfer_x1e3"] = c;
    }
    if (want_emd) {
      double e = emd_approx(predicted, truth, emd_subsample, derive_seed(seed, 777 + k));
      emds.push_back(e);
      row["emd"] = e;
    }
    report["shapes"].push_back(row);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
  };
  if (want_chamfer) {
    report["chamfer_x1e3_mean"] = mean(chamfers);
    report["chamfer_x1e3_median"] = median(chamfers);
  }
  if (want_emd) {
    report["emd_mean"] = mean(emds);
    report["emd_median"] = median(emds);
  }
  auto f = detail::open_out(out_path);
  f << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep implicit template toolkit"};
  app.require_subcommand(1);

  // gen-data ----------------------------------------------------------------
  std::string gd_shapes, gd_out = "samples.dits";
  int gd_surface = 4096, gd_uniform = 1024;
  double gd_noise = 0.01, gd_delta = 0.1;
  uint64_t gd_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Sample SDF training data from shape specs");
  gen->add_option("--shapes", gd_shapes, "shape spec JSON")->required();
  gen->add_option("--out", gd_out, "output .dits file")->capture_default_str();
  gen->add_option("--surface-samples", gd_surface, "near-surface samples per shape")->capture_default_str();
  gen->add_option("--uniform-samples", gd_uniform, "uniform samples per shape")->capture_default_str();
  gen->add_option("--noise", gd_noise, "surface perturbation sigma")->capture_default_str();
  gen->add_option("--delta", gd_delta, "TSDF clamp bound")->capture_default_str();
  gen->add_option("--seed", gd_seed, "RNG seed")->capture_default_str();

  // train ---------------------------------------------------------------
  std::string tr_config, tr_data, tr_out = "run";
  bool tr_resume = false;
  int tr_seed = -1, tr_threads = 0;
  auto* trn = app.add_subcommand("train", "Train model and latent table");
  trn->add_option("--config", tr_config, "train config JSON")->required();
  trn->add_option("--data", tr_data, "sample .dits file")->required();
  trn->add_option("--out", tr_out, "output directory")->capture_default_str();
  trn->add_flag("--resume", tr_resume, "continue from out/checkpoint.ditc");
  trn->add_option("--seed", tr_seed, "override config seed");
  trn->add_option("--threads", tr_threads, "override config threads");

  // reconstruct ---------------------------------------------------------
  std::string rc_ck, rc_samples, rc_out = "mesh.obj";
  int rc_shape = 0, rc_index = 0, rc_res = 128, rc_threads = 1;
  long rc_iters = 800;
  double rc_lr = 5e-3;
  uint64_t rc_seed = 0;
  auto* rec = app.add_subcommand("reconstruct", "Extract a shape mesh from a checkpoint");
  rec->add_option("--checkpoint", rc_ck, "checkpoint file")->required();
  rec->add_option("--shape-id", rc_shape, "training shape id")->capture_default_str();
  rec->add_option("--samples", rc_samples, "unseen-shape .dits file (infers a latent)");
  rec->add_option("--index", rc_index, "shape index inside --samples")->capture_default_str();
  rec->add_option("--resolution", rc_res, "grid resolution")->capture_default_str();
  rec->add_option("--iterations", rc_iters, "latent inference iterations")->capture_default_str();
  rec->add_option("--lr", rc_lr, "latent inference learning rate")->capture_default_str();
  rec->add_option("--seed", rc_seed, "latent inference seed")->capture_default_str();
  rec->add_option("--threads", rc_threads, "evaluation threads")->capture_default_str();
  rec->add_option("--out", rc_out, "output OBJ path")->capture_default_str();

  // template ------------------------------------------------------------
  std::string tp_ck, tp_out = "template.obj";
  int tp_res = 128, tp_threads = 1;
  auto* tpl = app.add_subcommand("template", "Extract the learned template mesh");
  tpl->add_option("--checkpoint", tp_ck, "checkpoint file")->required();
  tpl->add_option("--resolution", tp_res, "grid resolution")->capture_default_str();
  tpl->add_option("--threads", tp_threads, "evaluation threads")->capture_default_str();
  tpl->add_option("--out", tp_out, "output OBJ path")->capture_default_str();

  // interp ----------------------------------------------------------------
  std::string ip_ck, ip_out = "interp";
  int ip_id1 = 0, ip_id2 = 1, ip_steps = 4, ip_res = 64, ip_threads = 1;
  auto* itp = app.add_subcommand("interp", "Extract meshes along a latent interpolation");
  itp->add_option("--checkpoint", ip_ck, "checkpoint file")->required();
  itp->add_option("--id1", ip_id1, "first shape id")->capture_default_str();
  itp->add_option("--id2", ip_id2, "second shape id")->capture_default_str();
  itp->add_option("--steps", ip_steps, "interpolation intervals")->capture_default_str();
  itp->add_option("--resolution", ip_res, "grid resolution")->capture_default_str();
  itp->add_option("--threads", ip_threads, "evaluation threads")->capture_default_str();
  itp->add_option("--out", ip_out, "output directory")->capture_default_str();

  // correspond --------------------------------------------------------------
  std::string cp_ck, cp_kp, cp_out = "correspondences.csv";
  int cp_src = 0, cp_tgt = 1, cp_dense = 200, cp_pool_res = 128;
  uint64_t cp_seed = 0;
  auto* cor = app.add_subcommand("correspond", "Map surface points between shapes");
  cor->add_option("--checkpoint", cp_ck, "checkpoint file")->required();
  cor->add_option("--source", cp_src, "source shape id")->capture_default_str();
  cor->add_option("--target", cp_tgt, "target shape id")->capture_default_str();
  cor->add_option("--keypoints", cp_kp, "CSV of label,x,y,z source points (default: dense)");
  cor->add_option("--count", cp_dense, "dense mode: number of source points")->capture_default_str();
  cor->add_option("--pool-resolution", cp_pool_res, "mesh resolution for the pools")->capture_default_str();
  cor->add_option("--seed", cp_seed, "dense-mode sampling seed")->capture_default_str();
  cor->add_option("--out", cp_out, "output CSV path")->capture_default_str();

  // eval ---------------------------------------------------------------
  std::string ev_ck, ev_shapes, ev_metrics = "chamfer", ev_out = "eval.json";
  int ev_res = 128, ev_samples = 30000, ev_emd = 500, ev_threads = 1;
  uint64_t ev_seed = 0;
  auto* evl = app.add_subcommand("eval", "Score reconstructions against analytic shapes");
  evl->add_option("--checkpoint", ev_ck, "checkpoint file")->required();
  evl->add_option("--shapes", ev_shapes, "shape spec JSON (ids = array order)")->required();
  evl->add_option("--metrics", ev_metrics, "comma list: chamfer,emd")->capture_default_str();
  evl->add_option("--resolution", ev_res, "reconstruction grid resolution")->capture_default_str();
  evl->add_option("--surface-samples", ev_samples, "points per cloud")->capture_default_str();
  evl->add_option("--emd-subsample", ev_emd, "EMD subsample size")->capture_default_str();
  evl->add_option("--seed", ev_seed, "sampling seed")->capture_default_str();
  evl->add_option("--threads", ev_threads, "evaluation threads")->capture_default_str();
  evl->add_option("--out", ev_out, "output JSON path")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gd_shapes, gd_out, gd_surface, gd_uniform, gd_noise,
                          gd_delta, gd_seed);
    if (trn->parsed())
      return cmd_train(tr_config, tr_data, tr_out, tr_resume, tr_seed, tr_threads);
    if (rec->parsed())
      return cmd_reconstruct(rc_ck, rc_shape, rc_samples, rc_index, rc_res,
                             rc_iters, rc_lr, rc_seed, rc_threads, rc_out);
    if (tpl->parsed()) return cmd_template(tp_ck, tp_res, tp_threads, tp_out);
    if (itp->parsed())
      return cmd_interp(ip_ck, ip_id1, ip_id2, ip_steps, ip_res, ip_threads, ip_out);
    if (cor->parsed())
      return cmd_correspond(cp_ck, cp_src, cp_tgt, cp_kp, cp_dense, cp_pool_res,
                            cp_seed, cp_out);
    if (evl->parsed())
      return cmd_eval(ev_ck, ev_shapes, ev_metrics, ev_res, ev_samples, ev_emd,
                      ev_seed, ev_threads, ev_out);
  } catch (const DitError& e) {
    std::cerr << "error code=" << static_cast<int>(e.code()) << " " << e.what()
              << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error code=1 " << e.what() << "\n";
    return 1;
  }
  return 0;
}
