#pragma once

#include <vector>

#include "dit/nn.hpp"

namespace dit {

struct ModelConfig {
  int latent_dim = 256;
  int hidden = 256;           // LSTM hidden size
  int warp_steps = 8;         // S
  int template_width = 256;
  int template_hidden_layers = 4;

  bool operator==(const ModelConfig&) const = default;
};

struct LatentCode {
  int shape_id = -1;
  Vec values;
};

struct WarpTrajectory {
  std::vector<Vec3> positions;  // p^(0) .. p^(S)
  std::vector<Vec3> alpha, beta;
};

// ---------------------------------------------------------------------------
// Template network: MLP R^3 -> R, softplus hidden activations, linear output.
// ---------------------------------------------------------------------------

struct TemplateNet {
  std::vector<LinearLayer> layers;

  TemplateNet() = default;
  TemplateNet(int width, int hidden_layers) {
    layers.emplace_back("template.l0", width, 3);
    for (int i = 1; i < hidden_layers; ++i)
      layers.emplace_back("template.l" + std::to_string(i), width, width);
    layers.emplace_back("template.out", 1, width);
  }

  void init(Rng& rng) {
    for (size_t i = 0; i + 1 < layers.size(); ++i) layers[i].init(rng);
    // Small output layer keeps initial predictions inside the TSDF band,
    // where the clamped loss has gradient.
    layers.back().init(rng, 0.01);
  }

  std::vector<ParamBlock*> blocks() {
    std::vector<ParamBlock*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
};

struct TemplateCache {
  std::vector<Mat> inputs;  // input to each layer (post-activation)
  std::vector<Mat> preact;  // pre-activation of hidden layers
};

// P: 3 x B -> 1 x B
inline Mat template_forward(const TemplateNet& net, const Mat& p,
                            TemplateCache* cache = nullptr) {
  Mat x = p;
  if (cache) {
    cache->inputs.clear();
    cache->preact.clear();
  }
  for (size_t i = 0; i < net.layers.size(); ++i) {
    if (cache) cache->inputs.push_back(x);
    Mat z = net.layers[i].forward(x);
    if (i + 1 < net.layers.size()) {
      if (cache) cache->preact.push_back(z);
      x = z.unaryExpr([](double v) { return softplus(v); });
    } else {
      x = std::move(z);
    }
  }
  return x;
}

// dOut: 1 x B -> dP: 3 x B (accumulates layer grads)
inline Mat template_backward(TemplateNet& net, const TemplateCache& cache,
                             const Mat& d_out) {
  Mat d = d_out;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    d = net.layers[i].backward(cache.inputs[i], d);
    if (i > 0) {
      const Mat& z = cache.preact[i - 1];
      d = d.cwiseProduct(z.unaryExpr([](double v) { return sigmoid(v); }));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Warp network: LSTM cell over [code ; point] plus a linear head emitting
// the per-step scale/offset pair.
// ---------------------------------------------------------------------------

struct WarpNet {
  LstmCellParams lstm;
  LinearLayer head;  // hidden -> 6 (alpha, beta)
  int steps = 8;

  WarpNet() = default;
  WarpNet(int latent_dim, int hidden, int steps_)
      : lstm("warp.lstm", hidden, latent_dim + 3),
        head("warp.head", 6, hidden), steps(steps_) {}

  void init(Rng& rng) {
    lstm.init(rng);
    // Near-identity warp at init: head weights scaled down, zero bias.
    head.init(rng, 0.01);
  }

  std::vector<ParamBlock*> blocks() {
    auto out = lstm.blocks();
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    return out;
  }
};

struct WarpBatchCache {
  std::vector<Mat> p;          // positions, size steps+1, each 3 x B
  std::vector<Mat> h;          // hidden states h^(1..steps)
  std::vector<Mat> alpha, beta;
  std::vector<LstmCache> cells;
  int steps = 0;
};

// code: latent vector (D), p0: 3 x B. Runs `steps` warp updates.
inline void warp_forward(const WarpNet& net, const Vec& code, const Mat& p0,
                         int steps, WarpBatchCache& cache) {
  const int d = net.lstm.input_dim() - 3;
  if (code.size() != d)
    throw DitError(Errc::mismatch, "warp_forward: latent dimension mismatch");
  if (steps < 0 || steps > net.steps)
    throw DitError(Errc::invalid_arg, "warp_forward: steps out of range");
  const int b = static_cast<int>(p0.cols());
  const int hdim = net.lstm.hidden();

  cache.steps = steps;
  cache.p.assign(1, p0);
  cache.h.clear();
  cache.alpha.clear();
  cache.beta.clear();
  cache.cells.assign(steps, LstmCache{});

  Mat x(d + 3, b);
  x.topRows(d) = code.replicate(1, b);
  Mat h_state = Mat::Zero(hdim, b);
  Mat c_state = Mat::Zero(hdim, b);
  for (int s = 0; s < steps; ++s) {
    x.bottomRows(3) = cache.p.back();
    Mat h_new, c_new;
    lstm_cell_forward(net.lstm, x, h_state, c_state, h_new, c_new,
                      &cache.cells[s]);
    h_state = std::move(h_new);
    c_state = std::move(c_new);
    Mat ab = net.head.forward(h_state);
    cache.h.push_back(h_state);
    cache.alpha.push_back(ab.topRows(3));
    cache.beta.push_back(ab.bottomRows(3));
    cache.p.push_back(cache.p.back() +
                      cache.alpha.back().cwiseProduct(cache.p.back()) +
                      cache.beta.back());
  }
}

// d_p[s] is dL/d p^(s) for s = 1..steps (index 0 ignored; p^(0) is the query
// point). Accumulates network grads, returns dL/d code.
inline Vec warp_backward(WarpNet& net, const WarpBatchCache& cache,
                         const std::vector<Mat>& d_p) {
  const int steps = cache.steps;
  const int d = net.lstm.input_dim() - 3;
  const int b = static_cast<int>(cache.p[0].cols());
  Vec d_code = Vec::Zero(d);
  if (steps == 0) return d_code;

  Mat dp_acc = d_p[steps];
  Mat dh_next = Mat::Zero(net.lstm.hidden(), b);
  Mat dc_next = Mat::Zero(net.lstm.hidden(), b);
  for (int s = steps; s >= 1; --s) {
    const Mat& p_prev = cache.p[s - 1];
    Mat dab(6, b);
    dab.topRows(3) = dp_acc.cwiseProduct(p_prev);
    dab.bottomRows(3) = dp_acc;
    Mat dh = net.head.backward(cache.h[s - 1], dab) + dh_next;
    Mat dx, dh_prev, dc_prev;
    lstm_cell_backward(net.lstm, cache.cells[s - 1], dh, dc_next, dx, dh_prev,
                       dc_prev);
    d_code += dx.topRows(d).rowwise().sum();
    Mat dp_prev =
        dp_acc.cwiseProduct((1.0 + cache.alpha[s - 1].array()).matrix()) +
        dx.bottomRows(3);
    if (s - 1 >= 1) dp_prev += d_p[s - 1];
    dp_acc = std::move(dp_prev);
    dh_next = std::move(dh_prev);
    dc_next = std::move(dc_prev);
  }
  return d_code;
}

// ---------------------------------------------------------------------------
// Composed model F(p, c) = T(W(p, c))
// ---------------------------------------------------------------------------

struct DitModel {
  ModelConfig config;
  WarpNet warp_net;
  TemplateNet template_net;

  DitModel() = default;
  explicit DitModel(const ModelConfig& cfg)
      : config(cfg), warp_net(cfg.latent_dim, cfg.hidden, cfg.warp_steps),
        template_net(cfg.template_width, cfg.template_hidden_layers) {}

  void init(Rng& rng) {
    warp_net.init(rng);
    template_net.init(rng);
  }

  std::vector<ParamBlock*> params() {
    auto out = warp_net.blocks();
    auto t = template_net.blocks();
    out.insert(out.end(), t.begin(), t.end());
    return out;
  }

  std::vector<const ParamBlock*> params() const {
    auto blocks = const_cast<DitModel*>(this)->params();
    return {blocks.begin(), blocks.end()};
  }

  WarpTrajectory warp(const Vec3& p, const Vec& code) const {
    WarpBatchCache cache;
    warp_forward(warp_net, code, Mat(p), config.warp_steps, cache);
    WarpTrajectory traj;
    for (const auto& m : cache.p) traj.positions.push_back(Vec3(m.col(0)));
    for (const auto& m : cache.alpha) traj.alpha.push_back(Vec3(m.col(0)));
    for (const auto& m : cache.beta) traj.beta.push_back(Vec3(m.col(0)));
    return traj;
  }

  Vec3 canonical_position(const Vec3& p, const Vec& code) const {
    WarpBatchCache cache;
    warp_forward(warp_net, code, Mat(p), config.warp_steps, cache);
    return Vec3(cache.p.back().col(0));
  }

  double template_sdf(const Vec3& p) const {
    return template_forward(template_net, Mat(p))(0, 0);
  }

  // steps = 0 queries the bare template; steps = S the full model.
  double forward_sdf(const Vec3& p, const Vec& code, int steps) const {
    WarpBatchCache cache;
    warp_forward(warp_net, code, Mat(p), steps, cache);
    return template_forward(template_net, cache.p.back())(0, 0);
  }

  double forward_sdf(const Vec3& p, const Vec& code) const {
    return forward_sdf(p, code, config.warp_steps);
  }

  // Batched query at a fixed step count. P: 3 x B -> 1 x B.
  Mat forward_sdf_batch(const Mat& p, const Vec& code, int steps) const {
    WarpBatchCache cache;
    warp_forward(warp_net, code, p, steps, cache);
    return template_forward(template_net, cache.p.back());
  }
};

}  // namespace dit
