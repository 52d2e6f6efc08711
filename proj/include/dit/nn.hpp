#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dit/common.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

struct ParamBlock {
  std::string name;
  Mat value;  // biases are stored as n x 1
  Mat grad;

  ParamBlock() = default;
  ParamBlock(std::string n, int rows, int cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)),
        grad(Mat::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }

  void init_uniform(Rng& rng, double scale) {
    for (int j = 0; j < value.cols(); ++j)
      for (int i = 0; i < value.rows(); ++i)
        value(i, j) = rng.uniform(-scale, scale);
  }
};

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------
// Linear layer
// ---------------------------------------------------------------------------

struct LinearLayer {
  ParamBlock weight;  // out x in
  ParamBlock bias;    // out x 1

  LinearLayer() = default;
  LinearLayer(const std::string& name, int out, int in)
      : weight(name + ".W", out, in), bias(name + ".b", out, 1) {}

  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }

  void init(Rng& rng, double weight_scale = 1.0) {
    weight.init_uniform(rng, weight_scale / std::sqrt(static_cast<double>(in_dim())));
    bias.value.setZero();
  }

  // X: in x B  ->  out x B
  Mat forward(const Mat& x) const {
    if (x.rows() != in_dim())
      throw DitError(Errc::mismatch, "linear_forward: input dim mismatch for " + weight.name);
    return (weight.value * x).colwise() + Eigen::VectorXd(bias.value.col(0));
  }

  // Accumulates dW, db; returns dX.
  Mat backward(const Mat& x, const Mat& dy) {
    if (dy.rows() != out_dim() || dy.cols() != x.cols())
      throw DitError(Errc::mismatch, "linear_backward: shape mismatch for " + weight.name);
    weight.grad.noalias() += dy * x.transpose();
    bias.grad.col(0) += dy.rowwise().sum();
    return weight.value.transpose() * dy;
  }
};

// ---------------------------------------------------------------------------
// LSTM cell (gate order i, f, g, o; no peepholes; forget bias init 1)
// ---------------------------------------------------------------------------

struct LstmCellParams {
  // gate weights over the input, recurrent weights over the hidden state
  ParamBlock wi, wf, wg, wo;  // H x In
  ParamBlock ui, uf, ug, uo;  // H x H
  ParamBlock bi, bf, bg, bo;  // H x 1

  LstmCellParams() = default;
  LstmCellParams(const std::string& name, int hidden, int input)
      : wi(name + ".Wi", hidden, input), wf(name + ".Wf", hidden, input),
        wg(name + ".Wg", hidden, input), wo(name + ".Wo", hidden, input),
        ui(name + ".Ui", hidden, hidden), uf(name + ".Uf", hidden, hidden),
        ug(name + ".Ug", hidden, hidden), uo(name + ".Uo", hidden, hidden),
        bi(name + ".bi", hidden, 1), bf(name + ".bf", hidden, 1),
        bg(name + ".bg", hidden, 1), bo(name + ".bo", hidden, 1) {}

  int hidden() const { return static_cast<int>(ui.value.rows()); }
  int input_dim() const { return static_cast<int>(wi.value.cols()); }

  void init(Rng& rng) {
    double sw = 1.0 / std::sqrt(static_cast<double>(input_dim()));
    double su = 1.0 / std::sqrt(static_cast<double>(hidden()));
    wi.init_uniform(rng, sw);
    wf.init_uniform(rng, sw);
    wg.init_uniform(rng, sw);
    wo.init_uniform(rng, sw);
    ui.init_uniform(rng, su);
    uf.init_uniform(rng, su);
    ug.init_uniform(rng, su);
    uo.init_uniform(rng, su);
    bi.value.setZero();
    bf.value.setConstant(1.0);
    bg.value.setZero();
    bo.value.setZero();
  }

  std::vector<ParamBlock*> blocks() {
    return {&wi, &wf, &wg, &wo, &ui, &uf, &ug, &uo, &bi, &bf, &bg, &bo};
  }
};

struct LstmCache {
  Mat x, h_prev, c_prev;
  Mat i, f, g, o;      // gate activations
  Mat c, tanh_c;       // new cell state
};

// x: In x B, h_prev/c_prev: H x B. Returns (h, c) via out params.
inline void lstm_cell_forward(const LstmCellParams& p, const Mat& x,
                              const Mat& h_prev, const Mat& c_prev, Mat& h_out,
                              Mat& c_out, LstmCache* cache = nullptr) {
  if (x.rows() != p.input_dim() || h_prev.rows() != p.hidden() ||
      c_prev.rows() != p.hidden() || h_prev.cols() != x.cols() ||
      c_prev.cols() != x.cols())
    throw DitError(Errc::mismatch, "lstm_cell_forward: shape mismatch");

  auto affine = [&](const ParamBlock& w, const ParamBlock& u, const ParamBlock& b) {
    Mat z = w.value * x;
    z.noalias() += u.value * h_prev;
    z.colwise() += Eigen::VectorXd(b.value.col(0));
    return z;
  };
  Mat zi = affine(p.wi, p.ui, p.bi);
  Mat zf = affine(p.wf, p.uf, p.bf);
  Mat zg = affine(p.wg, p.ug, p.bg);
  Mat zo = affine(p.wo, p.uo, p.bo);
  Mat gi = zi.unaryExpr([](double v) { return sigmoid(v); });
  Mat gf = zf.unaryExpr([](double v) { return sigmoid(v); });
  Mat gg = zg.array().tanh().matrix();
  Mat go = zo.unaryExpr([](double v) { return sigmoid(v); });
  c_out = gf.cwiseProduct(c_prev) + gi.cwiseProduct(gg);
  Mat tc = c_out.array().tanh().matrix();
  h_out = go.cwiseProduct(tc);
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->i = std::move(gi);
    cache->f = std::move(gf);
    cache->g = std::move(gg);
    cache->o = std::move(go);
    cache->c = c_out;
    cache->tanh_c = std::move(tc);
  }
}

// Exact VJP; accumulates parameter grads, returns (dx, dh_prev, dc_prev).
inline void lstm_cell_backward(LstmCellParams& p, const LstmCache& k,
                               const Mat& dh, const Mat& dc_in, Mat& dx,
                               Mat& dh_prev, Mat& dc_prev) {
  Mat dc = dc_in + dh.cwiseProduct(k.o).cwiseProduct(
                       (1.0 - k.tanh_c.array().square()).matrix());
  Mat do_ = dh.cwiseProduct(k.tanh_c);
  Mat di = dc.cwiseProduct(k.g);
  Mat dg = dc.cwiseProduct(k.i);
  Mat df = dc.cwiseProduct(k.c_prev);
  dc_prev = dc.cwiseProduct(k.f);

  Mat dzi = di.cwiseProduct(k.i.cwiseProduct((1.0 - k.i.array()).matrix()));
  Mat dzf = df.cwiseProduct(k.f.cwiseProduct((1.0 - k.f.array()).matrix()));
  Mat dzg = dg.cwiseProduct((1.0 - k.g.array().square()).matrix());
  Mat dzo = do_.cwiseProduct(k.o.cwiseProduct((1.0 - k.o.array()).matrix()));

  dx = Mat::Zero(k.x.rows(), k.x.cols());
  dh_prev = Mat::Zero(k.h_prev.rows(), k.h_prev.cols());
  auto accum = [&](ParamBlock& w, ParamBlock& u, ParamBlock& b, const Mat& dz) {
    w.grad.noalias() += dz * k.x.transpose();
    u.grad.noalias() += dz * k.h_prev.transpose();
    b.grad.col(0) += dz.rowwise().sum();
    dx.noalias() += w.value.transpose() * dz;
    dh_prev.noalias() += u.value.transpose() * dz;
  };
  accum(p.wi, p.ui, p.bi, dzi);
  accum(p.wf, p.uf, p.bf, dzf);
  accum(p.wg, p.ug, p.bg, dzg);
  accum(p.wo, p.uo, p.bo, dzo);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Mat m, v;
  long step = 0;

  static AdamState like(const ParamBlock& p) {
    AdamState s;
    s.m = Mat::Zero(p.value.rows(), p.value.cols());
    s.v = Mat::Zero(p.value.rows(), p.value.cols());
    return s;
  }
};

// Standard Adam with bias correction; zeroes the gradient afterwards.
inline void adam_step(AdamState& s, ParamBlock& p, const AdamConfig& cfg) {
  if (s.m.rows() != p.value.rows() || s.m.cols() != p.value.cols())
    throw DitError(Errc::mismatch, "adam_step: state shape mismatch for " + p.name);
  s.step += 1;
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * p.grad;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  Mat mhat = s.m / bc1;
  Mat vhat = s.v / bc2;
  p.value.array() -= cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.eps);
  p.zero_grad();
}

// Bundles states for a fixed-order parameter list.
struct Optimizer {
  AdamConfig config;
  std::vector<AdamState> states;

  explicit Optimizer(const std::vector<ParamBlock*>& params,
                     const AdamConfig& cfg = {})
      : config(cfg) {
    for (auto* p : params) states.push_back(AdamState::like(*p));
  }

  void step(const std::vector<ParamBlock*>& params) {
    if (params.size() != states.size())
      throw DitError(Errc::mismatch, "optimizer: parameter list changed size");
    for (size_t i = 0; i < params.size(); ++i)
      adam_step(states[i], *params[i], config);
  }
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checker
// ---------------------------------------------------------------------------

// loss(with_grad): returns the scalar loss; when with_grad is true it must
// also accumulate analytic gradients into the blocks (which are zeroed here
// beforehand). Central differences; worst relative error over all scalars.
inline double grad_check(const std::function<double(bool)>& loss,
                         const std::vector<ParamBlock*>& params,
                         double epsilon = 1e-6) {
  for (auto* p : params) p->zero_grad();
  loss(true);
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (size_t b = 0; b < params.size(); ++b) {
    ParamBlock& p = *params[b];
    for (int j = 0; j < p.value.cols(); ++j) {
      for (int i = 0; i < p.value.rows(); ++i) {
        double saved = p.value(i, j);
        p.value(i, j) = saved + epsilon;
        double up = loss(false);
        p.value(i, j) = saved - epsilon;
        double down = loss(false);
        p.value(i, j) = saved;
        double numeric = (up - down) / (2.0 * epsilon);
        double a = analytic[b](i, j);
        double err = std::abs(a - numeric) /
                     std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, err);
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  return worst;
}

}  // namespace dit
