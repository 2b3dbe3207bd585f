#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "nmfnav/dataset.hpp"
#include "nmfnav/error.hpp"
#include "nmfnav/nets.hpp"
#include "nmfnav/ops.hpp"
#include "nmfnav/rng.hpp"
#include "nmfnav/tensor.hpp"

namespace nmfnav {

// ---------------------------------------------------------------- optimizer

/// Velocity per trainable parameter, in ModelWeights::trainable() order.
struct MomentumState {
  std::vector<std::string> names;
  std::vector<std::vector<float>> velocity;

  static MomentumState zeros_like(const ModelWeights& w) {
    MomentumState s;
    for (const auto& [name, t] : w.trainable()) {
      s.names.push_back(name);
      s.velocity.emplace_back(t.numel(), 0.0f);
    }
    return s;
  }
};

/// v <- mu v + g; w <- w - lr v. Gradients are read from the weights' own grad
/// buffers. Nothing is modified unless every gradient is finite.
inline void sgd_step(ModelWeights& weights, MomentumState& vel, double lr, double momentum) {
  auto params = weights.trainable();
  if (params.size() != vel.velocity.size()) throw ShapeError("sgd_step: momentum state does not match weights");
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, t] = params[p];
    if (name != vel.names[p] || t.numel() != vel.velocity[p].size())
      throw ShapeError("sgd_step: momentum state does not match weight " + name);
    if (!t.has_grad()) throw GraphError("sgd_step: no gradient for " + name);
    for (float g : t.grad())
      if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient in " + name);
  }
  const float mu = static_cast<float>(momentum), eta = static_cast<float>(lr);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& t = params[p].second;
    auto& v = vel.velocity[p];
    auto w = t.data();
    auto g = t.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      w[i] -= eta * v[i];
    }
  }
}

// ---------------------------------------------------------------- batches

struct Batch {
  Tensor rgb, cloud, dmap, target;
  std::size_t size() const { return target.numel(); }
};

/// Stacks samples into network inputs. The cloud and distance map are left
/// undefined for rgbnet.
inline Batch make_batch(const Dataset& d, std::span<const std::size_t> idx, Arch arch) {
  if (idx.empty()) throw ShapeError("make_batch: empty index list");
  const NetConfig& c = d.config;
  const std::size_t n = idx.size();
  const std::size_t rgb_n = 3 * c.rgb_h * c.rgb_w, pts_n = c.points * 3, dm_n = c.dmap_h * c.dmap_w;
  Batch b;
  b.rgb = Tensor(Shape{n, 3, c.rgb_h, c.rgb_w});
  b.target = Tensor(Shape{n});
  if (arch == Arch::nmfnet) {
    b.cloud = Tensor(Shape{n, c.points, 3});
    b.dmap = Tensor(Shape{n, 1, c.dmap_h, c.dmap_w});
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (idx[k] >= d.size()) throw RangeError("make_batch: index " + std::to_string(idx[k]) + " out of range");
    const Sample& s = d.samples[idx[k]];
    if (s.rgb.size() != rgb_n) throw ShapeError("make_batch: sample rgb does not match dataset config");
    std::copy(s.rgb.begin(), s.rgb.end(), b.rgb.data().begin() + static_cast<std::ptrdiff_t>(k * rgb_n));
    b.target[k] = s.steering;
    if (arch == Arch::nmfnet) {
      if (s.cloud.size() != pts_n || s.dmap.size() != dm_n) throw ShapeError("make_batch: sample does not match dataset config");
      std::copy(s.cloud.begin(), s.cloud.end(), b.cloud.data().begin() + static_cast<std::ptrdiff_t>(k * pts_n));
      std::copy(s.dmap.begin(), s.dmap.end(), b.dmap.data().begin() + static_cast<std::ptrdiff_t>(k * dm_n));
    }
  }
  return b;
}

inline ForwardResult<float> forward(Tape& tape, const ModelWeights& w, const Batch& b, const RunOptions& opt) {
  return w.arch() == Arch::rgbnet ? rgbnet_forward(tape, w, b.rgb, opt)
                                  : nmfnet_forward(tape, w, b.rgb, b.cloud, b.dmap, opt);
}

// ---------------------------------------------------------------- training

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch = 8;
  std::size_t epochs = 20;
  std::size_t max_steps = 0;  // 0: no cap
  std::uint64_t seed = 1;
  Arch arch = Arch::nmfnet;

  void validate() const {
    if (!(lr > 0)) throw RangeError("TrainConfig: lr must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw RangeError("TrainConfig: momentum must be in [0,1)");
    if (batch < 1) throw RangeError("TrainConfig: batch must be >= 1");
    if (epochs < 1) throw RangeError("TrainConfig: epochs must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"lr", lr}, {"momentum", momentum}, {"batch", batch}, {"epochs", epochs},
            {"max_steps", max_steps}, {"seed", seed}, {"arch", to_string(arch)}};
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;  // cumulative
  double loss = 0;        // sample-weighted mean of batch losses

  nlohmann::json to_json() const { return {{"epoch", epoch}, {"steps", steps}, {"loss", loss}}; }
};

struct TrainResult {
  ModelWeights weights;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_loss;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::size_t step, double loss)> on_step;
};

/// Mini-batch SGD on MSE. Batches come from a per-epoch seeded shuffle; the last
/// partial batch is kept. Starts from `init` when given, else seeded init.
inline TrainResult train(const Dataset& d, const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}, const ModelWeights* init = nullptr) {
  cfg.validate();
  if (train_idx.empty()) throw RangeError("train: empty training split");
  TrainResult r;
  r.weights = init ? init->clone() : init_weights<float>(cfg.arch, d.config, mix_seed(cfg.seed, 0x1417));
  if (r.weights.arch() != cfg.arch) throw ShapeError("train: initial weights have the wrong arch tag");
  MomentumState vel = MomentumState::zeros_like(r.weights);
  Rng dropout_rng(mix_seed(cfg.seed, 0xd209));
  RunOptions opt{Mode::train, &dropout_rng, d.config.dropout};
  std::vector<std::size_t> order = train_idx;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle(mix_seed(cfg.seed, 0x5400 + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double sum = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      const Batch b = make_batch(d, std::span<const std::size_t>(order).subspan(start, n), cfg.arch);
      Tape tape;
      r.weights.zero_grad();
      const auto out = forward(tape, r.weights, b, opt);
      const Tensor loss = ops::mse_loss(tape, out.output, b.target);
      const double l = loss.item();
      if (!std::isfinite(l))
        throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      tape.backward(loss);
      sgd_step(r.weights, vel, cfg.lr, cfg.momentum);
      ++step;
      sum += l * static_cast<double>(n);
      seen += n;
      r.step_loss.push_back(l);
      if (hooks.on_step) hooks.on_step(step, l);
    }
    if (seen == 0) break;
    r.epochs.push_back({epoch, step, sum / static_cast<double>(seen)});
    if (hooks.on_epoch) hooks.on_epoch(r.epochs.back());
  }
  return r;
}

// ---------------------------------------------------------------- evaluation

/// Eval-mode predictions in index order.
inline std::vector<float> predict(const ModelWeights& w, const Dataset& d, const std::vector<std::size_t>& idx,
                                  std::size_t batch = 32) {
  std::vector<float> out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const std::size_t n = std::min(batch, idx.size() - start);
    const Batch b = make_batch(d, std::span<const std::size_t>(idx).subspan(start, n), w.arch());
    Tape tape(false);
    const auto r = forward(tape, w, b, RunOptions{});
    for (std::size_t k = 0; k < n; ++k) out.push_back(r.output[k]);
  }
  return out;
}

struct RmseReport {
  double overall = 0;
  std::size_t count = 0;
  std::map<EnvType, double> per_env;
  std::map<EnvType, std::size_t> per_env_count;

  nlohmann::json to_json() const {
    nlohmann::json env = nlohmann::json::object(), counts = nlohmann::json::object();
    for (const auto& [e, v] : per_env) env[to_string(e)] = v;
    for (const auto& [e, n] : per_env_count) counts[to_string(e)] = n;
    return {{"rmse", overall}, {"count", count}, {"per_env", env}, {"per_env_count", counts}};
  }
};

inline RmseReport rmse_report(const std::vector<float>& pred, const std::vector<float>& label,
                              const std::vector<EnvType>& env) {
  if (pred.empty()) throw RangeError("evaluate_rmse: empty test set");
  if (pred.size() != label.size() || pred.size() != env.size()) throw ShapeError("rmse_report: length mismatch");
  RmseReport r;
  std::map<EnvType, double> sq;
  double total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = static_cast<double>(label[i]) - static_cast<double>(pred[i]);
    total += e * e;
    sq[env[i]] += e * e;
    ++r.per_env_count[env[i]];
  }
  r.count = pred.size();
  r.overall = std::sqrt(total / static_cast<double>(r.count));
  for (const auto& [e, s] : sq) r.per_env[e] = std::sqrt(s / static_cast<double>(r.per_env_count[e]));
  return r;
}

inline RmseReport evaluate_rmse(const ModelWeights& w, const Dataset& d, const std::vector<std::size_t>& test_idx) {
  if (test_idx.empty()) throw RangeError("evaluate_rmse: empty test set");
  const auto pred = predict(w, d, test_idx);
  std::vector<float> label;
  std::vector<EnvType> env;
  for (std::size_t i : test_idx) {
    label.push_back(d.samples[i].steering);
    env.push_back(d.samples[i].env);
  }
  return rmse_report(pred, label, env);
}

// ---------------------------------------------------------------- grad-cam

enum class CamBranch { rgb, dmap };

inline const char* to_string(CamBranch b) { return b == CamBranch::rgb ? "rgb" : "dmap"; }

struct GradCam {
  std::size_t feat_h = 0, feat_w = 0;
  std::vector<float> coarse;  // feat_h x feat_w
  std::size_t height = 0, width = 0;
  std::vector<float> map;     // height x width, in [0, 1]
  float prediction = 0;
};

/// Half-pixel-center bilinear resize with edge clamping.
inline std::vector<float> bilinear_resize(const std::vector<float>& src, std::size_t sh, std::size_t sw,
                                          std::size_t dh, std::size_t dw) {
  std::vector<float> out(dh * dw);
  const auto axis = [](std::size_t i, std::size_t s, std::size_t d) {
    double x = (static_cast<double>(i) + 0.5) * static_cast<double>(s) / static_cast<double>(d) - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(s - 1));
    const auto lo = static_cast<std::size_t>(x);
    const std::size_t hi = std::min(lo + 1, s - 1);
    return std::tuple{lo, hi, x - static_cast<double>(lo)};
  };
  for (std::size_t r = 0; r < dh; ++r) {
    const auto [r0, r1, fr] = axis(r, sh, dh);
    for (std::size_t c = 0; c < dw; ++c) {
      const auto [c0, c1, fc] = axis(c, sw, dw);
      const double top = src[r0 * sw + c0] * (1 - fc) + src[r0 * sw + c1] * fc;
      const double bot = src[r1 * sw + c0] * (1 - fc) + src[r1 * sw + c1] * fc;
      out[r * dw + c] = static_cast<float>(top * (1 - fr) + bot * fr);
    }
  }
  return out;
}

/// Gradient-weighted sum of the branch's last rectified feature map, rectified
/// and min-max normalized. A map with no positive value stays all zero.
inline GradCam grad_cam(const ModelWeights& weights, const Sample& s, const NetConfig& cfg, CamBranch branch) {
  if (branch == CamBranch::dmap && weights.arch() != Arch::nmfnet)
    throw ShapeError("grad_cam: dmap branch requires nmfnet weights");
  Dataset one;
  one.config = cfg;
  one.samples.push_back(s);
  const std::size_t idx = 0;
  const Batch b = make_batch(one, std::span<const std::size_t>(&idx, 1), weights.arch());
  ModelWeights w = weights.clone();
  Tape tape;
  const auto r = forward(tape, w, b, RunOptions{});
  Tensor feat = branch == CamBranch::rgb ? r.rgb_features : r.dmap_features;
  tape.backward(r.output);

  GradCam cam;
  cam.prediction = r.output[0];
  const std::size_t ch = feat.dim(1);
  cam.feat_h = feat.dim(2);
  cam.feat_w = feat.dim(3);
  const std::size_t hw = cam.feat_h * cam.feat_w;
  cam.coarse.assign(hw, 0.0f);
  if (feat.has_grad() && feat.grad().size() == feat.numel()) {
    std::vector<double> acc(hw, 0.0);
    for (std::size_t k = 0; k < ch; ++k) {
      double alpha = 0;
      for (std::size_t p = 0; p < hw; ++p) alpha += feat.grad()[k * hw + p];
      alpha /= static_cast<double>(hw);
      for (std::size_t p = 0; p < hw; ++p) acc[p] += alpha * feat[k * hw + p];
    }
    double lo = 0, hi = 0;
    for (auto& a : acc) a = std::max(a, 0.0);
    if (!acc.empty()) {
      lo = *std::min_element(acc.begin(), acc.end());
      hi = *std::max_element(acc.begin(), acc.end());
    }
    if (hi > 0) {
      const double span = hi - lo;
      for (std::size_t p = 0; p < hw; ++p)
        cam.coarse[p] = span > 0 ? static_cast<float>((acc[p] - lo) / span) : 1.0f;
    }
  }
  cam.height = branch == CamBranch::rgb ? cfg.rgb_h : cfg.dmap_h;
  cam.width = branch == CamBranch::rgb ? cfg.rgb_w : cfg.dmap_w;
  cam.map = bilinear_resize(cam.coarse, cam.feat_h, cam.feat_w, cam.height, cam.width);
  for (auto& v : cam.map) v = std::clamp(v, 0.0f, 1.0f);
  return cam;
}

}  // namespace nmfnav
