#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "nmfnav/gradcheck.hpp"
#include "nmfnav/layers.hpp"
#include "nmfnav/nets.hpp"
#include "nmfnav/rng.hpp"

namespace nmfnav {

struct GradSuiteCase {
  std::string name;
  GradCheckReport report;
};

struct GradSuiteReport {
  std::vector<GradSuiteCase> cases;
  double max_rel_error = 0;
  double tolerance = 0;
  double seconds = 0;
  bool pass = false;

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& c : cases) per[c.name] = c.report.max_rel_error;
    return {{"pass", pass}, {"max_rel_error", max_rel_error}, {"tolerance", tolerance}, {"seconds", seconds}, {"cases", per}};
  }
};

namespace gradsuite_detail {

using DTensor = BasicTensor<double>;
using DTape = BasicTape<double>;
using Params = std::vector<std::pair<std::string, DTensor>>;

inline DTensor random_tensor(Shape shape, Rng& rng) {
  DTensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

// Fixed non-symmetric target so every output element carries its own weight.
inline DTensor wave_like(const DTensor& y) {
  DTensor t(y.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::sin(0.37 * static_cast<double>(i) + 0.1);
  return t;
}

inline BasicLayer<double> random_layer(const LayerSpec& spec, Rng& rng) {
  auto layer = make_layer<double>(spec);
  const bool bn = std::holds_alternative<BatchNormSpec>(spec);
  for (std::size_t i = 0; i < layer.params.size(); ++i)
    for (auto& v : layer.params[i].data()) v = bn && i == 3 ? 0.5 + rng.uniform() : rng.normal() * 0.5 + (bn && i == 0 ? 1.0 : 0.0);
  return layer;
}

inline void randomize_buffers(BasicModelWeights<double>& w, Rng& rng) {
  for (auto& [name, t] : w) {
    if (name.ends_with(".running_mean"))
      for (auto& v : t.data()) v = 0.1 * rng.normal();
    if (name.ends_with(".running_var"))
      for (auto& v : t.data()) v = 0.5 + rng.uniform();
  }
}

}  // namespace gradsuite_detail

/// Central-difference check of every layer kind, one residual block, the
/// point-cloud set encoder and a tiny end-to-end NMFNet, in double precision.
inline GradSuiteReport run_grad_suite(std::uint64_t seed = 1, double eps = 1e-3, double tol = 1e-3) {
  using namespace gradsuite_detail;
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteReport out;
  out.tolerance = tol;
  Rng rng(seed);

  const auto check = [&](std::string name, const std::function<DTensor(DTape&)>& f, Params params) {
    out.cases.push_back({std::move(name), gradient_check<double>(f, std::move(params), eps, tol)});
  };

  struct LayerCase {
    const char* name;
    LayerSpec spec;
    Shape input;
    Mode mode;
  };
  const std::vector<LayerCase> layers{
      {"conv3x3", Conv2dSpec{2, 3, 3, 1, 1, true}, {2, 2, 6, 5}, Mode::eval},
      {"conv5x5_stride2", Conv2dSpec{3, 2, 5, 2, 2, true}, {2, 3, 9, 8}, Mode::eval},
      {"batchnorm_eval", BatchNormSpec{3}, {2, 3, 4, 4}, Mode::eval},
      {"batchnorm_train", BatchNormSpec{3}, {3, 3, 3, 4}, Mode::train},
      {"relu", ReluSpec{}, {4, 30}, Mode::eval},
      {"dense", DenseSpec{7, 3, true}, {4, 7}, Mode::eval},
      {"dropout_train", DropoutSpec{0.3}, {3, 10}, Mode::train},
      {"maxpool3_stride2", MaxPool2dSpec{3, 2, 1}, {2, 2, 7, 6}, Mode::eval},
      {"globalavgpool", GlobalAvgPoolSpec{}, {2, 4, 3, 5}, Mode::eval},
  };
  for (const auto& c : layers) {
    const auto layer = random_layer(c.spec, rng);
    const auto x = random_tensor(c.input, rng);
    const std::uint64_t mask_seed = rng.next_u64();
    Params params{{"input", x}};
    for (std::size_t i = 0; i < layer.params.size(); ++i)
      if (layer.params[i].requires_grad()) params.emplace_back("param" + std::to_string(i), layer.params[i]);
    check(
        c.name,
        [&, mask_seed](DTape& tape) {
          Rng mask(mask_seed);  // same dropout mask on every evaluation
          const auto y = layer_forward(tape, layer, x, c.mode, &mask);
          return ops::mse_loss(tape, y, wave_like(y));
        },
        params);
  }

  {
    const auto pts = random_tensor(Shape{2, 16, 5}, rng);
    const auto other = random_tensor(Shape{2, 3}, rng);
    const auto target = random_tensor(Shape{2, 8}, rng);
    check(
        "set_maxpool_concat",
        [&](DTape& tape) { return ops::mse_loss(tape, ops::concat(tape, ops::max_pool_set(tape, pts), other, 1), target); },
        {{"points", pts}, {"other", other}});
  }

  auto w = init_weights<double>(Arch::nmfnet, NetConfig::tiny(), rng.next_u64());
  randomize_buffers(w, rng);
  {
    const auto x = random_tensor(Shape{2, 4, 6, 5}, rng);
    const auto target = random_tensor(Shape{2, 4, 3, 3}, rng);
    Params params{{"input", x}};
    for (auto& [name, t] : w)
      if (name.starts_with("rgb.b1.") && t.requires_grad()) params.emplace_back(name, t);
    check(
        "residual_block",
        [&](DTape& tape) { return ops::mse_loss(tape, residual_block_forward(tape, w, "rgb.b1", x, Mode::eval), target); },
        params);
  }
  {
    const auto cloud = random_tensor(Shape{2, 16, 3}, rng);
    const auto target = random_tensor(Shape{2, NetConfig::tiny().cloud_feat}, rng);
    Params params{{"cloud", cloud}};
    for (auto& [name, t] : w)
      if (name.starts_with("cloud.") && t.requires_grad()) params.emplace_back(name, t);
    check(
        "set_encoder",
        [&](DTape& tape) { return ops::mse_loss(tape, pointnet_encode(tape, w, cloud, Mode::eval), target); }, params);
  }
  {
    const auto rgb = random_tensor(Shape{2, 3, 12, 16}, rng);
    const auto cloud = random_tensor(Shape{2, 16, 3}, rng);
    const auto dmap = random_tensor(Shape{2, 1, 8, 16}, rng);
    const auto target = random_tensor(Shape{2}, rng);
    for (Mode mode : {Mode::eval, Mode::train}) {
      check(
          std::string("nmfnet_") + (mode == Mode::eval ? "eval" : "train"),
          [&, mode](DTape& tape) {
            return ops::mse_loss(tape, nmfnet_forward(tape, w, rgb, cloud, dmap, RunOptions{mode, nullptr, 0.0}).output, target);
          },
          w.trainable());
    }
  }

  for (const auto& c : out.cases) out.max_rel_error = std::max(out.max_rel_error, c.report.max_rel_error);
  out.pass = out.max_rel_error <= tol;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace nmfnav
