#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nmfnav/train.hpp"
#include "nmfnav/weights_io.hpp"

using namespace nmfnav;

namespace {

Dataset random_dataset(const NetConfig& c, std::size_t n, std::uint64_t seed) {
  Dataset d;
  d.config = c;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.rgb.resize(3 * c.rgb_h * c.rgb_w);
    for (auto& v : s.rgb) v = static_cast<float>(rng.uniform());
    s.cloud.resize(c.points * 3);
    for (auto& v : s.cloud) v = static_cast<float>(rng.uniform(-2, 2));
    s.dmap.resize(c.dmap_h * c.dmap_w);
    for (auto& v : s.dmap) v = rng.bernoulli(0.05) ? 1.0f : 0.0f;
    s.steering = static_cast<float>(rng.uniform(-1, 1));
    s.env = env_from_index(i % 4);
    s.tick = i;
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

ModelWeights single_param(float w, float g) {
  ModelWeights mw(Arch::rgbnet);
  Tensor t(Shape{1}, std::vector<float>{w});
  t.set_requires_grad(true);
  t.ensure_grad();
  t.grad()[0] = g;
  mw.add("w", t);
  return mw;
}

// Full widths, few points, no dropout: a pure capacity check.
NetConfig overfit_config() {
  NetConfig c;
  c.points = 64;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST(SgdStep, ZeroGradientLeavesWeights) {
  auto mw = single_param(0.7f, 0.0f);
  auto v = MomentumState::zeros_like(mw);
  sgd_step(mw, v, 0.01, 0.9);
  EXPECT_EQ(mw.at("w")[0], 0.7f);
  EXPECT_EQ(v.velocity[0][0], 0.0f);
}

TEST(SgdStep, MomentumExamples) {
  auto mw = single_param(1.0f, 1.0f);
  auto v = MomentumState::zeros_like(mw);
  sgd_step(mw, v, 0.01, 0.9);
  EXPECT_FLOAT_EQ(v.velocity[0][0], 1.0f);
  EXPECT_FLOAT_EQ(mw.at("w")[0], 0.99f);
  mw.at("w").grad()[0] = 1.0f;
  sgd_step(mw, v, 0.01, 0.9);
  EXPECT_FLOAT_EQ(v.velocity[0][0], 1.9f);
  EXPECT_FLOAT_EQ(mw.at("w")[0], 0.971f);
}

TEST(SgdStep, ZeroMomentumIsVanillaDescent) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const float w = static_cast<float>(rng.normal()), g = static_cast<float>(rng.normal());
    const float lr = static_cast<float>(rng.uniform(1e-4, 0.5));
    auto mw = single_param(w, g);
    auto v = MomentumState::zeros_like(mw);
    for (int k = 0; k < 3; ++k) {
      const float before = mw.at("w")[0];
      sgd_step(mw, v, lr, 0.0);
      EXPECT_EQ(mw.at("w")[0], before - lr * g);
    }
  }
}

TEST(SgdStep, RejectsMismatchAndNonFiniteWithoutChanges) {
  auto mw = single_param(1.0f, 1.0f);
  MomentumState wrong;
  EXPECT_THROW(sgd_step(mw, wrong, 0.01, 0.9), ShapeError);
  auto v = MomentumState::zeros_like(mw);
  v.velocity[0].resize(2);
  EXPECT_THROW(sgd_step(mw, v, 0.01, 0.9), ShapeError);
  v = MomentumState::zeros_like(mw);
  mw.at("w").grad()[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(sgd_step(mw, v, 0.01, 0.9), NumericError);
  EXPECT_EQ(mw.at("w")[0], 1.0f);
  EXPECT_EQ(v.velocity[0][0], 0.0f);
}

TEST(MakeBatch, StacksSamplesInIndexOrder) {
  const auto c = NetConfig::tiny();
  const auto d = random_dataset(c, 5, 1);
  const std::vector<std::size_t> idx{3, 0};
  const auto b = make_batch(d, idx, Arch::nmfnet);
  EXPECT_EQ(b.rgb.shape(), (Shape{2, 3, 12, 16}));
  EXPECT_EQ(b.cloud.shape(), (Shape{2, 16, 3}));
  EXPECT_EQ(b.dmap.shape(), (Shape{2, 1, 8, 16}));
  EXPECT_EQ(b.target[0], d.samples[3].steering);
  EXPECT_EQ(b.target[1], d.samples[0].steering);
  EXPECT_EQ(b.rgb[3 * 12 * 16], d.samples[0].rgb[0]);
  EXPECT_EQ(b.cloud[0], d.samples[3].cloud[0]);
  EXPECT_FALSE(make_batch(d, idx, Arch::rgbnet).cloud.defined());
  const std::vector<std::size_t> bad{9};
  EXPECT_THROW(make_batch(d, bad, Arch::rgbnet), RangeError);
}

TEST(TrainConfig, Validates) {
  TrainConfig c;
  c.lr = 0;
  EXPECT_THROW(c.validate(), RangeError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), RangeError);
  c = {};
  c.batch = 0;
  EXPECT_THROW(c.validate(), RangeError);
}

TEST(Train, EmptySplitAndDivergence) {
  const auto d = random_dataset(NetConfig::tiny(), 8, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(d, {}, cfg), RangeError);
  cfg.lr = 1e6;
  cfg.epochs = 5;
  EXPECT_THROW(train(d, iota(8), cfg), NumericError);
}

TEST(Train, PartialFinalBatchIsKept) {
  const auto d = random_dataset(NetConfig::tiny(), 11, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.arch = Arch::rgbnet;
  const auto r = train(d, iota(11), cfg);
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_EQ(r.epochs[0].steps, 2u);
  EXPECT_EQ(r.epochs[1].steps, 4u);
  EXPECT_EQ(r.step_loss.size(), 4u);
}

TEST(Train, ZeroLabelsWithZeroHeadGiveZeroEpochLoss) {
  auto d = random_dataset(NetConfig::tiny(), 16, 4);
  for (auto& s : d.samples) s.steering = 0;
  auto init = init_weights(Arch::nmfnet, d.config, 9);
  for (auto& v : init.at("head.w").data()) v = 0;
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto r = train(d, iota(16), cfg, {}, &init);
  EXPECT_EQ(r.epochs[0].loss, 0.0);
}

TEST(Train, DeterministicWeightBytes) {
  const auto d = random_dataset(NetConfig::tiny(), 20, 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 77;
  const auto a = train(d, iota(20), cfg);
  const auto b = train(d, iota(20), cfg);
  EXPECT_EQ(encode_weights(a.weights), encode_weights(b.weights));
  cfg.seed = 78;
  const auto c = train(d, iota(20), cfg);
  EXPECT_NE(encode_weights(a.weights), encode_weights(c.weights));
}

TEST(Train, OverfitsSixteenRecords) {
  const auto d = random_dataset(overfit_config(), 16, 6);
  TrainConfig cfg;
  cfg.epochs = 250;
  cfg.max_steps = 500;
  const auto r = train(d, iota(16), cfg);
  EXPECT_EQ(r.step_loss.size(), 500u);
  const auto report = evaluate_rmse(r.weights, d, iota(16));
  EXPECT_LT(report.overall * report.overall, 1e-2);

  // Block means of 50 steps never rise by more than the noise of one block.
  std::vector<double> blocks;
  for (std::size_t b = 0; b < 10; ++b)
    blocks.push_back(std::accumulate(r.step_loss.begin() + b * 50, r.step_loss.begin() + (b + 1) * 50, 0.0) / 50);
  for (std::size_t b = 1; b < blocks.size(); ++b) EXPECT_LE(blocks[b], blocks[b - 1] * 1.5 + 1e-3) << "block " << b;
  EXPECT_LT(blocks.back(), 1e-2);
}

TEST(EvaluateRmse, Examples) {
  EXPECT_EQ(rmse_report({0.1f, -0.3f}, {0.1f, -0.3f}, {EnvType::cave, EnvType::cave}).overall, 0.0);

  auto d = random_dataset(NetConfig::tiny(), 2, 7);
  d.samples[0].steering = -0.5f;
  d.samples[1].steering = 0.5f;
  d.samples[0].env = EnvType::cave;
  d.samples[1].env = EnvType::collapsed_city;
  const auto zero = zero_weights<float>(Arch::nmfnet, d.config);
  const auto r = evaluate_rmse(zero, d, iota(2));
  EXPECT_DOUBLE_EQ(r.overall, 0.5);
  EXPECT_DOUBLE_EQ(r.per_env.at(EnvType::cave), 0.5);
  EXPECT_EQ(r.per_env_count.at(EnvType::collapsed_city), 1u);
  EXPECT_THROW(evaluate_rmse(zero, d, {}), RangeError);
  const auto j = r.to_json();
  EXPECT_TRUE(j["per_env"].contains("cave"));
}

TEST(EvaluateRmse, EqualsRootOfMseLoss) {
  const auto d = random_dataset(NetConfig::tiny(), 40, 8);
  const auto w = init_weights(Arch::nmfnet, d.config, 3);
  const auto idx = iota(40);
  const auto report = evaluate_rmse(w, d, idx);
  const auto pred = predict(w, d, idx);
  Tensor p(Shape{40}), y(Shape{40});
  for (std::size_t i = 0; i < 40; ++i) {
    p[i] = pred[i];
    y[i] = d.samples[i].steering;
  }
  Tape tape(false);
  EXPECT_NEAR(report.overall, std::sqrt(ops::mse_loss(tape, p, y).item()), 1e-6);
  double per = 0;
  for (const auto& [e, v] : report.per_env) per += v * v * static_cast<double>(report.per_env_count.at(e));
  EXPECT_NEAR(per / 40.0, report.overall * report.overall, 1e-9);
}

TEST(GradCam, ContractOnBothBranches) {
  const auto c = NetConfig::tiny();
  const auto d = random_dataset(c, 1, 9);
  const auto w = init_weights(Arch::nmfnet, c, 4);
  for (CamBranch b : {CamBranch::rgb, CamBranch::dmap}) {
    const auto cam = grad_cam(w, d.samples[0], c, b);
    const std::size_t h = b == CamBranch::rgb ? c.rgb_h : c.dmap_h, wd = b == CamBranch::rgb ? c.rgb_w : c.dmap_w;
    EXPECT_EQ(cam.height, h);
    EXPECT_EQ(cam.width, wd);
    ASSERT_EQ(cam.map.size(), h * wd);
    for (float v : cam.map) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  const auto rgb = init_weights(Arch::rgbnet, c, 4);
  EXPECT_THROW(grad_cam(rgb, d.samples[0], c, CamBranch::dmap), ShapeError);
  // The caller's weights carry no gradient afterwards.
  EXPECT_FALSE(w.at("head.w").has_grad());
}

TEST(GradCam, ZeroHeadGivesZeroMap) {
  const auto c = NetConfig::tiny();
  const auto d = random_dataset(c, 1, 10);
  auto w = init_weights(Arch::nmfnet, c, 5);
  for (auto& v : w.at("head.w").data()) v = 0;
  for (CamBranch b : {CamBranch::rgb, CamBranch::dmap}) {
    const auto cam = grad_cam(w, d.samples[0], c, b);
    for (float v : cam.map) EXPECT_EQ(v, 0.0f);
  }
}

TEST(GradCam, SingleChannelClosedForm) {
  NetConfig c = NetConfig::tiny();
  c.rgb_h = 96;
  c.rgb_w = 128;
  c.block_channels = {4, 4, 1};
  auto w = init_weights(Arch::rgbnet, c, 6);
  w.at("head.w")[0] = 1.0f;
  w.at("head.b")[0] = 0.0f;
  const auto d = random_dataset(c, 1, 11);
  const auto cam = grad_cam(w, d.samples[0], c, CamBranch::rgb);

  // d(out)/dA is uniform for a pooled single-channel head, so the map is the
  // min-max normalized activation itself.
  Tape tape(false);
  const auto b = make_batch(d, std::vector<std::size_t>{0}, Arch::rgbnet);
  const auto a = rgbnet_forward(tape, w, b.rgb, RunOptions{}).rgb_features;
  const std::size_t fh = a.dim(2), fw = a.dim(3);
  ASSERT_EQ(cam.feat_h, fh);
  ASSERT_EQ(cam.feat_w, fw);
  const double lo = *std::min_element(a.data().begin(), a.data().end());
  const double hi = *std::max_element(a.data().begin(), a.data().end());
  ASSERT_GT(hi, lo);
  std::vector<double> norm(fh * fw);
  for (std::size_t p = 0; p < norm.size(); ++p) norm[p] = (a[p] - lo) / (hi - lo);
  for (std::size_t p = 0; p < norm.size(); ++p) EXPECT_NEAR(cam.coarse[p], norm[p], 1e-5);

  // Bilinear oracle: sample the coarse grid at each output pixel's center.
  for (std::size_t r = 0; r < c.rgb_h; ++r) {
    for (std::size_t col = 0; col < c.rgb_w; ++col) {
      const double sy = std::clamp((r + 0.5) * fh / c.rgb_h - 0.5, 0.0, fh - 1.0);
      const double sx = std::clamp((col + 0.5) * fw / c.rgb_w - 0.5, 0.0, fw - 1.0);
      const std::size_t y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t y1 = std::min(y0 + 1, fh - 1), x1 = std::min(x0 + 1, fw - 1);
      const double ty = sy - y0, tx = sx - x0;
      const double v = norm[y0 * fw + x0] * (1 - ty) * (1 - tx) + norm[y0 * fw + x1] * (1 - ty) * tx +
                       norm[y1 * fw + x0] * ty * (1 - tx) + norm[y1 * fw + x1] * ty * tx;
      EXPECT_NEAR(cam.map[r * c.rgb_w + col], v, 1e-5);
    }
  }
}
