#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nmfnav/layers.hpp"
#include "nmfnav/rng.hpp"

namespace nmfnav {

enum class Arch : std::uint8_t { rgbnet = 0, nmfnet = 1 };

inline const char* to_string(Arch a) { return a == Arch::rgbnet ? "rgbnet" : "nmfnet"; }

inline std::optional<Arch> parse_arch(std::string_view s) {
  if (s == "rgbnet") return Arch::rgbnet;
  if (s == "nmfnet") return Arch::nmfnet;
  return std::nullopt;
}

/// Input resolutions and layer widths shared by both architectures.
struct NetConfig {
  std::size_t rgb_h = 48;
  std::size_t rgb_w = 64;
  std::size_t dmap_h = 32;
  std::size_t dmap_w = 64;
  double dmap_scale = 0;  // px per meter; 0 fits the full laser range
  std::size_t points = 1024;
  std::size_t stem_channels = 32;
  std::array<std::size_t, 3> block_channels{32, 64, 128};
  std::array<std::size_t, 2> cloud_hidden{32, 64};
  std::size_t cloud_feat = 128;
  std::array<std::size_t, 2> fusion_channels{128, 64};
  double dropout = 0.5;

  std::size_t rgb_feat() const { return block_channels[2]; }
  std::size_t dmap_feat() const { return block_channels[2]; }
  std::size_t fusion_feat() const { return fusion_channels[1]; }

  /// 12x16 rgb, 8x16 distance map, 16 points, every width 4.
  static NetConfig tiny() {
    NetConfig c;
    c.rgb_h = 12;
    c.rgb_w = 16;
    c.dmap_h = 8;
    c.dmap_w = 16;
    c.points = 16;
    c.stem_channels = 4;
    c.block_channels = {4, 4, 4};
    c.cloud_hidden = {4, 4};
    c.cloud_feat = 4;
    c.fusion_channels = {4, 4};
    return c;
  }

  void validate() const {
    if (rgb_h == 0 || rgb_w == 0 || dmap_h == 0 || dmap_w == 0) throw RangeError("NetConfig: zero input dimension");
    if (rgb_h * 640 != rgb_w * 480) throw RangeError("NetConfig: rgb input must keep the 480:640 aspect ratio");
    if (dmap_h * 640 != dmap_w * 320) throw RangeError("NetConfig: distance map must keep the 320:640 aspect ratio");
    if (points < 1) throw RangeError("NetConfig: point count must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw RangeError("NetConfig: dropout must be in [0,1)");
  }
};

/// Named parameter arrays in insertion order, tagged with their architecture.
template <typename T>
class BasicModelWeights {
 public:
  static constexpr std::uint16_t kFormatVersion = 1;

  BasicModelWeights() = default;
  explicit BasicModelWeights(Arch arch) : arch_(arch) {}

  Arch arch() const { return arch_; }
  std::uint16_t version() const { return version_; }
  void set_version(std::uint16_t v) { version_ = v; }

  void add(std::string name, BasicTensor<T> t) {
    if (index_.count(name)) throw Error("duplicate weight name " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const BasicTensor<T>& at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("missing weight " + name + " for " + to_string(arch_));
    return entries_[it->second].second;
  }
  BasicTensor<T>& at(const std::string& name) {
    return const_cast<BasicTensor<T>&>(static_cast<const BasicModelWeights&>(*this).at(name));
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Trainable entries (everything except batchnorm running statistics).
  std::vector<std::pair<std::string, BasicTensor<T>>> trainable() const {
    std::vector<std::pair<std::string, BasicTensor<T>>> out;
    for (const auto& e : entries_)
      if (e.second.requires_grad()) out.push_back(e);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.second.requires_grad()) e.second.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  BasicModelWeights clone() const {
    BasicModelWeights out(arch_);
    out.version_ = version_;
    for (const auto& [name, t] : entries_) out.add(name, t.clone());
    return out;
  }

  template <typename U>
  BasicModelWeights<U> cast() const {
    BasicModelWeights<U> out(arch_);
    out.set_version(version_);
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    return out;
  }

 private:
  Arch arch_ = Arch::rgbnet;
  std::uint16_t version_ = kFormatVersion;
  std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ModelWeights = BasicModelWeights<float>;

inline bool is_buffer_name(std::string_view name) {
  return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

/// Per-call knobs for a forward pass.
struct RunOptions {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  ///< required for train-mode dropout
  double dropout = 0.5;
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> output;          ///< [N] steering
  BasicTensor<T> rgb_features;    ///< last rectified conv map of the rgb trunk
  BasicTensor<T> dmap_features;   ///< same for the distance-map trunk (nmfnet only)
};

namespace nets_detail {

template <typename T>
BasicLayer<T> conv(const BasicModelWeights<T>& mw, const std::string& prefix, std::size_t stride, std::size_t pad) {
  const auto& wt = mw.at(prefix + ".w");
  if (wt.rank() != 4) throw ShapeError(prefix + ".w must be rank 4");
  Conv2dSpec s{wt.dim(1), wt.dim(0), wt.dim(2), stride, pad, true};
  return {s, {wt, mw.at(prefix + ".b")}};
}

template <typename T>
BasicLayer<T> bn(const BasicModelWeights<T>& mw, const std::string& prefix) {
  const auto& g = mw.at(prefix + ".gamma");
  return {BatchNormSpec{g.dim(0), 1e-5, 0.9},
          {g, mw.at(prefix + ".beta"), mw.at(prefix + ".running_mean"), mw.at(prefix + ".running_var")}};
}

template <typename T>
BasicLayer<T> fc(const BasicModelWeights<T>& mw, const std::string& prefix) {
  const auto& wt = mw.at(prefix + ".w");
  if (wt.rank() != 2) throw ShapeError(prefix + ".w must be rank 2");
  return {DenseSpec{wt.dim(1), wt.dim(0), true}, {wt, mw.at(prefix + ".b")}};
}

template <typename T>
BasicTensor<T> relu(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return ops::relu(tape, x);
}

}  // namespace nets_detail

/// BN -> ReLU -> conv3x3/2 -> BN -> ReLU -> conv3x3/1, plus a 1x1/2 conv skip path.
template <typename T>
BasicTensor<T> residual_block_forward(BasicTape<T>& tape, const BasicModelWeights<T>& mw, const std::string& prefix,
                                      const BasicTensor<T>& x, Mode mode) {
  using namespace nets_detail;
  const auto c1 = conv(mw, prefix + ".conv1", 2, 1);
  if (x.rank() != 4 || x.dim(1) != std::get<Conv2dSpec>(c1.spec).in_channels) {
    throw ShapeError(prefix + ": input " + shape_str(x.shape()) + " does not match block channels");
  }
  auto r = layer_forward(tape, bn(mw, prefix + ".bn1"), x, mode);
  r = relu(tape, r);
  r = layer_forward(tape, c1, r, mode);
  r = layer_forward(tape, bn(mw, prefix + ".bn2"), r, mode);
  r = relu(tape, r);
  r = layer_forward(tape, conv(mw, prefix + ".conv2", 1, 1), r, mode);
  const auto s = layer_forward(tape, conv(mw, prefix + ".skip", 2, 0), x, mode);
  return ops::add(tape, s, r);
}

/// Stem conv + max-pool + three residual blocks + BN + ReLU. Returns the rectified map.
template <typename T>
BasicTensor<T> resnet8_trunk(BasicTape<T>& tape, const BasicModelWeights<T>& mw, const std::string& prefix,
                             const BasicTensor<T>& x, Mode mode) {
  using namespace nets_detail;
  auto h = layer_forward(tape, conv(mw, prefix + ".stem", 2, 2), x, mode);
  h = layer_forward(tape, BasicLayer<T>{MaxPool2dSpec{3, 2, 1}, {}}, h, mode);
  for (int b = 1; b <= 3; ++b) h = residual_block_forward(tape, mw, prefix + ".b" + std::to_string(b), h, mode);
  h = layer_forward(tape, bn(mw, prefix + ".bn_out"), h, mode);
  return relu(tape, h);
}

/// Shared per-point MLP (dense + BN + ReLU, three times) followed by max over points.
/// cloud: [N, P, 3] or [P, 3]; returns [N, cloud_feat] or [cloud_feat].
template <typename T>
BasicTensor<T> pointnet_encode(BasicTape<T>& tape, const BasicModelWeights<T>& mw, const BasicTensor<T>& cloud,
                               Mode mode) {
  using namespace nets_detail;
  const bool batched = cloud.rank() == 3;
  if ((cloud.rank() != 2 && cloud.rank() != 3) || cloud.shape().back() != 3) {
    throw ShapeError("pointnet_encode: expected [N,P,3] or [P,3], got " + shape_str(cloud.shape()));
  }
  const std::size_t n = batched ? cloud.dim(0) : 1;
  const std::size_t pts = batched ? cloud.dim(1) : cloud.dim(0);
  if (pts == 0) throw ShapeError("pointnet_encode: empty cloud");
  auto h = ops::reshape(tape, cloud, Shape{n * pts, 3});
  for (int l = 1; l <= 3; ++l) {
    const std::string p = "cloud.l" + std::to_string(l);
    h = layer_forward(tape, fc(mw, p), h, mode);
    h = layer_forward(tape, bn(mw, p + ".bn"), h, mode);
    h = relu(tape, h);
  }
  const std::size_t f = h.dim(1);
  h = ops::reshape(tape, h, batched ? Shape{n, pts, f} : Shape{pts, f});
  return ops::max_pool_set(tape, h);
}

template <typename T>
ForwardResult<T> rgbnet_forward(BasicTape<T>& tape, const BasicModelWeights<T>& mw, const BasicTensor<T>& rgb,
                                const RunOptions& opt) {
  using namespace nets_detail;
  if (mw.arch() != Arch::rgbnet) throw ShapeError("rgbnet_forward: weights are tagged " + std::string(to_string(mw.arch())));
  if (rgb.rank() != 4 || rgb.dim(1) != 3) throw ShapeError("rgbnet_forward: expected [N,3,H,W], got " + shape_str(rgb.shape()));
  ForwardResult<T> r;
  r.rgb_features = resnet8_trunk(tape, mw, "rgb", rgb, opt.mode);
  const std::size_t n = rgb.dim(0);
  auto h = ops::global_avg_pool(tape, r.rgb_features);
  h = layer_forward(tape, BasicLayer<T>{DropoutSpec{opt.dropout}, {}}, h, opt.mode, opt.rng);
  const auto head = fc(mw, "head");
  h = layer_forward(tape, head, h, opt.mode);
  r.output = ops::reshape(tape, h, Shape{n});
  return r;
}

/// rgb [N,3,H,W], cloud [N,P,3], dmap [N,1,Hd,Wd] -> [N].
template <typename T>
ForwardResult<T> nmfnet_forward(BasicTape<T>& tape, const BasicModelWeights<T>& mw, const BasicTensor<T>& rgb,
                                const BasicTensor<T>& cloud, const BasicTensor<T>& dmap, const RunOptions& opt) {
  using namespace nets_detail;
  if (mw.arch() != Arch::nmfnet) throw ShapeError("nmfnet_forward: weights are tagged " + std::string(to_string(mw.arch())));
  if (!rgb.defined() || !cloud.defined() || !dmap.defined()) throw ShapeError("nmfnet_forward: missing modality");
  if (rgb.rank() != 4 || rgb.dim(1) != 3) throw ShapeError("nmfnet_forward: rgb must be [N,3,H,W], got " + shape_str(rgb.shape()));
  if (dmap.rank() != 4 || dmap.dim(1) != 1) throw ShapeError("nmfnet_forward: dmap must be [N,1,H,W], got " + shape_str(dmap.shape()));
  if (cloud.rank() != 3 || cloud.dim(2) != 3) throw ShapeError("nmfnet_forward: cloud must be [N,P,3], got " + shape_str(cloud.shape()));
  const std::size_t n = rgb.dim(0);
  if (cloud.dim(0) != n || dmap.dim(0) != n) throw ShapeError("nmfnet_forward: modalities disagree on batch size");

  ForwardResult<T> r;
  r.rgb_features = resnet8_trunk(tape, mw, "rgb", rgb, opt.mode);
  const auto rgb_feat = ops::global_avg_pool(tape, r.rgb_features);
  const auto cloud_feat = pointnet_encode(tape, mw, cloud, opt.mode);

  auto fused = ops::concat(tape, rgb_feat, cloud_feat, 1);
  fused = ops::reshape(tape, fused, Shape{n, fused.dim(1), 1, 1});
  for (const char* p : {"fuse.c1", "fuse.c2"}) {
    fused = layer_forward(tape, conv(mw, p, 1, 0), fused, opt.mode);
    fused = relu(tape, layer_forward(tape, bn(mw, std::string(p) + ".bn"), fused, opt.mode));
  }
  fused = ops::reshape(tape, fused, Shape{n, fused.dim(1)});

  r.dmap_features = resnet8_trunk(tape, mw, "dmap", dmap, opt.mode);
  const auto dmap_feat = ops::global_avg_pool(tape, r.dmap_features);

  auto h = ops::concat(tape, fused, dmap_feat, 1);
  h = layer_forward(tape, BasicLayer<T>{DropoutSpec{opt.dropout}, {}}, h, opt.mode, opt.rng);
  h = layer_forward(tape, fc(mw, "head"), h, opt.mode);
  r.output = ops::reshape(tape, h, Shape{n});
  return r;
}

namespace nets_detail {

template <typename T>
void add_conv(BasicModelWeights<T>& mw, const std::string& p, std::size_t in, std::size_t out, std::size_t k) {
  mw.add(p + ".w", BasicTensor<T>(Shape{out, in, k, k}).set_requires_grad(true));
  mw.add(p + ".b", BasicTensor<T>(Shape{out}).set_requires_grad(true));
}

template <typename T>
void add_bn(BasicModelWeights<T>& mw, const std::string& p, std::size_t c) {
  mw.add(p + ".gamma", BasicTensor<T>(Shape{c}, T(1)).set_requires_grad(true));
  mw.add(p + ".beta", BasicTensor<T>(Shape{c}).set_requires_grad(true));
  mw.add(p + ".running_mean", BasicTensor<T>(Shape{c}));
  mw.add(p + ".running_var", BasicTensor<T>(Shape{c}, T(1)));
}

template <typename T>
void add_fc(BasicModelWeights<T>& mw, const std::string& p, std::size_t in, std::size_t out) {
  mw.add(p + ".w", BasicTensor<T>(Shape{out, in}).set_requires_grad(true));
  mw.add(p + ".b", BasicTensor<T>(Shape{out}).set_requires_grad(true));
}

template <typename T>
void add_trunk(BasicModelWeights<T>& mw, const std::string& p, std::size_t in_ch, const NetConfig& c) {
  add_conv(mw, p + ".stem", in_ch, c.stem_channels, 5);
  std::size_t prev = c.stem_channels;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::string bp = p + ".b" + std::to_string(b + 1);
    const std::size_t ch = c.block_channels[b];
    add_bn(mw, bp + ".bn1", prev);
    add_conv(mw, bp + ".conv1", prev, ch, 3);
    add_bn(mw, bp + ".bn2", ch);
    add_conv(mw, bp + ".conv2", ch, ch, 3);
    add_conv(mw, bp + ".skip", prev, ch, 1);
    prev = ch;
  }
  add_bn(mw, p + ".bn_out", prev);
}

}  // namespace nets_detail

/// Parameter layout for an architecture with all arrays zero (batchnorm as identity).
template <typename T>
BasicModelWeights<T> zero_weights(Arch arch, const NetConfig& c) {
  using namespace nets_detail;
  c.validate();
  BasicModelWeights<T> mw(arch);
  add_trunk(mw, "rgb", 3, c);
  if (arch == Arch::rgbnet) {
    add_fc(mw, "head", c.rgb_feat(), 1);
    return mw;
  }
  add_trunk(mw, "dmap", 1, c);
  std::size_t prev = 3;
  const std::array<std::size_t, 3> widths{c.cloud_hidden[0], c.cloud_hidden[1], c.cloud_feat};
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string p = "cloud.l" + std::to_string(l + 1);
    add_fc(mw, p, prev, widths[l]);
    add_bn(mw, p + ".bn", widths[l]);
    prev = widths[l];
  }
  add_conv(mw, "fuse.c1", c.rgb_feat() + c.cloud_feat, c.fusion_channels[0], 1);
  add_bn(mw, "fuse.c1.bn", c.fusion_channels[0]);
  add_conv(mw, "fuse.c2", c.fusion_channels[0], c.fusion_channels[1], 1);
  add_bn(mw, "fuse.c2.bn", c.fusion_channels[1]);
  add_fc(mw, "head", c.fusion_feat() + c.dmap_feat(), 1);
  return mw;
}

/// He-normal (std = sqrt(2 / fan_in)) conv and dense weights, std sqrt(1 / fan_in)
/// for the linear head, zero biases, batchnorm scale 1 / shift 0. Deterministic in `seed`.
template <typename T = float>
BasicModelWeights<T> init_weights(Arch arch, const NetConfig& config, std::uint64_t seed) {
  auto mw = zero_weights<T>(arch, config);
  Rng rng(seed);
  for (auto& [name, t] : mw) {
    if (!name.ends_with(".w")) continue;
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.rank(); ++d) fan_in *= t.dim(d);
    const double gain = name == "head.w" ? 1.0 : 2.0;
    const double std = std::sqrt(gain / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<T>(rng.normal() * std);
  }
  return mw;
}

/// Recovers layer widths (and, for rgbnet, nothing about resolution beyond the head) from shapes.
template <typename T>
NetConfig infer_config(const BasicModelWeights<T>& mw, NetConfig base = {}) {
  base.stem_channels = mw.at("rgb.stem.w").dim(0);
  for (std::size_t b = 0; b < 3; ++b) base.block_channels[b] = mw.at("rgb.b" + std::to_string(b + 1) + ".conv1.w").dim(0);
  if (mw.arch() == Arch::nmfnet) {
    base.cloud_hidden = {mw.at("cloud.l1.w").dim(0), mw.at("cloud.l2.w").dim(0)};
    base.cloud_feat = mw.at("cloud.l3.w").dim(0);
    base.fusion_channels = {mw.at("fuse.c1.w").dim(0), mw.at("fuse.c2.w").dim(0)};
  }
  return base;
}

}  // namespace nmfnav
