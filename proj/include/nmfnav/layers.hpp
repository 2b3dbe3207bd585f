#pragma once

#include <cstddef>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "nmfnav/ops.hpp"

namespace nmfnav {

struct Conv2dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool bias = true;
};

struct BatchNormSpec {
  std::size_t channels = 1;
  double eps = 1e-5;
  double momentum = 0.9;
};

struct ReluSpec {};

struct DenseSpec {
  std::size_t in_features = 1;
  std::size_t out_features = 1;
  bool bias = true;
};

struct DropoutSpec {
  double rate = 0.5;
};

struct MaxPool2dSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t pad = 0;
};

struct GlobalAvgPoolSpec {};

using LayerSpec =
    std::variant<Conv2dSpec, BatchNormSpec, ReluSpec, DenseSpec, DropoutSpec, MaxPool2dSpec, GlobalAvgPoolSpec>;

inline const char* layer_kind(const LayerSpec& spec) {
  static constexpr const char* names[] = {"conv2d", "batchnorm", "relu", "dense", "dropout", "maxpool2d", "globalavgpool"};
  return names[spec.index()];
}

inline void validate(const LayerSpec& spec) {
  std::visit(
      [](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Conv2dSpec>) {
          if (s.kernel < 1 || s.stride < 1) throw RangeError("conv2d: kernel and stride must be >= 1");
          if (s.in_channels < 1 || s.out_channels < 1) throw RangeError("conv2d: channel counts must be >= 1");
        } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
          if (!(s.eps > 0.0)) throw RangeError("batchnorm: epsilon must be > 0");
          if (!(s.momentum >= 0.0 && s.momentum < 1.0)) throw RangeError("batchnorm: momentum must be in [0,1)");
        } else if constexpr (std::is_same_v<S, DropoutSpec>) {
          if (!(s.rate >= 0.0 && s.rate < 1.0)) throw RangeError("dropout: rate must be in [0,1)");
        } else if constexpr (std::is_same_v<S, MaxPool2dSpec>) {
          if (s.kernel < 1 || s.stride < 1) throw RangeError("maxpool2d: kernel and stride must be >= 1");
        }
      },
      spec);
}

/// A layer spec bound to its parameter tensors.
///
/// Parameter order: conv2d/dense -> {weight, bias?}; batchnorm -> {gamma, beta,
/// running_mean, running_var}; the rest have none. The tensors are handles, so a
/// Layer can view parameters owned by a ModelWeights without copying.
template <typename T>
struct BasicLayer {
  LayerSpec spec;
  std::vector<BasicTensor<T>> params;
};

using Layer = BasicLayer<float>;

/// Fresh zero/one-initialized parameters for a spec (weights zero, gamma 1, running var 1).
template <typename T>
BasicLayer<T> make_layer(const LayerSpec& spec) {
  validate(spec);
  BasicLayer<T> layer{spec, {}};
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Conv2dSpec>) {
          layer.params.emplace_back(Shape{s.out_channels, s.in_channels, s.kernel, s.kernel});
          if (s.bias) layer.params.emplace_back(Shape{s.out_channels});
        } else if constexpr (std::is_same_v<S, DenseSpec>) {
          layer.params.emplace_back(Shape{s.out_features, s.in_features});
          if (s.bias) layer.params.emplace_back(Shape{s.out_features});
        } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
          layer.params.emplace_back(Shape{s.channels}, T(1));
          layer.params.emplace_back(Shape{s.channels}, T(0));
          layer.params.emplace_back(Shape{s.channels}, T(0));
          layer.params.emplace_back(Shape{s.channels}, T(1));
        }
      },
      spec);
  for (std::size_t i = 0; i < layer.params.size(); ++i) {
    // running statistics are buffers, not trainable parameters
    const bool buffer = std::holds_alternative<BatchNormSpec>(spec) && i >= 2;
    layer.params[i].set_requires_grad(!buffer);
  }
  return layer;
}

/// Runs one layer. Inputs and parameters must be finite; conv/pool expect NCHW and
/// dense expects [N,F]. Recorded on the tape when anything upstream requires grad.
template <typename T>
BasicTensor<T> layer_forward(BasicTape<T>& tape, const BasicLayer<T>& layer, const BasicTensor<T>& input, Mode mode,
                             Rng* rng = nullptr) {
  validate(layer.spec);
  require_finite(input, "layer input");
  for (const auto& p : layer.params) require_finite(p, "layer parameter");
  const auto& p = layer.params;
  const auto param = [&](std::size_t i) { return i < p.size() ? p[i] : BasicTensor<T>(); };
  return std::visit(
      [&](const auto& s) -> BasicTensor<T> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Conv2dSpec>) {
          if (input.rank() != 4 || input.dim(1) != s.in_channels) {
            throw ShapeError("conv2d: expected [N," + std::to_string(s.in_channels) + ",H,W], got " +
                             shape_str(input.shape()));
          }
          return ops::conv2d(tape, input, param(0), s.bias ? param(1) : BasicTensor<T>(), s.stride, s.pad);
        } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
          if (p.size() != 4) throw ShapeError("batchnorm: expected 4 parameter tensors");
          return ops::batchnorm(tape, input, p[0], p[1], p[2], p[3], s.eps, s.momentum, mode);
        } else if constexpr (std::is_same_v<S, ReluSpec>) {
          return ops::relu(tape, input);
        } else if constexpr (std::is_same_v<S, DenseSpec>) {
          if (input.rank() != 2 || input.dim(1) != s.in_features) {
            throw ShapeError("dense: expected [N," + std::to_string(s.in_features) + "], got " +
                             shape_str(input.shape()));
          }
          return ops::dense(tape, input, param(0), s.bias ? param(1) : BasicTensor<T>());
        } else if constexpr (std::is_same_v<S, DropoutSpec>) {
          if (mode == Mode::train && s.rate > 0.0 && rng == nullptr) {
            throw GraphError("dropout in train mode needs a seeded Rng");
          }
          Rng dummy(0);
          return ops::dropout(tape, input, s.rate, mode, rng ? *rng : dummy);
        } else if constexpr (std::is_same_v<S, MaxPool2dSpec>) {
          return ops::maxpool2d(tape, input, s.kernel, s.stride, s.pad);
        } else {
          return ops::global_avg_pool(tape, input);
        }
      },
      layer.spec);
}

}  // namespace nmfnav
