// Copyright 2026 The voxrecon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied. See the License for the specific language governing
// permissions and limitations under the License.

#ifndef VOXRECON_NETWORK_HPP
#define VOXRECON_NETWORK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "voxrecon/errors.hpp"
#include "voxrecon/rng.hpp"
#include "voxrecon/tensor.hpp"

namespace voxrecon {

enum class LayerKind {
  convolution,
  rectifier,
  maxpool,
  crosschannel_norm,
  fully_connected,
  softmax,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::convolution: return "conv";
    case LayerKind::rectifier: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::crosschannel_norm: return "norm";
    case LayerKind::fully_connected: return "fc";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

/// One layer of the representation network. Only the fields for the given
/// kind are meaningful; the factory functions validate them.
struct LayerSpec {
  LayerKind kind = LayerKind::rectifier;

  // convolution
  std::size_t kernels = 0, kernel_h = 0, kernel_w = 0, stride = 1, pad = 0;
  // maxpool
  std::size_t window = 0, pool_stride = 1;
  // crosschannel_norm
  std::size_t norm_n = 5;
  double norm_k = 2.0, norm_alpha = 1e-4, norm_beta = 0.75;
  // fully_connected
  std::size_t outputs = 0;

  static LayerSpec conv(std::size_t kernels, std::size_t kh, std::size_t kw,
                        std::size_t stride = 1, std::size_t pad = 0) {
    if (kernels < 1 || kh < 1 || kw < 1 || stride < 1)
      throw data_error("conv spec: kernels/extent/stride must be >= 1");
    LayerSpec s;
    s.kind = LayerKind::convolution;
    s.kernels = kernels;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.stride = stride;
    s.pad = pad;
    return s;
  }

  static LayerSpec relu() {
    LayerSpec s;
    s.kind = LayerKind::rectifier;
    return s;
  }

  static LayerSpec pool(std::size_t window, std::size_t stride) {
    if (window < 1 || stride < 1)
      throw data_error("maxpool spec: window/stride must be >= 1");
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    s.window = window;
    s.pool_stride = stride;
    return s;
  }

  static LayerSpec norm(std::size_t n = 5, double k = 2.0, double alpha = 1e-4,
                        double beta = 0.75) {
    if (n < 1) throw data_error("norm spec: window must be >= 1");
    LayerSpec s;
    s.kind = LayerKind::crosschannel_norm;
    s.norm_n = n;
    s.norm_k = k;
    s.norm_alpha = alpha;
    s.norm_beta = beta;
    return s;
  }

  static LayerSpec fc(std::size_t outputs) {
    if (outputs < 1) throw data_error("fc spec: outputs must be >= 1");
    LayerSpec s;
    s.kind = LayerKind::fully_connected;
    s.outputs = outputs;
    return s;
  }

  static LayerSpec softmax() {
    LayerSpec s;
    s.kind = LayerKind::softmax;
    return s;
  }

  bool parametric() const {
    return kind == LayerKind::convolution || kind == LayerKind::fully_connected;
  }
};

/// Kernel + bias pair of a parametric layer. Kernels are [K x C x kh x kw]
/// for convolutions and [out x in] for fully connected layers; biases have
/// one entry per output channel.
struct LayerWeights {
  Tensor kernels;
  Tensor biases;
};

namespace detail {

inline std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t pad, std::size_t layer_index) {
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel)
    throw data_error("layer " + std::to_string(layer_index) +
                     ": kernel larger than padded input (" + std::to_string(kernel) +
                     " > " + std::to_string(padded) + ")");
  return (padded - kernel) / stride + 1;
}

inline std::size_t pool_extent(std::size_t in, std::size_t window, std::size_t stride,
                               std::size_t layer_index) {
  if (in < window)
    throw data_error("layer " + std::to_string(layer_index) +
                     ": pooling window larger than input");
  return (in - window) / stride + 1;
}

} // namespace detail

/// Output shape of one layer given its input shape; throws data_error naming
/// the layer on a shape-chain violation.
inline std::vector<std::size_t> layer_output_shape(const LayerSpec& spec,
                                                   const std::vector<std::size_t>& in,
                                                   std::size_t layer_index) {
  switch (spec.kind) {
    case LayerKind::convolution: {
      if (in.size() != 3)
        throw data_error("layer " + std::to_string(layer_index) +
                         ": convolution needs a CxHxW input, got " + shape_string(in));
      const std::size_t oh = detail::conv_extent(in[1], spec.kernel_h, spec.stride, spec.pad, layer_index);
      const std::size_t ow = detail::conv_extent(in[2], spec.kernel_w, spec.stride, spec.pad, layer_index);
      return {spec.kernels, oh, ow};
    }
    case LayerKind::rectifier:
    case LayerKind::softmax:
      return in;
    case LayerKind::maxpool: {
      if (in.size() != 3)
        throw data_error("layer " + std::to_string(layer_index) +
                         ": maxpool needs a CxHxW input, got " + shape_string(in));
      const std::size_t oh = detail::pool_extent(in[1], spec.window, spec.pool_stride, layer_index);
      const std::size_t ow = detail::pool_extent(in[2], spec.window, spec.pool_stride, layer_index);
      return {in[0], oh, ow};
    }
    case LayerKind::crosschannel_norm:
      if (in.size() != 3)
        throw data_error("layer " + std::to_string(layer_index) +
                         ": crosschannel_norm needs a CxHxW input, got " + shape_string(in));
      return in;
    case LayerKind::fully_connected:
      return {spec.outputs};
  }
  throw data_error("unknown layer kind");
}

/// Ordered layer stack with weights; the representation function. Feature
/// vectors are read out of any layer by flattening its activation
/// channel-major, then row, then column (the tensors' storage order).
class Network {
public:
  std::vector<std::size_t> input_shape;
  std::vector<LayerSpec> layers;
  /// One entry per layer; only parametric layers hold tensors.
  std::vector<LayerWeights> weights;
  /// Per-layer output shapes, filled at build time.
  std::vector<std::vector<std::size_t>> output_shapes;

  std::size_t depth() const { return layers.size(); }

  /// Output shape at `layer_index`; -1 addresses the raw input (the identity
  /// representation, the only valid index for an empty network).
  const std::vector<std::size_t>& shape_at(int layer_index) const {
    if (layer_index == -1) return input_shape;
    if (layer_index < 0 || static_cast<std::size_t>(layer_index) >= layers.size())
      throw data_error("layer index " + std::to_string(layer_index) + " out of range");
    return output_shapes[static_cast<std::size_t>(layer_index)];
  }

  std::size_t feature_dim(int layer_index) const {
    return Tensor::count(shape_at(layer_index));
  }

  /// First extent of each layer's output (the "channels" view of the stack).
  std::vector<std::size_t> channel_counts() const {
    std::vector<std::size_t> c;
    c.reserve(layers.size());
    for (const auto& s : output_shapes) c.push_back(s[0]);
    return c;
  }
};

enum class WeightInit { zeros, seeded_random };

inline std::vector<std::size_t> kernel_shape_for(const LayerSpec& spec,
                                                 const std::vector<std::size_t>& in) {
  if (spec.kind == LayerKind::convolution)
    return {spec.kernels, in[0], spec.kernel_h, spec.kernel_w};
  // fully connected: [outputs x flattened input]
  return {spec.outputs, Tensor::count(in)};
}

/// Validates the shape chain and assembles the network. Random weights are
/// uniform in +-1/sqrt(fan_in), deterministic per seed; biases start at zero.
inline Network build_network(std::vector<std::size_t> input_shape,
                             std::vector<LayerSpec> specs,
                             WeightInit init = WeightInit::zeros,
                             std::uint64_t seed = 0) {
  Network net;
  net.input_shape = std::move(input_shape);
  if (net.input_shape.empty() || Tensor::count(net.input_shape) == 0)
    throw data_error("build_network: empty input shape");
  net.layers = std::move(specs);
  net.weights.resize(net.layers.size());
  net.output_shapes.reserve(net.layers.size());

  std::vector<std::size_t> cur = net.input_shape;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& spec = net.layers[i];
    std::vector<std::size_t> out = layer_output_shape(spec, cur, i);
    if (spec.parametric()) {
      const auto kshape = kernel_shape_for(spec, cur);
      Tensor kernels(kshape);
      Tensor biases({kshape[0]});
      if (init == WeightInit::seeded_random) {
        Rng rng = Rng::stream(seed, i);
        const std::size_t fan_in =
            Tensor::count(kshape) / kshape[0]; // inputs feeding one output unit
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t j = 0; j < kernels.size(); ++j)
          kernels[j] = rng.uniform(-scale, scale);
      }
      net.weights[i] = LayerWeights{std::move(kernels), std::move(biases)};
    }
    net.output_shapes.push_back(out);
    cur = std::move(out);
  }
  return net;
}

namespace detail {

inline Tensor conv_forward(const LayerSpec& s, const LayerWeights& w, const Tensor& in,
                           const std::vector<std::size_t>& out_shape) {
  const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
  const std::size_t K = out_shape[0], OH = out_shape[1], OW = out_shape[2];
  Tensor out(out_shape);
  const long pad = static_cast<long>(s.pad);
  for (std::size_t o = 0; o < K; ++o) {
    const double bias = w.biases[o];
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double acc = bias;
        const long base_y = static_cast<long>(oy * s.stride) - pad;
        const long base_x = static_cast<long>(ox * s.stride) - pad;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
            const long iy = base_y + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
              const long ix = base_x + static_cast<long>(kx);
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              acc += w.kernels[((o * C + c) * s.kernel_h + ky) * s.kernel_w + kx] *
                     in.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  }
  return out;
}

inline Tensor conv_backward(const LayerSpec& s, const LayerWeights& w, const Tensor& in,
                            const Tensor& grad_out) {
  const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
  const std::size_t K = grad_out.extent(0), OH = grad_out.extent(1), OW = grad_out.extent(2);
  Tensor grad_in(in.shape());
  const long pad = static_cast<long>(s.pad);
  for (std::size_t o = 0; o < K; ++o) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const double g = grad_out.at(o, oy, ox);
        if (g == 0.0) continue;
        const long base_y = static_cast<long>(oy * s.stride) - pad;
        const long base_x = static_cast<long>(ox * s.stride) - pad;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
            const long iy = base_y + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
              const long ix = base_x + static_cast<long>(kx);
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              grad_in.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                  g * w.kernels[((o * C + c) * s.kernel_h + ky) * s.kernel_w + kx];
            }
          }
        }
      }
    }
  }
  return grad_in;
}

inline Tensor pool_forward(const LayerSpec& s, const Tensor& in,
                           const std::vector<std::size_t>& out_shape) {
  const std::size_t C = in.extent(0);
  const std::size_t OH = out_shape[1], OW = out_shape[2];
  Tensor out(out_shape);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t ky = 0; ky < s.window; ++ky)
          for (std::size_t kx = 0; kx < s.window; ++kx) {
            const double v = in.at(c, oy * s.pool_stride + ky, ox * s.pool_stride + kx);
            if (v > best) best = v; // strict: first-encountered max wins ties
          }
        out.at(c, oy, ox) = best;
      }
  return out;
}

inline Tensor pool_backward(const LayerSpec& s, const Tensor& in, const Tensor& grad_out) {
  const std::size_t C = in.extent(0);
  const std::size_t OH = grad_out.extent(1), OW = grad_out.extent(2);
  Tensor grad_in(in.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t by = 0, bx = 0;
        for (std::size_t ky = 0; ky < s.window; ++ky)
          for (std::size_t kx = 0; kx < s.window; ++kx) {
            const std::size_t iy = oy * s.pool_stride + ky;
            const std::size_t ix = ox * s.pool_stride + kx;
            const double v = in.at(c, iy, ix);
            if (v > best) {
              best = v;
              by = iy;
              bx = ix;
            }
          }
        grad_in.at(c, by, bx) += grad_out.at(c, oy, ox);
      }
  return grad_in;
}

// Window over channels for cross-channel normalization: [c-(n-1)/2, c+n/2].
inline void norm_window(std::size_t c, std::size_t n, std::size_t channels,
                        std::size_t& lo, std::size_t& hi) {
  const std::size_t below = (n - 1) / 2;
  lo = c >= below ? c - below : 0;
  hi = std::min(channels - 1, c + n / 2);
}

inline Tensor norm_forward(const LayerSpec& s, const Tensor& in) {
  const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
  Tensor out(in.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t lo, hi;
        norm_window(c, s.norm_n, C, lo, hi);
        double acc = 0.0;
        for (std::size_t cc = lo; cc <= hi; ++cc) acc += in.at(cc, y, x) * in.at(cc, y, x);
        out.at(c, y, x) = in.at(c, y, x) * std::pow(s.norm_k + s.norm_alpha * acc, -s.norm_beta);
      }
  return out;
}

inline Tensor norm_backward(const LayerSpec& s, const Tensor& in, const Tensor& grad_out) {
  const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
  Tensor grad_in(in.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t lo, hi;
        norm_window(c, s.norm_n, C, lo, hi);
        double acc = 0.0;
        for (std::size_t cc = lo; cc <= hi; ++cc) acc += in.at(cc, y, x) * in.at(cc, y, x);
        const double scale = s.norm_k + s.norm_alpha * acc;
        const double g = grad_out.at(c, y, x);
        const double v = in.at(c, y, x);
        // direct term
        grad_in.at(c, y, x) += g * std::pow(scale, -s.norm_beta);
        // through the energy sum
        const double common = -2.0 * s.norm_alpha * s.norm_beta * g * v *
                              std::pow(scale, -s.norm_beta - 1.0);
        for (std::size_t cc = lo; cc <= hi; ++cc)
          grad_in.at(cc, y, x) += common * in.at(cc, y, x);
      }
    }
  return grad_in;
}

inline Tensor fc_forward(const LayerWeights& w, const Tensor& in,
                         const std::vector<std::size_t>& out_shape) {
  const std::size_t out_n = out_shape[0];
  const std::size_t in_n = in.size();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < out_n; ++o) {
    double acc = w.biases[o];
    const double* row = w.kernels.data() + o * in_n;
    for (std::size_t i = 0; i < in_n; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
  return out;
}

inline Tensor fc_backward(const LayerWeights& w, const Tensor& in, const Tensor& grad_out) {
  const std::size_t out_n = grad_out.size();
  const std::size_t in_n = in.size();
  Tensor grad_in(in.shape());
  for (std::size_t o = 0; o < out_n; ++o) {
    const double g = grad_out[o];
    if (g == 0.0) continue;
    const double* row = w.kernels.data() + o * in_n;
    for (std::size_t i = 0; i < in_n; ++i) grad_in[i] += g * row[i];
  }
  return grad_in;
}

inline Tensor softmax_forward(const Tensor& in) {
  Tensor out(in.shape());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < in.size(); ++i) mx = std::max(mx, in[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= z;
  return out;
}

inline Tensor softmax_backward(const Tensor& softmax_out, const Tensor& grad_out) {
  double g_dot_s = 0.0;
  for (std::size_t i = 0; i < softmax_out.size(); ++i) g_dot_s += grad_out[i] * softmax_out[i];
  Tensor grad_in(softmax_out.shape());
  for (std::size_t i = 0; i < softmax_out.size(); ++i)
    grad_in[i] = softmax_out[i] * (grad_out[i] - g_dot_s);
  return grad_in;
}

inline Tensor layer_forward(const Network& net, std::size_t i, const Tensor& in) {
  const LayerSpec& s = net.layers[i];
  switch (s.kind) {
    case LayerKind::convolution:
      return conv_forward(s, net.weights[i], in, net.output_shapes[i]);
    case LayerKind::rectifier: {
      Tensor out(in.shape());
      for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] > 0.0 ? in[j] : 0.0;
      return out;
    }
    case LayerKind::maxpool:
      return pool_forward(s, in, net.output_shapes[i]);
    case LayerKind::crosschannel_norm:
      return norm_forward(s, in);
    case LayerKind::fully_connected:
      return fc_forward(net.weights[i], in, net.output_shapes[i]);
    case LayerKind::softmax:
      return softmax_forward(in);
  }
  throw data_error("unknown layer kind");
}

inline Tensor layer_backward(const Network& net, std::size_t i, const Tensor& in,
                             const Tensor& out, const Tensor& grad_out) {
  const LayerSpec& s = net.layers[i];
  switch (s.kind) {
    case LayerKind::convolution:
      return conv_backward(s, net.weights[i], in, grad_out);
    case LayerKind::rectifier: {
      Tensor grad_in(in.shape());
      // subgradient 0 at exactly 0
      for (std::size_t j = 0; j < in.size(); ++j) grad_in[j] = in[j] > 0.0 ? grad_out[j] : 0.0;
      return grad_in;
    }
    case LayerKind::maxpool:
      return pool_backward(s, in, grad_out);
    case LayerKind::crosschannel_norm:
      return norm_backward(s, in, grad_out);
    case LayerKind::fully_connected:
      return fc_backward(net.weights[i], in, grad_out);
    case LayerKind::softmax:
      return softmax_backward(out, grad_out);
  }
  throw data_error("unknown layer kind");
}

} // namespace detail

/// Runs the stack; activations[i] is layer i's output. Pure and
/// deterministic. Empty for a zero-layer (identity) network.
inline std::vector<Tensor> forward(const Network& net, const Tensor& image) {
  if (image.shape() != net.input_shape)
    throw data_error("forward: image shape " + shape_string(image.shape()) +
                     " != network input shape " + shape_string(net.input_shape));
  image.require_finite("forward: input image");
  std::vector<Tensor> activations;
  activations.reserve(net.depth());
  const Tensor* cur = &image;
  for (std::size_t i = 0; i < net.depth(); ++i) {
    activations.push_back(detail::layer_forward(net, i, *cur));
    activations.back().require_finite("forward: layer output");
    cur = &activations.back();
  }
  return activations;
}

/// Flattened activations read from one layer (layer_index -1 = raw image).
struct FeatureVector {
  int layer_index = -1;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

inline FeatureVector extract_features(const Network& net, const Tensor& image,
                                      int layer_index) {
  net.shape_at(layer_index); // validates the index
  FeatureVector f;
  f.layer_index = layer_index;
  if (layer_index == -1) {
    if (image.shape() != net.input_shape)
      throw data_error("extract_features: image shape mismatch");
    f.values = image.values();
    return f;
  }
  const auto acts = forward(net, image);
  f.values = acts[static_cast<std::size_t>(layer_index)].values();
  return f;
}

namespace detail {

/// Shared core: backprop grad_at_layer through layers [0, layer_index] given
/// precomputed activations (so invert() can reuse one forward pass).
inline Tensor backward_with_activations(const Network& net, int layer_index,
                                        const Tensor& grad_at_layer, const Tensor& image,
                                        const std::vector<Tensor>& activations) {
  if (grad_at_layer.shape() != net.shape_at(layer_index))
    throw data_error("backward_to_input: gradient shape " +
                     shape_string(grad_at_layer.shape()) + " != layer output shape " +
                     shape_string(net.shape_at(layer_index)));
  if (layer_index == -1) return grad_at_layer;
  Tensor grad = grad_at_layer;
  for (int i = layer_index; i >= 0; --i) {
    const std::size_t ui = static_cast<std::size_t>(i);
    const Tensor& in = (i == 0) ? image : activations[ui - 1];
    grad = layer_backward(net, ui, in, activations[ui], grad);
  }
  grad.require_finite("backward_to_input: gradient");
  return grad;
}

} // namespace detail

/// Gradient of <grad_at_layer, features_at(layer_index, x)> with respect to
/// the input image, evaluated at `image`. Maxpool routes to the
/// first-encountered argmax; the rectifier gates by input sign.
inline Tensor backward_to_input(const Network& net, int layer_index,
                                const Tensor& grad_at_layer, const Tensor& image) {
  const auto activations = forward(net, image);
  return detail::backward_with_activations(net, layer_index, grad_at_layer, image, activations);
}

// ---------------------------------------------------------------------------
// Weight file ("CAVW"): u32 version, u32 parametric-layer count; per layer a
// u32 layer index, u32 ndim, u64 dims[], then f64 kernels followed by f64
// biases (dims[0] of them). Little-endian throughout.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw data_error(std::string("weight file truncated reading ") + what);
  return value;
}

} // namespace detail

inline void save_weights(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("save_weights: cannot open " + path);
  os.write("CAVW", 4);
  detail::write_pod<std::uint32_t>(os, 1);
  std::uint32_t count = 0;
  for (const auto& l : net.layers)
    if (l.parametric()) ++count;
  detail::write_pod<std::uint32_t>(os, count);
  for (std::size_t i = 0; i < net.depth(); ++i) {
    if (!net.layers[i].parametric()) continue;
    const LayerWeights& w = net.weights[i];
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(i));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(w.kernels.rank()));
    for (std::size_t d : w.kernels.shape()) detail::write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(w.kernels.data()),
             static_cast<std::streamsize>(w.kernels.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(w.biases.data()),
             static_cast<std::streamsize>(w.biases.size() * sizeof(double)));
  }
  if (!os) throw data_error("save_weights: write failed for " + path);
}

/// Loads weights into `net`, validating magic, version, and per-layer shapes
/// against the network's specs. Leaves `net` untouched on any error.
inline void load_weights(Network& net, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("load_weights: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CAVW", 4) != 0)
    throw data_error("load_weights: bad magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != 1)
    throw data_error("load_weights: unsupported version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint32_t>(is, "layer count");
  std::uint32_t expected = 0;
  for (const auto& l : net.layers)
    if (l.parametric()) ++expected;
  if (count != expected)
    throw data_error("load_weights: file has " + std::to_string(count) +
                     " parametric layers, network has " + std::to_string(expected));

  std::vector<LayerWeights> staged(net.depth());
  std::vector<bool> seen(net.depth(), false);
  std::vector<std::size_t> cur = net.input_shape;
  std::vector<std::vector<std::size_t>> expected_kernel(net.depth());
  for (std::size_t i = 0; i < net.depth(); ++i) {
    if (net.layers[i].parametric()) expected_kernel[i] = kernel_shape_for(net.layers[i], cur);
    cur = net.output_shapes[i];
  }

  for (std::uint32_t rec = 0; rec < count; ++rec) {
    const auto index = detail::read_pod<std::uint32_t>(is, "layer index");
    if (index >= net.depth() || !net.layers[index].parametric())
      throw data_error("load_weights: layer " + std::to_string(index) +
                       " is not a parametric layer of this network");
    const auto ndim = detail::read_pod<std::uint32_t>(is, "ndim");
    std::vector<std::size_t> dims(ndim);
    for (auto& d : dims)
      d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is, "dim"));
    if (dims != expected_kernel[index])
      throw data_error("load_weights: layer " + std::to_string(index) +
                       " kernel shape " + shape_string(dims) + " != expected " +
                       shape_string(expected_kernel[index]));
    std::vector<double> kernels(Tensor::count(dims));
    is.read(reinterpret_cast<char*>(kernels.data()),
            static_cast<std::streamsize>(kernels.size() * sizeof(double)));
    if (!is) throw data_error("load_weights: truncated kernel data at layer " +
                              std::to_string(index));
    std::vector<double> biases(dims[0]);
    is.read(reinterpret_cast<char*>(biases.data()),
            static_cast<std::streamsize>(biases.size() * sizeof(double)));
    if (!is) throw data_error("load_weights: truncated bias data at layer " +
                              std::to_string(index));
    staged[index] = LayerWeights{Tensor::from_data(dims, std::move(kernels)),
                                 Tensor::from_data({dims[0]}, std::move(biases))};
    seen[index] = true;
  }
  for (std::size_t i = 0; i < net.depth(); ++i)
    if (net.layers[i].parametric() && !seen[i])
      throw data_error("load_weights: missing weights for layer " + std::to_string(i));
  for (std::size_t i = 0; i < net.depth(); ++i)
    if (seen[i]) net.weights[i] = std::move(staged[i]);
}

// ---------------------------------------------------------------------------
// Text spec files: one layer per line, '#' comments.
//   input <C> <H> <W>
//   conv <kernels> <kh> <kw> <stride> <pad>
//   relu
//   maxpool <window> <stride>
//   norm <n> <k> <alpha> <beta>
//   fc <outputs>
//   softmax
// ---------------------------------------------------------------------------

struct NetworkSpec {
  std::vector<std::size_t> input_shape;
  std::vector<LayerSpec> layers;
};

inline NetworkSpec parse_network_spec(std::istream& is) {
  NetworkSpec spec;
  std::string line;
  std::size_t lineno = 0;
  bool have_input = false;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    auto want = [&](auto& v, const char* name) {
      if (!(ls >> v))
        throw data_error("network spec line " + std::to_string(lineno) +
                         ": missing/invalid " + name);
    };
    if (word == "input") {
      std::size_t c, h, w;
      want(c, "channels");
      want(h, "height");
      want(w, "width");
      spec.input_shape = {c, h, w};
      have_input = true;
    } else if (word == "conv") {
      std::size_t k, kh, kw, s, p;
      want(k, "kernels");
      want(kh, "kernel height");
      want(kw, "kernel width");
      want(s, "stride");
      want(p, "pad");
      spec.layers.push_back(LayerSpec::conv(k, kh, kw, s, p));
    } else if (word == "relu") {
      spec.layers.push_back(LayerSpec::relu());
    } else if (word == "maxpool") {
      std::size_t w, s;
      want(w, "window");
      want(s, "stride");
      spec.layers.push_back(LayerSpec::pool(w, s));
    } else if (word == "norm") {
      std::size_t n;
      double k, a, b;
      want(n, "window");
      want(k, "k");
      want(a, "alpha");
      want(b, "beta");
      spec.layers.push_back(LayerSpec::norm(n, k, a, b));
    } else if (word == "fc") {
      std::size_t out;
      want(out, "outputs");
      spec.layers.push_back(LayerSpec::fc(out));
    } else if (word == "softmax") {
      spec.layers.push_back(LayerSpec::softmax());
    } else {
      throw data_error("network spec line " + std::to_string(lineno) +
                       ": unknown layer kind '" + word + "'");
    }
  }
  if (!have_input) throw data_error("network spec: missing 'input' line");
  return spec;
}

inline NetworkSpec load_network_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open network spec " + path);
  return parse_network_spec(is);
}

inline void save_network_spec(const NetworkSpec& spec, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write network spec " + path);
  os << "input " << spec.input_shape[0] << ' ' << spec.input_shape[1] << ' '
     << spec.input_shape[2] << '\n';
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::convolution:
        os << "conv " << l.kernels << ' ' << l.kernel_h << ' ' << l.kernel_w << ' '
           << l.stride << ' ' << l.pad << '\n';
        break;
      case LayerKind::rectifier: os << "relu\n"; break;
      case LayerKind::maxpool: os << "maxpool " << l.window << ' ' << l.pool_stride << '\n'; break;
      case LayerKind::crosschannel_norm:
        os << "norm " << l.norm_n << ' ' << l.norm_k << ' ' << l.norm_alpha << ' '
           << l.norm_beta << '\n';
        break;
      case LayerKind::fully_connected: os << "fc " << l.outputs << '\n'; break;
      case LayerKind::softmax: os << "softmax\n"; break;
    }
  }
}

/// The 20-layer Krizhevsky-style reference stack (AlexNet geometry as shipped
/// with Caffe): five convolution groups of 96/256/384/384/256 kernels, then
/// fully connected 4096/4096/1000. Input is 3 x 227 x 227.
inline NetworkSpec alexnet_reference_spec() {
  NetworkSpec spec;
  spec.input_shape = {3, 227, 227};
  auto& L = spec.layers;
  L.push_back(LayerSpec::conv(96, 11, 11, 4, 0)); // conv1
  L.push_back(LayerSpec::relu());                 // relu1
  L.push_back(LayerSpec::pool(3, 2));             // pool1
  L.push_back(LayerSpec::norm());                 // norm1
  L.push_back(LayerSpec::conv(256, 5, 5, 1, 2));  // conv2
  L.push_back(LayerSpec::relu());                 // relu2
  L.push_back(LayerSpec::pool(3, 2));             // pool2
  L.push_back(LayerSpec::norm());                 // norm2
  L.push_back(LayerSpec::conv(384, 3, 3, 1, 1));  // conv3
  L.push_back(LayerSpec::relu());                 // relu3
  L.push_back(LayerSpec::conv(384, 3, 3, 1, 1));  // conv4
  L.push_back(LayerSpec::relu());                 // relu4
  L.push_back(LayerSpec::conv(256, 3, 3, 1, 1));  // conv5
  L.push_back(LayerSpec::relu());                 // relu5
  L.push_back(LayerSpec::pool(3, 2));             // pool5
  L.push_back(LayerSpec::fc(4096));               // fc6
  L.push_back(LayerSpec::relu());                 // relu6
  L.push_back(LayerSpec::fc(4096));               // fc7
  L.push_back(LayerSpec::relu());                 // relu7
  L.push_back(LayerSpec::fc(1000));               // fc8
  return spec;
}

} // namespace voxrecon

#endif // VOXRECON_NETWORK_HPP
