// Copyright (c) the frdo authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "frdo/frame.hpp"

namespace frdo {

/// Three-dimensional feature tensor. Values are stored channel-major:
/// value(x, y, c) lives at values[c * width * height + y * width + x].
struct FeatureMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> values;

  float at(int x, int y, int c) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float& at(int x, int y, int c) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const float* plane(int c) const { return values.data() + static_cast<std::size_t>(c) * width * height; }
  float* plane(int c) { return values.data() + static_cast<std::size_t>(c) * width * height; }
  std::size_t size() const { return values.size(); }
};

inline FeatureMap make_feature_map(int width, int height, int channels, float fill = 0.0f) {
  if (width < 1 || height < 1 || channels < 1)
    throw std::invalid_argument("feature map: dimensions must be positive");
  FeatureMap m;
  m.width = width;
  m.height = height;
  m.channels = channels;
  m.values.assign(static_cast<std::size_t>(width) * height * channels, fill);
  return m;
}

/// 3x3 convolution, stride 1, zero padding 1. Kernel taps are stored in
/// (out, in, ky, kx) order; one bias per output channel.
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<float> kernel;
  std::vector<float> bias;

  float tap(int out, int in, int ky, int kx) const {
    return kernel[((static_cast<std::size_t>(out) * in_channels + in) * 3 + ky) * 3 + kx];
  }
  float& tap(int out, int in, int ky, int kx) {
    return kernel[((static_cast<std::size_t>(out) * in_channels + in) * 3 + ky) * 3 + kx];
  }
};

inline ConvLayer make_conv_layer(int in_channels, int out_channels) {
  if (in_channels < 1 || out_channels < 1)
    throw std::invalid_argument("conv layer: channel counts must be positive");
  ConvLayer l;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel.assign(static_cast<std::size_t>(out_channels) * in_channels * 9, 0.0f);
  l.bias.assign(static_cast<std::size_t>(out_channels), 0.0f);
  return l;
}

struct Layer {
  enum class Kind { kConv, kRelu, kMaxPool2 };
  Kind kind = Kind::kRelu;
  ConvLayer conv;  // populated for kConv only
};

struct Network {
  int input_channels = 1;
  std::vector<Layer> layers;
};

/// Checks that the layer chain is channel-consistent, starting from
/// input_channels. Throws on the first mismatch.
inline void validate_network(const Network& net) {
  int ch = net.input_channels;
  if (ch != 1 && ch != 3)
    throw std::invalid_argument("network: unsupported input channel count");
  for (const Layer& l : net.layers) {
    if (l.kind == Layer::Kind::kConv) {
      if (l.conv.in_channels != ch)
        throw std::invalid_argument("network: channel mismatch between adjacent layers");
      if (l.conv.kernel.size() != static_cast<std::size_t>(l.conv.out_channels) * l.conv.in_channels * 9)
        throw std::invalid_argument("network: kernel tap count mismatch");
      if (l.conv.bias.size() != static_cast<std::size_t>(l.conv.out_channels))
        throw std::invalid_argument("network: bias count mismatch");
      ch = l.conv.out_channels;
    }
  }
}

inline FeatureMap conv2d(const FeatureMap& input, const ConvLayer& layer) {
  if (input.channels != layer.in_channels)
    throw std::invalid_argument("conv2d: input channel count does not match layer");
  const int w = input.width, h = input.height;
  FeatureMap out = make_feature_map(w, h, layer.out_channels);
  for (int o = 0; o < layer.out_channels; ++o) {
    float* op = out.plane(o);
    const float b = layer.bias[o];
    for (int i = 0, n = w * h; i < n; ++i) op[i] = b;
  }
  // Accumulate one shifted input plane per kernel tap; the x loop is
  // contiguous so it vectorizes.
  for (int o = 0; o < layer.out_channels; ++o) {
    float* op = out.plane(o);
    for (int i = 0; i < layer.in_channels; ++i) {
      const float* ip = input.plane(i);
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const float coef = layer.tap(o, i, ky, kx);
          if (coef == 0.0f) continue;
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int y = y0; y < y1; ++y) {
            float* orow = op + static_cast<std::size_t>(y) * w;
            const float* irow = ip + static_cast<std::size_t>(y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) orow[x] += coef * irow[x];
          }
        }
      }
    }
  }
  return out;
}

inline FeatureMap relu(const FeatureMap& input) {
  FeatureMap out = input;
  for (float& v : out.values) v = std::max(0.0f, v);
  return out;
}

/// 2x2 max pooling, stride 2, per channel. A trailing odd row/column is
/// dropped.
inline FeatureMap maxpool2(const FeatureMap& input) {
  if (input.width < 2 || input.height < 2)
    throw std::invalid_argument("maxpool2: input smaller than 2x2");
  const int ow = input.width / 2, oh = input.height / 2;
  FeatureMap out = make_feature_map(ow, oh, input.channels);
  for (int c = 0; c < input.channels; ++c) {
    const float* ip = input.plane(c);
    float* op = out.plane(c);
    for (int y = 0; y < oh; ++y) {
      const float* r0 = ip + static_cast<std::size_t>(2 * y) * input.width;
      const float* r1 = r0 + input.width;
      for (int x = 0; x < ow; ++x) {
        const float m0 = std::max(r0[2 * x], r0[2 * x + 1]);
        const float m1 = std::max(r1[2 * x], r1[2 * x + 1]);
        op[static_cast<std::size_t>(y) * ow + x] = std::max(m0, m1);
      }
    }
  }
  return out;
}

// Minimum spatial size fed to the network; smaller blocks are zero padded up
// to this so the pooled map stays at least 4x4.
inline constexpr int kMinFeatureInput = 8;

/// Runs a pixel block through the network: samples are scaled by 1/255, a
/// single luminance plane is replicated when the network expects 3 input
/// channels, and blocks with either side below 8 are zero padded to 8 first.
inline FeatureMap extract_features(const Block& block, const Network& net) {
  if (block.width < 1 || block.height < 1)
    throw std::invalid_argument("extract_features: empty block");
  const Block* src = &block;
  Block padded;
  if (block.width < kMinFeatureInput || block.height < kMinFeatureInput) {
    padded = zero_pad_block(block, std::max(block.width, kMinFeatureInput),
                            std::max(block.height, kMinFeatureInput));
    src = &padded;
  }
  if (net.input_channels != 1 && net.input_channels != 3)
    throw std::invalid_argument("extract_features: unsupported input channel count");
  FeatureMap m = make_feature_map(src->width, src->height, net.input_channels);
  const std::size_t plane_size = static_cast<std::size_t>(src->width) * src->height;
  for (std::size_t i = 0; i < plane_size; ++i)
    m.values[i] = static_cast<float>(src->samples[i]) * (1.0f / 255.0f);
  for (int c = 1; c < net.input_channels; ++c)
    std::copy(m.values.begin(), m.values.begin() + plane_size,
              m.values.begin() + c * plane_size);
  for (const Layer& l : net.layers) {
    switch (l.kind) {
      case Layer::Kind::kConv: m = conv2d(m, l.conv); break;
      case Layer::Kind::kRelu: m = relu(m); break;
      case Layer::Kind::kMaxPool2: m = maxpool2(m); break;
    }
  }
  return m;
}

// SplitMix64; fixed generator so seeded networks are identical across
// platforms and standard library versions.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  // Uniform in [0, 1), 53 random bits.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // Uniform in [-1, 1).
  double symmetric() { return 2.0 * unit() - 1.0; }
};

/// Deterministic test fixture: the default two-conv topology with
/// SplitMix64-drawn weights. Taps are uniform in [-a, a) with
/// a = sqrt(6 / (9 * in_channels)); biases are uniform in [-0.05, 0.05).
/// The same seed always produces a bit-identical network.
inline Network seeded_test_network(std::uint64_t seed, int in_channels) {
  if (in_channels != 1 && in_channels != 3)
    throw std::invalid_argument("seeded_test_network: unsupported input channel count");
  SplitMix64 rng(seed);
  Network net;
  net.input_channels = in_channels;
  auto draw_conv = [&rng](int cin, int cout) {
    ConvLayer l = make_conv_layer(cin, cout);
    const double a = std::sqrt(6.0 / (9.0 * cin));
    for (float& t : l.kernel) t = static_cast<float>(a * rng.symmetric());
    for (float& b : l.bias) b = static_cast<float>(0.05 * rng.symmetric());
    return l;
  };
  net.layers.push_back({Layer::Kind::kConv, draw_conv(in_channels, 64)});
  net.layers.push_back({Layer::Kind::kRelu, {}});
  net.layers.push_back({Layer::Kind::kConv, draw_conv(64, 64)});
  net.layers.push_back({Layer::Kind::kRelu, {}});
  net.layers.push_back({Layer::Kind::kMaxPool2, {}});
  validate_network(net);
  return net;
}

/// Single 1->1 convolution whose center tap is 1: the feature map equals the
/// input samples scaled by 1/255.
inline Network identity_network() {
  Network net;
  net.input_channels = 1;
  ConvLayer l = make_conv_layer(1, 1);
  l.tap(0, 0, 1, 1) = 1.0f;
  net.layers.push_back({Layer::Kind::kConv, l});
  return net;
}

/// Channel-preserving convolution that multiplies every value by `scale`
/// (center tap `scale` on the channel diagonal).
inline ConvLayer make_scale_layer(int channels, float scale) {
  ConvLayer l = make_conv_layer(channels, channels);
  for (int c = 0; c < channels; ++c) l.tap(c, c, 1, 1) = scale;
  return l;
}

/// Loads a network from a manifest. The manifest is plain text, one entry
/// per line:
///   blob <path>         (binary32 little-endian weights, relative to the manifest)
///   input <channels>
///   conv <in> <out>
///   relu
///   maxpool2
/// The blob holds each conv layer's taps in (out, in, ky, kx) order followed
/// by its biases, layers in manifest order.
inline Network load_weights(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("weights: cannot open manifest " + manifest_path);
  Network net;
  std::string blob_path;
  bool have_input = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word) || word[0] == '#') continue;
    if (word == "blob") {
      if (!(ls >> blob_path)) throw std::runtime_error("weights: missing blob path");
    } else if (word == "input") {
      if (!(ls >> net.input_channels)) throw std::runtime_error("weights: bad input line");
      have_input = true;
    } else if (word == "conv") {
      int cin = 0, cout = 0;
      if (!(ls >> cin >> cout) || cin < 1 || cout < 1)
        throw std::runtime_error("weights: bad conv line " + std::to_string(lineno));
      if (!have_input && net.layers.empty()) {
        net.input_channels = cin;
        have_input = true;
      }
      net.layers.push_back({Layer::Kind::kConv, make_conv_layer(cin, cout)});
    } else if (word == "relu") {
      net.layers.push_back({Layer::Kind::kRelu, {}});
    } else if (word == "maxpool2") {
      net.layers.push_back({Layer::Kind::kMaxPool2, {}});
    } else {
      throw std::runtime_error("weights: unknown layer '" + word + "' on line " + std::to_string(lineno));
    }
  }
  if (blob_path.empty()) throw std::runtime_error("weights: manifest names no blob");
  const std::filesystem::path resolved =
      std::filesystem::path(manifest_path).parent_path() / blob_path;
  std::ifstream blob(resolved, std::ios::binary);
  if (!blob) throw std::runtime_error("weights: missing blob " + resolved.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(blob)),
                                std::istreambuf_iterator<char>());
  std::size_t expected = 0;
  for (const Layer& l : net.layers)
    if (l.kind == Layer::Kind::kConv)
      expected += static_cast<std::size_t>(l.conv.out_channels) * l.conv.in_channels * 9 +
                  l.conv.out_channels;
  if (raw.size() != expected * 4) throw std::runtime_error("weights: shape mismatch");
  std::size_t off = 0;
  auto read_f32 = [&raw, &off]() {
    std::uint32_t u = static_cast<std::uint32_t>(raw[off]) |
                      static_cast<std::uint32_t>(raw[off + 1]) << 8 |
                      static_cast<std::uint32_t>(raw[off + 2]) << 16 |
                      static_cast<std::uint32_t>(raw[off + 3]) << 24;
    off += 4;
    const float f = std::bit_cast<float>(u);
    if (!std::isfinite(f)) throw std::runtime_error("weights: non-finite weight");
    return f;
  };
  for (Layer& l : net.layers) {
    if (l.kind != Layer::Kind::kConv) continue;
    for (float& t : l.conv.kernel) t = read_f32();
    for (float& b : l.conv.bias) b = read_f32();
  }
  validate_network(net);
  return net;
}

/// Writes a network in the load_weights format (manifest + blob side file).
inline void save_weights(const Network& net, const std::string& manifest_path,
                         const std::string& blob_name) {
  std::ofstream mf(manifest_path);
  if (!mf) throw std::runtime_error("weights: cannot write manifest " + manifest_path);
  mf << "blob " << blob_name << "\n";
  mf << "input " << net.input_channels << "\n";
  for (const Layer& l : net.layers) {
    switch (l.kind) {
      case Layer::Kind::kConv: mf << "conv " << l.conv.in_channels << " " << l.conv.out_channels << "\n"; break;
      case Layer::Kind::kRelu: mf << "relu\n"; break;
      case Layer::Kind::kMaxPool2: mf << "maxpool2\n"; break;
    }
  }
  const std::filesystem::path blob_path =
      std::filesystem::path(manifest_path).parent_path() / blob_name;
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("weights: cannot write blob " + blob_path.string());
  auto write_f32 = [&blob](float f) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(u), static_cast<std::uint8_t>(u >> 8),
                               static_cast<std::uint8_t>(u >> 16), static_cast<std::uint8_t>(u >> 24)};
    blob.write(reinterpret_cast<const char*>(b), 4);
  };
  for (const Layer& l : net.layers) {
    if (l.kind != Layer::Kind::kConv) continue;
    for (float t : l.conv.kernel) write_f32(t);
    for (float b : l.conv.bias) write_f32(b);
  }
}

}  // namespace frdo
