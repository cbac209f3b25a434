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
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "frdo/bitio.hpp"
#include "frdo/frame.hpp"

namespace frdo {

enum class IntraMode : int { kDc = 0, kHorizontal = 1, kVertical = 2, kPlanar = 3 };

/// One candidate coding decision for a block: prediction mode and QP.
struct ParamConfig {
  IntraMode mode = IntraMode::kDc;
  int qp = 22;
};

/// Quantizer step size follows the usual hybrid-codec law: qstep doubles
/// every 6 QP steps and equals 1 at QP 4.
struct QuantParams {
  int qp = 0;
  double qstep = 0.0;
};

inline QuantParams quant_params(int qp) {
  if (qp < 0 || qp > 51) throw std::invalid_argument("qp out of range [0, 51]");
  return {qp, std::exp2((qp - 4) / 6.0)};
}

/// Reference samples for intra prediction of a w x h block.
/// top holds w+1 values (index w is the top-right extension), left holds h+1
/// (index h is the bottom-left extension). Unavailable positions are filled
/// with 128; the avail flags cover the first w (respectively h) entries.
struct IntraContext {
  std::vector<std::uint8_t> top;
  std::vector<std::uint8_t> left;
  std::vector<std::uint8_t> top_avail;
  std::vector<std::uint8_t> left_avail;
};

inline IntraContext make_empty_context(int w, int h) {
  IntraContext ctx;
  ctx.top.assign(static_cast<std::size_t>(w) + 1, 128);
  ctx.left.assign(static_cast<std::size_t>(h) + 1, 128);
  ctx.top_avail.assign(static_cast<std::size_t>(w), 0);
  ctx.left_avail.assign(static_cast<std::size_t>(h), 0);
  return ctx;
}

/// DC averages the available neighbors (128 when there are none), HORIZONTAL
/// copies the left column, VERTICAL the top row, PLANAR blends both linearly.
inline Block predict_intra(const IntraContext& ctx, IntraMode mode, int w, int h) {
  Block pred;
  pred.width = w;
  pred.height = h;
  pred.samples.resize(static_cast<std::size_t>(w) * h);
  switch (mode) {
    case IntraMode::kDc: {
      std::uint32_t sum = 0, count = 0;
      for (int x = 0; x < w; ++x)
        if (ctx.top_avail[x]) { sum += ctx.top[x]; ++count; }
      for (int y = 0; y < h; ++y)
        if (ctx.left_avail[y]) { sum += ctx.left[y]; ++count; }
      const std::uint8_t dc =
          count == 0 ? 128 : static_cast<std::uint8_t>((sum + count / 2) / count);
      std::fill(pred.samples.begin(), pred.samples.end(), dc);
      break;
    }
    case IntraMode::kHorizontal:
      for (int y = 0; y < h; ++y)
        std::fill(pred.samples.begin() + static_cast<std::size_t>(y) * w,
                  pred.samples.begin() + static_cast<std::size_t>(y + 1) * w, ctx.left[y]);
      break;
    case IntraMode::kVertical:
      for (int y = 0; y < h; ++y)
        std::copy(ctx.top.begin(), ctx.top.begin() + w,
                  pred.samples.begin() + static_cast<std::size_t>(y) * w);
      break;
    case IntraMode::kPlanar: {
      // Standard planar blend for rectangular blocks; exact in integer
      // arithmetic because w and h are powers of two.
      const int log_w = std::bit_width(static_cast<unsigned>(w)) - 1;
      const int log_h = std::bit_width(static_cast<unsigned>(h)) - 1;
      const int top_right = ctx.top[w];
      const int bottom_left = ctx.left[h];
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int hor = (w - 1 - x) * ctx.left[y] + (x + 1) * top_right;
          const int ver = (h - 1 - y) * ctx.top[x] + (y + 1) * bottom_left;
          const int v = (hor * h + ver * w + w * h) >> (log_w + log_h + 1);
          pred.at(x, y) = static_cast<std::uint8_t>(v);
        }
      }
      break;
    }
  }
  return pred;
}

namespace detail {

// Orthonormal DCT-II basis for length n: row k, column i holds
// c(k) * cos(pi * (2i + 1) * k / (2n)).
inline const std::vector<double>& dct_matrix(int n) {
  static std::mutex mu;
  static std::map<int, std::vector<double>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> m(static_cast<std::size_t>(n) * n);
  const double norm0 = std::sqrt(1.0 / n);
  const double norm = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      m[static_cast<std::size_t>(k) * n + i] =
          (k == 0 ? norm0 : norm) * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * n));
  return cache.emplace(n, std::move(m)).first->second;
}

inline bool supported_transform_size(int n) { return n >= 4 && n <= 128 && std::has_single_bit(static_cast<unsigned>(n)); }

inline void check_transform_dims(int w, int h) {
  if (!supported_transform_size(w) || !supported_transform_size(h))
    throw std::invalid_argument("transform: block sides must be powers of two in [4, 128]");
}

// Applies the length-n 1-D transform given by `basis` along rows (stride 1)
// of a w x h array when by_rows, else along columns. Accumulation order is
// fixed so results are reproducible.
inline std::vector<double> apply_1d(const std::vector<double>& data, int w, int h,
                                    const std::vector<double>& basis, int n, bool by_rows) {
  std::vector<double> out(data.size(), 0.0);
  if (by_rows) {
    for (int y = 0; y < h; ++y) {
      const double* row = data.data() + static_cast<std::size_t>(y) * w;
      double* orow = out.data() + static_cast<std::size_t>(y) * w;
      for (int k = 0; k < n; ++k) {
        const double* bk = basis.data() + static_cast<std::size_t>(k) * n;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += bk[i] * row[i];
        orow[k] = acc;
      }
    }
  } else {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < n; ++k) {
        const double* bk = basis.data() + static_cast<std::size_t>(k) * n;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += bk[i] * data[static_cast<std::size_t>(i) * w + x];
        out[static_cast<std::size_t>(k) * w + x] = acc;
      }
    }
  }
  return out;
}

inline std::vector<double> apply_1d_inverse(const std::vector<double>& data, int w, int h,
                                            const std::vector<double>& basis, int n, bool by_rows) {
  // The basis is orthonormal, so the inverse is its transpose.
  std::vector<double> out(data.size(), 0.0);
  if (by_rows) {
    for (int y = 0; y < h; ++y) {
      const double* row = data.data() + static_cast<std::size_t>(y) * w;
      double* orow = out.data() + static_cast<std::size_t>(y) * w;
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += basis[static_cast<std::size_t>(k) * n + i] * row[k];
        orow[i] = acc;
      }
    }
  } else {
    for (int x = 0; x < w; ++x) {
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k)
          acc += basis[static_cast<std::size_t>(k) * n + i] * data[static_cast<std::size_t>(k) * w + x];
        out[static_cast<std::size_t>(i) * w + x] = acc;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Orthonormal 2-D DCT-II of a w x h residual (rows first, then columns).
inline std::vector<double> dct2_forward(const std::vector<double>& residual, int w, int h) {
  detail::check_transform_dims(w, h);
  std::vector<double> t = detail::apply_1d(residual, w, h, detail::dct_matrix(w), w, true);
  return detail::apply_1d(t, w, h, detail::dct_matrix(h), h, false);
}

inline std::vector<double> dct2_inverse(const std::vector<double>& coeffs, int w, int h) {
  detail::check_transform_dims(w, h);
  std::vector<double> t = detail::apply_1d_inverse(coeffs, w, h, detail::dct_matrix(h), h, false);
  return detail::apply_1d_inverse(t, w, h, detail::dct_matrix(w), w, true);
}

/// level = sign(c) * floor(|c| / qstep + 0.5)
inline std::vector<std::int32_t> quantize(const std::vector<double>& coeffs, int qp) {
  const double qstep = quant_params(qp).qstep;
  std::vector<std::int32_t> levels(coeffs.size());
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    const double a = std::floor(std::abs(coeffs[i]) / qstep + 0.5);
    levels[i] = static_cast<std::int32_t>(coeffs[i] < 0 ? -a : a);
  }
  return levels;
}

inline std::vector<double> dequantize(const std::vector<std::int32_t>& levels, int qp) {
  const double qstep = quant_params(qp).qstep;
  std::vector<double> coeffs(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) coeffs[i] = levels[i] * qstep;
  return coeffs;
}

/// Diagonal scan order for a w x h coefficient array: diagonals of constant
/// x + y from the DC corner outward, walking up-right on even diagonals and
/// down-left on odd ones.
inline std::vector<int> zigzag_scan(int w, int h) {
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(w) * h);
  for (int d = 0; d <= w + h - 2; ++d) {
    const int x_lo = std::max(0, d - h + 1);
    const int x_hi = std::min(d, w - 1);
    if (d % 2 == 0) {
      for (int x = x_lo; x <= x_hi; ++x) order.push_back((d - x) * w + x);
    } else {
      for (int x = x_hi; x >= x_lo; --x) order.push_back((d - x) * w + x);
    }
  }
  return order;
}

/// One coded block: reconstruction, exact payload bit count, and the payload
/// itself. Decoding the payload reproduces `recon` bit-exactly.
struct EncodedBlock {
  Block recon;
  std::uint64_t bits = 0;
  BitWriter payload;
};

namespace detail {

inline Block reconstruct(const Block& pred, const std::vector<std::int32_t>& levels, int qp,
                         int w, int h) {
  const std::vector<double> res = dct2_inverse(dequantize(levels, qp), w, h);
  Block recon;
  recon.width = w;
  recon.height = h;
  recon.samples.resize(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < recon.samples.size(); ++i) {
    const long v = pred.samples[i] + std::lround(res[i]);
    recon.samples[i] = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
  }
  return recon;
}

// Payload layout (MSB first): [2-bit mode][signed exp-Golomb QP delta when
// delta signaling is on][exp-Golomb last-significant count L, 0 = no nonzero
// level][for each scan position below L: exp-Golomb |level|, then one sign
// bit when the level is nonzero].
inline void write_block_payload(BitWriter& bw, IntraMode mode, int qp, int base_qp,
                                bool signal_delta_qp, const std::vector<std::int32_t>& levels,
                                const std::vector<int>& scan) {
  bw.put_bits(static_cast<std::uint64_t>(mode), 2);
  if (signal_delta_qp) bw.put_se(qp - base_qp);
  std::size_t last = 0;
  for (std::size_t i = 0; i < scan.size(); ++i)
    if (levels[scan[i]] != 0) last = i + 1;
  bw.put_ue(last);
  for (std::size_t i = 0; i < last; ++i) {
    const std::int32_t level = levels[scan[i]];
    bw.put_ue(static_cast<std::uint64_t>(std::abs(level)));
    if (level != 0) bw.put_bit(level < 0);
  }
}

}  // namespace detail

/// Codes one block: intra prediction, DCT of the residual, quantization and
/// exp-Golomb coefficient coding. `signal_delta_qp` adds the per-block QP
/// delta code against base_qp.
inline EncodedBlock encode_block(const Block& orig, const IntraContext& ctx, ParamConfig cfg,
                                 int base_qp = -1, bool signal_delta_qp = false) {
  const int w = orig.width, h = orig.height;
  detail::check_transform_dims(w, h);
  quant_params(cfg.qp);
  if (base_qp < 0) base_qp = cfg.qp;
  const Block pred = predict_intra(ctx, cfg.mode, w, h);
  std::vector<double> residual(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < residual.size(); ++i)
    residual[i] = static_cast<double>(orig.samples[i]) - pred.samples[i];
  const std::vector<std::int32_t> levels = quantize(dct2_forward(residual, w, h), cfg.qp);
  EncodedBlock out;
  detail::write_block_payload(out.payload, cfg.mode, cfg.qp, base_qp, signal_delta_qp, levels,
                              zigzag_scan(w, h));
  out.bits = out.payload.bit_count();
  out.recon = detail::reconstruct(pred, levels, cfg.qp, w, h);
  out.recon.x = orig.x;
  out.recon.y = orig.y;
  return out;
}

/// Decodes one block payload. Produces the same reconstruction as the
/// encoder for the same context.
inline Block decode_block(BitReader& br, const IntraContext& ctx, int w, int h, int base_qp,
                          bool delta_qp_enabled = false) {
  detail::check_transform_dims(w, h);
  const IntraMode mode = static_cast<IntraMode>(br.get_bits(2));
  int qp = base_qp;
  if (delta_qp_enabled) {
    qp = base_qp + static_cast<int>(br.get_se());
    if (qp < 0 || qp > 51) throw std::runtime_error("bitstream: decoded qp out of range");
  }
  const std::vector<int> scan = zigzag_scan(w, h);
  const std::uint64_t last = br.get_ue();
  if (last > scan.size()) throw std::runtime_error("bitstream: coefficient count out of range");
  std::vector<std::int32_t> levels(static_cast<std::size_t>(w) * h, 0);
  for (std::uint64_t i = 0; i < last; ++i) {
    const std::uint64_t mag = br.get_ue();
    if (mag > 0x7fffffffull) throw std::runtime_error("bitstream: coefficient magnitude out of range");
    std::int32_t level = static_cast<std::int32_t>(mag);
    if (level != 0 && br.get_bit()) level = -level;
    levels[scan[i]] = level;
  }
  const Block pred = predict_intra(ctx, mode, w, h);
  return detail::reconstruct(pred, levels, qp, w, h);
}

}  // namespace frdo
