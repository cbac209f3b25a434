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
#include <cctype>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace frdo {

/// 8-bit luminance raster, row-major.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> samples;

  std::uint8_t at(int x, int y) const { return samples[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return samples[static_cast<std::size_t>(y) * width + x]; }
};

/// Rectangular view into a frame, materialized as a row-major copy.
struct Block {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> samples;

  std::uint8_t at(int bx, int by) const { return samples[static_cast<std::size_t>(by) * width + bx]; }
  std::uint8_t& at(int bx, int by) { return samples[static_cast<std::size_t>(by) * width + bx]; }
};

inline Frame make_frame(int width, int height, std::uint8_t fill = 0) {
  if (width < 1 || height < 1) throw std::invalid_argument("frame: dimensions must be positive");
  Frame f;
  f.width = width;
  f.height = height;
  f.samples.assign(static_cast<std::size_t>(width) * height, fill);
  return f;
}

namespace detail {

// Reads one whitespace-delimited PGM header token, skipping '#' comments.
inline std::string pgm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

inline long pgm_int(std::istream& in, const char* what) {
  const std::string tok = pgm_token(in);
  if (tok.empty()) throw std::runtime_error(std::string("pgm: malformed header, missing ") + what);
  for (char ch : tok)
    if (!std::isdigit(static_cast<unsigned char>(ch)))
      throw std::runtime_error(std::string("pgm: malformed header, bad ") + what);
  return std::stol(tok);
}

}  // namespace detail

/// Loads a binary (P5) PGM with maxval 255. Sample values are copied verbatim.
inline Frame load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path);
  const std::string magic = detail::pgm_token(in);
  if (magic != "P5") throw std::runtime_error("pgm: malformed header, expected P5");
  const long w = detail::pgm_int(in, "width");
  const long h = detail::pgm_int(in, "height");
  const long maxval = detail::pgm_int(in, "maxval");
  if (w < 1 || h < 1) throw std::runtime_error("pgm: malformed header, bad dimensions");
  if (maxval != 255) throw std::runtime_error("pgm: unsupported maxval");
  // Exactly one whitespace byte separates the header from the payload.
  Frame f;
  f.width = static_cast<int>(w);
  f.height = static_cast<int>(h);
  f.samples.resize(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(f.samples.data()), static_cast<std::streamsize>(f.samples.size()));
  if (static_cast<std::size_t>(in.gcount()) != f.samples.size())
    throw std::runtime_error("pgm: truncated payload");
  return f;
}

inline void save_pgm(const Frame& frame, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot open " + path + " for writing");
  out << "P5\n" << frame.width << " " << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.samples.data()),
            static_cast<std::streamsize>(frame.samples.size()));
  if (!out) throw std::runtime_error("pgm: write failed for " + path);
}

/// Copies the w-by-h rectangle at (x, y). The rectangle must lie inside the frame.
inline Block extract_block(const Frame& frame, int x, int y, int w, int h) {
  if (w < 1 || h < 1) throw std::invalid_argument("extract_block: empty rectangle");
  if (x < 0 || y < 0 || x + w > frame.width || y + h > frame.height)
    throw std::invalid_argument("extract_block: rectangle exceeds frame bounds");
  Block b;
  b.x = x;
  b.y = y;
  b.width = w;
  b.height = h;
  b.samples.resize(static_cast<std::size_t>(w) * h);
  for (int row = 0; row < h; ++row) {
    const std::uint8_t* src = frame.samples.data() + static_cast<std::size_t>(y + row) * frame.width + x;
    std::copy(src, src + w, b.samples.data() + static_cast<std::size_t>(row) * w);
  }
  return b;
}

/// Grows a block to target_w x target_h, placing the original at the top-left
/// and filling the added samples with zeros.
inline Block zero_pad_block(const Block& block, int target_w, int target_h) {
  if (target_w < block.width || target_h < block.height)
    throw std::invalid_argument("zero_pad_block: target smaller than block");
  if (target_w == block.width && target_h == block.height) return block;
  Block out;
  out.x = block.x;
  out.y = block.y;
  out.width = target_w;
  out.height = target_h;
  out.samples.assign(static_cast<std::size_t>(target_w) * target_h, 0);
  for (int row = 0; row < block.height; ++row)
    std::copy(block.samples.begin() + static_cast<std::size_t>(row) * block.width,
              block.samples.begin() + static_cast<std::size_t>(row + 1) * block.width,
              out.samples.begin() + static_cast<std::size_t>(row) * target_w);
  return out;
}

/// Pads a frame to the next multiple of `unit` on the right and bottom by
/// replicating the edge samples. The original content stays at (0, 0).
inline Frame pad_frame_to_multiple(const Frame& frame, int unit) {
  if (unit < 1) throw std::invalid_argument("pad_frame_to_multiple: unit must be positive");
  const int pw = (frame.width + unit - 1) / unit * unit;
  const int ph = (frame.height + unit - 1) / unit * unit;
  if (pw == frame.width && ph == frame.height) return frame;
  Frame out = make_frame(pw, ph);
  for (int y = 0; y < ph; ++y) {
    const int sy = y < frame.height ? y : frame.height - 1;
    for (int x = 0; x < pw; ++x) {
      const int sx = x < frame.width ? x : frame.width - 1;
      out.at(x, y) = frame.at(sx, sy);
    }
  }
  return out;
}

inline Frame crop_frame(const Frame& frame, int w, int h) {
  if (w > frame.width || h > frame.height) throw std::invalid_argument("crop_frame: target larger than frame");
  if (w == frame.width && h == frame.height) return frame;
  Frame out = make_frame(w, h);
  for (int y = 0; y < h; ++y)
    std::copy(frame.samples.begin() + static_cast<std::size_t>(y) * frame.width,
              frame.samples.begin() + static_cast<std::size_t>(y) * frame.width + w,
              out.samples.begin() + static_cast<std::size_t>(y) * w);
  return out;
}

}  // namespace frdo
