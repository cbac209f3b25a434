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

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace frdo {

/// MSB-first bit sink. Bits within each byte fill from bit 7 downward.
class BitWriter {
 public:
  void put_bit(int b) {
    if (bit_count_ % 8 == 0) bytes_.push_back(0);
    if (b) bytes_.back() |= static_cast<std::uint8_t>(1u << (7 - bit_count_ % 8));
    ++bit_count_;
  }

  void put_bits(std::uint64_t value, int n) {
    for (int i = n - 1; i >= 0; --i) put_bit(static_cast<int>((value >> i) & 1u));
  }

  // Order-0 exponential Golomb: value v is coded as the binary form of v+1
  // preceded by bit_width(v+1)-1 zeros.
  void put_ue(std::uint64_t v) {
    const int n = std::bit_width(v + 1);
    put_bits(0, n - 1);
    put_bits(v + 1, n);
  }

  // Signed mapping: 0, 1, -1, 2, -2, ... -> 0, 1, 2, 3, 4, ...
  void put_se(std::int64_t v) {
    put_ue(v > 0 ? static_cast<std::uint64_t>(2 * v - 1) : static_cast<std::uint64_t>(-2 * v));
  }

  /// Pads with zero bits to the next byte boundary.
  void align() {
    while (bit_count_ % 8 != 0) put_bit(0);
  }

  void append(const BitWriter& other) {
    for (std::uint64_t i = 0; i < other.bit_count_; ++i)
      put_bit((other.bytes_[i / 8] >> (7 - i % 8)) & 1);
  }

  std::uint64_t bit_count() const { return bit_count_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bit_count_ = 0;
};

/// MSB-first bit source over an externally owned byte range.
class BitReader {
 public:
  BitReader(const std::uint8_t* data, std::size_t size) : data_(data), size_bits_(size * 8) {}

  int get_bit() {
    if (pos_ >= size_bits_) throw std::runtime_error("bitstream: truncated payload");
    const int b = (data_[pos_ / 8] >> (7 - pos_ % 8)) & 1;
    ++pos_;
    return b;
  }

  std::uint64_t get_bits(int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | static_cast<std::uint64_t>(get_bit());
    return v;
  }

  std::uint64_t get_ue() {
    int zeros = 0;
    while (get_bit() == 0) {
      if (++zeros > 63) throw std::runtime_error("bitstream: malformed exp-Golomb code");
    }
    std::uint64_t v = 1;
    for (int i = 0; i < zeros; ++i) v = (v << 1) | static_cast<std::uint64_t>(get_bit());
    return v - 1;
  }

  std::int64_t get_se() {
    const std::uint64_t u = get_ue();
    return (u & 1) ? static_cast<std::int64_t>((u + 1) / 2) : -static_cast<std::int64_t>(u / 2);
  }

  void align() { pos_ = (pos_ + 7) / 8 * 8; }

  std::uint64_t bit_position() const { return pos_; }
  std::uint64_t bits_left() const { return size_bits_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::uint64_t size_bits_;
  std::uint64_t pos_ = 0;
};

inline int ue_bit_length(std::uint64_t v) { return 2 * std::bit_width(v + 1) - 1; }

inline int se_bit_length(std::int64_t v) {
  return ue_bit_length(v > 0 ? static_cast<std::uint64_t>(2 * v - 1) : static_cast<std::uint64_t>(-2 * v));
}

}  // namespace frdo
