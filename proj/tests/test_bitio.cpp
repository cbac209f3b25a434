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

#include "frdo/bitio.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"

using namespace frdo;
using frdo::test::Rng;

TEST_CASE("exp-Golomb codes have the textbook prefix form", "[bitio]") {
  // value 0 -> "1", 1 -> "010", 2 -> "011", 3 -> "00100"
  BitWriter bw;
  bw.put_ue(0);
  bw.put_ue(1);
  bw.put_ue(2);
  bw.put_ue(3);
  REQUIRE(bw.bit_count() == 1 + 3 + 3 + 5);
  BitReader br(bw.bytes().data(), bw.bytes().size());
  REQUIRE(br.get_ue() == 0);
  REQUIRE(br.get_ue() == 1);
  REQUIRE(br.get_ue() == 2);
  REQUIRE(br.get_ue() == 3);
}

TEST_CASE("ue/se round-trips and length helpers agree", "[bitio]") {
  Rng rng(7);
  BitWriter bw;
  std::vector<std::uint64_t> ue_vals;
  std::vector<std::int64_t> se_vals;
  std::uint64_t expected_bits = 0;
  for (int i = 0; i < 200; ++i) {
    const std::uint64_t u = rng.next() % 100000;
    const std::int64_t s = static_cast<std::int64_t>(rng.next() % 2001) - 1000;
    ue_vals.push_back(u);
    se_vals.push_back(s);
    bw.put_ue(u);
    bw.put_se(s);
    expected_bits += static_cast<std::uint64_t>(ue_bit_length(u) + se_bit_length(s));
  }
  REQUIRE(bw.bit_count() == expected_bits);
  BitReader br(bw.bytes().data(), bw.bytes().size());
  for (int i = 0; i < 200; ++i) {
    REQUIRE(br.get_ue() == ue_vals[i]);
    REQUIRE(br.get_se() == se_vals[i]);
  }
}

TEST_CASE("append copies bit sequences exactly", "[bitio]") {
  BitWriter a;
  a.put_bits(0b101, 3);
  BitWriter b;
  b.put_bits(0b0110011, 7);
  a.append(b);
  REQUIRE(a.bit_count() == 10);
  BitReader br(a.bytes().data(), a.bytes().size());
  REQUIRE(br.get_bits(10) == 0b1010110011);
}

TEST_CASE("align pads to byte boundaries", "[bitio]") {
  BitWriter bw;
  bw.put_bits(0b11, 2);
  bw.align();
  REQUIRE(bw.bit_count() == 8);
  bw.put_bits(0xAB, 8);
  REQUIRE(bw.bytes().size() == 2);
  REQUIRE(bw.bytes()[0] == 0b11000000);
  REQUIRE(bw.bytes()[1] == 0xAB);
}

TEST_CASE("reading past the end reports truncation", "[bitio]") {
  BitWriter bw;
  bw.put_bits(0x3, 2);
  BitReader br(bw.bytes().data(), bw.bytes().size());
  br.get_bits(8);
  REQUIRE_THROWS_WITH(br.get_bits(1), Catch::Matchers::ContainsSubstring("truncated"));
}
