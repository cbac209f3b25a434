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
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <vector>

#include "frdo/codec.hpp"
#include "frdo/distortion.hpp"
#include "frdo/feature_net.hpp"
#include "frdo/frame.hpp"

namespace frdo {

/// Lagrange multiplier derived from the quantization parameter:
/// value = k * 2^((qp - 12) / 3).
struct Lambda {
  double value = 0.0;
  double k = 0.57;
  int qp = 0;
};

inline Lambda lambda_from_qp(int qp, double k = 0.57) {
  if (qp < 0 || qp > 51) throw std::invalid_argument("lambda_from_qp: qp out of range [0, 51]");
  if (!(k > 0.0)) throw std::invalid_argument("lambda_from_qp: k must be positive");
  return {k * std::exp2((qp - 12) / 3.0), k, qp};
}

/// Lagrangian cost J = D + lambda * R.
struct RDCost {
  double distortion = 0.0;
  std::uint64_t rate_bits = 0;
  double j = 0.0;
};

inline RDCost rd_cost(double distortion, std::uint64_t rate_bits, Lambda lambda) {
  if (distortion < 0.0) throw std::invalid_argument("rd_cost: negative distortion");
  return {distortion, rate_bits, distortion + lambda.value * static_cast<double>(rate_bits)};
}

enum class SplitType : int { kNone = 0, kQuad = 1, kBinH = 2, kBinV = 3, kTriH = 4, kTriV = 5 };

struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
};

inline std::vector<Rect> split_children(Rect r, SplitType s) {
  switch (s) {
    case SplitType::kNone:
      return {};
    case SplitType::kQuad: {
      const int hw = r.w / 2, hh = r.h / 2;
      return {{r.x, r.y, hw, hh}, {r.x + hw, r.y, hw, hh}, {r.x, r.y + hh, hw, hh},
              {r.x + hw, r.y + hh, hw, hh}};
    }
    case SplitType::kBinH: {
      const int hh = r.h / 2;
      return {{r.x, r.y, r.w, hh}, {r.x, r.y + hh, r.w, hh}};
    }
    case SplitType::kBinV: {
      const int hw = r.w / 2;
      return {{r.x, r.y, hw, r.h}, {r.x + hw, r.y, hw, r.h}};
    }
    case SplitType::kTriH: {
      const int q = r.h / 4;
      return {{r.x, r.y, r.w, q}, {r.x, r.y + q, r.w, 2 * q}, {r.x, r.y + 3 * q, r.w, q}};
    }
    case SplitType::kTriV: {
      const int q = r.w / 4;
      return {{r.x, r.y, q, r.h}, {r.x + q, r.y, 2 * q, r.h}, {r.x + 3 * q, r.y, q, r.h}};
    }
  }
  return {};
}

/// Encoder settings for one run.
struct EncoderConfig {
  int ctu_size = 64;
  int min_cu = 4;
  int max_mtt_depth = 3;
  DistortionKind kind = DistortionKind::kSse;
  int base_qp = 22;
  int delta_qp_range = 0;  // 0 disables per-block QP variation
  double k = 0.57;
  const Network* network = nullptr;  // required for feature kinds
  // Test hook: multiplies the anchor normalization factor inside
  // compare_candidates. Leave at 1.0 for correct behavior.
  double debug_normalization_scale = 1.0;
};

inline void validate_config(const EncoderConfig& cfg) {
  if (cfg.min_cu < 4 || !std::has_single_bit(static_cast<unsigned>(cfg.min_cu)))
    throw std::invalid_argument("config: min_cu must be a power of two >= 4");
  if (cfg.ctu_size < cfg.min_cu || cfg.ctu_size > 128 ||
      !std::has_single_bit(static_cast<unsigned>(cfg.ctu_size)))
    throw std::invalid_argument("config: ctu_size must be a power of two in [min_cu, 128]");
  if (cfg.max_mtt_depth < 0) throw std::invalid_argument("config: max_mtt_depth must be >= 0");
  if (cfg.base_qp < 0 || cfg.base_qp > 51) throw std::invalid_argument("config: qp out of range [0, 51]");
  if (cfg.delta_qp_range < 0 || cfg.delta_qp_range > 7)
    throw std::invalid_argument("config: delta_qp_range out of range [0, 7]");
  if (!(cfg.k > 0.0)) throw std::invalid_argument("config: k must be positive");
  if (is_feature_kind(cfg.kind) && cfg.network == nullptr)
    throw std::invalid_argument("config: feature distortion kinds require a network");
}

/// Splits legal for a rect at the given multi-type-tree depth. mtt_depth
/// counts binary/ternary ancestors; quad children inherit their parent's
/// depth, binary/ternary children increment it.
inline std::vector<SplitType> legal_splits(Rect r, int mtt_depth, const EncoderConfig& cfg) {
  std::vector<SplitType> out;
  if (r.w == r.h && r.w >= 2 * cfg.min_cu) out.push_back(SplitType::kQuad);
  if (mtt_depth < cfg.max_mtt_depth) {
    if (r.h >= 2 * cfg.min_cu) out.push_back(SplitType::kBinH);
    if (r.w >= 2 * cfg.min_cu) out.push_back(SplitType::kBinV);
    if (r.h % 4 == 0 && r.h >= 4 * cfg.min_cu) out.push_back(SplitType::kTriH);
    if (r.w % 4 == 0 && r.w >= 4 * cfg.min_cu) out.push_back(SplitType::kTriV);
  }
  return out;
}

inline int child_mtt_depth(SplitType s, int mtt_depth) {
  return s == SplitType::kQuad ? mtt_depth : mtt_depth + 1;
}

/// Working reconstruction of one CTU during search, encode and decode.
/// Prediction context never crosses the CTU, so this is the whole
/// neighborhood universe of any block inside it.
struct CtuState {
  int origin_x = 0;
  int origin_y = 0;
  int size = 0;
  std::vector<std::uint8_t> recon;
  std::vector<std::uint8_t> coded;
};

inline CtuState make_ctu_state(int origin_x, int origin_y, int size) {
  CtuState st;
  st.origin_x = origin_x;
  st.origin_y = origin_y;
  st.size = size;
  st.recon.assign(static_cast<std::size_t>(size) * size, 0);
  st.coded.assign(static_cast<std::size_t>(size) * size, 0);
  return st;
}

inline void apply_block(CtuState& st, const Block& b) {
  const int lx = b.x - st.origin_x, ly = b.y - st.origin_y;
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(ly + y) * st.size + lx + x;
      st.recon[idx] = b.at(x, y);
      st.coded[idx] = 1;
    }
}

inline Block state_block(const CtuState& st, Rect r) {
  Block b;
  b.x = r.x;
  b.y = r.y;
  b.width = r.w;
  b.height = r.h;
  b.samples.resize(static_cast<std::size_t>(r.w) * r.h);
  const int lx = r.x - st.origin_x, ly = r.y - st.origin_y;
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x)
      b.at(x, y) = st.recon[static_cast<std::size_t>(ly + y) * st.size + lx + x];
  return b;
}

/// Builds the intra prediction context for a rect from the CTU state.
/// Neighbors outside the CTU or not yet reconstructed read as 128 and count
/// as unavailable.
inline IntraContext make_intra_context(const CtuState& st, Rect r) {
  IntraContext ctx = make_empty_context(r.w, r.h);
  const int lx = r.x - st.origin_x, ly = r.y - st.origin_y;
  auto sample = [&st](int sx, int sy, std::uint8_t* value) {
    if (sx < 0 || sy < 0 || sx >= st.size || sy >= st.size) return false;
    const std::size_t idx = static_cast<std::size_t>(sy) * st.size + sx;
    if (!st.coded[idx]) return false;
    *value = st.recon[idx];
    return true;
  };
  for (int i = 0; i <= r.w; ++i) {
    std::uint8_t v = 128;
    const bool ok = sample(lx + i, ly - 1, &v);
    ctx.top[i] = v;
    if (i < r.w) ctx.top_avail[i] = ok;
  }
  for (int j = 0; j <= r.h; ++j) {
    std::uint8_t v = 128;
    const bool ok = sample(lx - 1, ly + j, &v);
    ctx.left[j] = v;
    if (j < r.h) ctx.left_avail[j] = ok;
  }
  return ctx;
}

/// Caches original-block feature maps by rect during one CTU search; the
/// same sub-rect is reached through many split paths.
class FeatureCache {
 public:
  const FeatureMap& get(const Frame& frame, Rect r, const Network& net) {
    const std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint16_t>(r.x)) << 48) |
                              (static_cast<std::uint64_t>(static_cast<std::uint16_t>(r.y)) << 32) |
                              (static_cast<std::uint64_t>(static_cast<std::uint16_t>(r.w)) << 16) |
                              static_cast<std::uint64_t>(static_cast<std::uint16_t>(r.h));
    auto it = map_.find(key);
    if (it != map_.end()) return it->second;
    FeatureMap m = extract_features(extract_block(frame, r.x, r.y, r.w, r.h), net);
    return map_.emplace(key, std::move(m)).first->second;
  }
  void clear() { map_.clear(); }

 private:
  std::unordered_map<std::uint64_t, FeatureMap> map_;
};

/// Winner selection over prepared candidate distortions: normalize feature
/// distortions against the first candidate, form the effective distortion
/// for `kind`, then take the argmin of J = D + lambda * R. Ties go to the
/// lower index.
struct SelectionDetail {
  std::size_t winner = 0;
  std::vector<CandidateDistortion> dist;
  std::vector<RDCost> cost;
};

inline SelectionDetail select_winner(DistortionKind kind, Lambda lambda,
                                     std::vector<CandidateDistortion> dists,
                                     std::span<const std::uint64_t> rates,
                                     double normalization_scale_hook = 1.0) {
  if (dists.empty() || dists.size() != rates.size())
    throw std::invalid_argument("select_winner: empty or mismatched candidate list");
  if (is_feature_kind(kind)) {
    normalize_candidates(dists);
    if (normalization_scale_hook != 1.0)
      for (CandidateDistortion& c : dists) c.d_feat_norm *= normalization_scale_hook;
  }
  SelectionDetail out;
  out.cost.reserve(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i)
    out.cost.push_back(rd_cost(effective_distortion(kind, dists[i]), rates[i], lambda));
  for (std::size_t i = 1; i < out.cost.size(); ++i)
    if (out.cost[i].j < out.cost[out.winner].j) out.winner = i;
  out.dist = std::move(dists);
  return out;
}

/// One candidate reconstruction of a region together with its total rate.
struct RDCandidate {
  Block recon;
  std::uint64_t rate_bits = 0;
};

inline SelectionDetail compare_candidates_detailed(const Block& orig,
                                                   const std::vector<RDCandidate>& cands,
                                                   const EncoderConfig& cfg, Lambda lambda,
                                                   const FeatureMap* psi_orig = nullptr) {
  if (cands.empty()) throw std::invalid_argument("compare_candidates: empty candidate list");
  std::vector<CandidateDistortion> dists(cands.size());
  std::vector<std::uint64_t> rates(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (cands[i].recon.width != orig.width || cands[i].recon.height != orig.height)
      throw std::invalid_argument("compare_candidates: candidate dimensions differ from original");
    dists[i].d_sse = sse_pixel(orig, cands[i].recon);
    rates[i] = cands[i].rate_bits;
  }
  if (is_feature_kind(cfg.kind)) {
    if (cfg.network == nullptr)
      throw std::invalid_argument("compare_candidates: feature kind without network");
    FeatureMap local_orig;
    if (psi_orig == nullptr) {
      local_orig = extract_features(orig, *cfg.network);
      psi_orig = &local_orig;
    }
    const bool sad = uses_sad_metric(cfg.kind);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const FeatureMap psi = extract_features(cands[i].recon, *cfg.network);
      dists[i].d_feat = sad ? fsad(*psi_orig, psi) : fsse(*psi_orig, psi);
    }
  }
  return select_winner(cfg.kind, lambda, std::move(dists), rates, cfg.debug_normalization_scale);
}

/// Index of the rate-distortion winner among candidate reconstructions of
/// the same region. The first candidate anchors the feature normalization.
inline std::size_t compare_candidates(const Block& orig, const std::vector<RDCandidate>& cands,
                                      const EncoderConfig& cfg, Lambda lambda) {
  return compare_candidates_detailed(orig, cands, cfg, lambda).winner;
}

/// Best leaf coding of a block: every mode at every QP in qp_list, judged by
/// pixel SSE cost. Candidates are enumerated per QP in ascending order with
/// modes DC, HORIZONTAL, VERTICAL, PLANAR inside each QP; the first minimum
/// wins ties.
struct LeafChoice {
  ParamConfig cfg;
  EncodedBlock enc;
  RDCost cost;  // rate counts the leaf payload only
};

inline LeafChoice best_leaf_config(const Block& orig, const IntraContext& ctx,
                                   const std::vector<int>& qp_list, const EncoderConfig& cfg,
                                   Lambda lambda) {
  if (qp_list.empty()) throw std::invalid_argument("best_leaf_config: empty qp list");
  const bool signal_dqp = cfg.delta_qp_range > 0;
  std::optional<LeafChoice> best;
  for (int qp : qp_list) {
    for (IntraMode mode : {IntraMode::kDc, IntraMode::kHorizontal, IntraMode::kVertical,
                           IntraMode::kPlanar}) {
      ParamConfig pc{mode, qp};
      EncodedBlock enc = encode_block(orig, ctx, pc, cfg.base_qp, signal_dqp);
      const RDCost cost = rd_cost(sse_pixel(orig, enc.recon), enc.bits, lambda);
      if (!best || cost.j < best->cost.j) best = LeafChoice{pc, std::move(enc), cost};
    }
  }
  return *best;
}

/// A node of the chosen partition tree. Leaf nodes carry their coded payload.
struct PartitionNode {
  Rect rect;
  SplitType split = SplitType::kNone;
  std::vector<PartitionNode> children;
  ParamConfig leaf_cfg;
  EncodedBlock leaf;
  RDCost cost;  // rate includes this node's 3-bit split code
};

inline constexpr int kSplitCodeBits = 3;

namespace detail {

struct SearchContext {
  const Frame* frame = nullptr;
  const EncoderConfig* cfg = nullptr;
  Lambda lambda;
  std::vector<int> qp_list;
  FeatureCache cache;
};

inline std::vector<int> leaf_qp_list(const EncoderConfig& cfg) {
  if (cfg.delta_qp_range == 0) return {cfg.base_qp};
  std::vector<int> qps;
  for (int qp = std::max(0, cfg.base_qp - cfg.delta_qp_range);
       qp <= std::min(51, cfg.base_qp + cfg.delta_qp_range); ++qp)
    qps.push_back(qp);
  return qps;
}

// Recursive candidate search over one rect. `state` holds the
// reconstructions of everything coded before this rect in the winning
// order; on return it additionally holds this rect's winning
// reconstruction.
inline PartitionNode search_region(SearchContext& sc, Rect r, CtuState& state, int mtt_depth) {
  const EncoderConfig& cfg = *sc.cfg;
  const Block orig = extract_block(*sc.frame, r.x, r.y, r.w, r.h);

  // Unsplit candidate: best leaf coding against the current context.
  PartitionNode none_node;
  none_node.rect = r;
  none_node.split = SplitType::kNone;
  {
    const IntraContext ctx = make_intra_context(state, r);
    LeafChoice leaf = best_leaf_config(orig, ctx, sc.qp_list, cfg, sc.lambda);
    none_node.leaf_cfg = leaf.cfg;
    none_node.leaf = std::move(leaf.enc);
    none_node.cost = rd_cost(leaf.cost.distortion, leaf.cost.rate_bits + kSplitCodeBits, sc.lambda);
  }
  CtuState none_state = state;
  apply_block(none_state, none_node.leaf.recon);

  const std::vector<SplitType> splits = legal_splits(r, mtt_depth, cfg);
  if (splits.empty()) {
    state = std::move(none_state);
    return none_node;
  }

  struct SplitCandidate {
    PartitionNode node;
    CtuState state;
  };
  std::vector<SplitCandidate> split_cands;
  split_cands.reserve(splits.size());
  for (SplitType s : splits) {
    SplitCandidate cand{{}, state};
    cand.node.rect = r;
    cand.node.split = s;
    std::uint64_t rate = kSplitCodeBits;
    for (Rect child : split_children(r, s)) {
      cand.node.children.push_back(search_region(sc, child, cand.state, child_mtt_depth(s, mtt_depth)));
      rate += cand.node.children.back().cost.rate_bits;
    }
    cand.node.cost.rate_bits = rate;
    split_cands.push_back(std::move(cand));
  }

  // Compare all candidates over the full rect; the unsplit candidate comes
  // first and anchors the feature normalization.
  std::vector<RDCandidate> rd_cands;
  rd_cands.reserve(1 + split_cands.size());
  rd_cands.push_back({none_node.leaf.recon, none_node.cost.rate_bits});
  for (const SplitCandidate& c : split_cands)
    rd_cands.push_back({state_block(c.state, r), c.node.cost.rate_bits});
  const FeatureMap* psi_orig = nullptr;
  if (is_feature_kind(cfg.kind)) psi_orig = &sc.cache.get(*sc.frame, r, *cfg.network);
  SelectionDetail sel = compare_candidates_detailed(orig, rd_cands, cfg, sc.lambda, psi_orig);

  if (sel.winner == 0) {
    none_node.cost = sel.cost[0];
    state = std::move(none_state);
    return none_node;
  }
  SplitCandidate& win = split_cands[sel.winner - 1];
  win.node.cost = sel.cost[sel.winner];
  state = std::move(win.state);
  return std::move(win.node);
}

inline void serialize_node(const PartitionNode& node, BitWriter& bw) {
  bw.put_bits(static_cast<std::uint64_t>(node.split), kSplitCodeBits);
  if (node.split == SplitType::kNone) {
    bw.append(node.leaf.payload);
    return;
  }
  for (const PartitionNode& child : node.children) serialize_node(child, bw);
}

}  // namespace detail

/// Searches the optimal partition of `rect` (treated as one CTU rooted at
/// its own context universe) with the base QP only. The returned node's
/// cost covers the whole subtree including split-signaling bits.
inline PartitionNode partition_region(const Frame& frame, Rect rect, CtuState& state,
                                      const EncoderConfig& cfg, Lambda lambda, int mtt_depth = 0) {
  validate_config(cfg);
  detail::SearchContext sc;
  EncoderConfig no_dqp = cfg;
  no_dqp.delta_qp_range = 0;
  sc.frame = &frame;
  sc.cfg = &no_dqp;
  sc.lambda = lambda;
  sc.qp_list = detail::leaf_qp_list(no_dqp);
  return detail::search_region(sc, rect, state, mtt_depth);
}

inline PartitionNode partition_region(const Frame& frame, Rect rect, const EncoderConfig& cfg,
                                      Lambda lambda) {
  CtuState state = make_ctu_state(rect.x, rect.y, std::max(rect.w, rect.h));
  return partition_region(frame, rect, state, cfg, lambda);
}

/// Same search as partition_region, but every leaf additionally evaluates
/// QPs in [base_qp - r, base_qp + r] (clamped to [0, 51]) and pays for the
/// signed exp-Golomb delta-QP code. Lambda stays at the base QP value.
inline PartitionNode delta_qp_search(const Frame& frame, Rect rect, CtuState& state,
                                     const EncoderConfig& cfg, Lambda lambda, int mtt_depth = 0) {
  validate_config(cfg);
  detail::SearchContext sc;
  sc.frame = &frame;
  sc.cfg = &cfg;
  sc.lambda = lambda;
  sc.qp_list = detail::leaf_qp_list(cfg);
  return detail::search_region(sc, rect, state, mtt_depth);
}

inline PartitionNode delta_qp_search(const Frame& frame, Rect rect, const EncoderConfig& cfg,
                                     Lambda lambda) {
  CtuState state = make_ctu_state(rect.x, rect.y, std::max(rect.w, rect.h));
  return delta_qp_search(frame, rect, state, cfg, lambda);
}

// ---------------------------------------------------------------------------
// Exhaustive partition oracle.
//
// Independent re-derivation of the partition decision over a small rect: at
// every node the complete candidate set (unsplit plus every legal split) is
// expanded and re-coded from scratch, children fully re-derived, and the
// candidate list is evaluated with inline normalization and cost arithmetic
// rather than the search's helpers. The search layers caching and state
// reuse on top of the same decision rule; this path has none of that, so
// any disagreement points at a bookkeeping bug there. It shares only the
// leaf coder and the context construction, which are part of the coding
// contract being checked.
// ---------------------------------------------------------------------------

struct OracleResult {
  PartitionNode tree;
  RDCost cost;
};

namespace detail {

inline PartitionNode oracle_solve(const Frame& frame, Rect r, CtuState& state, int mtt_depth,
                                  const EncoderConfig& cfg, Lambda lambda,
                                  const std::vector<int>& qp_list) {
  const Block orig = extract_block(frame, r.x, r.y, r.w, r.h);

  struct OracleCand {
    PartitionNode node;
    CtuState st;
    Block recon;
  };
  std::vector<OracleCand> cands;

  {
    OracleCand c{{}, state, {}};
    c.node.rect = r;
    c.node.split = SplitType::kNone;
    const IntraContext ctx = make_intra_context(state, r);
    LeafChoice leaf = best_leaf_config(orig, ctx, qp_list, cfg, lambda);
    c.node.leaf_cfg = leaf.cfg;
    c.node.leaf = std::move(leaf.enc);
    c.node.cost.rate_bits = c.node.leaf.bits + kSplitCodeBits;
    apply_block(c.st, c.node.leaf.recon);
    c.recon = c.node.leaf.recon;
    cands.push_back(std::move(c));
  }
  for (SplitType s : legal_splits(r, mtt_depth, cfg)) {
    OracleCand c{{}, state, {}};
    c.node.rect = r;
    c.node.split = s;
    c.node.cost.rate_bits = kSplitCodeBits;
    for (Rect child : split_children(r, s)) {
      c.node.children.push_back(
          oracle_solve(frame, child, c.st, child_mtt_depth(s, mtt_depth), cfg, lambda, qp_list));
      c.node.cost.rate_bits += c.node.children.back().cost.rate_bits;
    }
    c.recon = state_block(c.st, r);
    cands.push_back(std::move(c));
  }

  const std::size_t n = cands.size();
  if (n == 1) {
    // Forced leaf: pixel-SSE cost, matching the search's convention.
    const double d = sse_pixel(orig, cands[0].recon);
    cands[0].node.cost = RDCost{
        d, cands[0].node.cost.rate_bits,
        d + lambda.value * static_cast<double>(cands[0].node.cost.rate_bits)};
    state = std::move(cands[0].st);
    return std::move(cands[0].node);
  }

  std::vector<double> d_sse(n), d_eff(n);
  for (std::size_t i = 0; i < n; ++i) d_sse[i] = sse_pixel(orig, cands[i].recon);
  if (is_feature_kind(cfg.kind)) {
    std::vector<double> d_feat(n);
    const FeatureMap psi_orig = extract_features(orig, *cfg.network);
    for (std::size_t i = 0; i < n; ++i) {
      const FeatureMap psi = extract_features(cands[i].recon, *cfg.network);
      double acc = 0.0;
      for (std::size_t v = 0; v < psi.values.size(); ++v) {
        const double d = static_cast<double>(psi_orig.values[v]) - psi.values[v];
        acc += uses_sad_metric(cfg.kind) ? std::abs(d) : d * d;
      }
      d_feat[i] = acc;
    }
    std::vector<double> d_norm(n);
    if (d_feat[0] == 0.0) {
      d_norm = d_feat;
    } else {
      const double scale = d_sse[0] / d_feat[0];
      d_norm[0] = d_sse[0];
      for (std::size_t i = 1; i < n; ++i) d_norm[i] = d_feat[i] * scale;
    }
    for (std::size_t i = 0; i < n; ++i)
      d_eff[i] = is_hybrid_kind(cfg.kind) ? 0.5 * (d_sse[i] + d_norm[i]) : d_norm[i];
  } else {
    d_eff = d_sse;
  }

  std::size_t best = 0;
  double best_j = d_eff[0] + lambda.value * static_cast<double>(cands[0].node.cost.rate_bits);
  for (std::size_t i = 1; i < n; ++i) {
    const double j = d_eff[i] + lambda.value * static_cast<double>(cands[i].node.cost.rate_bits);
    if (j < best_j) {
      best = i;
      best_j = j;
    }
  }
  cands[best].node.cost = RDCost{d_eff[best], cands[best].node.cost.rate_bits, best_j};
  state = std::move(cands[best].st);
  return std::move(cands[best].node);
}

}  // namespace detail

inline OracleResult exhaustive_partition_oracle(const Frame& frame, Rect rect,
                                                const EncoderConfig& cfg, Lambda lambda) {
  validate_config(cfg);
  if (rect.w > 2 * cfg.min_cu || rect.h > 2 * cfg.min_cu)
    throw std::invalid_argument("exhaustive_partition_oracle: region too large for enumeration");
  CtuState state = make_ctu_state(rect.x, rect.y, std::max(rect.w, rect.h));
  PartitionNode tree = detail::oracle_solve(frame, rect, state, 0, cfg,
                                            lambda, detail::leaf_qp_list(cfg));
  const RDCost cost = tree.cost;
  return {std::move(tree), cost};
}

// ---------------------------------------------------------------------------
// Frame-level encode / decode.
//
// Bitstream layout: magic "FRD1", version byte (1), width and height as
// 32-bit little-endian, ctu_size as 16-bit little-endian, base_qp byte,
// flags byte (bit 0: delta-QP enabled, bits 1-3: delta range). CTU payloads
// follow in raster order, each byte-aligned: pre-order 3-bit split codes
// with leaf payloads inline.
// ---------------------------------------------------------------------------

struct EncodeStats {
  std::uint64_t total_bits = 0;
  std::vector<std::uint64_t> ctu_bits;
  double total_sse = 0.0;  // over the true frame area
  Frame recon;             // encoder-side reconstruction, cropped
};

inline constexpr char kMagic[4] = {'F', 'R', 'D', '1'};
inline constexpr std::uint8_t kVersion = 1;

inline std::vector<std::uint8_t> encode_frame(const Frame& frame, const EncoderConfig& cfg,
                                              EncodeStats* stats = nullptr, int jobs = 1) {
  validate_config(cfg);
  if (frame.width < 1 || frame.height < 1) throw std::invalid_argument("encode_frame: empty frame");
  const Frame padded = pad_frame_to_multiple(frame, cfg.ctu_size);
  const int ctus_x = padded.width / cfg.ctu_size;
  const int ctus_y = padded.height / cfg.ctu_size;
  const int n_ctus = ctus_x * ctus_y;
  const Lambda lambda = lambda_from_qp(cfg.base_qp, cfg.k);

  std::vector<BitWriter> payloads(n_ctus);
  std::vector<CtuState> states(n_ctus);
  auto run_ctu = [&](int idx) {
    const int cx = (idx % ctus_x) * cfg.ctu_size;
    const int cy = (idx / ctus_x) * cfg.ctu_size;
    CtuState state = make_ctu_state(cx, cy, cfg.ctu_size);
    detail::SearchContext sc;
    sc.frame = &padded;
    sc.cfg = &cfg;
    sc.lambda = lambda;
    sc.qp_list = detail::leaf_qp_list(cfg);
    const PartitionNode root =
        detail::search_region(sc, {cx, cy, cfg.ctu_size, cfg.ctu_size}, state, 0);
    detail::serialize_node(root, payloads[idx]);
    payloads[idx].align();
    states[idx] = std::move(state);
  };
  if (jobs <= 1 || n_ctus <= 1) {
    for (int i = 0; i < n_ctus; ++i) run_ctu(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    const int n_workers = std::min(jobs, n_ctus);
    workers.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t)
      workers.emplace_back([&] {
        for (int i = next.fetch_add(1); i < n_ctus; i = next.fetch_add(1)) run_ctu(i);
      });
    for (std::thread& t : workers) t.join();
  }

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  auto put_le = [&out](std::uint32_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put_le(static_cast<std::uint32_t>(frame.width), 4);
  put_le(static_cast<std::uint32_t>(frame.height), 4);
  put_le(static_cast<std::uint32_t>(cfg.ctu_size), 2);
  out.push_back(static_cast<std::uint8_t>(cfg.base_qp));
  const std::uint8_t flags = (cfg.delta_qp_range > 0 ? 1 : 0) |
                             static_cast<std::uint8_t>(cfg.delta_qp_range << 1);
  out.push_back(flags);
  for (const BitWriter& bw : payloads) out.insert(out.end(), bw.bytes().begin(), bw.bytes().end());

  if (stats != nullptr) {
    stats->total_bits = static_cast<std::uint64_t>(out.size()) * 8;
    stats->ctu_bits.clear();
    for (const BitWriter& bw : payloads) stats->ctu_bits.push_back(bw.bit_count());
    Frame recon = make_frame(padded.width, padded.height);
    for (const CtuState& st : states)
      for (int y = 0; y < st.size; ++y)
        std::copy(st.recon.begin() + static_cast<std::size_t>(y) * st.size,
                  st.recon.begin() + static_cast<std::size_t>(y + 1) * st.size,
                  recon.samples.begin() +
                      static_cast<std::size_t>(st.origin_y + y) * padded.width + st.origin_x);
    stats->recon = crop_frame(recon, frame.width, frame.height);
    stats->total_sse = 0.0;
    for (std::size_t i = 0; i < frame.samples.size(); ++i) {
      const double d = static_cast<double>(frame.samples[i]) - stats->recon.samples[i];
      stats->total_sse += d * d;
    }
  }
  return out;
}

namespace detail {

inline void decode_node(BitReader& br, CtuState& state, Rect r, int mtt_depth,
                        const EncoderConfig& cfg) {
  const std::uint64_t code = br.get_bits(kSplitCodeBits);
  if (code > 5) throw std::runtime_error("bitstream: invalid split code");
  const SplitType split = static_cast<SplitType>(code);
  if (split == SplitType::kNone) {
    const IntraContext ctx = make_intra_context(state, r);
    Block b = decode_block(br, ctx, r.w, r.h, cfg.base_qp, cfg.delta_qp_range > 0);
    b.x = r.x;
    b.y = r.y;
    apply_block(state, b);
    return;
  }
  const std::vector<SplitType> legal = legal_splits(r, mtt_depth, cfg);
  if (std::find(legal.begin(), legal.end(), split) == legal.end())
    throw std::runtime_error("bitstream: illegal split for block size");
  for (Rect child : split_children(r, split))
    decode_node(br, state, child, child_mtt_depth(split, mtt_depth), cfg);
}

}  // namespace detail

inline Frame decode_frame(const std::vector<std::uint8_t>& data) {
  if (data.size() < 17) throw std::runtime_error("bitstream: header truncated");
  if (!std::equal(kMagic, kMagic + 4, data.begin()))
    throw std::runtime_error("bitstream: bad magic");
  if (data[4] != kVersion) throw std::runtime_error("bitstream: unsupported version");
  auto get_le = [&data](std::size_t off, int bytes) {
    std::uint32_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint32_t>(data[off + i]) << (8 * i);
    return v;
  };
  const int width = static_cast<int>(get_le(5, 4));
  const int height = static_cast<int>(get_le(9, 4));
  const int ctu_size = static_cast<int>(get_le(13, 2));
  EncoderConfig cfg;
  cfg.ctu_size = ctu_size;
  cfg.base_qp = data[15];
  const std::uint8_t flags = data[16];
  cfg.delta_qp_range = (flags & 1) ? (flags >> 1) & 7 : 0;
  if (width < 1 || height < 1 || ctu_size < cfg.min_cu ||
      !std::has_single_bit(static_cast<unsigned>(ctu_size)))
    throw std::runtime_error("bitstream: bad header fields");
  if (cfg.base_qp > 51) throw std::runtime_error("bitstream: bad header fields");

  const int pw = (width + ctu_size - 1) / ctu_size * ctu_size;
  const int ph = (height + ctu_size - 1) / ctu_size * ctu_size;
  Frame recon = make_frame(pw, ph);
  BitReader br(data.data() + 17, data.size() - 17);
  for (int cy = 0; cy < ph; cy += ctu_size) {
    for (int cx = 0; cx < pw; cx += ctu_size) {
      CtuState state = make_ctu_state(cx, cy, ctu_size);
      detail::decode_node(br, state, {cx, cy, ctu_size, ctu_size}, 0, cfg);
      br.align();
      for (int y = 0; y < ctu_size; ++y)
        std::copy(state.recon.begin() + static_cast<std::size_t>(y) * ctu_size,
                  state.recon.begin() + static_cast<std::size_t>(y + 1) * ctu_size,
                  recon.samples.begin() + static_cast<std::size_t>(cy + y) * pw + cx);
    }
  }
  return crop_frame(recon, width, height);
}

}  // namespace frdo
