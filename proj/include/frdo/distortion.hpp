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

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "frdo/feature_net.hpp"
#include "frdo/frame.hpp"

namespace frdo {

/// Distortion measure driving the encoder's split decisions.
///   kSse    pixel-domain sum of squared errors
///   kFsse   feature-space SSE, normalized against the first candidate
///   kFsad   feature-space SAD, normalized the same way
///   kHfsse  0.5 * (pixel SSE + normalized feature SSE)
///   kHfsad  0.5 * (pixel SSE + normalized feature SAD)
enum class DistortionKind { kSse, kFsse, kFsad, kHfsse, kHfsad };

inline bool is_feature_kind(DistortionKind k) { return k != DistortionKind::kSse; }
inline bool is_hybrid_kind(DistortionKind k) {
  return k == DistortionKind::kHfsse || k == DistortionKind::kHfsad;
}
inline bool uses_sad_metric(DistortionKind k) {
  return k == DistortionKind::kFsad || k == DistortionKind::kHfsad;
}

inline const char* to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::kSse: return "sse";
    case DistortionKind::kFsse: return "fsse";
    case DistortionKind::kFsad: return "fsad";
    case DistortionKind::kHfsse: return "hfsse";
    case DistortionKind::kHfsad: return "hfsad";
  }
  return "?";
}

inline DistortionKind parse_distortion_kind(const std::string& s) {
  if (s == "sse") return DistortionKind::kSse;
  if (s == "fsse") return DistortionKind::kFsse;
  if (s == "fsad") return DistortionKind::kFsad;
  if (s == "hfsse") return DistortionKind::kHfsse;
  if (s == "hfsad") return DistortionKind::kHfsad;
  throw std::invalid_argument("unknown distortion kind '" + s + "'");
}

/// Per-candidate distortion record. d_feat_norm is filled by
/// normalize_candidates; NaN marks "not yet normalized".
struct CandidateDistortion {
  double d_sse = 0.0;
  double d_feat = 0.0;
  double d_feat_norm = std::numeric_limits<double>::quiet_NaN();
};

/// Pixel-domain sum of squared errors, accumulated in 64-bit.
inline double sse_pixel(const Block& orig, const Block& recon) {
  if (orig.width != recon.width || orig.height != recon.height)
    throw std::invalid_argument("sse_pixel: block dimensions differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < orig.samples.size(); ++i) {
    const double d = static_cast<double>(orig.samples[i]) - recon.samples[i];
    sum += d * d;
  }
  return sum;
}

inline void check_same_shape(const FeatureMap& a, const FeatureMap& b, const char* who) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument(std::string(who) + ": feature map shapes differ");
}

/// Feature-space SSE over all (x, y, c).
inline double fsse(const FeatureMap& psi_orig, const FeatureMap& psi_recon) {
  check_same_shape(psi_orig, psi_recon, "fsse");
  double sum = 0.0;
  for (std::size_t i = 0; i < psi_orig.values.size(); ++i) {
    const double d = static_cast<double>(psi_orig.values[i]) - psi_recon.values[i];
    sum += d * d;
  }
  return sum;
}

/// Feature-space SAD over all (x, y, c).
inline double fsad(const FeatureMap& psi_orig, const FeatureMap& psi_recon) {
  check_same_shape(psi_orig, psi_recon, "fsad");
  double sum = 0.0;
  for (std::size_t i = 0; i < psi_orig.values.size(); ++i)
    sum += std::abs(static_cast<double>(psi_orig.values[i]) - psi_recon.values[i]);
  return sum;
}

/// Rescales every candidate's feature distortion so the first candidate's
/// value coincides with its pixel SSE; the common factor preserves the
/// relative differences between candidates. When the anchor's feature
/// distortion is zero the factor falls back to 1 and all candidates keep
/// their raw feature distortion.
inline void normalize_candidates(std::span<CandidateDistortion> cands) {
  if (cands.empty()) throw std::invalid_argument("normalize_candidates: empty candidate list");
  const CandidateDistortion& anchor = cands.front();
  if (anchor.d_feat == 0.0) {
    for (CandidateDistortion& c : cands) c.d_feat_norm = c.d_feat;
    return;
  }
  const double scale = anchor.d_sse / anchor.d_feat;
  cands.front().d_feat_norm = anchor.d_sse;  // exact by construction
  for (std::size_t i = 1; i < cands.size(); ++i) cands[i].d_feat_norm = cands[i].d_feat * scale;
}

/// The distortion value that enters the Lagrangian cost for this kind.
inline double effective_distortion(DistortionKind kind, const CandidateDistortion& cand) {
  if (kind == DistortionKind::kSse) return cand.d_sse;
  if (std::isnan(cand.d_feat_norm))
    throw std::logic_error("effective_distortion: normalized feature distortion missing");
  if (is_hybrid_kind(kind)) return 0.5 * (cand.d_sse + cand.d_feat_norm);
  return cand.d_feat_norm;
}

}  // namespace frdo
