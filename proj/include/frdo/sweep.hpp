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

#include <atomic>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "frdo/metrics.hpp"
#include "frdo/rdo.hpp"

namespace frdo {

struct SweepOptions {
  EncoderConfig cfg;
  std::vector<int> qp_list{12, 17, 22, 27};
  const Network* fidelity_net = nullptr;  // network for the feat_db column
  FeatureMetric fidelity_metric = FeatureMetric::kFsad;
  int jobs = 1;
};

/// Encodes every frame at every QP and reports one RD row per (frame, qp),
/// followed by per-QP rows labeled "average" over the corpus. Frames are
/// processed concurrently up to `jobs`; the output order is deterministic.
inline std::vector<RDRow> sweep_frames(const std::vector<std::pair<std::string, Frame>>& corpus,
                                       const SweepOptions& opt) {
  if (corpus.empty()) throw std::invalid_argument("sweep: empty corpus");
  if (opt.qp_list.empty()) throw std::invalid_argument("sweep: empty qp list");
  if (opt.fidelity_net == nullptr) throw std::invalid_argument("sweep: fidelity network required");
  validate_config(opt.cfg);

  const std::size_t n_img = corpus.size();
  const std::size_t n_qp = opt.qp_list.size();
  std::vector<RDRow> rows(n_img * n_qp);
  auto run_image = [&](std::size_t img) {
    const Frame& frame = corpus[img].second;
    const double pixels = static_cast<double>(frame.width) * frame.height;
    for (std::size_t qi = 0; qi < n_qp; ++qi) {
      EncoderConfig cfg = opt.cfg;
      cfg.base_qp = opt.qp_list[qi];
      EncodeStats stats;
      const std::vector<std::uint8_t> bits = encode_frame(frame, cfg, &stats);
      RDRow& r = rows[img * n_qp + qi];
      r.label = corpus[img].first;
      r.qp = cfg.base_qp;
      r.bits = static_cast<std::uint64_t>(bits.size()) * 8;
      r.rate_bpp = static_cast<double>(r.bits) / pixels;
      r.psnr_db = psnr(frame, stats.recon);
      r.feat_db = feature_fidelity(frame, stats.recon, *opt.fidelity_net, opt.fidelity_metric);
    }
  };
  if (opt.jobs <= 1 || n_img <= 1) {
    for (std::size_t i = 0; i < n_img; ++i) run_image(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    const std::size_t n_workers = std::min<std::size_t>(opt.jobs, n_img);
    for (std::size_t t = 0; t < n_workers; ++t)
      workers.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n_img; i = next.fetch_add(1)) run_image(i);
      });
    for (std::thread& t : workers) t.join();
  }

  // Corpus averages per QP.
  for (std::size_t qi = 0; qi < n_qp; ++qi) {
    RDRow avg;
    avg.label = "average";
    avg.qp = opt.qp_list[qi];
    for (std::size_t img = 0; img < n_img; ++img) {
      const RDRow& r = rows[img * n_qp + qi];
      avg.rate_bpp += r.rate_bpp;
      avg.psnr_db += r.psnr_db;
      avg.feat_db += r.feat_db;
      avg.bits += r.bits;
    }
    avg.rate_bpp /= static_cast<double>(n_img);
    avg.psnr_db /= static_cast<double>(n_img);
    avg.feat_db /= static_cast<double>(n_img);
    rows.push_back(std::move(avg));
  }
  return rows;
}

inline std::vector<RDRow> sweep_images(const std::vector<std::string>& pgm_paths,
                                       const SweepOptions& opt) {
  std::vector<std::pair<std::string, Frame>> corpus;
  corpus.reserve(pgm_paths.size());
  for (const std::string& path : pgm_paths) {
    std::string stem = path;
    if (const auto slash = stem.find_last_of('/'); slash != std::string::npos)
      stem = stem.substr(slash + 1);
    if (const auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);
    corpus.emplace_back(std::move(stem), load_pgm(path));
  }
  return sweep_frames(corpus, opt);
}

}  // namespace frdo
