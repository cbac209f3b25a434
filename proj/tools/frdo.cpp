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
//
// Command-line front end: encode, decode, QP sweeps, BD-rate reports and a
// built-in selftest.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "frdo/metrics.hpp"
#include "frdo/rdo.hpp"
#include "frdo/sweep.hpp"

namespace {

using namespace frdo;

struct CommonFlags {
  std::string kind = "sse";
  int qp = 22;
  int delta_qp = 0;
  int ctu = 64;
  int min_cu = 4;
  int mtt_depth = 3;
  double k = 0.57;
  std::string weights;
  std::uint64_t test_seed = 0;
  bool has_test_seed = false;
  int jobs = 1;
};

void add_common_flags(CLI::App* cmd, CommonFlags* f) {
  cmd->add_option("--kind", f->kind, "Distortion kind: sse, fsse, fsad, hfsse, hfsad")
      ->default_val("sse");
  cmd->add_option("--qp", f->qp, "Base quantization parameter [0, 51]")->default_val(22);
  cmd->add_option("--delta-qp", f->delta_qp, "Per-block QP search range (0 disables)")
      ->default_val(0);
  cmd->add_option("--ctu", f->ctu, "CTU size (power of two <= 128)")->default_val(64);
  cmd->add_option("--min-cu", f->min_cu, "Minimum coding block side")->default_val(4);
  cmd->add_option("--mtt-depth", f->mtt_depth, "Maximum binary/ternary nesting depth")
      ->default_val(3);
  cmd->add_option("--k", f->k, "Lagrange multiplier constant")->default_val(0.57);
  cmd->add_option("--weights", f->weights, "Network weight manifest path");
  cmd->add_option("--test-seed", f->test_seed, "Seeded test network instead of --weights")
      ->each([f](const std::string&) { f->has_test_seed = true; });
  cmd->add_option("--jobs", f->jobs, "Worker threads")->default_val(1);
}

std::optional<Network> make_network(const CommonFlags& f) {
  if (!f.weights.empty() && f.has_test_seed)
    throw CLI::ValidationError("--weights and --test-seed are mutually exclusive");
  if (!f.weights.empty()) return load_weights(f.weights);
  if (f.has_test_seed) return seeded_test_network(f.test_seed, 1);
  return std::nullopt;
}

EncoderConfig make_config(const CommonFlags& f, const Network* net) {
  EncoderConfig cfg;
  cfg.kind = parse_distortion_kind(f.kind);
  cfg.base_qp = f.qp;
  cfg.delta_qp_range = f.delta_qp;
  cfg.ctu_size = f.ctu;
  cfg.min_cu = f.min_cu;
  cfg.max_mtt_depth = f.mtt_depth;
  cfg.k = f.k;
  cfg.network = net;
  if (is_feature_kind(cfg.kind) && net == nullptr)
    throw CLI::ValidationError("kind '" + f.kind + "' requires --weights or --test-seed");
  validate_config(cfg);
  return cfg;
}

int run_encode(const CommonFlags& flags, const std::string& input, const std::string& output,
               FeatureMetric feat_metric) {
  const std::optional<Network> net = make_network(flags);
  const EncoderConfig cfg = make_config(flags, net ? &*net : nullptr);
  const Frame frame = load_pgm(input);
  EncodeStats stats;
  const std::vector<std::uint8_t> bits = encode_frame(frame, cfg, &stats, flags.jobs);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + output + " for writing");
  out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (!out) throw std::runtime_error("write failed for " + output);

  const double bpp = static_cast<double>(bits.size()) * 8 /
                     (static_cast<double>(frame.width) * frame.height);
  const double p = psnr(frame, stats.recon);
  const double feat = net ? feature_fidelity(frame, stats.recon, *net, feat_metric)
                          : std::numeric_limits<double>::quiet_NaN();
  std::cout << bits.size() * 8 << "," << detail::format_db(bpp) << "," << detail::format_db(p)
            << "," << detail::format_db(feat) << "\n";
  return 0;
}

int run_decode(const std::string& input, const std::string& output) {
  std::ifstream in(input, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + input);
  const std::vector<std::uint8_t> bits((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  save_pgm(decode_frame(bits), output);
  return 0;
}

int run_sweep(const CommonFlags& flags, const std::string& input_dir,
              const std::vector<int>& qp_list, const std::string& out_path,
              FeatureMetric feat_metric) {
  const std::optional<Network> net = make_network(flags);
  if (!net)
    throw CLI::ValidationError("sweep needs --weights or --test-seed for the feat_db column");
  SweepOptions opt;
  opt.cfg = make_config(flags, &*net);
  opt.qp_list = qp_list;
  opt.fidelity_net = &*net;
  opt.fidelity_metric = feat_metric;
  opt.jobs = flags.jobs;

  std::vector<std::string> paths;
  if (!std::filesystem::is_directory(input_dir))
    throw std::runtime_error("not a directory: " + input_dir);
  for (const auto& entry : std::filesystem::directory_iterator(input_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw std::runtime_error("no .pgm files in " + input_dir);

  const std::vector<RDRow> rows = sweep_images(paths, opt);
  std::cout << kRdCsvHeader << "\n";
  for (const RDRow& r : rows) std::cout << rd_row_to_csv(r) << "\n";
  if (!out_path.empty()) emit_rd_csv(rows, out_path);
  return 0;
}

int run_bdrate(const std::string& anchor_csv, const std::string& test_csv,
               const std::string& out_path) {
  const std::vector<RDRow> anchor_rows = read_rd_rows(anchor_csv);
  const std::vector<RDRow> test_rows = read_rd_rows(test_csv);
  const double bd_psnr = bd_rate(curve_from_rows(anchor_rows, QualityAxis::kPsnr),
                                 curve_from_rows(test_rows, QualityAxis::kPsnr));
  const double bd_feat = bd_rate(curve_from_rows(anchor_rows, QualityAxis::kFeature),
                                 curve_from_rows(test_rows, QualityAxis::kFeature));
  std::ostringstream report;
  report << "metric,bd_rate_percent\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "psnr,%.4f\n", bd_psnr);
  report << buf;
  std::snprintf(buf, sizeof buf, "feat,%.4f\n", bd_feat);
  report << buf;
  std::cout << report.str();
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path + " for writing");
    out << report.str();
  }
  return 0;
}

// Deterministic frames for the selftest: smooth gradient plus seeded noise.
Frame selftest_frame(std::uint64_t seed, int w, int h) {
  SplitMix64 rng(seed);
  Frame f = make_frame(w, h);
  const int gx = static_cast<int>(rng.next() % 5) - 2;
  const int gy = static_cast<int>(rng.next() % 5) - 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int v = 110 + gx * x / 4 + gy * y / 4 + static_cast<int>(rng.next() % 56) - 28;
      f.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    }
  return f;
}

int run_selftest(bool corrupt_normalization) {
  const auto start = std::chrono::steady_clock::now();
  int failures = 0;

  // Degeneration: with the identity network, FSSE partitioning must encode
  // bit-identically to plain SSE.
  {
    const Network id = identity_network();
    for (int i = 0; i < 3 && failures == 0; ++i) {
      const Frame f = selftest_frame(100 + i, 64, 64);
      for (int qp : {17, 27}) {
        EncoderConfig sse_cfg;
        sse_cfg.ctu_size = 32;
        sse_cfg.min_cu = 8;
        sse_cfg.max_mtt_depth = 2;
        sse_cfg.base_qp = qp;
        EncoderConfig fsse_cfg = sse_cfg;
        fsse_cfg.kind = DistortionKind::kFsse;
        fsse_cfg.network = &id;
        if (corrupt_normalization) fsse_cfg.debug_normalization_scale = 1.5;
        if (encode_frame(f, sse_cfg) != encode_frame(f, fsse_cfg)) {
          std::cerr << "selftest: degeneration mismatch (frame " << i << ", qp " << qp << ")\n";
          ++failures;
          break;
        }
      }
    }
  }

  // Partition search against the exhaustive oracle on small rects.
  {
    const Network net = seeded_test_network(4711, 1);
    for (int i = 0; i < 4; ++i) {
      const Frame f = selftest_frame(200 + i, 16, 16);
      for (DistortionKind kind : {DistortionKind::kSse, DistortionKind::kHfsad}) {
        EncoderConfig cfg;
        cfg.ctu_size = 16;
        cfg.min_cu = 8;
        cfg.kind = kind;
        cfg.network = is_feature_kind(kind) ? &net : nullptr;
        cfg.base_qp = 22;
        if (corrupt_normalization) cfg.debug_normalization_scale = 1.5;
        const Lambda lam = lambda_from_qp(cfg.base_qp, cfg.k);
        const PartitionNode eng = partition_region(f, {0, 0, 16, 16}, cfg, lam);
        const OracleResult orc = exhaustive_partition_oracle(f, {0, 0, 16, 16}, cfg, lam);
        if (eng.cost.j != orc.cost.j || eng.cost.rate_bits != orc.cost.rate_bits) {
          std::cerr << "selftest: oracle mismatch (frame " << i << ", kind " << to_string(kind)
                    << "): search j=" << eng.cost.j << " oracle j=" << orc.cost.j << "\n";
          ++failures;
        }
      }
    }
  }

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs > 60.0) std::cerr << "selftest: warning: took " << secs << " s (budget 60 s)\n";
  if (failures == 0) {
    std::cout << "selftest: all checks passed (" << secs << " s)\n";
    return 0;
  }
  std::cerr << "selftest: " << failures << " check(s) failed\n";
  return 1;
}

std::vector<int> parse_qp_list(const std::string& s) {
  std::vector<int> qps;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    const int qp = std::stoi(tok, &used);
    if (used != tok.size() || qp < 0 || qp > 51)
      throw CLI::ValidationError("bad qp '" + tok + "' in --qp-list");
    qps.push_back(qp);
  }
  if (qps.empty()) throw CLI::ValidationError("--qp-list is empty");
  return qps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-based intra image codec with pluggable pixel/feature-space "
               "rate-distortion optimization"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read flags from a key=value file ([section] per subcommand)");

  CommonFlags enc_flags;
  std::string enc_in, enc_out;
  std::string feat_metric_name = "fsad";
  CLI::App* enc = app.add_subcommand("encode", "Encode a PGM image to a bitstream");
  enc->add_option("input", enc_in, "Input .pgm (binary, 8-bit)")->required();
  enc->add_option("output", enc_out, "Output bitstream path")->required();
  add_common_flags(enc, &enc_flags);
  enc->add_option("--feat-metric", feat_metric_name, "Fidelity metric for the stats row: fsse|fsad")
      ->default_val("fsad");

  std::string dec_in, dec_out;
  CLI::App* dec = app.add_subcommand("decode", "Decode a bitstream back to PGM");
  dec->add_option("input", dec_in, "Input bitstream")->required();
  dec->add_option("output", dec_out, "Output .pgm path")->required();

  CommonFlags sweep_flags;
  std::string sweep_dir, sweep_out, sweep_qps = "12,17,22,27";
  std::string sweep_metric_name = "fsad";
  CLI::App* swp = app.add_subcommand("sweep", "Encode a corpus directory over a QP list");
  swp->add_option("input_dir", sweep_dir, "Directory of .pgm images")->required();
  add_common_flags(swp, &sweep_flags);
  swp->add_option("--qp-list", sweep_qps, "Comma-separated QP values")->default_val("12,17,22,27");
  swp->add_option("--out", sweep_out, "Also write the RD CSV to this path");
  swp->add_option("--feat-metric", sweep_metric_name, "Fidelity metric: fsse|fsad")
      ->default_val("fsad");

  std::string bd_anchor, bd_test, bd_out;
  CLI::App* bdr = app.add_subcommand("bdrate", "BD-rate between two sweep CSVs");
  bdr->add_option("anchor", bd_anchor, "Anchor RD CSV")->required();
  bdr->add_option("test", bd_test, "Test RD CSV")->required();
  bdr->add_option("--out", bd_out, "Also write the report CSV to this path");

  bool corrupt = false;
  CLI::App* st = app.add_subcommand("selftest", "Run built-in consistency oracles");
  st->add_flag("--corrupt-normalization", corrupt,
               "Testing hook: corrupt the feature normalization to verify detection");

  CLI11_PARSE(app, argc, argv);

  auto parse_metric = [](const std::string& s) {
    if (s == "fsse") return FeatureMetric::kFsse;
    if (s == "fsad") return FeatureMetric::kFsad;
    throw CLI::ValidationError("unknown --feat-metric '" + s + "'");
  };

  try {
    if (enc->parsed()) return run_encode(enc_flags, enc_in, enc_out, parse_metric(feat_metric_name));
    if (dec->parsed()) return run_decode(dec_in, dec_out);
    if (swp->parsed())
      return run_sweep(sweep_flags, sweep_dir, parse_qp_list(sweep_qps), sweep_out,
                       parse_metric(sweep_metric_name));
    if (bdr->parsed()) return run_bdrate(bd_anchor, bd_test, bd_out);
    if (st->parsed()) return run_selftest(corrupt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
