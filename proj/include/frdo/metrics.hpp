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
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "frdo/distortion.hpp"
#include "frdo/feature_net.hpp"
#include "frdo/frame.hpp"

namespace frdo {

/// One (bitrate, quality) sample.
struct RDPoint {
  double rate = 0.0;     // bits per pixel
  double quality = 0.0;  // dB; +inf marks a lossless point
};

/// Rate-quality curve with strictly increasing rate.
struct RDCurve {
  std::vector<RDPoint> points;
};

inline RDCurve make_rd_curve(std::vector<RDPoint> points) {
  std::sort(points.begin(), points.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.rate < b.rate; });
  for (std::size_t i = 0; i + 1 < points.size(); ++i)
    if (!(points[i].rate < points[i + 1].rate))
      throw std::invalid_argument("rd curve: rates must be strictly increasing");
  for (const RDPoint& p : points)
    if (!(p.rate > 0.0)) throw std::invalid_argument("rd curve: rates must be positive");
  for (std::size_t i = 0; i + 1 < points.size(); ++i)
    if (points[i].quality > points[i + 1].quality)
      std::cerr << "warning: rd curve quality decreases with rate near "
                << points[i].rate << " bpp\n";
  return {std::move(points)};
}

/// 10*log10(255^2 / MSE); +inf for identical frames.
inline double psnr(const Frame& orig, const Frame& recon) {
  if (orig.width != recon.width || orig.height != recon.height)
    throw std::invalid_argument("psnr: frame dimensions differ");
  double sse = 0.0;
  for (std::size_t i = 0; i < orig.samples.size(); ++i) {
    const double d = static_cast<double>(orig.samples[i]) - recon.samples[i];
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(orig.samples.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

enum class FeatureMetric { kFsse, kFsad };

/// Feature-domain fidelity in dB: both frames are cut into non-overlapping
/// 64x64 tiles (smaller remainder tiles kept at natural size), each tile is
/// run through the network, and the score is -10*log10 of the mean
/// per-element feature error (squared for kFsse, absolute for kFsad) over
/// all tiles. Higher is better; +inf when the error is zero.
inline double feature_fidelity(const Frame& orig, const Frame& recon, const Network& net,
                               FeatureMetric metric) {
  if (orig.width != recon.width || orig.height != recon.height)
    throw std::invalid_argument("feature_fidelity: frame dimensions differ");
  constexpr int kTile = 64;
  double err = 0.0;
  std::uint64_t count = 0;
  for (int ty = 0; ty < orig.height; ty += kTile) {
    for (int tx = 0; tx < orig.width; tx += kTile) {
      const int tw = std::min(kTile, orig.width - tx);
      const int th = std::min(kTile, orig.height - ty);
      const FeatureMap po = extract_features(extract_block(orig, tx, ty, tw, th), net);
      const FeatureMap pr = extract_features(extract_block(recon, tx, ty, tw, th), net);
      for (std::size_t i = 0; i < po.values.size(); ++i) {
        const double d = static_cast<double>(po.values[i]) - pr.values[i];
        err += metric == FeatureMetric::kFsse ? d * d : std::abs(d);
      }
      count += po.values.size();
    }
  }
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(err / static_cast<double>(count));
}

namespace detail {

// Cubic least-squares fit of y over centered/scaled x. With exactly four
// points this is the unique interpolating cubic.
struct CubicFit {
  double mid = 0.0, half = 1.0;
  std::array<double, 4> coef{};  // y = sum coef[i] * t^i, t = (x - mid) / half

  double integral(double x0, double x1) const {
    // Antiderivative in t, scaled back by half.
    auto anti = [this](double t) {
      return half * (coef[0] * t + coef[1] * t * t / 2 + coef[2] * t * t * t / 3 +
                     coef[3] * t * t * t * t / 4);
    };
    return anti((x1 - mid) / half) - anti((x0 - mid) / half);
  }
};

inline CubicFit fit_cubic(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  CubicFit fit;
  double lo = x[0], hi = x[0];
  for (double v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  fit.mid = (lo + hi) / 2;
  fit.half = (hi - lo) / 2;
  if (fit.half <= 0.0) throw std::invalid_argument("bd_rate: degenerate quality range");
  // Normal equations A c = b for the degree-3 basis in t.
  std::array<std::array<double, 5>, 4> m{};
  for (std::size_t p = 0; p < n; ++p) {
    const double t = (x[p] - fit.mid) / fit.half;
    std::array<double, 4> pow{1.0, t, t * t, t * t * t};
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) m[r][c] += pow[r] * pow[c];
      m[r][4] += pow[r] * y[p];
    }
  }
  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    std::swap(m[col], m[piv]);
    if (m[col][col] == 0.0) throw std::invalid_argument("bd_rate: singular fit");
    for (int r = col + 1; r < 4; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 5; ++c) m[r][c] -= f * m[col][c];
    }
  }
  for (int r = 3; r >= 0; --r) {
    double acc = m[r][4];
    for (int c = r + 1; c < 4; ++c) acc -= m[r][c] * fit.coef[c];
    fit.coef[r] = acc / m[r][r];
  }
  return fit;
}

}  // namespace detail

/// Bjontegaard delta rate in percent: cubic fits of log10(rate) over quality
/// for both curves, averaged over the common quality interval;
/// (10^(mean_test - mean_anchor) - 1) * 100. Negative means the test curve
/// needs less rate at equal quality.
inline double bd_rate(const RDCurve& anchor, const RDCurve& test) {
  if (anchor.points.size() < 4 || test.points.size() < 4)
    throw std::invalid_argument("bd_rate: need 4 points per curve");
  auto extract = [](const RDCurve& c, std::vector<double>& q, std::vector<double>& lr) {
    for (const RDPoint& p : c.points) {
      if (!std::isfinite(p.quality))
        throw std::invalid_argument("bd_rate: non-finite quality point");
      q.push_back(p.quality);
      lr.push_back(std::log10(p.rate));
    }
  };
  std::vector<double> qa, ra, qt, rt;
  extract(anchor, qa, ra);
  extract(test, qt, rt);
  const double lo = std::max(*std::min_element(qa.begin(), qa.end()),
                             *std::min_element(qt.begin(), qt.end()));
  const double hi = std::min(*std::max_element(qa.begin(), qa.end()),
                             *std::max_element(qt.begin(), qt.end()));
  if (!(lo < hi)) throw std::invalid_argument("bd_rate: no overlap in quality ranges");
  const detail::CubicFit fa = detail::fit_cubic(qa, ra);
  const detail::CubicFit ft = detail::fit_cubic(qt, rt);
  const double delta = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
  return (std::pow(10.0, delta) - 1.0) * 100.0;
}

/// One row of the rate-distortion CSV.
struct RDRow {
  std::string label;
  int qp = 0;
  double rate_bpp = 0.0;
  double psnr_db = 0.0;
  double feat_db = 0.0;
  std::uint64_t bits = 0;
};

inline constexpr const char* kRdCsvHeader = "label,qp,rate_bpp,psnr_db,feat_db,bits";

namespace detail {

inline std::string format_db(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

inline std::string rd_row_to_csv(const RDRow& r) {
  std::ostringstream os;
  os << r.label << "," << r.qp << "," << detail::format_db(r.rate_bpp) << ","
     << detail::format_db(r.psnr_db) << "," << detail::format_db(r.feat_db) << "," << r.bits;
  return os.str();
}

inline void emit_rd_csv(const std::vector<RDRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("rd csv: cannot open " + path + " for writing");
  out << kRdCsvHeader << "\n";
  for (const RDRow& r : rows) out << rd_row_to_csv(r) << "\n";
  if (!out) throw std::runtime_error("rd csv: write failed for " + path);
}

inline std::vector<RDRow> read_rd_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("rd csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("rd csv: no data rows in " + path);
  std::vector<RDRow> rows;
  int lineno = 1;
  auto parse_double = [&lineno](const std::string& field, const char* what) {
    try {
      std::size_t used = 0;
      const double v = std::stod(field, &used);
      if (used != field.size()) throw std::invalid_argument(field);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("rd csv: bad " + std::string(what) + " on line " +
                               std::to_string(lineno));
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 6)
      throw std::runtime_error("rd csv: expected 6 fields on line " + std::to_string(lineno));
    RDRow r;
    r.label = fields[0];
    r.qp = static_cast<int>(parse_double(fields[1], "qp"));
    r.rate_bpp = parse_double(fields[2], "rate");
    r.psnr_db = parse_double(fields[3], "psnr");
    r.feat_db = parse_double(fields[4], "feat_db");
    r.bits = static_cast<std::uint64_t>(parse_double(fields[5], "bits"));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw std::runtime_error("rd csv: no data rows in " + path);
  return rows;
}

enum class QualityAxis { kPsnr, kFeature };

/// Builds a curve from CSV rows: rows labeled "average" when present
/// (corpus sweeps), all rows otherwise.
inline RDCurve curve_from_rows(const std::vector<RDRow>& rows, QualityAxis axis) {
  std::vector<RDPoint> pts;
  bool averages_only = false;
  for (const RDRow& r : rows)
    if (r.label == "average") averages_only = true;
  for (const RDRow& r : rows) {
    if (averages_only && r.label != "average") continue;
    pts.push_back({r.rate_bpp, axis == QualityAxis::kPsnr ? r.psnr_db : r.feat_db});
  }
  return make_rd_curve(std::move(pts));
}

inline RDCurve read_rd_csv(const std::string& path, QualityAxis axis = QualityAxis::kPsnr) {
  return curve_from_rows(read_rd_rows(path), axis);
}

}  // namespace frdo
