#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ockd/corpus/utterance.hpp"
#include "ockd/error.hpp"

namespace ockd::eval {

using corpus::Label;

/// Higher scores mean "more bonafide-like".
struct ScoreRecord {
  std::string utt_id;
  Label label = Label::kBonafide;
  double score = 0.0;
};

struct EERResult {
  double eer = 0.0;  // fraction in [0, 1]
  double threshold = 0.0;
  std::size_t num_bonafide = 0;
  std::size_t num_spoof = 0;
};

/// One operating point: accept when score >= threshold.
struct DetPoint {
  double far = 0.0;  // spoof accepted
  double frr = 0.0;  // bonafide rejected
  double threshold = 0.0;
};

/// Operating points at every distinct score plus +inf, by increasing
/// threshold: FAR falls from 1 to 0 while FRR rises from 0 to 1.
inline std::vector<DetPoint> det_points(const std::vector<ScoreRecord>& records) {
  std::vector<std::pair<double, bool>> sorted;  // (score, is_bonafide)
  std::size_t nb = 0, ns = 0;
  for (const auto& r : records) {
    if (!std::isfinite(r.score)) throw numeric_error("non-finite score for " + r.utt_id);
    const bool bona = r.label == Label::kBonafide;
    (bona ? nb : ns) += 1;
    sorted.emplace_back(r.score, bona);
  }
  if (nb == 0 || ns == 0) {
    throw data_error("EER needs at least one bonafide and one spoof score (got " +
                     std::to_string(nb) + " bonafide, " + std::to_string(ns) + " spoof)");
  }
  std::sort(sorted.begin(), sorted.end());
  std::vector<DetPoint> points;
  std::size_t bona_below = 0, spoof_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double theta = sorted[i].first;
    points.push_back({static_cast<double>(ns - spoof_below) / static_cast<double>(ns),
                      static_cast<double>(bona_below) / static_cast<double>(nb), theta});
    for (; i < sorted.size() && sorted[i].first == theta; ++i) {
      (sorted[i].second ? bona_below : spoof_below) += 1;
    }
  }
  points.push_back({0.0, 1.0, std::numeric_limits<double>::infinity()});
  return points;
}

/// Equal error rate, linearly interpolated between the two adjacent
/// operating points where FAR - FRR changes sign.
inline EERResult compute_eer(const std::vector<ScoreRecord>& records) {
  const auto pts = det_points(records);
  EERResult out;
  for (const auto& r : records) (r.label == Label::kBonafide ? out.num_bonafide : out.num_spoof)++;
  for (std::size_t j = 0; j + 1 < pts.size(); ++j) {
    const double d0 = pts[j].far - pts[j].frr;
    const double d1 = pts[j + 1].far - pts[j + 1].frr;
    if (d0 == 0.0) {
      out.eer = pts[j].far;
      out.threshold = pts[j].threshold;
      return out;
    }
    if (d0 > 0.0 && d1 <= 0.0) {
      const double t = d0 / (d0 - d1);
      out.eer = pts[j].far + t * (pts[j + 1].far - pts[j].far);
      const double hi = pts[j + 1].threshold;
      out.threshold = std::isfinite(hi) ? pts[j].threshold + t * (hi - pts[j].threshold)
                                        : pts[j].threshold;
      return out;
    }
  }
  // Unreachable: the last point always has FAR - FRR = -1.
  out.eer = pts.back().far;
  out.threshold = pts.back().threshold;
  return out;
}

/// EER over the union of several score sets under one global threshold.
inline EERResult pooled_eer(const std::vector<std::vector<ScoreRecord>>& sets) {
  if (sets.empty()) throw usage_error("pooled_eer: no score sets");
  std::vector<ScoreRecord> all;
  for (const auto& s : sets) all.insert(all.end(), s.begin(), s.end());
  return compute_eer(all);
}

// ---------------------------------------------------------------------------
// Score files: `<utt_id> <label> <score>` per line, score printed with %.6f.

inline std::string format_scores(const std::vector<ScoreRecord>& records) {
  std::string out;
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.6f", r.score);
    out += r.utt_id + ' ' + corpus::label_name(r.label) + ' ' + buf + '\n';
  }
  return out;
}

inline std::vector<ScoreRecord> parse_scores(std::istream& in, const std::string& source) {
  std::vector<ScoreRecord> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    ScoreRecord r;
    std::string label, score, extra;
    const std::string where = source + ":" + std::to_string(lineno);
    if (!(fields >> r.utt_id >> label >> score) || (fields >> extra)) {
      throw data_error(where + ": expected '<utt_id> <label> <score>'");
    }
    try {
      r.label = corpus::parse_label(label);
    } catch (const Error& e) {
      throw data_error(where + ": " + e.what());
    }
    std::size_t used = 0;
    try {
      r.score = std::stod(score, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != score.size() || !std::isfinite(r.score)) {
      throw data_error(where + ": bad score '" + score + "'");
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw data_error(source + ": no scores");
  return out;
}

inline std::vector<ScoreRecord> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open score file " + path);
  return parse_scores(in, path);
}

/// `far,frr,threshold` with a header row.
inline std::string format_det_csv(const std::vector<DetPoint>& points) {
  std::string out = "far,frr,threshold\n";
  char buf[128];
  for (const auto& p : points) {
    if (std::isfinite(p.threshold)) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", p.far, p.frr, p.threshold);
    } else {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,inf\n", p.far, p.frr);
    }
    out += buf;
  }
  return out;
}

}  // namespace ockd::eval
