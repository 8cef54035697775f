#include "stmt/eval.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "stmt/sequence.hpp"

namespace stmt {

double iou(const Box& a, const Box& b) {
  const double ix0 = std::max(a.x, b.x);
  const double iy0 = std::max(a.y, b.y);
  const double ix1 = std::min(a.x + a.w, b.x + b.w);
  const double iy1 = std::min(a.y + a.h, b.y + b.h);
  const double iw = std::max(0.0, ix1 - ix0);
  const double ih = std::max(0.0, iy1 - iy0);
  const double inter = iw * ih;
  const double area_a = std::max(0.0, a.w) * std::max(0.0, a.h);
  const double area_b = std::max(0.0, b.w) * std::max(0.0, b.h);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double center_error(const Box& a, const Box& b) {
  const double dx = a.cx() - b.cx();
  const double dy = a.cy() - b.cy();
  return std::sqrt(dx * dx + dy * dy);
}

double norm_center_error(const Box& pred, const Box& gt) {
  if (gt.w <= 0.0 || gt.h <= 0.0) {
    throw std::invalid_argument("norm_center_error: degenerate reference box");
  }
  const double dx = (pred.cx() - gt.cx()) / gt.w;
  const double dy = (pred.cy() - gt.cy()) / gt.h;
  return std::sqrt(dx * dx + dy * dy);
}

namespace {

double fraction_at_most(const std::vector<double>& values, double threshold) {
  if (values.empty()) return 0.0;
  std::size_t hit = 0;
  for (double v : values) {
    if (v <= threshold) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(values.size());
}

double fraction_above(const std::vector<double>& values, double threshold) {
  if (values.empty()) return 0.0;
  std::size_t hit = 0;
  for (double v : values) {
    if (v > threshold) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(values.size());
}

}  // namespace

OpeResult ope_curves(const std::vector<double>& errors, const std::vector<double>& norm_errors,
                     const std::vector<double>& overlaps) {
  if (errors.size() != overlaps.size()) {
    throw std::invalid_argument("ope_curves: errors and overlaps disagree in length");
  }
  OpeResult r;
  r.n_frames = errors.size();

  r.pr_curve.resize(51);
  for (std::size_t i = 0; i <= 50; ++i) {
    r.pr_curve[i] = fraction_at_most(errors, static_cast<double>(i));
  }
  r.pr20 = r.pr_curve[20];

  r.npr_curve.resize(51);
  for (std::size_t i = 0; i <= 50; ++i) {
    r.npr_curve[i] = fraction_at_most(norm_errors, 0.01 * static_cast<double>(i));
  }
  r.npr = r.npr_curve[20];

  // Success counts overlaps strictly greater than each threshold. The unit
  // interval is divided into 51 steps and sampled at the left edge of each,
  // so the top edge 1.0 is never a threshold and a perfect overlap scores a
  // full curve. The scalar is the plain mean of the 51 points.
  r.sr_curve.resize(51);
  double sum = 0.0;
  for (std::size_t i = 0; i <= 50; ++i) {
    r.sr_curve[i] = fraction_above(overlaps, static_cast<double>(i) / 51.0);
    sum += r.sr_curve[i];
  }
  r.sr = sum / 51.0;
  return r;
}

OpeResult evaluate_trace(const std::vector<Box>& results, const std::vector<Box>& gt) {
  if (results.size() != gt.size()) {
    throw std::invalid_argument("evaluate_trace: result/annotation length mismatch (" +
                                std::to_string(results.size()) + " vs " +
                                std::to_string(gt.size()) + ")");
  }
  if (results.size() < 2) {
    throw std::invalid_argument("evaluate_trace: need at least two frames");
  }
  std::vector<double> errors, norm_errors, overlaps;
  std::size_t excluded = 0;
  for (std::size_t f = 1; f < results.size(); ++f) {  // frame 0 is the init frame
    errors.push_back(center_error(results[f], gt[f]));
    overlaps.push_back(iou(results[f], gt[f]));
    if (gt[f].w > 0.0 && gt[f].h > 0.0) {
      norm_errors.push_back(norm_center_error(results[f], gt[f]));
    } else {
      ++excluded;
    }
  }
  OpeResult r = ope_curves(errors, norm_errors, overlaps);
  r.n_norm_excluded = excluded;
  return r;
}

std::string format_report(const std::vector<SeqEval>& rows) {
  std::string out = "seq,n_frames,pr20,npr,sr\n";
  char buf[128];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), ",%zu,%.4f,%.4f,%.4f\n", row.result.n_frames,
                  row.result.pr20, row.result.npr, row.result.sr);
    out += row.name;
    out += buf;
  }
  return out;
}

void write_report(const std::string& path, const std::vector<SeqEval>& rows) {
  write_file_atomic(path, format_report(rows));
}

}  // namespace stmt
