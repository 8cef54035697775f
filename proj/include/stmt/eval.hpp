#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stmt/geometry.hpp"

namespace stmt {

double iou(const Box& a, const Box& b);
double center_error(const Box& a, const Box& b);
// Center offset divided per-axis by the ground-truth extent, then normed.
double norm_center_error(const Box& pred, const Box& gt);

struct OpeResult {
  std::vector<double> pr_curve;   // thresholds 0..50 px, step 1
  std::vector<double> npr_curve;  // thresholds 0..0.5, step 0.01
  std::vector<double> sr_curve;   // 51 step edges i/51 of [0,1], strict ">"
  double pr20 = 0.0;
  double npr = 0.0;   // at threshold 0.2
  double sr = 0.0;    // mean of the 51 success points
  std::size_t n_frames = 0;
  std::size_t n_norm_excluded = 0;  // frames with degenerate gt
};

OpeResult ope_curves(const std::vector<double>& errors, const std::vector<double>& norm_errors,
                     const std::vector<double>& overlaps);

// One-pass protocol: frame 0 is the init frame and is excluded.
OpeResult evaluate_trace(const std::vector<Box>& results, const std::vector<Box>& gt);

struct SeqEval {
  std::string name;
  OpeResult result;
};

// "seq,n_frames,pr20,npr,sr" lines under a header, written atomically.
std::string format_report(const std::vector<SeqEval>& rows);
void write_report(const std::string& path, const std::vector<SeqEval>& rows);

}  // namespace stmt
