#include "stmt/head.hpp"

#include <cmath>
#include <stdexcept>

namespace stmt {

namespace {

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor pointwise(const Tensor& x, const PointwiseHead& p) {
  return linear(gelu(linear(x, p.fc1)), p.fc2);
}

}  // namespace

PointwiseHead PointwiseHead::init(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out,
                                  double stddev) {
  PointwiseHead p;
  p.fc1 = LinearParams::init(rng, in, hidden, stddev);
  p.fc2 = LinearParams::init(rng, hidden, out, stddev);
  return p;
}

HeadParams HeadParams::init(Rng& rng, std::size_t embed_dim, std::size_t hidden, double stddev) {
  HeadParams p;
  p.score = PointwiseHead::init(rng, 2 * embed_dim, hidden, 1, stddev);
  p.offset = PointwiseHead::init(rng, 2 * embed_dim, hidden, 2, stddev);
  p.size = PointwiseHead::init(rng, 2 * embed_dim, hidden, 2, stddev);
  return p;
}

HeadOutputs head_forward(const Tensor& x_v, const Tensor& x_t, const HeadParams& params) {
  if (x_v.rank() != 2 || x_v.shape() != x_t.shape()) {
    throw std::invalid_argument("head: modality sequences must share one [N, D] shape");
  }
  if (2 * x_v.dim(1) != params.score.fc1.in_dim()) {
    throw std::invalid_argument(
        "head: sequences do not match the head input width (un-restored input?)");
  }
  const Tensor fused = concat_cols({x_v, x_t});
  return {pointwise(fused, params.score), pointwise(fused, params.offset),
          pointwise(fused, params.size)};
}

std::pair<Box, double> predict_box(const HeadOutputs& out, Grid search_grid, double crop_px) {
  const std::size_t n = search_grid.count();
  if (out.score_logits.dim(0) != n) {
    throw std::invalid_argument("predict_box: score map does not match the grid");
  }
  const auto logits = out.score_logits.values();
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (logits[i] > logits[best]) best = i;  // ties keep the lowest index
  }
  const double score = stable_sigmoid(logits[best]);

  const std::size_t row = best / search_grid.cols;
  const std::size_t col = best % search_grid.cols;
  const double cell_w = crop_px / static_cast<double>(search_grid.cols);
  const double cell_h = crop_px / static_cast<double>(search_grid.rows);
  const double off_x = stable_sigmoid(out.offset_logits.values()[best * 2 + 0]) - 0.5;
  const double off_y = stable_sigmoid(out.offset_logits.values()[best * 2 + 1]) - 0.5;
  const double cx = (static_cast<double>(col) + 0.5 + off_x) * cell_w;
  const double cy = (static_cast<double>(row) + 0.5 + off_y) * cell_h;
  const double w = stable_sigmoid(out.size_logits.values()[best * 2 + 0]) * crop_px;
  const double h = stable_sigmoid(out.size_logits.values()[best * 2 + 1]) * crop_px;
  return {Box{cx - 0.5 * w, cy - 0.5 * h, w, h}, score};
}

}  // namespace stmt
