#pragma once

#include <cstddef>
#include <utility>

#include "stmt/geometry.hpp"
#include "stmt/tensor.hpp"
#include "stmt/tokens.hpp"

namespace stmt {

// Two-layer pointwise map applied per search-grid cell.
struct PointwiseHead {
  LinearParams fc1, fc2;

  static PointwiseHead init(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out,
                            double stddev = 0.02);
};

// Score / offset / size heads over the channel-concatenated modalities.
struct HeadParams {
  PointwiseHead score;   // 2D -> 1 logit per cell
  PointwiseHead offset;  // 2D -> 2 logits (x, y)
  PointwiseHead size;    // 2D -> 2 logits (w, h)

  static HeadParams init(Rng& rng, std::size_t embed_dim, std::size_t hidden,
                         double stddev = 0.02);
};

struct HeadOutputs {
  Tensor score_logits;   // [N, 1]
  Tensor offset_logits;  // [N, 2]
  Tensor size_logits;    // [N, 2]
};

// Both inputs must be full-length (restored) search sequences of the same
// grid; they are concatenated along channels before the heads.
HeadOutputs head_forward(const Tensor& x_v, const Tensor& x_t, const HeadParams& params);

// Decodes the maps: box center = argmax cell center + offset (in cells,
// sigmoid-mapped to (-0.5, 0.5)); box size = sigmoid fraction of the crop.
// Ties pick the lowest row-major cell. Returns crop-pixel box + peak score.
std::pair<Box, double> predict_box(const HeadOutputs& out, Grid search_grid, double crop_px);

}  // namespace stmt
