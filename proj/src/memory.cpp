#include "stmt/memory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stmt/checkpoint.hpp"

namespace stmt {

Tensor restore_tokens(const Tensor& x, const EliminationRecord& rec) {
  if (x.dim(0) != rec.kept_indices.size()) {
    throw std::invalid_argument("restore_tokens: token count does not match the record");
  }
  if (rec.kept_indices.size() == rec.original_len) {
    bool identity = true;
    for (std::size_t i = 0; i < rec.kept_indices.size(); ++i) {
      identity = identity && rec.kept_indices[i] == i;
    }
    if (identity) return x;
  }
  return scatter_rows(x, rec.kept_indices, rec.original_len);
}

Tensor tokens_to_grid(const Tensor& x, Grid grid) {
  if (x.rank() != 2 || x.dim(0) != grid.count()) {
    throw std::invalid_argument("tokens_to_grid: sequence length does not match the grid");
  }
  return x.reshaped({grid.rows, grid.cols, x.dim(1)});
}

Tensor grid_to_tokens(const Tensor& fm) {
  if (fm.rank() != 3) {
    throw std::invalid_argument("grid_to_tokens: expected a [rows, cols, D] map");
  }
  return fm.reshaped({fm.dim(0) * fm.dim(1), fm.dim(2)});
}

namespace {

// Bilinear read at continuous grid coordinates (u right, v down), half-pixel
// convention: cell (r, c) has its center at (c + 0.5, r + 0.5). Samples
// outside the map clamp to the border. Uses the lerp form a + t*(b - a) so a
// constant map reproduces the constant bitwise.
void bilinear_sample(const double* fm, std::size_t rows, std::size_t cols, std::size_t d,
                     double u, double v, double* out) {
  const auto clamp_idx = [](double t, std::size_t n) {
    return std::clamp(t, 0.0, static_cast<double>(n - 1));
  };
  const double tu = clamp_idx(u - 0.5, cols);
  const double tv = clamp_idx(v - 0.5, rows);
  const auto c0 = static_cast<std::size_t>(tu);
  const auto r0 = static_cast<std::size_t>(tv);
  const std::size_t c1 = std::min(c0 + 1, cols - 1);
  const std::size_t r1 = std::min(r0 + 1, rows - 1);
  const double fu = tu - static_cast<double>(c0);
  const double fv = tv - static_cast<double>(r0);
  const double* p00 = fm + (r0 * cols + c0) * d;
  const double* p01 = fm + (r0 * cols + c1) * d;
  const double* p10 = fm + (r1 * cols + c0) * d;
  const double* p11 = fm + (r1 * cols + c1) * d;
  for (std::size_t k = 0; k < d; ++k) {
    const double top = p00[k] + fu * (p01[k] - p00[k]);
    const double bot = p10[k] + fu * (p11[k] - p10[k]);
    out[k] = top + fv * (bot - top);
  }
}

// Pairwise reduction; sums of equal values stay exact for power-of-two counts.
double pairwise_sum(const double* v, std::size_t n, std::size_t stride) {
  if (n == 1) return *v;
  const std::size_t half = n / 2;
  return pairwise_sum(v, half, stride) + pairwise_sum(v + half * stride, n - half, stride);
}

}  // namespace

Tensor roi_align(const Tensor& fm, const Box& roi, std::size_t out_rows, std::size_t out_cols,
                 std::size_t sampling) {
  if (fm.rank() != 3) {
    throw std::invalid_argument("roi_align: expected a [rows, cols, D] map");
  }
  if (roi.w <= 0.0 || roi.h <= 0.0) {
    throw std::invalid_argument("roi_align: roi extents must be positive");
  }
  if (out_rows == 0 || out_cols == 0 || sampling == 0) {
    throw std::invalid_argument("roi_align: output layout must be non-empty");
  }
  const std::size_t rows = fm.dim(0), cols = fm.dim(1), d = fm.dim(2);
  const double bin_h = roi.h / static_cast<double>(out_rows);
  const double bin_w = roi.w / static_cast<double>(out_cols);
  const std::size_t n_samples = sampling * sampling;
  const double denom = static_cast<double>(n_samples);

  std::vector<double> out(out_rows * out_cols * d, 0.0);
  std::vector<double> samples(n_samples * d);
  const double* src = fm.values().data();
  for (std::size_t i = 0; i < out_rows; ++i) {
    for (std::size_t j = 0; j < out_cols; ++j) {
      for (std::size_t sy = 0; sy < sampling; ++sy) {
        const double v = roi.y + (static_cast<double>(i) +
                                  (static_cast<double>(sy) + 0.5) / static_cast<double>(sampling)) *
                                     bin_h;
        for (std::size_t sx = 0; sx < sampling; ++sx) {
          const double u =
              roi.x + (static_cast<double>(j) +
                       (static_cast<double>(sx) + 0.5) / static_cast<double>(sampling)) *
                          bin_w;
          bilinear_sample(src, rows, cols, d, u, v,
                          samples.data() + (sy * sampling + sx) * d);
        }
      }
      double* acc = out.data() + (i * out_cols + j) * d;
      for (std::size_t k = 0; k < d; ++k) {
        acc[k] = pairwise_sum(samples.data() + k, n_samples, d) / denom;
      }
    }
  }
  return Tensor::from_data({out_rows, out_cols, d}, std::move(out));
}

std::map<std::size_t, CacheEntry> extract_dynamic_tokens(
    const std::map<std::size_t, StagedJoint>& staged, std::size_t n_z, const Box& bbox_crop_px,
    const ExtractConfig& cfg) {
  if (bbox_crop_px.w <= 0.0 || bbox_crop_px.h <= 0.0) {
    throw std::invalid_argument("extract_dynamic_tokens: bbox extents must be positive");
  }
  const double p = static_cast<double>(cfg.patch_size);
  const Box roi{bbox_crop_px.x / p, bbox_crop_px.y / p, bbox_crop_px.w / p, bbox_crop_px.h / p};

  std::map<std::size_t, CacheEntry> out;
  for (const auto& [layer, joint] : staged) {
    CacheEntry entry;
    for (int mod = 0; mod < 2; ++mod) {
      const Tensor& h = mod == 0 ? joint.h_v : joint.h_t;
      const EliminationRecord& rec = mod == 0 ? joint.record_v : joint.record_t;
      if (!h.defined()) {
        throw std::invalid_argument("extract_dynamic_tokens: missing modality at layer " +
                                    std::to_string(layer));
      }
      const Tensor search = slice_rows(h, n_z, h.dim(0));
      const Tensor full = restore_tokens(search, rec);
      const Tensor fm = tokens_to_grid(full, cfg.search_grid);
      const Tensor cropped =
          roi_align(fm, roi, cfg.template_grid.rows, cfg.template_grid.cols, cfg.sampling);
      (mod == 0 ? entry.m_v : entry.m_t) = grid_to_tokens(cropped);
    }
    out.emplace(layer, std::move(entry));
  }
  return out;
}

bool maybe_update(DynamicTokenCache& cache, const std::map<std::size_t, CacheEntry>& staged,
                  long frame_idx, double score, const UpdatePolicy& policy) {
  if (policy.interval < 1) {
    throw std::invalid_argument("update policy: interval must be >= 1");
  }
  const bool interval_ok = frame_idx - cache.last_update_frame >= policy.interval;
  const bool score_ok = score > policy.score_threshold;
  if (!(interval_ok && score_ok)) return false;
  cache.entries = staged;
  cache.last_update_frame = frame_idx;
  cache.source_score = score;
  return true;
}

DynamicTokenCache init_cache(const std::map<std::size_t, CacheEntry>& staged) {
  DynamicTokenCache cache;
  cache.entries = staged;
  cache.last_update_frame = 0;
  cache.source_score = 1.0;
  return cache;
}

void dump_cache(const std::string& path, const DynamicTokenCache& cache) {
  std::vector<NamedParam> entries;
  for (const auto& [layer, e] : cache.entries) {
    entries.push_back({"layer" + std::to_string(layer) + ".rgb", e.m_v});
    entries.push_back({"layer" + std::to_string(layer) + ".tir", e.m_t});
  }
  save_checkpoint(path, entries);
}

}  // namespace stmt
