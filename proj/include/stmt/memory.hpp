#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "stmt/encoder.hpp"
#include "stmt/geometry.hpp"
#include "stmt/stmt_module.hpp"
#include "stmt/tensor.hpp"
#include "stmt/tokens.hpp"

namespace stmt {

// Per-layer dynamic-token store plus its update bookkeeping.
struct DynamicTokenCache {
  std::map<std::size_t, CacheEntry> entries;  // layer index -> token pair
  long last_update_frame = -1;
  double source_score = 0.0;

  bool has(std::size_t layer) const { return entries.count(layer) != 0; }
};

struct UpdatePolicy {
  int interval = 25;            // minimum frames between updates
  double score_threshold = 0.65;  // strict ">" comparison
};

// Re-inflates an eliminated sequence to its original length; eliminated
// positions are zero rows.
Tensor restore_tokens(const Tensor& x, const EliminationRecord& rec);

// Row-major token <-> grid reshapes (token i sits at (i / cols, i % cols)).
Tensor tokens_to_grid(const Tensor& x, Grid grid);    // [N,D] -> [rows,cols,D]
Tensor grid_to_tokens(const Tensor& fm);              // [rows,cols,D] -> [N,D]

// Average-pooled bilinear ROI crop. roi is in grid units (same frame as fm
// indices); samples sampling^2 points per output cell at bin centers,
// half-pixel convention, borders clamped. Value-only (no tape).
Tensor roi_align(const Tensor& fm, const Box& roi, std::size_t out_rows, std::size_t out_cols,
                 std::size_t sampling);

struct ExtractConfig {
  std::size_t patch_size = 16;
  Grid search_grid;
  Grid template_grid;
  std::size_t sampling = 2;
};

// Turns staged mid-backbone search tokens into template-sized dynamic
// tokens: restore -> grid -> ROI crop at bbox/P -> tokens. bbox is in
// search-crop pixels.
std::map<std::size_t, CacheEntry> extract_dynamic_tokens(
    const std::map<std::size_t, StagedJoint>& staged, std::size_t n_z, const Box& bbox_crop_px,
    const ExtractConfig& cfg);

// Replaces the cache contents iff the interval has elapsed AND the score
// clears the threshold. Returns whether it updated.
bool maybe_update(DynamicTokenCache& cache, const std::map<std::size_t, CacheEntry>& staged,
                  long frame_idx, double score, const UpdatePolicy& policy);

// Cold-start seed: adopts the staged entries unconditionally at frame 0.
DynamicTokenCache init_cache(const std::map<std::size_t, CacheEntry>& staged);

// Debug dump in the checkpoint container format, names "layer{L}.{mod}".
void dump_cache(const std::string& path, const DynamicTokenCache& cache);

}  // namespace stmt
