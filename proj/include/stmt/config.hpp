#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>

#include "stmt/tokens.hpp"

namespace stmt {

// Every runtime knob, loadable from flat "key = value" files ('#' comments).
struct Config {
  // model geometry
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t depth = 12;
  std::size_t patch_size = 16;
  double mlp_ratio = 4.0;
  std::size_t template_size = 128;
  std::size_t search_size = 256;

  // module placement and ablation switches
  std::set<std::size_t> insert_layers{4, 7, 10};
  std::set<std::size_t> tf_layers{10};
  bool enable_modality_enhancement = true;
  bool enable_dynamic_tokens = true;
  bool tie_dynamic_ca = false;

  // candidate elimination
  bool enable_elimination = false;
  double keep_rate = 0.7;

  // dynamic-token cache
  int update_interval = 25;
  double update_threshold = 0.65;
  std::size_t roi_sampling = 2;

  // crops and preprocessing
  double template_factor = 2.0;
  double search_factor = 4.0;
  double pixel_mean = 0.5;
  double pixel_std = 0.5;

  // training
  std::uint64_t seed = 42;
  double module_lr = 1e-4;
  double backbone_lr_factor = 0.01;
  double head_lr_factor = 0.1;
  double weight_decay = 1e-4;
  std::size_t batch_size = 12;
  std::size_t train_steps = 1000;
  std::size_t checkpoint_every = 200;
  double loss_cls_weight = 1.0;
  double loss_offset_weight = 1.0;
  double loss_size_weight = 1.0;
  double jitter_shift = 0.1;   // fraction of crop side
  double jitter_scale = 0.05;  // log-scale extent
  bool detach_dynamic = true;
  std::size_t t_window = 0;    // 0 = sample temporal frames anywhere
  double score_sigma = 0.75;   // classification target spread, in cells

  Grid template_grid() const {
    return {template_size / patch_size, template_size / patch_size};
  }
  Grid search_grid() const { return {search_size / patch_size, search_size / patch_size}; }

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  bool operator==(const Config&) const = default;
};

Config load_config(const std::string& path);
void save_config(const std::string& path, const Config& cfg);

// Applies "key = value" assignments from a single string (used by tests and
// CLI overrides). Unknown keys throw.
void apply_config_line(Config& cfg, const std::string& line, std::size_t line_no);

}  // namespace stmt
