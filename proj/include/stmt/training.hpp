#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stmt/config.hpp"
#include "stmt/geometry.hpp"
#include "stmt/head.hpp"
#include "stmt/model.hpp"
#include "stmt/sequence.hpp"
#include "stmt/tokens.hpp"
#include "stmt/tracker.hpp"

namespace stmt {

// Crops for one template-search pair plus the search-crop annotation.
struct TrainCrops {
  ModalImage z_v, z_t;  // template crops
  ModalImage x_v, x_t;  // search crops
  Box gt_in_crop;       // search-crop pixel coordinates
};

// S drives the loss; T supplies the simulated dynamic tokens. All four
// source frames are distinct.
struct TrainSample {
  TrainCrops s;
  TrainCrops t;
};

// Draws a sample from one sequence; empty when the sequence is too short
// (< 4 frames) or a crop degenerates.
std::optional<TrainSample> sample_pairs(const SequenceDir& seq, Rng& rng, const Config& cfg);

// Runs the backbone over T's joint pair and captures the template-part
// tokens at every insertion layer as that layer's simulated cache entry.
std::map<std::size_t, CacheEntry> simulate_dynamic_tokens(const TrainCrops& t,
                                                          const ModelParams& params,
                                                          const Config& cfg);

// Weighted BCE of the score map against a Gaussian bump at the target cell,
// plus L1 on the offset and size predictions at that cell.
Tensor compute_loss(const HeadOutputs& out, const Box& gt_in_crop, Grid search_grid,
                    double crop_px, const Config& cfg);

// Decoupled-weight-decay Adam with per-group learning-rate factors.
class AdamW {
 public:
  AdamW(const std::vector<NamedParam>& params, const Config& cfg);

  // base_lr already includes any schedule; factors/decay are per parameter.
  void step(const std::vector<NamedParam>& params, double base_lr);

  std::size_t step_count() const { return step_count_; }
  double lr_factor(std::size_t param_idx) const { return slots_[param_idx].lr_factor; }

 private:
  struct Slot {
    std::vector<double> m, v;
    double lr_factor = 1.0;
    bool decay = false;
  };
  std::vector<Slot> slots_;
  std::size_t step_count_ = 0;
  double weight_decay_ = 0.0;
};

// Learning-rate group factor by parameter name prefix: backbone (embed.*,
// layers.*), module (stmt.*), head (head.*).
double group_lr_factor(const std::string& param_name, const Config& cfg);

// Forward S with simulated dynamic tokens, compute the loss. Exposed for
// tests; train_step wraps it with backward + optimizer.
Tensor training_loss(const TrainSample& sample, const ModelParams& params, const Config& cfg);

double train_step(const std::vector<TrainSample>& batch, ModelParams& params, AdamW& opt,
                  std::size_t step_index, const Config& cfg);

struct TrainLog {
  std::vector<double> losses;
  std::vector<std::string> checkpoints;
};

// Full loop: samples batches from the dataset, writes loss.csv and periodic
// checkpoints under out_dir. Deterministic given cfg.seed.
TrainLog train(ModelParams& params, const std::vector<SequenceDir>& dataset, const Config& cfg,
               const std::string& out_dir);

}  // namespace stmt
