#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stmt/geometry.hpp"
#include "stmt/netpbm.hpp"
#include "stmt/rng.hpp"

namespace stmt {

// Recipe for a synthetic RGB + thermal sequence: an elliptical target doing
// a random walk while its visible appearance drifts (hue, shape, global
// illumination) and its thermal signature fades slowly. Distractors mimic
// the target's initial visible color but stay cold; occluders cover part of
// the target without touching the annotation.
struct SynthSpec {
  int length = 30;
  int image_size = 160;
  double target_min = 12.0;  // bbox side range, px
  double target_max = 20.0;
  double walk_step = 2.0;   // per-frame random-walk amplitude, px
  double drift_x = 0.5;     // deterministic drift, px/frame
  double drift_y = 0.0;
  double hue_drift = 0.015;     // hue revolution per frame (visible only)
  double shape_drift = 0.0;     // relative size change per frame
  double illum_amp = 0.25;      // global visible gain modulation
  double illum_period = 20.0;   // frames per illumination cycle
  double tir_drift = 0.004;     // thermal intensity fade per frame
  int distractors = 2;
  int occluder_events = 1;
  int occluder_len = 5;         // frames per occlusion event
  double noise = 0.02;          // static background texture amplitude

  void validate() const;  // throws std::invalid_argument
};

struct SynthFrame {
  ImageU8 visible;   // 3-channel
  ImageU8 infrared;  // 1-channel
};

struct SynthSequence {
  std::vector<SynthFrame> frames;
  std::vector<Box> groundtruth;
};

// Deterministic given (spec, seed): identical calls produce identical bytes.
SynthSequence render_sequence(const SynthSpec& spec, std::uint64_t seed);

// Renders and writes the sequence-directory layout under out_dir.
void write_synth_sequence(const SynthSpec& spec, std::uint64_t seed, const std::string& out_dir);

SynthSpec load_synth_spec(const std::string& path);
void save_synth_spec(const std::string& path, const SynthSpec& spec);

}  // namespace stmt
