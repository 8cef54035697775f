#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "stmt/config.hpp"
#include "stmt/geometry.hpp"
#include "stmt/memory.hpp"
#include "stmt/model.hpp"
#include "stmt/netpbm.hpp"
#include "stmt/sequence.hpp"
#include "stmt/tokens.hpp"

namespace stmt {

// Affine map between crop pixels and image pixels:
//   image = origin + crop * scale.
struct CropMapping {
  double x0 = 0.0;
  double y0 = 0.0;
  double scale = 1.0;
  std::size_t out_size = 0;

  double to_image_x(double cx) const { return x0 + cx * scale; }
  double to_image_y(double cy) const { return y0 + cy * scale; }
  double to_crop_x(double ix) const { return (ix - x0) / scale; }
  double to_crop_y(double iy) const { return (iy - y0) / scale; }

  Box to_image(const Box& b) const {
    return {to_image_x(b.x), to_image_y(b.y), b.w * scale, b.h * scale};
  }
  Box to_crop(const Box& b) const {
    return {to_crop_x(b.x), to_crop_y(b.y), b.w / scale, b.h / scale};
  }
};

struct FramePair {
  ImageU8 visible;   // 3-channel
  ImageU8 infrared;  // 1-channel
};

struct CropPair {
  ModalImage visible;
  ModalImage infrared;
  CropMapping mapping;
};

// Square crop of side factor*sqrt(w*h) centered on the box, bilinearly
// resized to out_size x out_size. Values are raw [0,1]; out-of-image area is
// exactly zero. A degenerate box falls back to fallback_box.
CropPair crop_window(const FramePair& frame, const Box& center_box, double factor,
                     std::size_t out_size, const Box* fallback_box = nullptr);

// Applies the configured mean/std normalization to a raw [0,1] crop.
ModalImage normalize_crop(const ModalImage& img, const Config& cfg);

FramePair load_frame_pair(const SequenceDir& seq, std::size_t frame);

struct TrackerState {
  TokenSeq template_v, template_t;  // fixed after init
  DynamicTokenCache cache;
  Box previous_box;  // image coordinates
  long frame_index = 0;
  std::size_t image_width = 0, image_height = 0;
};

struct StepResult {
  Box box;          // image coordinates, clamped
  double score = 0.0;
  bool cache_updated = false;
};

TrackerState track_init(const FramePair& frame, const Box& gt, const ModelParams& params,
                        const Config& cfg);

StepResult track_step(TrackerState& state, const FramePair& frame, const ModelParams& params,
                      const Config& cfg);

// One-pass run over a sequence: first output line is the init box, then one
// prediction per remaining frame.
std::vector<Box> run_tracker(const SequenceDir& seq, const ModelParams& params,
                             const Config& cfg);

}  // namespace stmt
