#include <cmath>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "stmt/head.hpp"
#include "stmt/synth.hpp"
#include "stmt/tracker.hpp"
#include "test_util.hpp"

using namespace stmt;

namespace {

Config tiny_config() {
  Config cfg;
  cfg.embed_dim = 16;
  cfg.num_heads = 2;
  cfg.depth = 2;
  cfg.patch_size = 8;
  cfg.mlp_ratio = 2.0;
  cfg.template_size = 16;
  cfg.search_size = 32;
  cfg.insert_layers = {1};
  cfg.tf_layers = {1};
  cfg.update_interval = 1;
  cfg.validate();
  return cfg;
}

ImageU8 random_image(Rng& rng, int w, int h, int channels) {
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.channels = channels;
  img.data.resize(static_cast<std::size_t>(w) * h * channels);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.uniform_int(256));
  return img;
}

FramePair random_frame(Rng& rng, int w, int h) {
  return {random_image(rng, w, h, 3), random_image(rng, w, h, 1)};
}

std::vector<double> cache_bytes(const DynamicTokenCache& cache) {
  std::vector<double> flat;
  for (const auto& [layer, e] : cache.entries) {
    flat.push_back(static_cast<double>(layer));
    flat.insert(flat.end(), e.m_v.values().begin(), e.m_v.values().end());
    flat.insert(flat.end(), e.m_t.values().begin(), e.m_t.values().end());
  }
  return flat;
}

}  // namespace

TEST_CASE("head_forward concatenates modalities and applies pointwise maps") {
  Rng rng(111);
  const std::size_t n = 16, d = 8;
  const HeadParams params = HeadParams::init(rng, d, 16, 0.3);
  const Tensor x_v = Tensor::randn(rng, {n, d});
  const Tensor x_t = Tensor::randn(rng, {n, d});
  const HeadOutputs out = head_forward(x_v, x_t, params);

  const Tensor fused = concat_cols({x_v, x_t});
  const Tensor want_score = linear(gelu(linear(fused, params.score.fc1)), params.score.fc2);
  const Tensor want_offset = linear(gelu(linear(fused, params.offset.fc1)), params.offset.fc2);
  const Tensor want_size = linear(gelu(linear(fused, params.size.fc1)), params.size.fc2);
  CHECK(test_util::bitwise_equal(out.score_logits.values(), want_score.values()));
  CHECK(test_util::bitwise_equal(out.offset_logits.values(), want_offset.values()));
  CHECK(test_util::bitwise_equal(out.size_logits.values(), want_size.values()));
  REQUIRE(out.score_logits.shape() == Shape{n, 1});
  REQUIRE(out.offset_logits.shape() == Shape{n, 2});
  REQUIRE(out.size_logits.shape() == Shape{n, 2});
}

TEST_CASE("head_forward validates layouts") {
  Rng rng(112);
  const HeadParams params = HeadParams::init(rng, 8, 16, 0.3);
  const Tensor a = Tensor::randn(rng, {16, 8});
  const Tensor b = Tensor::randn(rng, {12, 8});
  const Tensor wrong_d = Tensor::randn(rng, {16, 6});
  CHECK_THROWS_AS(head_forward(a, b, params), std::invalid_argument);
  CHECK_THROWS_AS(head_forward(wrong_d, wrong_d, params), std::invalid_argument);
}

TEST_CASE("predict_box decodes the documented geometry") {
  const Grid grid{16, 16};
  const double crop = 256.0;
  HeadOutputs out;
  // Peak logit at cell (4, 4); zero offset logits center the box on the cell
  // center; size logits put sigmoid at exactly 0.25 of the crop side.
  std::vector<double> score(grid.count(), 0.0);
  score[4 * 16 + 4] = 2.0;
  out.score_logits = Tensor::from_data({grid.count(), 1}, score);
  out.offset_logits = Tensor::zeros({grid.count(), 2});
  const double quarter = std::log(0.25 / 0.75);  // sigmoid^-1(0.25)
  out.size_logits = Tensor::full({grid.count(), 2}, quarter);

  const auto [box, peak] = predict_box(out, grid, crop);
  CHECK(box.x == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(box.y == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(box.w == doctest::Approx(64.0).epsilon(1e-12));
  CHECK(box.h == doctest::Approx(64.0).epsilon(1e-12));
  CHECK(box.cx() == doctest::Approx(72.0).epsilon(1e-12));  // (4 + 0.5) * 16
  CHECK(peak == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("predict_box breaks argmax ties toward the lowest row-major cell") {
  const Grid grid{4, 4};
  HeadOutputs out;
  out.score_logits = Tensor::full({grid.count(), 1}, 0.3);
  out.offset_logits = Tensor::zeros({grid.count(), 2});
  out.size_logits = Tensor::zeros({grid.count(), 2});
  const auto [box, score] = predict_box(out, grid, 32.0);
  // Cell (0, 0) of a 32 px crop with 8 px cells: center (4, 4).
  CHECK(box.cx() == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(box.cy() == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("predict_box scores stay inside (0, 1) and reject short maps") {
  Rng rng(113);
  const Grid grid{4, 4};
  HeadOutputs out;
  out.score_logits = Tensor::randn(rng, {grid.count(), 1}, 5.0);
  out.offset_logits = Tensor::randn(rng, {grid.count(), 2});
  out.size_logits = Tensor::randn(rng, {grid.count(), 2});
  const auto [box, score] = predict_box(out, grid, 32.0);
  CHECK(score > 0.0);
  CHECK(score < 1.0);
  CHECK(box.w >= 0.0);
  CHECK(box.h >= 0.0);

  HeadOutputs short_map;
  short_map.score_logits = Tensor::randn(rng, {12, 1});
  short_map.offset_logits = Tensor::randn(rng, {12, 2});
  short_map.size_logits = Tensor::randn(rng, {12, 2});
  CHECK_THROWS_AS(predict_box(short_map, grid, 32.0), std::invalid_argument);
}

TEST_CASE("crop_window mapping round-trips boxes") {
  Rng rng(114);
  const FramePair frame = random_frame(rng, 200, 150);
  const Box box{48.0, 56.0, 32.0, 16.0};
  const CropPair crop = crop_window(frame, box, 2.0, 32);

  const Box in_crop = crop.mapping.to_crop(box);
  const Box back = crop.mapping.to_image(in_crop);
  CHECK(std::abs(back.x - box.x) < 0.5);
  CHECK(std::abs(back.y - box.y) < 0.5);
  CHECK(std::abs(back.w - box.w) < 0.5);
  CHECK(std::abs(back.h - box.h) < 0.5);
  // The box center lands at the crop center.
  CHECK(in_crop.cx() == doctest::Approx(16.0).epsilon(1e-9));
  CHECK(in_crop.cy() == doctest::Approx(16.0).epsilon(1e-9));
}

TEST_CASE("crop_window of a constant interior region is constant") {
  Rng rng(115);
  FramePair frame;
  frame.visible = random_image(rng, 64, 64, 3);
  frame.infrared = random_image(rng, 64, 64, 1);
  for (auto& b : frame.visible.data) b = 200;
  for (auto& b : frame.infrared.data) b = 60;

  // side = 2 * sqrt(16 * 16) = 32 == out_size: unit scale, exact samples.
  const Box box{24.0, 24.0, 16.0, 16.0};
  const CropPair crop = crop_window(frame, box, 2.0, 32);
  for (double v : crop.visible.pixels.values()) CHECK(v == 200.0 / 255.0);
  for (double v : crop.infrared.pixels.values()) CHECK(v == 60.0 / 255.0);
}

TEST_CASE("crop_window zero-pads outside the image") {
  Rng rng(116);
  FramePair frame;
  frame.visible = random_image(rng, 64, 64, 3);
  frame.infrared = random_image(rng, 64, 64, 1);
  for (auto& b : frame.visible.data) b = 255;
  for (auto& b : frame.infrared.data) b = 255;

  const Box corner{0.0, 0.0, 10.0, 10.0};  // crop window extends past (0, 0)
  const CropPair crop = crop_window(frame, corner, 4.0, 20);
  const auto px = crop.visible.pixels.values();
  // Top-left of the crop lies fully outside: exactly zero.
  for (int c = 0; c < 3; ++c) CHECK(px[c] == 0.0);
  // Bottom-right of the crop lies inside the all-white image.
  const std::size_t last = (20 * 20 - 1) * 3;
  CHECK(px[last] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("crop_window falls back on a degenerate box") {
  Rng rng(117);
  const FramePair frame = random_frame(rng, 64, 64);
  const Box degenerate{20.0, 20.0, 0.0, 10.0};
  const Box fallback{24.0, 24.0, 12.0, 12.0};

  CHECK_THROWS_AS(crop_window(frame, degenerate, 2.0, 16), std::invalid_argument);
  const CropPair via_fallback = crop_window(frame, degenerate, 2.0, 16, &fallback);
  const CropPair direct = crop_window(frame, fallback, 2.0, 16);
  CHECK(test_util::bitwise_equal(via_fallback.visible.pixels.values(),
                                 direct.visible.pixels.values()));
  CHECK(via_fallback.mapping.x0 == direct.mapping.x0);

  CHECK_THROWS_AS(crop_window(frame, fallback, 0.5, 16), std::invalid_argument);
  CHECK_THROWS_AS(crop_window(frame, fallback, 2.0, 0), std::invalid_argument);
}

TEST_CASE("normalize_crop applies the configured affine map") {
  Config cfg = tiny_config();
  cfg.pixel_mean = 0.25;
  cfg.pixel_std = 0.5;
  ModalImage img;
  img.pixels = Tensor::full({4, 4, 3}, 0.75);
  img.modality = Modality::RGB;
  const ModalImage out = normalize_crop(img, cfg);
  for (double v : out.pixels.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("track_init builds fixed templates and seeds the cache") {
  Rng rng(118);
  const Config cfg = tiny_config();
  Rng init_rng(5);
  const ModelParams params = ModelParams::init(init_rng, cfg);
  const FramePair frame = random_frame(rng, 64, 64);
  const Box gt{24.0, 20.0, 14.0, 18.0};

  const TrackerState state = track_init(frame, gt, params, cfg);
  CHECK(state.template_v.len() == 4);  // (16 / 8)^2
  CHECK(state.template_t.len() == 4);
  CHECK(state.template_v.role == Role::Template);
  CHECK(state.frame_index == 0);
  CHECK(state.previous_box == gt);
  CHECK(state.cache.last_update_frame == 0);
  REQUIRE(state.cache.has(1));
  CHECK(state.cache.entries.at(1).m_v.shape() == Shape{4, 16});
  CHECK(state.cache.entries.at(1).m_t.shape() == Shape{4, 16});

  // Same inputs, same state.
  const TrackerState again = track_init(frame, gt, params, cfg);
  CHECK(test_util::bitwise_equal(again.template_v.tokens.values(),
                                 state.template_v.tokens.values()));
  CHECK(test_util::bitwise_equal(cache_bytes(again.cache), cache_bytes(state.cache)));
}

TEST_CASE("track_init rejects a ground truth outside the image") {
  Rng rng(119);
  const Config cfg = tiny_config();
  Rng init_rng(5);
  const ModelParams params = ModelParams::init(init_rng, cfg);
  const FramePair frame = random_frame(rng, 64, 64);
  CHECK_THROWS_AS(track_init(frame, Box{70.0, 10.0, 8.0, 8.0}, params, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(track_init(frame, Box{10.0, 10.0, 0.0, 8.0}, params, cfg),
                  std::invalid_argument);
}

TEST_CASE("track_step keeps templates fixed and honors the update gate") {
  Rng rng(120);
  Config cfg = tiny_config();
  cfg.update_threshold = 1.0;  // a sigmoid score can never clear a strict 1.0
  Rng init_rng(5);
  const ModelParams params = ModelParams::init(init_rng, cfg);
  const FramePair frame0 = random_frame(rng, 64, 64);
  const Box gt{24.0, 20.0, 14.0, 18.0};

  TrackerState state = track_init(frame0, gt, params, cfg);
  const auto template_before =
      std::vector<double>(state.template_v.tokens.values().begin(),
                          state.template_v.tokens.values().end());
  const auto cache_before = cache_bytes(state.cache);

  const FramePair frame1 = random_frame(rng, 64, 64);
  const StepResult r1 = track_step(state, frame1, params, cfg);
  CHECK(state.frame_index == 1);
  CHECK_FALSE(r1.cache_updated);
  CHECK(test_util::bitwise_equal(cache_bytes(state.cache), cache_before));
  CHECK(test_util::bitwise_equal(state.template_v.tokens.values(), template_before));
  CHECK(state.previous_box == r1.box);

  // Predictions stay inside the image and non-degenerate.
  CHECK(r1.box.x >= 0.0);
  CHECK(r1.box.y >= 0.0);
  CHECK(r1.box.x + r1.box.w <= 64.0);
  CHECK(r1.box.y + r1.box.h <= 64.0);
  CHECK(r1.box.w >= 1.0);
  CHECK(r1.box.h >= 1.0);
}

TEST_CASE("track_step updates the cache when the gate opens") {
  Rng rng(121);
  Config cfg = tiny_config();
  cfg.update_threshold = 0.0;  // any sigmoid score is strictly above zero
  cfg.update_interval = 1;
  Rng init_rng(5);
  const ModelParams params = ModelParams::init(init_rng, cfg);
  const FramePair frame0 = random_frame(rng, 64, 64);
  const Box gt{24.0, 20.0, 14.0, 18.0};

  TrackerState state = track_init(frame0, gt, params, cfg);
  const auto cache_before = cache_bytes(state.cache);
  const StepResult r = track_step(state, random_frame(rng, 64, 64), params, cfg);
  CHECK(r.cache_updated);
  CHECK(state.cache.last_update_frame == 1);
  CHECK(state.cache.source_score == r.score);
  CHECK_FALSE(test_util::bitwise_equal(cache_bytes(state.cache), cache_before));
}

TEST_CASE("track_step is deterministic") {
  Rng rng(122);
  const Config cfg = tiny_config();
  Rng init_rng(5);
  const ModelParams params = ModelParams::init(init_rng, cfg);
  const FramePair frame0 = random_frame(rng, 64, 64);
  const FramePair frame1 = random_frame(rng, 64, 64);
  const Box gt{24.0, 20.0, 14.0, 18.0};

  TrackerState a = track_init(frame0, gt, params, cfg);
  TrackerState b = track_init(frame0, gt, params, cfg);
  const StepResult ra = track_step(a, frame1, params, cfg);
  const StepResult rb = track_step(b, frame1, params, cfg);
  CHECK(ra.box == rb.box);
  CHECK(ra.score == rb.score);
}

TEST_CASE("run_tracker emits the init annotation followed by predictions") {
  Rng rng(123);
  SynthSpec spec;
  spec.length = 4;
  spec.image_size = 64;
  const auto dir = std::filesystem::temp_directory_path() / "stmt_tracker_seq";
  std::filesystem::remove_all(dir);
  write_synth_sequence(spec, 9, dir.string());

  const SequenceDir seq = load_sequence(dir.string());
  REQUIRE(seq.size() == 4);
  const Config cfg = tiny_config();
  Rng init_rng(5);
  const ModelParams params = ModelParams::init(init_rng, cfg);

  const std::vector<Box> boxes = run_tracker(seq, params, cfg);
  REQUIRE(boxes.size() == 4);
  CHECK(boxes[0] == seq.groundtruth()[0]);
  for (const Box& b : boxes) {
    CHECK(b.w > 0.0);
    CHECK(b.h > 0.0);
    CHECK(b.x >= 0.0);
    CHECK(b.y >= 0.0);
  }
  std::filesystem::remove_all(dir);
}
