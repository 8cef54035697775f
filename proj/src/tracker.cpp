#include "stmt/tracker.hpp"

#include <cmath>
#include <stdexcept>

#include "stmt/head.hpp"

namespace stmt {

namespace {

// Bilinear read of one channel at continuous pixel-index coordinates;
// anything outside the raster contributes zero.
double sample_zero_padded(const ImageU8& img, double x, double y, int c) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const int xi = x0 + dx, yi = y0 + dy;
      if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) continue;
      const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
      acc += w * static_cast<double>(img.at(yi, xi, c)) / 255.0;
    }
  }
  return acc;
}

ModalImage resample(const ImageU8& img, Modality modality, const CropMapping& map) {
  const std::size_t out = map.out_size;
  std::vector<double> px(out * out * 3);
  for (std::size_t y = 0; y < out; ++y) {
    const double sy = map.y0 + (static_cast<double>(y) + 0.5) * map.scale - 0.5;
    for (std::size_t x = 0; x < out; ++x) {
      const double sx = map.x0 + (static_cast<double>(x) + 0.5) * map.scale - 0.5;
      double* dst = px.data() + (y * out + x) * 3;
      if (img.channels == 3) {
        for (int c = 0; c < 3; ++c) dst[c] = sample_zero_padded(img, sx, sy, c);
      } else {
        // Single thermal channel replicated so the patch projection is shared.
        const double v = sample_zero_padded(img, sx, sy, 0);
        dst[0] = dst[1] = dst[2] = v;
      }
    }
  }
  return {Tensor::from_data({out, out, 3}, std::move(px)), modality};
}

}  // namespace

CropPair crop_window(const FramePair& frame, const Box& center_box, double factor,
                     std::size_t out_size, const Box* fallback_box) {
  if (factor < 1.0) throw std::invalid_argument("crop_window: factor must be >= 1");
  if (out_size == 0) throw std::invalid_argument("crop_window: output size must be positive");
  Box box = center_box;
  if (box.area() <= 0.0) {
    if (fallback_box == nullptr || fallback_box->area() <= 0.0) {
      throw std::invalid_argument("crop_window: degenerate box without a fallback");
    }
    box = *fallback_box;
  }
  const double side = factor * std::sqrt(box.w * box.h);
  CropMapping map;
  map.out_size = out_size;
  map.scale = side / static_cast<double>(out_size);
  map.x0 = box.cx() - 0.5 * side;
  map.y0 = box.cy() - 0.5 * side;

  CropPair pair;
  pair.visible = resample(frame.visible, Modality::RGB, map);
  pair.infrared = resample(frame.infrared, Modality::TIR, map);
  pair.mapping = map;
  return pair;
}

ModalImage normalize_crop(const ModalImage& img, const Config& cfg) {
  std::vector<double> px(img.pixels.values().begin(), img.pixels.values().end());
  for (double& v : px) v = (v - cfg.pixel_mean) / cfg.pixel_std;
  return {Tensor::from_data(img.pixels.shape(), std::move(px)), img.modality};
}

FramePair load_frame_pair(const SequenceDir& seq, std::size_t frame) {
  return {seq.visible(frame), seq.infrared(frame)};
}

namespace {

struct ForwardResult {
  BackboneOutputs backbone;
  HeadOutputs head;
  Box box_in_crop;
  double score = 0.0;
};

// Embeds the four crops, runs the layer stack with the token-module hooks,
// restores the search sequences, and applies the prediction head.
ForwardResult full_forward(const TokenSeq& z_v, const TokenSeq& z_t, const CropPair& search,
                           const DynamicTokenCache* cache, const ModelParams& params,
                           const Config& cfg, bool dynamic_enabled) {
  const TokenSeq x_v = embed(normalize_crop(search.visible, cfg), Role::Search, params.embed);
  const TokenSeq x_t = embed(normalize_crop(search.infrared, cfg), Role::Search, params.embed);
  const TokenSeq joint_v = join_tokens(z_v, x_v);
  const TokenSeq joint_t = join_tokens(z_t, x_t);
  const std::size_t n_z = z_v.len();

  StmtConfig stmt_cfg = params.stmt_config(cfg);
  stmt_cfg.enable_dynamic_tokens = stmt_cfg.enable_dynamic_tokens && dynamic_enabled;

  BackboneOptions opt;
  opt.heads = cfg.num_heads;
  opt.enable_elimination = cfg.enable_elimination;
  opt.keep_rate = cfg.keep_rate;
  opt.elimination_layers = cfg.insert_layers;
  opt.hook_layers = cfg.insert_layers;
  opt.stage_layers = cfg.insert_layers;
  opt.hook = [&](std::size_t layer, Tensor& h_v, Tensor& h_t, std::size_t nz) {
    const CacheEntry* entry = nullptr;
    if (cache != nullptr) {
      const auto it = cache->entries.find(layer);
      if (it != cache->entries.end()) entry = &it->second;
    }
    auto [nv, nt] =
        stmt_forward(h_v, h_t, nz, entry, stmt_cfg, layer, params.stmt_layers.at(layer));
    h_v = std::move(nv);
    h_t = std::move(nt);
  };

  ForwardResult res;
  res.backbone = run_backbone(joint_v.tokens, joint_t.tokens, n_z, params.layers, opt);

  const std::size_t total_v = res.backbone.h_v.dim(0);
  const Tensor search_v = restore_tokens(slice_rows(res.backbone.h_v, n_z, total_v),
                                         res.backbone.final_record_v);
  const Tensor search_t = restore_tokens(slice_rows(res.backbone.h_t, n_z, total_v),
                                         res.backbone.final_record_t);
  res.head = head_forward(search_v, search_t, params.head);
  auto [box, score] = predict_box(res.head, cfg.search_grid(), static_cast<double>(cfg.search_size));
  res.box_in_crop = box;
  res.score = score;
  return res;
}

ExtractConfig extract_config(const Config& cfg) {
  return {cfg.patch_size, cfg.search_grid(), cfg.template_grid(), cfg.roi_sampling};
}

}  // namespace

TrackerState track_init(const FramePair& frame, const Box& gt, const ModelParams& params,
                        const Config& cfg) {
  NoGradGuard no_grad;
  if (gt.area() <= 0.0 || gt.x + gt.w <= 0.0 || gt.y + gt.h <= 0.0 ||
      gt.x >= frame.visible.width || gt.y >= frame.visible.height) {
    throw std::invalid_argument("track_init: ground-truth box lies outside the image");
  }

  TrackerState state;
  state.image_width = static_cast<std::size_t>(frame.visible.width);
  state.image_height = static_cast<std::size_t>(frame.visible.height);

  const CropPair tmpl = crop_window(frame, gt, cfg.template_factor, cfg.template_size);
  state.template_v = embed(normalize_crop(tmpl.visible, cfg), Role::Template, params.embed);
  state.template_t = embed(normalize_crop(tmpl.infrared, cfg), Role::Template, params.embed);

  // Cold start: one pass over a search crop centered on the annotation, with
  // the dynamic-token path off, seeds the cache from the annotation box.
  const CropPair search = crop_window(frame, gt, cfg.search_factor, cfg.search_size);
  const ForwardResult init_fwd = full_forward(state.template_v, state.template_t, search,
                                              nullptr, params, cfg, /*dynamic_enabled=*/false);
  if (cfg.enable_dynamic_tokens) {
    const Box gt_in_crop =
        search.mapping.to_crop(gt).clamped(static_cast<double>(cfg.search_size),
                                           static_cast<double>(cfg.search_size));
    state.cache = init_cache(extract_dynamic_tokens(init_fwd.backbone.staged,
                                                    state.template_v.len(), gt_in_crop,
                                                    extract_config(cfg)));
  }
  state.previous_box = gt;
  state.frame_index = 0;
  return state;
}

StepResult track_step(TrackerState& state, const FramePair& frame, const ModelParams& params,
                      const Config& cfg) {
  NoGradGuard no_grad;
  ++state.frame_index;
  const CropPair search =
      crop_window(frame, state.previous_box, cfg.search_factor, cfg.search_size);
  const ForwardResult fwd = full_forward(state.template_v, state.template_t, search,
                                         &state.cache, params, cfg, /*dynamic_enabled=*/true);

  StepResult result;
  result.score = fwd.score;
  result.box = search.mapping.to_image(fwd.box_in_crop)
                   .clamped(static_cast<double>(state.image_width),
                            static_cast<double>(state.image_height));

  if (cfg.enable_dynamic_tokens) {
    const Box roi_box = fwd.box_in_crop.clamped(static_cast<double>(cfg.search_size),
                                                static_cast<double>(cfg.search_size));
    const auto staged = extract_dynamic_tokens(fwd.backbone.staged, state.template_v.len(),
                                               roi_box, extract_config(cfg));
    result.cache_updated =
        maybe_update(state.cache, staged, state.frame_index, fwd.score,
                     UpdatePolicy{cfg.update_interval, cfg.update_threshold});
  }
  state.previous_box = result.box;
  return result;
}

std::vector<Box> run_tracker(const SequenceDir& seq, const ModelParams& params,
                             const Config& cfg) {
  if (seq.size() == 0) throw std::invalid_argument("run_tracker: empty sequence");
  std::vector<Box> results;
  results.reserve(seq.size());
  TrackerState state = track_init(load_frame_pair(seq, 0), seq.groundtruth()[0], params, cfg);
  results.push_back(seq.groundtruth()[0]);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    results.push_back(track_step(state, load_frame_pair(seq, i), params, cfg).box);
  }
  return results;
}

}  // namespace stmt
