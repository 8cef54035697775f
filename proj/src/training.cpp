#include "stmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace fs = std::filesystem;

namespace stmt {

namespace {

// Uniformly picks `count` distinct frame indices; the first two become S's
// (template, search) and the rest T's, optionally confined near S's search
// frame.
std::vector<std::size_t> pick_frames(std::size_t n, std::size_t t_window, Rng& rng) {
  std::vector<std::size_t> chosen;
  const auto draw = [&](std::size_t lo, std::size_t hi) {  // inclusive range
    while (true) {
      const auto f = lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1));
      if (std::find(chosen.begin(), chosen.end(), f) == chosen.end()) return f;
    }
  };
  chosen.push_back(draw(0, n - 1));  // S template
  chosen.push_back(draw(0, n - 1));  // S search
  std::size_t lo = 0, hi = n - 1;
  if (t_window > 0) {
    const std::size_t center = chosen[1];
    lo = center > t_window ? center - t_window : 0;
    hi = std::min(n - 1, center + t_window);
    // The window must still hold two unused frames.
    if (hi - lo + 1 < 4) {
      lo = 0;
      hi = n - 1;
    }
  }
  chosen.push_back(draw(lo, hi));  // T template
  chosen.push_back(draw(lo, hi));  // T search
  return chosen;
}

Box jittered(const Box& gt, double shift_frac, double scale_amp, double side, Rng& rng) {
  const double dx = shift_frac * side * (2.0 * rng.uniform() - 1.0);
  const double dy = shift_frac * side * (2.0 * rng.uniform() - 1.0);
  const double s = std::exp(scale_amp * (2.0 * rng.uniform() - 1.0));
  Box b = gt;
  b.w *= s;
  b.h *= s;
  b.x = gt.cx() - 0.5 * b.w + dx;
  b.y = gt.cy() - 0.5 * b.h + dy;
  return b;
}

TrainCrops make_crops(const FramePair& tmpl_frame, const Box& tmpl_gt,
                      const FramePair& search_frame, const Box& search_gt, Rng& rng,
                      const Config& cfg) {
  TrainCrops crops;
  const CropPair z = crop_window(tmpl_frame, tmpl_gt, cfg.template_factor, cfg.template_size);
  crops.z_v = normalize_crop(z.visible, cfg);
  crops.z_t = normalize_crop(z.infrared, cfg);

  // The search window centers on a jittered copy of the annotation so the
  // target lands away from the crop center, as it would at inference.
  const double side = cfg.search_factor * std::sqrt(search_gt.w * search_gt.h);
  const Box center = jittered(search_gt, cfg.jitter_shift, cfg.jitter_scale, side, rng);
  const CropPair x = crop_window(search_frame, center, cfg.search_factor, cfg.search_size);
  crops.x_v = normalize_crop(x.visible, cfg);
  crops.x_t = normalize_crop(x.infrared, cfg);
  crops.gt_in_crop = x.mapping.to_crop(search_gt);
  return crops;
}

bool gt_center_inside(const Box& gt_in_crop, double crop_px) {
  const double cx = gt_in_crop.cx(), cy = gt_in_crop.cy();
  return cx >= 0.0 && cy >= 0.0 && cx < crop_px && cy < crop_px && gt_in_crop.w > 0.0 &&
         gt_in_crop.h > 0.0;
}

}  // namespace

std::optional<TrainSample> sample_pairs(const SequenceDir& seq, Rng& rng, const Config& cfg) {
  if (seq.size() < 4) return std::nullopt;
  const auto frames = pick_frames(seq.size(), cfg.t_window, rng);
  const auto& gt = seq.groundtruth();
  for (std::size_t f : frames) {
    if (gt[f].area() <= 0.0) return std::nullopt;
  }
  TrainSample sample;
  sample.s = make_crops(load_frame_pair(seq, frames[0]), gt[frames[0]],
                        load_frame_pair(seq, frames[1]), gt[frames[1]], rng, cfg);
  sample.t = make_crops(load_frame_pair(seq, frames[2]), gt[frames[2]],
                        load_frame_pair(seq, frames[3]), gt[frames[3]], rng, cfg);
  if (!gt_center_inside(sample.s.gt_in_crop, static_cast<double>(cfg.search_size))) {
    return std::nullopt;
  }
  return sample;
}

namespace {

std::map<std::size_t, CacheEntry> simulate_impl(const TrainCrops& t, const ModelParams& params,
                                                const Config& cfg) {
  const TokenSeq z_v = embed(t.z_v, Role::Template, params.embed);
  const TokenSeq z_t = embed(t.z_t, Role::Template, params.embed);
  const TokenSeq x_v = embed(t.x_v, Role::Search, params.embed);
  const TokenSeq x_t = embed(t.x_t, Role::Search, params.embed);
  const TokenSeq joint_v = join_tokens(z_v, x_v);
  const TokenSeq joint_t = join_tokens(z_t, x_t);
  const std::size_t n_z = z_v.len();

  StmtConfig stmt_cfg = params.stmt_config(cfg);
  stmt_cfg.enable_dynamic_tokens = false;  // the T pass has no cache of its own

  BackboneOptions opt;
  opt.heads = cfg.num_heads;
  opt.hook_layers = cfg.insert_layers;
  opt.stage_layers = cfg.insert_layers;
  opt.hook = [&](std::size_t layer, Tensor& h_v, Tensor& h_t, std::size_t nz) {
    auto [nv, nt] = stmt_forward(h_v, h_t, nz, nullptr, stmt_cfg, layer,
                                 params.stmt_layers.at(layer));
    h_v = std::move(nv);
    h_t = std::move(nt);
  };
  const BackboneOutputs out = run_backbone(joint_v.tokens, joint_t.tokens, n_z, params.layers, opt);

  // The template-part tokens at each insertion layer stand in for the
  // inference-time dynamic tokens (they are template-sized by construction).
  std::map<std::size_t, CacheEntry> staged;
  for (const auto& [layer, joint] : out.staged) {
    staged.emplace(layer, CacheEntry{slice_rows(joint.h_v, 0, n_z),
                                     slice_rows(joint.h_t, 0, n_z)});
  }
  return staged;
}

}  // namespace

std::map<std::size_t, CacheEntry> simulate_dynamic_tokens(const TrainCrops& t,
                                                          const ModelParams& params,
                                                          const Config& cfg) {
  if (cfg.detach_dynamic) {
    NoGradGuard no_grad;
    return simulate_impl(t, params, cfg);
  }
  return simulate_impl(t, params, cfg);
}

Tensor compute_loss(const HeadOutputs& out, const Box& gt_in_crop, Grid search_grid,
                    double crop_px, const Config& cfg) {
  if (!gt_center_inside(gt_in_crop, crop_px)) {
    throw std::invalid_argument("compute_loss: annotation lies outside the search crop");
  }
  const std::size_t n = search_grid.count();
  const double cell_w = crop_px / static_cast<double>(search_grid.cols);
  const double cell_h = crop_px / static_cast<double>(search_grid.rows);
  const double u = gt_in_crop.cx() / cell_w;  // center in cell units
  const double v = gt_in_crop.cy() / cell_h;
  const auto col = std::min(static_cast<std::size_t>(u), search_grid.cols - 1);
  const auto row = std::min(static_cast<std::size_t>(v), search_grid.rows - 1);
  const std::size_t cell = row * search_grid.cols + col;

  // Gaussian bump centered on the target cell.
  std::vector<double> target(n);
  const double inv_two_sigma2 = 1.0 / (2.0 * cfg.score_sigma * cfg.score_sigma);
  for (std::size_t i = 0; i < n; ++i) {
    const double dr = static_cast<double>(i / search_grid.cols) - static_cast<double>(row);
    const double dc = static_cast<double>(i % search_grid.cols) - static_cast<double>(col);
    target[i] = std::exp(-(dr * dr + dc * dc) * inv_two_sigma2);
  }
  const Tensor cls_loss =
      bce_with_logits_mean(out.score_logits, Tensor::from_data({n, 1}, std::move(target)));

  const std::vector<std::size_t> idx{cell};
  const Tensor pred_offset = add(sigmoid(gather_rows(out.offset_logits, idx)),
                                 Tensor::full({1, 2}, -0.5));
  const Tensor offset_target = Tensor::from_data(
      {1, 2}, {u - (static_cast<double>(col) + 0.5), v - (static_cast<double>(row) + 0.5)});
  const Tensor offset_loss = l1_mean(pred_offset, offset_target);

  const Tensor pred_size = sigmoid(gather_rows(out.size_logits, idx));
  const Tensor size_target =
      Tensor::from_data({1, 2}, {gt_in_crop.w / crop_px, gt_in_crop.h / crop_px});
  const Tensor size_loss = l1_mean(pred_size, size_target);

  return add(scale(cls_loss, cfg.loss_cls_weight),
             add(scale(offset_loss, cfg.loss_offset_weight),
                 scale(size_loss, cfg.loss_size_weight)));
}

double group_lr_factor(const std::string& param_name, const Config& cfg) {
  if (param_name.rfind("stmt.", 0) == 0) return 1.0;
  if (param_name.rfind("head.", 0) == 0) return cfg.head_lr_factor;
  return cfg.backbone_lr_factor;  // embed.* and layers.*
}

AdamW::AdamW(const std::vector<NamedParam>& params, const Config& cfg)
    : weight_decay_(cfg.weight_decay) {
  slots_.reserve(params.size());
  for (const auto& p : params) {
    Slot s;
    s.m.assign(p.tensor.numel(), 0.0);
    s.v.assign(p.tensor.numel(), 0.0);
    s.lr_factor = group_lr_factor(p.name, cfg);
    // Decay only projection weights; biases, norms, and position tables are
    // left unregularized.
    s.decay = p.name.size() >= 7 && p.name.rfind(".weight") == p.name.size() - 7;
    slots_.push_back(std::move(s));
  }
}

void AdamW::step(const std::vector<NamedParam>& params, double base_lr) {
  if (params.size() != slots_.size()) {
    throw std::invalid_argument("optimizer: parameter list changed size");
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++step_count_;
  const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_count_));
  const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    if (!t.has_grad()) {
      throw std::invalid_argument("optimizer: parameter '" + params[i].name + "' has no gradient");
    }
    const auto g = t.grad();
    auto w = t.values_mut();
    Slot& s = slots_[i];
    const double lr = base_lr * s.lr_factor;
    for (std::size_t j = 0; j < w.size(); ++j) {
      s.m[j] = kBeta1 * s.m[j] + (1.0 - kBeta1) * g[j];
      s.v[j] = kBeta2 * s.v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double m_hat = s.m[j] / bias1;
      const double v_hat = s.v[j] / bias2;
      if (s.decay) w[j] -= lr * weight_decay_ * w[j];
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + kEps);
    }
  }
}

Tensor training_loss(const TrainSample& sample, const ModelParams& params, const Config& cfg) {
  const auto simulated = cfg.enable_dynamic_tokens
                             ? simulate_dynamic_tokens(sample.t, params, cfg)
                             : std::map<std::size_t, CacheEntry>{};

  const TokenSeq z_v = embed(sample.s.z_v, Role::Template, params.embed);
  const TokenSeq z_t = embed(sample.s.z_t, Role::Template, params.embed);
  const TokenSeq x_v = embed(sample.s.x_v, Role::Search, params.embed);
  const TokenSeq x_t = embed(sample.s.x_t, Role::Search, params.embed);
  const TokenSeq joint_v = join_tokens(z_v, x_v);
  const TokenSeq joint_t = join_tokens(z_t, x_t);
  const std::size_t n_z = z_v.len();

  const StmtConfig stmt_cfg = params.stmt_config(cfg);
  BackboneOptions opt;
  opt.heads = cfg.num_heads;
  opt.hook_layers = cfg.insert_layers;
  opt.hook = [&](std::size_t layer, Tensor& h_v, Tensor& h_t, std::size_t nz) {
    const CacheEntry* entry = nullptr;
    const auto it = simulated.find(layer);
    if (it != simulated.end()) entry = &it->second;
    auto [nv, nt] = stmt_forward(h_v, h_t, nz, entry, stmt_cfg, layer,
                                 params.stmt_layers.at(layer));
    h_v = std::move(nv);
    h_t = std::move(nt);
  };
  opt.enable_elimination = cfg.enable_elimination;
  opt.keep_rate = cfg.keep_rate;
  if (cfg.enable_elimination) opt.elimination_layers = cfg.insert_layers;
  const BackboneOutputs out =
      run_backbone(joint_v.tokens, joint_t.tokens, n_z, params.layers, opt);
  const Tensor search_v =
      restore_tokens(slice_rows(out.h_v, n_z, out.h_v.dim(0)), out.final_record_v);
  const Tensor search_t =
      restore_tokens(slice_rows(out.h_t, n_z, out.h_t.dim(0)), out.final_record_t);
  const HeadOutputs head = head_forward(search_v, search_t, params.head);
  return compute_loss(head, sample.s.gt_in_crop, cfg.search_grid(),
                      static_cast<double>(cfg.search_size), cfg);
}

double train_step(const std::vector<TrainSample>& batch, ModelParams& params, AdamW& opt,
                  std::size_t step_index, const Config& cfg) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  Tensor total;
  for (const TrainSample& sample : batch) {
    const Tensor loss = training_loss(sample, params, cfg);
    total = total.defined() ? add(total, loss) : loss;
  }
  const Tensor mean_loss = scale(total, 1.0 / static_cast<double>(batch.size()));
  const double value = mean_loss.scalar();
  if (!std::isfinite(value)) {
    throw std::runtime_error("train_step: non-finite loss at step " +
                             std::to_string(step_index));
  }

  auto named = params.named_params();
  for (auto& p : named) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  backward(mean_loss);

  // Single 10x decay once a third of the schedule has elapsed.
  const std::size_t decay_at = std::max<std::size_t>(1, cfg.train_steps / 3);
  const double lr = cfg.module_lr * (step_index >= decay_at ? 0.1 : 1.0);
  opt.step(named, lr);
  return value;
}

TrainLog train(ModelParams& params, const std::vector<SequenceDir>& dataset, const Config& cfg,
               const std::string& out_dir) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  fs::create_directories(out_dir);
  params.set_trainable();
  auto named = params.named_params();
  AdamW opt(named, cfg);
  Rng rng(cfg.seed);

  TrainLog log;
  std::string loss_csv = "step,loss\n";
  char buf[64];
  for (std::size_t step = 0; step < cfg.train_steps; ++step) {
    std::vector<TrainSample> batch;
    while (batch.size() < cfg.batch_size) {
      const auto& seq = dataset[rng.uniform_int(dataset.size())];
      auto sample = sample_pairs(seq, rng, cfg);
      if (sample) batch.push_back(std::move(*sample));
    }
    const double loss = train_step(batch, params, opt, step, cfg);
    log.losses.push_back(loss);
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", step, loss);
    loss_csv += buf;

    const bool last = step + 1 == cfg.train_steps;
    if (last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)) {
      const std::string name =
          last ? "checkpoint_final.stmt" : "checkpoint_" + std::to_string(step + 1) + ".stmt";
      const std::string path = (fs::path(out_dir) / name).string();
      save_model(path, params);
      log.checkpoints.push_back(path);
    }
  }
  write_file_atomic((fs::path(out_dir) / "loss.csv").string(), loss_csv);
  return log;
}

}  // namespace stmt
