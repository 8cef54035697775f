#include "stmt/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stmt {

AttentionParams AttentionParams::init(Rng& rng, std::size_t dim, double stddev) {
  AttentionParams p;
  p.wq = LinearParams::init(rng, dim, dim, stddev);
  p.wk = LinearParams::init(rng, dim, dim, stddev);
  p.wv = LinearParams::init(rng, dim, dim, stddev);
  p.wo = LinearParams::init(rng, dim, dim, stddev);
  return p;
}

EncoderLayerParams EncoderLayerParams::init(Rng& rng, std::size_t dim, double mlp_ratio,
                                            double stddev) {
  EncoderLayerParams p;
  p.ln1 = LayerNormParams::init(dim);
  p.ln2 = LayerNormParams::init(dim);
  p.attn = AttentionParams::init(rng, dim, stddev);
  p.mlp = MlpParams::init(rng, dim, mlp_ratio, stddev);
  return p;
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p,
                            std::size_t heads, Tensor* probs_out) {
  const std::size_t d = q_in.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("attention: embed dim must be divisible by the head count");
  }
  if (kv_in.dim(1) != d) {
    throw std::invalid_argument("attention: query/key dimensions differ");
  }
  const std::size_t dh = d / heads;
  const Tensor q = linear(q_in, p.wq);
  const Tensor k = linear(kv_in, p.wk);
  const Tensor v = linear(kv_in, p.wv);

  Tensor probs_sum;
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
    const Tensor qh = slice_cols(q, c0, c1);
    const Tensor kh = slice_cols(k, c0, c1);
    const Tensor vh = slice_cols(v, c0, c1);
    const Tensor scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    const Tensor probs = softmax_rows(scores);
    head_outs.push_back(matmul(probs, vh));
    if (probs_out != nullptr) {
      Tensor detached = probs.detach();
      probs_sum = probs_sum.defined() ? add(probs_sum, detached) : detached;
    }
  }
  if (probs_out != nullptr) {
    NoGradGuard no_grad;
    *probs_out = scale(probs_sum, 1.0 / static_cast<double>(heads));
  }
  return linear(concat_cols(head_outs), p.wo);
}

Tensor encoder_layer(const Tensor& h, const EncoderLayerParams& p, std::size_t heads,
                     Tensor* probs_out) {
  const Tensor normed = layer_norm(h, p.ln1);
  const Tensor after_attn = add(h, multi_head_attention(normed, normed, p.attn, heads, probs_out));
  return add(after_attn, mlp_block(layer_norm(after_attn, p.ln2), p.mlp));
}

std::pair<Tensor, EliminationRecord> eliminate(const Tensor& joint, std::size_t n_z,
                                               double keep_rate, const Tensor& attn_probs,
                                               std::size_t layer_index) {
  if (keep_rate <= 0.0 || keep_rate > 1.0) {
    throw std::invalid_argument("eliminate: keep_rate must be in (0, 1]");
  }
  const std::size_t n = joint.dim(0);
  if (n_z >= n) {
    throw std::invalid_argument("eliminate: no search tokens present");
  }
  const std::size_t n_x = n - n_z;
  if (attn_probs.rank() != 2 || attn_probs.dim(0) != n || attn_probs.dim(1) != n) {
    throw std::invalid_argument("eliminate: attention matrix does not match the sequence");
  }
  const auto keep =
      static_cast<std::size_t>(std::ceil(keep_rate * static_cast<double>(n_x)));

  // Relevance of search token j: mean attention it receives from template
  // queries (rows 0..n_z, column n_z + j).
  std::vector<double> score(n_x, 0.0);
  const auto pv = attn_probs.values();
  for (std::size_t i = 0; i < n_z; ++i) {
    const double* row = pv.data() + i * n + n_z;
    for (std::size_t j = 0; j < n_x; ++j) score[j] += row[j];
  }

  std::vector<std::size_t> order(n_x);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());

  EliminationRecord rec{layer_index, order, n_x};
  if (keep == n_x) {
    return {joint, rec};
  }
  std::vector<std::size_t> joint_keep(n_z);
  std::iota(joint_keep.begin(), joint_keep.end(), 0);
  for (std::size_t j : order) joint_keep.push_back(n_z + j);
  return {gather_rows(joint, joint_keep), rec};
}

namespace {

// Maps a record whose indices refer to an already-shortened ordering back to
// the original ordering described by `base`.
EliminationRecord compose_records(const EliminationRecord& base, const EliminationRecord& next) {
  EliminationRecord out;
  out.layer_index = next.layer_index;
  out.original_len = base.original_len;
  out.kept_indices.reserve(next.kept_indices.size());
  for (std::size_t i : next.kept_indices) out.kept_indices.push_back(base.kept_indices[i]);
  return out;
}

EliminationRecord full_record(std::size_t n_x) {
  EliminationRecord rec;
  rec.original_len = n_x;
  rec.kept_indices.resize(n_x);
  std::iota(rec.kept_indices.begin(), rec.kept_indices.end(), 0);
  return rec;
}

}  // namespace

BackboneOutputs run_backbone(const Tensor& joint_v, const Tensor& joint_t, std::size_t n_z,
                             const std::vector<EncoderLayerParams>& layers,
                             const BackboneOptions& opt) {
  if (joint_v.shape() != joint_t.shape()) {
    throw std::invalid_argument("backbone: modality streams must share one layout");
  }
  const std::size_t depth = layers.size();
  for (const auto* indices : {&opt.hook_layers, &opt.stage_layers, &opt.elimination_layers}) {
    for (std::size_t idx : *indices) {
      if (idx == 0 || idx >= depth) {
        throw std::invalid_argument("backbone: layer index " + std::to_string(idx) +
                                    " outside [1, depth)");
      }
    }
  }

  BackboneOutputs out;
  out.h_v = joint_v;
  out.h_t = joint_t;
  const std::size_t n_x = joint_v.dim(0) - n_z;
  out.final_record_v = full_record(n_x);
  out.final_record_t = full_record(n_x);

  for (std::size_t layer = 1; layer <= depth; ++layer) {
    const bool want_probs = opt.enable_elimination && opt.elimination_layers.count(layer) != 0;
    Tensor probs_v, probs_t;
    out.h_v = encoder_layer(out.h_v, layers[layer - 1], opt.heads,
                            want_probs ? &probs_v : nullptr);
    out.h_t = encoder_layer(out.h_t, layers[layer - 1], opt.heads,
                            want_probs ? &probs_t : nullptr);
    if (want_probs) {
      auto [next_v, rec_v] = eliminate(out.h_v, n_z, opt.keep_rate, probs_v, layer);
      auto [next_t, rec_t] = eliminate(out.h_t, n_z, opt.keep_rate, probs_t, layer);
      out.h_v = next_v;
      out.h_t = next_t;
      out.final_record_v = compose_records(out.final_record_v, rec_v);
      out.final_record_t = compose_records(out.final_record_t, rec_t);
    }
    if (opt.stage_layers.count(layer) != 0) {
      StagedJoint staged;
      staged.h_v = out.h_v;
      staged.h_t = out.h_t;
      staged.record_v = out.final_record_v;
      staged.record_v.layer_index = layer;
      staged.record_t = out.final_record_t;
      staged.record_t.layer_index = layer;
      out.staged.emplace(layer, std::move(staged));
    }
    if (opt.hook && opt.hook_layers.count(layer) != 0) {
      opt.hook(layer, out.h_v, out.h_t, n_z);
    }
  }
  return out;
}

}  // namespace stmt
