#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <utility>

#include "stmt/encoder.hpp"
#include "stmt/tensor.hpp"
#include "stmt/tokens.hpp"

namespace stmt {

// One cross-attention block: queries attend over keys/values, projected
// output is added residually, then refined by MLP(LN(.)).
struct CrossBlockParams {
  AttentionParams attn;
  LayerNormParams ln;
  MlpParams mlp;

  static CrossBlockParams init(Rng& rng, std::size_t dim, double mlp_ratio,
                               double stddev = 0.02);
};

// Parameters for one insertion layer. ca_template serves BOTH modality
// directions (one set, two calls). ca_dynamic/tf exist only where the
// dynamic-token path is active at that layer.
struct StmtLayerParams {
  std::optional<CrossBlockParams> ca_template;
  std::optional<CrossBlockParams> ca_dynamic;
  std::optional<CrossBlockParams> tf;
};

struct StmtConfig {
  std::set<std::size_t> insert_layers;  // 1-indexed backbone layers
  std::set<std::size_t> tf_layers;      // subset of insert_layers
  bool enable_modality_enhancement = true;
  bool enable_dynamic_tokens = true;
  bool tie_dynamic_ca = false;  // reuse ca_template weights for ca_dynamic
  std::size_t heads = 4;

  void validate() const;
};

// Cached token pair consumed by the dynamic-token path at one layer.
struct CacheEntry {
  Tensor m_v, m_t;  // [N_z, D] each
};

// Core cross-attention block on raw (un-normalized) inputs:
//   g  = proj(softmax(q Wq (kv Wk)^T / sqrt(C)) kv Wv)
//   q' = q + g;  out = q' + MLP(LN(q'))
Tensor cross_block(const Tensor& q, const Tensor& kv, const CrossBlockParams& p,
                   std::size_t heads);

// Modality enhancement: q_seq attends over kv_seq with shared parameters.
TokenSeq ca(const TokenSeq& q_seq, const TokenSeq& kv_seq, const CrossBlockParams& p,
            std::size_t heads);

// Temporal fusion: search tokens query dynamic tokens of the same modality.
TokenSeq tf(const TokenSeq& x_seq, const TokenSeq& m_seq, const CrossBlockParams& p,
            std::size_t heads);

// Full module at one insertion layer: split both joints, cross-enhance
// template tokens, cross-enhance dynamic tokens, optionally fuse search
// tokens with the (enhanced) dynamic tokens, rejoin. `cache` may be null
// only while the dynamic-token path is disabled.
std::pair<Tensor, Tensor> stmt_forward(const Tensor& h_v, const Tensor& h_t, std::size_t n_z,
                                       const CacheEntry* cache, const StmtConfig& cfg,
                                       std::size_t layer_index, const StmtLayerParams& params);

}  // namespace stmt
