#include "stmt/stmt_module.hpp"

#include <stdexcept>

namespace stmt {

CrossBlockParams CrossBlockParams::init(Rng& rng, std::size_t dim, double mlp_ratio,
                                        double stddev) {
  CrossBlockParams p;
  p.attn = AttentionParams::init(rng, dim, stddev);
  p.ln = LayerNormParams::init(dim);
  p.mlp = MlpParams::init(rng, dim, mlp_ratio, stddev);
  return p;
}

void StmtConfig::validate() const {
  for (std::size_t layer : tf_layers) {
    if (insert_layers.count(layer) == 0) {
      throw std::invalid_argument("stmt config: tf layer " + std::to_string(layer) +
                                  " is not an insertion layer");
    }
  }
}

Tensor cross_block(const Tensor& q, const Tensor& kv, const CrossBlockParams& p,
                   std::size_t heads) {
  if (q.dim(1) != kv.dim(1)) {
    throw std::invalid_argument("cross_block: query/key dimensions differ");
  }
  const Tensor enhanced = add(q, multi_head_attention(q, kv, p.attn, heads));
  return add(enhanced, mlp_block(layer_norm(enhanced, p.ln), p.mlp));
}

TokenSeq ca(const TokenSeq& q_seq, const TokenSeq& kv_seq, const CrossBlockParams& p,
            std::size_t heads) {
  if (q_seq.dim() != kv_seq.dim()) {
    throw std::invalid_argument("ca: embedding dimensions differ");
  }
  TokenSeq out = q_seq;
  out.tokens = cross_block(q_seq.tokens, kv_seq.tokens, p, heads);
  return out;
}

TokenSeq tf(const TokenSeq& x_seq, const TokenSeq& m_seq, const CrossBlockParams& p,
            std::size_t heads) {
  if (x_seq.role != Role::Search || m_seq.role != Role::Dynamic) {
    throw std::invalid_argument("tf: expected (search, dynamic) roles");
  }
  if (x_seq.modality != m_seq.modality) {
    throw std::invalid_argument("tf: modality mismatch");
  }
  TokenSeq out = x_seq;
  out.tokens = cross_block(x_seq.tokens, m_seq.tokens, p, heads);
  return out;
}

std::pair<Tensor, Tensor> stmt_forward(const Tensor& h_v, const Tensor& h_t, std::size_t n_z,
                                       const CacheEntry* cache, const StmtConfig& cfg,
                                       std::size_t layer_index, const StmtLayerParams& params) {
  if (h_v.shape() != h_t.shape()) {
    throw std::invalid_argument("stmt_forward: modality streams must share one layout");
  }
  const std::size_t n = h_v.dim(0);
  if (n_z >= n) {
    throw std::invalid_argument("stmt_forward: template length must be smaller than the joint");
  }
  const bool use_tf = cfg.enable_dynamic_tokens && cfg.tf_layers.count(layer_index) != 0;
  if (use_tf && cache == nullptr) {
    throw std::invalid_argument("stmt_forward: temporal fusion enabled but no cache entry");
  }
  if (!cfg.enable_modality_enhancement && !cfg.enable_dynamic_tokens) {
    return {h_v, h_t};
  }

  Tensor z_v = slice_rows(h_v, 0, n_z);
  Tensor x_v = slice_rows(h_v, n_z, n);
  Tensor z_t = slice_rows(h_t, 0, n_z);
  Tensor x_t = slice_rows(h_t, n_z, n);

  if (cfg.enable_modality_enhancement) {
    if (!params.ca_template) {
      throw std::invalid_argument("stmt_forward: modality enhancement lacks parameters");
    }
    // One parameter set, both directions.
    Tensor zv_new = cross_block(z_v, z_t, *params.ca_template, cfg.heads);
    Tensor zt_new = cross_block(z_t, z_v, *params.ca_template, cfg.heads);
    z_v = std::move(zv_new);
    z_t = std::move(zt_new);
  }

  if (use_tf) {
    Tensor m_v = cache->m_v;
    Tensor m_t = cache->m_t;
    if (cfg.enable_modality_enhancement) {
      const auto& ca_dyn_opt = cfg.tie_dynamic_ca ? params.ca_template : params.ca_dynamic;
      if (!ca_dyn_opt) {
        throw std::invalid_argument("stmt_forward: dynamic enhancement lacks parameters");
      }
      const CrossBlockParams& ca_dyn = *ca_dyn_opt;
      Tensor mv_new = cross_block(m_v, m_t, ca_dyn, cfg.heads);
      Tensor mt_new = cross_block(m_t, m_v, ca_dyn, cfg.heads);
      m_v = std::move(mv_new);
      m_t = std::move(mt_new);
    }
    if (!params.tf) {
      throw std::invalid_argument("stmt_forward: temporal fusion lacks parameters");
    }
    x_v = cross_block(x_v, m_v, *params.tf, cfg.heads);
    x_t = cross_block(x_t, m_t, *params.tf, cfg.heads);
  }

  return {concat_rows(z_v, x_v), concat_rows(z_t, x_t)};
}

}  // namespace stmt
