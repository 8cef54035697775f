#include "stmt/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

#include "stmt/checkpoint.hpp"

namespace stmt {

namespace {

void collect_linear(std::vector<NamedParam>& out, const std::string& prefix,
                    const LinearParams& p) {
  out.push_back({prefix + ".weight", p.weight});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias});
}

void collect_norm(std::vector<NamedParam>& out, const std::string& prefix,
                  const LayerNormParams& p) {
  out.push_back({prefix + ".gamma", p.gamma});
  out.push_back({prefix + ".beta", p.beta});
}

void collect_mlp(std::vector<NamedParam>& out, const std::string& prefix, const MlpParams& p) {
  collect_linear(out, prefix + ".fc1", p.fc1);
  collect_linear(out, prefix + ".fc2", p.fc2);
}

void collect_attention(std::vector<NamedParam>& out, const std::string& prefix,
                       const AttentionParams& p) {
  collect_linear(out, prefix + ".wq", p.wq);
  collect_linear(out, prefix + ".wk", p.wk);
  collect_linear(out, prefix + ".wv", p.wv);
  collect_linear(out, prefix + ".wo", p.wo);
}

void collect_cross_block(std::vector<NamedParam>& out, const std::string& prefix,
                         const CrossBlockParams& p) {
  collect_attention(out, prefix + ".attn", p.attn);
  collect_norm(out, prefix + ".ln", p.ln);
  collect_mlp(out, prefix + ".mlp", p.mlp);
}

void collect_pointwise(std::vector<NamedParam>& out, const std::string& prefix,
                       const PointwiseHead& p) {
  collect_linear(out, prefix + ".fc1", p.fc1);
  collect_linear(out, prefix + ".fc2", p.fc2);
}

}  // namespace

ModelParams ModelParams::init(Rng& rng, const Config& cfg) {
  cfg.validate();
  ModelParams m;
  m.embed = EmbedParams::init(rng, cfg.patch_size, cfg.template_size, cfg.search_size,
                              cfg.embed_dim);
  m.layers.reserve(cfg.depth);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    m.layers.push_back(EncoderLayerParams::init(rng, cfg.embed_dim, cfg.mlp_ratio));
  }
  for (std::size_t layer : cfg.insert_layers) {
    StmtLayerParams sp;
    if (cfg.enable_modality_enhancement) {
      sp.ca_template = CrossBlockParams::init(rng, cfg.embed_dim, cfg.mlp_ratio);
    }
    if (cfg.enable_dynamic_tokens && cfg.tf_layers.count(layer) != 0) {
      if (cfg.enable_modality_enhancement && !cfg.tie_dynamic_ca) {
        sp.ca_dynamic = CrossBlockParams::init(rng, cfg.embed_dim, cfg.mlp_ratio);
      }
      sp.tf = CrossBlockParams::init(rng, cfg.embed_dim, cfg.mlp_ratio);
    }
    m.stmt_layers.emplace(layer, std::move(sp));
  }
  m.head = HeadParams::init(rng, cfg.embed_dim, 2 * cfg.embed_dim);
  return m;
}

std::vector<NamedParam> ModelParams::named_params() const {
  std::vector<NamedParam> out;
  collect_linear(out, "embed.patch_proj", embed.patch_proj);
  out.push_back({"embed.pos_template", embed.pos_template});
  out.push_back({"embed.pos_search", embed.pos_search});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i);
    collect_norm(out, prefix + ".ln1", layers[i].ln1);
    collect_attention(out, prefix + ".attn", layers[i].attn);
    collect_norm(out, prefix + ".ln2", layers[i].ln2);
    collect_mlp(out, prefix + ".mlp", layers[i].mlp);
  }
  for (const auto& [layer, sp] : stmt_layers) {
    const std::string prefix = "stmt." + std::to_string(layer);
    if (sp.ca_template) collect_cross_block(out, prefix + ".ca_template", *sp.ca_template);
    if (sp.ca_dynamic) collect_cross_block(out, prefix + ".ca_dynamic", *sp.ca_dynamic);
    if (sp.tf) collect_cross_block(out, prefix + ".tf", *sp.tf);
  }
  collect_pointwise(out, "head.score", head.score);
  collect_pointwise(out, "head.offset", head.offset);
  collect_pointwise(out, "head.size", head.size);
  return out;
}

void ModelParams::set_trainable() {
  for (auto& p : named_params()) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }
}

StmtConfig ModelParams::stmt_config(const Config& cfg) const {
  StmtConfig sc;
  sc.insert_layers = cfg.insert_layers;
  sc.tf_layers = cfg.tf_layers;
  sc.enable_modality_enhancement = cfg.enable_modality_enhancement;
  sc.enable_dynamic_tokens = cfg.enable_dynamic_tokens;
  sc.tie_dynamic_ca = cfg.tie_dynamic_ca;
  sc.heads = cfg.num_heads;
  sc.validate();
  return sc;
}

void save_model(const std::string& path, const ModelParams& params) {
  save_checkpoint(path, params.named_params());
}

void load_model(const std::string& path, ModelParams& params) {
  const std::vector<NamedParam> stored = load_checkpoint(path);
  std::unordered_map<std::string, const NamedParam*> by_name;
  for (const auto& e : stored) by_name.emplace(e.name, &e);

  std::vector<NamedParam> live = params.named_params();
  if (live.size() != stored.size()) {
    throw std::runtime_error("load_model: checkpoint has " + std::to_string(stored.size()) +
                             " entries, model expects " + std::to_string(live.size()));
  }
  for (auto& p : live) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw std::runtime_error("load_model: checkpoint is missing '" + p.name + "'");
    }
    const Tensor& src = it->second->tensor;
    if (src.shape() != p.tensor.shape()) {
      throw std::runtime_error("load_model: shape mismatch for '" + p.name + "'");
    }
    Tensor dst = p.tensor;
    std::copy(src.values().begin(), src.values().end(), dst.values_mut().begin());
  }
}

}  // namespace stmt
