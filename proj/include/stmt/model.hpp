#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "stmt/config.hpp"
#include "stmt/encoder.hpp"
#include "stmt/head.hpp"
#include "stmt/stmt_module.hpp"
#include "stmt/tensor.hpp"
#include "stmt/tokens.hpp"

namespace stmt {

// Complete parameter set: patch embedding, shared-modality encoder stack,
// per-insertion-layer token modules, prediction heads.
struct ModelParams {
  EmbedParams embed;
  std::vector<EncoderLayerParams> layers;
  std::map<std::size_t, StmtLayerParams> stmt_layers;  // keyed by 1-based layer
  HeadParams head;

  static ModelParams init(Rng& rng, const Config& cfg);

  // Deterministic flat listing: embed.*, layers.N.*, stmt.L.*, head.*.
  std::vector<NamedParam> named_params() const;

  // Marks every parameter as trainable and clears gradients.
  void set_trainable();

  StmtConfig stmt_config(const Config& cfg) const;
};

void save_model(const std::string& path, const ModelParams& params);
// Loads by name into an already-initialized model; shape or name mismatches
// throw std::runtime_error.
void load_model(const std::string& path, ModelParams& params);

}  // namespace stmt
