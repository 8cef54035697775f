#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "stmt/tensor.hpp"
#include "stmt/tokens.hpp"

namespace stmt {

// Multi-head attention projections; wq/wk/wv/wo are all [D, D] with bias.
struct AttentionParams {
  LinearParams wq, wk, wv, wo;

  static AttentionParams init(Rng& rng, std::size_t dim, double stddev = 0.02);
};

// Pre-norm transformer block: h + Attn(LN(h)), then + MLP(LN(.)).
struct EncoderLayerParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  MlpParams mlp;

  static EncoderLayerParams init(Rng& rng, std::size_t dim, double mlp_ratio,
                                 double stddev = 0.02);
};

// Multi-head attention over already-normalized inputs. When probs_out is
// non-null it receives the head-averaged attention matrix [Nq, Nk] as a
// detached tensor (used for relevance scoring, not for gradients).
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p,
                            std::size_t heads, Tensor* probs_out = nullptr);

Tensor encoder_layer(const Tensor& h, const EncoderLayerParams& p, std::size_t heads,
                     Tensor* probs_out = nullptr);

// Which search tokens survived an elimination step, by position in the
// sequence that entered the step.
struct EliminationRecord {
  std::size_t layer_index = 0;
  std::vector<std::size_t> kept_indices;  // strictly increasing
  std::size_t original_len = 0;
};

// Drops low-relevance search tokens from a joint sequence, keeping
// ceil(keep_rate * N_search) of them. Relevance is the mean attention each
// search token receives from all template tokens (head-averaged); ties keep
// the lower index. Template tokens always survive.
std::pair<Tensor, EliminationRecord> eliminate(const Tensor& joint, std::size_t n_z,
                                               double keep_rate, const Tensor& attn_probs,
                                               std::size_t layer_index);

// Callback invoked after selected layers; may rewrite both joint sequences
// in place. n_z_current is the template length (never eliminated).
using LayerHook =
    std::function<void(std::size_t layer_index, Tensor& h_v, Tensor& h_t, std::size_t n_z)>;

struct BackboneOptions {
  std::size_t heads = 4;
  bool enable_elimination = false;
  double keep_rate = 0.7;
  std::set<std::size_t> elimination_layers;  // 1-indexed, applied after the layer
  std::set<std::size_t> hook_layers;         // 1-indexed, invoked after the layer
  LayerHook hook;                            // may be empty
  std::set<std::size_t> stage_layers;        // layers whose pre-hook joints are captured
};

// Snapshot of both modality streams taken right after a backbone layer (and
// any elimination), before the layer hook runs.
struct StagedJoint {
  Tensor h_v, h_t;              // joint sequences as of that layer
  EliminationRecord record_v;   // cumulative map: current positions -> original
  EliminationRecord record_t;
};

struct BackboneOutputs {
  Tensor h_v, h_t;  // final joint sequences
  std::map<std::size_t, StagedJoint> staged;
  EliminationRecord final_record_v, final_record_t;  // cumulative at the output
};

// Runs the shared-parameter layer stack over both modality streams.
// Layer indices are 1-based; hooks/staging/elimination happen after the
// named layer. Indices must be < layer count.
BackboneOutputs run_backbone(const Tensor& joint_v, const Tensor& joint_t, std::size_t n_z,
                             const std::vector<EncoderLayerParams>& layers,
                             const BackboneOptions& opt);

}  // namespace stmt
