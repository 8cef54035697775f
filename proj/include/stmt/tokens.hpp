#pragma once

#include <cstddef>
#include <utility>

#include "stmt/tensor.hpp"

namespace stmt {

enum class Modality { RGB, TIR };
enum class Role { Template, Search, Dynamic, Joint };

// Spatial layout of a token sequence (row-major patch order).
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t count() const { return rows * cols; }
  bool operator==(const Grid&) const = default;
};

// Image crop prepared for the patch embedding: [H, W, 3] values. TIR inputs
// are stored with their single channel replicated to 3 so one patch
// projection serves both modalities. Values are normalized model inputs.
struct ModalImage {
  Tensor pixels;  // [H, W, 3]
  Modality modality = Modality::RGB;

  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }
};

// A run of embedding-dimension tokens with its provenance.
struct TokenSeq {
  Tensor tokens;  // [N, D]
  Role role = Role::Template;
  Modality modality = Modality::RGB;
  Grid grid;

  std::size_t len() const { return tokens.dim(0); }
  std::size_t dim() const { return tokens.dim(1); }
};

// Patch projection and position embeddings. A single instance serves both
// modalities (the projection and both position tables are shared).
struct EmbedParams {
  LinearParams patch_proj;  // [3*P*P, D]
  Tensor pos_template;      // [N_z, D]
  Tensor pos_search;        // [N_x, D]
  std::size_t patch_size = 16;
  Grid template_grid;
  Grid search_grid;

  static EmbedParams init(Rng& rng, std::size_t patch_size, std::size_t template_px,
                          std::size_t search_px, std::size_t embed_dim, double stddev = 0.02);
};

// Splits an image into non-overlapping P x P patches, row-major, each
// flattened to a 3*P*P row (y-major, then x, then channel).
Tensor patchify(const ModalImage& img, std::size_t patch_size);

// patchify + patch projection + role-selected position embedding.
TokenSeq embed(const ModalImage& img, Role role, const EmbedParams& params);

// Concatenates template tokens before search tokens into a joint sequence.
TokenSeq join_tokens(const TokenSeq& z, const TokenSeq& x);

// Inverse of join_tokens given the template length and the two layouts.
std::pair<TokenSeq, TokenSeq> split_tokens(const TokenSeq& joint, std::size_t n_z, Grid z_grid,
                                           Grid x_grid);

// Converts a raw 8-bit channel value in [0,255] to the model input range.
inline double normalize_pixel(double byte_value, double mean, double stddev) {
  return (byte_value / 255.0 - mean) / stddev;
}

}  // namespace stmt
