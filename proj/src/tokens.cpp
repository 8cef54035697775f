#include "stmt/tokens.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace stmt {

EmbedParams EmbedParams::init(Rng& rng, std::size_t patch_size, std::size_t template_px,
                              std::size_t search_px, std::size_t embed_dim, double stddev) {
  if (patch_size == 0 || template_px % patch_size != 0 || search_px % patch_size != 0) {
    throw std::invalid_argument("embed: crop sizes must be positive multiples of the patch size");
  }
  EmbedParams p;
  p.patch_size = patch_size;
  p.template_grid = {template_px / patch_size, template_px / patch_size};
  p.search_grid = {search_px / patch_size, search_px / patch_size};
  p.patch_proj = LinearParams::init(rng, 3 * patch_size * patch_size, embed_dim, stddev);
  p.pos_template = Tensor::randn(rng, {p.template_grid.count(), embed_dim}, stddev);
  p.pos_search = Tensor::randn(rng, {p.search_grid.count(), embed_dim}, stddev);
  return p;
}

Tensor patchify(const ModalImage& img, std::size_t patch_size) {
  if (!img.pixels.defined() || img.pixels.rank() != 3 || img.pixels.dim(2) != 3) {
    throw std::invalid_argument("patchify: expected an [H, W, 3] image");
  }
  const std::size_t h = img.height(), w = img.width(), p = patch_size;
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw std::invalid_argument("patchify: image dimensions must be divisible by the patch size");
  }
  const std::size_t rows = h / p, cols = w / p, patch_len = 3 * p * p;
  std::vector<double> out(rows * cols * patch_len);
  const auto px = img.pixels.values();
  for (std::size_t py = 0; py < rows; ++py) {
    for (std::size_t pxi = 0; pxi < cols; ++pxi) {
      double* dst = out.data() + (py * cols + pxi) * patch_len;
      for (std::size_t dy = 0; dy < p; ++dy) {
        const std::size_t y = py * p + dy;
        const double* src = px.data() + (y * w + pxi * p) * 3;
        std::copy(src, src + p * 3, dst + dy * p * 3);
      }
    }
  }
  return Tensor::from_data({rows * cols, patch_len}, std::move(out));
}

TokenSeq embed(const ModalImage& img, Role role, const EmbedParams& params) {
  const Tensor* pos = nullptr;
  Grid grid;
  if (role == Role::Template) {
    pos = &params.pos_template;
    grid = params.template_grid;
  } else if (role == Role::Search) {
    pos = &params.pos_search;
    grid = params.search_grid;
  } else {
    throw std::invalid_argument("embed: role must be Template or Search");
  }
  const std::size_t p = params.patch_size;
  if (img.height() != grid.rows * p || img.width() != grid.cols * p) {
    throw std::invalid_argument("embed: image size does not match the role's crop size");
  }
  Tensor tokens = add(linear(patchify(img, p), params.patch_proj), *pos);
  return {std::move(tokens), role, img.modality, grid};
}

TokenSeq join_tokens(const TokenSeq& z, const TokenSeq& x) {
  if (z.modality != x.modality) {
    throw std::invalid_argument("join_tokens: modality mismatch");
  }
  if (z.role != Role::Template || x.role != Role::Search) {
    throw std::invalid_argument("join_tokens: expected a (template, search) pair");
  }
  if (z.dim() != x.dim()) {
    throw std::invalid_argument("join_tokens: embedding dimensions differ");
  }
  TokenSeq joint;
  joint.tokens = concat_rows(z.tokens, x.tokens);
  joint.role = Role::Joint;
  joint.modality = z.modality;
  joint.grid = {1, joint.tokens.dim(0)};
  return joint;
}

std::pair<TokenSeq, TokenSeq> split_tokens(const TokenSeq& joint, std::size_t n_z, Grid z_grid,
                                           Grid x_grid) {
  const std::size_t n = joint.len();
  if (n_z >= n) {
    throw std::invalid_argument("split_tokens: template length must be smaller than the joint");
  }
  if (z_grid.count() != n_z || x_grid.count() != n - n_z) {
    throw std::invalid_argument("split_tokens: grids do not match the split lengths");
  }
  TokenSeq z{slice_rows(joint.tokens, 0, n_z), Role::Template, joint.modality, z_grid};
  TokenSeq x{slice_rows(joint.tokens, n_z, n), Role::Search, joint.modality, x_grid};
  return {std::move(z), std::move(x)};
}

}  // namespace stmt
