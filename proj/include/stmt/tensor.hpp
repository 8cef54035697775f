#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stmt/rng.hpp"

namespace stmt {

using Shape = std::vector<std::size_t>;

namespace detail {
struct TensorImpl;
}

// Dense row-major f64 tensor with optional reverse-mode gradient tape
// participation. Value-like handle: copies share storage, ops allocate fresh
// outputs. Every op validates that its result is finite.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor randn(Rng& rng, Shape shape, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape()[i]; }
  std::size_t numel() const;
  bool is_scalar() const { return numel() == 1; }
  double scalar() const;

  std::span<const double> values() const;
  // Direct mutation; only valid for leaf tensors (parameters, buffers).
  std::span<double> values_mut();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool enabled);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Value copy that does not participate in any tape.
  Tensor detach() const;
  // Same storage reinterpreted with a new shape (numel must match).
  Tensor reshaped(Shape new_shape) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Disables tape recording for the current thread while alive.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], optional (undefined handle means no bias)

  static LinearParams init(Rng& rng, std::size_t in, std::size_t out, double stddev = 0.02,
                           bool with_bias = true);
  static LinearParams zeros(std::size_t in, std::size_t out, bool with_bias = true);
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

struct MlpParams {
  LinearParams fc1;
  LinearParams fc2;

  static MlpParams init(Rng& rng, std::size_t dim, double hidden_ratio, double stddev = 0.02);
};

struct LayerNormParams {
  Tensor gamma;  // [D]
  Tensor beta;   // [D]

  static LayerNormParams init(std::size_t dim);
};

// ---- ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [N,K]x[K,M] -> [N,M]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [N,K]x[M,K] -> [N,M] = a.b^T
Tensor linear(const Tensor& x, const LinearParams& p);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor layer_norm(const Tensor& x, const LayerNormParams& p, double eps = 1e-6);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor mlp_block(const Tensor& x, const MlpParams& p);
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t out_len);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// Numerically stable mean binary cross-entropy of sigmoid(logits) vs targets.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets);
Tensor l1_mean(const Tensor& pred, const Tensor& target);

// Reverse-mode pass from a scalar loss. Gradients accumulate into the `grad`
// buffers of every requires-grad tensor reachable from `loss`; the tape is
// freed afterwards.
void backward(const Tensor& loss);

// ---- gradient checking ---------------------------------------------------

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double step = 1e-5;
  // When the total parameter count exceeds this, check a random sample of
  // coordinates per tensor instead of every coordinate.
  std::size_t exhaustive_limit = 10000;
  std::size_t sample_per_tensor = 24;
  std::uint64_t sample_seed = 7;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central-difference comparison of analytic gradients for a deterministic
// scalar-valued forward function. Relative error uses
// |fd - an| / max(|fd|, |an|, 1e-2) so near-zero gradients are judged on an
// absolute scale.
GradCheckResult grad_check(const std::function<Tensor()>& forward,
                           const std::vector<NamedParam>& params,
                           const GradCheckOptions& opt = {});

}  // namespace stmt
