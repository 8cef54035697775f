#include "stmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace stmt {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily; empty means all-zero
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::size_t numel() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

using detail::TensorImpl;

namespace {

thread_local int g_nograd_depth = 0;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

[[noreturn]] void shape_error(const std::string& msg) { throw std::invalid_argument(msg); }

void ensure_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
  }
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(data);
  return impl;
}

// Wires `out` into the tape when recording is active and any input needs
// gradients. `fn` accumulates into parent grad buffers.
Tensor finish_op(std::shared_ptr<TensorImpl> out, std::vector<std::shared_ptr<TensorImpl>> parents,
                 std::function<void(TensorImpl&)> fn, const char* op) {
  ensure_finite(out->value, op);
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
      out->requires_grad = true;
      out->parents = std::move(parents);
      out->backward_fn = std::move(fn);
    }
  }
  return Tensor(std::move(out));
}

void require_matrix(const Tensor& t, const char* who) {
  if (!t.defined() || t.rank() != 2) shape_error(std::string(who) + ": expected a rank-2 tensor");
}

// Raw kernels. C must be pre-sized; all accumulate (C += ...).
void matmul_nn_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[n,m] += A[n,k] . B[m,k]^T
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,m] += A[n,k]^T . B[n,m]
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

double gelu_forward(double x) {
  const double kC = 0.7978845608028654;  // sqrt(2/pi)
  const double kA = 0.044715;
  const double u = kC * (x + kA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double kC = 0.7978845608028654;
  const double kA = 0.044715;
  const double u = kC * (x + kA * x * x * x);
  const double t = std::tanh(u);
  const double sech2 = 1.0 - t * t;
  return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kC * (1.0 + 3.0 * kA * x * x);
}

double stable_sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    shape_error("from_data: shape does not match data length");
  }
  ensure_finite(data, "from_data");
  return Tensor(make_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::randn(Rng& rng, Shape shape, double stddev) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (double& v : data) v = rng.normal() * stddev;
  return Tensor(make_impl(std::move(shape), std::move(data)));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("shape() on undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->numel() : 0; }

double Tensor::scalar() const {
  if (!is_scalar()) throw std::invalid_argument("scalar() on non-scalar tensor");
  return impl_->value[0];
}

std::span<const double> Tensor::values() const {
  if (!impl_) throw std::logic_error("values() on undefined tensor");
  return impl_->value;
}

std::span<double> Tensor::values_mut() {
  if (!impl_) throw std::logic_error("values_mut() on undefined tensor");
  return impl_->value;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool enabled) {
  if (!impl_) throw std::logic_error("set_requires_grad() on undefined tensor");
  impl_->requires_grad = enabled;
  if (enabled) impl_->ensure_grad();
  return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("grad() requested but no gradient buffer present");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_) return;
  impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
  if (!impl_) return Tensor();
  return Tensor(make_impl(impl_->shape, impl_->value));
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (!impl_) throw std::logic_error("reshaped() on undefined tensor");
  if (shape_numel(new_shape) != numel()) shape_error("reshaped: numel mismatch");
  auto out = make_impl(std::move(new_shape), impl_->value);
  auto self = impl_;
  return finish_op(
      std::move(out), {self},
      [](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
      },
      "reshaped");
}

NoGradGuard::NoGradGuard() { ++g_nograd_depth; }
NoGradGuard::~NoGradGuard() { --g_nograd_depth; }

bool grad_enabled() { return g_nograd_depth == 0; }

// ---- parameter structs -----------------------------------------------------

LinearParams LinearParams::init(Rng& rng, std::size_t in, std::size_t out, double stddev,
                                bool with_bias) {
  LinearParams p;
  p.weight = Tensor::randn(rng, {in, out}, stddev);
  if (with_bias) p.bias = Tensor::zeros({out});
  return p;
}

LinearParams LinearParams::zeros(std::size_t in, std::size_t out, bool with_bias) {
  LinearParams p;
  p.weight = Tensor::zeros({in, out});
  if (with_bias) p.bias = Tensor::zeros({out});
  return p;
}

MlpParams MlpParams::init(Rng& rng, std::size_t dim, double hidden_ratio, double stddev) {
  const auto hidden = static_cast<std::size_t>(
      std::max(1.0, std::round(hidden_ratio * static_cast<double>(dim))));
  MlpParams p;
  p.fc1 = LinearParams::init(rng, dim, hidden, stddev);
  p.fc2 = LinearParams::init(rng, hidden, dim, stddev);
  return p;
}

LayerNormParams LayerNormParams::init(std::size_t dim) {
  LayerNormParams p;
  p.gamma = Tensor::full({dim}, 1.0);
  p.beta = Tensor::zeros({dim});
  return p;
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul: inner extents differ");
  auto out = make_impl({n, m}, std::vector<double>(n * m, 0.0));
  matmul_nn_acc(a.values().data(), b.values().data(), out->value.data(), n, k, m);
  return finish_op(
      std::move(out), {a.impl_ptr(), b.impl_ptr()},
      [n, k, m](TensorImpl& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          matmul_nt_acc(o.grad.data(), pb.value.data(), pa.grad.data(), n, m, k);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          matmul_tn_acc(pa.value.data(), o.grad.data(), pb.grad.data(), n, k, m);
        }
      },
      "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  if (b.dim(1) != k) shape_error("matmul_nt: inner extents differ");
  auto out = make_impl({n, m}, std::vector<double>(n * m, 0.0));
  matmul_nt_acc(a.values().data(), b.values().data(), out->value.data(), n, k, m);
  return finish_op(
      std::move(out), {a.impl_ptr(), b.impl_ptr()},
      [n, k, m](TensorImpl& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          matmul_nn_acc(o.grad.data(), pb.value.data(), pa.grad.data(), n, m, k);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          matmul_tn_acc(o.grad.data(), pa.value.data(), pb.grad.data(), n, m, k);
        }
      },
      "matmul_nt");
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  require_matrix(x, "linear input");
  require_matrix(p.weight, "linear weight");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = p.weight.dim(1);
  if (p.weight.dim(0) != in) shape_error("linear: input extent does not match weight");
  const bool with_bias = p.bias.defined();
  if (with_bias && (p.bias.rank() != 1 || p.bias.dim(0) != out_dim)) {
    shape_error("linear: bias extent does not match weight");
  }
  auto out = make_impl({n, out_dim}, std::vector<double>(n * out_dim, 0.0));
  matmul_nn_acc(x.values().data(), p.weight.values().data(), out->value.data(), n, in, out_dim);
  if (with_bias) {
    const double* b = p.bias.values().data();
    for (std::size_t i = 0; i < n; ++i) {
      double* row = out->value.data() + i * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) row[j] += b[j];
    }
  }
  std::vector<std::shared_ptr<TensorImpl>> parents{x.impl_ptr(), p.weight.impl_ptr()};
  if (with_bias) parents.push_back(p.bias.impl_ptr());
  return finish_op(
      std::move(out), std::move(parents),
      [n, in, out_dim, with_bias](TensorImpl& o) {
        auto& px = *o.parents[0];
        auto& pw = *o.parents[1];
        if (px.requires_grad) {
          px.ensure_grad();
          matmul_nt_acc(o.grad.data(), pw.value.data(), px.grad.data(), n, out_dim, in);
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          matmul_tn_acc(px.value.data(), o.grad.data(), pw.grad.data(), n, in, out_dim);
        }
        if (with_bias) {
          auto& pb = *o.parents[2];
          if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
              const double* row = o.grad.data() + i * out_dim;
              for (std::size_t j = 0; j < out_dim; ++j) pb.grad[j] += row[j];
            }
          }
        }
      },
      "linear");
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add: shape mismatch");
  auto out = make_impl(a.shape(), std::vector<double>(a.numel()));
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  return finish_op(
      std::move(out), {a.impl_ptr(), b.impl_ptr()},
      [](TensorImpl& o) {
        for (int side = 0; side < 2; ++side) {
          auto& p = *o.parents[side];
          if (!p.requires_grad) continue;
          p.ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
        }
      },
      "add");
}

Tensor scale(const Tensor& a, double c) {
  auto out = make_impl(a.shape(), std::vector<double>(a.numel()));
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * c;
  return finish_op(
      std::move(out), {a.impl_ptr()},
      [c](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += c * o.grad[i];
      },
      "scale");
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t n = x.dim(0), m = x.dim(1);
  auto out = make_impl(x.shape(), std::vector<double>(n * m));
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv + i * m;
    double* orow = out->value.data() + i * m;
    double mx = row[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < m; ++j) orow[j] /= sum;
  }
  return finish_op(
      std::move(out), {x.impl_ptr()},
      [n, m](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double* prow = o.value.data() + i * m;
          const double* grow = o.grad.data() + i * m;
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += prow[j] * grow[j];
          double* out_g = p.grad.data() + i * m;
          for (std::size_t j = 0; j < m; ++j) out_g[j] += prow[j] * (grow[j] - dot);
        }
      },
      "softmax_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    shape_error("layer_norm: affine parameter extents do not match");
  }
  if (d < 2 && eps == 0.0) {
    throw std::invalid_argument("layer_norm: single-column input with eps=0 is singular");
  }
  auto out = make_impl(x.shape(), std::vector<double>(n * d));
  // Cache normalized rows and inverse stddevs for backward.
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_sigma = std::make_shared<std::vector<double>>(n);
  const double* xv = x.values().data();
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    double* hrow = xhat->data() + i * d;
    double* orow = out->value.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      hrow[j] = (row[j] - mean) * is;
      orow[j] = gv[j] * hrow[j] + bv[j];
    }
  }
  return finish_op(
      std::move(out), {x.impl_ptr(), gamma.impl_ptr(), beta.impl_ptr()},
      [n, d, xhat, inv_sigma](TensorImpl& o) {
        auto& px = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        const double* gv = pg.value.data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = o.grad.data() + i * d;
          const double* hrow = xhat->data() + i * d;
          if (pg.requires_grad) {
            pg.ensure_grad();
            for (std::size_t j = 0; j < d; ++j) pg.grad[j] += grow[j] * hrow[j];
          }
          if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t j = 0; j < d; ++j) pb.grad[j] += grow[j];
          }
          if (px.requires_grad) {
            px.ensure_grad();
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = grow[j] * gv[j];
              sum_dh += dh;
              sum_dh_h += dh * hrow[j];
            }
            const double inv_d = 1.0 / static_cast<double>(d);
            const double is = (*inv_sigma)[i];
            double* xg = px.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = grow[j] * gv[j];
              xg[j] += is * (dh - inv_d * sum_dh - hrow[j] * inv_d * sum_dh_h);
            }
          }
        }
      },
      "layer_norm");
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p, double eps) {
  return layer_norm(x, p.gamma, p.beta, eps);
}

Tensor gelu(const Tensor& x) {
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = gelu_forward(xv[i]);
  return finish_op(
      std::move(out), {x.impl_ptr()},
      [](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          p.grad[i] += o.grad[i] * gelu_derivative(p.value[i]);
        }
      },
      "gelu");
}

Tensor sigmoid(const Tensor& x) {
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = stable_sigmoid(xv[i]);
  return finish_op(
      std::move(out), {x.impl_ptr()},
      [](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const double s = o.value[i];
          p.grad[i] += o.grad[i] * s * (1.0 - s);
        }
      },
      "sigmoid");
}

Tensor mlp_block(const Tensor& x, const MlpParams& p) {
  return linear(gelu(linear(x, p.fc1)), p.fc2);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_matrix(q, "attention q");
  require_matrix(k, "attention k");
  require_matrix(v, "attention v");
  const std::size_t c = q.dim(1);
  if (k.dim(1) != c) shape_error("attention: q/k channel extents differ");
  if (v.dim(0) != k.dim(0)) shape_error("attention: k/v lengths differ");
  const Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(c)));
  return matmul(softmax_rows(scores), v);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_rows lhs");
  require_matrix(b, "concat_rows rhs");
  if (a.dim(1) != b.dim(1)) shape_error("concat_rows: column extents differ");
  const std::size_t n1 = a.dim(0), n2 = b.dim(0), d = a.dim(1);
  std::vector<double> data;
  data.reserve((n1 + n2) * d);
  data.insert(data.end(), a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  auto out = make_impl({n1 + n2, d}, std::move(data));
  return finish_op(
      std::move(out), {a.impl_ptr(), b.impl_ptr()},
      [n1, d](TensorImpl& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += o.grad[i];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          const std::size_t off = n1 * d;
          for (std::size_t i = 0; i < pb.grad.size(); ++i) pb.grad[i] += o.grad[off + i];
        }
      },
      "concat_rows");
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  require_matrix(x, "slice_rows");
  if (r0 > r1 || r1 > x.dim(0)) shape_error("slice_rows: range out of bounds");
  const std::size_t d = x.dim(1), n = r1 - r0;
  std::vector<double> data(x.values().begin() + r0 * d, x.values().begin() + r1 * d);
  auto out = make_impl({n, d}, std::move(data));
  return finish_op(
      std::move(out), {x.impl_ptr()},
      [r0, d](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const std::size_t off = r0 * d;
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[off + i] += o.grad[i];
      },
      "slice_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_cols: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& t : parts) {
    require_matrix(t, "concat_cols input");
    if (t.dim(0) != n) shape_error("concat_cols: row extents differ");
    total += t.dim(1);
  }
  auto out = make_impl({n, total}, std::vector<double>(n * total));
  std::size_t col = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  for (const auto& t : parts) {
    const std::size_t w = t.dim(1);
    const double* src = t.values().data();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(src + i * w, src + (i + 1) * w, out->value.data() + i * total + col);
    }
    offsets.push_back(col);
    widths.push_back(w);
    parents.push_back(t.impl_ptr());
    col += w;
  }
  return finish_op(
      std::move(out), std::move(parents),
      [n, total, offsets, widths](TensorImpl& o) {
        for (std::size_t part = 0; part < o.parents.size(); ++part) {
          auto& p = *o.parents[part];
          if (!p.requires_grad) continue;
          p.ensure_grad();
          const std::size_t w = widths[part], off = offsets[part];
          for (std::size_t i = 0; i < n; ++i) {
            const double* g = o.grad.data() + i * total + off;
            double* pg = p.grad.data() + i * w;
            for (std::size_t j = 0; j < w; ++j) pg[j] += g[j];
          }
        }
      },
      "concat_cols");
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  require_matrix(x, "slice_cols");
  if (c0 > c1 || c1 > x.dim(1)) shape_error("slice_cols: range out of bounds");
  const std::size_t n = x.dim(0), d = x.dim(1), w = c1 - c0;
  auto out = make_impl({n, w}, std::vector<double>(n * w));
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(xv + i * d + c0, xv + i * d + c1, out->value.data() + i * w);
  }
  return finish_op(
      std::move(out), {x.impl_ptr()},
      [n, d, c0, w](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double* g = o.grad.data() + i * w;
          double* pg = p.grad.data() + i * d + c0;
          for (std::size_t j = 0; j < w; ++j) pg[j] += g[j];
        }
      },
      "slice_cols");
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  require_matrix(x, "gather_rows");
  const std::size_t d = x.dim(1);
  for (std::size_t i : idx) {
    if (i >= x.dim(0)) shape_error("gather_rows: index out of range");
  }
  auto out = make_impl({idx.size(), d}, std::vector<double>(idx.size() * d));
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(xv + idx[i] * d, xv + (idx[i] + 1) * d, out->value.data() + i * d);
  }
  return finish_op(
      std::move(out), {x.impl_ptr()},
      [idx, d](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const double* g = o.grad.data() + i * d;
          double* pg = p.grad.data() + idx[i] * d;
          for (std::size_t j = 0; j < d; ++j) pg[j] += g[j];
        }
      },
      "gather_rows");
}

Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t out_len) {
  require_matrix(x, "scatter_rows");
  if (idx.size() != x.dim(0)) shape_error("scatter_rows: index count does not match rows");
  const std::size_t d = x.dim(1);
  for (std::size_t i : idx) {
    if (i >= out_len) shape_error("scatter_rows: index out of range");
  }
  auto out = make_impl({out_len, d}, std::vector<double>(out_len * d, 0.0));
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(xv + i * d, xv + (i + 1) * d, out->value.data() + idx[i] * d);
  }
  return finish_op(
      std::move(out), {x.impl_ptr()},
      [idx, d](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const double* g = o.grad.data() + idx[i] * d;
          double* pg = p.grad.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) pg[j] += g[j];
        }
      },
      "scatter_rows");
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto out = make_impl({1}, {s});
  return finish_op(
      std::move(out), {x.impl_ptr()},
      [](TensorImpl& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double g = o.grad[0];
        for (double& v : p.grad) v += g;
      },
      "sum_all");
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) shape_error("bce: shape mismatch");
  const auto zv = logits.values();
  const auto tv = targets.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double z = zv[i];
    // max(z,0) - z*t + log(1 + exp(-|z|))
    loss += std::max(z, 0.0) - z * tv[i] + std::log1p(std::exp(-std::abs(z)));
  }
  const double inv_n = 1.0 / static_cast<double>(zv.size());
  auto out = make_impl({1}, {loss * inv_n});
  return finish_op(
      std::move(out), {logits.impl_ptr(), targets.impl_ptr()},
      [inv_n](TensorImpl& o) {
        auto& pz = *o.parents[0];
        auto& pt = *o.parents[1];
        const double g = o.grad[0] * inv_n;
        if (pz.requires_grad) {
          pz.ensure_grad();
          for (std::size_t i = 0; i < pz.grad.size(); ++i) {
            pz.grad[i] += g * (stable_sigmoid(pz.value[i]) - pt.value[i]);
          }
        }
      },
      "bce_with_logits_mean");
}

Tensor l1_mean(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_error("l1: shape mismatch");
  const auto pv = pred.values();
  const auto tv = target.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) loss += std::abs(pv[i] - tv[i]);
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  auto out = make_impl({1}, {loss * inv_n});
  return finish_op(
      std::move(out), {pred.impl_ptr(), target.impl_ptr()},
      [inv_n](TensorImpl& o) {
        auto& pp = *o.parents[0];
        auto& pt = *o.parents[1];
        const double g = o.grad[0] * inv_n;
        if (pp.requires_grad) {
          pp.ensure_grad();
          for (std::size_t i = 0; i < pp.grad.size(); ++i) {
            const double diff = pp.value[i] - pt.value[i];
            pp.grad[i] += g * (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
          }
        }
      },
      "l1_mean");
}

// ---- backward ---------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw std::invalid_argument("backward: loss must be a defined scalar tensor");
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not participate in any tape");
  }
  // Post-order DFS for a reverse topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack{{loss.impl(), 0}};
  seen.insert(loss.impl());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      TensorImpl* child = f.node->parents[f.next_child++].get();
      if (child->backward_fn && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  loss.impl()->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->backward_fn) continue;  // the loss itself may be a leaf
    node->ensure_grad();
    node->backward_fn(*node);
  }
  // Free the tape so the step's graph does not outlive the pass.
  for (TensorImpl* node : order) {
    node->backward_fn = nullptr;
    node->parents.clear();
  }
}

// ---- gradient checking --------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor()>& forward,
                           const std::vector<NamedParam>& params, const GradCheckOptions& opt) {
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) {
      throw std::invalid_argument("grad_check: parameter '" + p.name +
                                  "' does not require gradients");
    }
  }
  for (const auto& p : params) const_cast<Tensor&>(p.tensor).zero_grad();
  Tensor loss = forward();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  }

  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  const bool exhaustive = total <= opt.exhaustive_limit;
  Rng pick(opt.sample_seed);

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].tensor;
    auto v = t.values_mut();
    std::vector<std::size_t> coords;
    if (exhaustive || v.size() <= opt.sample_per_tensor) {
      coords.resize(v.size());
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      for (std::size_t s = 0; s < opt.sample_per_tensor; ++s) {
        coords.push_back(static_cast<std::size_t>(pick.uniform_int(v.size())));
      }
    }
    for (std::size_t ci : coords) {
      const double saved = v[ci];
      v[ci] = saved + opt.step;
      const double up = forward().scalar();
      v[ci] = saved - opt.step;
      const double down = forward().scalar();
      v[ci] = saved;
      const double fd = (up - down) / (2.0 * opt.step);
      const double an = analytic[pi][ci];
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-2});
      ++result.checked;
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst_param = params[pi].name;
        result.worst_index = ci;
      }
    }
  }
  return result;
}

}  // namespace stmt
