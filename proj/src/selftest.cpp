#include "stmt/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <span>
#include <vector>

#include "stmt/encoder.hpp"
#include "stmt/eval.hpp"
#include "stmt/memory.hpp"
#include "stmt/stmt_module.hpp"
#include "stmt/tensor.hpp"

namespace stmt {

namespace {

constexpr double kGradTol = 1e-4;

std::string describe(const GradCheckResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max rel err %.3e (%s[%zu], %zu coords)", r.max_rel_err,
                r.worst_param.c_str(), r.worst_index, r.checked);
  return buf;
}

Tensor leaf(Rng& rng, Shape shape, double stddev = 1.0) {
  return Tensor::randn(rng, std::move(shape), stddev).set_requires_grad(true);
}

// Fixed random matrix used to reduce a [N,M] output to a scalar with
// non-degenerate gradients everywhere.
Tensor reduce_loss(const Tensor& out, Rng& rng) {
  const Tensor w = Tensor::randn(rng, {out.dim(1), 1});
  return mean_all(matmul(out, w));
}

struct FdCase {
  std::vector<NamedParam> params;
  std::function<Tensor()> forward;
};

// Three independent random geometries per operation, all checked against
// central finite differences.
CheckResult fd_check(const std::string& name,
                     const std::function<FdCase(Rng&, std::size_t)>& make) {
  CheckResult res;
  res.name = "grad." + name;
  res.pass = true;
  double worst = 0.0;
  std::string detail;
  for (std::size_t variant = 0; variant < 3; ++variant) {
    Rng rng(101 + 37 * variant);
    FdCase c = make(rng, variant);
    const GradCheckResult r = grad_check(c.forward, c.params);
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      detail = describe(r);
    }
  }
  res.pass = worst <= kGradTol;
  res.detail = detail;
  return res;
}

std::vector<NamedParam> cross_block_params(const std::string& prefix, CrossBlockParams& p) {
  std::vector<NamedParam> out{
      {prefix + ".wq.weight", p.attn.wq.weight}, {prefix + ".wq.bias", p.attn.wq.bias},
      {prefix + ".wk.weight", p.attn.wk.weight}, {prefix + ".wk.bias", p.attn.wk.bias},
      {prefix + ".wv.weight", p.attn.wv.weight}, {prefix + ".wv.bias", p.attn.wv.bias},
      {prefix + ".wo.weight", p.attn.wo.weight}, {prefix + ".wo.bias", p.attn.wo.bias},
      {prefix + ".ln.gamma", p.ln.gamma},        {prefix + ".ln.beta", p.ln.beta},
      {prefix + ".fc1.weight", p.mlp.fc1.weight}, {prefix + ".fc1.bias", p.mlp.fc1.bias},
      {prefix + ".fc2.weight", p.mlp.fc2.weight}, {prefix + ".fc2.bias", p.mlp.fc2.bias},
  };
  for (auto& np : out) np.tensor.set_requires_grad(true);
  return out;
}

CheckResult fd_check_stmt_forward() {
  CheckResult res;
  res.name = "grad.stmt_forward";
  res.pass = true;
  double worst = 0.0;
  std::string detail;
  const struct {
    std::size_t dim, heads, n_z, n_x;
  } geom[3] = {{8, 2, 4, 9}, {12, 3, 2, 4}, {8, 4, 4, 6}};
  for (std::size_t variant = 0; variant < 3; ++variant) {
    Rng rng(211 + 19 * variant);
    const auto g = geom[variant];
    StmtLayerParams params;
    params.ca_template = CrossBlockParams::init(rng, g.dim, 2.0, 0.2);
    params.ca_dynamic = CrossBlockParams::init(rng, g.dim, 2.0, 0.2);
    params.tf = CrossBlockParams::init(rng, g.dim, 2.0, 0.2);

    StmtConfig cfg;
    cfg.insert_layers = {5};
    cfg.tf_layers = {5};
    cfg.heads = g.heads;

    std::vector<NamedParam> named;
    for (auto& np : cross_block_params("ca_template", *params.ca_template)) named.push_back(np);
    for (auto& np : cross_block_params("ca_dynamic", *params.ca_dynamic)) named.push_back(np);
    for (auto& np : cross_block_params("tf", *params.tf)) named.push_back(np);
    Tensor h_v = leaf(rng, {g.n_z + g.n_x, g.dim});
    Tensor h_t = leaf(rng, {g.n_z + g.n_x, g.dim});
    CacheEntry cache{leaf(rng, {g.n_z, g.dim}), leaf(rng, {g.n_z, g.dim})};
    named.push_back({"h_v", h_v});
    named.push_back({"h_t", h_t});
    named.push_back({"cache.m_v", cache.m_v});
    named.push_back({"cache.m_t", cache.m_t});

    const auto forward = [&]() {
      auto [out_v, out_t] = stmt_forward(h_v, h_t, g.n_z, &cache, cfg, 5, params);
      return add(mean_all(out_v), mean_all(out_t));
    };
    const GradCheckResult r = grad_check(forward, named);
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      detail = describe(r);
    }
  }
  res.pass = worst <= kGradTol;
  res.detail = detail;
  return res;
}

bool spans_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void zero_identity_paths(CrossBlockParams& p) {
  for (Tensor* t : {&p.attn.wv.weight, &p.attn.wv.bias, &p.attn.wo.weight, &p.attn.wo.bias,
                    &p.mlp.fc2.weight, &p.mlp.fc2.bias}) {
    auto w = t->values_mut();
    std::fill(w.begin(), w.end(), 0.0);
  }
}

CheckResult make_result(const std::string& name, bool pass, const std::string& detail) {
  return {name, pass, detail};
}

// ---- metric raster oracle -------------------------------------------------

// Counts quarter-pixel cells inside each box over a shared raster; the ratio
// reproduces intersection-over-union for axis-aligned boxes.
double raster_iou(const Box& a, const Box& b) {
  const double x0 = std::min(a.x, b.x) - 1.0, x1 = std::max(a.x + a.w, b.x + b.w) + 1.0;
  const double y0 = std::min(a.y, b.y) - 1.0, y1 = std::max(a.y + a.h, b.y + b.h) + 1.0;
  const double step = 0.25;
  long inter = 0, uni = 0;
  for (double y = y0 + step / 2; y < y1; y += step) {
    for (double x = x0 + step / 2; x < x1; x += step) {
      const bool in_a = x >= a.x && x < a.x + a.w && y >= a.y && y < a.y + a.h;
      const bool in_b = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

std::vector<CheckResult> check_gradients() {
  std::vector<CheckResult> out;

  out.push_back(fd_check("matmul", [](Rng& rng, std::size_t v) {
    const std::size_t n = 2 + v, k = 3 + v, m = 2 + 2 * v;
    Tensor a = leaf(rng, {n, k}), b = leaf(rng, {k, m});
    return FdCase{{{"a", a}, {"b", b}}, [a, b]() { return mean_all(matmul(a, b)); }};
  }));
  out.push_back(fd_check("matmul_nt", [](Rng& rng, std::size_t v) {
    const std::size_t n = 2 + v, k = 3 + v, m = 2 + 2 * v;
    Tensor a = leaf(rng, {n, k}), b = leaf(rng, {m, k});
    return FdCase{{{"a", a}, {"b", b}}, [a, b]() { return mean_all(matmul_nt(a, b)); }};
  }));
  out.push_back(fd_check("linear", [](Rng& rng, std::size_t v) {
    const std::size_t n = 3 + v, in = 2 + v, outd = 2 + 2 * v;
    Tensor x = leaf(rng, {n, in});
    LinearParams p = LinearParams::init(rng, in, outd, 0.5);
    p.weight.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    Tensor w = Tensor::randn(rng, {outd, 1});
    return FdCase{{{"x", x}, {"w", p.weight}, {"b", p.bias}},
                  [x, p, w]() { return mean_all(matmul(linear(x, p), w)); }};
  }));
  out.push_back(fd_check("add", [](Rng& rng, std::size_t v) {
    Tensor a = leaf(rng, {2 + v, 3 + v}), b = leaf(rng, {2 + v, 3 + v});
    return FdCase{{{"a", a}, {"b", b}}, [a, b]() { return sum_all(add(a, b)); }};
  }));
  out.push_back(fd_check("scale", [](Rng& rng, std::size_t v) {
    Tensor a = leaf(rng, {2 + v, 4 - v});
    const double c = 0.3 + 0.7 * static_cast<double>(v);
    return FdCase{{{"a", a}}, [a, c]() { return sum_all(scale(a, c)); }};
  }));
  out.push_back(fd_check("softmax_rows", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {2 + v, 3 + v});
    Tensor w = Tensor::randn(rng, {3 + v, 1});
    return FdCase{{{"x", x}}, [x, w]() { return mean_all(matmul(softmax_rows(x), w)); }};
  }));
  out.push_back(fd_check("layer_norm", [](Rng& rng, std::size_t v) {
    const std::size_t d = 3 + 2 * v;
    Tensor x = leaf(rng, {2 + v, d});
    Tensor gamma = leaf(rng, {d}, 0.5), beta = leaf(rng, {d}, 0.5);
    Tensor w = Tensor::randn(rng, {d, 1});
    return FdCase{{{"x", x}, {"gamma", gamma}, {"beta", beta}},
                  [x, gamma, beta, w]() {
                    return mean_all(matmul(layer_norm(x, gamma, beta), w));
                  }};
  }));
  out.push_back(fd_check("gelu", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {2 + v, 3 + v});
    Tensor w = Tensor::randn(rng, {3 + v, 1});
    return FdCase{{{"x", x}}, [x, w]() { return mean_all(matmul(gelu(x), w)); }};
  }));
  out.push_back(fd_check("sigmoid", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {2 + v, 3 + v});
    Tensor w = Tensor::randn(rng, {3 + v, 1});
    return FdCase{{{"x", x}}, [x, w]() { return mean_all(matmul(sigmoid(x), w)); }};
  }));
  out.push_back(fd_check("mlp_block", [](Rng& rng, std::size_t v) {
    const std::size_t d = 3 + v;
    Tensor x = leaf(rng, {2 + v, d});
    MlpParams p = MlpParams::init(rng, d, 2.0, 0.5);
    for (Tensor* t : {&p.fc1.weight, &p.fc1.bias, &p.fc2.weight, &p.fc2.bias}) {
      t->set_requires_grad(true);
    }
    return FdCase{{{"x", x},
                   {"fc1.w", p.fc1.weight},
                   {"fc1.b", p.fc1.bias},
                   {"fc2.w", p.fc2.weight},
                   {"fc2.b", p.fc2.bias}},
                  [x, p]() { return mean_all(mlp_block(x, p)); }};
  }));
  out.push_back(fd_check("scaled_dot_attention", [](Rng& rng, std::size_t v) {
    const std::size_t nq = 2 + v, nk = 3 + v, d = 2 + 2 * v;
    Tensor q = leaf(rng, {nq, d}), k = leaf(rng, {nk, d}), val = leaf(rng, {nk, d});
    Tensor w = Tensor::randn(rng, {d, 1});
    return FdCase{{{"q", q}, {"k", k}, {"v", val}},
                  [q, k, val, w]() {
                    return mean_all(matmul(scaled_dot_attention(q, k, val), w));
                  }};
  }));
  out.push_back(fd_check("concat_rows", [](Rng& rng, std::size_t v) {
    Tensor a = leaf(rng, {2 + v, 3}), b = leaf(rng, {1 + v, 3});
    Tensor w = Tensor::randn(rng, {3, 1});
    return FdCase{{{"a", a}, {"b", b}},
                  [a, b, w]() { return mean_all(matmul(concat_rows(a, b), w)); }};
  }));
  out.push_back(fd_check("slice_rows", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {5 + v, 3});
    Tensor w = Tensor::randn(rng, {3, 1});
    return FdCase{{{"x", x}},
                  [x, w, v]() { return mean_all(matmul(slice_rows(x, 1, 4 + v), w)); }};
  }));
  out.push_back(fd_check("concat_cols", [](Rng& rng, std::size_t v) {
    Tensor a = leaf(rng, {3, 2 + v}), b = leaf(rng, {3, 1 + v}), c = leaf(rng, {3, 2});
    Tensor w = Tensor::randn(rng, {5 + 2 * v, 1});
    return FdCase{{{"a", a}, {"b", b}, {"c", c}},
                  [a, b, c, w]() { return mean_all(matmul(concat_cols({a, b, c}), w)); }};
  }));
  out.push_back(fd_check("slice_cols", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {3, 5 + v});
    Tensor w = Tensor::randn(rng, {3 + v, 1});
    return FdCase{{{"x", x}},
                  [x, w, v]() { return mean_all(matmul(slice_cols(x, 1, 4 + v), w)); }};
  }));
  out.push_back(fd_check("gather_rows", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {5 + v, 3});
    const std::vector<std::size_t> idx{0, 2 + v, 4, 2 + v};
    Tensor w = Tensor::randn(rng, {3, 1});
    return FdCase{{{"x", x}},
                  [x, idx, w]() { return mean_all(matmul(gather_rows(x, idx), w)); }};
  }));
  out.push_back(fd_check("scatter_rows", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {3, 2 + v});
    const std::vector<std::size_t> idx{0, 2, 5};
    Tensor w = Tensor::randn(rng, {2 + v, 1});
    return FdCase{{{"x", x}},
                  [x, idx, w]() { return mean_all(matmul(scatter_rows(x, idx, 7), w)); }};
  }));
  out.push_back(fd_check("sum_all", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {2 + v, 3 + v});
    return FdCase{{{"x", x}}, [x]() { return sum_all(x); }};
  }));
  out.push_back(fd_check("mean_all", [](Rng& rng, std::size_t v) {
    Tensor x = leaf(rng, {2 + v, 3 + v});
    return FdCase{{{"x", x}}, [x]() { return mean_all(x); }};
  }));
  out.push_back(fd_check("bce_with_logits_mean", [](Rng& rng, std::size_t v) {
    Tensor logits = leaf(rng, {3 + v, 2});
    std::vector<double> t((3 + v) * 2);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (i % 3) * 0.4 + 0.1;
    Tensor targets = Tensor::from_data({3 + v, 2}, std::move(t));
    return FdCase{{{"logits", logits}},
                  [logits, targets]() { return bce_with_logits_mean(logits, targets); }};
  }));
  out.push_back(fd_check("l1_mean", [](Rng& rng, std::size_t v) {
    Tensor pred = leaf(rng, {3 + v, 2});
    // Keep every residual far from the non-differentiable point.
    std::vector<double> t(pred.numel());
    const auto pv = pred.values();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = pv[i] + (i % 2 ? 3.0 : -3.0);
    Tensor target = Tensor::from_data({3 + v, 2}, std::move(t));
    return FdCase{{{"pred", pred}}, [pred, target]() { return l1_mean(pred, target); }};
  }));
  out.push_back(fd_check_stmt_forward());
  return out;
}

std::vector<CheckResult> check_module_identity() {
  std::vector<CheckResult> out;
  Rng rng(31);
  const std::size_t dim = 8, n_z = 4, n = 13;
  Tensor h_v = Tensor::randn(rng, {n, dim});
  Tensor h_t = Tensor::randn(rng, {n, dim});
  CacheEntry cache{Tensor::randn(rng, {n_z, dim}), Tensor::randn(rng, {n_z, dim})};

  StmtConfig cfg;
  cfg.insert_layers = {5};
  cfg.tf_layers = {5};
  cfg.heads = 2;

  {
    StmtLayerParams params;
    params.ca_template = CrossBlockParams::init(rng, dim, 2.0, 0.3);
    params.ca_dynamic = CrossBlockParams::init(rng, dim, 2.0, 0.3);
    params.tf = CrossBlockParams::init(rng, dim, 2.0, 0.3);
    zero_identity_paths(*params.ca_template);
    zero_identity_paths(*params.ca_dynamic);
    zero_identity_paths(*params.tf);
    const auto [ov, ot] = stmt_forward(h_v, h_t, n_z, &cache, cfg, 5, params);
    const bool pass = spans_equal(ov.values(), h_v.values()) &&
                      spans_equal(ot.values(), h_t.values());
    out.push_back(make_result("identity.zeroed-paths", pass,
                              "value/output/MLP-2 weights zeroed -> bitwise passthrough"));
  }
  {
    StmtConfig off = cfg;
    off.enable_modality_enhancement = false;
    off.enable_dynamic_tokens = false;
    StmtLayerParams params;  // no parameters needed on the disabled path
    const auto [ov, ot] = stmt_forward(h_v, h_t, n_z, nullptr, off, 5, params);
    const bool pass = ov.impl() == h_v.impl() && ot.impl() == h_t.impl();
    out.push_back(make_result("identity.flags-off", pass,
                              "both stages disabled -> inputs returned unchanged"));
  }
  {
    // Zeroed temporal fusion must leave search rows untouched while the
    // modality enhancement still rewrites template rows (and vice versa).
    StmtLayerParams params;
    params.ca_template = CrossBlockParams::init(rng, dim, 2.0, 0.3);
    params.ca_dynamic = CrossBlockParams::init(rng, dim, 2.0, 0.3);
    params.tf = CrossBlockParams::init(rng, dim, 2.0, 0.3);
    zero_identity_paths(*params.tf);
    const auto [ov, ot] = stmt_forward(h_v, h_t, n_z, &cache, cfg, 5, params);
    const Tensor search_in = slice_rows(h_v, n_z, n);
    const Tensor search_out = slice_rows(ov, n_z, n);
    const Tensor tmpl_in = slice_rows(h_v, 0, n_z);
    const Tensor tmpl_out = slice_rows(ov, 0, n_z);
    const bool pass = spans_equal(search_out.values(), search_in.values()) &&
                      !spans_equal(tmpl_out.values(), tmpl_in.values()) &&
                      ot.shape() == h_t.shape();
    out.push_back(make_result("identity.stage-isolation", pass,
                              "zeroed fusion leaves search rows bitwise intact"));
  }
  return out;
}

std::vector<CheckResult> check_memory_pipeline() {
  std::vector<CheckResult> out;
  Rng rng(47);

  {
    const Tensor x = Tensor::randn(rng, {4, 3});
    EliminationRecord rec;
    rec.kept_indices = {0, 2, 3, 6};
    rec.original_len = 7;
    const Tensor restored = restore_tokens(x, rec);
    const Tensor back = gather_rows(restored, rec.kept_indices);
    bool zeros_ok = true;
    for (std::size_t i = 0; i < 7; ++i) {
      if (std::find(rec.kept_indices.begin(), rec.kept_indices.end(), i) !=
          rec.kept_indices.end()) {
        continue;
      }
      const auto row = restored.values().subspan(i * 3, 3);
      for (double v : row) zeros_ok = zeros_ok && v == 0.0;
    }
    out.push_back(make_result("memory.restore-round-trip",
                              spans_equal(back.values(), x.values()) && zeros_ok,
                              "scatter + gather reproduces tokens; holes are zero"));
  }
  {
    const Tensor x = Tensor::randn(rng, {12, 5});
    const Tensor grid = tokens_to_grid(x, Grid{3, 4});
    const Tensor back = grid_to_tokens(grid);
    out.push_back(make_result("memory.reshape-round-trip",
                              spans_equal(back.values(), x.values()),
                              "grid reshape is a bitwise inverse pair"));
  }
  {
    const double c = 0.7375;
    const Tensor fm = Tensor::full({5, 7, 3}, c);
    bool pass = true;
    for (const Box& roi : {Box{1.2, 0.7, 3.3, 2.9}, Box{-1.0, -1.0, 9.0, 7.5},
                           Box{0.0, 0.0, 7.0, 5.0}}) {
      for (std::size_t sampling : {std::size_t{1}, std::size_t{2}}) {
        const Tensor got = roi_align(fm, roi, 4, 4, sampling);
        for (double v : got.values()) pass = pass && v == c;
      }
    }
    out.push_back(make_result("memory.roi-constant", pass,
                              "constant map reproduced bitwise through ROI crops"));
  }
  {
    const Tensor fm = Tensor::randn(rng, {6, 5, 2});
    const Tensor got = roi_align(fm, Box{0.0, 0.0, 5.0, 6.0}, 6, 5, 1);
    double max_diff = 0.0;
    const auto a = got.values(), b = fm.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
      max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    }
    out.push_back(make_result("memory.roi-full-extent", max_diff <= 1e-6,
                              "full-extent crop matches the map (max diff " +
                                  std::to_string(max_diff) + ")"));
  }
  {
    // Independent brute-force bilinear average over the same sample points.
    const std::size_t rows = 6, cols = 5, d = 2, sampling = 2;
    const Tensor fm = Tensor::randn(rng, {rows, cols, d});
    const Box roi{0.8, -0.3, 3.9, 5.1};
    const std::size_t out_r = 3, out_c = 4;
    const Tensor got = roi_align(fm, roi, out_r, out_c, sampling);
    const auto src = fm.values();
    const auto read = [&](std::size_t r, std::size_t c, std::size_t k) {
      return src[(r * cols + c) * d + k];
    };
    double max_diff = 0.0;
    for (std::size_t i = 0; i < out_r; ++i) {
      for (std::size_t j = 0; j < out_c; ++j) {
        for (std::size_t k = 0; k < d; ++k) {
          double acc = 0.0;
          for (std::size_t sy = 0; sy < sampling; ++sy) {
            for (std::size_t sx = 0; sx < sampling; ++sx) {
              const double v =
                  roi.y + (i + (sy + 0.5) / sampling) * (roi.h / out_r) - 0.5;
              const double u =
                  roi.x + (j + (sx + 0.5) / sampling) * (roi.w / out_c) - 0.5;
              const double tv = std::clamp(v, 0.0, static_cast<double>(rows - 1));
              const double tu = std::clamp(u, 0.0, static_cast<double>(cols - 1));
              const auto r0 = static_cast<std::size_t>(tv);
              const auto c0 = static_cast<std::size_t>(tu);
              const std::size_t r1 = std::min(r0 + 1, rows - 1);
              const std::size_t c1 = std::min(c0 + 1, cols - 1);
              const double fv = tv - r0, fu = tu - c0;
              acc += (1 - fv) * ((1 - fu) * read(r0, c0, k) + fu * read(r0, c1, k)) +
                     fv * ((1 - fu) * read(r1, c0, k) + fu * read(r1, c1, k));
            }
          }
          const double want = acc / (sampling * sampling);
          const double have = got.values()[(i * out_c + j) * d + k];
          max_diff = std::max(max_diff, std::abs(want - have));
        }
      }
    }
    out.push_back(make_result("memory.roi-bilinear-oracle", max_diff <= 1e-6,
                              "matches independent bilinear average (max diff " +
                                  std::to_string(max_diff) + ")"));
  }
  {
    const Tensor fm = Tensor::from_data({2, 2, 1}, {0.0, 1.0, 2.0, 3.0});
    const Tensor got = roi_align(fm, Box{0.0, 0.0, 2.0, 2.0}, 1, 1, 1);
    out.push_back(make_result("memory.roi-center-value",
                              std::abs(got.values()[0] - 1.5) <= 1e-12,
                              "2x2 ramp center reads 1.5"));
  }
  return out;
}

std::vector<CheckResult> check_metrics() {
  std::vector<CheckResult> out;
  {
    const Box a{0, 0, 2, 2}, b{1, 1, 2, 2};
    const double got = iou(a, b);
    const double oracle = raster_iou(a, b);
    const bool pass = std::abs(got - 1.0 / 7.0) <= 1e-12 && std::abs(got - oracle) <= 1e-12 &&
                      iou(a, b) == iou(b, a);
    out.push_back(make_result("metrics.iou-pixel-count", pass,
                              "overlap 1/7 against the raster-count oracle"));
  }
  {
    const Box a{0, 0, 4, 4}, b{3, 4, 4, 4};
    out.push_back(make_result("metrics.center-error-345",
                              std::abs(center_error(a, b) - 5.0) <= 1e-12,
                              "offset (3,4) reads 5"));
  }
  {
    const Box gt{10, 10, 8, 4};
    Box pred = gt;
    pred.x += gt.w;  // center offset of exactly one width
    out.push_back(make_result("metrics.norm-center-unit",
                              std::abs(norm_center_error(pred, gt) - 1.0) <= 1e-12,
                              "one-width offset normalizes to 1"));
  }
  {
    const OpeResult r = ope_curves({5.0, 25.0}, {0.1, 0.1}, {0.5, 0.5});
    out.push_back(make_result("metrics.pr20-half", r.pr20 == 0.5,
                              "errors [5,25] give exactly 0.5 at 20 px"));
  }
  {
    std::vector<Box> trace{{5, 5, 10, 10}, {8, 4, 12, 9}, {20, 22, 6, 14}};
    const OpeResult r = evaluate_trace(trace, trace);
    const bool pass = r.pr20 == 1.0 && r.npr == 1.0 && r.sr == 1.0;
    out.push_back(make_result("metrics.perfect-trace", pass, "perfect trace scores 1/1/1"));
  }
  {
    const OpeResult r = ope_curves({60.0, 60.0}, {0.9, 0.9}, {0.0, 0.0});
    out.push_back(make_result("metrics.zero-overlap", r.sr == 0.0,
                              "zero overlaps fail the strict comparison everywhere"));
  }
  {
    Rng rng(59);
    std::vector<double> errors, norm_errors, overlaps;
    for (int i = 0; i < 40; ++i) {
      errors.push_back(rng.uniform() * 60.0);
      norm_errors.push_back(rng.uniform());
      overlaps.push_back(rng.uniform());
    }
    const OpeResult r = ope_curves(errors, norm_errors, overlaps);
    bool pass = true;
    for (std::size_t i = 1; i < 51; ++i) {
      pass = pass && r.pr_curve[i] >= r.pr_curve[i - 1];
      pass = pass && r.npr_curve[i] >= r.npr_curve[i - 1];
      pass = pass && r.sr_curve[i] <= r.sr_curve[i - 1];
    }
    for (double v : {r.pr20, r.npr, r.sr}) pass = pass && v >= 0.0 && v <= 1.0;
    out.push_back(make_result("metrics.curve-monotone", pass,
                              "precision curves rise, success curve falls"));
  }
  return out;
}

std::vector<CheckResult> run_selftest() {
  std::vector<CheckResult> all;
  for (auto group : {&check_gradients, &check_module_identity, &check_memory_pipeline,
                     &check_metrics}) {
    auto results = group();
    all.insert(all.end(), results.begin(), results.end());
  }
  return all;
}

}  // namespace stmt
