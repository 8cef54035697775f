#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "stmt/checkpoint.hpp"
#include "stmt/memory.hpp"
#include "test_util.hpp"

using namespace stmt;

namespace {

// Independent ROI average-pool: same sample layout as the production code but
// the classic weight-form bilinear and a plain accumulating mean.
std::vector<double> roi_ref(const Tensor& fm, const Box& roi, std::size_t out_rows,
                            std::size_t out_cols, std::size_t sampling) {
  const std::size_t rows = fm.dim(0), cols = fm.dim(1), d = fm.dim(2);
  const auto src = fm.values();
  std::vector<double> out(out_rows * out_cols * d, 0.0);
  const double bin_h = roi.h / static_cast<double>(out_rows);
  const double bin_w = roi.w / static_cast<double>(out_cols);
  for (std::size_t i = 0; i < out_rows; ++i) {
    for (std::size_t j = 0; j < out_cols; ++j) {
      for (std::size_t sy = 0; sy < sampling; ++sy) {
        for (std::size_t sx = 0; sx < sampling; ++sx) {
          const double v = roi.y + (i + (sy + 0.5) / sampling) * bin_h;
          const double u = roi.x + (j + (sx + 0.5) / sampling) * bin_w;
          const double tv = std::clamp(v - 0.5, 0.0, static_cast<double>(rows - 1));
          const double tu = std::clamp(u - 0.5, 0.0, static_cast<double>(cols - 1));
          const auto r0 = static_cast<std::size_t>(tv);
          const auto c0 = static_cast<std::size_t>(tu);
          const std::size_t r1 = std::min(r0 + 1, rows - 1);
          const std::size_t c1 = std::min(c0 + 1, cols - 1);
          const double fv = tv - r0, fu = tu - c0;
          const double w00 = (1 - fv) * (1 - fu), w01 = (1 - fv) * fu;
          const double w10 = fv * (1 - fu), w11 = fv * fu;
          for (std::size_t k = 0; k < d; ++k) {
            out[(i * out_cols + j) * d + k] +=
                w00 * src[(r0 * cols + c0) * d + k] + w01 * src[(r0 * cols + c1) * d + k] +
                w10 * src[(r1 * cols + c0) * d + k] + w11 * src[(r1 * cols + c1) * d + k];
          }
        }
      }
    }
  }
  for (double& x : out) x /= static_cast<double>(sampling * sampling);
  return out;
}

bool entries_equal(const CacheEntry& a, const CacheEntry& b) {
  return test_util::bitwise_equal(a.m_v.values(), b.m_v.values()) &&
         test_util::bitwise_equal(a.m_t.values(), b.m_t.values());
}

std::map<std::size_t, CacheEntry> random_staged_entries(Rng& rng, std::size_t n_z,
                                                        std::size_t d) {
  std::map<std::size_t, CacheEntry> staged;
  for (std::size_t layer : {4u, 7u}) {
    CacheEntry e;
    e.m_v = Tensor::randn(rng, {n_z, d});
    e.m_t = Tensor::randn(rng, {n_z, d});
    staged.emplace(layer, std::move(e));
  }
  return staged;
}

}  // namespace

TEST_CASE("restore_tokens re-inflates to the original positions") {
  const Tensor x = Tensor::from_data({2, 1}, {1.0, 2.0});
  EliminationRecord rec;
  rec.kept_indices = {0, 2};
  rec.original_len = 3;
  const Tensor out = restore_tokens(x, rec);
  REQUIRE(out.shape() == Shape{3, 1});
  CHECK(out.values()[0] == 1.0);
  CHECK(out.values()[1] == 0.0);
  CHECK(out.values()[2] == 2.0);
}

TEST_CASE("restore_tokens with a full record is the identity") {
  Rng rng(81);
  const Tensor x = Tensor::randn(rng, {4, 3});
  EliminationRecord rec;
  rec.kept_indices = {0, 1, 2, 3};
  rec.original_len = 4;
  const Tensor out = restore_tokens(x, rec);
  CHECK(out.values().data() == x.values().data());
}

TEST_CASE("restore after eliminate zeroes exactly the dropped positions") {
  Rng rng(82);
  const std::size_t n_z = 2, n_x = 6, d = 4;
  const Tensor joint = Tensor::randn(rng, {n_z + n_x, d});
  std::vector<double> probs((n_z + n_x) * (n_z + n_x), 0.0);
  for (std::size_t j = 0; j < n_x; ++j) probs[n_z + j] = rng.uniform();
  const Tensor attn = Tensor::from_data({n_z + n_x, n_z + n_x}, probs);

  const auto [kept, rec] = eliminate(joint, n_z, 0.5, attn, 1);
  const Tensor kept_search = slice_rows(kept, n_z, kept.dim(0));
  const Tensor restored = restore_tokens(kept_search, rec);
  REQUIRE(restored.dim(0) == n_x);

  const auto rv = restored.values();
  const auto jv = joint.values();
  std::vector<bool> is_kept(n_x, false);
  for (std::size_t i : rec.kept_indices) is_kept[i] = true;
  for (std::size_t i = 0; i < n_x; ++i) {
    if (is_kept[i]) {
      CHECK(test_util::bitwise_equal(rv.subspan(i * d, d), jv.subspan((n_z + i) * d, d)));
    } else {
      for (std::size_t k = 0; k < d; ++k) CHECK(rv[i * d + k] == 0.0);
    }
  }

  // Re-masking the restored sequence recovers the eliminated one bitwise.
  const Tensor remasked = gather_rows(restored, rec.kept_indices);
  CHECK(test_util::bitwise_equal(remasked.values(), kept_search.values()));
}

TEST_CASE("restore_tokens rejects a record of the wrong length") {
  Rng rng(83);
  const Tensor x = Tensor::randn(rng, {3, 2});
  EliminationRecord rec;
  rec.kept_indices = {0, 1};
  rec.original_len = 4;
  CHECK_THROWS_AS(restore_tokens(x, rec), std::invalid_argument);
}

TEST_CASE("tokens_to_grid places token i at (i / cols, i mod cols)") {
  Rng rng(84);
  const std::size_t rows = 3, cols = 5, d = 2;
  const Tensor x = Tensor::randn(rng, {rows * cols, d});
  const Tensor fm = tokens_to_grid(x, Grid{rows, cols});
  REQUIRE(fm.shape() == Shape{rows, cols, d});
  const auto xv = x.values(), fv = fm.values();
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::size_t r = i / cols, c = i % cols;
    CHECK(test_util::bitwise_equal(fv.subspan((r * cols + c) * d, d), xv.subspan(i * d, d)));
  }
  const Tensor back = grid_to_tokens(fm);
  CHECK(test_util::bitwise_equal(back.values(), x.values()));
}

TEST_CASE("a 256-token sequence reshapes to a 16x16 map") {
  Rng rng(85);
  const Tensor x = Tensor::randn(rng, {256, 4});
  const Tensor fm = tokens_to_grid(x, Grid{16, 16});
  CHECK(fm.shape() == Shape{16, 16, 4});
}

TEST_CASE("grid reshapes validate their inputs") {
  Rng rng(86);
  const Tensor x = Tensor::randn(rng, {6, 2});
  CHECK_THROWS_AS(tokens_to_grid(x, Grid{2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(grid_to_tokens(x), std::invalid_argument);
}

TEST_CASE("roi_align reproduces constants bitwise") {
  const double c = 0.7375;
  const Tensor fm = Tensor::full({5, 6, 3}, c);
  const std::vector<Box> rois = {
      {0.8, 1.1, 2.3, 1.7}, {0.0, 0.0, 6.0, 5.0}, {-1.5, 3.2, 9.0, 4.0}  // overhangs clamp
  };
  for (const Box& roi : rois) {
    for (std::size_t sampling : {1u, 2u, 4u}) {
      const Tensor out = roi_align(fm, roi, 3, 2, sampling);
      for (double v : out.values()) {
        CHECK(std::memcmp(&v, &c, sizeof(double)) == 0);
      }
    }
  }
}

TEST_CASE("roi_align center of a 2x2 ramp is 1.5") {
  const Tensor fm = Tensor::from_data({2, 2, 1}, {0.0, 1.0, 2.0, 3.0});
  const Tensor out = roi_align(fm, Box{0.0, 0.0, 2.0, 2.0}, 1, 1, 1);
  REQUIRE(out.numel() == 1);
  CHECK(out.values()[0] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("roi_align over the full extent with one sample is the identity") {
  Rng rng(87);
  const Tensor fm = Tensor::randn(rng, {4, 4, 3});
  const Tensor out = roi_align(fm, Box{0.0, 0.0, 4.0, 4.0}, 4, 4, 1);
  CHECK(test_util::max_abs_diff(out.values(), fm.values()) < 1e-6);
}

TEST_CASE("roi_align matches a weight-form bilinear oracle") {
  Rng rng(88);
  const Tensor fm = Tensor::randn(rng, {5, 6, 3});
  const std::vector<Box> rois = {
      {0.7, 0.9, 3.3, 2.6}, {2.0, 1.0, 5.5, 6.0},  // second roi overhangs
  };
  for (const Box& roi : rois) {
    for (std::size_t sampling : {1u, 2u, 3u}) {
      const Tensor out = roi_align(fm, roi, 3, 2, sampling);
      const auto want = roi_ref(fm, roi, 3, 2, sampling);
      CHECK(test_util::max_abs_diff(out.values(), want) < 1e-9);
    }
  }
}

TEST_CASE("roi_align validates its arguments") {
  Rng rng(89);
  const Tensor fm = Tensor::randn(rng, {4, 4, 2});
  CHECK_THROWS_AS(roi_align(fm, Box{0, 0, 0.0, 2.0}, 2, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(roi_align(fm, Box{0, 0, 2.0, -1.0}, 2, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(roi_align(fm, Box{0, 0, 2.0, 2.0}, 0, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(roi_align(fm, Box{0, 0, 2.0, 2.0}, 2, 2, 0), std::invalid_argument);
  const Tensor flat = Tensor::randn(rng, {4, 4});
  CHECK_THROWS_AS(roi_align(flat, Box{0, 0, 2.0, 2.0}, 2, 2, 1), std::invalid_argument);
}

TEST_CASE("extract_dynamic_tokens over the full crop is the restored search block") {
  Rng rng(90);
  const std::size_t n_z = 16, d = 5;
  const Grid grid{4, 4};  // template and search grids coincide in this setup
  StagedJoint joint;
  joint.h_v = Tensor::randn(rng, {n_z + grid.count(), d});
  joint.h_t = Tensor::randn(rng, {n_z + grid.count(), d});
  joint.record_v.original_len = grid.count();
  joint.record_v.kept_indices.resize(grid.count());
  std::iota(joint.record_v.kept_indices.begin(), joint.record_v.kept_indices.end(), 0);
  joint.record_t = joint.record_v;
  std::map<std::size_t, StagedJoint> staged;
  staged.emplace(4, joint);

  ExtractConfig cfg;
  cfg.patch_size = 8;
  cfg.search_grid = grid;
  cfg.template_grid = grid;
  cfg.sampling = 1;
  const Box full{0.0, 0.0, 8.0 * grid.cols, 8.0 * grid.rows};
  const auto out = extract_dynamic_tokens(staged, n_z, full, cfg);

  REQUIRE(out.count(4) == 1);
  const CacheEntry& e = out.at(4);
  REQUIRE(e.m_v.shape() == Shape{grid.count(), d});
  const Tensor want_v = slice_rows(joint.h_v, n_z, joint.h_v.dim(0));
  const Tensor want_t = slice_rows(joint.h_t, n_z, joint.h_t.dim(0));
  CHECK(test_util::max_abs_diff(e.m_v.values(), want_v.values()) < 1e-6);
  CHECK(test_util::max_abs_diff(e.m_t.values(), want_t.values()) < 1e-6);
}

TEST_CASE("extract_dynamic_tokens preserves constants") {
  const std::size_t n_z = 4, d = 3;
  const double c = -1.25;
  StagedJoint joint;
  joint.h_v = Tensor::full({n_z + 16, d}, c);
  joint.h_t = Tensor::full({n_z + 16, d}, c);
  joint.record_v.original_len = 16;
  joint.record_v.kept_indices.resize(16);
  std::iota(joint.record_v.kept_indices.begin(), joint.record_v.kept_indices.end(), 0);
  joint.record_t = joint.record_v;
  std::map<std::size_t, StagedJoint> staged;
  staged.emplace(7, joint);

  ExtractConfig cfg;
  cfg.patch_size = 16;
  cfg.search_grid = Grid{4, 4};
  cfg.template_grid = Grid{2, 2};
  cfg.sampling = 2;
  // Interior bbox: every sample reads the constant map directly.
  const auto out = extract_dynamic_tokens(staged, n_z, Box{8.0, 12.0, 30.0, 24.0}, cfg);
  REQUIRE(out.at(7).m_v.shape() == Shape{4, d});
  for (double v : out.at(7).m_v.values()) CHECK(v == c);
  for (double v : out.at(7).m_t.values()) CHECK(v == c);
}

TEST_CASE("extract_dynamic_tokens equals the composed restore/reshape/crop oracle") {
  Rng rng(91);
  const std::size_t n_z = 3, d = 4;
  const Grid search{4, 5};
  const Grid tmpl{2, 2};
  const std::size_t kept_n = 12;

  StagedJoint joint;
  joint.h_v = Tensor::randn(rng, {n_z + kept_n, d});
  joint.h_t = Tensor::randn(rng, {n_z + kept_n, d});
  // A genuine elimination record: a strict subset of positions survived.
  joint.record_v.original_len = search.count();
  joint.record_v.kept_indices = {0, 1, 3, 4, 6, 8, 9, 11, 14, 15, 17, 19};
  joint.record_t.original_len = search.count();
  joint.record_t.kept_indices = {1, 2, 3, 5, 6, 7, 10, 12, 13, 16, 18, 19};
  std::map<std::size_t, StagedJoint> staged;
  staged.emplace(4, joint);

  ExtractConfig cfg;
  cfg.patch_size = 8;
  cfg.search_grid = search;
  cfg.template_grid = tmpl;
  cfg.sampling = 2;
  const Box bbox{5.0, 3.0, 21.0, 17.0};  // search-crop pixels
  const auto out = extract_dynamic_tokens(staged, n_z, bbox, cfg);

  for (int mod = 0; mod < 2; ++mod) {
    const Tensor& h = mod == 0 ? joint.h_v : joint.h_t;
    const auto& kept = mod == 0 ? joint.record_v.kept_indices : joint.record_t.kept_indices;
    // Hand-built restore: scatter kept rows into a zero grid buffer.
    std::vector<double> grid_buf(search.count() * d, 0.0);
    const auto hv = h.values();
    for (std::size_t i = 0; i < kept.size(); ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        grid_buf[kept[i] * d + k] = hv[(n_z + i) * d + k];
      }
    }
    const Tensor fm = Tensor::from_data({search.rows, search.cols, d}, grid_buf);
    const Box roi{bbox.x / 8.0, bbox.y / 8.0, bbox.w / 8.0, bbox.h / 8.0};
    const auto want = roi_ref(fm, roi, tmpl.rows, tmpl.cols, 2);
    const Tensor& got = mod == 0 ? out.at(4).m_v : out.at(4).m_t;
    REQUIRE(got.shape() == Shape{tmpl.count(), d});
    CHECK(test_util::max_abs_diff(got.values(), want) < 1e-9);
  }
}

TEST_CASE("extract_dynamic_tokens contract errors") {
  Rng rng(92);
  StagedJoint joint;
  joint.h_v = Tensor::randn(rng, {6, 4});
  // h_t left undefined: missing modality.
  joint.record_v.original_len = 4;
  joint.record_v.kept_indices = {0, 1, 2, 3};
  std::map<std::size_t, StagedJoint> staged;
  staged.emplace(4, joint);
  ExtractConfig cfg;
  cfg.patch_size = 8;
  cfg.search_grid = Grid{2, 2};
  cfg.template_grid = Grid{2, 2};
  CHECK_THROWS_AS(extract_dynamic_tokens(staged, 2, Box{0, 0, 16, 16}, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(extract_dynamic_tokens(staged, 2, Box{0, 0, 0, 16}, cfg),
                  std::invalid_argument);
}

TEST_CASE("maybe_update keeps the cache when the score gate is closed") {
  Rng rng(93);
  DynamicTokenCache cache = init_cache(random_staged_entries(rng, 4, 3));
  const auto before_v = std::vector<double>(cache.entries.at(4).m_v.values().begin(),
                                            cache.entries.at(4).m_v.values().end());
  const auto staged = random_staged_entries(rng, 4, 3);
  UpdatePolicy policy;
  policy.interval = 5;
  policy.score_threshold = 0.65;

  CHECK_FALSE(maybe_update(cache, staged, 10, 0.5, policy));
  CHECK(cache.last_update_frame == 0);
  CHECK(test_util::bitwise_equal(cache.entries.at(4).m_v.values(), before_v));
  // Idempotent while closed.
  CHECK_FALSE(maybe_update(cache, staged, 11, 0.5, policy));
  CHECK(test_util::bitwise_equal(cache.entries.at(4).m_v.values(), before_v));
  // Equal-to-threshold stays closed: the comparison is strict.
  CHECK_FALSE(maybe_update(cache, staged, 12, 0.65, policy));
}

TEST_CASE("maybe_update replaces entries when both gates open") {
  Rng rng(94);
  DynamicTokenCache cache = init_cache(random_staged_entries(rng, 4, 3));
  const auto staged = random_staged_entries(rng, 4, 3);
  UpdatePolicy policy;
  policy.interval = 5;
  policy.score_threshold = 0.65;

  CHECK(maybe_update(cache, staged, 7, 0.9, policy));
  CHECK(cache.last_update_frame == 7);
  CHECK(cache.source_score == 0.9);
  CHECK(entries_equal(cache.entries.at(4), staged.at(4)));
  CHECK(entries_equal(cache.entries.at(7), staged.at(7)));
}

TEST_CASE("maybe_update enforces the frame interval") {
  Rng rng(95);
  DynamicTokenCache cache = init_cache(random_staged_entries(rng, 4, 3));
  cache.last_update_frame = 6;
  const auto staged = random_staged_entries(rng, 4, 3);
  UpdatePolicy policy;
  policy.interval = 5;
  policy.score_threshold = 0.65;

  CHECK_FALSE(maybe_update(cache, staged, 10, 0.9, policy));  // 10 - 6 < 5
  CHECK(cache.last_update_frame == 6);
  CHECK(maybe_update(cache, staged, 11, 0.9, policy));  // 11 - 6 >= 5
  CHECK(cache.last_update_frame == 11);

  policy.interval = 0;
  CHECK_THROWS_AS(maybe_update(cache, staged, 12, 0.9, policy), std::invalid_argument);
}

TEST_CASE("init_cache adopts the staged entries at frame zero") {
  Rng rng(96);
  const auto staged = random_staged_entries(rng, 4, 3);
  const DynamicTokenCache a = init_cache(staged);
  const DynamicTokenCache b = init_cache(staged);
  CHECK(a.last_update_frame == 0);
  CHECK(a.entries.size() == staged.size());
  CHECK(entries_equal(a.entries.at(4), staged.at(4)));
  CHECK(entries_equal(a.entries.at(4), b.entries.at(4)));
  CHECK(entries_equal(a.entries.at(7), b.entries.at(7)));
}

TEST_CASE("dump_cache writes a loadable container with layer names") {
  Rng rng(97);
  const DynamicTokenCache cache = init_cache(random_staged_entries(rng, 3, 2));
  const auto path =
      (std::filesystem::temp_directory_path() / "stmt_cache_dump_test.bin").string();
  dump_cache(path, cache);

  const auto entries = load_checkpoint(path);
  REQUIRE(entries.size() == 4);
  std::map<std::string, Tensor> by_name;
  for (const auto& e : entries) by_name.emplace(e.name, e.tensor);
  REQUIRE(by_name.count("layer4.rgb") == 1);
  REQUIRE(by_name.count("layer4.tir") == 1);
  REQUIRE(by_name.count("layer7.rgb") == 1);
  REQUIRE(by_name.count("layer7.tir") == 1);
  CHECK(test_util::bitwise_equal(by_name.at("layer4.rgb").values(),
                                 cache.entries.at(4).m_v.values()));
  CHECK(test_util::bitwise_equal(by_name.at("layer7.tir").values(),
                                 cache.entries.at(7).m_t.values()));
  std::filesystem::remove(path);
}
