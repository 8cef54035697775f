#include "stmt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "stmt/sequence.hpp"

namespace fs = std::filesystem;

namespace stmt {

namespace {

struct Rgb {
  double r, g, b;
};

// Hue in [0,1), full saturation/value scaled by v.
Rgb hue_to_rgb(double hue, double v) {
  const double h = (hue - std::floor(hue)) * 6.0;
  const int sector = static_cast<int>(h);
  const double f = h - sector;
  const double p = 0.1 * v, q = v * (1.0 - 0.9 * f), t = v * (0.1 + 0.9 * f);
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

struct Ellipse {
  double cx, cy, rx, ry;

  bool contains(double x, double y) const {
    const double u = (x - cx) / rx, v = (y - cy) / ry;
    return u * u + v * v <= 1.0;
  }
  Box bounds() const { return {cx - rx, cy - ry, 2.0 * rx, 2.0 * ry}; }
};

struct Walker {
  double x, y;

  void step(Rng& rng, double step_amp, double dx, double dy, double lo, double hi) {
    x = std::clamp(x + dx + step_amp * (2.0 * rng.uniform() - 1.0), lo, hi);
    y = std::clamp(y + dy + step_amp * (2.0 * rng.uniform() - 1.0), lo, hi);
  }
};

}  // namespace

void SynthSpec::validate() const {
  const auto fail = [](const std::string& what) {
    throw std::invalid_argument("synth spec: " + what);
  };
  if (length < 1) fail("length must be positive");
  if (image_size < 16) fail("image_size must be at least 16");
  if (target_min <= 1.0 || target_max < target_min) fail("bad target size range");
  if (target_max >= image_size / 2.0) fail("target larger than the image allows");
  if (illum_period <= 0.0) fail("illum_period must be positive");
  if (distractors < 0 || occluder_events < 0 || occluder_len < 0) fail("negative counts");
}

SynthSequence render_sequence(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const int n = spec.image_size;
  const double margin = spec.target_max / 2.0 + 2.0;

  // Static background texture, rendered once per sequence.
  std::vector<double> bg(static_cast<std::size_t>(n) * n);
  for (double& v : bg) v = spec.noise * (2.0 * rng.uniform() - 1.0);

  // Target state.
  const double w0 = rng.uniform(spec.target_min, spec.target_max);
  const double h0 = rng.uniform(spec.target_min, spec.target_max);
  Walker target{rng.uniform(margin, n - margin), rng.uniform(margin, n - margin)};
  const double hue0 = rng.uniform();

  // Distractors share the target's initial look in the visible band but run
  // their own walks and stay cold in the thermal band.
  std::vector<Walker> dist(static_cast<std::size_t>(spec.distractors));
  std::vector<double> dist_w(dist.size()), dist_h(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    dist[i] = {rng.uniform(margin, n - margin), rng.uniform(margin, n - margin)};
    dist_w[i] = rng.uniform(spec.target_min, spec.target_max);
    dist_h[i] = rng.uniform(spec.target_min, spec.target_max);
  }

  // Occlusion windows: [start, start + occluder_len) frames each. Drawn from
  // a forked stream so the occluder count never disturbs the target's walk
  // (occlusion must stay purely visual).
  Rng occ_rng = rng.fork(1);
  std::vector<int> occ_start(static_cast<std::size_t>(spec.occluder_events));
  std::vector<double> occ_side(occ_start.size());
  for (std::size_t i = 0; i < occ_start.size(); ++i) {
    occ_start[i] = spec.length > 1 ? static_cast<int>(occ_rng.uniform_int(
                                         static_cast<std::uint64_t>(spec.length))) : 0;
    occ_side[i] = occ_rng.uniform();  // which side of the target the occluder covers
  }

  SynthSequence out;
  out.frames.reserve(static_cast<std::size_t>(spec.length));
  out.groundtruth.reserve(static_cast<std::size_t>(spec.length));

  for (int t = 0; t < spec.length; ++t) {
    const double growth = 1.0 + spec.shape_drift * t;
    const Ellipse tgt{target.x, target.y, 0.5 * w0 * growth, 0.5 * h0 * growth};
    const double hue = hue0 + spec.hue_drift * t;
    const Rgb tgt_rgb = hue_to_rgb(hue, 0.9);
    const Rgb dist_rgb = hue_to_rgb(hue0, 0.9);  // frozen at the initial appearance
    const double gain =
        1.0 + spec.illum_amp * std::sin(2.0 * M_PI * static_cast<double>(t) / spec.illum_period);
    const double tir_target = std::max(0.3, 0.9 - spec.tir_drift * t);

    ImageU8 vis;
    vis.width = vis.height = n;
    vis.channels = 3;
    vis.data.resize(static_cast<std::size_t>(n) * n * 3);
    ImageU8 tir;
    tir.width = tir.height = n;
    tir.channels = 1;
    tir.data.resize(static_cast<std::size_t>(n) * n);

    std::vector<Ellipse> dist_shapes;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      dist_shapes.push_back({dist[i].x, dist[i].y, 0.5 * dist_w[i], 0.5 * dist_h[i]});
    }

    // Occluder rectangle for this frame, if any event is active.
    bool occluded = false;
    Box occ{};
    for (std::size_t i = 0; i < occ_start.size(); ++i) {
      if (t >= occ_start[i] && t < occ_start[i] + spec.occluder_len) {
        occluded = true;
        const Box tb = tgt.bounds();
        // Cover roughly half the target, hanging off one side.
        occ = {occ_side[i] < 0.5 ? tb.x - 1.0 : tb.x + 0.5 * tb.w, tb.y - 1.0, 0.5 * tb.w + 2.0,
               tb.h + 2.0};
        break;
      }
    }

    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double fx = x + 0.5, fy = y + 0.5;
        const double tex = bg[static_cast<std::size_t>(y) * n + x];
        double r = 0.35 + tex, g = 0.35 + tex, b = 0.35 + tex;
        double heat = 0.15 + tex;

        for (std::size_t i = 0; i < dist_shapes.size(); ++i) {
          if (dist_shapes[i].contains(fx, fy)) {
            r = dist_rgb.r;
            g = dist_rgb.g;
            b = dist_rgb.b;
            heat = 0.35;
          }
        }
        if (tgt.contains(fx, fy)) {
          r = tgt_rgb.r;
          g = tgt_rgb.g;
          b = tgt_rgb.b;
          heat = tir_target;
        }
        if (occluded && fx >= occ.x && fx < occ.x + occ.w && fy >= occ.y && fy < occ.y + occ.h) {
          r = g = b = 0.5;
          heat = 0.25;
        }

        const std::size_t pi = (static_cast<std::size_t>(y) * n + x);
        vis.data[pi * 3 + 0] = quantize(r * gain);
        vis.data[pi * 3 + 1] = quantize(g * gain);
        vis.data[pi * 3 + 2] = quantize(b * gain);
        tir.data[pi] = quantize(heat);
      }
    }

    out.frames.push_back({std::move(vis), std::move(tir)});
    out.groundtruth.push_back(tgt.bounds());

    target.step(rng, spec.walk_step, spec.drift_x, spec.drift_y, margin, n - margin);
    for (auto& d : dist) d.step(rng, spec.walk_step, -spec.drift_x, spec.drift_y, margin, n - margin);
  }
  return out;
}

void write_synth_sequence(const SynthSpec& spec, std::uint64_t seed,
                          const std::string& out_dir) {
  const SynthSequence seq = render_sequence(spec, seed);
  const fs::path root(out_dir);
  fs::create_directories(root / "visible");
  fs::create_directories(root / "infrared");
  char buf[32];
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%06zu", i + 1);
    write_ppm((root / "visible" / (std::string(buf) + ".ppm")).string(), seq.frames[i].visible);
    write_pgm((root / "infrared" / (std::string(buf) + ".pgm")).string(),
              seq.frames[i].infrared);
  }
  write_boxes((root / "groundtruth.txt").string(), seq.groundtruth);
}

namespace {

using SpecSetter = std::function<void(SynthSpec&, double)>;
using SpecGetter = std::function<double(const SynthSpec&)>;

struct SpecKey {
  SpecSetter set;
  SpecGetter get;
};

#define STMT_SPEC_KEY(field)                                     \
  {                                                              \
    [](SynthSpec& s, double v) { s.field = v; },                 \
        [](const SynthSpec& s) { return static_cast<double>(s.field); } \
  }
#define STMT_SPEC_KEY_INT(field)                                 \
  {                                                              \
    [](SynthSpec& s, double v) { s.field = static_cast<int>(v); }, \
        [](const SynthSpec& s) { return static_cast<double>(s.field); } \
  }

const std::map<std::string, SpecKey>& spec_keys() {
  static const std::map<std::string, SpecKey> table = {
      {"length", STMT_SPEC_KEY_INT(length)},
      {"image_size", STMT_SPEC_KEY_INT(image_size)},
      {"target_min", STMT_SPEC_KEY(target_min)},
      {"target_max", STMT_SPEC_KEY(target_max)},
      {"walk_step", STMT_SPEC_KEY(walk_step)},
      {"drift_x", STMT_SPEC_KEY(drift_x)},
      {"drift_y", STMT_SPEC_KEY(drift_y)},
      {"hue_drift", STMT_SPEC_KEY(hue_drift)},
      {"shape_drift", STMT_SPEC_KEY(shape_drift)},
      {"illum_amp", STMT_SPEC_KEY(illum_amp)},
      {"illum_period", STMT_SPEC_KEY(illum_period)},
      {"tir_drift", STMT_SPEC_KEY(tir_drift)},
      {"distractors", STMT_SPEC_KEY_INT(distractors)},
      {"occluder_events", STMT_SPEC_KEY_INT(occluder_events)},
      {"occluder_len", STMT_SPEC_KEY_INT(occluder_len)},
      {"noise", STMT_SPEC_KEY(noise)},
  };
  return table;
}

#undef STMT_SPEC_KEY
#undef STMT_SPEC_KEY_INT

}  // namespace

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("synth spec: cannot open " + path);
  SynthSpec spec;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string key, eq;
    double value = 0.0;
    if (!(ss >> key)) continue;
    if (!(ss >> eq >> value) || eq != "=") {
      throw std::runtime_error("synth spec line " + std::to_string(line_no) +
                               ": expected 'key = value'");
    }
    const auto it = spec_keys().find(key);
    if (it == spec_keys().end()) {
      throw std::runtime_error("synth spec line " + std::to_string(line_no) + ": unknown key '" +
                               key + "'");
    }
    it->second.set(spec, value);
  }
  spec.validate();
  return spec;
}

void save_synth_spec(const std::string& path, const SynthSpec& spec) {
  std::string text;
  char buf[64];
  for (const auto& [name, key] : spec_keys()) {
    std::snprintf(buf, sizeof(buf), "%.17g", key.get(spec));
    text += name + " = " + buf + "\n";
  }
  write_file_atomic(path, text);
}

}  // namespace stmt
