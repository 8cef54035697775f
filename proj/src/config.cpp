#include "stmt/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "stmt/sequence.hpp"

namespace stmt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  throw std::runtime_error("config line " + std::to_string(line_no) + ": " + what);
}

double to_double(const std::string& v, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) parse_fail(line_no, "trailing characters in number '" + v + "'");
    return d;
  } catch (const std::logic_error&) {
    parse_fail(line_no, "expected a number, got '" + v + "'");
  }
}

std::size_t to_size(const std::string& v, std::size_t line_no) {
  const double d = to_double(v, line_no);
  if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d))) {
    parse_fail(line_no, "expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(d);
}

bool to_bool(const std::string& v, std::size_t line_no) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  parse_fail(line_no, "expected true/false, got '" + v + "'");
}

std::set<std::size_t> to_index_set(const std::string& v, std::size_t line_no) {
  std::set<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.insert(to_size(trim(item), line_no));
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_index_set(const std::set<std::size_t>& s) {
  std::string out;
  for (std::size_t v : s) {
    if (!out.empty()) out += ",";
    out += std::to_string(v);
  }
  return out;
}

using Setter = std::function<void(Config&, const std::string&, std::size_t)>;
using Getter = std::function<std::string(const Config&)>;

struct Key {
  Setter set;
  Getter get;
};

#define STMT_KEY_DOUBLE(field)                                                      \
  {                                                                                 \
    [](Config& c, const std::string& v, std::size_t ln) { c.field = to_double(v, ln); }, \
        [](const Config& c) { return format_double(c.field); }                     \
  }
#define STMT_KEY_SIZE(field)                                                        \
  {                                                                                 \
    [](Config& c, const std::string& v, std::size_t ln) { c.field = to_size(v, ln); }, \
        [](const Config& c) { return std::to_string(c.field); }                    \
  }
#define STMT_KEY_BOOL(field)                                                        \
  {                                                                                 \
    [](Config& c, const std::string& v, std::size_t ln) { c.field = to_bool(v, ln); }, \
        [](const Config& c) { return c.field ? "true" : "false"; }                 \
  }
#define STMT_KEY_SET(field)                                                         \
  {                                                                                 \
    [](Config& c, const std::string& v, std::size_t ln) { c.field = to_index_set(v, ln); }, \
        [](const Config& c) { return format_index_set(c.field); }                  \
  }

const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = {
      {"embed_dim", STMT_KEY_SIZE(embed_dim)},
      {"num_heads", STMT_KEY_SIZE(num_heads)},
      {"depth", STMT_KEY_SIZE(depth)},
      {"patch_size", STMT_KEY_SIZE(patch_size)},
      {"mlp_ratio", STMT_KEY_DOUBLE(mlp_ratio)},
      {"template_size", STMT_KEY_SIZE(template_size)},
      {"search_size", STMT_KEY_SIZE(search_size)},
      {"insert_layers", STMT_KEY_SET(insert_layers)},
      {"tf_layers", STMT_KEY_SET(tf_layers)},
      {"enable_modality_enhancement", STMT_KEY_BOOL(enable_modality_enhancement)},
      {"enable_dynamic_tokens", STMT_KEY_BOOL(enable_dynamic_tokens)},
      {"tie_dynamic_ca", STMT_KEY_BOOL(tie_dynamic_ca)},
      {"enable_elimination", STMT_KEY_BOOL(enable_elimination)},
      {"keep_rate", STMT_KEY_DOUBLE(keep_rate)},
      {"update_interval",
       {[](Config& c, const std::string& v, std::size_t ln) {
          c.update_interval = static_cast<int>(to_size(v, ln));
        },
        [](const Config& c) { return std::to_string(c.update_interval); }}},
      {"update_threshold", STMT_KEY_DOUBLE(update_threshold)},
      {"roi_sampling", STMT_KEY_SIZE(roi_sampling)},
      {"template_factor", STMT_KEY_DOUBLE(template_factor)},
      {"search_factor", STMT_KEY_DOUBLE(search_factor)},
      {"pixel_mean", STMT_KEY_DOUBLE(pixel_mean)},
      {"pixel_std", STMT_KEY_DOUBLE(pixel_std)},
      {"seed",
       {[](Config& c, const std::string& v, std::size_t ln) {
          c.seed = static_cast<std::uint64_t>(to_size(v, ln));
        },
        [](const Config& c) { return std::to_string(c.seed); }}},
      {"module_lr", STMT_KEY_DOUBLE(module_lr)},
      {"backbone_lr_factor", STMT_KEY_DOUBLE(backbone_lr_factor)},
      {"head_lr_factor", STMT_KEY_DOUBLE(head_lr_factor)},
      {"weight_decay", STMT_KEY_DOUBLE(weight_decay)},
      {"batch_size", STMT_KEY_SIZE(batch_size)},
      {"train_steps", STMT_KEY_SIZE(train_steps)},
      {"checkpoint_every", STMT_KEY_SIZE(checkpoint_every)},
      {"loss_cls_weight", STMT_KEY_DOUBLE(loss_cls_weight)},
      {"loss_offset_weight", STMT_KEY_DOUBLE(loss_offset_weight)},
      {"loss_size_weight", STMT_KEY_DOUBLE(loss_size_weight)},
      {"jitter_shift", STMT_KEY_DOUBLE(jitter_shift)},
      {"jitter_scale", STMT_KEY_DOUBLE(jitter_scale)},
      {"detach_dynamic", STMT_KEY_BOOL(detach_dynamic)},
      {"t_window", STMT_KEY_SIZE(t_window)},
      {"score_sigma", STMT_KEY_DOUBLE(score_sigma)},
  };
  return table;
}

#undef STMT_KEY_DOUBLE
#undef STMT_KEY_SIZE
#undef STMT_KEY_BOOL
#undef STMT_KEY_SET

}  // namespace

void Config::validate() const {
  const auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (embed_dim == 0 || depth == 0 || patch_size == 0) fail("model dimensions must be positive");
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    fail("embed_dim must be divisible by num_heads");
  }
  if (template_size % patch_size != 0 || search_size % patch_size != 0) {
    fail("crop sizes must be divisible by patch_size");
  }
  if (template_size >= search_size) fail("search crop must exceed the template crop");
  for (std::size_t layer : insert_layers) {
    if (layer == 0 || layer >= depth) fail("insert layer outside [1, depth)");
  }
  for (std::size_t layer : tf_layers) {
    if (insert_layers.count(layer) == 0) fail("tf_layers must be a subset of insert_layers");
  }
  if (keep_rate <= 0.0 || keep_rate > 1.0) fail("keep_rate must be in (0, 1]");
  if (update_interval < 1) fail("update_interval must be >= 1");
  if (update_threshold < 0.0 || update_threshold > 1.0) fail("update_threshold must be in [0,1]");
  if (roi_sampling == 0) fail("roi_sampling must be positive");
  if (template_factor < 1.0 || search_factor < 1.0) fail("crop factors must be >= 1");
  if (pixel_std <= 0.0) fail("pixel_std must be positive");
  if (mlp_ratio <= 0.0) fail("mlp_ratio must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (score_sigma <= 0.0) fail("score_sigma must be positive");
}

void apply_config_line(Config& cfg, const std::string& raw, std::size_t line_no) {
  std::string line = raw;
  const auto hash = line.find('#');
  if (hash != std::string::npos) line.resize(hash);
  line = trim(line);
  if (line.empty()) return;
  const auto eq = line.find('=');
  if (eq == std::string::npos) parse_fail(line_no, "expected 'key = value'");
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  const auto it = key_table().find(key);
  if (it == key_table().end()) parse_fail(line_no, "unknown key '" + key + "'");
  it->second.set(cfg, value, line_no);
}

Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  Config cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    apply_config_line(cfg, line, ++line_no);
  }
  cfg.validate();
  return cfg;
}

void save_config(const std::string& path, const Config& cfg) {
  std::string text;
  for (const auto& [name, key] : key_table()) {
    text += name + " = " + key.get(cfg) + "\n";
  }
  write_file_atomic(path, text);
}

}  // namespace stmt
