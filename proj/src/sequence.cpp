#include "stmt/sequence.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace stmt {

namespace {

std::string frame_name(std::size_t frame_1based, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.%s", frame_1based, ext);
  return buf;
}

}  // namespace

Box parse_gt_line(const std::string& line, std::size_t line_no) {
  std::string norm = line;
  std::replace(norm.begin(), norm.end(), ',', ' ');
  std::replace(norm.begin(), norm.end(), '\t', ' ');
  std::istringstream ss(norm);
  double vals[4];
  for (double& v : vals) {
    if (!(ss >> v)) {
      throw std::runtime_error("groundtruth line " + std::to_string(line_no) +
                               ": expected 4 numeric fields in '" + line + "'");
    }
  }
  std::string extra;
  if (ss >> extra) {
    throw std::runtime_error("groundtruth line " + std::to_string(line_no) +
                             ": trailing content '" + extra + "'");
  }
  return {vals[0], vals[1], vals[2], vals[3]};
}

std::string SequenceDir::name() const { return fs::path(path_).filename().string(); }

ImageU8 SequenceDir::visible(std::size_t frame) const {
  return read_netpbm((fs::path(path_) / "visible" / frame_name(frame + 1, "ppm")).string());
}

ImageU8 SequenceDir::infrared(std::size_t frame) const {
  return read_netpbm((fs::path(path_) / "infrared" / frame_name(frame + 1, "pgm")).string());
}

SequenceDir load_sequence(const std::string& path) {
  const fs::path root(path);
  const fs::path gt_path = root / "groundtruth.txt";
  std::ifstream is(gt_path);
  if (!is) throw std::runtime_error("sequence: cannot open " + gt_path.string());

  SequenceDir seq;
  seq.path_ = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    seq.gt_.push_back(parse_gt_line(line, line_no));
  }
  if (seq.gt_.empty()) throw std::runtime_error("sequence: empty groundtruth in " + path);

  // Frames are 000001..00000N in both modality directories, no extras.
  const auto check_dir = [&](const char* sub, const char* ext) {
    for (std::size_t i = 1; i <= seq.gt_.size(); ++i) {
      const fs::path p = root / sub / frame_name(i, ext);
      if (!fs::exists(p)) {
        throw std::runtime_error("sequence: frame count mismatch, missing " + p.string());
      }
    }
    const fs::path extra = root / sub / frame_name(seq.gt_.size() + 1, ext);
    if (fs::exists(extra)) {
      throw std::runtime_error("sequence: frame count mismatch, unexpected " + extra.string());
    }
  };
  check_dir("visible", "ppm");
  check_dir("infrared", "pgm");
  return seq;
}

void write_file_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw std::runtime_error("write failure for " + tmp);
  }
  fs::rename(tmp, path);
}

void write_boxes(const std::string& path, const std::vector<Box>& boxes) {
  std::string text;
  char buf[128];
  for (const Box& b : boxes) {
    std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f\n", b.x, b.y, b.w, b.h);
    text += buf;
  }
  write_file_atomic(path, text);
}

std::vector<Box> read_boxes(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<Box> boxes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    boxes.push_back(parse_gt_line(line, line_no));
  }
  return boxes;
}

std::vector<std::string> list_sequences(const std::string& dataset_dir) {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dataset_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "groundtruth.txt")) {
      out.push_back(entry.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace stmt
