#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stmt/geometry.hpp"
#include "stmt/netpbm.hpp"

namespace stmt {

// On-disk sequence layout:
//   <dir>/visible/000001.ppm, 000002.ppm, ...
//   <dir>/infrared/000001.pgm, ...
//   <dir>/groundtruth.txt with one "x,y,w,h" line per frame
// Frames decode lazily; counts are validated up front.
class SequenceDir {
 public:
  SequenceDir() = default;

  const std::string& path() const { return path_; }
  std::string name() const;
  std::size_t size() const { return gt_.size(); }
  const std::vector<Box>& groundtruth() const { return gt_; }

  ImageU8 visible(std::size_t frame) const;   // frame is 0-based
  ImageU8 infrared(std::size_t frame) const;

  friend SequenceDir load_sequence(const std::string& path);

 private:
  std::string path_;
  std::vector<Box> gt_;
};

SequenceDir load_sequence(const std::string& path);

// Parses a single annotation line; fields may be separated by commas,
// spaces, or tabs. Throws std::runtime_error naming the line on failure.
Box parse_gt_line(const std::string& line, std::size_t line_no);

// One "x,y,w,h" line per box, LF endings, written atomically.
void write_boxes(const std::string& path, const std::vector<Box>& boxes);
std::vector<Box> read_boxes(const std::string& path);

// Sorted subdirectory names that look like sequences (have groundtruth.txt).
std::vector<std::string> list_sequences(const std::string& dataset_dir);

// Writes `text` to path via a temp file + rename.
void write_file_atomic(const std::string& path, const std::string& text);

}  // namespace stmt
