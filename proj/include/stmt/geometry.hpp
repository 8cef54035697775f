#pragma once

#include <algorithm>
#include <cmath>

namespace stmt {

// Axis-aligned box, top-left convention, pixel units.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool valid() const { return w >= 0.0 && h >= 0.0; }

  // Shrinks the box to fit inside [0,width)x[0,height) while keeping at
  // least min_side pixels of extent.
  Box clamped(double width, double height, double min_side = 1.0) const {
    Box b = *this;
    b.w = std::clamp(b.w, min_side, width);
    b.h = std::clamp(b.h, min_side, height);
    b.x = std::clamp(b.x, 0.0, width - b.w);
    b.y = std::clamp(b.y, 0.0, height - b.h);
    return b;
  }

  bool operator==(const Box&) const = default;
};

}  // namespace stmt
