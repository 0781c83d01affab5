#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rloss/grid.hpp"

namespace rloss {

/// Connected same-label components of the labeled pixels (8-connectivity).
/// Each component lists its pixels in breadth-first order starting from its
/// top-left-most pixel (smallest row, then smallest column); neighbors are
/// visited in row-major offset order.
inline std::vector<std::vector<std::size_t>> scribble_components(const PartialLabeling& lab) {
  const int w = lab.width();
  const int h = lab.height();
  std::vector<char> seen(lab.pixel_count(), 0);
  std::vector<std::vector<std::size_t>> components;
  // Row-major scan reaches each component first at its top-left-most pixel.
  for (std::size_t start = 0; start < lab.pixel_count(); ++start) {
    if (!lab.is_labeled(start) || seen[start]) continue;
    const int label = lab.label(start);
    std::vector<std::size_t> order;
    std::deque<std::size_t> queue{start};
    seen[start] = 1;
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      order.push_back(p);
      const int px = static_cast<int>(p % static_cast<std::size_t>(w));
      const int py = static_cast<int>(p / static_cast<std::size_t>(w));
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int qx = px + dx;
          const int qy = py + dy;
          if ((dx == 0 && dy == 0) || qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
          const auto q = static_cast<std::size_t>(qy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(qx);
          if (seen[q] || lab.label(q) != label) continue;
          seen[q] = 1;
          queue.push_back(q);
        }
    }
    components.push_back(std::move(order));
  }
  return components;
}

/// Number of pixels a component of `length` pixels keeps at `ratio`:
/// ceil(ratio * length), at least one.
inline std::size_t kept_pixel_count(std::size_t length, double ratio) {
  // The small slack keeps e.g. 0.3 * 10 from rounding up to 4.
  const double want = std::ceil(ratio * static_cast<double>(length) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(want, 1.0)), 1, length);
}

/// Shortens every scribble component to a contiguous run (in traversal order)
/// centered on the component pixel nearest its centroid. Ratio 0 leaves a
/// single click per component.
inline PartialLabeling shorten_scribbles(const PartialLabeling& lab, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("scribble ratio must lie in [0, 1]");
  const auto w = static_cast<std::size_t>(lab.width());
  std::vector<int> out(lab.pixel_count(), PartialLabeling::kUnlabeled);
  for (const auto& comp : scribble_components(lab)) {
    double cx = 0.0, cy = 0.0;
    for (std::size_t p : comp) {
      cx += static_cast<double>(p % w);
      cy += static_cast<double>(p / w);
    }
    cx /= static_cast<double>(comp.size());
    cy /= static_cast<double>(comp.size());
    std::size_t center = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < comp.size(); ++i) {
      const double dx = static_cast<double>(comp[i] % w) - cx;
      const double dy = static_cast<double>(comp[i] / w) - cy;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best) {
        best = d2;
        center = i;
      }
    }
    const std::size_t keep = kept_pixel_count(comp.size(), ratio);
    const std::size_t half = (keep - 1) / 2;
    std::size_t first = center >= half ? center - half : 0;
    first = std::min(first, comp.size() - keep);
    for (std::size_t i = first; i < first + keep; ++i) out[comp[i]] = lab.label(comp[i]);
  }
  return PartialLabeling(lab.width(), lab.height(), lab.num_labels(), std::move(out));
}

}  // namespace rloss
