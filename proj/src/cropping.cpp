#include "tsal/cropping.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tsal {

namespace {

struct Range {
  int lo = 0;
  int hi = 0;
};

// Offsets o with 0 <= o <= extent - size and o <= a <= o + size.
Range feasible(double a, int size, int extent) {
  Range r;
  r.lo = std::max(0, static_cast<int>(std::ceil(a - size)));
  r.hi = std::min(extent - size, static_cast<int>(std::floor(a)));
  return r;
}

std::vector<int> offsets(Range r, int stride, int centered) {
  std::vector<int> out;
  for (int o = r.lo; o <= r.hi; o += stride) out.push_back(o);
  out.push_back(r.hi);
  out.push_back(centered);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void check_window_fits(ImageBounds image, int w, int h) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("window size must be positive");
  if (w > image.width || h > image.height) {
    throw std::invalid_argument("window " + std::to_string(w) + "x" + std::to_string(h) + " larger than image " +
                                std::to_string(image.width) + "x" + std::to_string(image.height));
  }
}

}  // namespace

double intersection_area(const WindowRect& a, const WindowRect& b) {
  const double dx = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double dy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  return dx > 0 && dy > 0 ? dx * dy : 0.0;
}

CropObjectiveBreakdown crop_objective(const WindowRect& r, PixelPoint anchor, std::span<const PixelPoint> cands,
                                      std::span<const WindowRect> prev, double lambda) {
  if (r.w <= 0 || r.h <= 0) throw std::invalid_argument("crop_objective: empty window");
  if (!r.contains(anchor.x, anchor.y)) throw std::invalid_argument("crop_objective: anchor outside window");
  CropObjectiveBreakdown out;
  if (!cands.empty()) {
    std::size_t inside = 0;
    for (const PixelPoint& p : cands) inside += r.contains(p.x, p.y) ? 1 : 0;
    out.term_candidates = 1.0 - static_cast<double>(inside) / static_cast<double>(cands.size());
  }
  for (const WindowRect& q : prev) out.term_overlap = std::max(out.term_overlap, intersection_area(r, q) / r.area());
  const double cx = r.x + r.w / 2.0 - anchor.x;
  const double cy = r.y + r.h / 2.0 - anchor.y;
  const double diag2 = static_cast<double>(r.w) * r.w + static_cast<double>(r.h) * r.h;
  out.term_center = lambda * (cx * cx + cy * cy) / diag2;
  out.total = out.term_candidates + out.term_overlap + out.term_center;
  return out;
}

WindowRect centered_window(PixelPoint anchor, ImageBounds image, int w, int h) {
  check_window_fits(image, w, h);
  const Range rx = feasible(anchor.x, w, image.width);
  const Range ry = feasible(anchor.y, h, image.height);
  if (rx.lo > rx.hi || ry.lo > ry.hi) throw std::invalid_argument("anchor outside image");
  const int x = std::clamp(static_cast<int>(std::lround(anchor.x - w / 2.0)), rx.lo, rx.hi);
  const int y = std::clamp(static_cast<int>(std::lround(anchor.y - h / 2.0)), ry.lo, ry.hi);
  return {x, y, w, h};
}

WindowRect propose_window(PixelPoint anchor, std::span<const PixelPoint> cands, std::span<const WindowRect> prev,
                          ImageBounds image, int w, int h, int stride, double lambda) {
  if (stride <= 0) throw std::invalid_argument("propose_window: stride must be positive");
  const WindowRect center = centered_window(anchor, image, w, h);
  const std::vector<int> xs = offsets(feasible(anchor.x, w, image.width), stride, center.x);
  const std::vector<int> ys = offsets(feasible(anchor.y, h, image.height), stride, center.y);

  WindowRect best = center;
  double best_total = 0.0;
  bool have = false;
  for (int y : ys) {
    for (int x : xs) {
      const WindowRect r{x, y, w, h};
      const double total = crop_objective(r, anchor, cands, prev, lambda).total;
      if (!have || total < best_total) {
        best = r;
        best_total = total;
        have = true;
      }
    }
  }
  return best;
}

}  // namespace tsal
