#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace tsal {

/// Axis-aligned query rectangle in image pixels. Containment is inclusive on
/// all four edges.
struct WindowRect {
  int x = 0;
  int y = 0;
  int w = 1000;
  int h = 1000;

  bool contains(double px, double py) const { return px >= x && px <= x + w && py >= y && py <= y + h; }
  double area() const { return static_cast<double>(w) * static_cast<double>(h); }
  friend bool operator==(const WindowRect&, const WindowRect&) = default;
};

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

struct ImageBounds {
  int width = 0;
  int height = 0;
};

struct CropObjectiveBreakdown {
  double term_candidates = 0.0;
  double term_overlap = 0.0;
  double term_center = 0.0;
  double total = 0.0;
};

inline constexpr double kDefaultCenterWeight = 0.01;
inline constexpr int kDefaultSearchStride = 25;

double intersection_area(const WindowRect& a, const WindowRect& b);

/// Coverage, overlap and centering terms of a window around `anchor`.
/// term_candidates = 1 - (candidates inside)/(all candidates in the image),
/// term_overlap = max over `prev` of |r ∩ q| / |r|,
/// term_center = lambda * |r_c - anchor|^2 / (w^2 + h^2).
/// Throws std::invalid_argument if the window does not contain the anchor.
CropObjectiveBreakdown crop_objective(const WindowRect& r, PixelPoint anchor, std::span<const PixelPoint> cands,
                                      std::span<const WindowRect> prev, double lambda = kDefaultCenterWeight);

// Window of the given size centred on the anchor, shifted to stay in bounds.
WindowRect centered_window(PixelPoint anchor, ImageBounds image, int w, int h);

/// Grid search over in-bounds windows containing the anchor. Offsets run from
/// the low end of the feasible range in steps of `stride`, plus the high end and
/// the centred window. Ties go to the smallest (y, x).
WindowRect propose_window(PixelPoint anchor, std::span<const PixelPoint> cands, std::span<const WindowRect> prev,
                          ImageBounds image, int w, int h, int stride = kDefaultSearchStride,
                          double lambda = kDefaultCenterWeight);

}  // namespace tsal
