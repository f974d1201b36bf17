#include "porenet/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "porenet/error.hpp"

namespace porenet {

template <typename T>
Plane<T>::Plane(int width, int height, T fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorKind::kInvalidArgument,
                "raster dimensions must be positive, got " + std::to_string(width) + "x" + std::to_string(height));
  }
  values_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

template <typename T>
Plane<T>::Plane(int width, int height, std::vector<T> values) : width_(width), height_(height), values_(std::move(values)) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorKind::kInvalidArgument,
                "raster dimensions must be positive, got " + std::to_string(width) + "x" + std::to_string(height));
  }
  if (values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorKind::kInvalidArgument, "raster data length " + std::to_string(values_.size()) +
                                                 " does not match " + std::to_string(width) + "x" +
                                                 std::to_string(height));
  }
}

template <typename T>
T Plane<T>::clamped(int x, int y) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return (*this)(x, y);
}

template class Plane<float>;
template class Plane<double>;

GrayImage::GrayImage(int width, int height, float fill) : plane_(width, height, std::clamp(fill, 0.0f, 1.0f)) {}

GrayImage::GrayImage(int width, int height, std::vector<float> values) : plane_(width, height, std::move(values)) {
  for (float v : plane_.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(ErrorKind::kInvalidArgument, "intensity " + std::to_string(v) + " outside [0,1]");
    }
  }
}

void GrayImage::set(int x, int y, float v) { plane_(x, y) = std::clamp(v, 0.0f, 1.0f); }

AffineTransform AffineTransform::rotation_about(PointF center, double angle_deg) {
  // Screen-counterclockwise with y down is a negative angle in the math frame.
  const double th = -angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th);
  const double sn = std::sin(th);
  AffineTransform t{cs, -sn, 0.0, sn, cs, 0.0};
  t.tx = center.x - (cs * center.x - sn * center.y);
  t.ty = center.y - (sn * center.x + cs * center.y);
  return t;
}

bool AffineTransform::invertible() const noexcept {
  const double det = determinant();
  const double scale = std::abs(a) + std::abs(b) + std::abs(c) + std::abs(d);
  return std::isfinite(det) && std::abs(det) > 1e-12 * std::max(1.0, scale * scale);
}

AffineTransform AffineTransform::inverse() const {
  if (!invertible()) {
    throw Error(ErrorKind::kInvalidArgument, "affine transform is singular (determinant " +
                                                 std::to_string(determinant()) + ")");
  }
  const double det = determinant();
  AffineTransform r;
  r.a = d / det;
  r.b = -b / det;
  r.c = -c / det;
  r.d = a / det;
  r.tx = -(r.a * tx + r.b * ty);
  r.ty = -(r.c * tx + r.d * ty);
  return r;
}

AffineTransform AffineTransform::compose(const AffineTransform& in) const noexcept {
  AffineTransform r;
  r.a = a * in.a + b * in.c;
  r.b = a * in.b + b * in.d;
  r.tx = a * in.tx + b * in.ty + tx;
  r.c = c * in.a + d * in.c;
  r.d = c * in.b + d * in.d;
  r.ty = c * in.tx + d * in.ty + ty;
  return r;
}

bool patch_fits(int width, int height, Point center) noexcept {
  return center.x >= kPatchHalf && center.y >= kPatchHalf && center.x + kPatchHalf < width &&
         center.y + kPatchHalf < height;
}

namespace {

template <typename Raster>
double bilinear(const Raster& r, double x, double y) noexcept {
  if (!(x > -1.0 && y > -1.0 && x < r.width() && y < r.height())) return 0.0;
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double fx = x - fx0;
  const double fy = y - fy0;
  auto at = [&](int xx, int yy) -> double { return r.contains(xx, yy) ? static_cast<double>(r(xx, yy)) : 0.0; };
  const double top = (1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0);
  const double bottom = (1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1);
  return (1.0 - fy) * top + fy * bottom;
}

}  // namespace

float sample_bilinear(const GrayImage& img, double x, double y) noexcept {
  return static_cast<float>(bilinear(img.plane(), x, y));
}

double sample_bilinear(const Plane<double>& plane, double x, double y) noexcept { return bilinear(plane, x, y); }

GrayImage warp_affine(const GrayImage& img, const AffineTransform& t, int out_width, int out_height) {
  const AffineTransform inv = t.inverse();
  std::vector<float> out(static_cast<std::size_t>(out_width) * static_cast<std::size_t>(out_height));
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const PointF s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      const float v = sample_bilinear(img, s.x, s.y);
      out[static_cast<std::size_t>(y) * out_width + x] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return GrayImage(out_width, out_height, std::move(out));
}

GrayImage gamma_transform(const GrayImage& img, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw Error(ErrorKind::kInvalidArgument, "gamma must be positive, got " + std::to_string(gamma));
  }
  std::vector<float> out(img.values().begin(), img.values().end());
  if (gamma != 1.0) {
    for (float& v : out) v = std::clamp(static_cast<float>(std::pow(static_cast<double>(v), gamma)), 0.0f, 1.0f);
  }
  return GrayImage(img.width(), img.height(), std::move(out));
}

PorePatch extract_patch(const GrayImage& img, Point center) {
  if (!patch_fits(img.width(), img.height(), center)) {
    throw Error(ErrorKind::kOutOfBounds, "patch centered at (" + std::to_string(center.x) + "," +
                                             std::to_string(center.y) + ") crosses the border of a " +
                                             std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                                             " image");
  }
  PorePatch patch;
  patch.center = center;
  for (int dy = 0; dy < kPatchSide; ++dy) {
    for (int dx = 0; dx < kPatchSide; ++dx) {
      patch.pixels[dy * kPatchSide + dx] = img(center.x - kPatchHalf + dx, center.y - kPatchHalf + dy);
    }
  }
  return patch;
}

// A pixel p is reported iff
//   map(p) >= min_value,
//   map(p) >= every value in its (border-clipped) window,
//   some value in the window is strictly smaller than map(p), and
//   no other window pixel with the same value precedes p in row-major order.
// Flat regions therefore yield nothing, and a plateau peak keeps only its first pixel.
PoreSet local_maxima(const Plane<float>& map, int window, double min_value) {
  if (window < 3 || window % 2 == 0) {
    throw Error(ErrorKind::kInvalidArgument, "local-maxima window must be odd and >= 3, got " + std::to_string(window));
  }
  const int w = map.width();
  const int h = map.height();
  const int r = window / 2;

  // Separable running max gives candidates in O(w*h*window).
  Plane<float> row_max(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float m = map(x, y);
      for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) m = std::max(m, map(xx, y));
      row_max(x, y) = m;
    }
  }
  PoreSet out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = map(x, y);
      if (static_cast<double>(v) < min_value) continue;
      float m = v;
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy) m = std::max(m, row_max(x, yy));
      if (m > v) continue;
      bool has_lower = false;
      bool tie_before = false;
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r) && !tie_before; ++yy) {
        for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          const float q = map(xx, yy);
          if (q < v) {
            has_lower = true;
          } else if (q == v && (yy < y || (yy == y && xx < x))) {
            tie_before = true;
            break;
          }
        }
      }
      if (has_lower && !tie_before) out.pores.push_back({x, y});
    }
  }
  return out;
}

PoreSet local_maxima(const GrayImage& map, int window, double min_value) {
  return local_maxima(map.plane(), window, min_value);
}

}  // namespace porenet
