#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace porenet {

/// Integer pixel coordinate; x is the column, y the row.
struct Point {
  int x = 0;
  int y = 0;

  friend bool operator==(const Point&, const Point&) = default;
  /// Row-major order: by row first, then column.
  friend std::strong_ordering operator<=>(const Point& a, const Point& b) {
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
};

struct PointF {
  double x = 0.0;
  double y = 0.0;
};

inline PointF to_pointf(Point p) { return {static_cast<double>(p.x), static_cast<double>(p.y)}; }

/// Dense row-major raster of arbitrary reals (orientation maps, filtered maps).
template <typename T>
class Plane {
 public:
  Plane() = default;
  Plane(int width, int height, T fill = T{});
  Plane(int width, int height, std::vector<T> values);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  T operator()(int x, int y) const { return values_[index(x, y)]; }
  T& operator()(int x, int y) { return values_[index(x, y)]; }

  /// Value at (x, y) with coordinates clamped to the border (replicated edges).
  T clamped(int x, int y) const;

  std::span<const T> values() const noexcept { return values_; }
  std::span<T> values() noexcept { return values_; }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> values_;
};

extern template class Plane<float>;
extern template class Plane<double>;

/// Grayscale intensities in [0, 1], row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f);
  /// Throws if the sizes disagree or any value lies outside [0, 1].
  GrayImage(int width, int height, std::vector<float> values);

  int width() const noexcept { return plane_.width(); }
  int height() const noexcept { return plane_.height(); }
  bool contains(int x, int y) const noexcept { return plane_.contains(x, y); }

  float operator()(int x, int y) const { return plane_(x, y); }
  /// Writes are clamped to [0, 1] so the invariant cannot be broken.
  void set(int x, int y, float v);
  float clamped(int x, int y) const { return plane_.clamped(x, y); }

  std::span<const float> values() const noexcept { return plane_.values(); }
  const Plane<float>& plane() const noexcept { return plane_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  Plane<float> plane_;
};

/// Maps (x, y) to (a*x + b*y + tx, c*x + d*y + ty).
struct AffineTransform {
  double a = 1.0, b = 0.0, tx = 0.0;
  double c = 0.0, d = 1.0, ty = 0.0;

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double dx, double dy) { return {1.0, 0.0, dx, 0.0, 1.0, dy}; }
  /// Rotation by angle_deg (counterclockwise on screen, y pointing down) about center.
  static AffineTransform rotation_about(PointF center, double angle_deg);

  double determinant() const noexcept { return a * d - b * c; }
  bool invertible() const noexcept;
  PointF apply(PointF p) const noexcept { return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty}; }
  PointF operator()(PointF p) const noexcept { return apply(p); }
  /// Throws on a singular transform.
  AffineTransform inverse() const;
  /// (this ∘ inner)(p) = this(inner(p)).
  AffineTransform compose(const AffineTransform& inner) const noexcept;
};

inline constexpr int kPatchSide = 41;
inline constexpr int kPatchHalf = kPatchSide / 2;
inline constexpr int kPatchPixels = kPatchSide * kPatchSide;

struct PorePatch {
  std::array<float, kPatchPixels> pixels{};
  Point center;
  int finger_id = -1;
  int impression_id = -1;
  int pore_id = -1;
  int label = -1;
};

/// Detected pore coordinates for one image; coordinates are unique and row-major sorted.
struct PoreSet {
  std::string image_id;
  std::vector<Point> pores;
};

/// True iff the 41x41 window centered at p lies inside a width x height frame.
bool patch_fits(int width, int height, Point center) noexcept;

/// Bilinear sample with zero outside the raster.
float sample_bilinear(const GrayImage& img, double x, double y) noexcept;
double sample_bilinear(const Plane<double>& plane, double x, double y) noexcept;

GrayImage warp_affine(const GrayImage& img, const AffineTransform& t, int out_width, int out_height);
GrayImage gamma_transform(const GrayImage& img, double gamma);
PorePatch extract_patch(const GrayImage& img, Point center);

/// Plateau-aware strict local maxima; see the implementation for the exact rule.
PoreSet local_maxima(const Plane<float>& map, int window, double min_value);
PoreSet local_maxima(const GrayImage& map, int window, double min_value);

// I/O. Images are 8-bit grayscale PGM (P5) or PNG; writes go through PGM.
GrayImage load_image(const std::filesystem::path& path);
void save_pgm(const GrayImage& img, const std::filesystem::path& path);
std::vector<unsigned char> to_bytes(std::span<const float> values);

/// Text pore format: one "x y" pair per line.
std::string format_pores(const PoreSet& set);
PoreSet parse_pores(const std::string& text, const std::string& image_id, int width = -1, int height = -1);
PoreSet load_pores(const std::filesystem::path& path, int width = -1, int height = -1);
void save_pores(const PoreSet& set, const std::filesystem::path& path);

}  // namespace porenet
