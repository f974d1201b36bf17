#include "porenet/pore_detect.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "porenet/error.hpp"
#include "porenet/file_util.hpp"

namespace porenet {

namespace fs = std::filesystem;

void DpfParams::validate() const {
  if (!(min_pore_radius > 0.0) || !(max_pore_radius >= min_pore_radius)) {
    throw Error(ErrorKind::kInvalidArgument, "DPF radii must satisfy 0 < min_pore_radius <= max_pore_radius");
  }
  if (!(local_window_scale > 0.0)) throw Error(ErrorKind::kInvalidArgument, "local_window_scale must be positive");
  if (max_scan < 1) throw Error(ErrorKind::kInvalidArgument, "max_scan must be >= 1");
  if (threshold_method == ThresholdMethod::kFixed && !(fixed_threshold >= 0.0 && fixed_threshold <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "fixed threshold must lie in [0,1]");
  }
}

double otsu_threshold(const GrayImage& img) {
  std::array<double, 256> hist{};
  for (float v : img.values()) hist[static_cast<std::size_t>(std::lround(v * 255.0f))] += 1.0;
  const double total = static_cast<double>(img.values().size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  // Pixels strictly above bin best_t are foreground.
  return (best_t + 0.5) / 255.0;
}

namespace {

struct Scan {
  int left, right, up, down;
};

}  // namespace

PoreSet detect_pores_dpf(const GrayImage& img, const DpfParams& params) {
  params.validate();
  const int w = img.width();
  const int h = img.height();
  const double global =
      params.threshold_method == ThresholdMethod::kOtsu ? otsu_threshold(img) : params.fixed_threshold;
  auto bright = [&](int x, int y) { return static_cast<double>(img(x, y)) >= global; };

  // Distance along (dx,dy) to the first dark pixel, or 0 when none is reached.
  auto scan = [&](int x, int y, int dx, int dy) {
    for (int k = 1; k <= params.max_scan; ++k) {
      const int xx = x + k * dx;
      const int yy = y + k * dy;
      if (!img.contains(xx, yy)) return 0;
      if (!bright(xx, yy)) return k;
    }
    return 0;
  };

  const double max_run = 2.0 * params.max_pore_radius + 1.0;
  std::vector<unsigned char> accepted(static_cast<std::size_t>(w) * h, 0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!bright(x, y)) continue;
      const Scan s{scan(x, y, -1, 0), scan(x, y, 1, 0), scan(x, y, 0, -1), scan(x, y, 0, 1)};
      if (s.left == 0 || s.right == 0 || s.up == 0 || s.down == 0) continue;

      const int run_h = s.left + s.right - 1;
      const int run_v = s.up + s.down - 1;
      // Bright structures wider than the largest pore are valley, not pore. Diagonal runs catch
      // oblique valleys, which look narrow along both axes.
      if (run_h > max_run || run_v > max_run) continue;
      const int d1 = scan(x, y, -1, -1), d2 = scan(x, y, 1, 1), d3 = scan(x, y, 1, -1), d4 = scan(x, y, -1, 1);
      if (d1 == 0 || d2 == 0 || d3 == 0 || d4 == 0) continue;
      if (d1 + d2 - 1 > max_run || d3 + d4 - 1 > max_run) continue;

      const double valley_width = 0.5 * (run_h + run_v);
      int side = static_cast<int>(std::lround(params.local_window_scale * valley_width));
      side = std::max(3, side | 1);
      const int half = side / 2;
      double bright_sum = 0.0;
      int bright_n = 0;
      for (int yy = std::max(0, y - half); yy <= std::min(h - 1, y + half); ++yy) {
        for (int xx = std::max(0, x - half); xx <= std::min(w - 1, x + half); ++xx) {
          if (bright(xx, yy)) {
            bright_sum += img(xx, yy);
            ++bright_n;
          }
        }
      }
      const double t_local = 0.5 * (bright_sum / bright_n + global);

      std::array<int, 4> d{s.left, s.right, s.up, s.down};
      std::sort(d.begin(), d.end());
      const double median = 0.5 * (d[1] + d[2]);
      const double r_local = std::clamp(0.5 * median, params.min_pore_radius, params.max_pore_radius);

      const int ri = static_cast<int>(std::floor(r_local));
      const double r2 = r_local * r_local;
      bool inside = true;
      for (int dy = -ri; dy <= ri && inside; ++dy) {
        for (int dx = -ri; dx <= ri; ++dx) {
          if (dx * dx + dy * dy > r2) continue;
          const int xx = x + dx;
          const int yy = y + dy;
          if (!img.contains(xx, yy) || static_cast<double>(img(xx, yy)) < t_local) {
            inside = false;
            break;
          }
        }
      }
      if (inside) accepted[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }

  // 8-connected components of accepted pixels, one centroid each.
  PoreSet out;
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      if (accepted[idx] != 1) continue;
      accepted[idx] = 2;
      stack.assign(1, static_cast<int>(idx));
      double sx = 0.0, sy = 0.0;
      int n = 0;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        const int cx = cur % w;
        const int cy = cur / w;
        sx += cx;
        sy += cy;
        ++n;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx;
            const int ny = cy + dy;
            if (!img.contains(nx, ny)) continue;
            const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
            if (accepted[nidx] == 1) {
              accepted[nidx] = 2;
              stack.push_back(static_cast<int>(nidx));
            }
          }
        }
      }
      out.pores.push_back({static_cast<int>(std::lround(sx / n)), static_cast<int>(std::lround(sy / n))});
    }
  }
  std::sort(out.pores.begin(), out.pores.end());
  out.pores.erase(std::unique(out.pores.begin(), out.pores.end()), out.pores.end());
  return out;
}

PoreSet load_pore_map(const fs::path& path, const GrayImage& source_image, int window, double min_value) {
  if (!fs::exists(path)) throw Error(ErrorKind::kIo, "pore map not found: " + path.string());
  const std::string head = read_binary_file(path).substr(0, 8);
  const bool is_image = (head.size() >= 2 && head[0] == 'P' && head[1] == '5') ||
                        (head.size() >= 4 && static_cast<unsigned char>(head[0]) == 0x89 && head[1] == 'P' &&
                         head[2] == 'N' && head[3] == 'G');
  if (!is_image) return load_pores(path, source_image.width(), source_image.height());

  const GrayImage map = load_image(path);
  if (map.width() != source_image.width() || map.height() != source_image.height()) {
    throw Error(ErrorKind::kInvalidArgument,
                path.string() + ": pore map is " + std::to_string(map.width()) + "x" + std::to_string(map.height()) +
                    " but the source image is " + std::to_string(source_image.width()) + "x" +
                    std::to_string(source_image.height()));
  }
  PoreSet set = local_maxima(map, window, min_value);
  set.image_id = path.stem().string();
  return set;
}

PoreSet DpfDetector::detect(const GrayImage& img, const std::string& image_id) const {
  PoreSet set = detect_pores_dpf(img, params_);
  set.image_id = image_id;
  return set;
}

PoreSet MapDetector::detect(const GrayImage& img, const std::string& image_id) const {
  for (const char* ext : {".txt", ".pgm", ".png"}) {
    const fs::path candidate = dir_ / (image_id + ext);
    if (fs::exists(candidate)) {
      PoreSet set = load_pore_map(candidate, img, window_, min_value_);
      set.image_id = image_id;
      return set;
    }
  }
  throw Error(ErrorKind::kIo, "no pore map for image '" + image_id + "' in " + dir_.string());
}

}  // namespace porenet
