#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance tests. Oracles here are
// written independently of the library code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "porenet/evaluation.hpp"
#include "porenet/image.hpp"
#include "porenet/matcher.hpp"
#include "porenet/nn/tensor.hpp"

namespace testsupport {

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("porenet_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline porenet::GrayImage random_image(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(w) * h);
  for (auto& x : v) x = u(rng);
  return porenet::GrayImage(w, h, std::move(v));
}

/// Smooth test pattern: low-frequency sinusoids in [0.1, 0.9].
inline porenet::GrayImage smooth_image(int w, int h) {
  std::vector<float> v(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      v[static_cast<std::size_t>(y) * w + x] =
          static_cast<float>(0.5 + 0.2 * std::sin(x * 0.11) * std::cos(y * 0.07) + 0.2 * std::sin((x + y) * 0.05));
    }
  }
  return porenet::GrayImage(w, h, std::move(v));
}

/// Dark stripes with bright valleys between them (period along x) and bright discs planted on the
/// dark ridge centres.
struct PlantedPores {
  porenet::GrayImage image;
  std::vector<porenet::Point> centres;
};

inline PlantedPores ridge_image_with_pores(int w, int h, int period, const std::vector<porenet::Point>& centres,
                                           double radius, int shift_x = 0) {
  std::vector<float> v(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double phase = std::cos(2.0 * M_PI * (x - shift_x) / period);
      v[static_cast<std::size_t>(y) * w + x] = static_cast<float>(phase > -0.2 ? 0.15 : 0.8);
    }
  }
  for (const auto& c : centres) {
    for (int y = c.y - 4; y <= c.y + 4; ++y) {
      for (int x = c.x - 4; x <= c.x + 4; ++x) {
        if (x < 0 || y < 0 || x >= w || y >= h) continue;
        if (std::hypot(x - c.x, y - c.y) <= radius) v[static_cast<std::size_t>(y) * w + x] = 0.95f;
      }
    }
  }
  return {porenet::GrayImage(w, h, std::move(v)), centres};
}

// ---- local maxima oracle: full neighbourhood scan per pixel ----

inline std::vector<porenet::Point> local_maxima_oracle(const porenet::Plane<float>& map, int window, double min_value) {
  const int r = window / 2;
  std::vector<porenet::Point> out;
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const float v = map(x, y);
      if (v < min_value) continue;
      bool keep = true;
      bool any_lower = false;
      for (int dy = -r; dy <= r && keep; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if ((dx == 0 && dy == 0) || !map.contains(xx, yy)) continue;
          const float q = map(xx, yy);
          if (q > v) keep = false;
          if (q == v && porenet::Point{xx, yy} < porenet::Point{x, y}) keep = false;
          if (q < v) any_lower = true;
        }
      }
      if (keep && any_lower) out.push_back({x, y});
    }
  }
  return out;
}

// ---- matching oracle: explicit distance matrix, exhaustive scans ----

inline std::vector<std::vector<double>> distance_matrix(const porenet::DescriptorSet& a,
                                                        const porenet::DescriptorSet& b) {
  std::vector<std::vector<double>> d(a.size(), std::vector<double>(b.size()));
  for (int i = 0; i < a.size(); ++i) {
    for (int j = 0; j < b.size(); ++j) {
      double s = 0.0;
      for (int k = 0; k < a.dim(); ++k) {
        const double t = static_cast<double>(a.row(i)[k]) - b.row(j)[k];
        s += t * t;
      }
      d[i][j] = std::sqrt(s);
    }
  }
  return d;
}

struct OracleMatch {
  std::vector<std::pair<int, int>> mutual;
  std::vector<std::pair<int, int>> kept;
};

/// Mutual nearest neighbours (ties to smaller index) then the one-sided ratio test on row i.
inline OracleMatch match_oracle(const std::vector<std::vector<double>>& d, double ratio) {
  const int n = static_cast<int>(d.size());
  const int m = n ? static_cast<int>(d[0].size()) : 0;
  OracleMatch out;
  for (int i = 0; i < n; ++i) {
    int best = -1;
    for (int j = 0; j < m; ++j) {
      if (best < 0 || d[i][j] < d[i][best]) best = j;
    }
    int back = -1;
    for (int k = 0; k < n; ++k) {
      if (back < 0 || d[k][best] < d[back][best]) back = k;
    }
    if (back != i) continue;
    out.mutual.push_back({i, best});
    double second = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      if (j != best) second = std::min(second, d[i][j]);
    }
    if (d[i][best] < ratio * second) out.kept.push_back({i, best});
  }
  return out;
}

/// Random unit vectors.
inline porenet::DescriptorSet random_unit_set(int n, int dim, std::mt19937_64& rng, const std::string& id = "x") {
  std::normal_distribution<double> g(0.0, 1.0);
  porenet::DescriptorSet set(id, dim, {});
  std::vector<float> row(dim);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    std::vector<double> v(dim);
    for (auto& x : v) {
      x = g(rng);
      s += x * x;
    }
    s = std::sqrt(s);
    for (int k = 0; k < dim; ++k) row[k] = static_cast<float>(v[k] / s);
    set.push_back(row);
  }
  return set;
}

// ---- DET oracle: evaluate every candidate threshold by direct counting ----

struct SweepRow {
  double threshold, fmr, fnmr;
};

inline std::vector<SweepRow> det_sweep_oracle(const porenet::ScoreSet& s) {
  std::vector<double> t(s.genuine);
  t.insert(t.end(), s.impostor.begin(), s.impostor.end());
  std::sort(t.begin(), t.end(), std::greater<>());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.insert(t.begin(), std::numeric_limits<double>::infinity());
  std::vector<SweepRow> rows;
  for (double th : t) {
    double fm = 0, fnm = 0;
    for (double x : s.impostor) fm += x >= th;
    for (double x : s.genuine) fnm += x < th;
    rows.push_back({th, fm / s.impostor.size(), fnm / s.genuine.size()});
  }
  return rows;
}

inline double eer_oracle(const std::vector<SweepRow>& rows) {
  const SweepRow* best = nullptr;
  for (const auto& r : rows) {
    const double gap = std::abs(r.fmr - r.fnmr);
    if (!best) {
      best = &r;
      continue;
    }
    const double bgap = std::abs(best->fmr - best->fnmr);
    if (gap < bgap || (gap == bgap && r.fnmr < best->fnmr)) best = &r;
  }
  return (best->fmr + best->fnmr) / 2.0;
}

inline double fmr_at_oracle(const std::vector<SweepRow>& rows, double ceiling) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    if (r.fmr <= ceiling) best = std::min(best, r.fnmr);
  }
  return best;
}

// ---- manifests ----

/// Complete manifest: per finger, `per_session` impressions in each of `sessions` sessions.
inline porenet::DatasetManifest mock_manifest(porenet::Protocol protocol, int fingers, int sessions, int per_session) {
  porenet::DatasetManifest m;
  m.protocol = protocol;
  for (int f = 1; f <= fingers; ++f) {
    for (int s = 1; s <= sessions; ++s) {
      for (int i = 1; i <= per_session; ++i) {
        m.entries.push_back({"f" + std::to_string(f) + "_" + std::to_string(s) + "_" + std::to_string(i) + ".pgm", f,
                             s, i});
      }
    }
  }
  return m;
}

// ---- tensors ----

template <typename T>
porenet::nn::Tensor<T> random_tensor(const porenet::nn::Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  porenet::nn::Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(g(rng));
  return t;
}

/// |a - b| / max(|a|, |b|, floor): the floor keeps entries whose true gradient is ~0 from
/// turning rounding noise into a large relative error.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testsupport
